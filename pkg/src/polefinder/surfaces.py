"""Analytic surfaces as chart atlases with exact metric jets.

A surface is a set of overlapping charts; each chart evaluates the metric
components and their first partials in closed form (built-in families) or
through dual-number differentiation of user expressions.  Covectors are
moved between charts exactly, through the ambient embedding for the
ellipsoid family and through closed-form coordinate maps for surfaces of
revolution, so the cosphere condition ``|xi|_g = 1`` survives transitions
to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, NotInOverlap, NotUnit, OutOfChart, PoleFinderError
from .expressions import Dual, Expression

TWO_PI = 2.0 * math.pi


def wrap_angle(x):
    """Reduce an angle to [0, 2*pi)."""
    y = math.fmod(x, TWO_PI)
    return y + TWO_PI if y < 0 else y


def wrap_pm_pi(x):
    """Reduce an angle to (-pi, pi]."""
    y = math.fmod(x, TWO_PI)
    if y > math.pi:
        y -= TWO_PI
    elif y <= -math.pi:
        y += TWO_PI
    return y


class MetricJet(NamedTuple):
    """Metric components and their six first partials at one chart point."""

    g11: float
    g12: float
    g22: float
    g11_u: float
    g11_v: float
    g12_u: float
    g12_v: float
    g22_u: float
    g22_v: float

    @property
    def det(self):
        return self.g11 * self.g22 - self.g12 * self.g12

    def inverse(self):
        """Components (i11, i12, i22) of the inverse metric."""
        d = self.det
        return self.g22 / d, -self.g12 / d, self.g11 / d

    def norm(self, xu, xv):
        """g-norm of a tangent vector with components (xu, xv)."""
        return math.sqrt(self.g11 * xu * xu + 2.0 * self.g12 * xu * xv
                         + self.g22 * xv * xv)

    def conorm(self, pu, pv):
        """g-norm of a covector with components (pu, pv)."""
        i11, i12, i22 = self.inverse()
        return math.sqrt(pu * (i11 * pu + i12 * pv) + pv * (i12 * pu + i22 * pv))


@dataclass(frozen=True)
class SurfacePoint:
    """A point of the surface in chart coordinates."""

    chart: str
    u: float
    v: float


@dataclass(frozen=True)
class PhasePoint:
    """A covector (u, v; pu, pv) in chart coordinates.

    Valid phase points lie on the unit cosphere: ``hamiltonian(surface, p)``
    equals 1 to 1e-8 after any normalizing operation.
    """

    chart: str
    u: float
    v: float
    pu: float
    pv: float

    @property
    def base(self):
        return SurfacePoint(self.chart, self.u, self.v)


# ---------------------------------------------------------------------------
# Charts


class Chart:
    """One coordinate patch: metric jets, domain tests, optional embedding.

    ``needs_exit``/``accepts`` implement the switching hysteresis used by
    the flow driver; ``hard_contains`` bounds where the jet formulas stay
    well conditioned.
    """

    name: str
    periodic_v: bool = False

    def jet(self, u, v) -> MetricJet:
        raise NotImplementedError

    def hard_contains(self, u, v) -> bool:
        raise NotImplementedError

    def interior_score(self, u, v) -> float:
        """Distance-like margin from the chart's unusable set (bigger = safer)."""
        raise NotImplementedError

    def needs_exit(self, u, v) -> bool:
        raise NotImplementedError

    def accepts(self, u, v) -> bool:
        raise NotImplementedError

    def wrap(self, u, v):
        if self.periodic_v:
            return u, wrap_angle(v)
        return u, v

    def coord_delta(self, u1, v1, u0, v0):
        """Chart-coordinate displacement (u1,v1) - (u0,v0), wrapping v if periodic."""
        if self.periodic_v:
            return u1 - u0, wrap_pm_pi(v1 - v0)
        return u1 - u0, v1 - v0

    # Embedding interface (optional; used by transitions, gates, dumps)
    has_embedding = False

    def embed(self, u, v):
        raise NotImplementedError

    def embed_jacobian(self, u, v):
        """Columns d(xyz)/du, d(xyz)/dv as two 3-tuples."""
        raise NotImplementedError

    def invert_embedding(self, x, y, z):
        raise NotImplementedError


class EllipsoidChart(Chart):
    """Colatitude/longitude patch of an axis-aligned ellipsoid.

    The patch is the standard polar parametrization with pattern axes
    (p, q, r), post-composed with a signed axis permutation ``post`` so the
    two patches of one ellipsoid have complementary singular points::

        E(u, v) = post @ (p sin u cos v, q sin u sin v, r cos u)

    The metric depends only on (p, q, r); ``post`` is orthogonal.
    """

    has_embedding = True
    periodic_v = True

    # score thresholds in radians of colatitude
    EXIT_BELOW = 0.25
    ACCEPT_ABOVE = 0.40

    def __init__(self, name, p, q, r, post):
        self.name = name
        self.p = p
        self.q = q
        self.r = r
        self.post = tuple(tuple(float(x) for x in row) for row in post)

    def jet(self, u, v):
        p2, q2, r2 = self.p * self.p, self.q * self.q, self.r * self.r
        su, cu = math.sin(u), math.cos(u)
        sv, cv = math.sin(v), math.cos(v)
        A = p2 * cv * cv + q2 * sv * sv
        B = p2 * sv * sv + q2 * cv * cv
        g11 = cu * cu * A + r2 * su * su
        g12 = (q2 - p2) * su * cu * sv * cv
        g22 = su * su * B
        sucu = su * cu
        svcv = sv * cv
        return MetricJet(
            g11, g12, g22,
            2.0 * sucu * (r2 - A),
            2.0 * svcv * cu * cu * (q2 - p2),
            (q2 - p2) * svcv * (cu * cu - su * su),
            (q2 - p2) * sucu * (cv * cv - sv * sv),
            2.0 * sucu * B,
            2.0 * svcv * su * su * (p2 - q2),
        )

    def hard_contains(self, u, v):
        # formulas are exact on the open strip; only the axis points are singular
        return 0.0 < u < math.pi

    def interior_score(self, u, v):
        return min(u, math.pi - u)

    def needs_exit(self, u, v):
        return self.interior_score(u, v) < self.EXIT_BELOW

    def accepts(self, u, v):
        return self.interior_score(u, v) > self.ACCEPT_ABOVE

    def _pattern_point(self, u, v):
        su = math.sin(u)
        return (self.p * su * math.cos(v), self.q * su * math.sin(v),
                self.r * math.cos(u))

    def embed(self, u, v):
        w = self._pattern_point(u, v)
        m = self.post
        return (m[0][0] * w[0] + m[0][1] * w[1] + m[0][2] * w[2],
                m[1][0] * w[0] + m[1][1] * w[1] + m[1][2] * w[2],
                m[2][0] * w[0] + m[2][1] * w[1] + m[2][2] * w[2])

    def embed_jacobian(self, u, v):
        su, cu = math.sin(u), math.cos(u)
        sv, cv = math.sin(v), math.cos(v)
        du = (self.p * cu * cv, self.q * cu * sv, -self.r * su)
        dv = (-self.p * su * sv, self.q * su * cv, 0.0)
        m = self.post
        rot = lambda w: (m[0][0] * w[0] + m[0][1] * w[1] + m[0][2] * w[2],
                         m[1][0] * w[0] + m[1][1] * w[1] + m[1][2] * w[2],
                         m[2][0] * w[0] + m[2][1] * w[1] + m[2][2] * w[2])
        return rot(du), rot(dv)

    def invert_embedding(self, x, y, z):
        m = self.post
        # post is orthogonal: inverse = transpose
        w = (m[0][0] * x + m[1][0] * y + m[2][0] * z,
             m[0][1] * x + m[1][1] * y + m[2][1] * z,
             m[0][2] * x + m[1][2] * y + m[2][2] * z)
        cu = min(1.0, max(-1.0, w[2] / self.r))
        u = math.acos(cu)
        v = math.atan2(w[1] / self.q, w[0] / self.p)
        return u, wrap_angle(v)


class _ProfileTable:
    """Cached z(s) height table for a surface-of-revolution profile."""

    def __init__(self, profile, length, n=2048):
        self.profile = profile
        self.length = length
        self._n = n
        self._z = None

    def _build(self):
        # cumulative Simpson of sqrt(1 - r'(s)^2) on a uniform grid
        n = self._n
        s = np.linspace(0.0, self.length, 2 * n + 1)
        integrand = np.empty_like(s)
        for i, si in enumerate(s):
            _, rp = self.profile.derivative("s", s=si)
            integrand[i] = math.sqrt(max(0.0, 1.0 - rp * rp))
        h = s[2] - s[0]
        z = np.zeros(n + 1)
        acc = 0.0
        for k in range(n):
            acc += h / 6.0 * (integrand[2 * k] + 4.0 * integrand[2 * k + 1]
                              + integrand[2 * k + 2])
            z[k + 1] = acc
        self._grid = s[::2]
        self._z = z

    def z_of_s(self, s):
        if self._z is None:
            self._build()
        return float(np.interp(s, self._grid, self._z))

    def s_of_z(self, z):
        if self._z is None:
            self._build()
        return float(np.interp(z, self._z, self._grid))


class RevolutionMainChart(Chart):
    """(s, phi) chart of a surface of revolution, s = meridian arclength."""

    has_embedding = True
    periodic_v = True

    def __init__(self, name, profile: Expression, length, table: _ProfileTable):
        self.name = name
        self.profile = profile
        self.length = length
        self._table = table

    def jet(self, u, v):
        r, rp = self.profile.derivative("s", s=u)
        return MetricJet(1.0, 0.0, r * r, 0.0, 0.0, 0.0, 0.0, 2.0 * r * rp, 0.0)

    def hard_contains(self, u, v):
        return 0.0 < u < self.length

    def interior_score(self, u, v):
        return min(u, self.length - u)

    def needs_exit(self, u, v):
        return self.interior_score(u, v) < 0.15 * self.length

    def accepts(self, u, v):
        return self.interior_score(u, v) > 0.20 * self.length

    def embed(self, u, v):
        r = self.profile(s=u)
        return (r * math.cos(v), r * math.sin(v), self._table.z_of_s(u))

    def embed_jacobian(self, u, v):
        r, rp = self.profile.derivative("s", s=u)
        zp = math.sqrt(max(0.0, 1.0 - rp * rp))
        return ((rp * math.cos(v), rp * math.sin(v), zp),
                (-r * math.sin(v), r * math.cos(v), 0.0))

    def invert_embedding(self, x, y, z):
        return self._table.s_of_z(z), wrap_angle(math.atan2(y, x))


class RevolutionCapChart(Chart):
    """Geodesic normal coordinates capping one pole of a revolution surface.

    Coordinates (u, v) are Cartesian normal coordinates; the distance to
    the pole is s = hypot(u, v), which equals meridian arclength from the
    pole because meridians are geodesics.  With q(s) = (r(s)/s)^2 the
    metric is ((u^2 + q v^2), uv(1-q); ..., (v^2 + q u^2)) / s^2, which
    extends analytically across the pole when |r'(pole)| = 1.
    """

    has_embedding = True
    periodic_v = False

    _POLE_EPS = 1e-9

    def __init__(self, name, profile, length, end, table):
        if end not in ("north", "south"):
            raise ConfigError(f"unknown cap end {end!r}")
        self.name = name
        self.profile = profile
        self.length = length
        self.end = end
        self.radius = 0.45 * length
        self._table = table

    def _local_profile(self, s_local):
        """(r, dr/ds_local) at meridian distance s_local from this pole."""
        if self.end == "north":
            d = self.profile.derivative("s", s=s_local)
        else:
            d = self.profile.derivative("s", s=self.length - s_local)
            d = (d[0], -d[1])
        return d

    def jet(self, u, v):
        s2 = u * u + v * v
        if s2 < self._POLE_EPS * self._POLE_EPS:
            return MetricJet(1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        s = math.sqrt(s2)
        r, rp = self._local_profile(s)
        rd = Dual(r, rp)
        qd = (rd / Dual(s, 1.0)) ** 2
        q, qp = qd.val, qd.der
        w = 1.0 / s2
        w4 = w * w
        su, sv = u / s, v / s
        a11 = u * u + q * v * v
        a12 = u * v * (1.0 - q)
        a22 = v * v + q * u * u
        return MetricJet(
            w * a11, w * a12, w * a22,
            -2.0 * u * w4 * a11 + w * (2.0 * u + qp * su * v * v),
            -2.0 * v * w4 * a11 + w * (qp * sv * v * v + 2.0 * q * v),
            -2.0 * u * w4 * a12 + w * (v * (1.0 - q) - u * v * qp * su),
            -2.0 * v * w4 * a12 + w * (u * (1.0 - q) - u * v * qp * sv),
            -2.0 * u * w4 * a22 + w * (qp * su * u * u + 2.0 * q * u),
            -2.0 * v * w4 * a22 + w * (2.0 * v + qp * sv * u * u),
        )

    def hard_contains(self, u, v):
        return math.hypot(u, v) < self.radius

    def interior_score(self, u, v):
        return self.radius - math.hypot(u, v)

    def needs_exit(self, u, v):
        return math.hypot(u, v) > 0.30 * self.length

    def accepts(self, u, v):
        return math.hypot(u, v) < 0.25 * self.length

    def _meridian_s(self, s_local):
        return s_local if self.end == "north" else self.length - s_local

    def embed(self, u, v):
        s_local = math.hypot(u, v)
        s = self._meridian_s(s_local)
        r = self.profile(s=s)
        if s_local < self._POLE_EPS:
            return (0.0, 0.0, self._table.z_of_s(s))
        cphi, sphi = u / s_local, v / s_local
        return (r * cphi, r * sphi, self._table.z_of_s(s))

    def embed_jacobian(self, u, v):
        s_local = math.hypot(u, v)
        if s_local < self._POLE_EPS:
            sign = 1.0 if self.end == "north" else -1.0
            return (1.0, 0.0, 0.0), (0.0, sign, 0.0)
        s = self._meridian_s(s_local)
        r, rp_global = self.profile.derivative("s", s=s)
        rp = rp_global if self.end == "north" else -rp_global
        zp = math.sqrt(max(0.0, 1.0 - rp_global * rp_global))
        zp_local = zp if self.end == "north" else -zp
        cphi, sphi = u / s_local, v / s_local
        # d(xyz)/du = d/ds_local * du_s + d/dphi * du_phi, with
        # ds_local/du = cphi, dphi/du = -sphi/s_local, etc.
        dx_ds = (rp * cphi, rp * sphi, zp_local)
        dx_dphi = (-r * sphi, r * cphi, 0.0)
        ju = (dx_ds[0] * cphi - dx_dphi[0] * sphi / s_local,
              dx_ds[1] * cphi - dx_dphi[1] * sphi / s_local,
              dx_ds[2] * cphi - dx_dphi[2] * sphi / s_local)
        jv = (dx_ds[0] * sphi + dx_dphi[0] * cphi / s_local,
              dx_ds[1] * sphi + dx_dphi[1] * cphi / s_local,
              dx_ds[2] * sphi + dx_dphi[2] * cphi / s_local)
        return ju, jv

    def invert_embedding(self, x, y, z):
        s = self._table.s_of_z(z)
        s_local = s if self.end == "north" else self.length - s
        phi = math.atan2(y, x)
        return s_local * math.cos(phi), s_local * math.sin(phi)


class ExprChart(Chart):
    """Single user-supplied chart with metric component expressions."""

    has_embedding = False
    periodic_v = False

    def __init__(self, name, g11, g12, g22, domain):
        self.name = name
        self.g11 = g11
        self.g12 = g12
        self.g22 = g22
        u0, u1, v0, v1 = domain
        if not (u1 > u0 and v1 > v0):
            raise ConfigError("chart domain rectangle is empty")
        self.domain = (float(u0), float(u1), float(v0), float(v1))
        self._inflate = 0.05 * max(u1 - u0, v1 - v0)

    def jet(self, u, v):
        vals = []
        for comp in (self.g11, self.g12, self.g22):
            gu = comp.derivative("u", u=u, v=v)
            gv = comp.derivative("v", u=u, v=v)
            vals.append((gu[0], gu[1], gv[1]))
        (g11, a_u, a_v), (g12, b_u, b_v), (g22, c_u, c_v) = vals
        return MetricJet(g11, g12, g22, a_u, a_v, b_u, b_v, c_u, c_v)

    def hard_contains(self, u, v):
        u0, u1, v0, v1 = self.domain
        m = self._inflate
        return u0 - m <= u <= u1 + m and v0 - m <= v <= v1 + m

    def interior_score(self, u, v):
        u0, u1, v0, v1 = self.domain
        return min(u - u0, u1 - u, v - v0, v1 - v)

    def needs_exit(self, u, v):
        # single-chart surfaces cannot switch; exiting the inflated rectangle
        # must surface as LeftAtlas
        return not self.hard_contains(u, v)

    def accepts(self, u, v):
        return self.hard_contains(u, v)


# ---------------------------------------------------------------------------
# Surface


_PERMUTE_Z = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
# rotation by pi/2 about the y axis: maps the z axis onto the x axis
_PERMUTE_X = ((0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (-1.0, 0.0, 0.0))


class SurfaceSpec:
    """An immutable chart atlas; construct through the factory methods."""

    def __init__(self, variant, charts, scale, params):
        self.variant = variant
        self.charts = {c.name: c for c in charts}
        self.scale = float(scale)
        self.params = dict(params)

    # -- factories ---------------------------------------------------------

    @classmethod
    def sphere(cls, radius=1.0):
        """Round sphere of the given radius."""
        if radius <= 0:
            raise ConfigError("sphere radius must be positive")
        return cls.ellipsoid(radius, radius, radius, variant="RoundSphere")

    @classmethod
    def ellipsoid(cls, a, b, c, variant="TriaxialEllipsoid"):
        """Axis-aligned ellipsoid x^2/a^2 + y^2/b^2 + z^2/c^2 = 1, a >= b >= c > 0."""
        if not (a >= b >= c > 0):
            raise ConfigError(f"ellipsoid semi-axes must satisfy a >= b >= c > 0, got {(a, b, c)}")
        charts = (
            EllipsoidChart("polar-z", a, b, c, _PERMUTE_Z),
            # same surface, polar axis moved onto the x axis; the pattern
            # axes are permuted to match: E = Rz->x @ (c su cv, b su sv, a cu)
            EllipsoidChart("polar-x", c, b, a, _PERMUTE_X),
        )
        return cls(variant, charts, scale=a, params={"a": a, "b": b, "c": c})

    @classmethod
    def spheroid(cls, equatorial, polar):
        """Spheroid (surface of revolution about the z axis) with the given semi-axes."""
        return cls.ellipsoid(equatorial, equatorial, polar, variant="Spheroid")

    @classmethod
    def surface_of_revolution(cls, profile, length):
        """Surface of revolution from a closed-form radius profile r(s).

        ``profile`` is an expression in the meridian arclength ``s`` on
        [0, length]; it must vanish at both ends with |r'| = 1 there, so the
        poles are smooth.
        """
        expr = profile if isinstance(profile, Expression) else Expression(profile, ("s",))
        length = float(length)
        if length <= 0:
            raise ConfigError("profile length must be positive")
        r0, rp0 = expr.derivative("s", s=0.0)
        rL, rpL = expr.derivative("s", s=length)
        if abs(r0) > 1e-8 * length or abs(rL) > 1e-8 * length:
            raise ConfigError("profile must vanish at both endpoints (poles)")
        if abs(abs(rp0) - 1.0) > 1e-6 or abs(abs(rpL) - 1.0) > 1e-6:
            raise ConfigError("profile needs |r'| = 1 at the poles for smooth caps")
        for s in np.linspace(0.05 * length, 0.95 * length, 37):
            if expr(s=float(s)) <= 0:
                raise ConfigError(f"profile must be positive inside the domain (r({s}) <= 0)")
        table = _ProfileTable(expr, length)
        charts = (
            RevolutionMainChart("meridian", expr, length, table),
            RevolutionCapChart("cap-north", expr, length, "north", table),
            RevolutionCapChart("cap-south", expr, length, "south", table),
        )
        return cls("SurfaceOfRevolution", charts, scale=length / 2.0,
                   params={"profile": expr.source, "length": length})

    @classmethod
    def chart_metric(cls, g11, g12, g22, domain):
        """Single-chart surface from metric component expressions in (u, v)."""
        comps = []
        for src in (g11, g12, g22):
            comps.append(src if isinstance(src, Expression)
                         else Expression(src, ("u", "v")))
        chart = ExprChart("chart0", *comps, domain=tuple(float(x) for x in domain))
        u0, u1, v0, v1 = chart.domain
        scale = 0.5 * max(u1 - u0, v1 - v0)
        return cls("ChartMetric", (chart,), scale=scale,
                   params={"g11": comps[0].source, "g12": comps[1].source,
                           "g22": comps[2].source, "domain": chart.domain})

    # -- chart bookkeeping ---------------------------------------------------

    def chart(self, name) -> Chart:
        try:
            return self.charts[name]
        except KeyError:
            raise OutOfChart(f"unknown chart {name!r}") from None

    def transition_point(self, p: PhasePoint, target: str) -> PhasePoint:
        """Express a phase point in another chart (exact covector transport)."""
        src = self.chart(p.chart)
        dst = self.chart(target)
        if target == p.chart:
            return p
        if self.variant == "SurfaceOfRevolution":
            out = self._revolution_transition(p, src, dst)
        elif src.has_embedding and dst.has_embedding:
            out = self._embedding_transition(p, src, dst)
        else:
            raise NotInOverlap(f"no transition from {p.chart!r} to {target!r}")
        if not dst.hard_contains(out.u, out.v):
            raise NotInOverlap(
                f"point {p.base} lies outside chart {target!r}")
        return out

    def _embedding_transition(self, p, src, dst):
        x3 = src.embed(p.u, p.v)
        jet = src.jet(p.u, p.v)
        i11, i12, i22 = jet.inverse()
        wu = i11 * p.pu + i12 * p.pv
        wv = i12 * p.pu + i22 * p.pv
        ju, jv = src.embed_jacobian(p.u, p.v)
        W = (ju[0] * wu + jv[0] * wv,
             ju[1] * wu + jv[1] * wv,
             ju[2] * wu + jv[2] * wv)
        u2, v2 = dst.invert_embedding(*x3)
        ku, kv = dst.embed_jacobian(u2, v2)
        pu2 = ku[0] * W[0] + ku[1] * W[1] + ku[2] * W[2]
        pv2 = kv[0] * W[0] + kv[1] * W[1] + kv[2] * W[2]
        u2, v2 = dst.wrap(u2, v2)
        return PhasePoint(dst.name, u2, v2, pu2, pv2)

    def _revolution_transition(self, p, src, dst):
        # all pairs route through closed-form (s, phi) <-> cap maps
        if isinstance(src, RevolutionCapChart):
            q = self._cap_to_main(p, src)
            if isinstance(dst, RevolutionMainChart):
                return q
            return self._main_to_cap(q, dst)
        if isinstance(dst, RevolutionCapChart):
            return self._main_to_cap(p, dst)
        return p

    @staticmethod
    def _main_to_cap(p, cap):
        s_local = p.u if cap.end == "north" else cap.length - p.u
        if s_local <= 0 or s_local >= cap.radius:
            raise NotInOverlap(f"meridian point s={p.u} outside {cap.name}")
        sign = 1.0 if cap.end == "north" else -1.0
        cphi, sphi = math.cos(p.v), math.sin(p.v)
        u2 = s_local * cphi
        v2 = s_local * sphi
        # covector pullback through (u, v) = (s_local cos phi, s_local sin phi)
        # with ds_local = sign * ds:  xi_cap = (DT^T)^{-1} xi
        ps = sign * p.pu
        pu2 = cphi * ps - sphi * p.pv / s_local
        pv2 = sphi * ps + cphi * p.pv / s_local
        return PhasePoint(cap.name, u2, v2, pu2, pv2)

    def _cap_to_main(self, p, cap):
        s_local = math.hypot(p.u, p.v)
        if s_local <= 0:
            raise NotInOverlap("the pole itself has no meridian coordinates")
        phi = math.atan2(p.v, p.u)
        cphi, sphi = math.cos(phi), math.sin(phi)
        sign = 1.0 if cap.end == "north" else -1.0
        ps = cphi * p.pu + sphi * p.pv
        pphi = s_local * (-sphi * p.pu + cphi * p.pv)
        s = s_local if cap.end == "north" else cap.length - s_local
        main = self.chart("meridian")
        return PhasePoint(main.name, s, wrap_angle(phi), sign * ps, pphi)

    def best_chart(self, point: SurfacePoint) -> SurfacePoint:
        """Re-express a point in the chart where it is most interior."""
        best = None
        probe = PhasePoint(point.chart, point.u, point.v, 0.0, 0.0)
        for name, chart in self.charts.items():
            try:
                q = self.transition_point(probe, name)
            except NotInOverlap:
                continue
            score = chart.interior_score(q.u, q.v)
            if best is None or score > best[0]:
                best = (score, SurfacePoint(name, q.u, q.v))
        if best is None:
            raise OutOfChart(f"{point} not representable in any chart")
        return best[1]

    def point_from_xyz(self, x, y, z, tol=1e-8):
        """Surface point (best chart) for an ambient position on the surface."""
        best = None
        for name, chart in self.charts.items():
            if not chart.has_embedding:
                continue
            try:
                uv = chart.invert_embedding(x, y, z)
            except (ValueError, ZeroDivisionError):
                continue
            ex, ey, ez = chart.embed(*uv)
            err = math.sqrt((ex - x) ** 2 + (ey - y) ** 2 + (ez - z) ** 2)
            if err > tol * max(1.0, self.scale):
                continue
            score = chart.interior_score(*uv)
            if best is None or score > best[0]:
                best = (score, SurfacePoint(name, *chart.wrap(*uv)))
        if best is None:
            raise OutOfChart(f"({x}, {y}, {z}) does not lie on the surface")
        return best[1]

    # -- named probe points -------------------------------------------------

    def umbilic_points(self):
        """The four umbilics of a strictly triaxial ellipsoid (middle-axis plane)."""
        if self.variant not in ("TriaxialEllipsoid",):
            raise ConfigError("umbilic points are defined for triaxial ellipsoids")
        a, b, c = self.params["a"], self.params["b"], self.params["c"]
        if not (a > b > c):
            raise ConfigError("umbilic points need strict a > b > c")
        x0 = a * math.sqrt((a * a - b * b) / (a * a - c * c))
        z0 = c * math.sqrt((b * b - c * c) / (a * a - c * c))
        return [self.point_from_xyz(sx * x0, 0.0, sz * z0)
                for sx, sz in ((1, 1), (-1, 1), (1, -1), (-1, -1))]

    def named_point(self, name):
        """Resolve a symbolic point name (north_pole, south_pole, umbilic:K)."""
        if name in ("north_pole", "south_pole"):
            sign = 1.0 if name == "north_pole" else -1.0
            if self.variant == "SurfaceOfRevolution":
                chart = "cap-north" if sign > 0 else "cap-south"
                return SurfacePoint(chart, 0.0, 0.0)
            if self.variant in ("RoundSphere", "Spheroid", "TriaxialEllipsoid"):
                c = self.params["c"]
                return self.point_from_xyz(0.0, 0.0, sign * c)
            raise ConfigError(f"surface variant {self.variant} has no {name}")
        if name.startswith("umbilic:"):
            idx = int(name.split(":", 1)[1])
            pts = self.umbilic_points()
            if not 0 <= idx < len(pts):
                raise ConfigError(f"umbilic index {idx} out of range")
            return pts[idx]
        raise ConfigError(f"unknown named point {name!r}")


# ---------------------------------------------------------------------------
# Operations


def metric_at(surface: SurfaceSpec, chart: str, u: float, v: float) -> MetricJet:
    """Metric components and first partials at (u, v) of the named chart."""
    ch = surface.chart(chart)
    uu, vv = ch.wrap(u, v)
    if not ch.hard_contains(uu, vv):
        raise OutOfChart(f"({u}, {v}) outside domain of chart {chart!r}")
    jet = ch.jet(uu, vv)
    if not (jet.g11 > 0 and jet.g22 > 0 and jet.det > 0):
        raise PoleFinderError(
            f"metric not positive definite at ({u}, {v}) in chart {chart!r}")
    return jet


def hamiltonian(surface: SurfaceSpec, p: PhasePoint) -> float:
    """H(x, xi) = |xi|_g, the co-metric norm of the covector."""
    jet = metric_at(surface, p.chart, p.u, p.v)
    return jet.conorm(p.pu, p.pv)


def orthonormal_coframe(jet: MetricJet):
    """Gram-Schmidt coframe (e1, e2) of (du, dv) w.r.t. the co-metric.

    The frame is positively oriented w.r.t. the chart orientation du ^ dv.
    """
    i11, i12, i22 = jet.inverse()
    k = 1.0 / math.sqrt(i11)
    e1 = (k, 0.0)
    c = k * i12  # <dv, e1>_*
    raw = (-c * k, 1.0)
    nrm = math.sqrt(raw[0] * (i11 * raw[0] + i12 * raw[1])
                    + raw[1] * (i12 * raw[0] + i22 * raw[1]))
    e2 = (raw[0] / nrm, raw[1] / nrm)
    return e1, e2


def angle_to_covector(surface: SurfaceSpec, point: SurfacePoint, theta: float) -> PhasePoint:
    """Unit covector at fiber angle theta in the chart's orthonormal coframe."""
    jet = metric_at(surface, point.chart, point.u, point.v)
    e1, e2 = orthonormal_coframe(jet)
    ct, st = math.cos(theta), math.sin(theta)
    return PhasePoint(point.chart, point.u, point.v,
                      ct * e1[0] + st * e2[0], ct * e1[1] + st * e2[1])


def covector_to_angle(surface: SurfaceSpec, p: PhasePoint) -> float:
    """Fiber angle in [0, 2*pi) of a unit covector; inverse of angle_to_covector."""
    jet = metric_at(surface, p.chart, p.u, p.v)
    h = jet.conorm(p.pu, p.pv)
    if abs(h - 1.0) > 1e-6:
        raise NotUnit(f"|xi|_g = {h}, expected 1")
    i11, i12, i22 = jet.inverse()
    e1, e2 = orthonormal_coframe(jet)

    def pair(a, bu, bv):
        return (a[0] * (i11 * bu + i12 * bv) + a[1] * (i12 * bu + i22 * bv))

    return wrap_angle(math.atan2(pair(e2, p.pu, p.pv), pair(e1, p.pu, p.pv)))


def transition(surface: SurfaceSpec, p: PhasePoint, target_chart: str) -> PhasePoint:
    """Express a phase point in another chart of the atlas."""
    return surface.transition_point(p, target_chart)
