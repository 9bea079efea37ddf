"""Analysis of circle homeomorphisms: lifts, rotation numbers, fixed points,
reversibility, invariant densities, basins, and conservativity verdicts.

Maps are carried as genuine lifts F with F(x + 2*pi) = F(x) + 2*pi*degree,
so rotation-number brackets inherit the homeomorphism displacement bound and
all mod-2*pi bookkeeping stays exact.  Angles are radians throughout: the
half turn is pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (NonConvergent, NonHomeomorphism, OrientationReversing,
                     TooManyFixedPoints)

TWO_PI = 2.0 * math.pi


def circle_distance(a, b):
    """Geodesic distance on R/2piZ (vectorized)."""
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    d = np.where(d > math.pi, TWO_PI - d, d)
    return float(d) if d.ndim == 0 else d


class CircleMap:
    """A circle homeomorphism carried as a lift plus its degree."""

    def __init__(self, lift: Callable, degree: int, label: str = "",
                 inverse_lift: Optional[Callable] = None):
        if degree not in (-1, 1):
            raise NonHomeomorphism(f"degree must be ±1, got {degree}")
        self._lift = lift
        self._inverse_lift = inverse_lift
        self.degree = degree
        self.label = label

    def lift(self, x):
        return self._lift(np.asarray(x, dtype=float))

    def __call__(self, theta):
        return np.mod(self.lift(theta), TWO_PI)

    def __repr__(self):
        tag = f" {self.label!r}" if self.label else ""
        return f"<CircleMap degree={self.degree:+d}{tag}>"

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_lift(cls, lift, degree, label="", inverse_lift=None):
        """Wrap a known lift (rotations, conjugated rotations, grid lifts)."""
        return cls(lift, degree, label=label, inverse_lift=inverse_lift)

    @classmethod
    def rotation(cls, alpha):
        """Rigid rotation by alpha radians."""
        a = float(alpha)
        return cls(lambda x: x + a, 1, label=f"rotation({a:.6g})",
                   inverse_lift=lambda x: x - a)

    @classmethod
    def from_callable(cls, f, samples=4096, label=""):
        """Build the lift of a map given only as theta -> f(theta) mod 2*pi.

        The map is sampled to determine the degree and verify monotonicity;
        the returned lift follows the branch anchored at F(0) = f(0) mod 2*pi.
        Raises :class:`NonHomeomorphism` if the samples are not strictly
        monotone on the circle.
        """
        fv = _vectorized(f)
        xs = np.linspace(0.0, TWO_PI, samples, endpoint=False)
        vals = np.mod(fv(xs), TWO_PI)
        inc = _wrap_pm_pi(np.roll(vals, -1) - vals)
        total = inc.sum() / TWO_PI
        degree = int(round(total))
        if abs(total - degree) > 1e-9 or degree not in (-1, 1):
            raise NonHomeomorphism(
                f"sampled map winds {total:.6f} times around the circle")
        if degree == 1 and not np.all(inc > 0):
            raise NonHomeomorphism("sampled map is not strictly increasing")
        if degree == -1 and not np.all(inc < 0):
            raise NonHomeomorphism("sampled map is not strictly decreasing")
        anchor = float(vals[0])

        def lift(x):
            x = np.asarray(x, dtype=float)
            q = np.floor(x / TWO_PI)
            t = x - TWO_PI * q
            out = np.mod(fv(t), TWO_PI)
            if degree == 1:
                m = np.mod(out - anchor, TWO_PI)
                # seam guard: monotone maps only reach the window edge at t=0
                m = np.where((m > TWO_PI - 1e-9) & (t < 1e-6), 0.0, m)
                res = anchor + m + TWO_PI * q
            else:
                m = np.mod(anchor - out, TWO_PI)
                m = np.where((m > TWO_PI - 1e-9) & (t < 1e-6), 0.0, m)
                res = anchor - m - TWO_PI * q
            return float(res) if res.ndim == 0 else res

        return cls(lift, degree, label=label or getattr(f, "__name__", "callable"))

    @classmethod
    def from_expression(cls, source, samples=4096):
        """Circle map from a closed-form expression in the variable x."""
        from .expressions import Expression
        expr = Expression(source, allowed_vars=("x",))

        def f(theta):
            theta = np.asarray(theta, dtype=float)
            if theta.ndim == 0:
                return expr(x=float(theta))
            return np.array([expr(x=float(t)) for t in theta])

        return cls.from_callable(f, samples=samples, label=source)

    # -- inversion ----------------------------------------------------------

    def inverse_lift(self, y):
        """Solve F(x) = y on the line (monotone bisection, exact to 1e-13)."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 0:
            return self._inverse_lift_scalar(float(y))
        return np.array([self._inverse_lift_scalar(float(t)) for t in y])

    def _inverse_lift_scalar(self, y):
        if self._inverse_lift is not None:
            return float(self._inverse_lift(y))
        sgn = self.degree

        def g(x):
            return float(self.lift(x)) - y

        lo, hi = sgn * y - TWO_PI, sgn * y + TWO_PI
        glo, ghi = g(lo), g(hi)
        width = TWO_PI
        while glo * ghi > 0 and width < 64 * math.pi:
            width *= 2
            lo, hi = lo - width, hi + width
            glo, ghi = g(lo), g(hi)
        if glo * ghi > 0:
            raise NonHomeomorphism("could not bracket the inverse")
        return brentq(g, lo, hi, xtol=1e-13)

    def inverse_map(self):
        """The inverse homeomorphism as a CircleMap."""
        inv = self._inverse_lift
        return CircleMap(lambda x: self.inverse_lift(x), self.degree,
                         label=f"inverse({self.label})",
                         inverse_lift=self._lift if inv is not None else None)


def _vectorized(f):
    try:
        out = f(np.array([0.0, 1.0]))
        if np.shape(out) == (2,):
            return f
    except Exception:
        pass
    return lambda x: np.array([f(float(t)) for t in np.atleast_1d(x)]) \
        if np.ndim(x) else np.array(f(float(x)))


def _wrap_pm_pi(x):
    return np.mod(np.asarray(x) + math.pi, TWO_PI) - math.pi


def conjugated_rotation(alpha, amplitude=0.3):
    """h o R_alpha o h^{-1} with h(x) = x + amplitude*sin(x); exact lift.

    A standard reference family: analytic circle diffeomorphisms with known
    rotation number alpha and invariant measure h_*(Lebesgue).
    """
    a = float(amplitude)
    if not abs(a) < 1.0:
        raise NonHomeomorphism("conjugator needs |amplitude| < 1")

    def h(x):
        return x + a * np.sin(x)

    def h_inv(y):
        y = np.asarray(y, dtype=float)
        x = y.copy()
        for _ in range(60):
            delta = (x + a * np.sin(x) - y) / (1.0 + a * np.cos(x))
            x = x - delta
            if np.max(np.abs(delta)) < 1e-15:
                break
        return x

    lift = lambda x: h(h_inv(np.asarray(x, dtype=float)) + alpha)
    inv = lambda x: h(h_inv(np.asarray(x, dtype=float)) - alpha)
    return CircleMap(lift, 1, label=f"conjugated-rotation({alpha:.6g})",
                     inverse_lift=inv)


# ---------------------------------------------------------------------------
# Elementary queries


def orientation(m: CircleMap) -> str:
    """'preserving' or 'reversing', from the degree sign."""
    return "preserving" if m.degree == 1 else "reversing"


def build_lift(m: CircleMap, x0: float = 0.0):
    """A lift F of m with F(x0) in [0, 2*pi)."""
    base = float(m.lift(x0))
    shift = TWO_PI * math.floor(base / TWO_PI)
    return lambda x: m.lift(x) - shift


def compose_square(m: CircleMap) -> CircleMap:
    """The square f o f (orientation preserving for any homeomorphism)."""
    inv = None
    if m._inverse_lift is not None:
        inv = lambda x: m.inverse_lift(m.inverse_lift(x))
    return CircleMap(lambda x: m.lift(m.lift(x)), m.degree * m.degree,
                     label=f"square({m.label})", inverse_lift=inv)


def identity_defect(m: CircleMap, grid: int = 4096) -> float:
    """sup over a grid of the circle distance between f(theta) and theta."""
    xs = np.linspace(0.0, TWO_PI, grid, endpoint=False)
    return float(np.max(np.abs(_wrap_pm_pi(m.lift(xs) - xs))))


# ---------------------------------------------------------------------------
# Rotation number


@dataclass(frozen=True)
class RotationEstimate:
    """Rotation number with a rigorous bracket.

    ``value`` is in [0, 2*pi); ``lower``/``upper`` bracket the true rotation
    number (as real displacements, before reduction mod 2*pi) using the
    homeomorphism bound |(F^n(x)-x)/n - rho| <= 2*pi/n.
    """

    value: float
    lower: float
    upper: float
    n_iter: int

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, angle, slack=0.0):
        """Whether the bracket contains ``angle`` modulo 2*pi."""
        k0 = math.floor((self.lower - angle) / TWO_PI) - 1
        for k in (k0, k0 + 1, k0 + 2, k0 + 3):
            if self.lower - slack <= angle + TWO_PI * k <= self.upper + slack:
                return True
        return False


def rotation_number(m: CircleMap, n_iter: int = 10_000,
                    x0: float = 0.0) -> RotationEstimate:
    """Birkhoff rotation-number estimate with a rigorous bracket.

    Iterates the lift from x0 and from a 16-point grid; the true rotation
    number lies in [max_j r_j - 2*pi/n, min_j r_j + 2*pi/n], an interval of
    width at most 4*pi/n.
    """
    if m.degree != 1:
        raise OrientationReversing("rotation number needs an orientation-"
                                   "preserving map")
    starts = np.concatenate([[x0], TWO_PI * np.arange(16) / 16.0])
    xs = starts.copy()
    for _ in range(n_iter):
        xs = m.lift(xs)
    rates = (xs - starts) / n_iter
    bound = TWO_PI / n_iter
    lower = float(np.max(rates)) - bound
    upper = float(np.min(rates)) + bound
    value = float(np.mod(rates[0], TWO_PI))
    return RotationEstimate(value, lower, upper, n_iter)


# ---------------------------------------------------------------------------
# Reversibility


def reversibility_defect(m: CircleMap, grid: int = 1024) -> float:
    """sup distance between sigma o f o sigma and f^{-1}, sigma = half turn.

    Zero (to tolerance) exactly for maps conjugate to their inverse by the
    fiber antipodal map, the symmetry every geodesic return map inherits
    from time reversal.
    """
    xs = np.linspace(0.0, TWO_PI, grid, endpoint=False)
    conj = m.lift(xs + math.pi) + math.pi
    inv = m.inverse_lift(xs)
    return float(np.max(np.abs(_wrap_pm_pi(conj - inv))))


# ---------------------------------------------------------------------------
# Fixed points


@dataclass(frozen=True)
class FixedPoint:
    theta: float
    multiplier: float
    stability: str  # attracting | repelling | neutral


@dataclass
class FixedPointSet:
    points: List[FixedPoint] = field(default_factory=list)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def attracting(self):
        return [p for p in self.points if p.stability == "attracting"]

    def repelling(self):
        return [p for p in self.points if p.stability == "repelling"]

    def neutral(self):
        return [p for p in self.points if p.stability == "neutral"]

    def hyperbolic(self):
        return [p for p in self.points if p.stability != "neutral"]


_NEUTRAL_BAND = 1e-6
_IDENTITY_EPS = 1e-9


def _classify_multiplier(mult):
    if abs(mult - 1.0) <= _NEUTRAL_BAND:
        return "neutral"
    return "attracting" if mult < 1.0 else "repelling"


def fixed_points(m: CircleMap, grid: int = 4096) -> FixedPointSet:
    """All fixed points of an orientation-preserving map, with multipliers.

    Zeros of the displacement F(theta) - theta (over every reachable 2*pi
    branch) are located by a sign-change scan plus brentq to 1e-12;
    multipliers come from central differences of the lift.  Tangential
    near-zeros (|displacement| < 1e-9 without a sign change) are flagged
    neutral.  Raises :class:`TooManyFixedPoints` when the map is within
    1e-9 of the identity, where isolated fixed points are meaningless.
    """
    if m.degree != 1:
        raise OrientationReversing("fixed points are scanned on orientation-"
                                   "preserving maps (use the square)")
    xs = np.linspace(0.0, TWO_PI, grid, endpoint=False)
    disp = m.lift(xs) - xs
    if np.max(np.abs(_wrap_pm_pi(disp))) < _IDENTITY_EPS:
        raise TooManyFixedPoints(
            "map is numerically the identity; every point is fixed")

    def g_factory(k):
        off = TWO_PI * k
        return lambda x: float(m.lift(x)) - x - off

    roots = []
    k_lo = math.ceil(disp.min() / TWO_PI - 1e-12)
    k_hi = math.floor(disp.max() / TWO_PI + 1e-12)
    xs_ext = np.append(xs, TWO_PI)
    for k in range(k_lo, k_hi + 1):
        gk = disp - TWO_PI * k
        gk_ext = np.append(gk, gk[0])  # displacement is 2*pi periodic
        sign = np.sign(gk_ext)
        for i in range(grid):
            a, b = sign[i], sign[i + 1]
            if a == 0.0:
                roots.append(float(xs_ext[i]))
            elif a * b < 0:
                g = g_factory(k)
                roots.append(brentq(g, float(xs_ext[i]), float(xs_ext[i + 1]),
                                    xtol=1e-12))
        # tangential dips that never change sign
        absg = np.abs(gk)
        for i in np.nonzero(absg < _IDENTITY_EPS)[0]:
            x = float(xs[i])
            if all(circle_distance(x, r) > 1e-6 for r in roots):
                roots.append(x)
    if len(roots) > 10_000:
        raise TooManyFixedPoints(f"{len(roots)} fixed points located")

    uniq = []
    for r in sorted(np.mod(roots, TWO_PI)):
        if not uniq or (circle_distance(r, uniq[-1]) > 1e-9
                        and circle_distance(r, uniq[0]) > 1e-9):
            uniq.append(float(r))

    h = 1e-5
    out = []
    for r in uniq:
        mult = float((m.lift(r + h) - m.lift(r - h)) / (2.0 * h))
        out.append(FixedPoint(r, mult, _classify_multiplier(mult)))
    return FixedPointSet(out)


# ---------------------------------------------------------------------------
# Invariant densities (Ulam's method)


@dataclass
class UlamDensity:
    """Stationary vector of the binned transfer operator.

    ``atomicity`` is bins * max(mass): bounded under refinement for L1
    densities, growing linearly in the bin count for atomic measures.
    """

    bins: int
    mass: np.ndarray
    atomicity: float
    l1_distance_to_uniform: float
    residual: float
    method: str

    @property
    def M(self):
        return self.bins


_POWER_SWEEPS = 3000
_STATIONARY_TOL = 1e-12


def ulam_density(m: CircleMap, m_bins: int = 256,
                 samples_per_bin: int = 32) -> UlamDensity:
    """Discretized invariant density of the map by Ulam's method.

    Builds the row-stochastic bin-transition matrix from stratified samples,
    then finds its stationary vector: power iteration first, with a direct
    least-squares solve of the stationarity equations as a deterministic
    fallback for nearly measure-preserving maps whose spectral gap is too
    small for iteration.  Raises :class:`NonConvergent` if the final
    stationarity residual exceeds 1e-10.
    """
    if m_bins < 64:
        raise NonConvergent("ulam_density needs at least 64 bins")
    M, K = m_bins, samples_per_bin
    xs = (np.arange(M * K) + 0.5) * (TWO_PI / (M * K))
    fx = np.mod(m.lift(xs), TWO_PI)
    cols = np.minimum((fx / (TWO_PI / M)).astype(int), M - 1)
    rows = np.repeat(np.arange(M), K)
    P = np.zeros((M, M))
    np.add.at(P, (rows, cols), 1.0 / K)

    v = np.full(M, 1.0 / M)
    residual = np.inf
    method = "power"
    for _ in range(_POWER_SWEEPS):
        w = v @ P
        w /= w.sum()
        residual = float(np.abs(w - v).sum())
        v = w
        if residual <= _STATIONARY_TOL:
            break
    if residual > _STATIONARY_TOL:
        # deterministic rescue: stationarity as a least-squares system
        A = np.vstack([P.T - np.eye(M), np.ones((1, M))])
        b = np.zeros(M + 1)
        b[-1] = 1.0
        sol, *_ = np.linalg.lstsq(A, b, rcond=None)
        sol = np.clip(sol, 0.0, None)
        total = sol.sum()
        if total <= 0:
            raise NonConvergent("stationary solve returned a null vector",
                                residual=residual)
        v = sol / total
        residual = float(np.abs(v @ P - v).sum())
        method = "power+lstsq"
        if residual > 1e-10:
            raise NonConvergent(
                f"stationarity residual {residual:.3e} after direct solve",
                residual=residual)
    atomicity = float(M * v.max())
    l1 = float(np.abs(v - 1.0 / M).sum())
    return UlamDensity(M, v, atomicity, l1, residual, method)


# ---------------------------------------------------------------------------
# Orbit statistics


@dataclass
class BasinReport:
    """Where uniformly seeded orbits end up."""

    fixed_point_set: Optional[FixedPointSet]
    fractions: dict
    nonconvergent_fraction: float
    degenerate: bool


def birkhoff_basins(m: CircleMap, n_orbits: int = 128, n_iter: int = 1000,
                    fixed_pts: Optional[FixedPointSet] = None,
                    tol: float = 1e-6) -> BasinReport:
    """Assign seed orbits to the fixed points they converge to.

    Nonconvergent seeds are reported, never raised.  A map numerically equal
    to the identity is flagged degenerate (every seed is its own limit).
    """
    if identity_defect(m) < _IDENTITY_EPS:
        return BasinReport(None, {}, 0.0, True)
    if fixed_pts is None:
        try:
            fixed_pts = fixed_points(m)
        except TooManyFixedPoints:
            return BasinReport(None, {}, 0.0, True)
    xs = TWO_PI * np.arange(n_orbits) / n_orbits
    for _ in range(n_iter):
        xs = np.mod(m.lift(xs), TWO_PI)
    counts = {i: 0 for i in range(len(fixed_pts))}
    lost = 0
    targets = [fp.theta for fp in fixed_pts]
    for x in xs:
        if targets:
            dists = [circle_distance(x, t) for t in targets]
            j = int(np.argmin(dists))
            if dists[j] <= tol:
                counts[j] += 1
                continue
        lost += 1
    fractions = {i: c / n_orbits for i, c in counts.items()}
    return BasinReport(fixed_pts, fractions, lost / n_orbits, False)


# ---------------------------------------------------------------------------
# Conservativity


def conservativity_verdict(densities: Sequence[UlamDensity],
                           fixed_pts: Optional[FixedPointSet],
                           atomicity_bound: float = 8.0,
                           growth_ratio: float = 1.6) -> str:
    """Decide Conservative / Dissipative / Inconclusive.

    ``densities`` must hold Ulam results at at least two doubling
    resolutions; ``fixed_pts`` are the fixed points of the squared map
    (None when the square is numerically the identity).  Atomicity that
    grows with resolution, or any hyperbolic fixed point of the square,
    means no L1 invariant density exists (Dissipative); bounded atomicity
    with no hyperbolic fixed points is Conservative.  Neutral fixed points
    sit outside the decision procedure and force Inconclusive.
    """
    if len(densities) < 2:
        raise NonConvergent("need densities at >= 2 resolutions")
    for lo, hi in zip(densities, densities[1:]):
        if hi.bins != 2 * lo.bins:
            raise NonConvergent("densities must come in doubling resolutions")
    if fixed_pts is not None and fixed_pts.neutral():
        return "Inconclusive"
    ratio = densities[-1].atomicity / densities[-2].atomicity
    has_hyperbolic = fixed_pts is not None and bool(fixed_pts.hyperbolic())
    if ratio >= growth_ratio or has_hyperbolic:
        return "Dissipative"
    if all(d.atomicity <= atomicity_bound for d in densities) and not has_hyperbolic:
        return "Conservative"
    return "Inconclusive"
