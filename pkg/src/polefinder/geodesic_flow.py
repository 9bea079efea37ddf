"""Unit-cosphere geodesic flow: integration, time reversal, fiber returns.

The flow of H(x, xi) = |xi|_g is integrated with an adaptive embedded
Runge-Kutta 5(4) pair (scipy's RK45) driven step by step, so the driver can
switch charts near coordinate singularities, project the covector back onto
the unit cosphere periodically, and hand each accepted step's dense output
to observers.  Fiber-return events are local minima of the squared chart
distance to the base point, refined by root finding on its time derivative
inside the bracketing step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import RK45
from scipy.optimize import brentq

from .errors import BlowUp, ConfigError, LeftAtlas, NotInOverlap, NotUnit, OutOfChart
from .surfaces import (Chart, MetricJet, PhasePoint, SurfacePoint, SurfaceSpec,
                       angle_to_covector, orthonormal_coframe, wrap_angle)


@dataclass(frozen=True)
class FlowConfig:
    """Tolerances and horizons for flow integration and event detection.

    ``None`` fields are resolved against the surface scale by
    :meth:`resolved`.  ``return_radius`` is the candidate ball for return
    events; a refined event is accepted when its miss distance is below
    ``accept_tol * scale``.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: Optional[float] = None          # default 0.1 * scale
    t_max: Optional[float] = None             # horizon; set by callers
    renormalize_every: int = 64
    return_radius: Optional[float] = None     # default 2e-3 * scale
    refine_tol: float = 1e-10                 # event-time refinement
    accept_tol: float = 1e-6                  # miss acceptance, relative to scale
    min_event_separation: Optional[float] = None  # default 10 * max_step
    event_subsamples: int = 8

    def resolved(self, surface: SurfaceSpec) -> "FlowConfig":
        """Materialize scale-dependent defaults and validate."""
        max_step = self.max_step if self.max_step is not None else 0.1 * surface.scale
        radius = (self.return_radius if self.return_radius is not None
                  else 2e-3 * surface.scale)
        min_sep = (self.min_event_separation if self.min_event_separation is not None
                   else 10.0 * max_step)
        out = replace(self, max_step=max_step, return_radius=radius,
                      min_event_separation=min_sep)
        for name in ("rel_tol", "abs_tol", "max_step", "return_radius",
                     "refine_tol", "accept_tol", "min_event_separation"):
            if getattr(out, name) <= 0:
                raise ConfigError(f"FlowConfig.{name} must be positive")
        if out.renormalize_every < 1 or out.event_subsamples < 2:
            raise ConfigError("renormalize_every >= 1 and event_subsamples >= 2 required")
        if out.t_max is not None and out.t_max <= 0:
            raise ConfigError("FlowConfig.t_max must be positive")
        return out


@dataclass(frozen=True)
class CrossingEvent:
    """One refined passage of the trajectory through the base fiber."""

    t: float
    phase: PhasePoint
    theta_out: float
    miss_distance: float


def hamilton_field(surface: SurfaceSpec, p: PhasePoint):
    """Darboux-coordinate Hamilton field of H = |xi|_g at p.

    Returns (du/dt, dv/dt, dpu/dt, dpv/dt).
    """
    jet = surface.chart(p.chart).jet(p.u, p.v)
    return _field_from_jet(jet, p.pu, p.pv)


def _field_from_jet(jet: MetricJet, pu, pv):
    i11, i12, i22 = jet.inverse()
    wu = i11 * pu + i12 * pv
    wv = i12 * pu + i22 * pv
    h = math.sqrt(pu * wu + pv * wv)
    # dp_k/dt = -dH/dx_k = (1/2H) w^T (dG/dx_k) w
    dpu = (wu * wu * jet.g11_u + 2.0 * wu * wv * jet.g12_u
           + wv * wv * jet.g22_u) / (2.0 * h)
    dpv = (wu * wu * jet.g11_v + 2.0 * wu * wv * jet.g12_v
           + wv * wv * jet.g22_v) / (2.0 * h)
    return wu / h, wv / h, dpu, dpv


def _make_field(chart: Chart) -> Callable:
    def field(t, y):
        jet = chart.jet(y[0], y[1])
        return np.array(_field_from_jet(jet, y[2], y[3]))
    return field


def time_reverse(p: PhasePoint) -> PhasePoint:
    """tau(x, xi) = (x, -xi); an exact involution."""
    return PhasePoint(p.chart, p.u, p.v, -p.pu, -p.pv)


def _renormalized(chart: Chart, y):
    jet = chart.jet(y[0], y[1])
    h = jet.conorm(y[2], y[3])
    out = y.copy()
    out[2] /= h
    out[3] /= h
    return out


def _switch_chart(surface: SurfaceSpec, chart: Chart, y):
    """Pick a more interior chart when the current one is near its boundary."""
    p = PhasePoint(chart.name, y[0], y[1], y[2], y[3])
    best = None
    for name, cand in surface.charts.items():
        if name == chart.name:
            continue
        try:
            q = surface.transition_point(p, name)
        except Exception:
            continue
        if not cand.accepts(q.u, q.v):
            continue
        score = cand.interior_score(q.u, q.v)
        if best is None or score > best[0]:
            best = (score, cand, np.array([q.u, q.v, q.pu, q.pv]))
    if best is None:
        return None, None
    return best[1], best[2]


class _Segment:
    """Dense output of one accepted step, tagged with its chart."""

    __slots__ = ("t0", "t1", "dense", "chart")

    def __init__(self, t0, t1, dense, chart):
        self.t0 = t0
        self.t1 = t1
        self.dense = dense
        self.chart = chart


def _drive(surface: SurfaceSpec, phase: PhasePoint, t_end: float,
           cfg: FlowConfig, observer=None):
    """Integrate to t_end across charts; returns (chart, t, y)."""
    chart = surface.chart(phase.chart)
    y = np.array([phase.u, phase.v, phase.pu, phase.pv], dtype=float)
    t = 0.0
    h_guess = None
    steps_since_renorm = 0
    while t_end - t > 1e-12 * max(1.0, t_end):
        first = None
        if h_guess is not None:
            first = max(min(h_guess, t_end - t), 1e-13)
        rk = RK45(_make_field(chart), t, y, t_bound=t_end,
                  rtol=cfg.rel_tol, atol=cfg.abs_tol,
                  max_step=cfg.max_step, first_step=first)
        restart = False
        while rk.status == "running":
            rk.step()
            if rk.status == "failed":
                raise BlowUp(f"step size underflow at t={rk.t_old:.6g} "
                             f"in chart {chart.name!r}")
            t, y = rk.t, rk.y
            h_guess = t - rk.t_old
            if observer is not None:
                seg = _Segment(rk.t_old, t, rk.dense_output(), chart)
                if observer.on_step(seg, y):
                    return chart, t, y
            steps_since_renorm += 1
            if chart.needs_exit(y[0], y[1]):
                new_chart, new_y = _switch_chart(surface, chart, y)
                if new_chart is not None:
                    chart, y = new_chart, new_y
                    restart = True
                    break
                if not chart.hard_contains(y[0], y[1]):
                    raise LeftAtlas(
                        f"trajectory left chart {chart.name!r} at ({y[0]:.6g}, "
                        f"{y[1]:.6g}) with no admissible chart to switch to")
            if steps_since_renorm >= cfg.renormalize_every:
                y = _renormalized(chart, y)
                steps_since_renorm = 0
                restart = True
                break
        if not restart:
            t, y = rk.t, rk.y
            break
    return chart, t, y


def _require_unit(surface, p, tol=1e-6):
    jet = surface.chart(p.chart).jet(p.u, p.v)
    h = jet.conorm(p.pu, p.pv)
    if abs(h - 1.0) > tol:
        raise NotUnit(f"phase point has |xi|_g = {h}; integrate requires the "
                      "unit cosphere (inputs are not rescaled)")


def integrate(surface: SurfaceSpec, p: PhasePoint, t: float,
              cfg: FlowConfig) -> PhasePoint:
    """Flow a unit-cosphere point for time t (negative t via time reversal)."""
    cfg = cfg.resolved(surface)
    _require_unit(surface, p)
    if t == 0.0:
        return p
    if t < 0.0:
        return time_reverse(integrate(surface, time_reverse(p), -t, cfg))
    chart, _, y = _drive(surface, p, t, cfg)
    u, v = chart.wrap(y[0], y[1])
    return PhasePoint(chart.name, u, v, y[2], y[3])


class TrajectorySample(tuple):
    """(t, chart, u, v, pu, pv, H) row of a trajectory dump."""
    __slots__ = ()


class _Recorder:
    def __init__(self, surface):
        self.surface = surface
        self.rows = []

    def on_step(self, seg, y):
        jet = seg.chart.jet(y[0], y[1])
        h = jet.conorm(y[2], y[3])
        u, v = seg.chart.wrap(y[0], y[1])
        self.rows.append(TrajectorySample(
            (seg.t1, seg.chart.name, u, v, y[2], y[3], h)))
        return False


def trajectory(surface: SurfaceSpec, p: PhasePoint, t: float,
               cfg: FlowConfig):
    """Integrate and record (t, chart, u, v, pu, pv, H) at every accepted step."""
    cfg = cfg.resolved(surface)
    _require_unit(surface, p)
    rec = _Recorder(surface)
    jet = surface.chart(p.chart).jet(p.u, p.v)
    rec.rows.append(TrajectorySample(
        (0.0, p.chart, p.u, p.v, p.pu, p.pv, jet.conorm(p.pu, p.pv))))
    _drive(surface, p, t, cfg, observer=rec)
    return rec.rows


class _ReturnDetector:
    """Observer locating passages of the flow through the base fiber.

    Distance to the base point is measured with the frozen metric at the
    base (g_p(Delta, Delta) in the designated chart); local minima are
    bracketed by the sign change of its time derivative across dense-output
    subsamples and refined with brentq.
    """

    def __init__(self, surface: SurfaceSpec, base: SurfacePoint,
                 cfg: FlowConfig, max_events=None):
        self.surface = surface
        self.cfg = cfg
        self.max_events = max_events
        self.chart = surface.chart(base.chart)
        self.u0 = base.u
        self.v0 = base.v
        self.jet0 = self.chart.jet(base.u, base.v)
        self.frame = orthonormal_coframe(self.jet0)
        self.inv0 = self.jet0.inverse()
        self.base_xyz = (self.chart.embed(base.u, base.v)
                         if self.chart.has_embedding else None)
        self.accept_radius = cfg.accept_tol * surface.scale
        self.events = []
        self._segments = []
        self._carry = None  # (t, d2dot) at the end of the previous step

    # -- geometry helpers ---------------------------------------------------

    def _to_base_chart(self, chart, y):
        if chart.name == self.chart.name:
            return y[0], y[1], y[2], y[3]
        p = self.surface.transition_point(
            PhasePoint(chart.name, y[0], y[1], y[2], y[3]), self.chart.name)
        return p.u, p.v, p.pu, p.pv

    def _d2_and_rate(self, chart, y):
        """Squared base-metric distance and its time derivative."""
        u, v, pu, pv = self._to_base_chart(chart, y)
        du, dv = self.chart.coord_delta(u, v, self.u0, self.v0)
        g = self.jet0
        gdu = g.g11 * du + g.g12 * dv
        gdv = g.g12 * du + g.g22 * dv
        d2 = du * gdu + dv * gdv
        # base-point velocity in the designated chart
        jet = self.chart.jet(u, v)
        xu, xv, _, _ = _field_from_jet(jet, pu, pv)
        return d2, 2.0 * (gdu * xu + gdv * xv)

    def _ambient_distance(self, chart, y):
        x, yy, z = chart.embed(y[0], y[1])
        bx, by, bz = self.base_xyz
        return math.sqrt((x - bx) ** 2 + (yy - by) ** 2 + (z - bz) ** 2)

    def _eval_at(self, t):
        for seg in reversed(self._segments):
            if seg.t0 - 1e-14 <= t <= seg.t1 + 1e-14:
                return seg.chart, seg.dense(t)
        raise RuntimeError(f"no dense segment covers t={t}")

    def _rate_at(self, t):
        chart, y = self._eval_at(t)
        return self._d2_and_rate(chart, y)[1]

    # -- observer protocol --------------------------------------------------

    def on_step(self, seg, y_end):
        self._segments.append(seg)
        if len(self._segments) > 4:
            self._segments.pop(0)
        h = seg.t1 - seg.t0
        gate = self.cfg.return_radius + 1.5 * h
        if self.base_xyz is not None:
            # endpoint gate: with unit speed the step interior cannot dip
            # into the candidate ball if both endpoints stay outside `gate`
            d_start = self._ambient_distance(seg.chart, seg.dense(seg.t0))
            d_end = self._ambient_distance(seg.chart, y_end)
            if min(d_start, d_end) > gate:
                self._carry = None
                return False
        samples = np.linspace(seg.t0, seg.t1, self.cfg.event_subsamples + 1)
        prev = self._carry
        if prev is not None and abs(prev[0] - seg.t0) > 1e-12:
            prev = None
        for t in samples[1:] if prev is not None else samples:
            chart, y = self._eval_at(t)
            try:
                rate = self._d2_and_rate(chart, y)[1]
            except (NotInOverlap, OutOfChart):
                prev = None
                continue
            if prev is not None and prev[1] < 0.0 <= rate:
                self._refine(prev[0], t)
            prev = (t, rate)
        self._carry = prev
        return self.max_events is not None and len(self.events) >= self.max_events

    def _refine(self, ta, tb):
        try:
            t_star = brentq(self._rate_at, ta, tb, xtol=self.cfg.refine_tol)
        except ValueError:
            return
        chart, y = self._eval_at(t_star)
        u, v, pu, pv = self._to_base_chart(chart, y)
        du, dv = self.chart.coord_delta(u, v, self.u0, self.v0)
        miss = self.jet0.norm(du, dv)
        if miss > self.accept_radius or t_star < self.cfg.min_event_separation:
            return
        theta_out = self._fiber_angle(pu, pv)
        phase = PhasePoint(self.chart.name, *self.chart.wrap(u, v), pu, pv)
        event = CrossingEvent(t_star, phase, theta_out, miss)
        if self.events and t_star - self.events[-1].t < self.cfg.min_event_separation:
            if miss < self.events[-1].miss_distance:
                self.events[-1] = event
            return
        self.events.append(event)

    def _fiber_angle(self, pu, pv):
        i11, i12, i22 = self.inv0
        e1, e2 = self.frame

        def pair(e):
            return (e[0] * (i11 * pu + i12 * pv) + e[1] * (i12 * pu + i22 * pv))

        return wrap_angle(math.atan2(pair(e2), pair(e1)))


def detect_fiber_returns(surface: SurfaceSpec, base: SurfacePoint, theta: float,
                         cfg: FlowConfig, max_events=None):
    """All passages of the geodesic with initial fiber angle theta through
    the fiber over ``base`` up to cfg.t_max, sorted by time.

    ``base`` is re-expressed in its most interior (designated) chart; theta
    and the returned ``theta_out`` refer to that chart's orthonormal frame.
    """
    cfg = cfg.resolved(surface)
    if cfg.t_max is None:
        raise ConfigError("detect_fiber_returns needs cfg.t_max")
    base = surface.best_chart(base)
    p0 = angle_to_covector(surface, base, theta)
    detector = _ReturnDetector(surface, base, cfg, max_events=max_events)
    _drive(surface, p0, cfg.t_max, cfg, observer=detector)
    return detector.events
