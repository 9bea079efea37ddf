"""First-return circle maps on the fiber over a base point.

Probes whether every direction from a point loops back (self-focal test),
extracts the minimal common return time, and samples the return map on a
uniform fiber grid, producing a monotone periodic interpolant of its lift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import InconclusiveProbe, NonMonotoneSamples, PoleFinderError
from .geodesic_flow import FlowConfig, detect_fiber_returns
from .surfaces import SurfacePoint, SurfaceSpec, wrap_pm_pi

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ReturnSample:
    """First (or time-selected) return of one direction."""

    theta_in: float
    t_first: float
    theta_out: float
    miss_distance: float


@dataclass
class SelfFocalReport:
    """Outcome of fanning directions from a point and watching fiber returns."""

    is_self_focal: bool
    T_p: Optional[float]
    returning_fraction: float
    return_time_spread: float
    samples: List[ReturnSample]
    time_tol: float
    n_directions: int
    t_max: float


def loop_fraction(surface: SurfaceSpec, x: SurfacePoint, n: int, t_max: float,
                  cfg: FlowConfig) -> float:
    """Fraction of n uniformly spread directions that return to the fiber by t_max."""
    if n < 16:
        raise PoleFinderError("loop_fraction needs n >= 16")
    cfg = replace(cfg, t_max=t_max).resolved(surface)
    x = surface.best_chart(x)
    hits = 0
    for i in range(n):
        theta = TWO_PI * i / n
        events = detect_fiber_returns(surface, x, theta, cfg, max_events=1)
        if events:
            hits += 1
    return hits / n


def _common_time(per_direction_events, time_tol):
    """Smallest time at which every direction has an event within time_tol."""
    candidates = sorted({e.t for events in per_direction_events for e in events})
    for t_star in candidates:
        matched = []
        for events in per_direction_events:
            best = None
            for e in events:
                if abs(e.t - t_star) <= time_tol and \
                        (best is None or abs(e.t - t_star) < abs(best.t - t_star)):
                    best = e
            if best is None:
                matched = None
                break
            matched.append(best)
        if matched is not None:
            return float(np.median([e.t for e in matched])), matched
    return None, None


def probe_self_focal(surface: SurfaceSpec, p: SurfacePoint, n: int,
                     time_tol: Optional[float], cfg: FlowConfig) -> SelfFocalReport:
    """Decide whether p is self-focal and find the minimal common return time.

    Fans ``n`` directions; p is self-focal when every one of them returns to
    the fiber and a common return time exists within ``time_tol`` (default
    1e-4 of the median first-return time).  Raises
    :class:`InconclusiveProbe` when more than 98% but not all directions
    return, which suggests the horizon cfg.t_max is too short.
    """
    if n < 64:
        raise PoleFinderError("probe_self_focal needs n >= 64")
    cfg = cfg.resolved(surface)
    if cfg.t_max is None:
        raise PoleFinderError("probe_self_focal needs cfg.t_max")
    p = surface.best_chart(p)
    per_dir = []
    for i in range(n):
        theta = TWO_PI * i / n
        per_dir.append(detect_fiber_returns(surface, p, theta, cfg))
    returning = [events for events in per_dir if events]
    fraction = len(returning) / n
    first_times = [events[0].t for events in returning]
    spread = (max(first_times) - min(first_times)) if first_times else 0.0
    if time_tol is None:
        time_tol = 1e-4 * float(np.median(first_times)) if first_times else 0.0

    samples = [
        ReturnSample(TWO_PI * i / n, events[0].t, events[0].theta_out,
                     events[0].miss_distance)
        for i, events in enumerate(per_dir) if events
    ]

    def report(is_self_focal, T_p):
        return SelfFocalReport(is_self_focal, T_p, fraction, spread, samples,
                               time_tol, n, cfg.t_max)

    if fraction < 1.0:
        if fraction > 0.98:
            raise InconclusiveProbe(
                f"{len(returning)}/{n} directions returned by t_max={cfg.t_max}; "
                "horizon looks too short", report(False, None))
        return report(False, None)

    T_p, matched = _common_time(per_dir, time_tol)
    if T_p is None:
        return report(False, None)
    return report(True, T_p)


@dataclass
class CircleMapGrid:
    """Sampled graph of the return map with a monotone periodic lift interpolant."""

    n: int
    theta_in: np.ndarray
    theta_out: np.ndarray
    t_used: np.ndarray
    miss: np.ndarray
    degree: int
    lift_values: np.ndarray
    interpolant: PchipInterpolator

    def lift(self, x):
        """Continuous lift F with F(x + 2*pi) = F(x) + 2*pi*degree."""
        x = np.asarray(x, dtype=float)
        k = np.floor(x / TWO_PI)
        val = self.interpolant(x - k * TWO_PI) + k * (TWO_PI * self.degree)
        return float(val) if val.ndim == 0 else val

    def __call__(self, theta):
        return np.mod(self.lift(theta), TWO_PI)

    def to_circle_map(self):
        from .circle_dynamics import CircleMap
        return CircleMap(self.lift, self.degree, label="return-map grid")


def _build_interpolant(theta_in, lift_vals, degree, pad=4):
    """Periodic monotone PCHIP of the lift, padded across the seam."""
    xs = np.concatenate([theta_in[-pad:] - TWO_PI, theta_in,
                         theta_in[:pad] + TWO_PI])
    ys = np.concatenate([lift_vals[-pad:] - TWO_PI * degree, lift_vals,
                         lift_vals[:pad] + TWO_PI * degree])
    return PchipInterpolator(xs, ys)


def build_return_map(surface: SurfaceSpec, p: SurfacePoint, T_p: float, n: int,
                     cfg: FlowConfig, time_tol: Optional[float] = None,
                     derivative_floor: float = 1e-6) -> CircleMapGrid:
    """Sample the return map at the common time T_p on an n-point fiber grid.

    For each direction the event with time closest to T_p is used, so
    directions that also return at earlier multiples do not corrupt the
    common-time section.  Raises :class:`NonMonotoneSamples` when the lifted
    samples are not strictly monotone (insufficient n, or numerical failure:
    a genuine return map is an analytic diffeomorphism).
    """
    if time_tol is None:
        time_tol = 1e-4 * T_p
    horizon = T_p * (1.0 + 0.05) + 10.0 * time_tol
    cfg = replace(cfg, t_max=horizon).resolved(surface)
    p = surface.best_chart(p)

    theta_in = TWO_PI * np.arange(n) / n
    theta_out = np.empty(n)
    t_used = np.empty(n)
    miss = np.empty(n)
    for i, theta in enumerate(theta_in):
        events = detect_fiber_returns(surface, p, float(theta), cfg)
        if not events:
            raise InconclusiveProbe(
                f"direction theta={theta:.6f} produced no event near T_p={T_p}")
        best = min(events, key=lambda e: abs(e.t - T_p))
        if abs(best.t - T_p) > max(10.0 * time_tol, 1e-3 * T_p):
            raise InconclusiveProbe(
                f"direction theta={theta:.6f}: nearest event at t={best.t:.6f} "
                f"is too far from T_p={T_p:.6f}")
        theta_out[i] = best.theta_out
        t_used[i] = best.t
        miss[i] = best.miss_distance

    # unwrap to a lift and determine the degree from the closing increment
    increments = np.array([wrap_pm_pi(theta_out[(i + 1) % n] - theta_out[i])
                           for i in range(n)])
    lift_vals = theta_out[0] + np.concatenate([[0.0], np.cumsum(increments[:-1])])
    total = increments.sum() / TWO_PI
    degree = int(round(total))
    if abs(total - degree) > 1e-6 or degree not in (-1, 1):
        raise NonMonotoneSamples(
            f"lifted samples wind {total:.6f} times; not a degree ±1 circle map")
    if degree == 1 and not np.all(increments > 0):
        raise NonMonotoneSamples("lift is not strictly increasing")
    if degree == -1 and not np.all(increments < 0):
        raise NonMonotoneSamples("lift is not strictly decreasing")

    pchip = _build_interpolant(theta_in, lift_vals, degree)
    grid = CircleMapGrid(n, theta_in, theta_out, t_used, miss, degree,
                         lift_vals, pchip)
    dense = np.linspace(0.0, TWO_PI, 8 * n, endpoint=False)
    deriv = pchip.derivative()(dense)
    if degree == 1 and deriv.min() < derivative_floor:
        raise NonMonotoneSamples(
            f"interpolant derivative dips to {deriv.min():.3e}, below the "
            f"floor {derivative_floor:.1e}")
    if degree == -1 and deriv.max() > -derivative_floor:
        raise NonMonotoneSamples("interpolant derivative not bounded away from 0")
    return grid
