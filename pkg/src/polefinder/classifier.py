"""End-to-end classification of surface points.

point -> self-focal probe -> return map -> circle-map analysis -> verdict.
The conservative/dissipative dichotomy is verified, not assumed: the
conservativity verdict (Ulam atomicity scaling + hyperbolic fixed points of
the squared map) and the identity defect of the squared return map are
computed independently and cross-checked, and a pole verdict additionally
requires every geodesic to close up smoothly at twice the return time.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import circle_dynamics as cdyn
from .circle_dynamics import (CircleMap, FixedPointSet, RotationEstimate,
                              UlamDensity, circle_distance)
from .errors import InconclusiveProbe, PoleFinderError
from .geodesic_flow import FlowConfig, integrate
from .return_map import build_return_map, loop_fraction, probe_self_focal
from .surfaces import (PhasePoint, SurfacePoint, SurfaceSpec, angle_to_covector,
                       covector_to_angle)

TWO_PI = 2.0 * math.pi

NOT_SELF_FOCAL = "NotSelfFocal"
SELF_FOCAL_DISSIPATIVE = "SelfFocalDissipative"
POLE = "Pole"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class ClassifyConfig:
    """Grids, tolerances, and horizons of the classification pipeline."""

    flow: FlowConfig = FlowConfig()
    probe_n: int = 64
    map_n: int = 256
    pole_tol: float = 1e-4            # sup fiber distance of the squared map
    closure_tol_rel: float = 1e-4     # closure residual, relative to scale
    ulam_bins: int = 256              # second resolution is twice this
    ulam_samples_per_bin: int = 32
    rotation_iters: int = 10_000
    verify_dirs: int = 64
    horizon_periods: float = 3.0      # t_max = this * 2*pi*scale when unset
    prefilter_n: int = 16
    prefilter_threshold: float = 0.5
    atomicity_bound: float = 8.0
    atomicity_growth_ratio: float = 1.6
    seed: int = 0

    def __post_init__(self):
        from .errors import ConfigError
        if self.probe_n < 64:
            raise ConfigError("probe_n must be at least 64")
        if self.map_n < 16:
            raise ConfigError("map_n must be at least 16")
        if self.prefilter_n < 16:
            raise ConfigError("prefilter_n must be at least 16")
        for name in ("pole_tol", "closure_tol_rel", "horizon_periods",
                     "atomicity_bound", "atomicity_growth_ratio"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.ulam_bins < 64 or self.ulam_samples_per_bin < 1:
            raise ConfigError("ulam_bins >= 64 and ulam_samples_per_bin >= 1 required")
        if self.rotation_iters < 1 or self.verify_dirs < 1:
            raise ConfigError("rotation_iters and verify_dirs must be positive")

    def flow_resolved(self, surface: SurfaceSpec) -> FlowConfig:
        flow = self.flow
        if flow.t_max is None:
            flow = dataclasses.replace(
                flow, t_max=self.horizon_periods * TWO_PI * surface.scale)
        return flow.resolved(surface)


@dataclass
class ClosureReport:
    """Smooth-closure residuals of the geodesic fan at twice the return time."""

    t_closure: float
    residuals: np.ndarray
    base_distances: np.ndarray
    angle_distances: np.ndarray

    @property
    def closure_residual(self):
        return float(np.max(self.residuals))


@dataclass
class Verdict:
    """Classification of one point, with full audit data."""

    tag: str
    point: SurfacePoint
    loop_fraction: Optional[float] = None
    returning_fraction: Optional[float] = None
    T_p: Optional[float] = None
    return_time_spread: Optional[float] = None
    orientation: Optional[str] = None
    rotation: Optional[RotationEstimate] = None
    reversibility_defect: Optional[float] = None
    identity_defect_map: Optional[float] = None
    identity_defect_square: Optional[float] = None
    fixed_points_square: Optional[FixedPointSet] = None
    ulam: Optional[List[UlamDensity]] = None
    atomicity_ratio: Optional[float] = None
    conservativity: Optional[str] = None
    closure_residual: Optional[float] = None
    diagnostics: List[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    return_grid: object = None  # CircleMapGrid; audit only, not serialized

    def to_dict(self):
        out = {
            "tag": self.tag,
            "point": {"chart": self.point.chart, "u": self.point.u,
                      "v": self.point.v},
            "loop_fraction": self.loop_fraction,
            "returning_fraction": self.returning_fraction,
            "T_p": self.T_p,
            "return_time_spread": self.return_time_spread,
            "orientation": self.orientation,
            "rotation": None,
            "reversibility_defect": self.reversibility_defect,
            "identity_defect_map": self.identity_defect_map,
            "identity_defect_square": self.identity_defect_square,
            "fixed_points_square": None,
            "ulam": None,
            "atomicity_ratio": self.atomicity_ratio,
            "conservativity": self.conservativity,
            "closure_residual": self.closure_residual,
            "diagnostics": list(self.diagnostics),
            "provenance": self.provenance,
        }
        if self.rotation is not None:
            out["rotation"] = {"value": self.rotation.value,
                               "lower": self.rotation.lower,
                               "upper": self.rotation.upper,
                               "n_iter": self.rotation.n_iter}
        if self.fixed_points_square is not None:
            out["fixed_points_square"] = [
                {"theta": fp.theta, "multiplier": fp.multiplier,
                 "stability": fp.stability}
                for fp in self.fixed_points_square]
        if self.ulam is not None:
            out["ulam"] = [{"bins": d.bins, "atomicity": d.atomicity,
                            "l1_distance_to_uniform": d.l1_distance_to_uniform,
                            "residual": d.residual, "method": d.method}
                           for d in self.ulam]
        return out


def _provenance(surface: SurfaceSpec, config: ClassifyConfig,
                flow: FlowConfig) -> dict:
    return {
        "surface": {"variant": surface.variant, "scale": surface.scale,
                    "params": {k: v for k, v in surface.params.items()}},
        "config": dataclasses.asdict(config),
        "flow_resolved": dataclasses.asdict(flow),
    }


def verify_pole(surface: SurfaceSpec, p: SurfacePoint, T_p: float,
                n_dirs: int, cfg: FlowConfig) -> ClosureReport:
    """Integrate a fan of directions for 2*T_p and measure smooth closure.

    The residual per direction is the base-point distance (in the frozen
    metric at p) plus the fiber-angle distance, so both the position and the
    direction must return for a small residual.
    """
    cfg = cfg.resolved(surface)
    p = surface.best_chart(p)
    chart = surface.chart(p.chart)
    jet0 = chart.jet(p.u, p.v)
    t_closure = 2.0 * T_p
    base_d = np.empty(n_dirs)
    ang_d = np.empty(n_dirs)
    for i in range(n_dirs):
        theta = TWO_PI * i / n_dirs
        start = angle_to_covector(surface, p, theta)
        end = integrate(surface, start, t_closure, cfg)
        if end.chart != p.chart:
            end = surface.transition_point(end, p.chart)
        du, dv = chart.coord_delta(end.u, end.v, p.u, p.v)
        base_d[i] = jet0.norm(du, dv)
        theta_end = covector_to_angle(
            surface, PhasePoint(p.chart, p.u, p.v, end.pu, end.pv))
        ang_d[i] = circle_distance(theta_end, theta)
    return ClosureReport(t_closure, base_d + ang_d, base_d, ang_d)


def classify_point(surface: SurfaceSpec, p: SurfacePoint,
                   config: ClassifyConfig = ClassifyConfig()) -> Verdict:
    """Run the full pipeline on one point and return its verdict."""
    flow = config.flow_resolved(surface)
    p = surface.best_chart(p)
    prov = _provenance(surface, config, flow)
    diagnostics: List[str] = []

    try:
        probe = probe_self_focal(surface, p, config.probe_n, None, flow)
    except InconclusiveProbe as exc:
        report = exc.report
        return Verdict(
            tag=NOT_SELF_FOCAL, point=p,
            loop_fraction=report.returning_fraction if report else None,
            returning_fraction=report.returning_fraction if report else None,
            diagnostics=["Inconclusive(probe_self_focal): " + str(exc)],
            provenance=prov)

    if not probe.is_self_focal:
        return Verdict(tag=NOT_SELF_FOCAL, point=p,
                       loop_fraction=probe.returning_fraction,
                       returning_fraction=probe.returning_fraction,
                       return_time_spread=probe.return_time_spread,
                       provenance=prov)

    grid = build_return_map(surface, p, probe.T_p, config.map_n, flow,
                            time_tol=probe.time_tol)
    cmap = grid.to_circle_map()
    verdict = _analyze_self_focal(surface, p, probe, cmap, config, flow, prov,
                                  diagnostics)
    verdict.return_grid = grid
    return verdict


def _analyze_self_focal(surface, p, probe, cmap: CircleMap, config, flow,
                        prov, diagnostics) -> Verdict:
    """Circle-map analysis of a self-focal point's return map.

    Split out so synthetic maps can be injected for negative controls.
    """
    orient = cdyn.orientation(cmap)
    if orient == "reversing":
        # cannot happen for a genuine geodesic return map: its square would
        # send some direction to its own antipode at positive time
        diagnostics.append(
            "OrientationReversingAnomaly: return map is orientation "
            "reversing; geodesic return maps cannot be")
    rotation = None
    if orient == "preserving":
        rotation = cdyn.rotation_number(cmap, config.rotation_iters)
    rev_defect = cdyn.reversibility_defect(cmap)
    square = cdyn.compose_square(cmap)
    d_map = cdyn.identity_defect(cmap)
    d_sq = cdyn.identity_defect(square)

    fps = None
    try:
        fps = cdyn.fixed_points(square)
    except cdyn.TooManyFixedPoints:
        fps = None  # square is numerically the identity

    ulams = [cdyn.ulam_density(cmap, config.ulam_bins,
                               config.ulam_samples_per_bin),
             cdyn.ulam_density(cmap, 2 * config.ulam_bins,
                               config.ulam_samples_per_bin)]
    ratio = ulams[1].atomicity / ulams[0].atomicity
    conservativity = cdyn.conservativity_verdict(
        ulams, fps, config.atomicity_bound, config.atomicity_growth_ratio)

    common = dict(
        point=p, loop_fraction=probe.returning_fraction,
        returning_fraction=probe.returning_fraction, T_p=probe.T_p,
        return_time_spread=probe.return_time_spread, orientation=orient,
        rotation=rotation, reversibility_defect=rev_defect,
        identity_defect_map=d_map, identity_defect_square=d_sq,
        fixed_points_square=fps, ulam=ulams, atomicity_ratio=ratio,
        conservativity=conservativity, diagnostics=diagnostics,
        provenance=prov)

    if conservativity == "Dissipative":
        return Verdict(tag=SELF_FOCAL_DISSIPATIVE, **common)

    if conservativity == "Conservative":
        if d_sq <= config.pole_tol:
            closure = verify_pole(surface, p, probe.T_p, config.verify_dirs,
                                  flow)
            common["closure_residual"] = closure.closure_residual
            if closure.closure_residual <= config.closure_tol_rel * surface.scale:
                return Verdict(tag=POLE, **common)
            diagnostics.append(
                f"Inconclusive(verify_pole): closure residual "
                f"{closure.closure_residual:.3e} exceeds tolerance; "
                "conservative return map without smooth closure "
                "contradicts the dichotomy")
            return Verdict(tag=INCONCLUSIVE, **common)
        diagnostics.append(
            f"Inconclusive(dichotomy): conservativity verdict is "
            f"Conservative but identity defect of the squared map is "
            f"{d_sq:.3e} > pole_tol {config.pole_tol:.1e}; numerical "
            "failure, never silently a pole")
        return Verdict(tag=INCONCLUSIVE, **common)

    nearest = POLE if d_sq <= config.pole_tol else SELF_FOCAL_DISSIPATIVE
    diagnostics.append(
        "Inconclusive(conservativity): Ulam/fixed-point analysis is "
        f"undecided (neutral fixed points or borderline atomicity); "
        f"nearest tag by identity defect would be {nearest}")
    return Verdict(tag=INCONCLUSIVE, **common)


@dataclass
class SweepEntry:
    index: int
    point: SurfacePoint
    verdict: Optional[Verdict]
    error: Optional[str] = None


def _sweep_one(args):
    surface, index, point, config = args
    try:
        flow = config.flow_resolved(surface)
        lf = loop_fraction(surface, point, config.prefilter_n, flow.t_max, flow)
        if lf < config.prefilter_threshold:
            verdict = Verdict(
                tag=NOT_SELF_FOCAL, point=surface.best_chart(point),
                loop_fraction=lf, returning_fraction=lf,
                diagnostics=[f"prefilter: loop fraction {lf:.3f} at "
                             f"n={config.prefilter_n}"],
                provenance=_provenance(surface, config, flow))
        else:
            verdict = classify_point(surface, point, config)
        return SweepEntry(index, point, verdict)
    except PoleFinderError as exc:
        return SweepEntry(index, point, None,
                          error=f"{type(exc).__name__}: {exc}")


def sweep(surface: SurfaceSpec, points: Sequence[SurfacePoint],
          config: ClassifyConfig = ClassifyConfig(),
          threads: int = 1) -> List[SweepEntry]:
    """Classify a grid of candidate points, cheap loop-fraction prefilter first.

    Per-point errors are collected into the entries, never raised.  Output
    order always matches the input order.
    """
    jobs = [(surface, i, pt, config) for i, pt in enumerate(points)]
    if threads > 1:
        try:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                entries = list(pool.map(_sweep_one, jobs))
        except Exception:
            entries = [_sweep_one(job) for job in jobs]
    else:
        entries = [_sweep_one(job) for job in jobs]
    return sorted(entries, key=lambda e: e.index)
