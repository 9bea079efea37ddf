"""Config-driven command-line front end.

One run reads a single config file (INI-style sections or JSON), executes a
subcommand (classify, sweep, circlemap, trace, loopfraction), and writes a
self-describing output directory: report.json, config_echo.json, and the
requested CSV dumps.  Exit status: 0 success, 1 configuration error (no
artifacts), 2 numerical failure (diagnostics written).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import circle_dynamics as cdyn
from .circle_dynamics import CircleMap
from .classifier import ClassifyConfig, Verdict, classify_point, sweep
from .errors import ConfigError, PoleFinderError
from .geodesic_flow import FlowConfig, trajectory
from .return_map import loop_fraction
from .surfaces import SurfacePoint, SurfaceSpec, angle_to_covector

TWO_PI = 2.0 * math.pi

_FLOW_KEYS = {f.name for f in dataclasses.fields(FlowConfig)}
_CLASSIFY_KEYS = {f.name for f in dataclasses.fields(ClassifyConfig)} - {"flow"}

_SCHEMA = {
    "surface": {"kind", "radius", "a", "b", "c", "equatorial", "polar",
                "profile", "length", "g11", "g12", "g22",
                "u_min", "u_max", "v_min", "v_max"},
    "point": {"name", "chart", "u", "v"},
    "sweep": {"points"},
    "flow": _FLOW_KEYS,
    "classify": _CLASSIFY_KEYS,
    "circlemap": {"map", "bins", "samples_per_bin", "rotation_iters", "samples"},
    "loopfraction": {"n", "t_max"},
    "trace": {"theta", "t"},
    "output": {"dir", "emit_return_map", "emit_density", "emit_cobweb",
               "cobweb_seed", "cobweb_steps"},
    "run": {"seed", "threads", "command"},
}

_DEFAULTS = {
    "circlemap": {"bins": 256, "samples_per_bin": 32, "rotation_iters": 10_000,
                  "samples": 4096},
    "loopfraction": {"n": 64},
    "trace": {"theta": 0.0, "t": 10.0},
    "output": {"dir": "out", "emit_return_map": True, "emit_density": True,
               "emit_cobweb": True, "cobweb_seed": 0.5, "cobweb_steps": 64},
    "run": {"seed": 0, "threads": 1},
}


def _coerce(text):
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def load_config(path) -> dict:
    """Parse a config file (JSON if it starts with '{', else INI sections)."""
    raw = Path(path).read_text()
    stripped = raw.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object of sections")
        return data
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(raw)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config file: {exc}") from None
    data = {}
    for section in parser.sections():
        data[section] = {k: _coerce(v) for k, v in parser.items(section)}
    return data


def validate_config(data: dict) -> dict:
    """Reject unknown sections/keys; returns the config with defaults filled."""
    out = {}
    for section, values in data.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"section [{section}] must hold key = value pairs")
        allowed = _SCHEMA[section]
        for key in values:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
        out[section] = dict(values)
    for section, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        merged.update(out.get(section, {}))
        out[section] = merged
    return out


def build_surface(cfg: dict) -> SurfaceSpec:
    spec = cfg.get("surface")
    if not spec or "kind" not in spec:
        raise ConfigError("config needs a [surface] section with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "sphere":
            return SurfaceSpec.sphere(float(spec.get("radius", 1.0)))
        if kind == "ellipsoid":
            return SurfaceSpec.ellipsoid(float(spec["a"]), float(spec["b"]),
                                         float(spec["c"]))
        if kind == "spheroid":
            return SurfaceSpec.spheroid(float(spec["equatorial"]),
                                        float(spec["polar"]))
        if kind == "surface_of_revolution":
            return SurfaceSpec.surface_of_revolution(spec["profile"],
                                                     float(spec["length"]))
        if kind == "chart_metric":
            domain = tuple(float(spec[k]) for k in
                           ("u_min", "u_max", "v_min", "v_max"))
            return SurfaceSpec.chart_metric(spec["g11"], spec["g12"],
                                            spec["g22"], domain)
    except KeyError as exc:
        raise ConfigError(f"surface kind {kind!r} is missing key {exc}") from None
    raise ConfigError(f"unknown surface kind {kind!r}")


def _resolve_point(surface: SurfaceSpec, spec) -> SurfacePoint:
    if isinstance(spec, str):
        text = spec.strip()
        if ":" in text and text.count(":") == 2:
            chart, u, v = text.split(":")
            return SurfacePoint(chart.strip(), float(u), float(v))
        return surface.named_point(text)
    if isinstance(spec, dict):
        if "name" in spec and spec["name"]:
            return surface.named_point(spec["name"])
        try:
            return SurfacePoint(spec["chart"], float(spec["u"]),
                                float(spec["v"]))
        except KeyError:
            raise ConfigError(
                "point needs either 'name' or 'chart'+'u'+'v'") from None
    raise ConfigError(f"cannot interpret point spec {spec!r}")


def _sweep_points(surface, cfg) -> list:
    spec = cfg.get("sweep", {}).get("points")
    if spec is None:
        raise ConfigError("sweep needs [sweep] points = ...")
    if isinstance(spec, str):
        items = [s.strip() for chunk in spec.splitlines()
                 for s in chunk.split(",") if s.strip()]
    elif isinstance(spec, list):
        items = spec
    else:
        raise ConfigError("sweep points must be a list or separated string")
    return [_resolve_point(surface, item) for item in items]


def _dataclass_from(section: dict, cls, allowed):
    kwargs = {}
    for key, value in section.items():
        if key in allowed:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__} settings: {exc}") from None


def build_flow(cfg) -> FlowConfig:
    return _dataclass_from(cfg.get("flow", {}), FlowConfig, _FLOW_KEYS)


def build_classify(cfg) -> ClassifyConfig:
    section = dict(cfg.get("classify", {}))
    section["flow"] = build_flow(cfg)
    return _dataclass_from(section, ClassifyConfig, _CLASSIFY_KEYS | {"flow"})


# ---------------------------------------------------------------------------
# Artifact emission


def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(path, header_comment, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        fh.write("# " + ",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) if isinstance(x, (int, float, np.floating))
                              else str(x) for x in row) + "\n")


def emit_plotdata(verdict: Verdict, outdir: Path, output_cfg: dict):
    """Write return_map.csv, density.csv, cobweb.csv for a classify verdict."""
    grid = getattr(verdict, "return_grid", None)
    if output_cfg.get("emit_return_map") and grid is not None:
        _write_csv(outdir / "return_map.csv",
                   "first-return circle map samples",
                   ["theta_in", "theta_out", "t_first", "miss_distance"],
                   zip(grid.theta_in, grid.theta_out, grid.t_used, grid.miss))
    if output_cfg.get("emit_density") and verdict.ulam:
        dens = verdict.ulam[0]
        centers = (np.arange(dens.bins) + 0.5) * TWO_PI / dens.bins
        _write_csv(outdir / "density.csv",
                   f"Ulam invariant density, {dens.bins} bins",
                   ["bin_center", "mass"], zip(centers, dens.mass))
    if output_cfg.get("emit_cobweb") and grid is not None:
        cmap = grid.to_circle_map()
        x = float(output_cfg.get("cobweb_seed", 0.5))
        steps = int(output_cfg.get("cobweb_steps", 64))
        pts = [(x, x)]
        for _ in range(steps):
            fx = float(cmap(x))
            pts.append((x, fx))
            pts.append((fx, fx))
            x = fx
        _write_csv(outdir / "cobweb.csv",
                   "cobweb polyline of the return map (x, y segments)",
                   ["x", "y"], pts)


def _emit_density_csv(outdir, dens):
    centers = (np.arange(dens.bins) + 0.5) * TWO_PI / dens.bins
    _write_csv(outdir / "density.csv",
               f"Ulam invariant density, {dens.bins} bins",
               ["bin_center", "mass"], zip(centers, dens.mass))


# ---------------------------------------------------------------------------
# Commands.  Each prepare_* validates config and returns a zero-argument
# executor, so every ConfigError fires before any artifact is written.


class _ScaleProbe:
    """Stand-in surface for validating flow configs before construction."""

    scale = 1.0


def _prepare_classify(surface, cfg):
    config = build_classify(cfg)
    config.flow.resolved(surface)
    point = _resolve_point(surface, cfg.get("point", {"name": None}))

    def execute(outdir, threads):
        verdict = classify_point(surface, point, config)
        report = verdict.to_dict()
        (outdir / "report.json").write_text(json.dumps(report, indent=2))
        emit_plotdata(verdict, outdir, cfg["output"])
        return report

    return execute


def _prepare_sweep(surface, cfg):
    config = build_classify(cfg)
    config.flow.resolved(surface)
    points = _sweep_points(surface, cfg)

    def execute(outdir, threads):
        entries = sweep(surface, points, config, threads=threads)
        report = {"entries": [
            {"index": e.index,
             "point": {"chart": e.point.chart, "u": e.point.u, "v": e.point.v},
             "verdict": e.verdict.to_dict() if e.verdict else None,
             "error": e.error}
            for e in entries]}
        report["tags"] = [e.verdict.tag if e.verdict else "error"
                          for e in entries]
        (outdir / "report.json").write_text(json.dumps(report, indent=2))
        return report

    return execute


def _prepare_circlemap(surface, cfg):
    section = cfg.get("circlemap", _DEFAULTS["circlemap"])
    if not section.get("map"):
        raise ConfigError("circlemap needs [circlemap] map = <expression in x>")
    bins = int(section["bins"])
    spb = int(section["samples_per_bin"])
    n_iter = int(section["rotation_iters"])
    if bins < 64 or spb < 1 or n_iter < 1:
        raise ConfigError("circlemap needs bins >= 64, samples_per_bin >= 1, "
                          "rotation_iters >= 1")
    cmap = CircleMap.from_expression(section["map"],
                                     samples=int(section["samples"]))

    def execute(outdir, threads):
        rotation = None
        if cmap.degree == 1:
            rotation = cdyn.rotation_number(cmap, n_iter)
        rev = cdyn.reversibility_defect(cmap)
        fps_repr = []
        try:
            for fp in cdyn.fixed_points(cmap):
                fps_repr.append({"theta": fp.theta, "multiplier": fp.multiplier,
                                 "stability": fp.stability})
        except (cdyn.TooManyFixedPoints, cdyn.OrientationReversing) as exc:
            fps_repr = str(exc)
        densities = [cdyn.ulam_density(cmap, bins, spb),
                     cdyn.ulam_density(cmap, 2 * bins, spb)]
        square = cdyn.compose_square(cmap)
        try:
            fps_sq = cdyn.fixed_points(square)
        except cdyn.TooManyFixedPoints:
            fps_sq = None
        verdict = cdyn.conservativity_verdict(densities, fps_sq)
        report = {
            "map": section["map"],
            "degree": cmap.degree,
            "rotation": None if rotation is None else {
                "value": rotation.value, "lower": rotation.lower,
                "upper": rotation.upper},
            "fixed_points": fps_repr,
            "reversibility_defect": rev,
            "ulam": {"M": densities[0].bins,
                     "atomicity": densities[0].atomicity,
                     "l1_to_uniform": densities[0].l1_distance_to_uniform,
                     "atomicity_2M": densities[1].atomicity},
            "verdict": verdict,
        }
        (outdir / "report.json").write_text(json.dumps(report, indent=2))
        if cfg["output"].get("emit_density"):
            _emit_density_csv(outdir, densities[0])
        return report

    return execute


def _prepare_trace(surface, cfg):
    flow = build_flow(cfg)
    flow.resolved(surface)
    section = cfg.get("trace", _DEFAULTS["trace"])
    point = surface.best_chart(
        _resolve_point(surface, cfg.get("point", {"name": None})))
    theta = float(section["theta"])
    t_end = float(section["t"])
    if t_end <= 0:
        raise ConfigError("trace needs t > 0")

    def execute(outdir, threads):
        start = angle_to_covector(surface, point, theta)
        rows = trajectory(surface, start, t_end, flow)
        _write_csv(outdir / "trajectory.csv", "geodesic trajectory samples",
                   ["t", "chart", "u", "v", "pu", "pv", "H"], rows)
        h_values = [row[6] for row in rows]
        report = {"samples": len(rows), "t_end": rows[-1][0],
                  "H_drift_max": max(abs(h - 1.0) for h in h_values)}
        (outdir / "report.json").write_text(json.dumps(report, indent=2))
        return report

    return execute


def _prepare_loopfraction(surface, cfg):
    flow = build_flow(cfg)
    flow.resolved(surface)
    section = cfg.get("loopfraction", _DEFAULTS["loopfraction"])
    point = _resolve_point(surface, cfg.get("point", {"name": None}))
    n = int(section["n"])
    if n < 16:
        raise ConfigError("loopfraction needs n >= 16")
    t_max = section.get("t_max")
    if t_max is None:
        t_max = (flow.t_max if flow.t_max is not None
                 else 3.0 * TWO_PI * surface.scale)
    t_max = float(t_max)
    if t_max <= 0:
        raise ConfigError("loopfraction needs t_max > 0")

    def execute(outdir, threads):
        frac = loop_fraction(surface, point, n, t_max, flow)
        report = {"n": n, "t_max": t_max, "loop_fraction": frac}
        (outdir / "report.json").write_text(json.dumps(report, indent=2))
        return report

    return execute


_COMMANDS = {
    "classify": _prepare_classify,
    "sweep": _prepare_sweep,
    "circlemap": _prepare_circlemap,
    "trace": _prepare_trace,
    "loopfraction": _prepare_loopfraction,
}


def run(config: dict, command: str, outdir, threads=1) -> int:
    """Execute a validated config; writes artifacts into outdir.

    Raises :class:`ConfigError` (before any artifact exists) on bad
    configuration; numerical failures are serialized into report.json and
    yield exit status 2.
    """
    outdir = Path(outdir)
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    needs_surface = command != "circlemap" or bool(config.get("surface"))
    surface = build_surface(config) if needs_surface else None
    executor = _COMMANDS[command](surface, config)
    outdir.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in config.items()}
    echo["run"] = dict(config.get("run", {}), command=command, threads=threads)
    (outdir / "config_echo.json").write_text(json.dumps(echo, indent=2))
    try:
        executor(outdir, threads)
    except PoleFinderError as exc:
        (outdir / "report.json").write_text(json.dumps(
            {"error": f"{type(exc).__name__}: {exc}"}, indent=2))
        print(f"polefinder {command}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="polefinder",
        description="Classify points of analytic surfaces through the "
                    "dynamics of their geodesic first-return maps.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("classify", "classify one point (pole / dissipative / not self-focal)"),
            ("sweep", "classify a list of candidate points"),
            ("circlemap", "analyze a closed-form circle map"),
            ("trace", "dump one geodesic trajectory as CSV"),
            ("loopfraction", "estimate the returning-direction fraction")]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="config file (INI or JSON)")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--threads", type=int, default=None)
        cmd.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        config = validate_config(load_config(args.config))
        if args.seed is not None:
            config["run"]["seed"] = args.seed
        if args.threads is not None:
            config["run"]["threads"] = args.threads
        threads = int(config["run"]["threads"])
        outdir = args.out if args.out is not None else config["output"]["dir"]
        return run(config, args.command, outdir, threads=threads)
    except (ConfigError, OSError) as exc:
        print(f"polefinder: configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
