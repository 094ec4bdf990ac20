"""Command-line interface: scene conversion, single runs, batch experiments.

Subcommands:
    convert   PLY -> versioned scene dump, with preprocessing stats
    run       one trajectory: CSV record, JSON summary, SVG plot
    batch     n trajectories per filter: metrics CSVs, comparison JSON, SVG

Exit codes: 0 = ran to a defined outcome (infeasible/collided are outcomes,
not failures), 1 = config error, 2 = I/O or parse error, 3 = solver failure.

Config files are flat INI ([scene]/[run]/[batch] sections, key = value);
command-line flags override file values. Scene sources are a .ply path, a
.npz scene dump, or a synthetic spec like
    synth:ring,count=2400,pillar_count=10,scale_lo=0.08,scale_hi=0.2
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from .qp import SolverError
from .scene import PreprocessOptions, Scene, SceneError
from .sceneio import load_ply, load_scene_dump, save_scene_dump
from .simulator import (
    SimConfig,
    SimulationError,
    batch_start_goal,
    compute_metrics,
    run_batch,
    run_trajectory,
    summary_dict,
    write_json,
    write_record_csv,
)
from .svgplot import write_metric_boxes_svg, write_trajectory_svg
from .synthetic import SyntheticSpec, make_synthetic_scene


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # config errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


class ConfigError(ValueError):
    pass


_SYNTH_KEYS = {
    "count": int, "pillar_count": int,
    "extent": float, "ring_radius": float, "pillar_radius": float, "height": float,
    "scale_lo": float, "scale_hi": float, "anis_lo": float, "anis_hi": float,
    "opacity_lo": float, "opacity_hi": float,
}


def parse_synth_spec(text: str) -> SyntheticSpec:
    body = text[len("synth:"):]
    parts = [p for p in body.split(",") if p]
    if not parts:
        raise ConfigError("synthetic spec needs a pattern, e.g. synth:ring")
    pattern = parts[0]
    kwargs: dict = {"pattern": pattern}
    pairs: dict[str, float] = {}
    for item in parts[1:]:
        if "=" not in item:
            raise ConfigError(f"bad synthetic spec item {item!r} (expected key=value)")
        key, val = item.split("=", 1)
        if key not in _SYNTH_KEYS:
            raise ConfigError(f"unknown synthetic spec key {key!r}")
        pairs[key] = _SYNTH_KEYS[key](val)
    for name in ("count", "pillar_count", "extent", "ring_radius", "pillar_radius", "height"):
        if name in pairs:
            kwargs[name] = pairs[name]
    for field, lo, hi in (("scale_range", "scale_lo", "scale_hi"),
                          ("anisotropy_range", "anis_lo", "anis_hi"),
                          ("opacity_range", "opacity_lo", "opacity_hi")):
        default = getattr(SyntheticSpec, field)
        if lo in pairs or hi in pairs:
            kwargs[field] = (pairs.get(lo, default[0]), pairs.get(hi, default[1]))
    return SyntheticSpec(**kwargs)


def load_scene_source(source: str, seed: int, opts: PreprocessOptions | None = None,
                      confidence: float | None = None) -> Scene:
    if source.startswith("synth:"):
        o = opts or PreprocessOptions(confidence=confidence)
        return make_synthetic_scene(parse_synth_spec(source), seed, o)
    path = Path(source)
    if not path.exists():
        raise SceneError(f"scene source not found: {source}")
    if path.suffix == ".npz":
        return load_scene_dump(path, confidence=confidence)
    return load_ply(path, opts or PreprocessOptions(confidence=confidence))


def _read_config_file(path: str | None) -> dict:
    if not path:
        return {}
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    flat: dict[str, str] = {}
    for section in cp.sections():
        for key, val in cp.items(section):
            flat[key.replace("-", "_")] = val
    return flat


def _merged(args: argparse.Namespace, file_cfg: dict, key: str, cast, default):
    cli_val = getattr(args, key, None)
    if cli_val is not None:
        return cli_val
    if key in file_cfg:
        return cast(file_cfg[key])
    return default


def _build_sim_config(args, file_cfg) -> SimConfig:
    def g(key, cast, default):
        return _merged(args, file_cfg, key, cast, default)

    v_max = g("v_max", float, 2.5)
    if v_max is not None and v_max <= 0:
        v_max = None
    return SimConfig(
        filter=g("filter", str, "cone"),
        dt=g("dt", float, 0.02),
        kp=g("kp", float, 1.0),
        kd=g("kd", float, 2.0),
        a_max=g("a_max", float, 10.0),
        v_max=v_max,
        timeout=g("timeout", float, 60.0),
        goal_tol_p=g("goal_tol_p", float, 0.05),
        goal_tol_v=g("goal_tol_v", float, 0.1),
        p_k=g("pk", float, 1.0),
        activation_radius=g("activation_radius", float, 5.0),
        confidence=g("confidence", float, None),
        rho=g("rho", float, 0.0),
        inflation_mode=g("inflation_mode", str, "conservative"),
        slack_weight=g("slack_weight", float, None),
        inside_policy=g("inside_policy", str, "hard"),
        start_radius=g("start_radius", float, None),
        start_height=g("start_height", float, None),
    )


def _parse_vec3(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"expected x,y,z triple, got {text!r}")
    return np.array([float(p) for p in parts])


def cmd_convert(args) -> int:
    opts = PreprocessOptions(
        opacity_min=args.opacity_min if args.opacity_min is not None else 0.1,
        scale_min=args.scale_clamp[0] if args.scale_clamp else None,
        scale_max=args.scale_clamp[1] if args.scale_clamp else None,
    )
    scene = load_ply(args.in_path, opts)
    save_scene_dump(args.out, scene)
    max_eig = float((1.0 / scene.s_min**2).max())
    print(f"splats: {len(scene)}")
    print(f"scale min/median/max: {scene.scales.min():.6g} / "
          f"{np.median(scene.scales):.6g} / {scene.scales.max():.6g}")
    print(f"max inverse-covariance eigenvalue: {max_eig:.6g}")
    print(f"confidence c^2: {scene.confidence:.6g}")
    print(f"wrote {args.out}")
    return 0


def cmd_run(args) -> int:
    file_cfg = _read_config_file(args.config)
    cfg = _build_sim_config(args, file_cfg)
    seed = _merged(args, file_cfg, "seed", int, 0)
    source = _merged(args, file_cfg, "scene", str, None)
    if source is None:
        raise ConfigError("a scene source is required (--scene or config file)")
    scene = load_scene_source(source, seed, confidence=cfg.confidence)
    out_dir = Path(_merged(args, file_cfg, "out", str, "runs"))
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.start is not None and args.goal is not None:
        start, goal = _parse_vec3(args.start), _parse_vec3(args.goal)
    else:
        start, goal = batch_start_goal(scene, 0, 1, cfg, cfg.rho)

    t0 = time.perf_counter()
    record = run_trajectory(scene, start, goal, cfg)
    wall = time.perf_counter() - t0
    try:
        metrics = compute_metrics(record)
    except SimulationError:
        metrics = None

    config_echo = dataclasses.asdict(cfg)
    config_echo.update({"scene": source, "seed": seed})
    summary = summary_dict(record, metrics, config_echo, seed)
    summary["timing"]["wall_clock_s"] = wall
    write_record_csv(out_dir / "record.csv", record)
    write_json(out_dir / "summary.json", summary)
    write_trajectory_svg(out_dir / "trajectory.svg", scene, record, axes=tuple(args.axes))
    print(f"outcome: {record.outcome}  samples: {len(record)}  "
          f"audit margin: {record.audit_min_margin:.6g}")
    print(f"artifacts in {out_dir}")
    return 0


def cmd_batch(args) -> int:
    file_cfg = _read_config_file(args.config)
    seed = _merged(args, file_cfg, "seed", int, 0)
    n = _merged(args, file_cfg, "n", int, 50)
    source = _merged(args, file_cfg, "scene", str, None)
    if source is None:
        raise ConfigError("a scene source is required (--scene or config file)")
    filters = _merged(args, file_cfg, "filters", str, "cone,distance_baseline")
    filter_list = [f.strip() for f in filters.split(",") if f.strip()]
    out_dir = Path(_merged(args, file_cfg, "out", str, "batch_out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    base_cfg = _build_sim_config(args, file_cfg)
    scene = load_scene_source(source, seed, confidence=base_cfg.confidence)

    per_filter: dict[str, dict] = {}
    timing: dict[str, dict] = {}
    for name in filter_list:
        cfg = dataclasses.replace(base_cfg, filter=name)
        result = run_batch(scene, n, cfg, seed)
        agg = dict(result.aggregate)
        timing[name] = agg.pop("timing")
        per_filter[name] = agg
        _write_batch_csv(out_dir / f"metrics_{name}.csv", result)
        print(f"{name}: success {agg['success_rate']:.0%}  outcomes {agg['outcomes']}")

    comparison = {
        "config": {**dataclasses.asdict(base_cfg), "scene": source, "n": n, "seed": seed,
                   "filters": filter_list},
        "filters": per_filter,
        "timing": timing,
    }
    if "cone" in timing and "distance_baseline" in timing:
        cone_med = timing["cone"]["step_time"]["median"]
        base_med = timing["distance_baseline"]["step_time"]["median"]
        if cone_med and base_med:
            comparison["timing"]["planning_time_ratio_baseline_over_cone"] = base_med / cone_med
    write_json(out_dir / "comparison.json", comparison)
    box_input = {name: {"metrics": per_filter[name]["metrics"]} for name in filter_list}
    write_metric_boxes_svg(out_dir / "batch_metrics.svg", box_input)
    print(f"artifacts in {out_dir}")
    return 0


def _write_batch_csv(path, result) -> None:
    from .sceneio import _atomic_write_text

    lines = ["idx,outcome,nj,rms_j,isj,path_length,duration,interventions,audit_min_margin"]
    for i, (rec, met) in enumerate(result.runs):
        if met is None:
            vals = ["", "", "", "", ""]
        else:
            vals = [format(x, ".17g") for x in
                    (met.nj, met.rms_j, met.isj, met.path_length, met.duration)]
        lines.append(",".join([str(i), rec.outcome, *vals, str(rec.interventions),
                               format(rec.audit_min_margin, ".17g")]))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _add_common_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--scene", help="scene source: .ply, .npz, or synth:<pattern>,k=v,...")
    p.add_argument("--filter", choices=["cone", "distance_baseline", "off"])
    p.add_argument("--pk", type=float, dest="pk", help="barrier decay gain p_k")
    p.add_argument("--rho", type=float, help="robot sphere radius")
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--a-max", type=float, dest="a_max")
    p.add_argument("--v-max", type=float, dest="v_max", help="<= 0 disables the bound")
    p.add_argument("--kp", type=float)
    p.add_argument("--kd", type=float)
    p.add_argument("--activation-radius", type=float, dest="activation_radius")
    p.add_argument("--confidence", type=float, help="override c^2")
    p.add_argument("--inflation-mode", choices=["conservative", "exact"], dest="inflation_mode")
    p.add_argument("--slack-weight", type=float, dest="slack_weight")
    p.add_argument("--timeout", type=float)
    p.add_argument("--start-radius", type=float, dest="start_radius")
    p.add_argument("--start-height", type=float, dest="start_height")


def build_parser() -> _Parser:
    parser = _Parser(prog="splatcone",
                     description="Collision-cone safety filter over splat scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("convert", help="PLY -> scene dump")
    pc.add_argument("--in", dest="in_path", required=True)
    pc.add_argument("--out", required=True)
    pc.add_argument("--opacity-min", type=float, dest="opacity_min")
    pc.add_argument("--scale-clamp", dest="scale_clamp", type=lambda s: tuple(map(float, s.split(","))),
                    help="min,max scale clamp")
    pc.set_defaults(func=cmd_convert)

    pr = sub.add_parser("run", help="simulate one trajectory")
    _add_common_run_flags(pr)
    pr.add_argument("--start", help="x,y,z (defaults to auto placement)")
    pr.add_argument("--goal", help="x,y,z")
    pr.add_argument("--axes", type=lambda s: [int(a) for a in s.split(",")],
                    default=[0, 1], help="projection axis pair for the SVG (default 0,1)")
    pr.set_defaults(func=cmd_run)

    pb = sub.add_parser("batch", help="batch experiment over filters")
    _add_common_run_flags(pb)
    pb.add_argument("--n", type=int, help="number of trajectories (default 50)")
    pb.add_argument("--filters", help="comma list (default cone,distance_baseline)")
    pb.set_defaults(func=cmd_batch)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, SimulationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (SceneError, OSError) as e:
        print(f"I/O or parse error: {e}", file=sys.stderr)
        return 2
    except SolverError as e:
        print(f"solver failure: {e} residuals={e.residuals}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
