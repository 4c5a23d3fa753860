"""Command line entry point.

    sodlio sim   --scenario corridor_sharp_turns --seed 0 --out-dir data/
    sodlio run   --points data/points.csv --imu data/imu.csv --config data/rig.yaml --out-dir out/
    sodlio eval  --trajectory out/trajectory.txt --gt data/groundtruth.txt
    sodlio sweep --points data/points.csv --gt data/groundtruth.txt --voxel-sizes 0.1,0.2,0.3,0.4

Exit status is 0 on success, 1 for bad input and 2 when a run is aborted
after too many consecutive degraded updates.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from . import io
from .config import ConfigError, load_config
from .pipeline import DegradationAbort, GroundTruth, PipelineError, evaluate, run, sod_sweep, write_results, write_sweep

EXIT_OK, EXIT_INPUT, EXIT_DEGRADED = 0, 1, 2

log = logging.getLogger("sodlio")


def _sizes(text: str) -> list[float]:
    try:
        sizes = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from None
    if len(sizes) < 2 or min(sizes) <= 0:
        raise argparse.ArgumentTypeError("need at least two positive voxel sizes")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sodlio", description="LiDAR-inertial odometry with an overlap-driven sliding window.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("sim", help="generate a synthetic dataset")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=None, help="truncate after this many seconds")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("run", help="run the odometry on a dataset")
    p.add_argument("--config")
    p.add_argument("--points", required=True)
    p.add_argument("--imu", required=True)
    p.add_argument("--gt", help="ground-truth TUM trajectory, enables error metrics")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=["adaptive", "fixed"])
    p.add_argument("--init-moving", action="store_true", help="start from the ground-truth state")
    p.add_argument("--export-map", action="store_true", help="also write map.xyz")
    p.add_argument("--timing", action="store_true", help="record wall-clock time in updates.csv")

    p = sub.add_parser("eval", help="compare a trajectory with ground truth")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out-dir", help="write metrics.json here")

    p = sub.add_parser("sweep", help="overlap series for several voxel sizes along a trajectory")
    p.add_argument("--config")
    p.add_argument("--points", required=True)
    p.add_argument("--gt", required=True, help="trajectory used to place the points")
    p.add_argument("--voxel-sizes", type=_sizes, default=[0.1, 0.2, 0.3, 0.4])
    p.add_argument("--out-dir", required=True)
    return ap


def _sim(args) -> int:
    from .sim import scenario, simulate, write_dataset

    try:
        sc = scenario(args.scenario, args.seed)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    ds = simulate(sc, None if args.duration is None else sc.traj.t0 + args.duration)
    paths = write_dataset(ds, args.out_dir)
    info = {"scenario": sc.name, "seed": sc.seed, "path_length": sc.path_length,
            "turns": [list(w) for w in sc.turns],
            "occlusion": None if sc.occlusion is None else list(sc.occlusion),
            "points": int(len(ds.point_t)), "imu_samples": len(ds.imu)}
    (io.ensure_dir(args.out_dir) / "scenario.json").write_text(json.dumps(info, indent=2) + "\n")
    for k, v in paths.items():
        print(f"{k}: {v}")
    return EXIT_OK


def _run(args) -> int:
    cfg = load_config(args.config)
    over = {}
    if args.mode:
        over["run.mode"] = args.mode
    if args.init_moving:
        over["init.moving"] = True
    if args.timing:
        over["run.record_timing"] = True
    cfg = cfg.replace(**over)
    try:
        result = run(cfg, args.points, args.imu, args.gt)
    except DegradationAbort as exc:
        write_results(exc.result, args.out_dir, cfg, args.export_map)
        log.error("aborted: %s", exc)
        return EXIT_DEGRADED
    write_results(result, args.out_dir, cfg, args.export_map)
    print(json.dumps(asdict(result.metrics), indent=2))
    return EXIT_OK


def _eval(args) -> int:
    t, p, _ = io.read_tum(args.trajectory)
    gt = GroundTruth.from_tum(args.gt)
    try:
        ev = evaluate(t, p, gt.t, gt.pos)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    text = json.dumps(ev, indent=2) + "\n"
    if args.out_dir:
        (io.ensure_dir(args.out_dir) / "metrics.json").write_text(text)
    print(text, end="")
    return EXIT_OK


def _sweep(args) -> int:
    cfg = load_config(args.config)
    pt, pp = io.read_points(args.points)
    gt = GroundTruth.from_tum(args.gt)
    try:
        times, series = sod_sweep(cfg, pt, pp, gt, args.voxel_sizes)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    for path in write_sweep(args.out_dir, times, series):
        print(path)
    return EXIT_OK


VERBS = {"sim": _sim, "run": _run, "eval": _eval, "sweep": _sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return VERBS[args.verb](args)
    except (ConfigError, io.DatasetError, PipelineError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
