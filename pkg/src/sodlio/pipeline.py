"""Odometry loop: window step, propagation, deskew, iterated update, overlap
scoring and map merging, plus trajectory evaluation and the voxel-size sweep.

Per update the order is fixed: the overlap degree of the new points is taken
against the occupancy map before those points are merged into either map.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .config import PipelineConfig
from .eskf import iterated_update
from .geometry import NavState, Rotation
from .imu import ImuGapError, ImuSample, PoseLog, deskew, propagate_span, static_init
from .overlap import OccupancyVoxelMap, pack, voxel_keys
from .regmap import RegistrationMap
from .window import StepPlan, StreamBuffer, WindowController, compute_step, extract_frame, history_weight

log = logging.getLogger(__name__)

ASSOC_TOL = 0.005
Hook = Callable[[str, float, dict], None]


class PipelineError(RuntimeError):
    """Unrecoverable input problem at stream time ``t``."""

    def __init__(self, msg: str, t: float | None = None):
        super().__init__(msg if t is None else f"{msg} (t={t:.6f})")
        self.t = t


class DegradationAbort(RuntimeError):
    def __init__(self, t: float, count: int, result: "RunResult"):
        super().__init__(f"{count} consecutive degraded updates ending at t={t:.6f}")
        self.t = t
        self.result = result


@dataclass
class UpdateRecord:
    t: float
    position: np.ndarray
    quat: np.ndarray  # w x y z
    overlap: float
    seg_time: int
    shift_time: float
    echo_time: int
    iterations: int
    valid_points: int
    degraded: bool
    wall_s: float


@dataclass
class RunMetrics:
    updates: int = 0
    degraded_updates: int = 0
    mean_rate_hz: float = 0.0
    max_rate_hz: float = 0.0
    min_rate_hz: float = 0.0
    mean_update_s: float = 0.0
    max_update_s: float = 0.0
    end_to_end_error: float | None = None
    ate_rms: float | None = None
    path_length: float | None = None


@dataclass
class RunResult:
    records: list
    metrics: RunMetrics
    rmap: RegistrationMap
    omap: OccupancyVoxelMap
    aborted: bool = False

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def positions(self) -> np.ndarray:
        return np.array([r.position for r in self.records]).reshape(-1, 3)

    def quats(self) -> np.ndarray:
        return np.array([r.quat for r in self.records]).reshape(-1, 4)


@dataclass
class GroundTruth:
    t: np.ndarray
    pos: np.ndarray
    quat: np.ndarray  # w x y z

    @classmethod
    def from_tum(cls, path) -> "GroundTruth":
        return cls(*io.read_tum(path))

    def pose_log(self) -> PoseLog:
        return PoseLog(self.t, [NavState(Rotation(q), p) for q, p in zip(self.quat, self.pos)])

    def state_at(self, t: float) -> NavState:
        """Interpolated pose with a finite-difference velocity."""
        if not self.t[0] <= t <= self.t[-1]:
            raise PipelineError("ground truth does not cover the start time", t)
        plog = self.pose_log()
        R, p = plog.interpolate(np.array([t]))
        h = min(0.01, max(self.t[1] - self.t[0], 1e-3))
        ta, tb = max(t - h, self.t[0]), min(t + h, self.t[-1])
        _, pab = plog.interpolate(np.array([ta, tb]))
        vel = (pab[1] - pab[0]) / (tb - ta)
        return NavState(Rotation.from_matrix(R[0]), p[0], vel)


def initial_covariance(cfg: PipelineConfig) -> np.ndarray:
    c = cfg.init
    var = np.repeat([c.rot_var, c.pos_var, c.vel_var, c.gyro_bias_var, c.acc_bias_var, c.grav_var], 3)
    return np.diag(var)


def initial_state(cfg: PipelineConfig, imu: list[ImuSample], t0: float,
                  gt: GroundTruth | None = None) -> NavState:
    if cfg.init.moving:
        if gt is None:
            raise PipelineError("a moving start needs ground truth for the initial state", t0)
        return gt.state_at(t0)
    rot = Rotation(np.asarray(cfg.init.rotation, dtype=float))
    bg, grav = static_init(imu, t0, cfg.init.static_duration, rot)
    return NavState(rot, np.asarray(cfg.init.position, dtype=float), np.zeros(3), bg, np.zeros(3), grav)


def select_update_points(latest: np.ndarray, hist: np.ndarray, hist_w: np.ndarray,
                         voxel: float, max_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Voxel filter (latest points win shared voxels) then an even stride cap."""
    pts = np.concatenate([latest, hist])
    w = np.concatenate([np.ones(len(latest)), hist_w])
    if not len(pts):
        return pts, w
    if voxel > 0:
        _, first = np.unique(pack(voxel_keys(pts, voxel)), return_index=True)
        keep = np.sort(first)
    else:
        keep = np.arange(len(pts))
    if len(keep) > max_points:
        keep = keep[np.linspace(0, len(keep) - 1, max_points).round().astype(int)]
    return pts[keep], w[keep]


def _noop(event: str, t: float, data: dict) -> None:
    pass


def run_arrays(cfg: PipelineConfig, point_t, points, imu: list[ImuSample],
               gt: GroundTruth | None = None, hook: Hook | None = None) -> RunResult:
    """Process a whole recording held in memory.

    ``hook(event, t, data)`` is called with events ``propagate``, ``update``,
    ``overlap`` and ``merge`` in that order for every update.
    """
    hook = hook or _noop
    point_t = np.asarray(point_t, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not len(point_t):
        raise PipelineError("point stream is empty")
    if not imu:
        raise PipelineError("IMU stream is empty")
    imu_t = np.array([s.t for s in imu])
    wcfg = cfg.window
    fl = wcfg.frame_length
    ext = cfg.extrinsic.pose()
    adaptive = cfg.run.mode == "adaptive"
    t0 = max(float(point_t[0]), float(imu_t[0]))
    t_stop = min(float(point_t[-1]), float(imu_t[-1]))
    if t_stop < t0 + fl:
        raise PipelineError("streams overlap for less than one frame", t0)

    ocfg = cfg.overlap
    omap = OccupancyVoxelMap(ocfg.voxel_size, ocfg.d, ocfg.betas, ocfg.metric)
    rmap = RegistrationMap(cfg.regmap.voxel_size, cfg.regmap.max_points_per_voxel,
                           cfg.regmap.point_spacing)
    stream = StreamBuffer(point_t, points)
    committed = StreamBuffer()

    try:
        x = initial_state(cfg, imu, t0, gt)
        P = initial_covariance(cfg)
        end = t0 + fl
        x, P, plog = propagate_span(x, P, imu, t0, end, cfg.imu, imu_t)
    except ImuGapError as exc:
        raise PipelineError(str(exc), t0) from None
    bt, bp = stream.select(np.nextafter(t0, -np.inf), end)
    boot = deskew(bt, bp, plog, ext).points
    omap.insert_frame(boot)
    rmap.merge_frame(boot)
    committed.push(bt, boot)
    prev_end = end

    controller = WindowController(wcfg, 1.0)
    fixed_plan = compute_step(1.0, wcfg)
    overlap = 1.0
    records: list[UpdateRecord] = []
    streak = 0
    n_updates = 0
    while True:
        plan: StepPlan = controller.plan if adaptive else fixed_plan
        end = prev_end + plan.shift_time
        if end > t_stop:
            break
        tic = time.perf_counter()
        frame = extract_frame(stream, plan, prev_end, wcfg)
        try:
            x_prior, P_prior, plog = propagate_span(x, P, imu, prev_end, end, cfg.imu, imu_t)
        except ImuGapError as exc:
            raise PipelineError(str(exc), end) from None
        hook("propagate", end, {"state": x_prior, "cov": P_prior})

        des = deskew(frame.latest_t, frame.latest, plog, ext)
        lt = frame.latest_t[des.valid]
        Rt = x_prior.rot.matrix
        body_latest = (des.points[des.valid] - x_prior.pos) @ Rt
        ht, hw = committed.select(prev_end - (fl - plan.shift_time), prev_end)
        body_hist = (hw - x_prior.pos) @ Rt
        weights = history_weight(end - ht, fl, wcfg.history_weight_factor)
        sel, sel_w = select_update_points(body_latest, body_hist, weights,
                                          cfg.regmap.downsample_voxel, cfg.eskf.max_points)
        x_post, P_post, report = iterated_update(x_prior, P_prior, sel, sel_w, rmap, cfg.eskf)
        hook("update", end, {"prior": x_prior, "cov_prior": P_prior, "state": x_post,
                             "cov": P_post, "report": report})

        world = body_latest @ x_post.rot.matrix.T + x_post.pos
        if len(world):
            overlap = omap.score(world).value
        else:
            log.warning("no new points in (%.6f, %.6f]; overlap carried over", prev_end, end)
        hook("overlap", end, {"overlap": overlap, "points": len(world)})

        omap.insert_frame(world)
        rmap.merge_frame(world)
        committed.push(lt, world)
        hook("merge", end, {"points": len(world)})
        if ocfg.crop_radius is not None and n_updates % 10 == 0:
            omap.crop(x_post.pos, ocfg.crop_radius)

        wall = time.perf_counter() - tic
        records.append(UpdateRecord(end, x_post.pos.copy(), x_post.rot.q.copy(), overlap,
                                    plan.seg_time, plan.shift_time, plan.echo_time,
                                    report.iterations, report.valid_points, report.degraded, wall))
        if adaptive:
            controller.on_update(overlap)
        stream.evict(end, fl)
        committed.evict(end, fl)
        x, P, prev_end = x_post, P_post, end
        n_updates += 1
        streak = streak + 1 if report.degraded else 0
        if streak > cfg.run.max_degraded:
            result = RunResult(records, summarize(records), rmap, omap, aborted=True)
            raise DegradationAbort(end, streak, result)

    if not records:
        raise PipelineError("no complete update window in the recording", t0)
    result = RunResult(records, summarize(records), rmap, omap)
    if gt is not None:
        ev = evaluate(result.times(), result.positions(), gt.t, gt.pos)
        result.metrics.end_to_end_error = ev["end_to_end_error"]
        result.metrics.ate_rms = ev["ate_rms"]
        result.metrics.path_length = float(np.sum(np.linalg.norm(np.diff(gt.pos, axis=0), axis=1)))
    return result


def summarize(records: list[UpdateRecord]) -> RunMetrics:
    if not records:
        return RunMetrics()
    rate = 1.0 / np.array([r.shift_time for r in records])
    wall = np.array([r.wall_s for r in records])
    return RunMetrics(
        updates=len(records),
        degraded_updates=int(sum(r.degraded for r in records)),
        mean_rate_hz=float(rate.mean()),
        max_rate_hz=float(rate.max()),
        min_rate_hz=float(rate.min()),
        mean_update_s=float(wall.mean()),
        max_update_s=float(wall.max()),
    )


def associate(est_t, gt_t, tol: float = ASSOC_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (est, gt) matching each estimate to its nearest ground-truth stamp."""
    est_t = np.asarray(est_t, dtype=float)
    gt_t = np.asarray(gt_t, dtype=float)
    j = np.clip(np.searchsorted(gt_t, est_t), 1, len(gt_t) - 1) if len(gt_t) > 1 else np.zeros(len(est_t), int)
    if len(gt_t) > 1:
        left = np.abs(est_t - gt_t[j - 1]) <= np.abs(gt_t[j] - est_t)
        j = np.where(left, j - 1, j)
    ok = np.abs(gt_t[j] - est_t) <= tol
    return np.flatnonzero(ok), j[ok]


def evaluate(est_t, est_pos, gt_t, gt_pos, tol: float = ASSOC_TOL) -> dict:
    """End-to-end error and unaligned ATE rms over associated pairs."""
    est_pos = np.asarray(est_pos, dtype=float).reshape(-1, 3)
    gt_pos = np.asarray(gt_pos, dtype=float).reshape(-1, 3)
    if not len(est_pos) or not len(gt_pos):
        raise ValueError("both trajectories must be non-empty")
    ie, ig = associate(est_t, gt_t, tol)
    if not len(ie):
        raise ValueError("no estimate lies within the association tolerance of a ground-truth stamp")
    err = np.linalg.norm(est_pos[ie] - gt_pos[ig], axis=1)
    return {
        "end_to_end_error": float(err[-1]),
        "ate_rms": float(np.sqrt(np.mean(err ** 2))),
        "pairs": int(len(ie)),
    }


def sod_sweep(cfg: PipelineConfig, point_t, points, trajectory: GroundTruth, voxel_sizes,
              step: float | None = None) -> tuple[np.ndarray, dict]:
    """Overlap series along a given trajectory, one per SOD voxel size.

    Every slice of ``step`` seconds (default one frame length) is deskewed
    with the trajectory, scored against the map built from all earlier
    slices, then merged. All series share one timestamp column.
    """
    sizes = [float(s) for s in voxel_sizes]
    if len(sizes) < 2:
        raise ValueError("a sweep needs at least two voxel sizes")
    point_t = np.asarray(point_t, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    fl = cfg.window.frame_length
    step = fl if step is None else float(step)
    plog = trajectory.pose_log()
    t0 = max(point_t[0], plog.start)
    t1 = min(point_t[-1], plog.end)
    inside = (point_t >= t0) & (point_t <= t1)
    pt = point_t[inside]
    world = deskew(pt, points[inside], plog, cfg.extrinsic.pose()).points
    n_steps = int(np.floor((t1 - t0 - fl) / step + 1e-9))
    if n_steps < 1:
        raise ValueError("trajectory too short for one sweep step")
    ends = t0 + fl + step * np.arange(1, n_steps + 1)
    cuts = np.searchsorted(pt, np.concatenate([[t0 + fl], ends]), side="right")
    series = {}
    for size in sizes:
        omap = OccupancyVoxelMap(size, cfg.overlap.d, cfg.overlap.betas, cfg.overlap.metric)
        omap.insert_frame(world[: cuts[0]])
        vals = np.full(n_steps, np.nan)
        for k in range(n_steps):
            chunk = world[cuts[k]:cuts[k + 1]]
            if len(chunk):
                vals[k] = omap.score(chunk).value
                omap.insert_frame(chunk)
        series[size] = vals
    return ends, series


# ---------------------------------------------------------------- file level

def run(cfg: PipelineConfig, points_path, imu_path, gt_path=None, hook: Hook | None = None) -> RunResult:
    pt, pp = io.read_points(points_path)
    imu = io.read_imu(imu_path)
    gt = GroundTruth.from_tum(gt_path) if gt_path is not None else None
    return run_arrays(cfg, pt, pp, imu, gt, hook)


def write_results(result: RunResult, out_dir, cfg: PipelineConfig, export_map: bool = False) -> Path:
    out = io.ensure_dir(out_dir)
    io.write_tum(out / "trajectory.txt", result.times(), result.positions(), result.quats())
    with open(out / "updates.csv", "w") as fh:
        fh.write("t,O,seg_time,shift_time,echo_time,iterations,valid_points,wall_us\n")
        for r in result.records:
            wall_us = int(round(r.wall_s * 1e6)) if cfg.run.record_timing else 0
            fh.write(f"{r.t:.6f},{r.overlap:.9f},{r.seg_time},{r.shift_time:.6f},{r.echo_time},"
                     f"{r.iterations},{r.valid_points},{wall_us}\n")
    metrics = asdict(result.metrics)
    if not cfg.run.record_timing:
        # wall-clock figures would make otherwise identical runs differ
        metrics["mean_update_s"] = metrics["max_update_s"] = None
    metrics["aborted"] = result.aborted
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    if export_map:
        result.rmap.export_xyz(out / "map.xyz")
    return out


def write_sweep(out_dir, times, series: dict) -> list[Path]:
    out = io.ensure_dir(out_dir)
    paths = []
    for size, vals in series.items():
        p = out / f"sweep_{size:g}.csv"
        with open(p, "w") as fh:
            fh.write("t,O\n")
            for t, v in zip(times, vals):
                fh.write(f"{t:.6f},{v:.9f}\n")
        paths.append(p)
    return paths
