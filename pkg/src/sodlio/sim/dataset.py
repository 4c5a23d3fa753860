"""Render a scenario into point/IMU/ground-truth streams and dataset files."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .. import io
from .scenarios import Scenario
from .sensors import imu_stream, scan


@dataclass
class Dataset:
    scenario: Scenario
    point_t: np.ndarray
    points: np.ndarray
    imu: list
    gt_t: np.ndarray
    gt_pos: np.ndarray
    gt_quat: np.ndarray  # w x y z

    def ground_truth(self):
        from ..pipeline import GroundTruth
        return GroundTruth(self.gt_t, self.gt_pos, self.gt_quat)

    def config_overrides(self) -> dict:
        """Dotted config keys matching the simulated sensor rig."""
        sc = self.scenario
        ext = sc.lidar.extrinsic
        return {
            "extrinsic.translation": [float(v) for v in ext.trans],
            "extrinsic.rotation": [float(v) for v in ext.rot.q],
            "imu.gyro": sc.noise.gyro,
            "imu.acc": sc.noise.acc,
            "imu.gyro_bias": sc.noise.gyro_bias,
            "imu.acc_bias": sc.noise.acc_bias,
        }


def simulate(sc: Scenario, t_end: float | None = None) -> Dataset:
    """All streams of ``sc`` from its start to ``t_end`` (default: trajectory end)."""
    traj = sc.traj
    t1 = traj.t1 if t_end is None else min(float(t_end), traj.t1)
    pt, pp = scan(sc.world, traj, sc.lidar, traj.t0, t1, seed=sc.seed * 7919 + 11)
    imu = imu_stream(traj, sc.imu_rate, sc.noise, (sc.gyro_bias, sc.acc_bias), seed=sc.seed * 7919 + 12)
    imu = [s for s in imu if s.t <= t1 + 1e-12]
    gt_t = np.array([s.t for s in imu])
    _, pos, *_ = traj.states(gt_t)
    half = 0.5 * traj.yaw(gt_t)
    quat = np.stack([np.cos(half), np.zeros_like(half), np.zeros_like(half), np.sin(half)], axis=1)
    return Dataset(sc, pt, pp, imu, gt_t, pos, quat)


def write_dataset(ds: Dataset, out_dir) -> dict:
    """Write points.csv, imu.csv, groundtruth.txt and rig.yaml; returns their paths."""
    out = io.ensure_dir(out_dir)
    paths = {
        "points": out / "points.csv",
        "imu": out / "imu.csv",
        "gt": out / "groundtruth.txt",
        "config": out / "rig.yaml",
    }
    io.write_points(paths["points"], ds.point_t, ds.points)
    io.write_imu(paths["imu"], ds.imu)
    io.write_tum(paths["gt"], ds.gt_t, ds.gt_pos, ds.gt_quat)
    Path(paths["config"]).write_text(yaml.safe_dump(ds.config_overrides(), sort_keys=False))
    return paths

