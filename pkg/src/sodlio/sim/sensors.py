"""Synthetic LiDAR and IMU streams from a world and ground-truth trajectory."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose
from ..imu import ImuSample, NoiseParams
from .trajectory import TrajectorySpec
from .world import World

PATTERNS = ("raster", "rosette")
GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


@dataclass(frozen=True)
class LidarModel:
    hfov_deg: float = 70.0
    vfov_deg: float = 70.0
    pattern: str = "raster"
    points_per_second: float = 100_000.0
    min_range: float = 0.5
    max_range: float = 80.0
    range_noise: float = 0.0
    # raster: rows cycled point by point, azimuth swept at scan_rate
    rows: int = 32
    scan_rate: float = 10.0
    # rosette: radial oscillation and slow rotation frequencies (Hz)
    rosette_radial: float = 317.7
    rosette_spin: float = 23.1
    extrinsic: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if not (0 < self.hfov_deg <= 360 and 0 < self.vfov_deg <= 180):
            raise ValueError("field of view out of range")
        if self.points_per_second <= 0 or self.scan_rate <= 0 or self.rows < 1:
            raise ValueError("rates must be positive")
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown scan pattern {self.pattern!r}")
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("bad range limits")

    def directions(self, k: np.ndarray) -> np.ndarray:
        """Unit ray directions (sensor frame, x forward) for global point indices ``k``."""
        t = k / self.points_per_second
        hf = np.radians(self.hfov_deg)
        vf = np.radians(self.vfov_deg)
        if self.pattern == "raster":
            row = np.mod(k, self.rows)
            el = -0.5 * vf + (row + 0.5) * vf / self.rows
            phase = np.mod(t * self.scan_rate, 1.0)
            if self.hfov_deg >= 360:
                # firing is not locked to the encoder: each revolution starts a
                # golden-ratio fraction of a column later, so rays never retrace
                rev = np.floor(t * self.scan_rate)
                column = 2 * np.pi * self.scan_rate * self.rows / self.points_per_second
                az = 2 * np.pi * phase + np.mod(rev * GOLDEN, 1.0) * column
            else:
                tri = 1.0 - np.abs(2.0 * phase - 1.0)
                az = -0.5 * hf + hf * tri
        else:
            rho = np.sin(2 * np.pi * self.rosette_radial * t)
            phi = 2 * np.pi * self.rosette_spin * t
            az = 0.5 * hf * rho * np.cos(phi)
            el = 0.5 * vf * rho * np.sin(phi)
        ce = np.cos(el)
        return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=1)


def point_indices(lidar: LidarModel, t0: float, t1: float) -> np.ndarray:
    pps = lidar.points_per_second
    k0 = int(np.ceil(t0 * pps - 1e-9))
    k1 = int(np.ceil(t1 * pps - 1e-9))
    return np.arange(k0, k1, dtype=np.int64)


def scan(world: World, traj: TrajectorySpec, lidar: LidarModel, t0: float, t1: float,
         seed: int = 0, chunk: int = 20_000):
    """Timestamped sensor-frame returns over [t0, t1).

    Each ray is cast from the ground-truth sensor pose at its own timestamp.
    Returns ``(t, points)``; rays without a hit inside the range limits are
    omitted.
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    rng = np.random.default_rng(seed)
    ext = lidar.extrinsic
    out_t, out_p = [], []
    ks = point_indices(lidar, t0, t1)
    for s in range(0, len(ks), chunk):
        k = ks[s:s + chunk]
        t = k / lidar.points_per_second
        R, p, *_ = traj.states(t)
        d_sensor = lidar.directions(k)
        d_body = d_sensor @ ext.rot.matrix.T
        d_world = np.einsum("nij,nj->ni", R, d_body)
        origin = np.einsum("nij,j->ni", R, ext.trans) + p
        rng_true = world.raycast(origin, d_world)
        noise = rng.standard_normal(len(k)) * lidar.range_noise
        hit = np.isfinite(rng_true) & (rng_true >= lidar.min_range) & (rng_true <= lidar.max_range)
        r = rng_true[hit] + noise[hit]
        out_t.append(t[hit])
        out_p.append(d_sensor[hit] * r[:, None])
    if not out_t:
        return np.empty(0), np.empty((0, 3))
    return np.concatenate(out_t), np.concatenate(out_p)


def imu_stream(traj: TrajectorySpec, rate: float, noise: NoiseParams,
               bias=(np.zeros(3), np.zeros(3)), seed: int = 0) -> list[ImuSample]:
    """Samples ``gyro = omega + b_g + n_g`` and ``acc = f + b_a + n_a``.

    Noise densities are converted to per-sample standard deviations with
    ``sigma * sqrt(rate)``.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    rng = np.random.default_rng(seed)
    k = np.arange(int(np.ceil(traj.t0 * rate - 1e-9)), int(np.floor(traj.t1 * rate + 1e-9)) + 1)
    t = k / rate
    _, _, _, w, f = traj.states(t)
    sq = np.sqrt(rate)
    gyro = w + np.asarray(bias[0], dtype=float) + rng.standard_normal(w.shape) * noise.gyro * sq
    acc = f + np.asarray(bias[1], dtype=float) + rng.standard_normal(f.shape) * noise.acc * sq
    return [ImuSample(float(ti), g, a) for ti, g, a in zip(t, gyro, acc)]
