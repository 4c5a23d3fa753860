"""Named deterministic test scenarios.

Each scenario fixes a world, a planar ground-truth trajectory that starts at
rest at the origin facing +x, a LiDAR model and IMU noise. The seed only
drives noise and bias draws.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose, Rotation
from ..imu import NoiseParams
from .sensors import LidarModel
from .trajectory import Segment, TrajectorySpec
from .world import Patch, World, box_patches, grid_walls

# surfaces deliberately avoid multiples of common voxel sizes
FLOOR_Z = -1.03
CEIL_Z = 1.83
GRID_OFFSET = 0.037
# LiDAR mounted slightly ahead of and above the IMU
EXTRINSIC = Pose(Rotation.identity(), np.array([0.08, 0.0, 0.06]))


@dataclass
class Scenario:
    name: str
    seed: int
    world: World
    traj: TrajectorySpec
    lidar: LidarModel
    noise: NoiseParams
    imu_rate: float = 200.0
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acc_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    turns: list = field(default_factory=list)
    occlusion: tuple | None = None
    path_length: float = 0.0

    def __iter__(self):
        return iter((self.world, self.traj, self.lidar, self.noise))


def _path_length(traj: TrajectorySpec, dt: float = 0.01) -> float:
    t = np.arange(traj.t0, traj.t1, dt)
    return float(np.sum(traj.speed.value(t)) * dt)


def _turn_windows(traj: TrajectorySpec, segments) -> list:
    out = []
    t = traj.t0
    h = 0.5 * traj.blend
    for seg in segments:
        if abs(seg.yaw_rate) > 0:
            out.append((t - h, t + seg.duration + h))
        t += seg.duration
    return out


def _layout_from_path(traj: TrajectorySpec, half_width: float, cell: float,
                      stubs: list, margin: float = 8.0):
    """Free grid cells covering the corridor around the path plus extra stubs.

    ``stubs`` are (x0, y0, x1, y1) rectangles of additional free space.
    """
    t = np.arange(traj.t0, traj.t1, 0.02)
    _, p, *_ = traj.states(t)
    xy = p[:, :2]
    lo = np.floor((np.min(np.vstack([xy, *[np.array(s).reshape(2, 2) for s in stubs]]) if stubs else xy, axis=0)
                   - margin) / cell) * cell
    hi = np.ceil((np.max(np.vstack([xy, *[np.array(s).reshape(2, 2) for s in stubs]]) if stubs else xy, axis=0)
                  + margin) / cell) * cell
    lo = lo + GRID_OFFSET
    hi = hi + GRID_OFFSET
    nx, ny = ((hi - lo) / cell).round().astype(int)
    cx = lo[0] + (np.arange(nx) + 0.5) * cell
    cy = lo[1] + (np.arange(ny) + 0.5) * cell
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    free = np.zeros((nx, ny), dtype=bool)
    for x, y in xy:
        i0, i1 = np.searchsorted(cx, [x - half_width, x + half_width])
        j0, j1 = np.searchsorted(cy, [y - half_width, y + half_width])
        free[i0:i1, j0:j1] = True
    for x0, y0, x1, y1 in stubs:
        free |= (gx > min(x0, x1)) & (gx < max(x0, x1)) & (gy > min(y0, y1)) & (gy < max(y0, y1))
    return free, lo, hi


def _enclosed_world(free, lo, hi, cell, pillars=()) -> World:
    world = World(grid_walls(free, cell, lo, FLOOR_Z, CEIL_Z))
    size = hi - lo
    world.patches.append(Patch([lo[0], lo[1], FLOOR_Z], [size[0], 0, 0], [0, size[1], 0]))
    world.patches.append(Patch([lo[0], lo[1], CEIL_Z], [size[0], 0, 0], [0, size[1], 0]))
    for x, y, s in pillars:
        world.patches.extend(box_patches([x - s, y - s, FLOOR_Z], [x + s, y + s, CEIL_Z])[:4])
    return world


def _pillars_along(traj: TrajectorySpec, segments, offset: float, spacing: float,
                   size: float, clearance: float = 3.0) -> list:
    """Pillars beside straight driving segments, alternating sides."""
    out = []
    t = traj.t0
    side = 1.0
    for seg in segments:
        if seg.speed > 0 and seg.yaw_rate == 0 and seg.duration * seg.speed > 2 * clearance:
            ts = np.arange(t + clearance / seg.speed, t + seg.duration - clearance / seg.speed,
                           spacing / seg.speed)
            if len(ts):
                R, p, *_ = traj.states(ts)
                for Ri, pi in zip(R, p):
                    left = Ri[:2, 1]
                    q = pi[:2] + side * offset * left
                    out.append((float(q[0]), float(q[1]), size))
                    side = -side
        t += seg.duration
    return out


def _draw_biases(rng, gyro_sd: float, acc_sd: float):
    return rng.normal(0.0, gyro_sd, 3), rng.normal(0.0, acc_sd, 3)


def corridor_sharp_turns(seed: int = 0) -> Scenario:
    v = 1.5
    segments = [
        Segment(1.0),
        Segment(9.0, v),
        Segment(0.35, 0.6, np.pi / 2 / 0.35),
        Segment(7.0, v),
        Segment(0.35, 0.6, -np.pi / 2 / 0.35),
        Segment(6.0, v),
        # spin around at a crossing, then back to the side branch just passed
        Segment(0.7, 0.2, np.pi / 0.7),
        Segment(2.0, v),
        Segment(0.35, 0.6, -np.pi / 2 / 0.35),
        Segment(6.0, v),
        Segment(1.0),
    ]
    traj = TrajectorySpec(segments, blend=0.3)
    # side arms (relative to the incoming heading) turning corners into crossings
    arms = {2: ("ahead", "right"), 4: ("ahead", "left"), 6: ("left", "right")}
    hw = 1.0
    stubs = []
    t = traj.t0
    for i, seg in enumerate(segments):
        if i in arms:
            R, p, *_ = traj.states(np.array([t, t + seg.duration]))
            c = 0.5 * (p[0, :2] + p[1, :2])
            fwd = R[0, :2, 0]
            left = np.array([-fwd[1], fwd[0]])
            for arm in arms[i]:
                d = {"ahead": fwd, "left": left, "right": -left}[arm]
                perp = np.array([-d[1], d[0]])
                a, b = c - hw * perp, c + 7.0 * d + hw * perp
                stubs.append((a[0], a[1], b[0], b[1]))
        t += seg.duration
    free, lo, hi = _layout_from_path(traj, hw, 0.5, stubs)
    pillars = _pillars_along(traj, segments, 0.75, 4.0, 0.12)
    world = _enclosed_world(free, lo, hi, 0.5, pillars)
    rng = np.random.default_rng([seed, 1])
    bg, ba = _draw_biases(rng, 0.003, 0.03)
    lidar = LidarModel(hfov_deg=70.0, vfov_deg=70.0, pattern="rosette", points_per_second=100_000,
                       min_range=0.5, max_range=60.0, range_noise=0.01, extrinsic=EXTRINSIC)
    noise = NoiseParams(gyro=2e-3, acc=2e-2, gyro_bias=1e-4, acc_bias=1e-3)
    return Scenario("corridor_sharp_turns", seed, world, traj, lidar, noise, 200.0, bg, ba,
                    turns=_turn_windows(traj, segments), path_length=_path_length(traj))


def closed_loop_rect(seed: int = 0) -> Scenario:
    v = 2.0
    # stop-turn-go corners keep all four legs congruent, so the loop closes exactly
    stop = Segment(0.6)
    turn = Segment(1.5, 0.0, np.pi / 2 / 1.5)
    segments = [Segment(1.0)]
    for length in (58.0, 38.0, 58.0, 38.0):
        segments += [Segment(length / v, v), stop, turn, stop]
    segments[-1] = Segment(1.0)
    traj = TrajectorySpec(segments, blend=0.5)
    free, lo, hi = _layout_from_path(traj, 2.0, 0.5, [])
    pillars = _pillars_along(traj, segments, 1.6, 6.0, 0.2)
    world = _enclosed_world(free, lo, hi, 0.5, pillars)
    rng = np.random.default_rng([seed, 2])
    bg, ba = _draw_biases(rng, 0.002, 0.02)
    lidar = LidarModel(hfov_deg=70.0, vfov_deg=70.0, pattern="rosette", points_per_second=20_000,
                       min_range=0.5, max_range=60.0, range_noise=0.01, extrinsic=EXTRINSIC)
    noise = NoiseParams(gyro=1e-3, acc=1e-2, gyro_bias=5e-5, acc_bias=5e-4)
    return Scenario("closed_loop_rect", seed, world, traj, lidar, noise, 200.0, bg, ba,
                    turns=_turn_windows(traj, segments), path_length=_path_length(traj))


def smooth_room(seed: int = 0) -> Scenario:
    segments = [Segment(1.0), Segment(6.0, 0.3, 0.1), Segment(6.0, 0.3, -0.1), Segment(1.0)]
    traj = TrajectorySpec(segments, blend=1.0)
    world = World()
    lo = np.array([-5.03, -3.97, FLOOR_Z])
    hi = np.array([7.03, 4.03, 2.03])
    world.patches.extend(box_patches(lo, hi))
    world.add_box([2.0, 2.5, FLOOR_Z], [3.0, 3.5, 0.0])
    world.add_box([-3.5, -3.5, FLOOR_Z], [-2.5, -2.5, 1.0])
    rng = np.random.default_rng([seed, 3])
    bg, ba = _draw_biases(rng, 0.001, 0.01)
    lidar = LidarModel(hfov_deg=360.0, vfov_deg=30.0, pattern="raster", points_per_second=40_000,
                       rows=16, scan_rate=10.0, min_range=0.3, max_range=40.0, range_noise=0.005,
                       extrinsic=EXTRINSIC)
    noise = NoiseParams(gyro=1e-3, acc=1e-2, gyro_bias=5e-5, acc_bias=5e-4)
    return Scenario("smooth_room", seed, world, traj, lidar, noise, 200.0, bg, ba,
                    path_length=_path_length(traj))


def doorway_occlusion(seed: int = 0) -> Scenario:
    # out of the room through one door, along a narrow closet behind the wall
    # and back in through a second door; halfway along the closet neither door
    # is in line of sight and every surface lies inside the minimum range
    v = 1.0
    stop = Segment(0.5)
    left = Segment(1.0, 0.0, np.pi / 2)
    segments = [Segment(1.0), Segment(5.1 / v, v), stop, left, stop, Segment(2.4 / 0.8, 0.8),
                stop, left, stop, Segment(4.6 / v, v), Segment(1.0)]
    traj = TrajectorySpec(segments, blend=0.5)
    cell = 0.15
    lo = np.array([-4.5, -3.9])
    hi = np.array([6.3, 5.1])
    nx, ny = ((hi - lo) / cell).round().astype(int)
    gx, gy = np.meshgrid(lo[0] + (np.arange(nx) + 0.5) * cell, lo[1] + (np.arange(ny) + 0.5) * cell,
                         indexing="ij")
    room = (gx > -4.05) & (gx < 4.05) & (gy > -3.45) & (gy < 4.65)
    closet = (gx > 4.65) & (gx < 5.55) & (gy > -0.45) & (gy < 2.85)
    doors = (gx > 3.9) & (gx < 4.8) & ((np.abs(gy) < 0.45) | (np.abs(gy - 2.4) < 0.45))
    world = _enclosed_world(room | closet | doors, lo, hi, cell)
    rng = np.random.default_rng([seed, 4])
    bg, ba = _draw_biases(rng, 0.001, 0.01)
    lidar = LidarModel(hfov_deg=360.0, vfov_deg=60.0, pattern="raster", points_per_second=40_000,
                       rows=32, scan_rate=10.0, min_range=2.0, max_range=40.0, range_noise=0.01,
                       extrinsic=EXTRINSIC)
    noise = NoiseParams(gyro=1e-3, acc=1e-2, gyro_bias=5e-5, acc_bias=5e-4)
    # occlusion: from the first door until half a meter back into the room
    ts = np.arange(traj.t0, traj.t1, 0.01)
    _, pos, *_ = traj.states(ts)
    t_in = float(ts[np.argmax(pos[:, 0] > 4.05)])
    back = (ts > t_in) & (pos[:, 1] > 1.2) & (pos[:, 0] < 3.55)
    t_out = float(ts[np.argmax(back)])
    return Scenario("doorway_occlusion", seed, world, traj, lidar, noise, 200.0, bg, ba,
                    occlusion=(t_in, t_out), path_length=_path_length(traj))


SCENARIOS = {
    "corridor_sharp_turns": corridor_sharp_turns,
    "closed_loop_rect": closed_loop_rect,
    "doorway_occlusion": doorway_occlusion,
    "smooth_room": smooth_room,
}


def scenario(name: str, seed: int = 0) -> Scenario:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return factory(seed)
