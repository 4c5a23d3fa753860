"""IMU forward propagation of the nominal state and error covariance, and
per-point motion compensation against the propagated pose log."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (BA, BG, ERR_DIM, GRAV, POS, ROT, VEL, NavState, Pose, Rotation,
                       right_jacobian, skew, so3_exp, so3_exp_batch, so3_log)

NOISE_DIM = 12
# a gap wider than this many nominal sample periods is treated as dropped data
MAX_GAP_PERIODS = 5.0


class ImuGapError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    acc: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "acc", np.asarray(self.acc, dtype=float).reshape(3))


@dataclass(frozen=True)
class NoiseParams:
    """Continuous-time noise densities (per sqrt(Hz))."""

    gyro: float = 1e-3
    acc: float = 1e-2
    gyro_bias: float = 1e-5
    acc_bias: float = 1e-4

    def __post_init__(self):
        if min(self.gyro, self.acc, self.gyro_bias, self.acc_bias) < 0:
            raise ValueError("noise densities must be non-negative")


def step_nominal(x: NavState, gyro, acc, dt: float, noise=None) -> NavState:
    """One zero-order-hold integration step.

    ``noise`` optionally injects the 12-vector (n_gyro, n_acc, n_bg, n_ba)
    so the noise Jacobian can be checked numerically.
    """
    n = np.zeros(NOISE_DIM) if noise is None else np.asarray(noise, dtype=float)
    w = np.asarray(gyro, dtype=float) - x.bg - n[0:3]
    a = np.asarray(acc, dtype=float) - x.ba - n[3:6]
    R = x.rot.matrix
    acc_world = R @ a + x.grav
    return NavState(
        rot=x.rot @ so3_exp(w * dt),
        pos=x.pos + x.vel * dt + 0.5 * acc_world * dt * dt,
        vel=x.vel + acc_world * dt,
        bg=x.bg + n[6:9] * dt,
        ba=x.ba + n[9:12] * dt,
        grav=x.grav,
    )


def transition_matrices(x: NavState, gyro, acc, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete error-state transition ``F_a`` (18x18) and noise map ``F_n`` (18x12)."""
    w = np.asarray(gyro, dtype=float) - x.bg
    a = np.asarray(acc, dtype=float) - x.ba
    R = x.rot.matrix
    Ra_x = R @ skew(a)
    Jr = right_jacobian(w * dt)
    I3 = np.eye(3)
    dt2 = 0.5 * dt * dt

    Fa = np.eye(ERR_DIM)
    Fa[ROT, ROT] = so3_exp(-w * dt).matrix
    Fa[ROT, BG] = -Jr * dt
    Fa[POS, ROT] = -Ra_x * dt2
    Fa[POS, VEL] = I3 * dt
    Fa[POS, BA] = -R * dt2
    Fa[POS, GRAV] = I3 * dt2
    Fa[VEL, ROT] = -Ra_x * dt
    Fa[VEL, BA] = -R * dt
    Fa[VEL, GRAV] = I3 * dt

    Fn = np.zeros((ERR_DIM, NOISE_DIM))
    Fn[ROT, 0:3] = -Jr * dt
    Fn[POS, 3:6] = -R * dt2
    Fn[VEL, 3:6] = -R * dt
    Fn[BG, 6:9] = I3 * dt
    Fn[BA, 9:12] = I3 * dt
    return Fa, Fn


def process_noise(noise: NoiseParams, dt: float) -> np.ndarray:
    """Diagonal discrete covariance of the sampled noise vector over ``dt``."""
    var = np.repeat([noise.gyro ** 2, noise.acc ** 2, noise.gyro_bias ** 2, noise.acc_bias ** 2], 3)
    return np.diag(var / dt)


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def propagate(x: NavState, P: np.ndarray, u: ImuSample, dt: float,
              noise: NoiseParams) -> tuple[NavState, np.ndarray]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not (np.all(np.isfinite(u.gyro)) and np.all(np.isfinite(u.acc)) and x.is_finite()
            and np.all(np.isfinite(P))):
        raise ValueError("non-finite propagation input")
    Fa, Fn = transition_matrices(x, u.gyro, u.acc, dt)
    x_next = step_nominal(x, u.gyro, u.acc, dt)
    P_next = Fa @ P @ Fa.T + Fn @ process_noise(noise, dt) @ Fn.T
    return x_next, _symmetrize(P_next)


@dataclass
class PoseLog:
    """States at increasing timestamps over one propagation span."""

    t: np.ndarray
    states: list

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if len(self.t) != len(self.states) or not len(self.t):
            raise ValueError("pose log needs one state per timestamp")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("pose log timestamps must be strictly increasing")

    @classmethod
    def constant(cls, x: NavState, t0: float, t1: float) -> "PoseLog":
        return cls([t0, t1], [x, x]) if t1 > t0 else cls([t0], [x])

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def pose_at(self, t: float) -> Pose:
        R, p = self.interpolate(np.array([t]))
        return Pose(Rotation.from_matrix(R[0]), p[0])

    def interpolate(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Slerp rotations and lerp positions at ``times`` (inside the log)."""
        times = np.asarray(times, dtype=float)
        rots = np.array([s.rot.matrix for s in self.states])
        pos = np.array([s.pos for s in self.states])
        if len(self.t) == 1:
            return np.repeat(rots, len(times), axis=0), np.repeat(pos, len(times), axis=0)
        i = np.clip(np.searchsorted(self.t, times, side="right") - 1, 0, len(self.t) - 2)
        span = self.t[i + 1] - self.t[i]
        s = np.clip((times - self.t[i]) / span, 0.0, 1.0)
        rel = np.array([so3_log(a.rot.inverse() @ b.rot)
                        for a, b in zip(self.states[:-1], self.states[1:])])
        R = rots[i] @ so3_exp_batch(s[:, None] * rel[i])
        p = pos[i] + s[:, None] * (pos[i + 1] - pos[i])
        return R, p


def _input_at(samples: list[ImuSample], t: float, times: np.ndarray) -> ImuSample:
    j = int(np.searchsorted(times, t, side="right")) - 1
    return samples[max(j, 0)]


def propagate_span(x: NavState, P: np.ndarray, samples: list[ImuSample], t0: float, t1: float,
                   noise: NoiseParams, times: np.ndarray | None = None):
    """Chain single-step propagation from ``t0`` to ``t1``.

    Each interval uses the most recent sample at or before its start (zero-order
    hold). Returns ``(state, covariance, PoseLog)``; the log holds the state at
    ``t0``, at every sample time strictly inside the span, and at ``t1``.
    """
    if t1 < t0:
        raise ValueError("t1 precedes t0")
    if not samples:
        raise ImuGapError(f"no IMU data for span [{t0}, {t1}]")
    times = np.array([s.t for s in samples]) if times is None else times
    period = float(np.median(np.diff(times))) if len(times) > 1 else np.inf
    max_gap = MAX_GAP_PERIODS * period
    if times[0] - t0 > max_gap or t1 - times[-1] > max_gap:
        raise ImuGapError(f"IMU data does not cover [{t0}, {t1}]")
    lo = np.searchsorted(times, t0, side="right")
    hi = np.searchsorted(times, t1, side="left")
    knots = [t0, *times[lo:hi].tolist()]
    if t1 > t0:
        knots.append(t1)
    if np.any(np.diff(knots) > max_gap):
        raise ImuGapError(f"IMU gap inside [{t0}, {t1}]")
    states = [x]
    for a, b in zip(knots[:-1], knots[1:]):
        x, P = propagate(x, P, _input_at(samples, a, times), b - a, noise)
        states.append(x)
    return x, P, PoseLog(knots, states)


@dataclass
class DeskewResult:
    points: np.ndarray
    valid: np.ndarray

    @property
    def rejected(self) -> int:
        return int((~self.valid).sum())


def deskew(times, points_lidar, log: PoseLog, extrinsic: Pose, end: float | None = None,
           tol: float = 1e-9) -> DeskewResult:
    """World-frame position of every point under the pose at its own timestamp.

    Points stamped outside the log span are rejected; their rows are NaN.
    """
    times = np.asarray(times, dtype=float)
    pts = np.asarray(points_lidar, dtype=float).reshape(-1, 3)
    if end is not None and not (log.start - tol <= end <= log.end + tol):
        raise ValueError("deskew target time outside the pose log")
    valid = (times >= log.start - tol) & (times <= log.end + tol)
    out = np.full_like(pts, np.nan)
    if valid.any():
        body = extrinsic.apply(pts[valid])
        R, p = log.interpolate(times[valid])
        out[valid] = np.einsum("nij,nj->ni", R, body) + p
    return DeskewResult(out, valid)


def static_init(samples: list[ImuSample], t_start: float, duration: float = 0.5,
                rot: Rotation | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gyro bias and world gravity from a standstill IMU segment."""
    sel = [s for s in samples if t_start <= s.t <= t_start + duration]
    if not sel:
        raise ImuGapError("no IMU samples in the initialization window")
    gyro = np.mean([s.gyro for s in sel], axis=0)
    acc = np.mean([s.acc for s in sel], axis=0)
    rot = Rotation.identity() if rot is None else rot
    return gyro, -rot.apply(acc)
