"""Rotation, pose and navigation-state primitives.

Rotations are stored as unit quaternions (w, x, y, z) and renormalized after
every composition. The error state uses a right perturbation on the rotation
block, R = R_hat * Exp(dtheta), and plain addition on every vector block.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

# below this angle exp/log/jacobians switch to their series expansions
SMALL_ANGLE = 1e-6
# angle within this distance of pi is reported as near-singular by so3_log
NEAR_PI = 1e-6

ERR_DIM = 18
ROT, POS, VEL, BG, BA, GRAV = (slice(0, 3), slice(3, 6), slice(6, 9),
                               slice(9, 12), slice(12, 15), slice(15, 18))


class NearSingularRotation(ValueError):
    """Raised when a rotation angle is too close to pi for a unique log."""


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"cannot normalize quaternion {q!r}")
    q = q / n
    # canonical hemisphere keeps the log on the short arc
    if q[0] < 0.0:
        q = -q
    return q


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion rotation, components ordered (w, x, y, z)."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        object.__setattr__(self, "q", _normalize(self.q))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, R) -> "Rotation":
        R = np.asarray(R, dtype=float)
        tr = np.trace(R)
        if tr > 0.0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (R[2, 1] - R[1, 2]) / s,
                 (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                 (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        elif R[1, 1] > R[2, 2]:
            s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                 (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        return cls(np.array(q))

    @classmethod
    def from_yaw(cls, yaw: float) -> "Rotation":
        return cls(np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)]))

    @cached_property
    def matrix(self) -> np.ndarray:
        w, x, y, z = self.q
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def __matmul__(self, other):
        if isinstance(other, Rotation):
            return Rotation(_quat_mul(self.q, other.q))
        return self.apply(other)

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, pts) -> np.ndarray:
        """Rotate a single 3-vector or an (N, 3) array of points."""
        pts = np.asarray(pts, dtype=float)
        return pts @ self.matrix.T if pts.ndim == 2 else self.matrix @ pts

    def slerp(self, other: "Rotation", s: float) -> "Rotation":
        rel = self.inverse() @ other
        return self @ so3_exp(s * so3_log(rel))

    def angle_to(self, other: "Rotation") -> float:
        return float(np.linalg.norm(so3_log(self.inverse() @ other)))

    @property
    def yaw(self) -> float:
        R = self.matrix
        return float(np.arctan2(R[1, 0], R[0, 0]))

    def xyzw(self) -> np.ndarray:
        return np.array([self.q[1], self.q[2], self.q[3], self.q[0]])

    def __repr__(self):
        return f"Rotation(q={self.q.tolist()})"


def so3_exp(omega) -> Rotation:
    """Rotation by angle |omega| about omega/|omega|."""
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    half = 0.5 * theta
    if theta < SMALL_ANGLE:
        # sin(t/2)/t ~ 1/2 - t^2/48
        k = 0.5 - theta * theta / 48.0
        w = 1.0 - theta * theta / 8.0
    else:
        k = np.sin(half) / theta
        w = np.cos(half)
    return Rotation(np.array([w, k * omega[0], k * omega[1], k * omega[2]]))


def so3_log(rot: Rotation, strict: bool = False) -> np.ndarray:
    """Rotation vector of ``rot`` on the ball |omega| <= pi.

    With ``strict=True`` angles within ``NEAR_PI`` of pi raise
    ``NearSingularRotation`` since the axis sign is ambiguous there.
    """
    w = rot.q[0]
    v = rot.q[1:]
    sin_half = float(np.linalg.norm(v))
    theta = 2.0 * np.arctan2(sin_half, w)
    if strict and abs(np.pi - theta) < NEAR_PI:
        raise NearSingularRotation(f"rotation angle {theta} is within {NEAR_PI} of pi")
    if sin_half < 0.5 * SMALL_ANGLE:
        # theta / sin(theta/2) ~ 2 / w * (1 - sin^2/(3 w^2))
        return (2.0 / w) * (1.0 - sin_half * sin_half / (3.0 * w * w)) * v
    return (theta / sin_half) * v


def right_jacobian(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    t2 = theta * theta
    return (np.eye(3) - (1.0 - np.cos(theta)) / t2 * K
            + (theta - np.sin(theta)) / (t2 * theta) * K @ K)


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    t2 = theta * theta
    return (np.eye(3) + 0.5 * K
            + (1.0 / t2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))) * K @ K)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x -> R x + t."""

    rot: Rotation = field(default_factory=Rotation.identity)
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def apply(self, pts) -> np.ndarray:
        return self.rot.apply(pts) + self.trans

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.rot @ other.rot, self.rot.apply(other.trans) + self.trans)

    def inverse(self) -> "Pose":
        rinv = self.rot.inverse()
        return Pose(rinv, -rinv.apply(self.trans))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rot.matrix
        T[:3, 3] = self.trans
        return T


@dataclass(frozen=True, eq=False)
class NavState:
    """Nominal estimator state: attitude, position, velocity, biases, gravity."""

    rot: Rotation = field(default_factory=Rotation.identity)
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    grav: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        for name in ("pos", "vel", "bg", "ba", "grav"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    @property
    def pose(self) -> Pose:
        return Pose(self.rot, self.pos)

    def replace(self, **kw) -> "NavState":
        fields = dict(rot=self.rot, pos=self.pos, vel=self.vel, bg=self.bg, ba=self.ba, grav=self.grav)
        fields.update(kw)
        return NavState(**fields)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in
                   (self.rot.q, self.pos, self.vel, self.bg, self.ba, self.grav))


def boxplus(x: NavState, dx) -> NavState:
    dx = np.asarray(dx, dtype=float)
    return NavState(
        rot=x.rot @ so3_exp(dx[ROT]),
        pos=x.pos + dx[POS],
        vel=x.vel + dx[VEL],
        bg=x.bg + dx[BG],
        ba=x.ba + dx[BA],
        grav=x.grav + dx[GRAV],
    )


def boxminus(a: NavState, b: NavState, strict: bool = False) -> np.ndarray:
    """Error vector d with ``boxplus(b, d) == a``."""
    d = np.empty(ERR_DIM)
    d[ROT] = so3_log(b.rot.inverse() @ a.rot, strict=strict)
    d[POS] = a.pos - b.pos
    d[VEL] = a.vel - b.vel
    d[BG] = a.bg - b.bg
    d[BA] = a.ba - b.ba
    d[GRAV] = a.grav - b.grav
    return d


def so3_exp_batch(phis: np.ndarray) -> np.ndarray:
    """Rodrigues formula over an (N, 3) array; returns (N, 3, 3) matrices."""
    phis = np.asarray(phis, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(phis, axis=1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta ** 2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta ** 2 / 24.0, (1.0 - np.cos(safe)) / safe ** 2)
    K = np.zeros((len(phis), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -phis[:, 2], phis[:, 1]
    K[:, 1, 0], K[:, 1, 2] = phis[:, 2], -phis[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -phis[:, 1], phis[:, 0]
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * (K @ K)
