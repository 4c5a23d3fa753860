"""Planar ground-truth trajectories from blended piecewise-constant profiles.

Forward speed and yaw rate are constant per segment and switch through a
cubic smoothstep over a blending window centered on each join, so both and
their first derivatives are continuous. Yaw is integrated in closed form;
position by Gauss-Legendre quadrature on a fine knot grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import Pose, Rotation

GRAVITY = np.array([0.0, 0.0, -9.81])
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class Segment:
    duration: float
    speed: float = 0.0
    yaw_rate: float = 0.0


class BlendedProfile:
    """Piecewise-constant values joined by smoothsteps of width ``blend``."""

    def __init__(self, durations, values, blend: float, t0: float = 0.0):
        self.values = np.asarray(values, dtype=float)
        self.bounds = t0 + np.concatenate([[0.0], np.cumsum(durations)])
        self.blend = float(blend)
        self.joins = self.bounds[1:-1]
        # integral of the profile at each segment start (blends are area-symmetric)
        self._base = np.concatenate([[0.0], np.cumsum(self.values * np.diff(self.bounds))])

    def _parts(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.bounds, t, side="right") - 1, 0, len(self.values) - 1)
        return t, k

    def value(self, t):
        t, k = self._parts(t)
        out = self.values[k].copy()
        out += self._blend_terms(t, 0)
        return out

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        return self._blend_terms(t, 1)

    def integral(self, t):
        """Integral of the profile from the first bound to ``t``."""
        t, k = self._parts(t)
        out = self._base[k] + self.values[k] * (t - self.bounds[k])
        out += self._blend_terms(t, -1)
        return out

    def _blend_terms(self, t, order: int):
        out = np.zeros_like(t, dtype=float)
        h = 0.5 * self.blend
        if h <= 0:
            return out
        flat = t.reshape(-1)
        res = out.reshape(-1)
        for j, T in enumerate(self.joins):
            jump = self.values[j + 1] - self.values[j]
            if jump == 0.0:
                continue
            idx = np.flatnonzero(flat > T - h)
            if not len(idx):
                continue
            tt = flat[idx]
            s = (tt - (T - h)) / self.blend
            inside = s < 1
            si = s[inside]
            ti = tt[inside]
            ii = idx[inside]
            if order == 0:
                # value = v_prev + jump*S(s); base gives v_prev before T and v_next after
                step = (ti >= T).astype(float)
                res[ii] += jump * (3 * si ** 2 - 2 * si ** 3 - step)
            elif order == 1:
                res[ii] += jump * (6 * si - 6 * si ** 2) / self.blend
            else:
                # integral of (S(s) - step) over the part of the window already passed
                area_s = self.blend * (si ** 3 - 0.5 * si ** 4)
                res[ii] += jump * np.where(ti < T, area_s, area_s - (ti - T))
        return out


@dataclass
class TrajectorySpec:
    segments: list
    blend: float = 0.5
    start: Pose = field(default_factory=Pose.identity)
    t0: float = 0.0
    grid: float = 0.01

    def __post_init__(self):
        durs = [s.duration for s in self.segments]
        if min(durs) <= 0:
            raise ValueError("segment durations must be positive")
        if self.blend > 0 and min(durs) < self.blend:
            raise ValueError("blending window longer than a segment")
        self.speed = BlendedProfile(durs, [s.speed for s in self.segments], self.blend, self.t0)
        self.yaw_rate = BlendedProfile(durs, [s.yaw_rate for s in self.segments], self.blend, self.t0)
        self.t1 = float(self.speed.bounds[-1])
        self._yaw0 = self.start.rot.yaw
        h = 0.5 * self.blend
        breaks = np.concatenate([self.speed.bounds, self.speed.joins - h, self.speed.joins + h])
        knots = np.union1d(np.arange(self.t0, self.t1, self.grid), breaks)
        self._knots = knots[(knots >= self.t0) & (knots <= self.t1)]
        cells = self._quad(self._knots[:-1], self._knots[1:])
        self._cum = np.vstack([np.zeros(2), np.cumsum(cells, axis=0)])

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def yaw(self, t):
        return self._yaw0 + self.yaw_rate.integral(t)

    def _planar_velocity(self, t):
        v = self.speed.value(t)
        psi = self.yaw(t)
        return np.stack([v * np.cos(psi), v * np.sin(psi)], axis=-1)

    def _quad(self, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        vel = self._planar_velocity(nodes.ravel()).reshape(len(a), len(_GL_X), 2)
        return half[:, None] * np.einsum("nkj,k->nj", vel, _GL_W)

    def check_time(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < self.t0 - 1e-12) or np.any(t > self.t1 + 1e-12):
            raise ValueError(f"time outside trajectory span [{self.t0}, {self.t1}]")
        return np.clip(t, self.t0, self.t1)

    def states(self, t):
        """Vectorized ground truth at times ``t``.

        Returns ``(R, pos, vel, omega_body, specific_force_body)`` with shapes
        (N,3,3), (N,3), (N,3), (N,3), (N,3).
        """
        t = self.check_time(t)
        k = np.clip(np.searchsorted(self._knots, t, side="right") - 1, 0, len(self._knots) - 2)
        xy = self._cum[k] + self._quad(self._knots[k], t)
        psi = self.yaw(t)
        c, s = np.cos(psi), np.sin(psi)
        n = len(t)
        R = np.zeros((n, 3, 3))
        R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1], R[:, 2, 2] = c, -s, s, c, 1.0
        # only the start yaw is honored; tilt is not modeled
        pos = np.zeros((n, 3))
        pos[:, :2] = xy
        pos += self.start.trans
        v = self.speed.value(t)
        w = self.yaw_rate.value(t)
        vel = np.stack([v * c, v * s, np.zeros(n)], axis=1)
        omega = np.stack([np.zeros(n), np.zeros(n), w], axis=1)
        acc_body = np.stack([self.speed.rate(t), v * w, np.zeros(n)], axis=1)
        g_body = np.einsum("nji,j->ni", R, GRAVITY)
        return R, pos, vel, omega, acc_body - g_body


def ground_truth(traj: TrajectorySpec, t: float):
    """Pose, world velocity, body angular rate and accelerometer reading at ``t``."""
    R, p, v, w, f = traj.states(np.array([t]))
    return Pose(Rotation.from_matrix(R[0]), p[0]), v[0], w[0], f[0]
