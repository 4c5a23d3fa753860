"""Planar-patch worlds and ray casting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Patch:
    """Parallelogram ``corner + a*edge1 + b*edge2`` with a, b in [0, 1]."""

    corner: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray

    def __post_init__(self):
        for name in ("corner", "edge1", "edge2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        n = np.cross(self.edge1, self.edge2)
        if np.linalg.norm(n) <= 1e-12 * max(1.0, np.linalg.norm(self.edge1) * np.linalg.norm(self.edge2)):
            raise ValueError("patch edges must be linearly independent")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge1, self.edge2)
        return n / np.linalg.norm(n)


def box_patches(lo, hi) -> list[Patch]:
    """Six faces of the axis-aligned box [lo, hi]."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dx, dy, dz = np.diag(hi - lo)
    return [
        Patch(lo, dy, dz), Patch(lo + dx, dy, dz),
        Patch(lo, dx, dz), Patch(lo + dy, dx, dz),
        Patch(lo, dx, dy), Patch(lo + dz, dx, dy),
    ]


def wall(x0, y0, x1, y1, z0, z1) -> Patch:
    """Vertical wall over the 2D segment (x0, y0)-(x1, y1)."""
    return Patch([x0, y0, z0], [x1 - x0, y1 - y0, 0.0], [0.0, 0.0, z1 - z0])


def grid_walls(free: np.ndarray, cell: float, origin, z0: float, z1: float) -> list[Patch]:
    """Walls along every boundary between free and blocked grid cells.

    ``free[i, j]`` covers x in origin_x + [i, i+1)*cell, y likewise. Collinear
    boundary edges are merged into single patches.
    """
    ox, oy = origin
    pad = np.pad(free.astype(bool), 1, constant_values=False)
    patches = []
    nx, ny = free.shape
    # boundaries perpendicular to x: between cell (i-1, j) and (i, j)
    for i in range(nx + 1):
        edge = pad[i, 1:-1] != pad[i + 1, 1:-1]
        for s, e in _runs(edge):
            x = ox + i * cell
            patches.append(wall(x, oy + s * cell, x, oy + e * cell, z0, z1))
    for j in range(ny + 1):
        edge = pad[1:-1, j] != pad[1:-1, j + 1]
        for s, e in _runs(edge):
            y = oy + j * cell
            patches.append(wall(ox + s * cell, y, ox + e * cell, y, z0, z1))
    return patches


def _runs(mask: np.ndarray):
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
    return list(zip(idx[::2].tolist(), idx[1::2].tolist()))


@dataclass
class World:
    patches: list = field(default_factory=list)

    def add_box(self, lo, hi) -> "World":
        self.patches.extend(box_patches(lo, hi))
        return self

    def arrays(self):
        c = np.array([p.corner for p in self.patches])
        e1 = np.array([p.edge1 for p in self.patches])
        e2 = np.array([p.edge2 for p in self.patches])
        return c, e1, e2

    def raycast(self, origins: np.ndarray, dirs: np.ndarray, chunk: int = 8192) -> np.ndarray:
        """Distance along each unit ray to the nearest patch; inf on a miss."""
        origins = np.asarray(origins, dtype=float).reshape(-1, 3)
        dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
        out = np.full(len(dirs), np.inf)
        if not self.patches:
            return out
        C, E1, E2 = self.arrays()
        N = np.cross(E1, E2)
        sphere_c = C + 0.5 * (E1 + E2)
        sphere_r = 0.5 * np.linalg.norm(E1 + E2, axis=1) + 0.5 * np.linalg.norm(E1 - E2, axis=1)
        for s in range(0, len(dirs), chunk):
            o = origins[s:s + chunk]
            d = dirs[s:s + chunk]
            keep = _cone_candidates(o, d, sphere_c, sphere_r)
            if not keep.any():
                continue
            c, e1, e2, n = C[keep], E1[keep], E2[keep], N[keep]
            # dual basis: in-patch coordinates are a = (x - c).f1, b = (x - c).f2
            g11 = np.einsum("ij,ij->i", e1, e1)
            g12 = np.einsum("ij,ij->i", e1, e2)
            g22 = np.einsum("ij,ij->i", e2, e2)
            det = g11 * g22 - g12 * g12
            f1 = (g22[:, None] * e1 - g12[:, None] * e2) / det[:, None]
            f2 = (g11[:, None] * e2 - g12[:, None] * e1) / det[:, None]
            denom = d @ n.T
            num = np.einsum("mj,mj->m", n, c)[None, :] - o @ n.T
            with np.errstate(divide="ignore", invalid="ignore"):
                t = num / denom
            hit_ok = (np.abs(denom) > 1e-12) & (t > 1e-9)
            t = np.where(hit_ok, t, np.inf)
            tf = np.where(hit_ok, t, 0.0)
            a = o @ f1.T - np.einsum("mj,mj->m", c, f1)[None, :] + tf * (d @ f1.T)
            b = o @ f2.T - np.einsum("mj,mj->m", c, f2)[None, :] + tf * (d @ f2.T)
            inside = (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1)
            t = np.where(inside, t, np.inf)
            out[s:s + chunk] = t.min(axis=1)
        return out


def _cone_candidates(origins, dirs, centers, radii) -> np.ndarray:
    """Patches whose bounding sphere can meet any ray of the bundle."""
    o_mid = origins.mean(axis=0)
    spread = np.linalg.norm(origins - o_mid, axis=1).max()
    m = dirs.mean(axis=0)
    norm = np.linalg.norm(m)
    if norm < 0.5:
        return np.ones(len(centers), dtype=bool)
    m /= norm
    half = np.arccos(np.clip(dirs @ m, -1.0, 1.0)).max()
    if half > np.radians(80.0):
        return np.ones(len(centers), dtype=bool)
    to = centers - o_mid
    dist = np.linalg.norm(to, axis=1)
    r = radii + spread
    inside = dist <= r
    ang = np.arccos(np.clip((to @ m) / np.where(inside, 1.0, dist), -1.0, 1.0))
    ang_r = np.arcsin(np.clip(r / np.where(inside, 1.0, dist), 0.0, 1.0))
    return inside | (ang - ang_r <= half)
