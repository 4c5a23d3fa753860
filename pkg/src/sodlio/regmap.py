"""Voxel-bucketed point map for nearest-neighbor search and plane fitting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .overlap import pack, voxel_keys


@dataclass(frozen=True)
class PlaneFit:
    normal: np.ndarray
    anchor: np.ndarray
    valid: bool
    rms: float


def fit_plane(cluster, inlier_threshold: float) -> PlaneFit:
    """Least-squares plane through ``cluster`` (at least 3 points).

    The normal is the smallest-eigenvalue direction of the centered scatter
    matrix. The fit is valid only if every point lies within
    ``inlier_threshold`` of the plane and the cluster is not collinear.
    """
    pts = np.asarray(cluster, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise ValueError("plane fit needs at least 3 points")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    normal = evecs[:, 0]
    normal = normal / np.linalg.norm(normal)
    dist = centered @ normal
    rms = float(np.sqrt(np.mean(dist ** 2)))
    scale = max(evals[2], 1e-300)
    degenerate = evals[1] <= 1e-10 * scale
    valid = bool(not degenerate and np.all(np.abs(dist) <= inlier_threshold))
    return PlaneFit(normal, centroid, valid, rms)


def fit_planes_batch(clusters: np.ndarray, inlier_threshold: float):
    """Vectorized ``fit_plane`` over a (Q, k, 3) stack of clusters.

    Returns ``(normals, anchors, valid, rms)``.
    """
    centroid = clusters.mean(axis=1)
    centered = clusters - centroid[:, None, :]
    scatter = np.einsum("qki,qkj->qij", centered, centered)
    evals, evecs = np.linalg.eigh(scatter)
    normals = evecs[:, :, 0]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    dist = np.einsum("qki,qi->qk", centered, normals)
    rms = np.sqrt(np.mean(dist ** 2, axis=1))
    scale = np.maximum(evals[:, 2], 1e-300)
    valid = (evals[:, 1] > 1e-10 * scale) & np.all(np.abs(dist) <= inlier_threshold, axis=1)
    return normals, centroid, valid, rms


class RegistrationMap:
    """World-frame points bucketed by voxel, first-in retention per bucket.

    With ``point_spacing`` set, at most one point is kept per cell of that
    size, so repeated scans of the same surface do not pile up duplicates.
    """

    def __init__(self, voxel_size: float = 0.5, max_points_per_voxel: int = 20,
                 point_spacing: float | None = None, rebuild_threshold: int = 4000):
        if voxel_size <= 0 or max_points_per_voxel < 1:
            raise ValueError("voxel_size must be positive and capacity at least 1")
        if point_spacing is not None and point_spacing <= 0:
            raise ValueError("point_spacing must be positive")
        self.voxel_size = float(voxel_size)
        self.max_points_per_voxel = int(max_points_per_voxel)
        self.point_spacing = None if point_spacing is None else float(point_spacing)
        self.buckets: dict[int, list[int]] = {}
        self._cells: set[int] = set()
        self._pts = np.empty((1024, 3))
        self._n = 0
        self._tree = None
        self._n_tree = 0
        self._rebuild_threshold = rebuild_threshold

    def __len__(self) -> int:
        return self._n

    @property
    def points(self) -> np.ndarray:
        return self._pts[: self._n]

    def bucket_points(self, code: int) -> np.ndarray:
        return self._pts[self.buckets.get(code, [])]

    def _append(self, pts: np.ndarray) -> np.ndarray:
        need = self._n + len(pts)
        if need > len(self._pts):
            grown = np.empty((max(need, 2 * len(self._pts)), 3))
            grown[: self._n] = self._pts[: self._n]
            self._pts = grown
        idx = np.arange(self._n, need)
        self._pts[self._n:need] = pts
        self._n = need
        return idx

    def merge_frame(self, points_world) -> int:
        """Add points; full buckets reject. Returns the number stored."""
        pts = np.asarray(points_world, dtype=float).reshape(-1, 3)
        if self.point_spacing is not None and len(pts):
            cells = pack(voxel_keys(pts, self.point_spacing))
            _, first = np.unique(cells, return_index=True)
            first.sort()
            fresh = np.array([c not in self._cells for c in cells[first].tolist()], dtype=bool)
            keep = first[fresh]
            pts, cells = pts[keep], cells[keep]
        if not len(pts):
            return 0
        codes = pack(voxel_keys(pts, self.voxel_size))
        order = np.argsort(codes, kind="stable")
        sorted_codes = codes[order]
        uniq, starts = np.unique(sorted_codes, return_index=True)
        ends = np.append(starts[1:], len(order))
        accepted = []
        cap = self.max_points_per_voxel
        for code, s, e in zip(uniq.tolist(), starts.tolist(), ends.tolist()):
            bucket = self.buckets.get(code)
            have = 0 if bucket is None else len(bucket)
            room = cap - have
            if room <= 0:
                continue
            # stable sort keeps arrival order inside a bucket
            accepted.append((code, order[s:s + min(room, e - s)]))
        if not accepted:
            return 0
        take = np.concatenate([a for _, a in accepted])
        take.sort()
        if self.point_spacing is not None:
            self._cells.update(cells[take].tolist())
        idx = self._append(pts[take])
        slot = dict(zip(take.tolist(), idx.tolist()))
        for code, sel in accepted:
            self.buckets.setdefault(code, []).extend(slot[i] for i in sorted(sel.tolist()))
        if self._n - self._n_tree > max(self._rebuild_threshold, self._n_tree // 4):
            self._rebuild()
        return len(take)

    def _rebuild(self) -> None:
        self._n_tree = self._n
        self._tree = cKDTree(self._pts[: self._n].copy()) if self._n else None

    def knn(self, query, k: int = 5, radius: float = 1.0) -> np.ndarray:
        """Up to ``k`` points within ``radius`` of ``query``, nearest first.

        Scans only the query's voxel and the shell of neighbors that can
        hold a point within ``radius``.
        """
        if k < 1:
            raise ValueError("k must be positive")
        q = np.asarray(query, dtype=float).reshape(3)
        if not self._n:
            return np.empty((0, 3))
        shell = int(np.ceil(radius / self.voxel_size))
        center = voxel_keys(q[None], self.voxel_size)[0]
        rng = np.arange(-shell, shell + 1)
        offs = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
        idx = []
        for code in pack(center + offs).tolist():
            b = self.buckets.get(code)
            if b:
                idx.extend(b)
        if not idx:
            return np.empty((0, 3))
        idx = np.array(sorted(idx))
        cand = self._pts[idx]
        dist = np.linalg.norm(cand - q, axis=1)
        inside = dist <= radius
        cand, dist = cand[inside], dist[inside]
        order = np.argsort(dist, kind="stable")[:k]
        return cand[order]

    def knn_batch(self, queries, k: int = 5, radius: float = 1.0):
        """Vectorized k-NN for many queries.

        Returns ``(neighbors, dists)`` of shapes (Q, k, 3) and (Q, k); missing
        slots hold NaN points and infinite distances.
        """
        qs = np.asarray(queries, dtype=float).reshape(-1, 3)
        nq = len(qs)
        nbr = np.full((nq, k, 3), np.nan)
        dist = np.full((nq, k), np.inf)
        if not self._n or not nq:
            return nbr, dist
        if self._n - self._n_tree > self._rebuild_threshold or (self._tree is None):
            self._rebuild()
        cand_d, cand_i = [], []
        if self._tree is not None:
            d, i = self._tree.query(qs, k=k, distance_upper_bound=radius)
            d, i = np.asarray(d).reshape(nq, k), np.asarray(i).reshape(nq, k)
            i = np.where(np.isfinite(d), i, -1)
            cand_d.append(d)
            cand_i.append(i)
        if self._n > self._n_tree:
            # points merged since the last rebuild get a small throwaway tree
            pend = cKDTree(self._pts[self._n_tree:self._n])
            kk = min(k, self._n - self._n_tree)
            d, i = pend.query(qs, k=kk, distance_upper_bound=radius)
            d, i = np.asarray(d).reshape(nq, kk), np.asarray(i).reshape(nq, kk)
            cand_d.append(d)
            cand_i.append(np.where(np.isfinite(d), i + self._n_tree, -1))
        d = np.concatenate(cand_d, axis=1)
        i = np.concatenate(cand_i, axis=1)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        d = np.take_along_axis(d, order, axis=1)
        i = np.take_along_axis(i, order, axis=1)
        dist[:, : d.shape[1]] = d
        ok = i >= 0
        nbr[:, : d.shape[1]][ok] = self._pts[i[ok]]
        return nbr, dist

    def export_xyz(self, path) -> None:
        np.savetxt(path, self.points, fmt="%.6f")
