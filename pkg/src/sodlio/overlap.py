"""Soft-margin voxel occupancy map and frame-to-map spatial overlap degree.

Occupied voxels carry label 0; voxels up to ``d`` shells away carry the
shell index as label. A frame point landing in a label-``i`` voxel counts
with weight ``beta[i]``; points outside the labeled space count zero.

Storage is two-level: a dict of 8x8x8 blocks, each a dense ``uint8`` label
array, behind a flat key -> label interface.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .geometry import Pose

BLOCK = 8
BLOCK_CELLS = BLOCK ** 3
UNLABELED = 255
_OFF = 1 << 20
_MAX_DILATE_ROWS = 1 << 20

METRICS = ("chebyshev", "manhattan")


def voxel_key(p, voxel_size: float) -> tuple[int, int, int]:
    """Floor-quantized integer voxel index of a single point."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    k = np.floor(np.asarray(p, dtype=float) / voxel_size).astype(np.int64)
    return int(k[0]), int(k[1]), int(k[2])


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Vectorized ``voxel_key``; returns an (N, 3) int64 array."""
    return np.floor(np.asarray(points, dtype=float) / voxel_size).astype(np.int64)


def pack(keys: np.ndarray) -> np.ndarray:
    """Pack (N, 3) signed integer triples into single int64 codes."""
    k = keys + _OFF
    return (k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2]


def unpack(codes: np.ndarray) -> np.ndarray:
    mask = (1 << 21) - 1
    return np.stack([(codes >> 42) & mask, (codes >> 21) & mask, codes & mask], axis=1) - _OFF


def default_betas(d: int) -> tuple[float, ...]:
    return tuple(2.0 ** -i for i in range(d + 1))


def margin_distance(delta: np.ndarray, metric: str) -> np.ndarray:
    """Voxel-index distance of integer offsets under the margin metric."""
    a = np.abs(delta)
    if metric == "chebyshev":
        return a.max(axis=-1)
    if metric == "manhattan":
        return a.sum(axis=-1)
    raise ValueError(f"unknown margin metric {metric!r}")


def _dilation_offsets(d: int, metric: str) -> tuple[np.ndarray, np.ndarray]:
    rng = range(-d, d + 1)
    offs = np.array(list(product(rng, rng, rng)), dtype=np.int64).reshape(-1, 3)
    lab = margin_distance(offs, metric)
    keep = lab <= d
    return offs[keep], lab[keep].astype(np.uint8)


def validate_betas(betas, d: int) -> tuple[float, ...]:
    betas = tuple(float(b) for b in betas)
    if len(betas) != d + 1:
        raise ValueError(f"need {d + 1} weights for d={d}, got {len(betas)}")
    if betas[0] != 1.0:
        raise ValueError("beta_0 must be 1")
    if any(b1 >= b0 for b0, b1 in zip(betas, betas[1:])):
        raise ValueError("weights must be strictly decreasing")
    if betas[-1] <= 0.0:
        raise ValueError("last weight must be positive")
    return betas


@dataclass(frozen=True)
class OverlapScore:
    value: float
    counts: tuple[int, ...]
    total: int

    @property
    def unlabeled(self) -> int:
        return self.total - sum(self.counts)


def _score(labels: np.ndarray, betas: tuple[float, ...]) -> OverlapScore:
    n = int(labels.size)
    if n == 0:
        raise ValueError("overlap score of an empty frame is undefined")
    d = len(betas) - 1
    counts = np.bincount(labels[labels <= d].astype(np.int64), minlength=d + 1)
    value = sum(b * int(c) for b, c in zip(betas, counts)) / n
    return OverlapScore(float(value), tuple(int(c) for c in counts), n)


class OccupancyVoxelMap:
    """Layered voxel hash with soft-margin labels.

    Labels only ever decrease; re-inserting the same points is a no-op.
    """

    def __init__(self, voxel_size: float, d: int = 3, betas=None, metric: str = "chebyshev"):
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        if d < 0 or d >= UNLABELED:
            raise ValueError("d must be a small non-negative integer")
        if metric not in METRICS:
            raise ValueError(f"unknown margin metric {metric!r}")
        self.voxel_size = float(voxel_size)
        self.d = int(d)
        self.betas = validate_betas(default_betas(d) if betas is None else betas, d)
        self.metric = metric
        self.blocks: dict[int, np.ndarray] = {}
        self._offsets, self._offset_labels = _dilation_offsets(self.d, metric)

    def __len__(self) -> int:
        return int(sum(np.count_nonzero(b != UNLABELED) for b in self.blocks.values()))

    @staticmethod
    def _split(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        blk = np.floor_divide(keys, BLOCK)
        loc = keys - blk * BLOCK
        local = (loc[:, 0] * BLOCK + loc[:, 1]) * BLOCK + loc[:, 2]
        return pack(blk), local

    def labels_of_keys(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        out = np.full(len(keys), UNLABELED, dtype=np.uint8)
        if not len(keys) or not self.blocks:
            return out
        codes, local = self._split(keys)
        uniq, inv = np.unique(codes, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
        for j, code in enumerate(uniq.tolist()):
            arr = self.blocks.get(code)
            if arr is None:
                continue
            idx = order[bounds[j]:bounds[j + 1]]
            out[idx] = arr[local[idx]]
        return out

    def label(self, key) -> int | None:
        """Margin label of one voxel key, or None when unlabeled."""
        lab = int(self.labels_of_keys(np.array([key]))[0])
        return None if lab == UNLABELED else lab

    def labels_of_points(self, points_world: np.ndarray) -> np.ndarray:
        return self.labels_of_keys(voxel_keys(points_world, self.voxel_size))

    def _apply_min(self, keys: np.ndarray, labels: np.ndarray) -> None:
        codes, local = self._split(keys)
        order = np.argsort(codes, kind="stable")
        codes, local, labels = codes[order], local[order], labels[order]
        uniq, starts = np.unique(codes, return_index=True)
        ends = np.append(starts[1:], len(codes))
        for code, s, e in zip(uniq.tolist(), starts.tolist(), ends.tolist()):
            arr = self.blocks.get(code)
            if arr is None:
                arr = np.full(BLOCK_CELLS, UNLABELED, dtype=np.uint8)
                self.blocks[code] = arr
            np.minimum.at(arr, local[s:e], labels[s:e])

    def insert_frame(self, points_world: np.ndarray) -> int:
        """Mark voxels hit by ``points_world`` and dilate their margins.

        Returns the number of voxels that became newly occupied.
        """
        points_world = np.asarray(points_world, dtype=float).reshape(-1, 3)
        if not len(points_world):
            return 0
        keys = np.unique(voxel_keys(points_world, self.voxel_size), axis=0)
        fresh = keys[self.labels_of_keys(keys) != 0]
        if not len(fresh):
            return 0
        n_off = len(self._offsets)
        step = max(1, _MAX_DILATE_ROWS // n_off)
        for s in range(0, len(fresh), step):
            chunk = fresh[s:s + step]
            cells = (chunk[:, None, :] + self._offsets[None, :, :]).reshape(-1, 3)
            labs = np.tile(self._offset_labels, len(chunk))
            self._apply_min(cells, labs)
        return len(fresh)

    def crop(self, center, radius: float) -> int:
        """Drop blocks whose center lies farther than ``radius`` from ``center``."""
        if not self.blocks:
            return 0
        codes = np.fromiter(self.blocks.keys(), dtype=np.int64, count=len(self.blocks))
        centers = (unpack(codes) + 0.5) * BLOCK * self.voxel_size
        far = np.linalg.norm(centers - np.asarray(center, dtype=float), axis=1) > radius
        for code in codes[far].tolist():
            del self.blocks[code]
        return int(far.sum())

    def stats(self) -> dict:
        counts = np.zeros(self.d + 1, dtype=np.int64)
        for arr in self.blocks.values():
            lab = arr[arr != UNLABELED]
            counts += np.bincount(lab, minlength=self.d + 1)[: self.d + 1]
        return {
            "voxel_size": self.voxel_size,
            "d": self.d,
            "blocks": len(self.blocks),
            "cells_per_label": counts.tolist(),
            "memory_bytes": len(self.blocks) * BLOCK_CELLS,
        }

    def score(self, points_world: np.ndarray) -> OverlapScore:
        return _score(self.labels_of_points(points_world), self.betas)


def overlap_score(omap: OccupancyVoxelMap, points, pose: Pose | None = None) -> OverlapScore:
    """Soft-margin overlap degree of sensor-frame ``points`` placed by ``pose``."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not len(points):
        raise ValueError("overlap score of an empty frame is undefined")
    world = points if pose is None else pose.apply(points)
    return omap.score(world)


def overlap_score_bruteforce(map_points, frame_points, pose: Pose | None, voxel_size: float,
                             d: int, betas=None, metric: str = "chebyshev") -> OverlapScore:
    """Reference overlap score by exhaustive voxel-distance search.

    Each frame point's label is its minimum voxel-index distance to any map
    point's voxel, capped at ``d + 1`` (unlabeled).
    """
    betas = validate_betas(default_betas(d) if betas is None else betas, d)
    frame_points = np.asarray(frame_points, dtype=float).reshape(-1, 3)
    if not len(frame_points):
        raise ValueError("overlap score of an empty frame is undefined")
    if pose is not None:
        frame_points = frame_points @ pose.rot.matrix.T + pose.trans
    fk = np.floor(frame_points / voxel_size).astype(np.int64)
    mk = np.floor(np.asarray(map_points, dtype=float).reshape(-1, 3) / voxel_size).astype(np.int64)
    labels = np.full(len(fk), d + 1, dtype=np.int64)
    if len(mk):
        chunk = max(1, 4_000_000 // len(mk))
        for s in range(0, len(fk), chunk):
            delta = fk[s:s + chunk, None, :] - mk[None, :, :]
            dist = margin_distance(delta, metric).min(axis=1)
            labels[s:s + chunk] = np.minimum(dist, d + 1)
    return _score(labels, betas)
