"""Plain-text dataset and result files.

points CSV   ``t,x,y,z``                (s, m, sensor frame)
IMU CSV      ``t,wx,wy,wz,ax,ay,az``    (s, rad/s, m/s^2)
trajectory   TUM lines ``t x y z qx qy qz qw``
"""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from .imu import ImuSample

POINT_COLUMNS = ["t", "x", "y", "z"]
IMU_COLUMNS = ["t", "wx", "wy", "wz", "ax", "ay", "az"]
FLOAT_FMT = "%.9g"


class DatasetError(ValueError):
    """Malformed input file; ``t`` holds the offending timestamp when known."""

    def __init__(self, msg: str, t: float | None = None):
        super().__init__(msg if t is None else f"{msg} (t={t:.6f})")
        self.t = t


def _read_table(path, columns: list[str]) -> np.ndarray:
    try:
        df = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DatasetError(f"{path}: {exc}") from None
    if list(df.columns) != columns:
        raise DatasetError(f"{path}: expected header {','.join(columns)}, got {','.join(map(str, df.columns))}")
    try:
        arr = df.to_numpy(dtype=float)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    bad = ~np.all(np.isfinite(arr), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DatasetError(f"{path}: non-finite value on data row {i + 1}",
                           float(arr[i, 0]) if np.isfinite(arr[i, 0]) else None)
    back = np.flatnonzero(np.diff(arr[:, 0]) < 0)
    if len(back):
        raise DatasetError(f"{path}: timestamps go backwards", float(arr[back[0] + 1, 0]))
    return arr


def read_points(path) -> tuple[np.ndarray, np.ndarray]:
    arr = _read_table(path, POINT_COLUMNS)
    return arr[:, 0].copy(), arr[:, 1:4].copy()


def write_points(path, t, points) -> None:
    data = np.column_stack([np.asarray(t, dtype=float), np.asarray(points, dtype=float).reshape(-1, 3)])
    pd.DataFrame(data, columns=POINT_COLUMNS).to_csv(path, index=False, float_format=FLOAT_FMT)


def read_imu(path) -> list[ImuSample]:
    arr = _read_table(path, IMU_COLUMNS)
    return [ImuSample(float(r[0]), r[1:4].copy(), r[4:7].copy()) for r in arr]


def write_imu(path, samples: list[ImuSample]) -> None:
    data = np.array([[s.t, *s.gyro, *s.acc] for s in samples]).reshape(-1, 7)
    pd.DataFrame(data, columns=IMU_COLUMNS).to_csv(path, index=False, float_format=FLOAT_FMT)


def write_tum(path, t, positions, quats_wxyz) -> None:
    """One line per pose; quaternions are reordered to x y z w."""
    t = np.asarray(t, dtype=float)
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    q = np.asarray(quats_wxyz, dtype=float).reshape(-1, 4)
    with open(path, "w") as fh:
        for ti, pi, qi in zip(t, p, q):
            fh.write(f"{ti:.6f} {pi[0]:.6f} {pi[1]:.6f} {pi[2]:.6f} "
                     f"{qi[1]:.9f} {qi[2]:.9f} {qi[3]:.9f} {qi[0]:.9f}\n")


def read_tum(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(t, positions, quaternions_wxyz)``."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty file is reported below
            arr = np.loadtxt(path, comments="#", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{path}: {exc}") from None
    if arr.size == 0:
        raise DatasetError(f"{path}: empty trajectory")
    if arr.shape[1] != 8:
        raise DatasetError(f"{path}: expected 8 columns, got {arr.shape[1]}")
    q = arr[:, [7, 4, 5, 6]]
    return arr[:, 0].copy(), arr[:, 1:4].copy(), q


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
