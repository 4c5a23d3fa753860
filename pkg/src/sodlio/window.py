"""Overlap-driven sliding-window step control and frame extraction.

The window always spans ``frame_length`` seconds of the point stream. Each
update advances it by ``shift_time``; the newly covered slice is the latest
observation and the remainder is carried over as historical points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# guards ceil() against quotients like (1 - 0.95) / 0.05 = 1.0000000000000009
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class WindowConfig:
    frame_length: float = 0.1
    seg_step: float = 0.05
    min_shift: float = 0.008
    history_weight_factor: float = 1.0

    def __post_init__(self):
        if not self.frame_length > 0:
            raise ValueError("frame_length must be positive")
        if not 0 < self.seg_step <= 1:
            raise ValueError("seg_step must lie in (0, 1]")
        if not 0 < self.min_shift <= self.frame_length:
            raise ValueError("min_shift must lie in (0, frame_length]")
        if self.history_weight_factor < 0:
            raise ValueError("history_weight_factor must be non-negative")


@dataclass(frozen=True)
class StepPlan:
    seg_time: int
    shift_time: float
    echo_time: int


def seg_time_for(overlap: float, seg_step: float) -> int:
    return math.ceil((1.0 - overlap) / seg_step - _CEIL_EPS) + 1


def echo_time_for(seg_time: int) -> int:
    return 1 if seg_time <= 2 else seg_time


def compute_step(overlap: float, cfg: WindowConfig) -> StepPlan:
    if not 0.0 <= overlap <= 1.0:
        raise ValueError(f"overlap degree {overlap} outside [0, 1]")
    seg = seg_time_for(overlap, cfg.seg_step)
    shift = cfg.frame_length * 2.0 / seg
    shift = min(max(shift, cfg.min_shift), cfg.frame_length)
    return StepPlan(seg, shift, echo_time_for(seg))


class WindowController:
    """Holds the step plan in force and applies the echo rule on updates."""

    def __init__(self, cfg: WindowConfig, initial_overlap: float = 1.0):
        self.cfg = cfg
        self.plan = compute_step(initial_overlap, cfg)

    def on_update(self, overlap: float) -> StepPlan:
        cand = compute_step(overlap, self.cfg)
        cur = self.plan
        if cand.seg_time > cur.seg_time:
            self.plan = cand
        elif cur.echo_time - 1 <= 0:
            self.plan = cand
        else:
            self.plan = StepPlan(cur.seg_time, cur.shift_time, cur.echo_time - 1)
        return self.plan


class NotReady(Exception):
    """The stream does not yet cover the requested window end."""


@dataclass
class Frame:
    latest_t: np.ndarray
    latest: np.ndarray
    historical_t: np.ndarray
    historical: np.ndarray
    historical_weight: np.ndarray
    end_time: float

    @property
    def latest_weight(self) -> np.ndarray:
        return np.ones(len(self.latest))


class StreamBuffer:
    """Time-ordered (timestamp, point) store."""

    def __init__(self, t=None, points=None):
        self.t = np.empty(0) if t is None else np.asarray(t, dtype=float)
        self.points = np.empty((0, 3)) if points is None else np.asarray(points, dtype=float).reshape(-1, 3)
        if len(self.t) != len(self.points):
            raise ValueError("timestamp and point counts differ")
        if np.any(np.diff(self.t) < 0):
            raise ValueError("timestamps must be non-decreasing")
        self.covered_until = float(self.t[-1]) if len(self.t) else -np.inf

    def __len__(self) -> int:
        return len(self.t)

    def push(self, t, points, covered_until: float | None = None) -> None:
        t = np.asarray(t, dtype=float)
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(t) and len(self.t) and t[0] < self.t[-1]:
            raise ValueError("pushed points are older than the buffer tail")
        if np.any(np.diff(t) < 0):
            raise ValueError("timestamps must be non-decreasing")
        self.t = np.concatenate([self.t, t])
        self.points = np.concatenate([self.points, points])
        tail = float(t[-1]) if len(t) else -np.inf
        self.covered_until = max(self.covered_until, tail,
                                 -np.inf if covered_until is None else covered_until)

    def span(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    def select(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        """Points with ``lo < t <= hi``."""
        a = np.searchsorted(self.t, lo, side="right")
        b = np.searchsorted(self.t, hi, side="right")
        return self.t[a:b], self.points[a:b]

    def evict(self, end_time: float, horizon: float) -> None:
        """Drop points older than ``end_time - horizon``."""
        if not len(self.t):
            return
        cut = np.searchsorted(self.t, end_time - horizon, side="left")
        self.t = self.t[cut:]
        self.points = self.points[cut:]


def history_weight(age, frame_length: float, factor: float) -> np.ndarray:
    return 1.0 / (1.0 + factor * np.asarray(age, dtype=float) / frame_length)


def extract_frame(buffer: StreamBuffer, plan: StepPlan, prev_end: float,
                  cfg: WindowConfig) -> Frame:
    end = prev_end + plan.shift_time
    if buffer.covered_until < end:
        raise NotReady(f"stream covers up to {buffer.covered_until}, need {end}")
    lt, lp = buffer.select(prev_end, end)
    ht, hp = buffer.select(prev_end - (cfg.frame_length - plan.shift_time), prev_end)
    w = history_weight(end - ht, cfg.frame_length, cfg.history_weight_factor)
    return Frame(lt, lp, ht, hp, w, end)
