"""Motion-only multi-object tracking: constant-velocity Kalman filter, IOU gating and
optimal assignment, with per-track violation accounting.

Instance tracks follow the motorcycle box; the instance's trapezium rides
along as payload. Each class pool (instance, helmet, no_helmet) is matched
independently.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import Rect, rect_iou

POOLS = ("instance", "helmet", "no_helmet")
GATE_COST = 1e6
MIN_SIZE = 1e-3

STD_POSITION = 1.0 / 20.0
STD_VELOCITY = 1.0 / 160.0


@dataclass
class TrackerConfig:
    min_hits: int = 3
    max_age: int = 30
    iou_gate: float = 0.3
    violation_min_frames: int = 3

    def __post_init__(self):
        if self.min_hits <= 0 or self.max_age <= 0 or self.violation_min_frames <= 0:
            raise ValueError("tracker counts must be positive")
        if not 0.0 < self.iou_gate <= 1.0:
            raise ValueError("iou_gate must lie in (0, 1]")


def hungarian(cost) -> dict[int, int]:
    """Minimum-cost one-to-one assignment, row -> column. Rectangular input is fine."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return {}
    rows, cols = linear_sum_assignment(cost)
    return {int(r): int(c) for r, c in zip(rows, cols)}


_F = np.eye(8)
_F[:4, 4:] = np.eye(4)
_H = np.eye(4, 8)


@dataclass
class KalmanState:
    mean: np.ndarray  # cx, cy, w, h, vcx, vcy, vw, vh
    covariance: np.ndarray

    @classmethod
    def from_rect(cls, r: Rect) -> "KalmanState":
        cx, cy = r.center
        mean = np.array([cx, cy, r.width, r.height, 0.0, 0.0, 0.0, 0.0])
        s = max(r.height, MIN_SIZE)
        std = np.r_[np.full(4, 2 * STD_POSITION * s), np.full(4, 10 * STD_VELOCITY * s)]
        return cls(mean, np.diag(std ** 2))

    def rect(self) -> Rect:
        cx, cy, w, h = self.mean[:4]
        return Rect.from_center(cx, cy, max(w, MIN_SIZE), max(h, MIN_SIZE))

    def predict(self) -> None:
        s = max(self.mean[3], MIN_SIZE)
        q = np.r_[np.full(4, STD_POSITION * s), np.full(4, STD_VELOCITY * s)] ** 2
        self.mean = _F @ self.mean
        self.covariance = _F @ self.covariance @ _F.T + np.diag(q)
        self._fix()

    def update(self, r: Rect) -> None:
        cx, cy = r.center
        z = np.array([cx, cy, r.width, r.height])
        s = max(self.mean[3], MIN_SIZE)
        R = np.diag(np.full(4, STD_POSITION * s) ** 2)
        P = self.covariance
        S = _H @ P @ _H.T + R
        K = np.linalg.solve(S, _H @ P).T
        self.mean = self.mean + K @ (z - _H @ self.mean)
        # Joseph form keeps the covariance symmetric positive semi-definite.
        A = np.eye(8) - K @ _H
        self.covariance = A @ P @ A.T + K @ R @ K.T
        self._fix()

    def _fix(self) -> None:
        self.covariance = (self.covariance + self.covariance.T) / 2.0
        self.mean[2] = max(self.mean[2], MIN_SIZE)
        self.mean[3] = max(self.mean[3], MIN_SIZE)


@dataclass
class TrackInput:
    """A detection offered to the tracker; ``flags`` feed the violation counters."""

    rect: Rect
    flags: dict = field(default_factory=dict)
    payload: Any = None
    feature: np.ndarray | None = None  # reserved for appearance matching; unused


@dataclass
class Track:
    track_id: int
    cls: str
    state: KalmanState
    lifecycle: str = "tentative"
    hits: int = 1
    misses: int = 0
    ever_confirmed: bool = False
    violation_frames: int = 0
    helmet_violation_frames: int = 0  # instance tracks: frames with a no-helmet rider
    evidence: list[int] = field(default_factory=list)
    helmet_evidence: list[int] = field(default_factory=list)
    payload: Any = None
    feature: np.ndarray | None = None
    first_frame: int = 0
    last_frame: int = 0


def predict(tracks: Sequence[Track]) -> None:
    """Advance every track one frame under constant velocity and count a provisional miss."""
    for t in tracks:
        t.state.predict()
        t.misses += 1


@dataclass
class TrackOutput:
    track_id: int
    cls: str
    lifecycle: str
    rect: Rect
    det_index: int


class Tracker:
    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.pools: dict[str, list[Track]] = {p: [] for p in POOLS}
        self.finished: list[Track] = []
        self._ids = itertools.count(1)
        self.last_frame: int | None = None

    def all_tracks(self) -> list[Track]:
        live = [t for p in POOLS for t in self.pools[p]]
        return sorted(self.finished + live, key=lambda t: t.track_id)

    def step(self, frame: int, detections: dict[str, Sequence[TrackInput]]) -> list[TrackOutput]:
        if self.last_frame is not None and frame <= self.last_frame:
            raise ValueError(f"frame {frame} is not after frame {self.last_frame}")
        self.last_frame = frame
        unknown = set(detections) - set(POOLS)
        if unknown:
            raise ValueError(f"unknown track classes {sorted(unknown)}")
        out = []
        for pool in POOLS:
            out.extend(self._step_pool(pool, frame, list(detections.get(pool, ()))))
        return out

    def _step_pool(self, pool: str, frame: int, dets: list[TrackInput]) -> list[TrackOutput]:
        cfg = self.cfg
        tracks = self.pools[pool]
        predict(tracks)
        matches = self.match(tracks, dets)
        out = []
        matched_dets = set()
        for ti, di in matches:
            t, d = tracks[ti], dets[di]
            t.state.update(d.rect)
            t.hits += 1
            t.misses = 0
            t.payload = d.payload
            t.feature = d.feature
            self._record(t, d, frame)
            matched_dets.add(di)
            out.append(TrackOutput(t.track_id, pool, t.lifecycle, d.rect, di))
        for di, d in enumerate(dets):
            if di in matched_dets:
                continue
            t = Track(next(self._ids), pool, KalmanState.from_rect(d.rect), payload=d.payload,
                      feature=d.feature, first_frame=frame)
            self._record(t, d, frame)
            tracks.append(t)
            out.append(TrackOutput(t.track_id, pool, t.lifecycle, d.rect, di))
        keep = []
        for t in tracks:
            if t.misses > cfg.max_age:
                t.lifecycle = "deleted"
                self.finished.append(t)
            else:
                keep.append(t)
        self.pools[pool] = keep
        return out

    def match(self, tracks: Sequence[Track], dets: Sequence[TrackInput]) -> list[tuple[int, int]]:
        if not tracks or not dets:
            return []
        preds = [t.state.rect() for t in tracks]
        iou = np.array([[rect_iou(p, d.rect) for d in dets] for p in preds])
        cost = np.where(iou >= self.cfg.iou_gate, 1.0 - iou, GATE_COST)
        pairs = hungarian(cost)
        return sorted((r, c) for r, c in pairs.items() if cost[r, c] < GATE_COST)

    def _record(self, t: Track, d: TrackInput, frame: int) -> None:
        t.last_frame = frame
        if t.lifecycle == "tentative" and t.hits >= self.cfg.min_hits:
            t.lifecycle = "confirmed"
            t.ever_confirmed = True
        if t.lifecycle != "confirmed":
            return
        if d.flags.get("violation"):
            t.violation_frames += 1
            t.evidence.append(frame)
        if d.flags.get("helmet_violation"):
            t.helmet_violation_frames += 1
            t.helmet_evidence.append(frame)
