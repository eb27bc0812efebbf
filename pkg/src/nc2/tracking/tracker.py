"""Per-object NC2 tracks, frame-by-frame association and track life cycle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ConfigurationError, NC2Error
from ..filters import NC2Config, NC2Filter
from .geometry import N_X, N_Z, T_MD_FLOOR, assign, build_cv_model, gate, iou3d

log = logging.getLogger(__name__)

CONFIRM_HITS = 3
DELETE_MISSES = 3
TRACK_CONFIG = dict(warmup=10, n_cal=30)
# Initial state variance: positions/sizes, then velocities (m^2, (m/frame)^2).
P0_DIAG = (1.0,) * 6 + (10.0,) * 3
# Added to the all-ones initial Q and R. A rank-one R lets the first update
# collapse P in five measured directions, after which S is singular; a
# smaller ridge keeps the rank-one part dominant, which couples box-size
# noise into the velocity estimate.
INIT_RIDGE = 10.0


@dataclass(frozen=True)
class Detection:
    frame: int
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    score: float = 1.0

    def __post_init__(self):
        if len(self.center) != 3 or len(self.size) != 3:
            raise ConfigurationError("center and size need three components each")
        if min(self.size) <= 0:
            raise ConfigurationError(f"box size must be positive, got {self.size}")
        if not 0.0 <= self.score <= 1.0:
            raise ConfigurationError(f"score must lie in [0, 1], got {self.score}")

    @property
    def z(self) -> np.ndarray:
        return np.array(self.center + self.size, dtype=float)


class TrackStatus(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    COASTING = "coasting"
    DELETED = "deleted"


@dataclass
class Track:
    id: int
    filter: NC2Filter
    hit_streak: int = 1
    miss_count: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    history: list[tuple[int, bool]] = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return self.filter.state.x

    @property
    def r_hat(self) -> np.ndarray:
        return self.filter._measurement_cov()

    @property
    def q_hat(self) -> np.ndarray:
        return self.filter._process_cov()

    @property
    def emitted(self) -> bool:
        return self.status in (TrackStatus.CONFIRMED, TrackStatus.COASTING)


@dataclass(frozen=True)
class TrackRecord:
    """One emitted track state; the row layout of the track CSV."""

    frame: int
    track_id: int
    x: tuple[float, ...]
    status: str
    q_hat: np.ndarray | None = None
    r_hat: np.ndarray | None = None


@dataclass(frozen=True)
class LifecycleEvent:
    frame: int
    track_id: int
    event: str  # "birth", "confirm" or "delete"


class Tracker:
    """Multi-object tracker running one NC2 filter per track.

    Frames must be fed in increasing order. Each :meth:`step` returns the
    records of all confirmed and coasting tracks after that frame.
    """

    def __init__(self, config: NC2Config | None = None, gate_floor: float = T_MD_FLOOR,
                 keep_covariances: bool = False):
        self.model = build_cv_model()
        self.config = config or NC2Config(**TRACK_CONFIG)
        self.gate_floor = gate_floor
        self.keep_covariances = keep_covariances
        self.tracks: list[Track] = []
        self.events: list[LifecycleEvent] = []
        self.matches: list[tuple[int, int, int]] = []  # (frame, detection index, track id)
        self._next_id = 1
        self._frame: int | None = None

    def _spawn(self, det: Detection, frame: int) -> Track:
        x0 = np.concatenate([det.z, np.zeros(3)])
        q0 = np.ones((N_X, N_X)) + INIT_RIDGE * np.eye(N_X)
        r0 = np.ones((N_Z, N_Z)) + INIT_RIDGE * np.eye(N_Z)
        f = NC2Filter(self.model, q0, r0, self.config, x0=x0, p0=np.diag(P0_DIAG))
        track = Track(self._next_id, f, history=[(frame, True)])
        self._next_id += 1
        self.events.append(LifecycleEvent(frame, track.id, "birth"))
        return track

    def similarity(self, detections: list[Detection]) -> np.ndarray:
        """Gated IoU matrix, detections by rows and tracks by columns."""
        sim = np.zeros((len(detections), len(self.tracks)))
        for j, t in enumerate(self.tracks):
            pred = self.model.h @ t.x
            r_hat = t.r_hat
            for i, det in enumerate(detections):
                if gate(det.center, pred[:3], r_hat, self.gate_floor):
                    sim[i, j] = iou3d(det.z, pred)
        return sim

    def _delete(self, track: Track, frame: int, reason: str = "") -> None:
        track.status = TrackStatus.DELETED
        self.events.append(LifecycleEvent(frame, track.id, "delete"))
        if reason:
            log.info("track %d deleted at frame %d: %s", track.id, frame, reason)

    def step(self, frame: int, detections: list[Detection]) -> list[TrackRecord]:
        if self._frame is not None and frame <= self._frame:
            raise ConfigurationError(f"frames must increase: got {frame} after {self._frame}")
        if any(d.frame != frame for d in detections):
            raise ConfigurationError("all detections of a step must belong to its frame")
        self._frame = frame

        alive = []
        for t in self.tracks:
            try:
                t.filter.predict()
                alive.append(t)
            except (NC2Error, np.linalg.LinAlgError, FloatingPointError) as exc:
                self._delete(t, frame, f"prediction failed: {exc}")
        self.tracks = alive

        result = assign(self.similarity(detections))
        survivors = []
        for i, j in result.matches:
            t = self.tracks[j]
            try:
                t.filter.update(detections[i].z)
            except (NC2Error, np.linalg.LinAlgError, FloatingPointError) as exc:
                self._delete(t, frame, f"update failed: {exc}")
                continue
            self.matches.append((frame, i, t.id))
            t.history.append((frame, True))
            t.hit_streak += 1
            t.miss_count = 0
            if t.status is TrackStatus.COASTING:
                t.status = TrackStatus.CONFIRMED
            elif t.status is TrackStatus.TENTATIVE and t.hit_streak >= CONFIRM_HITS:
                t.status = TrackStatus.CONFIRMED
                self.events.append(LifecycleEvent(frame, t.id, "confirm"))
            survivors.append(t)
        for j in result.unmatched_tracks:
            t = self.tracks[j]
            t.history.append((frame, False))
            t.hit_streak = 0
            t.miss_count += 1
            if t.miss_count >= DELETE_MISSES:
                self._delete(t, frame)
                continue
            if t.status is TrackStatus.CONFIRMED:
                t.status = TrackStatus.COASTING
            survivors.append(t)
        for i in result.unmatched_detections:
            t = self._spawn(detections[i], frame)
            self.matches.append((frame, i, t.id))
            survivors.append(t)
        self.tracks = sorted(survivors, key=lambda t: t.id)
        return self.emit(frame)

    def emit(self, frame: int) -> list[TrackRecord]:
        out = []
        for t in self.tracks:
            if not t.emitted:
                continue
            out.append(TrackRecord(
                frame, t.id, tuple(float(v) for v in t.x), t.status.value,
                t.q_hat.copy() if self.keep_covariances else None,
                t.r_hat.copy() if self.keep_covariances else None,
            ))
        return out


def tracker_step(tracker: Tracker, frame: int, detections: list[Detection]) -> list[TrackRecord]:
    return tracker.step(frame, detections)


def run_tracker(detections: list[Detection], tracker: Tracker | None = None,
                frames=None) -> tuple[Tracker, list[TrackRecord]]:
    """Feed detections grouped by frame; frames without detections still step.

    ``frames`` defaults to every integer from the first to the last
    detection frame.
    """
    tracker = tracker or Tracker()
    by_frame: dict[int, list[Detection]] = {}
    for d in detections:
        by_frame.setdefault(d.frame, []).append(d)
    if frames is None:
        frames = range(min(by_frame), max(by_frame) + 1) if by_frame else range(0)
    records: list[TrackRecord] = []
    for k in frames:
        records.extend(tracker.step(k, by_frame.get(k, [])))
    return tracker, records
