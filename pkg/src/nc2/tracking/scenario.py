"""Synthetic multi-object scenes, tracking metrics and a life-cycle oracle.

The default scene has five constant-velocity objects whose paths cross at
different times, random detection dropout and a detection noise level that
doubles half-way through.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .tracker import CONFIRM_HITS, DELETE_MISSES, Detection, Tracker, TrackRecord, run_tracker


@dataclass(frozen=True)
class ObjectPath:
    start: int
    end: int  # last frame (inclusive) on which the object exists
    p0: tuple[float, float, float]
    velocity: tuple[float, float, float]
    size: tuple[float, float, float] = (4.0, 1.8, 1.6)

    def center(self, frame: int) -> np.ndarray:
        return np.asarray(self.p0) + (frame - self.start) * np.asarray(self.velocity)

    def alive(self, frame: int) -> bool:
        return self.start <= frame <= self.end


# Paths cross pairwise (e.g. objects 0 and 1 both pass the origin), but the
# crossings happen at different times, so closest approaches stay above 5 m.
DEFAULT_PATHS = (
    ObjectPath(0, 119, (-30.0, 0.0, 0.0), (0.5, 0.0, 0.0)),
    ObjectPath(0, 119, (0.0, -20.0, 0.0), (0.0, 0.5, 0.0)),
    ObjectPath(10, 109, (-25.0, -25.0, 0.0), (0.45, 0.45, 0.0)),
    ObjectPath(20, 99, (20.0, 15.0, 0.0), (-0.5, -0.2, 0.0)),
    ObjectPath(30, 119, (15.0, -15.0, 0.0), (-0.3, 0.4, 0.0), (4.5, 2.0, 1.8)),
)


@dataclass
class Scenario:
    paths: tuple[ObjectPath, ...]
    n_frames: int
    detections: list[Detection]
    det_objects: list[int]  # ground-truth object of each detection
    detected: dict[int, set[int]] = field(default_factory=dict)  # object -> frames seen

    def by_frame(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for n, d in enumerate(self.detections):
            out.setdefault(d.frame, []).append(n)
        return out


def make_scenario(seed: int = 0, n_frames: int = 120, dropout: float = 0.1,
                  noise_std: float = 0.05, noise_gain: float = 2.0,
                  paths=DEFAULT_PATHS) -> Scenario:
    """Noisy detections of ``paths``; the noise std is multiplied by
    ``noise_gain`` from frame ``n_frames // 2`` on.

    Detection order inside a frame is shuffled so that it carries no
    identity information.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    dets: list[Detection] = []
    owners: list[int] = []
    seen: dict[int, set[int]] = {i: set() for i in range(len(paths))}
    for k in range(n_frames):
        std = noise_std * (noise_gain if k >= n_frames // 2 else 1.0)
        frame_dets = []
        for obj, path in enumerate(paths):
            if not path.alive(k):
                continue
            drop = rng.random() < dropout
            noise = rng.normal(0.0, std, 6)
            if drop:
                continue
            center = path.center(k) + noise[:3]
            size = np.maximum(np.asarray(path.size) + noise[3:], 0.1)
            frame_dets.append((obj, Detection(k, tuple(center), tuple(size), 1.0)))
            seen[obj].add(k)
        for idx in rng.permutation(len(frame_dets)):
            obj, det = frame_dets[idx]
            dets.append(det)
            owners.append(obj)
    return Scenario(tuple(paths), n_frames, dets, owners, seen)


def lifecycle_oracle(scn: Scenario) -> list[tuple[int, int, str]]:
    """Expected ``(object, frame, event)`` triples under perfect association.

    A track is born on a detection with no live track for the object, is
    confirmed on the third consecutive hit, and is deleted on the third
    consecutive frame without a detection.
    """
    events = []
    for obj in range(len(scn.paths)):
        live = False
        confirmed = False
        hits = misses = 0
        for k in range(scn.n_frames):
            if k in scn.detected[obj]:
                if not live:
                    live, confirmed, hits, misses = True, False, 1, 0
                    events.append((obj, k, "birth"))
                    continue
                hits += 1
                misses = 0
                if not confirmed and hits >= CONFIRM_HITS:
                    confirmed = True
                    events.append((obj, k, "confirm"))
            elif live:
                hits = 0
                misses += 1
                if misses >= DELETE_MISSES:
                    live = False
                    events.append((obj, k, "delete"))
    return sorted(events)


def track_owners(scn: Scenario, tracker: Tracker) -> dict[int, int]:
    """Majority ground-truth object of the detections each track consumed."""
    per_frame = scn.by_frame()
    votes: dict[int, Counter] = {}
    for frame, i, tid in tracker.matches:
        votes.setdefault(tid, Counter())[scn.det_objects[per_frame[frame][i]]] += 1
    return {tid: min(c.items(), key=lambda kv: (-kv[1], kv[0]))[0] for tid, c in votes.items()}


@dataclass
class ScenarioMetrics:
    coverage: float
    id_switches: int
    lifecycle_ok: bool
    expected_events: list
    observed_events: list
    n_tracks: int


def evaluate(scn: Scenario, tracker: Tracker, records: list[TrackRecord],
             max_dist: float = 1.0) -> ScenarioMetrics:
    owners = track_owners(scn, tracker)
    emitted: dict[int, list[TrackRecord]] = {}
    for r in records:
        emitted.setdefault(r.frame, []).append(r)
    total = covered = 0
    for obj, path in enumerate(scn.paths):
        for k in range(max(path.start, 0), min(path.end, scn.n_frames - 1) + 1):
            total += 1
            truth = path.center(k)[:2]
            for r in emitted.get(k, []):
                if owners.get(r.track_id) == obj and np.hypot(*(np.asarray(r.x[:2]) - truth)) < max_dist:
                    covered += 1
                    break

    # identity switches: changes of the confirmed track consuming an object's detections
    per_frame = scn.by_frame()
    emitted_ids = {(r.frame, r.track_id) for r in records}
    last: dict[int, int] = {}
    switches = 0
    for frame, i, tid in sorted(tracker.matches):
        if (frame, tid) not in emitted_ids:
            continue
        obj = scn.det_objects[per_frame[frame][i]]
        if obj in last and last[obj] != tid:
            switches += 1
        last[obj] = tid

    observed = sorted((owners.get(e.track_id, -1), e.frame, e.event) for e in tracker.events)
    expected = lifecycle_oracle(scn)
    return ScenarioMetrics(
        covered / total if total else 1.0, switches, observed == expected, expected, observed,
        len({e.track_id for e in tracker.events}),
    )


def run_scenario(seed: int = 0, **kwargs) -> tuple[Scenario, Tracker, list[TrackRecord], ScenarioMetrics]:
    scn = make_scenario(seed, **kwargs)
    tracker = Tracker(keep_covariances=True)
    tracker, records = run_tracker(scn.detections, tracker, frames=range(scn.n_frames))
    return scn, tracker, records, evaluate(scn, tracker, records)
