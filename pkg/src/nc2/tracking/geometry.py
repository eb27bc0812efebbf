"""Motion model, gating, axis-aligned 3D IoU and optimal assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..statespace import SystemModel

N_X = 9
N_Z = 6
T_MD_FLOOR = 0.5
TIE_RTOL = 1e-12


def build_cv_model() -> SystemModel:
    """Constant-velocity model over ``[px py pz l w h vx vy vz]``.

    The frame period is one, so each velocity adds directly to its position.
    ``H`` selects position and size.
    """
    phi = np.eye(N_X)
    phi[0, 6] = phi[1, 7] = phi[2, 8] = 1.0
    h = np.zeros((N_Z, N_X))
    h[np.arange(N_Z), np.arange(N_Z)] = 1.0
    return SystemModel(phi, h)


def gate_threshold(r_hat, floor: float = T_MD_FLOOR) -> float:
    """``sqrt((R11 + R22) / 2)`` from the planar entries of ``r_hat``, floored."""
    r = np.asarray(r_hat, dtype=float)
    t = math.sqrt(max(0.0, (r[0, 0] + r[1, 1]) / 2.0))
    return max(t, floor)


def gate(det_center, predicted_center, r_hat, floor: float = T_MD_FLOOR) -> bool:
    """True when the planar distance is strictly below the gate threshold."""
    d = np.asarray(det_center, dtype=float)[:2] - np.asarray(predicted_center, dtype=float)[:2]
    return bool(math.hypot(d[0], d[1]) < gate_threshold(r_hat, floor))


def iou3d(a, b) -> float:
    """Intersection over union of two axis-aligned boxes ``(px, py, pz, l, w, h)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lo = np.maximum(a[:3] - a[3:6] / 2, b[:3] - b[3:6] / 2)
    hi = np.minimum(a[:3] + a[3:6] / 2, b[:3] + b[3:6] / 2)
    inter = float(np.prod(np.clip(hi - lo, 0.0, None)))
    if inter <= 0.0:
        return 0.0
    union = float(np.prod(a[3:6]) + np.prod(b[3:6])) - inter
    return min(1.0, inter / union) if union > 0 else 0.0


@dataclass
class AssociationResult:
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)

    def total(self, similarity) -> float:
        sim = np.asarray(similarity, dtype=float)
        return float(sum(sim[i, j] for i, j in self.matches))


def _best_total(sim: np.ndarray) -> float:
    if sim.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(sim, maximize=True)
    return float(sim[rows, cols].sum())


def assign(similarity) -> AssociationResult:
    """Maximum-total-similarity matching of detections (rows) to tracks (columns).

    Zero-similarity pairs are never matched. Among equally good assignments
    the one that matches each detection, in index order, to the lowest
    possible track index wins; a detection is left unmatched only when no
    optimal assignment can match it.
    """
    sim = np.atleast_2d(np.asarray(similarity, dtype=float))
    if sim.size == 0:
        n_d = sim.shape[0] if sim.ndim == 2 else 0
        n_t = sim.shape[1] if sim.ndim == 2 else 0
        return AssociationResult([], list(range(n_d)), list(range(n_t)))
    if np.any(sim < 0) or not np.all(np.isfinite(sim)):
        raise ValueError("similarity entries must be finite and nonnegative")
    n_d, n_t = sim.shape
    rows = list(range(n_d))
    cols = list(range(n_t))
    matches = []
    target = _best_total(sim)
    while rows:
        i = rows[0]
        rest = [r for r in rows if r != i]
        chosen = None
        for j in cols:
            if sim[i, j] <= 0.0:
                continue
            others = [c for c in cols if c != j]
            sub = sim[np.ix_(rest, others)] if rest and others else np.zeros((0, 0))
            value = sim[i, j] + _best_total(sub)
            if value >= target - TIE_RTOL * max(1.0, abs(target)):
                chosen = j
                break
        rows = rest
        if chosen is not None:
            matches.append((i, chosen))
            target -= sim[i, chosen]
            cols = [c for c in cols if c != chosen]
    matched_d = {i for i, _ in matches}
    matched_t = {j for _, j in matches}
    return AssociationResult(
        matches,
        [i for i in range(n_d) if i not in matched_d],
        [j for j in range(n_t) if j not in matched_t],
    )
