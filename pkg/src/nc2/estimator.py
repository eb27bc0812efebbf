"""Factorized noise-covariance estimation.

A covariance is split into a scalar intensity (the sum of all its entries) and
an element distribution matrix (the covariance divided by that sum). The
distribution is re-estimated every step from exponentially weighted innovation
moments; the intensity is handled separately by the calibrators.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, InsufficientDataError
from .statespace import SystemModel, symmetrize

EPS_INTENSITY = 1e-12
EPS_SUM = 1e-10
PINV_RTOL = 1e-10
INDEFINITE_RATIO = 0.1
# A fresh distribution is accepted only if it is reasonably conditioned and
# its entry sum is not small next to its trace; otherwise the division by the
# entry sum amplifies noise without bound.
DIST_COND_MIN = 5e-2
DIST_SUM_RATIO = 0.5


@dataclass
class NoiseFactorization:
    """Covariance written as ``intensity * distribution``."""

    intensity: float
    distribution: np.ndarray

    def __post_init__(self):
        d = symmetrize(self.distribution)
        if not np.isfinite(self.intensity) or self.intensity < EPS_INTENSITY:
            raise ConfigurationError(f"intensity must be >= {EPS_INTENSITY}, got {self.intensity}")
        if abs(d.sum() - 1.0) > 1e-9:
            raise ConfigurationError(f"distribution must sum to 1, sums to {d.sum()!r}")
        self.intensity = float(self.intensity)
        self.distribution = d

    @classmethod
    def from_covariance(cls, cov) -> "NoiseFactorization":
        cov = symmetrize(np.atleast_2d(cov))
        total = float(cov.sum())
        if total < EPS_INTENSITY:
            raise ConfigurationError(
                "covariance entry sum must be positive to factorize, got %g" % total
            )
        return cls(total, cov / total)

    def copy(self) -> "NoiseFactorization":
        return NoiseFactorization(self.intensity, self.distribution.copy())


def compose_covariance(f: NoiseFactorization) -> np.ndarray:
    return f.intensity * f.distribution


def pseudo_inverse(m, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose inverse from the SVD.

    Singular values below ``rtol * sigma_max`` are treated as zero.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return m.T.copy()
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    cutoff = rtol * (s[0] if s.size else 0.0)
    inv = np.zeros_like(s)
    keep = s > cutoff
    inv[keep] = 1.0 / s[keep]
    return (vt.T * inv) @ u.T


def psd_project(m) -> np.ndarray:
    """Symmetrize and clip negative eigenvalues at zero."""
    m = symmetrize(m)
    w, v = np.linalg.eigh(m)
    if w[0] >= 0.0:
        return m
    w = np.clip(w, 0.0, None)
    return symmetrize((v * w) @ v.T)


def normalize_distribution(raw, previous, cond_min: float = DIST_COND_MIN,
                           sum_ratio: float = DIST_SUM_RATIO) -> np.ndarray:
    """Turn a raw moment into a unit-sum PSD distribution matrix.

    ``previous`` (a :class:`NoiseFactorization` or a matrix) is returned
    unchanged when the projected moment is rejected: no mass left, an entry
    sum below ``sum_ratio * trace``, or an eigenvalue ratio below
    ``cond_min``. Pass zeros to disable the two ratio guards.
    """
    prev = previous.distribution if isinstance(previous, NoiseFactorization) else previous
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    if raw.shape[0] != raw.shape[1]:
        raise ConfigurationError(f"raw moment must be square, got {raw.shape}")
    keep = np.array(prev, dtype=float, copy=True)
    if not np.all(np.isfinite(raw)):
        return keep
    proj = psd_project(raw)
    if not np.any(proj):
        return keep
    total = proj.sum()
    if total <= EPS_SUM or total <= sum_ratio * np.trace(proj):
        return keep
    if cond_min > 0:
        w = np.linalg.eigvalsh(proj)
        if w[0] <= cond_min * w[-1]:
            return keep
    return proj / total


@lru_cache(maxsize=256)
def _weights(n: int, b: float, offset: int) -> np.ndarray:
    d = 1.0 if n == 1 else (1.0 - b) / (1.0 - b**n)
    w = d * b ** (np.arange(n) + offset)
    w.flags.writeable = False
    return w


def window_weights(n: int, b: float, offset: int = 0) -> np.ndarray:
    """Weights ``d_{N,b} * b**(j + offset)`` for lags ``j = 0..n-1``."""
    return _weights(int(n), float(b), int(offset))


class MomentWindow:
    """Ring buffer of the most recent innovations and ``H P H^T`` terms.

    The usable window at step ``k`` is ``N = min(k - 1, n_max)``: the first
    innovation of a run is never used.

    With ``recursive=True`` the weighted sums are carried forward by the
    one-step recursion once the window length is constant, instead of being
    re-summed; both paths give the same value up to round-off.
    """

    def __init__(
        self,
        n_max: int = 20,
        b1: float = 0.95,
        b2: float = 0.05,
        weighted: bool = True,
        literal_process_weight: bool = False,
        recursive: bool = False,
    ):
        if not (0.0 < b1 < 1.0 and 0.0 < b2 < 1.0):
            raise ConfigurationError("b1 and b2 must lie in (0, 1)")
        if n_max < 1:
            raise ConfigurationError("n_max must be positive")
        self.n_max = int(n_max)
        self.b1 = float(b1)
        self.b2 = float(b2)
        self.weighted = weighted
        self.process_offset = 1 if literal_process_weight else 0
        self.recursive = recursive
        self.count = 0
        self.taus: deque = deque(maxlen=self.n_max + 1)
        self.hphs: deque = deque(maxlen=2)
        self._sums: dict[str, np.ndarray] | None = None
        self._sums_n = 0

    @property
    def n_window(self) -> int:
        return max(0, min(self.count - 1, self.n_max))

    def __len__(self) -> int:
        return self.n_window

    def push(self, tau, hph) -> None:
        tau = np.asarray(tau, dtype=float).reshape(-1)
        self.taus.append(tau)
        self.hphs.append(np.asarray(hph, dtype=float))
        self.count += 1
        if self.recursive:
            self._advance_sums(tau)

    def recent(self, n: int | None = None) -> np.ndarray:
        """The last ``n`` innovations as rows, most recent first."""
        n = self.n_window if n is None else n
        items = list(self.taus)[-n:] if n else []
        return np.array(items[::-1]).reshape(n, -1)

    def _direct(self, b: float, offset: int) -> np.ndarray:
        n = self.n_window
        taus = self.recent(n)
        if self.weighted:
            w = window_weights(n, b, offset)
        else:
            w = np.full(n, 1.0 / n)
        return (taus.T * w) @ taus

    def _advance_sums(self, tau: np.ndarray) -> None:
        n = self.n_window
        if n == 0:
            self._sums = None
            return
        if not self.weighted or self._sums is None or n != self._sums_n or n < 2:
            self._sums = {
                "r": self._direct(self.b1, 0),
                "m": self._direct(self.b2, self.process_offset),
            }
            self._sums_n = n
            return
        dropped = self.taus[0]  # tau_{k-N}; deque holds N + 1 items once full
        new_outer = np.outer(tau, tau)
        old_outer = np.outer(dropped, dropped)
        for key, b, off in (("r", self.b1, 0), ("m", self.b2, self.process_offset)):
            d = (1.0 - b) / (1.0 - b**n)
            self._sums[key] = (
                b * self._sums[key] + d * b**off * new_outer - d * b ** (n + off) * old_outer
            )

    def weighted_sum(self, which: str) -> np.ndarray:
        """Weighted innovation outer-product sum; ``which`` is 'r' or 'm'."""
        if self.n_window == 0:
            raise InsufficientDataError("moment window is empty")
        if self.recursive and self._sums is not None:
            return self._sums[which].copy()
        if which == "r":
            return self._direct(self.b1, 0)
        return self._direct(self.b2, self.process_offset)


def raw_measurement_moment(window: MomentWindow, current_hph) -> np.ndarray:
    """Raw measurement-noise moment: weighted ``sum tau tau^T`` minus ``H P H^T``.

    Raises:
        InsufficientDataError: if the window holds no usable innovation.
    """
    return window.weighted_sum("r") - np.asarray(current_hph, dtype=float)


@lru_cache(maxsize=64)
def _observation_inverse(key: bytes, shape: tuple[int, int]):
    h = np.frombuffer(key).reshape(shape)
    sv = np.linalg.svd(h, compute_uv=False)
    if sv.size == shape[0] and sv[0] > 0 and sv[-1] > PINV_RTOL * sv[0]:
        return pseudo_inverse(h)
    return None


def _process_moment(window, a_r, model, p_prev, fallback: bool = True):
    a_m = window.weighted_sum("m")
    diff = a_m - np.asarray(a_r, dtype=float)
    h = model.h
    propagated = model.phi @ np.asarray(p_prev, dtype=float) @ model.phi.T
    h_pinv = _observation_inverse(np.ascontiguousarray(h).tobytes(), h.shape)
    if h_pinv is not None:
        a_q = h_pinv @ diff @ h_pinv.T - propagated
        sym = symmetrize(a_q)
        if not fallback or np.linalg.eigvalsh(sym)[0] >= -INDEFINITE_RATIO * np.trace(sym):
            return sym, "pinv"
    a_q = h.T @ diff @ h - propagated
    return symmetrize(a_q), "transpose"


def raw_process_moment(window: MomentWindow, a_r, model: SystemModel, p_prev) -> np.ndarray:
    """Raw process-noise moment from the innovation window.

    Uses the pseudo-inverse of ``H`` when ``H`` has full row rank and the
    result is not strongly indefinite; otherwise falls back to
    ``H^T (A_M - A_R) H - phi P phi^T``.
    """
    return _process_moment(window, a_r, model, p_prev)[0]
