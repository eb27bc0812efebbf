"""Noise-intensity diagnosis and correction.

Two calibrators look at the recent innovation sequence:

* the autocovariance calibrator measures lag-1 correlation, whose sign tells
  whether the process or the measurement intensity is off;
* the Gaussian calibrator compares the mean absolute innovation with its
  half-normal expectation under the filter's own innovation variance, whose
  sign tells whether the total noise is under- or over-estimated.

The signs are combined into mutually exclusive switch flags and a
multiplicative correction for one of the two intensities.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InsufficientDataError
from .estimator import EPS_INTENSITY

P_GAUSS = 1.0 / math.sqrt(2.0 * math.pi)
LAG = 1
L_STEP = 5


class InnovationBuffer:
    """FIFO of innovations and the matching theoretical variances ``diag(S)``."""

    def __init__(self, n_cal: int = 60, warmup: int = 30):
        if n_cal < 2 or warmup < 2 or warmup > n_cal:
            raise ConfigurationError("need 2 <= warmup <= n_cal")
        self.n_cal = int(n_cal)
        self.warmup = int(warmup)
        self.taus: deque = deque(maxlen=self.n_cal)
        self.s_diags: deque = deque(maxlen=self.n_cal)

    def push(self, tau, s_diag) -> None:
        s_diag = np.asarray(s_diag, dtype=float).reshape(-1)
        if np.any(s_diag <= 0.0):
            raise ConfigurationError("innovation variances must be strictly positive")
        self.taus.append(np.asarray(tau, dtype=float).reshape(-1))
        self.s_diags.append(s_diag)

    def __len__(self) -> int:
        return len(self.taus)

    @property
    def ready(self) -> bool:
        return len(self.taus) >= self.warmup

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.taus), np.array(self.s_diags)

    def _require_ready(self):
        if not self.ready:
            raise InsufficientDataError(
                f"calibration buffer has {len(self)} samples, needs {self.warmup}"
            )


def signed_extreme(values) -> float:
    """The entry of largest magnitude, keeping its sign (min wins ties)."""
    values = np.asarray(values, dtype=float)
    hi, lo = float(values.max()), float(values.min())
    return hi if abs(hi) > abs(lo) else lo


def window_lengths(n: int) -> range:
    """``ceil(n/3), ceil(n/3) + 5, ...`` up to and including ``n`` when on-grid."""
    start = max(LAG + 1, math.ceil(n / 3))
    return range(start, n + 1, L_STEP)


def lag_autocovariance(taus: np.ndarray, lag: int = LAG, mean=None) -> np.ndarray:
    """Mean-subtracted lag autocovariance matrix of the rows of ``taus``.

    ``mean`` defaults to the sample mean of ``taus`` itself.
    """
    eta = taus.shape[0]
    centered = taus - (taus.mean(axis=0) if mean is None else mean)
    return centered[lag:].T @ centered[:-lag] / (eta - lag)


def autocov_calibration(buf: InnovationBuffer) -> float:
    """Signed extreme lag-1 autocovariance over the nested trailing windows.

    Raises:
        InsufficientDataError: before the buffer reaches its warmup length.
    """
    buf._require_ready()
    taus, _ = buf.arrays()
    n = taus.shape[0]
    # every nested window is centred on the mean of the whole buffer
    mean = taus.mean(axis=0)
    hi = -math.inf
    lo = math.inf
    for eta in window_lengths(n):
        block = lag_autocovariance(taus[n - eta :], mean=mean)
        hi = max(hi, float(block.max()))
        lo = min(lo, float(block.min()))
    return signed_extreme([hi, lo])


def gaussian_components(taus: np.ndarray, s_diags: np.ndarray) -> np.ndarray:
    """Per-component Gaussian calibration values.

    Each innovation is scaled by its own theoretical standard deviation, so
    the statistic stays meaningful while the filter's ``S`` is adapting.
    """
    p_e = np.mean(np.abs(taus) / (2.0 * np.sqrt(s_diags)), axis=0)
    return (p_e - P_GAUSS) / np.sqrt(p_e**2 + P_GAUSS**2)


def gaussian_calibration(buf: InnovationBuffer) -> float:
    """Signed extreme of the per-component Gaussian calibration values.

    Raises:
        InsufficientDataError: before the buffer reaches its warmup length.
    """
    buf._require_ready()
    taus, s_diags = buf.arrays()
    return signed_extreme(gaussian_components(taus, s_diags))


def switch_flags(e_a_max: float, e_g_max: float) -> tuple[int, int]:
    """``(s_q, s_r)``: same signs correct the process, opposite the measurement."""
    prod = e_a_max * e_g_max
    if prod > 0:
        return 1, 0
    if prod < 0:
        return 0, 1
    return 0, 0


@dataclass(frozen=True)
class CalibrationReport:
    e_a_max: float = 0.0
    e_g_max: float = 0.0
    s_q: int = 0
    s_r: int = 0
    c_q: float = 1.0
    c_r: float = 1.0


def correction_step(
    e_a_max: float,
    e_g_max: float,
    intensities: tuple[float, float],
    sigma: float = 0.1,
    t_g: float = 0.02,
    clamp: tuple[float, float] = (0.5, 2.0),
) -> tuple[CalibrationReport, tuple[float, float]]:
    """Apply the switch flags and the negative-feedback correction.

    Inside the ``t_g`` deadband the Gaussian value counts as zero, so no flag
    is raised and both intensities are kept. The reported ``e_g_max`` is the
    raw calibrator value.
    """
    if not 0.0 < sigma < 1.0:
        raise ConfigurationError("sigma must lie in (0, 1)")
    i_q, i_r = intensities
    e_g = 0.0 if abs(e_g_max) < t_g else e_g_max
    s_q, s_r = switch_flags(e_a_max, e_g)
    lo, hi = clamp
    c_q = min(max(1.0 + sigma * s_q * e_g, lo), hi) if s_q else 1.0
    c_r = min(max(1.0 + sigma * s_r * e_g, lo), hi) if s_r else 1.0
    report = CalibrationReport(float(e_a_max), float(e_g_max), s_q, s_r, c_q, c_r)
    return report, (max(i_q * c_q, EPS_INTENSITY), max(i_r * c_r, EPS_INTENSITY))
