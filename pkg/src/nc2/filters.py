"""Adaptive filters built on the Joseph-form recursion.

:class:`NC2Filter` runs one estimation/calibration/correction pass per
measurement. :class:`SageFilter` and :class:`BaselineFilter` are the
comparison filters used by the benchmark.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import calibrators as cal
from .errors import ConfigurationError, InsufficientDataError
from .estimator import (
    DIST_COND_MIN,
    DIST_SUM_RATIO,
    MomentWindow,
    NoiseFactorization,
    _process_moment,
    compose_covariance,
    normalize_distribution,
    psd_project,
    raw_measurement_moment,
)
from .statespace import (
    FilterState,
    InnovationRecord,
    SystemModel,
    as_covariance,
    kf_predict,
    kf_update,
)


@dataclass
class NC2Config:
    """Tuning knobs of the adaptive filter; defaults follow the method."""

    sigma: float = 0.1
    t_g: float = 0.02
    n_cal: int = 30
    warmup: int = 15
    b1: float = 0.95
    b2: float = 0.05
    n_moment: int = 20
    clamp_lo: float = 0.5
    clamp_hi: float = 2.0
    calibrate: bool = True
    weighted_moments: bool = True
    literal_process_weight: bool = False
    recursive_moments: bool = False
    dist_cond_min: float = DIST_COND_MIN
    dist_sum_ratio: float = DIST_SUM_RATIO
    moment_memory: float = 1.0
    process_fallback: bool = True

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ConfigurationError("sigma must lie in (0, 1)")
        if not 0.0 < self.moment_memory <= 1.0:
            raise ConfigurationError("moment_memory must lie in (0, 1]")
        if self.t_g < 0:
            raise ConfigurationError("t_g must be nonnegative")
        if not 0.0 < self.clamp_lo <= 1.0 <= self.clamp_hi:
            raise ConfigurationError("clamp must bracket 1")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class StepOutput:
    state: FilterState
    q_hat: np.ndarray
    r_hat: np.ndarray
    report: cal.CalibrationReport
    innovation: InnovationRecord


TRACE_COLUMNS = (
    "k", "e_a_max", "e_g_max", "s_q", "s_r", "c_q", "c_r", "I_q", "I_r", "q_fro", "r_fro",
)


def trace_row(out: StepOutput) -> list:
    """Per-step diagnostics row matching :data:`TRACE_COLUMNS`."""
    rep = out.report
    return [
        out.state.k,
        f"{rep.e_a_max:.10g}",
        f"{rep.e_g_max:.10g}",
        rep.s_q,
        rep.s_r,
        f"{rep.c_q:.10g}",
        f"{rep.c_r:.10g}",
        f"{float(out.q_hat.sum()):.10g}",
        f"{float(out.r_hat.sum()):.10g}",
        f"{float(np.linalg.norm(out.q_hat)):.10g}",
        f"{float(np.linalg.norm(out.r_hat)):.10g}",
    ]


class TraceWriter:
    """Appends :func:`trace_row` lines to a CSV file."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(TRACE_COLUMNS)

    def write(self, out: StepOutput) -> None:
        self._writer.writerow(trace_row(out))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _KalmanBase:
    def __init__(self, model: SystemModel, x0=None, p0=None):
        self.model = model
        n_x = model.n_x
        x0 = np.zeros(n_x) if x0 is None else np.asarray(x0, dtype=float).reshape(n_x)
        p0 = np.zeros((n_x, n_x)) if p0 is None else as_covariance(p0, n_x)
        self.state = FilterState(x0.copy(), p0.copy(), 0)
        self._predicted: FilterState | None = None
        self._p_prev: np.ndarray | None = None
        self._q_used: np.ndarray | None = None

    def _process_cov(self) -> np.ndarray:
        raise NotImplementedError

    def _measurement_cov(self) -> np.ndarray:
        raise NotImplementedError

    def predict(self) -> FilterState:
        """Time update. Calling it twice without an update coasts two steps."""
        self._p_prev = self.state.p
        self._q_used = self._process_cov()
        self._predicted = kf_predict(self.state, self.model, self._q_used)
        self.state = self._predicted
        return self._predicted

    def update(self, z) -> StepOutput:
        if self._predicted is None:
            raise ConfigurationError("update() called without a preceding predict()")
        r_used = self._measurement_cov()
        post, rec = kf_update(self._predicted, self.model, r_used, z)
        self.state = post
        self._predicted = None
        return self._after_update(rec)

    def _after_update(self, rec: InnovationRecord) -> StepOutput:
        raise NotImplementedError

    def step(self, z) -> StepOutput:
        self.predict()
        return self.update(z)


class NC2Filter(_KalmanBase):
    """Adaptive filter with factorized, self-correcting noise covariances.

    Args:
        model: system matrices.
        q0, r0: initial process/measurement covariances. Their entry sums
            become the initial intensities.
        config: tuning, see :class:`NC2Config`.
        x0, p0: initial state and covariance (zeros by default).
    """

    def __init__(self, model, q0, r0, config: NC2Config | None = None, x0=None, p0=None):
        super().__init__(model, x0, p0)
        self.config = config or NC2Config()
        c = self.config
        self.q_fact = NoiseFactorization.from_covariance(as_covariance(q0, model.n_x))
        self.r_fact = NoiseFactorization.from_covariance(as_covariance(r0, model.n_z))
        self.moments = MomentWindow(
            c.n_moment,
            c.b1,
            c.b2,
            weighted=c.weighted_moments,
            literal_process_weight=c.literal_process_weight,
            recursive=c.recursive_moments,
        )
        self.calib = cal.InnovationBuffer(c.n_cal, c.warmup)
        self._moment_avg: dict[str, np.ndarray] = {}

    def _process_cov(self):
        return compose_covariance(self.q_fact)

    def _measurement_cov(self):
        return compose_covariance(self.r_fact)

    def _estimate(self, rec: InnovationRecord):
        """Push the innovation and refresh both element distributions."""
        self.moments.push(rec.tau, rec.hph)
        self.calib.push(rec.tau, np.diag(rec.s))
        try:
            a_r = raw_measurement_moment(self.moments, rec.hph)
        except InsufficientDataError:
            return None
        a_q, _ = _process_moment(
            self.moments, a_r, self.model, self._p_prev, self.config.process_fallback
        )
        return a_r, a_q

    def _calibrate(self) -> cal.CalibrationReport:
        c = self.config
        if not (c.calibrate and self.calib.ready):
            return cal.CalibrationReport()
        e_a = cal.autocov_calibration(self.calib)
        e_g = cal.gaussian_calibration(self.calib)
        report, (i_q, i_r) = cal.correction_step(
            e_a,
            e_g,
            (self.q_fact.intensity, self.r_fact.intensity),
            c.sigma,
            c.t_g,
            (c.clamp_lo, c.clamp_hi),
        )
        self.q_fact.intensity = i_q
        self.r_fact.intensity = i_r
        return report

    def _after_update(self, rec):
        moments = self._estimate(rec)
        if moments is not None:
            a_r, a_q = moments
            c = self.config
            a = c.moment_memory
            for key, fact, raw in (("r", self.r_fact, a_r), ("q", self.q_fact, a_q)):
                # Normalizing is a ratio, so it is done after the averaging:
                # the mean of per-step ratios is biased, the ratio of means is not.
                prev = self._moment_avg.get(key)
                if a < 1.0 and prev is not None and np.all(np.isfinite(raw)):
                    raw = (1.0 - a) * prev + a * raw
                if np.all(np.isfinite(raw)):
                    self._moment_avg[key] = raw
                fact.distribution = normalize_distribution(
                    raw, fact, c.dist_cond_min, c.dist_sum_ratio
                )
        report = self._calibrate()
        return StepOutput(
            self.state,
            compose_covariance(self.q_fact),
            compose_covariance(self.r_fact),
            report,
            rec,
        )

    @property
    def intensities(self) -> tuple[float, float]:
        return self.q_fact.intensity, self.r_fact.intensity


class SageFilter(NC2Filter):
    """Moment-matching filter without calibration or correction.

    By default the PSD-projected raw moments are used directly as the noise
    covariances; a projection that loses all mass keeps the previous matrix.
    With ``frozen_intensity=True`` the covariances are the initial
    intensities times the normalized distributions instead.
    """

    def __init__(self, model, q0, r0, config=None, x0=None, p0=None, frozen_intensity=False):
        config = config or NC2Config()
        config = NC2Config(**{**config.__dict__, "calibrate": False})
        super().__init__(model, q0, r0, config, x0, p0)
        self.frozen_intensity = frozen_intensity
        self._q = as_covariance(q0, model.n_x)
        self._r = as_covariance(r0, model.n_z)

    def _process_cov(self):
        if self.frozen_intensity:
            return super()._process_cov()
        return self._q

    def _measurement_cov(self):
        if self.frozen_intensity:
            return super()._measurement_cov()
        return self._r

    def _after_update(self, rec):
        if self.frozen_intensity:
            return super()._after_update(rec)
        moments = self._estimate(rec)
        if moments is not None:
            a_r, a_q = moments
            self._r = _project_or_keep(a_r, self._r)
            self._q = _project_or_keep(a_q, self._q)
        return StepOutput(self.state, self._q.copy(), self._r.copy(), cal.CalibrationReport(), rec)


def _project_or_keep(raw, previous):
    if not np.all(np.isfinite(raw)):
        return previous
    proj = psd_project(raw)
    if np.trace(proj) <= 1e-12:
        return previous
    return proj


class BaselineFilter(_KalmanBase):
    """Plain Kalman filter with fixed (``uncorrected``) or scheduled (``oracle``) noise.

    In oracle mode ``schedule`` is a pair of per-step covariance sequences
    ``(q_true, r_true)``; step ``k`` (1-based) uses entry ``k - 1``.
    """

    def __init__(self, model, q0=None, r0=None, mode="uncorrected", schedule=None, x0=None, p0=None):
        super().__init__(model, x0, p0)
        if mode not in ("uncorrected", "oracle"):
            raise ConfigurationError(f"unknown baseline mode {mode!r}")
        if mode == "oracle":
            if schedule is None:
                raise ConfigurationError("oracle mode needs the true covariance schedule")
            self._q_seq, self._r_seq = schedule
        else:
            if q0 is None or r0 is None:
                raise ConfigurationError("uncorrected mode needs q0 and r0")
            self._q = as_covariance(q0, model.n_x)
            self._r = as_covariance(r0, model.n_z)
        self.mode = mode

    def _at(self, seq, k):
        return np.asarray(seq[min(k, len(seq)) - 1], dtype=float)

    def _process_cov(self):
        if self.mode == "oracle":
            return self._at(self._q_seq, self.state.k + 1)
        return self._q

    def _measurement_cov(self):
        if self.mode == "oracle":
            return self._at(self._r_seq, self.state.k)
        return self._r

    def _after_update(self, rec):
        return StepOutput(
            self.state,
            self._q_used.copy(),
            self._measurement_cov().copy(),
            cal.CalibrationReport(),
            rec,
        )


def nc2_step(f: NC2Filter, z) -> StepOutput:
    return f.step(z)


def sage_step(f: SageFilter, z) -> StepOutput:
    return f.step(z)


def baseline_step(f: BaselineFilter, z) -> StepOutput:
    return f.step(z)


FILTER_MODES = ("nc2", "sage", "uncorrected", "oracle")


def make_filter(mode: str, model, q0, r0, schedule=None, config: NC2Config | None = None):
    """Build the filter for a benchmark mode name."""
    if mode == "nc2":
        return NC2Filter(model, q0, r0, config)
    if mode == "sage":
        return SageFilter(model, q0, r0, config)
    if mode in ("uncorrected", "oracle"):
        return BaselineFilter(model, q0, r0, mode=mode, schedule=schedule)
    raise ConfigurationError(f"unknown filter mode {mode!r}; valid: {', '.join(FILTER_MODES)}")


def run_filter(f, measurements: Sequence) -> list[StepOutput]:
    """Step ``f`` over the rows of ``measurements``."""
    return [f.step(z) for z in np.asarray(measurements, dtype=float)]
