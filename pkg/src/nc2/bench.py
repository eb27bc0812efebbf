"""Monte Carlo benchmark: per-trial errors, suite aggregates and CSV output."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NC2Error, SynthesisError
from .filters import NC2Config, make_filter
from .statespace import is_psd
from .synthesis import SynthesisConfig, TrialData, generate_trial

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 15.0
T_E = 1e4
LOG_FLOOR = -12.0
ZERO_NORM = 1e-12
TRIAL_TIMEOUT = 10.0


@dataclass
class TrialResult:
    trial: int
    mode: str
    delta_q: float
    delta_r: float
    state_error: float
    failed: bool = False
    diverged_q: bool = False
    diverged_r: bool = False
    r_ratio_final: float = math.nan
    q_ratio_final: float = math.nan
    init_factors: tuple[float, float] = (1.0, 1.0)
    psd_ok: bool = True
    unit_sum_ok: bool = True

    def __post_init__(self):
        if self.failed:
            self.delta_q = self.delta_r = T_E
        self.diverged_q = self.delta_q > DIVERGENCE_THRESHOLD
        self.diverged_r = self.delta_r > DIVERGENCE_THRESHOLD


def relative_error(estimates, truth) -> float:
    """Time-averaged ``||c_hat - c|| / ||c||`` (Frobenius).

    A zero-norm truth step contributes ``||c_hat|| / ZERO_NORM`` and logs a
    warning.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape or est.shape[0] < 1:
        raise ValueError("estimates and truth must be equal-length nonempty sequences")
    num = np.linalg.norm((est - tru).reshape(est.shape[0], -1), axis=1)
    den = np.linalg.norm(tru.reshape(tru.shape[0], -1), axis=1)
    degenerate = den == 0
    if np.any(degenerate):
        log.warning("relative_error: %d zero-norm truth steps", int(degenerate.sum()))
        num = np.where(degenerate, np.linalg.norm(est.reshape(est.shape[0], -1), axis=1), num)
        den = np.where(degenerate, ZERO_NORM, den)
    return float(np.mean(num / den))


def state_error(y_true, x_estimates, model) -> float:
    """``sqrt(sum_k |y_true_k - H x_k|^2)`` over all steps and components."""
    y_true = np.asarray(y_true, dtype=float)
    x = np.asarray(x_estimates, dtype=float)
    resid = y_true - x @ model.h.T
    return float(np.sqrt(np.sum(resid**2)))


def _log10(v: float) -> float:
    if v <= 0 or not np.isfinite(v):
        return LOG_FLOOR if v <= 0 else math.inf
    return max(math.log10(v), LOG_FLOOR)


def _log_stats(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return _log10(mean), _log10(std)


@dataclass
class SuiteSummary:
    mode: str
    n_trials: int
    log_mean_q: float
    log_mean_r: float
    log_std_q: float
    log_std_r: float
    divergence_q: float
    divergence_r: float
    inability_q: float
    inability_r: float
    conv_log_mean_q: float
    conv_log_mean_r: float
    conv_log_std_q: float
    conv_log_std_r: float
    median_state_error: float
    system_class: str = ""


def aggregate(results: list[TrialResult]) -> SuiteSummary:
    """Log-scale error statistics plus divergence and inability rates.

    Failed trials enter the rates (their sentinel error also counts as
    divergence) but are left out of the log statistics. The converged-only
    statistics further drop every trial above the divergence threshold.
    """
    if not results:
        raise ValueError("aggregate() needs at least one trial result")
    n = len(results)
    ok = [r for r in results if not r.failed]
    lm_q, ls_q = _log_stats([r.delta_q for r in ok])
    lm_r, ls_r = _log_stats([r.delta_r for r in ok])
    cm_q, cs_q = _log_stats([r.delta_q for r in ok if r.delta_q <= DIVERGENCE_THRESHOLD])
    cm_r, cs_r = _log_stats([r.delta_r for r in ok if r.delta_r <= DIVERGENCE_THRESHOLD])
    errs = [r.state_error for r in ok]
    return SuiteSummary(
        mode=results[0].mode,
        n_trials=n,
        log_mean_q=lm_q,
        log_mean_r=lm_r,
        log_std_q=ls_q,
        log_std_r=ls_r,
        divergence_q=sum(r.diverged_q for r in results) / n,
        divergence_r=sum(r.diverged_r for r in results) / n,
        inability_q=sum(r.failed for r in results) / n,
        inability_r=sum(r.failed for r in results) / n,
        conv_log_mean_q=cm_q,
        conv_log_mean_r=cm_r,
        conv_log_std_q=cs_q,
        conv_log_std_r=cs_r,
        median_state_error=float(np.median(errs)) if errs else math.nan,
    )


class TrialTimeout(NC2Error):
    pass


def run_mode(data: TrialData, mode: str, config: NC2Config | None = None,
             trial: int = 0, timeout: float = TRIAL_TIMEOUT, on_step=None) -> TrialResult:
    """Run one filter mode over one trial and score it.

    Numerical failures (singular innovation covariance, non-finite output,
    timeout) mark the trial failed for this mode only. ``on_step``, if
    given, is called with every :class:`~nc2.filters.StepOutput`.
    """
    t_m = data.y_m.shape[0]
    n_x = data.model.n_x
    q_hat = np.empty((t_m, n_x, n_x))
    r_hat = np.empty((t_m,) + data.r_true.shape[1:])
    xs = np.empty((t_m, n_x))
    psd_ok = unit_ok = True
    start = time.monotonic()
    try:
        f = make_filter(mode, data.model, data.q0_hat, data.r0_hat,
                        schedule=(data.q_true, data.r_true), config=config)
        check_fact = hasattr(f, "q_fact")
        for k in range(t_m):
            out = f.step(data.y_m[k])
            if not (np.all(np.isfinite(out.state.x)) and np.all(np.isfinite(out.q_hat))
                    and np.all(np.isfinite(out.r_hat))):
                raise FloatingPointError(f"non-finite output at step {k + 1}")
            q_hat[k], r_hat[k], xs[k] = out.q_hat, out.r_hat, out.state.x
            if on_step is not None:
                on_step(out)
            if check_fact and mode == "nc2":
                unit_ok &= abs(f.q_fact.distribution.sum() - 1) < 1e-9
                unit_ok &= abs(f.r_fact.distribution.sum() - 1) < 1e-9
            if k % 100 == 0 and time.monotonic() - start > timeout:
                raise TrialTimeout(f"trial exceeded {timeout} s")
    except (NC2Error, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.info("trial %d mode %s failed: %s", trial, mode, exc)
        return TrialResult(trial, mode, T_E, T_E, math.nan, failed=True,
                           init_factors=data.init_factors)
    psd_ok = all(is_psd(m) for m in q_hat[:: max(1, t_m // 50)]) and all(
        is_psd(m) for m in r_hat[:: max(1, t_m // 50)]
    )
    third = t_m - t_m // 3
    r_ratio = float(np.mean(np.linalg.norm(r_hat[third:], axis=(1, 2))
                            / np.linalg.norm(data.r_true[third:], axis=(1, 2))))
    q_ratio = float(np.mean(np.linalg.norm(q_hat[third:], axis=(1, 2))
                            / np.linalg.norm(data.q_true[third:], axis=(1, 2))))
    return TrialResult(
        trial,
        mode,
        relative_error(q_hat, data.q_true),
        relative_error(r_hat, data.r_true),
        state_error(data.y_true, xs, data.model),
        r_ratio_final=r_ratio,
        q_ratio_final=q_ratio,
        init_factors=data.init_factors,
        psd_ok=psd_ok,
        unit_sum_ok=bool(unit_ok),
    )


@dataclass
class SuiteResult:
    cfg: SynthesisConfig
    modes: tuple[str, ...]
    results: dict[str, list[TrialResult]] = field(default_factory=dict)
    skipped: list[int] = field(default_factory=list)

    def summaries(self) -> dict[str, SuiteSummary]:
        out = {}
        for mode in self.modes:
            s = aggregate(self.results[mode])
            s.system_class = self.cfg.system_class.value
            out[mode] = s
        return out


def run_trial(cfg: SynthesisConfig, trial: int, modes, config=None, timeout=TRIAL_TIMEOUT,
              on_step=None):
    """Score every mode on trial ``trial``; ``on_step(mode, out)`` sees each step."""
    data = generate_trial(cfg, trial)
    return [
        run_mode(data, m, config, trial, timeout,
                 None if on_step is None else (lambda out, m=m: on_step(m, out)))
        for m in modes
    ]


def run_suite(cfg: SynthesisConfig, modes=("nc2", "sage", "uncorrected", "oracle"),
              config: NC2Config | None = None, timeout: float = TRIAL_TIMEOUT,
              progress=None, on_step=None) -> SuiteResult:
    """Run ``cfg.l_trials`` random trials through every mode.

    Trial ``j`` depends only on ``(cfg.seed, j)``. A trial whose system cannot
    be synthesized is skipped and logged and does not count toward ``L``.
    """
    suite = SuiteResult(cfg, tuple(modes), {m: [] for m in modes})
    for j in range(cfg.l_trials):
        try:
            results = run_trial(
                cfg, j, modes, config, timeout,
                None if on_step is None else (lambda m, out, j=j: on_step(j, m, out)),
            )
        except SynthesisError as exc:
            log.warning("trial %d skipped: %s", j, exc)
            suite.skipped.append(j)
            continue
        for res in results:
            suite.results[res.mode].append(res)
        if progress is not None:
            progress(j)
    return suite


SUMMARY_COLUMNS = (
    "class", "mode", "L", "mean_dQ", "mean_dR", "std_dQ", "std_dR",
    "Pd_Q", "Pd_R", "Pl_Q", "Pl_R",
    "conv_mean_dQ", "conv_mean_dR", "conv_std_dQ", "conv_std_dR", "median_state_error",
)

TRIAL_COLUMNS = (
    "class", "trial", "mode", "delta_q", "delta_r", "state_error", "diverged_q",
    "diverged_r", "failed", "init_factor_q", "init_factor_r", "r_ratio_final",
)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def summary_rows(summaries) -> list[list[str]]:
    rows = []
    for s in summaries:
        rows.append([_fmt(v) for v in (
            s.system_class, s.mode, s.n_trials, s.log_mean_q, s.log_mean_r, s.log_std_q,
            s.log_std_r, 100 * s.divergence_q, 100 * s.divergence_r, 100 * s.inability_q,
            100 * s.inability_r, s.conv_log_mean_q, s.conv_log_mean_r, s.conv_log_std_q,
            s.conv_log_std_r, s.median_state_error,
        )])
    return rows


def trial_rows(suite: SuiteResult) -> list[list[str]]:
    rows = []
    cls = suite.cfg.system_class.value
    for mode in suite.modes:
        for r in suite.results[mode]:
            rows.append([_fmt(v) for v in (
                cls, r.trial, r.mode, r.delta_q, r.delta_r, r.state_error, r.diverged_q,
                r.diverged_r, r.failed, r.init_factors[0], r.init_factors[1], r.r_ratio_final,
            )])
    return rows


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
