"""Reproducible experiments: calibrator sign sweep, intensity convergence traces
and the moment unbiasedness check."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import calibrators as cal
from .bench import run_mode
from .estimator import MomentWindow, _process_moment, raw_measurement_moment
from .filters import BaselineFilter, NC2Config
from .synthesis import (
    SynthesisConfig,
    SystemClass,
    generate_measurements,
    generate_system,
    generate_trial,
    rng_for,
)

SWEEP_GRID = (0.1, 1.0, 10.0)
SWEEP_STEPS = 900
SWEEP_BURN_IN = 300

# Expected signs keyed by (process scale, measurement scale) of the filter's
# noise relative to the truth. Cells without an entry carry no prediction.
EA_EXPECTED = {
    (0.1, 1.0): 1, (0.1, 10.0): 1, (1.0, 10.0): 1,
    (1.0, 0.1): -1, (10.0, 0.1): -1, (10.0, 1.0): -1,
}
EG_EXPECTED = {(0.1, 1.0): 1, (1.0, 0.1): 1, (1.0, 10.0): -1, (10.0, 1.0): -1}

_UNIT = np.ones((3, 2))


@dataclass
class SweepCell:
    system: int
    delta_q: float
    delta_r: float
    e_a: np.ndarray  # per step after burn-in
    e_g: np.ndarray

    @property
    def median_e_a(self) -> float:
        return float(np.median(self.e_a))

    @property
    def median_e_g(self) -> float:
        return float(np.median(self.e_g))


@dataclass
class SweepResult:
    cells: list[SweepCell] = field(default_factory=list)
    burn_in: int = SWEEP_BURN_IN

    def _accuracy(self, expected, attr) -> float:
        hits = [
            np.sign(getattr(c, attr)) == expected[(c.delta_q, c.delta_r)]
            for c in self.cells
            if (c.delta_q, c.delta_r) in expected
        ]
        return float(np.mean(hits)) if hits else float("nan")

    def e_a_accuracy(self) -> float:
        """Fraction of (system, cell) pairs whose median E_A has the expected sign."""
        return self._accuracy(EA_EXPECTED, "median_e_a")

    def e_g_accuracy(self) -> float:
        return self._accuracy(EG_EXPECTED, "median_e_g")

    def balanced_abs_e_g(self) -> float:
        """Median over systems of ``|median E_G|`` in the correctly scaled cell."""
        vals = [abs(c.median_e_g) for c in self.cells if c.delta_q == 1.0 and c.delta_r == 1.0]
        return float(np.median(vals)) if vals else float("nan")

    def series_rows(self):
        for c in self.cells:
            for i, (a, g) in enumerate(zip(c.e_a, c.e_g)):
                yield [c.system, f"{c.delta_q:g}", f"{c.delta_r:g}", self.burn_in + i + 1,
                       f"{a:.10g}", f"{g:.10g}"]

    def cell_rows(self):
        for c in self.cells:
            key = (c.delta_q, c.delta_r)
            yield [c.system, f"{c.delta_q:g}", f"{c.delta_r:g}", f"{c.median_e_a:.10g}",
                   f"{c.median_e_g:.10g}", EA_EXPECTED.get(key, 0), EG_EXPECTED.get(key, 0)]


SWEEP_SERIES_COLUMNS = ("system", "delta_q", "delta_r", "k", "e_a_max", "e_g_max")
SWEEP_CELL_COLUMNS = (
    "system", "delta_q", "delta_r", "median_e_a", "median_e_g", "expected_e_a", "expected_e_g",
)


def calib_sweep(
    n_systems: int = 20,
    grid=SWEEP_GRID,
    steps: int = SWEEP_STEPS,
    burn_in: int = SWEEP_BURN_IN,
    seed: int = 11,
    n_cal: int = 60,
    warmup: int = 30,
    synthesis: SynthesisConfig | None = None,
) -> SweepResult:
    """Calibrator values with correction switched off.

    Each system is simulated once with stationary noise. The same
    measurements are then filtered with ``Q`` and ``R`` scaled by every pair
    of grid values, and both calibrators are evaluated on every step after
    ``burn_in``.
    """
    base = synthesis or SynthesisConfig(system_class=SystemClass.OB_EQUAL)
    cfg = SynthesisConfig(**{**base.__dict__, "seed": seed, "t_m": steps})
    result = SweepResult(burn_in=burn_in)
    for s in range(n_systems):
        model, q, r = generate_system(cfg, rng_for(seed, s, "system"))
        data = generate_measurements(model, q, r, cfg, rng_for(seed, s, "noise"), coeffs=_UNIT)
        for dq in grid:
            for dr in grid:
                f = BaselineFilter(model, dq * q, dr * r)
                buf = cal.InnovationBuffer(n_cal, warmup)
                e_a, e_g = [], []
                for k in range(steps):
                    rec = f.step(data.y_m[k]).innovation
                    buf.push(rec.tau, np.diag(rec.s))
                    if k >= burn_in:
                        e_a.append(cal.autocov_calibration(buf))
                        e_g.append(cal.gaussian_calibration(buf))
                result.cells.append(
                    SweepCell(s, float(dq), float(dr), np.array(e_a), np.array(e_g))
                )
    return result


CONVERGE_COLUMNS = ("trial", "k", "I_q", "I_r", "I_q_true", "I_r_true", "r_ratio", "q_ratio")


@dataclass
class ConvergeTrace:
    trial: int
    i_q: np.ndarray
    i_r: np.ndarray
    i_q_true: np.ndarray
    i_r_true: np.ndarray
    r_ratio: np.ndarray  # ||R_hat||_F / ||R||_F per step
    q_ratio: np.ndarray

    def rows(self):
        for k in range(self.i_q.size):
            yield [self.trial, k + 1] + [
                f"{v:.10g}" for v in (
                    self.i_q[k], self.i_r[k], self.i_q_true[k], self.i_r_true[k],
                    self.r_ratio[k], self.q_ratio[k],
                )
            ]


def converge(cfg: SynthesisConfig, trials=None, config: NC2Config | None = None):
    """Per-step intensities of the adaptive filter against the truth.

    Returns ``(traces, results)`` where ``results[j]`` maps the modes
    ``nc2`` and ``uncorrected`` to their scored :class:`~nc2.bench.TrialResult`.
    """
    trials = range(cfg.l_trials) if trials is None else trials
    traces, results = [], []
    for j in trials:
        data = generate_trial(cfg, j)
        steps = []
        res = {"nc2": run_mode(data, "nc2", config, j, on_step=steps.append)}
        res["uncorrected"] = run_mode(data, "uncorrected", config, j)
        results.append(res)
        n = len(steps)
        q_true = data.q_true[:n]
        r_true = data.r_true[:n]
        q_hat = np.array([o.q_hat for o in steps]).reshape(q_true.shape)
        r_hat = np.array([o.r_hat for o in steps]).reshape(r_true.shape)
        traces.append(ConvergeTrace(
            j,
            q_hat.sum(axis=(1, 2)),
            r_hat.sum(axis=(1, 2)),
            q_true.sum(axis=(1, 2)),
            r_true.sum(axis=(1, 2)),
            np.linalg.norm(r_hat, axis=(1, 2)) / np.linalg.norm(r_true, axis=(1, 2)),
            np.linalg.norm(q_hat, axis=(1, 2)) / np.linalg.norm(q_true, axis=(1, 2)),
        ))
    return traces, results


@dataclass
class UnbiasednessResult:
    r_distribution: np.ndarray  # normalized time average of the raw moments
    q_distribution: np.ndarray
    r_truth: np.ndarray
    q_truth: np.ndarray

    @property
    def r_deviation(self) -> float:
        return float(np.abs(self.r_distribution - self.r_truth).max())

    @property
    def q_deviation(self) -> float:
        return float(np.abs(self.q_distribution - self.q_truth).max())


def moment_unbiasedness(
    seed: int = 3,
    system: int = 0,
    steps: int = 5000,
    burn_in: int = 100,
    config: NC2Config | None = None,
    synthesis: SynthesisConfig | None = None,
) -> UnbiasednessResult:
    """Time-averaged raw noise moments of a filter running on the true noise.

    The system is stationary and the filter uses the exact ``Q`` and ``R``.
    Raw moments are summed after ``burn_in`` and the sums are normalized at
    the end; averaging per-step normalized matrices instead would average a
    ratio of noisy quantities, which is biased. The process moment always
    takes the pseudo-inverse path, which requires ``H`` of full row rank.
    """
    c = config or NC2Config()
    base = synthesis or SynthesisConfig(system_class=SystemClass.OB_EQUAL)
    cfg = SynthesisConfig(**{**base.__dict__, "seed": seed, "t_m": steps})
    model, q, r = generate_system(cfg, rng_for(seed, system, "system"))
    data = generate_measurements(model, q, r, cfg, rng_for(seed, system, "noise"), coeffs=_UNIT)
    f = BaselineFilter(model, q, r)
    window = MomentWindow(c.n_moment, c.b1, c.b2, weighted=c.weighted_moments,
                          literal_process_weight=c.literal_process_weight)
    sum_r = np.zeros_like(r)
    sum_q = np.zeros_like(q)
    for k in range(steps):
        p_prev = f.state.p
        rec = f.step(data.y_m[k]).innovation
        window.push(rec.tau, rec.hph)
        if window.n_window == 0 or k < burn_in:
            continue
        a_r = raw_measurement_moment(window, rec.hph)
        a_q, _ = _process_moment(window, a_r, model, p_prev, fallback=False)
        sum_r += a_r
        sum_q += a_q
    return UnbiasednessResult(sum_r / sum_r.sum(), sum_q / sum_q.sum(), r / r.sum(), q / q.sum())
