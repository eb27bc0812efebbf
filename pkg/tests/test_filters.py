import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nc2.bench import run_suite
from nc2.errors import ConfigurationError
from nc2.estimator import EPS_SUM
from nc2.filters import (
    BaselineFilter,
    NC2Config,
    NC2Filter,
    SageFilter,
    TRACE_COLUMNS,
    TraceWriter,
    make_filter,
    run_filter,
)
from nc2.statespace import is_psd
from nc2.synthesis import (
    SynthesisConfig,
    SystemClass,
    generate_measurements,
    generate_system,
    generate_trial,
    rng_for,
)

UNIT = np.ones((3, 2))


def stationary(seed, system, t_m=1000, cls=SystemClass.OB_EQUAL):
    cfg = SynthesisConfig(system_class=cls, seed=seed, t_m=t_m)
    model, q, r = generate_system(cfg, rng_for(seed, system, "system"))
    data = generate_measurements(model, q, r, cfg, rng_for(seed, system, "noise"), coeffs=UNIT)
    return model, q, r, data


def test_config_validation_and_keys():
    with pytest.raises(ConfigurationError):
        NC2Config(sigma=1.5)
    with pytest.raises(ConfigurationError):
        NC2Config(clamp_lo=1.2)
    with pytest.raises(ConfigurationError):
        NC2Config(moment_memory=0.0)
    assert "sigma" in NC2Config.keys() and "t_g" in NC2Config.keys()
    c = NC2Config()
    assert (c.sigma, c.t_g, c.b1, c.b2, c.n_moment) == (0.1, 0.02, 0.95, 0.05, 20)


def test_first_step_uses_initial_covariances():
    model, q, r, data = stationary(1, 0)
    f = NC2Filter(model, 3 * q, 2 * r)
    out = f.step(data.y_m[0])
    assert np.allclose(out.q_hat, 3 * q) and np.allclose(out.r_hat, 2 * r)
    assert out.report.s_q == out.report.s_r == 0
    assert out.report.e_a_max == out.report.e_g_max == 0.0


def test_update_requires_predict_and_double_predict_coasts():
    model, q, r, data = stationary(1, 0)
    f = NC2Filter(model, q, r)
    with pytest.raises(ConfigurationError):
        f.update(data.y_m[0])
    f.predict()
    f.predict()
    assert f.state.k == 2
    f.update(data.y_m[1])


def test_deterministic_outputs():
    model, q, r, data = stationary(2, 1, t_m=300)
    a = run_filter(NC2Filter(model, 5 * q, 0.2 * r), data.y_m)
    b = run_filter(NC2Filter(model, 5 * q, 0.2 * r), data.y_m)
    for x, y in zip(a, b):
        assert np.array_equal(x.state.x, y.state.x)
        assert np.array_equal(x.q_hat, y.q_hat) and np.array_equal(x.r_hat, y.r_hat)


def test_no_calibration_equals_frozen_intensity_sage():
    model, q, r, data = stationary(3, 0, t_m=300)
    cfg = NC2Config(calibrate=False)
    a = run_filter(NC2Filter(model, 4 * q, 0.5 * r, cfg), data.y_m)
    b = run_filter(SageFilter(model, 4 * q, 0.5 * r, cfg, frozen_intensity=True), data.y_m)
    for x, y in zip(a, b):
        assert np.array_equal(x.state.x, y.state.x)
        assert np.array_equal(x.q_hat, y.q_hat) and np.array_equal(x.r_hat, y.r_hat)


@settings(max_examples=15)
@given(st.integers(0, 500), st.sampled_from(list(SystemClass)),
       st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_emitted_covariances_psd_and_unit_sum(seed, cls, gq, gr):
    model, q, r, data = stationary(seed, 0, t_m=200, cls=cls)
    f = NC2Filter(model, q * 10**gq, r * 10**gr)
    for z in data.y_m:
        out = f.step(z)
        assert is_psd(out.q_hat) and is_psd(out.r_hat)
        assert np.all(np.isfinite(out.state.x))
        assert abs(f.q_fact.distribution.sum() - 1) < 1e-9
        assert abs(f.r_fact.distribution.sum() - 1) < 1e-9
        assert is_psd(f.q_fact.distribution) and is_psd(f.r_fact.distribution)


def test_overestimated_r_shrinks():
    shrinks, signs = [], []
    for s in range(20):
        model, q, r, data = stationary(21, s, t_m=300)
        f = NC2Filter(model, q, 100 * r)
        i_r, reports = [], []
        for z in data.y_m:
            reports.append(f.step(z).report)
            i_r.append(f.intensities[1] / r.sum())
        i_r = np.array(i_r)
        reach = int(np.argmax(i_r <= 2.0)) if np.any(i_r <= 2.0) else len(i_r)
        shrinks.append(bool(np.all(np.diff(i_r[:reach]) <= 1e-12)) and i_r[-1] < 5.0)
        live = reports[f.config.warmup:reach]
        signs.append(np.median([x.e_g_max for x in live]) < 0
                     and np.median([x.e_a_max for x in live]) > 0
                     and np.mean([x.s_r for x in live]) > 0.5)
    assert np.mean(shrinks) >= 0.5 and np.mean(signs) >= 0.5


@pytest.mark.xfail(strict=True, reason="with T_G=0.02 the Gaussian calibrator noise "
                   "(about 0.08 at 30 samples) exceeds the deadband, so intensities random-walk")
def test_true_initialization_intensities_hold():
    drift = []
    for s in range(20):
        model, q, r, data = stationary(21, s)
        f = NC2Filter(model, q, r)
        run_filter(f, data.y_m)
        i_q, i_r = f.intensities
        drift.append(max(abs(i_q / q.sum() - 1), abs(i_r / r.sum() - 1)))
    assert np.median(drift) < 0.1


@pytest.mark.xfail(strict=True, reason="E_A sign noise lets the flags pick the measurement "
                   "side or overshoot; the final process intensity median is about 0.7x truth")
def test_underestimated_process_converges():
    ratios, monotone = [], []
    for s in range(20):
        model, q, r, data = stationary(21, s)
        f = NC2Filter(model, 0.1 * q, r)
        i_q = []
        for z in data.y_m:
            f.step(z)
            i_q.append(f.intensities[0] / q.sum())
        i_q = np.array(i_q)
        reach = int(np.argmax(i_q >= 1 / 1.3)) if np.any(i_q >= 1 / 1.3) else len(i_q)
        monotone.append(bool(np.all(np.diff(i_q[:reach]) >= -1e-12)))
        ratios.append(i_q[-1])
    assert np.mean(monotone) >= 0.5
    assert 1 / 1.3 <= np.median(ratios) <= 1.3


def test_moment_memory_averages_raw_moments():
    model, q, r, data = stationary(4, 0, t_m=400)
    cfg = NC2Config(moment_memory=0.05, calibrate=False)
    f = NC2Filter(model, q, r, cfg)
    for z in data.y_m:
        f.step(z)
        assert abs(f.r_fact.distribution.sum() - 1) < 1e-9


# --- Sage ----------------------------------------------------------------

@pytest.mark.xfail(strict=True, reason="per-step process moments are dominated by the newest "
                   "innovation; after PSD projection Q inflates and drives R toward zero")
def test_sage_true_init_r_average():
    errs = []
    for s in range(10):
        model, q, r, data = stationary(21, s)
        outs = run_filter(SageFilter(model, q, r), data.y_m)
        avg = np.mean([o.r_hat for o in outs], axis=0)
        errs.append(np.linalg.norm(avg - r) / np.linalg.norm(r))
    assert np.median(errs) < 0.1


def test_sage_survives_indefinite_moments():
    model, q, r, data = stationary(5, 0, t_m=200)
    outs = run_filter(SageFilter(model, 50 * q, 0.01 * r), data.y_m)
    for o in outs:
        assert is_psd(o.q_hat) and is_psd(o.r_hat)
        assert np.trace(o.r_hat) > EPS_SUM


def test_sage_diverges_on_uo_class():
    cfg = SynthesisConfig(system_class=SystemClass.UO, seed=7, l_trials=100)
    s = run_suite(cfg, ("sage",)).summaries()["sage"]
    assert max(s.divergence_q, s.divergence_r) > 0


# --- baselines -----------------------------------------------------------

def test_uncorrected_with_truth_equals_oracle():
    model, q, r, data = stationary(6, 0, t_m=300)
    a = run_filter(BaselineFilter(model, q, r), data.y_m)
    b = run_filter(BaselineFilter(model, mode="oracle", schedule=(data.q_true, data.r_true)),
                   data.y_m)
    for x, y in zip(a, b):
        assert np.allclose(x.state.x, y.state.x, rtol=0, atol=0)


def test_oracle_schedule_indexing():
    model, q, r, data = stationary(6, 0, t_m=30)
    qs = np.array([q * (k + 1) for k in range(30)])
    rs = np.array([r * (k + 1) for k in range(30)])
    f = BaselineFilter(model, mode="oracle", schedule=(qs, rs))
    for k in range(3):
        out = f.step(data.y_m[k])
        assert np.allclose(out.q_hat, qs[k]) and np.allclose(out.r_hat, rs[k])


def test_baseline_orderings():
    from nc2.bench import run_mode

    errs = {"oracle": [], "uncorrected": [], "inflated": []}
    for j in range(20):
        d = generate_trial(SynthesisConfig(seed=9), j)
        errs["oracle"].append(run_mode(d, "oracle").state_error)
        errs["uncorrected"].append(run_mode(d, "uncorrected").state_error)
        d.q0_hat, d.r0_hat = d.q_base, 100 * d.r_base
        errs["inflated"].append(run_mode(d, "uncorrected").state_error)
    med = {k: np.median(v) for k, v in errs.items()}
    assert med["oracle"] <= med["uncorrected"]
    assert med["inflated"] > med["oracle"]


def test_make_filter_and_errors():
    model, q, r, data = stationary(1, 0, t_m=10)
    for mode in ("nc2", "sage", "uncorrected"):
        make_filter(mode, model, q, r)
    with pytest.raises(ConfigurationError):
        make_filter("kalman", model, q, r)
    with pytest.raises(ConfigurationError):
        BaselineFilter(model, mode="oracle")


def test_trace_writer(tmp_path):
    model, q, r, data = stationary(1, 0, t_m=40)
    f = NC2Filter(model, q, r)
    path = tmp_path / "trace.csv"
    with TraceWriter(path) as tw:
        for z in data.y_m:
            tw.write(f.step(z))
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 41
