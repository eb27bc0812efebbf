import numpy as np
import pytest
from hypothesis import given, strategies as st

from nc2.errors import ConfigurationError, NumericallySingularError
from nc2.statespace import FilterState, SystemModel, as_covariance, is_psd, kf_predict, kf_update
from nc2.synthesis import SynthesisConfig, generate_measurements, generate_system, rng_for

from conftest import random_psd


def test_predict_identity_zero_noise():
    m = SystemModel(np.eye(2), np.eye(2))
    out = kf_predict(FilterState(np.array([1.0, 2.0]), np.eye(2)), m, np.zeros((2, 2)))
    assert np.allclose(out.x, [1, 2]) and np.allclose(out.p, np.eye(2))
    assert out.k == 1


def test_predict_scalar():
    m = SystemModel([[1.0]], [[1.0]])
    out = kf_predict(FilterState(np.zeros(1), np.eye(1)), m, np.eye(1))
    assert out.x[0] == 0.0 and out.p[0, 0] == pytest.approx(2.0)


def test_predict_shear():
    m = SystemModel([[1.0, 1.0], [0.0, 1.0]], [[1.0, 0.0]])
    out = kf_predict(FilterState(np.array([0.0, 1.0]), np.eye(2)), m, np.zeros((2, 2)))
    assert np.allclose(out.x, [1, 1])
    assert np.allclose(out.p, [[2, 1], [1, 1]])


def test_update_scalar_closed_form():
    m = SystemModel([[1.0]], [[1.0]])
    post, rec = kf_update(FilterState(np.zeros(1), np.array([[2.0]]), 1), m, np.eye(1), [3.0])
    assert rec.s[0, 0] == pytest.approx(3.0)
    assert post.x[0] == pytest.approx(2.0)
    assert post.p[0, 0] == pytest.approx(2.0 / 3.0)
    assert rec.tau[0] == pytest.approx(3.0)
    assert rec.hph[0, 0] == pytest.approx(2.0)


def test_zero_innovation_is_fixed_point(rng):
    m = SystemModel(np.eye(3), rng.standard_normal((2, 3)))
    x = rng.standard_normal(3)
    post, _ = kf_update(FilterState(x, random_psd(rng, 3)), m, random_psd(rng, 2), m.h @ x)
    assert np.allclose(post.x, x)


def test_huge_r_ignores_measurement():
    m = SystemModel([[1.0]], [[1.0]])
    post, _ = kf_update(FilterState(np.zeros(1), np.eye(1)), m, np.array([[1e12]]), [5.0])
    assert abs(post.x[0]) < 1e-6


def test_singular_s_raises():
    m = SystemModel(np.eye(2), np.eye(2))
    with pytest.raises(NumericallySingularError):
        kf_update(FilterState(np.zeros(2), np.zeros((2, 2))), m, np.zeros((2, 2)), [1.0, 1.0])


def test_dimension_checks():
    with pytest.raises(ConfigurationError):
        SystemModel(np.eye(2), np.eye(3))
    with pytest.raises(ConfigurationError):
        SystemModel(np.eye(2), np.ones((3, 2)))
    with pytest.raises(ConfigurationError):
        as_covariance(-np.eye(2))
    m = SystemModel(np.eye(2), np.eye(2))
    with pytest.raises(ConfigurationError):
        kf_predict(FilterState(np.zeros(2), np.eye(2)), m, np.eye(3))


def test_joseph_psd_over_many_draws():
    rng = np.random.default_rng(0)
    worst = np.inf
    for _ in range(1000):
        n_x, n_z = 3, int(rng.integers(1, 4))
        m = SystemModel(rng.standard_normal((n_x, n_x)), rng.standard_normal((n_z, n_x)))
        p = random_psd(rng, n_x, rank=int(rng.integers(1, 4)))
        r = random_psd(rng, n_z) + 1e-3 * np.eye(n_z)
        post, _ = kf_update(FilterState(np.zeros(n_x), p), m, r, rng.standard_normal(n_z))
        worst = min(worst, np.linalg.eigvalsh(post.p).min())
    assert worst >= -1e-9


@given(st.integers(0, 10_000))
def test_joseph_matches_textbook_form(seed):
    rng = np.random.default_rng(seed)
    m = SystemModel(rng.standard_normal((3, 3)), rng.standard_normal((2, 3)))
    p = random_psd(rng, 3) + np.eye(3)
    r = random_psd(rng, 2) + np.eye(2)
    post, rec = kf_update(FilterState(np.zeros(3), p), m, r, rng.standard_normal(2))
    k = p @ m.h.T @ np.linalg.inv(rec.s)
    assert np.allclose(post.p, (np.eye(3) - k @ m.h) @ p, atol=1e-8)
    assert np.allclose(post.p, post.p.T)


def test_innovations_are_zero_mean_under_true_noise():
    cfg = SynthesisConfig(seed=5, t_m=10_000)
    model, q, r = generate_system(cfg, rng_for(5, 0, "system"))
    data = generate_measurements(model, q, r, cfg, rng_for(5, 0, "noise"), coeffs=np.ones((3, 2)))
    st_ = FilterState(np.zeros(model.n_x), np.zeros((model.n_x, model.n_x)))
    taus, s_diag = [], []
    for z in data.y_m:
        st_, rec = kf_update(kf_predict(st_, model, q), model, r, z)
        taus.append(rec.tau)
        s_diag.append(np.diag(rec.s))
    taus = np.array(taus)
    sd = np.sqrt(np.mean(s_diag, axis=0))
    assert np.all(np.abs(taus.mean(axis=0)) < 3 * sd / np.sqrt(len(taus)))


def test_is_psd_scales_tolerance():
    assert is_psd(np.diag([1e6, -1e-4]))  # round-off relative to a large entry
    assert not is_psd(np.diag([1.0, -1e-3]))
