import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nc2.errors import ConfigurationError, InsufficientDataError
from nc2.estimator import (
    MomentWindow,
    NoiseFactorization,
    _process_moment,
    compose_covariance,
    normalize_distribution,
    pseudo_inverse,
    psd_project,
    raw_measurement_moment,
    raw_process_moment,
    window_weights,
)
from nc2.statespace import SystemModel

# Subnormal entries are excluded: their reciprocals overflow float64, so
# neither numpy nor any other pseudo-inverse has a finite answer to compare.
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False, allow_subnormal=False)


class _FixedWindow:
    """Stand-in window whose process sum is fixed, to test the moment algebra."""

    def __init__(self, a_m):
        self.a_m = np.asarray(a_m, dtype=float)

    def weighted_sum(self, which):
        assert which == "m"
        return self.a_m


# --- factorization -------------------------------------------------------

def test_compose_examples():
    f = NoiseFactorization(4.0, np.diag([0.5, 0.5]))
    assert np.allclose(compose_covariance(f), 2 * np.eye(2))
    d = np.array([[0.3, 0.1], [0.1, 0.5]])
    assert np.allclose(compose_covariance(NoiseFactorization(1.0, d)), d)


@given(st.integers(0, 10_000))
def test_factorization_round_trip(seed):
    rng = np.random.default_rng(seed)
    g = np.abs(rng.standard_normal((3, 3)))
    cov = g @ g.T
    f = NoiseFactorization.from_covariance(cov)
    back = NoiseFactorization.from_covariance(compose_covariance(f))
    assert back.intensity == pytest.approx(f.intensity, rel=1e-12)
    assert np.allclose(back.distribution, f.distribution, atol=1e-14)


def test_factorization_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        NoiseFactorization(0.0, np.eye(1))
    with pytest.raises(ConfigurationError):
        NoiseFactorization(1.0, np.eye(2))
    with pytest.raises(ConfigurationError):
        NoiseFactorization.from_covariance(np.array([[1.0, -1.0], [-1.0, 1.0]]))


# --- normalization -------------------------------------------------------

def test_normalize_scales():
    prev = np.full((2, 2), 0.25)
    assert np.allclose(normalize_distribution(2 * np.eye(2), prev), 0.5 * np.eye(2))


def test_normalize_negative_definite_keeps_previous():
    prev = np.full((2, 2), 0.25)
    assert np.array_equal(normalize_distribution(-np.eye(2), prev), prev)


def test_normalize_zero_entry_sum_keeps_previous():
    raw = np.array([[2.0, -3.0], [-3.0, 2.0]])
    proj = psd_project(raw)
    assert np.allclose(proj, [[2.5, -2.5], [-2.5, 2.5]])
    prev = np.full((2, 2), 0.25)
    assert np.array_equal(normalize_distribution(raw, prev, 0.0, 0.0), prev)


def test_normalize_guards():
    prev = np.full((2, 2), 0.25)
    ill = np.array([[1.0, 0.999], [0.999, 1.0]])  # eigenvalue ratio ~5e-4
    assert np.array_equal(normalize_distribution(ill, prev), prev)
    assert np.allclose(normalize_distribution(ill, prev, 0.0, 0.0), ill / ill.sum())
    neg = np.array([[1.0, -0.3], [-0.3, 1.0]])  # sum 1.4 < 0.5 * trace? no: 1.4 > 1.0
    assert not np.array_equal(normalize_distribution(neg, prev), prev)
    neg = np.array([[1.0, -0.6], [-0.6, 1.0]])  # sum 0.8 < 1.0
    assert np.array_equal(normalize_distribution(neg, prev), prev)
    assert np.array_equal(normalize_distribution(np.full((2, 2), np.nan), prev), prev)


@given(arrays(float, (3, 3), elements=finite))
def test_normalize_output_is_unit_sum_psd(m):
    prev = np.full((3, 3), 1.0 / 9.0)
    out = normalize_distribution(m, prev, 0.0, 0.0)
    assert out.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.eigvalsh(out).min() >= -1e-9 * max(1.0, np.abs(out).max())


@given(arrays(float, (4, 4), elements=finite))
def test_psd_project_properties(m):
    p = psd_project(m)
    assert np.allclose(p, p.T)
    assert np.linalg.eigvalsh(p).min() >= -1e-9 * max(1.0, np.abs(p).max())
    # projection is idempotent
    assert np.allclose(psd_project(p), p, atol=1e-9 * max(1.0, np.abs(p).max()))


# --- pseudo-inverse ------------------------------------------------------

def test_pinv_examples():
    assert np.allclose(pseudo_inverse(np.eye(3)), np.eye(3))
    assert np.allclose(pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


def test_pinv_moore_penrose_100_seeds():
    for seed in range(100):
        m = np.random.default_rng(seed).standard_normal((3, 2))
        mp = pseudo_inverse(m)
        assert np.allclose(m @ mp @ m, m, atol=1e-8)
        assert np.allclose(mp @ m @ mp, mp, atol=1e-8)


@given(arrays(float, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_pinv_matches_numpy(m):
    assert np.allclose(pseudo_inverse(m), np.linalg.pinv(m, rcond=1e-10), atol=1e-6)


# --- windowed moments ----------------------------------------------------

@given(st.integers(1, 40), st.floats(0.01, 0.99))
def test_window_weights_sum(n, b):
    assert window_weights(n, b).sum() == pytest.approx(1.0)
    assert window_weights(n, b, 1).sum() == pytest.approx(b)


def test_single_term_window():
    w = MomentWindow(20)
    w.push([9.0], [[0.0]])
    with pytest.raises(InsufficientDataError):
        raw_measurement_moment(w, [[0.0]])
    w.push([2.0], [[1.0]])
    assert raw_measurement_moment(w, [[1.0]])[0, 0] == pytest.approx(4.0 - 1.0)


def test_constant_tau_weight_sum_is_one():
    w = MomentWindow(3, b1=0.95)
    for _ in range(4):
        w.push([1.0], [[0.0]])
    assert w.n_window == 3
    assert raw_measurement_moment(w, [[0.0]])[0, 0] == pytest.approx(1.0)


def test_measurement_moment_monte_carlo():
    rng = np.random.default_rng(1)
    r_true = np.array([[2.0, 0.5], [0.5, 1.0]])
    hph = np.array([[1.0, 0.2], [0.2, 0.5]])
    chol = np.linalg.cholesky(r_true + hph)
    w = MomentWindow(20)
    acc, n = np.zeros((2, 2)), 0
    for _ in range(10_000):
        w.push(chol @ rng.standard_normal(2), hph)
        if w.n_window:
            acc += raw_measurement_moment(w, hph)
            n += 1
    assert np.linalg.norm(acc / n - r_true) / np.linalg.norm(r_true) < 0.05


@given(st.integers(0, 10_000), st.booleans())
def test_recursion_matches_direct_sum(seed, literal):
    rng = np.random.default_rng(seed)
    direct = MomentWindow(20, literal_process_weight=literal)
    rec = MomentWindow(20, literal_process_weight=literal, recursive=True)
    for _ in range(int(rng.integers(2, 60))):
        tau = rng.standard_normal(2)
        direct.push(tau, np.eye(2))
        rec.push(tau, np.eye(2))
        if direct.n_window:
            for which in ("r", "m"):
                assert np.allclose(rec.weighted_sum(which), direct.weighted_sum(which), atol=1e-8)


def test_process_moment_examples():
    model = SystemModel(np.eye(2), np.eye(2))
    p = np.eye(2)
    # exact cancellation
    a_q = raw_process_moment(_FixedWindow(2 * np.eye(2)), np.eye(2), model, p)
    assert np.allclose(a_q, 0.0)
    # hand arithmetic: diff = diag(3, 3), phi P phi^T = I
    a_q, path = _process_moment(_FixedWindow(4 * np.eye(2)), np.eye(2), model, p)
    assert path == "pinv" and np.allclose(a_q, 2 * np.eye(2))


def test_process_moment_transpose_path_rank_one():
    model = SystemModel(np.eye(2), [[1.0, 0.0]])
    a_q, path = _process_moment(_FixedWindow([[3.0]]), [[0.0]], model, np.zeros((2, 2)))
    # n_z < n_x has a pseudo-inverse too; the process-moment product is tested directly
    h = model.h
    c = 3.0
    assert np.allclose(h.T @ np.array([[c]]) @ h, [[c, 0], [0, 0]])
    assert path in ("pinv", "transpose")
    assert np.allclose(a_q, [[c, 0], [0, 0]])


def test_process_moment_falls_back_when_indefinite():
    model = SystemModel(np.eye(2), np.eye(2))
    a_m = np.diag([1.0, -5.0])
    a_q, path = _process_moment(_FixedWindow(a_m), np.zeros((2, 2)), model, np.zeros((2, 2)))
    assert path == "transpose" and np.allclose(a_q, a_m)
    _, path = _process_moment(_FixedWindow(a_m), np.zeros((2, 2)), model, np.zeros((2, 2)),
                              fallback=False)
    assert path == "pinv"


def test_window_validation():
    with pytest.raises(ConfigurationError):
        MomentWindow(0)
    with pytest.raises(ConfigurationError):
        MomentWindow(5, b1=1.0)
