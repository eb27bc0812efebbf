"""Random benchmark systems and time-varying-noise measurement sequences.

Every random draw comes from a named substream of ``(seed, trial)`` so a
trial can be regenerated on its own, in any order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SynthesisError
from .statespace import SystemModel, is_psd, symmetrize

RANK_RTOL = 1e-8
MAX_DRAWS = 100_000
COEFF_FLOOR = 0.05
# Spread of the random modal basis around the identity. Larger values make
# phi strongly non-normal, which lets off-diagonal lag-1 autocovariance
# entries flip the calibrator sign.
BASIS_SPREAD = 0.2
BASIS_COND_MAX = 1e3

STREAMS = {"system": 0, "noise": 1, "perturbation": 2, "schedule": 3}


class SystemClass(str, Enum):
    OB_EQUAL = "ob-equal"
    OB_REDUCED = "ob-reduced"
    UO = "uo"


DEFAULT_DIMS = {
    SystemClass.OB_EQUAL: (3, 3),
    SystemClass.OB_REDUCED: (3, 2),
    SystemClass.UO: (3, 3),
}


@dataclass
class SynthesisConfig:
    """Parameters of the random system and measurement generators.

    ``paper_generator`` switches to the literal entry law
    ``round(c1 * c2**(g + c3)) / c1`` for both matrices. The default draws
    real poles uniformly from ``pole_range`` in a random near-identity basis
    and a positive ``H`` with the same entry law, using ``h_exponent`` in
    place of ``c3``. Candidates whose ``Q`` or ``R`` condition number exceeds
    ``noise_cond_max`` are redrawn.
    """

    system_class: SystemClass = SystemClass.OB_EQUAL
    n_x: int | None = None
    n_z: int | None = None
    c1: float = 100.0
    c2: float = 2.0
    c3: float = -10.0
    c4: float = 5.0
    c5: float = 10.0
    t_m: int = 900
    l_trials: int = 50
    seed: int = 0
    paper_generator: bool = False
    pole_range: tuple[float, float] = (0.5, 0.99)
    h_exponent: float = -2.0
    noise_cond_max: float = 100.0
    unobservable_pole_range: tuple[float, float] = (0.2, 0.8)
    max_draws: int = MAX_DRAWS

    def __post_init__(self):
        self.system_class = SystemClass(self.system_class)
        dx, dz = DEFAULT_DIMS[self.system_class]
        self.n_x = dx if self.n_x is None else int(self.n_x)
        self.n_z = dz if self.n_z is None else int(self.n_z)
        if not 1 <= self.n_z <= self.n_x:
            raise ConfigurationError("need 1 <= n_z <= n_x")
        if min(self.c1, self.c2, self.c4, self.c5) <= 0:
            raise ConfigurationError("c1, c2, c4, c5 must be positive")
        if self.t_m < 1 or self.l_trials < 1:
            raise ConfigurationError("t_m and l_trials must be positive")
        if self.system_class is SystemClass.UO and self.n_x < 2:
            raise ConfigurationError("an unobservable detectable system needs n_x >= 2")


def rng_for(seed: int, trial: int, stream: str) -> np.random.Generator:
    """Generator for one named substream of one trial."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), trial, STREAMS[stream]]))


def _rank(m: np.ndarray) -> int:
    sv = np.linalg.svd(m, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > RANK_RTOL * sv[0]))


def observability_matrix(model: SystemModel) -> np.ndarray:
    blocks = [model.h]
    for _ in range(model.n_x - 1):
        blocks.append(blocks[-1] @ model.phi)
    return np.vstack(blocks)


def check_observability(model: SystemModel) -> bool:
    return _rank(observability_matrix(model)) == model.n_x


def check_detectability(model: SystemModel) -> bool:
    """PBH test on every eigenvalue on or outside the unit circle."""
    n = model.n_x
    for lam in np.linalg.eigvals(model.phi):
        if abs(lam) < 1.0 - 1e-9:
            continue
        pbh = np.vstack([model.phi - lam * np.eye(n), model.h.astype(complex)])
        if _rank(pbh) < n:
            return False
    return True


def _class_ok(cfg: SynthesisConfig, model: SystemModel) -> bool:
    if not check_detectability(model):
        return False
    observable = check_observability(model)
    return not observable if cfg.system_class is SystemClass.UO else observable


def _power_law_entries(rng, cfg, shape):
    g = rng.standard_normal(shape)
    return np.round(cfg.c1 * cfg.c2 ** (g + cfg.c3)) / cfg.c1


def _positive_entries(rng, cfg, shape, exponent=0.0):
    g = rng.standard_normal(shape)
    return np.round(cfg.c1 * cfg.c2 ** (g + exponent)) / cfg.c1


def _gram(rng, cfg, n):
    g = np.abs(rng.standard_normal((n, n)))
    return symmetrize(cfg.c4 * g @ g.T / n)


def _random_basis(rng, n):
    t = np.eye(n) + BASIS_SPREAD * rng.standard_normal((n, n))
    if np.linalg.cond(t) > BASIS_COND_MAX:
        return None
    return t


def _modal_matrix(rng, poles, n):
    """Real matrix with the given eigenvalues in a random basis."""
    t = _random_basis(rng, n)
    if t is None:
        return None, None
    return t @ np.diag(poles) @ np.linalg.inv(t), t


def _draw_stable(rng, cfg):
    n_x, n_z = cfg.n_x, cfg.n_z
    if cfg.system_class is SystemClass.UO:
        # observable block plus one unobservable stable mode feeding from it
        n_o = n_x - 1
        phi_o, _ = _modal_matrix(rng, rng.uniform(*cfg.pole_range, n_o), n_o)
        t = _random_basis(rng, n_x)
        if phi_o is None or t is None:
            return None
        block = np.zeros((n_x, n_x))
        block[:n_o, :n_o] = phi_o
        block[n_o, :n_o] = _positive_entries(rng, cfg, (n_o,))
        block[n_o, n_o] = rng.uniform(*cfg.unobservable_pole_range)
        h_tilde = np.zeros((n_z, n_x))
        h_tilde[:, :n_o] = _positive_entries(rng, cfg, (n_z, n_o), cfg.h_exponent)
        t_inv = np.linalg.inv(t)
        return t @ block @ t_inv, h_tilde @ t_inv
    phi, _ = _modal_matrix(rng, rng.uniform(*cfg.pole_range, n_x), n_x)
    if phi is None:
        return None
    return phi, _positive_entries(rng, cfg, (n_z, n_x), cfg.h_exponent)


def generate_system(cfg: SynthesisConfig, rng: np.random.Generator | None = None):
    """Draw ``(model, Q, R)`` satisfying the class predicate.

    Raises:
        SynthesisError: when ``cfg.max_draws`` candidates are all rejected.
    """
    rng = rng if rng is not None else rng_for(cfg.seed, 0, "system")
    for _ in range(cfg.max_draws):
        if cfg.paper_generator:
            phi = _power_law_entries(rng, cfg, (cfg.n_x, cfg.n_x))
            h = _power_law_entries(rng, cfg, (cfg.n_z, cfg.n_x))
        else:
            drawn = _draw_stable(rng, cfg)
            if drawn is None:
                continue
            phi, h = drawn
        q = _gram(rng, cfg, cfg.n_x)
        r = _gram(rng, cfg, cfg.n_z)
        if not (is_psd(q) and is_psd(r)):
            continue
        if max(np.linalg.cond(q), np.linalg.cond(r)) > cfg.noise_cond_max:
            continue
        model = SystemModel(phi, h)
        if _class_ok(cfg, model):
            return model, q, r
    raise SynthesisError(
        f"no {cfg.system_class.value} system accepted after {cfg.max_draws} draws"
    )


def segment_index(k: int, t_m: int) -> int:
    """0-based noise segment of 1-based step ``k``: ``round(3k/T_m)`` clipped to 1..3."""
    seg = math.floor(3.0 * k / t_m + 0.5)
    return min(max(seg, 1), 3) - 1


def noise_schedule(base: np.ndarray, coeffs: np.ndarray, t_m: int) -> np.ndarray:
    """Per-step covariances ``coeffs[seg(k)] * base`` for ``k = 1..t_m``."""
    segs = np.array([segment_index(k, t_m) for k in range(1, t_m + 1)])
    return coeffs[segs][:, None, None] * base[None, :, :]


def _sqrt_factor(cov: np.ndarray) -> np.ndarray:
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(cov + 1e-9 * np.eye(cov.shape[0]))


@dataclass
class TrialData:
    """One benchmark trial: the system, its noise schedules and measurements."""

    model: SystemModel
    q_base: np.ndarray
    r_base: np.ndarray
    coeffs: np.ndarray
    q_true: np.ndarray
    r_true: np.ndarray
    y_m: np.ndarray
    y_true: np.ndarray
    q0_hat: np.ndarray
    r0_hat: np.ndarray
    init_factors: tuple[float, float] = (1.0, 1.0)
    meta: dict = field(default_factory=dict)

    def save(self, path) -> None:
        """Write a self-describing ``.npz`` bundle (arrays are row-major)."""
        path = Path(path)
        meta = dict(self.meta)
        meta.update(n_x=self.model.n_x, n_z=self.model.n_z, t_m=int(self.y_m.shape[0]))
        np.savez(
            path,
            meta=np.array(json.dumps(meta, sort_keys=True)),
            phi=self.model.phi,
            h=self.model.h,
            q_base=self.q_base,
            r_base=self.r_base,
            coeffs=self.coeffs,
            q_true=self.q_true,
            r_true=self.r_true,
            y_m=self.y_m,
            y_true=self.y_true,
            q0_hat=self.q0_hat,
            r0_hat=self.r0_hat,
            init_factors=np.array(self.init_factors),
        )

    @classmethod
    def load(cls, path) -> "TrialData":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(
                SystemModel(z["phi"], z["h"]),
                z["q_base"],
                z["r_base"],
                z["coeffs"],
                z["q_true"],
                z["r_true"],
                z["y_m"],
                z["y_true"],
                z["q0_hat"],
                z["r0_hat"],
                tuple(float(v) for v in z["init_factors"]),
                meta,
            )


def generate_measurements(
    model: SystemModel,
    q: np.ndarray,
    r: np.ndarray,
    cfg: SynthesisConfig,
    rng: np.random.Generator | None = None,
    coeffs: np.ndarray | None = None,
) -> TrialData:
    """Simulate ``cfg.t_m`` steps with piecewise-constant noise scaling.

    ``coeffs`` (3x2, process then measurement column) defaults to
    ``abs(2 * randn(3, 2))`` floored at :data:`COEFF_FLOOR`. Measurements
    are stored one step per row. The initial covariances default to the
    base matrices; see :func:`perturb_initial_covariances`.
    """
    rng = rng if rng is not None else rng_for(cfg.seed, 0, "noise")
    if coeffs is None:
        coeffs = np.maximum(np.abs(2.0 * rng.standard_normal((3, 2))), COEFF_FLOOR)
    coeffs = np.asarray(coeffs, dtype=float)
    q = symmetrize(q)
    r = symmetrize(r)
    q_true = noise_schedule(q, coeffs[:, 0], cfg.t_m)
    r_true = noise_schedule(r, coeffs[:, 1], cfg.t_m)
    q_chol = [_sqrt_factor(c * q) for c in coeffs[:, 0]]
    r_chol = [_sqrt_factor(c * r) for c in coeffs[:, 1]]
    n_x, n_z = model.n_x, model.n_z
    x = np.zeros(n_x)
    y_m = np.empty((cfg.t_m, n_z))
    y_true = np.empty((cfg.t_m, n_z))
    for k in range(1, cfg.t_m + 1):
        seg = segment_index(k, cfg.t_m)
        x = model.phi @ x + q_chol[seg] @ rng.standard_normal(n_x)
        y_true[k - 1] = model.h @ x
        y_m[k - 1] = y_true[k - 1] + r_chol[seg] @ rng.standard_normal(n_z)
    return TrialData(
        model, q, r, coeffs, q_true, r_true, y_m, y_true, q.copy(), r.copy(),
        meta={"seed": int(cfg.seed), "class": cfg.system_class.value},
    )


def perturb_initial_covariances(q, r, cfg: SynthesisConfig, rng=None, g=None):
    """Scale ``Q`` and ``R`` by independent factors ``c5 ** (g + 0.5)``.

    ``g`` may be given as a pair of standard-normal values; otherwise both
    are drawn from ``rng``. Returns ``(q0_hat, r0_hat, (f_q, f_r))``.
    """
    if g is None:
        rng = rng if rng is not None else rng_for(cfg.seed, 0, "perturbation")
        g = rng.standard_normal(2)
    f_q = float(cfg.c5 ** (g[0] + 0.5))
    f_r = float(cfg.c5 ** (g[1] + 0.5))
    return np.asarray(q) * f_q, np.asarray(r) * f_r, (f_q, f_r)


def generate_trial(cfg: SynthesisConfig, trial: int) -> TrialData:
    """System, measurements and perturbed initialization for trial ``trial``."""
    model, q, r = generate_system(cfg, rng_for(cfg.seed, trial, "system"))
    data = generate_measurements(model, q, r, cfg, rng_for(cfg.seed, trial, "noise"))
    q0, r0, factors = perturb_initial_covariances(
        q, r, cfg, rng_for(cfg.seed, trial, "perturbation")
    )
    data.q0_hat, data.r0_hat, data.init_factors = q0, r0, factors
    data.meta.update(trial=trial, paper_generator=cfg.paper_generator)
    return data


def config_dict(cfg: SynthesisConfig) -> dict:
    d = asdict(cfg)
    d["system_class"] = cfg.system_class.value
    return d
