"""Linear-Gaussian state-space model and the Joseph-form Kalman recursion.

Matrices are plain ``numpy`` arrays. Covariances are symmetrized after every
operation so that round-off never accumulates into asymmetry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericallySingularError

SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-9
MAX_CONDITION = 1e12


def symmetrize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def is_psd(m: np.ndarray, tol: float = PSD_TOL) -> bool:
    """True when the symmetric part of ``m`` has no eigenvalue below ``-tol``.

    The tolerance is scaled by the matrix magnitude once entries exceed one,
    so large but valid covariances are not rejected for round-off.
    """
    m = symmetrize(m)
    if not np.all(np.isfinite(m)):
        return False
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    return bool(np.linalg.eigvalsh(m).min() >= -tol * scale) if m.size else True


def as_covariance(m, dim: int | None = None, check: bool = True) -> np.ndarray:
    """Validate and symmetrize a covariance matrix.

    Raises:
        ConfigurationError: if ``m`` is not square, has the wrong dimension,
            or (when ``check``) is not positive semidefinite.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigurationError(f"covariance must be square, got shape {m.shape}")
    if dim is not None and m.shape[0] != dim:
        raise ConfigurationError(f"covariance must be {dim}x{dim}, got {m.shape}")
    m = symmetrize(m)
    if check and not is_psd(m):
        raise ConfigurationError("covariance is not positive semidefinite")
    return m


@dataclass(frozen=True)
class SystemModel:
    """State transition ``phi`` (n_x x n_x) and observation ``h`` (n_z x n_x)."""

    phi: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        h = np.atleast_2d(np.asarray(self.h, dtype=float))
        if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
            raise ConfigurationError(f"phi must be square, got {phi.shape}")
        if h.ndim != 2 or h.shape[1] != phi.shape[0]:
            raise ConfigurationError(
                f"h must have {phi.shape[0]} columns, got shape {h.shape}"
            )
        if h.shape[0] > h.shape[1]:
            raise ConfigurationError("n_z must not exceed n_x")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "h", h)

    @property
    def n_x(self) -> int:
        return self.phi.shape[0]

    @property
    def n_z(self) -> int:
        return self.h.shape[0]


@dataclass
class FilterState:
    """State estimate ``x``, its error covariance ``p`` and step index ``k``."""

    x: np.ndarray
    p: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n_x: int) -> "FilterState":
        return cls(np.zeros(n_x), np.zeros((n_x, n_x)), 0)

    def copy(self) -> "FilterState":
        return FilterState(self.x.copy(), self.p.copy(), self.k)


@dataclass
class InnovationRecord:
    """Innovation ``tau``, its covariance ``s`` and the ``H P_pred H^T`` term."""

    tau: np.ndarray
    s: np.ndarray
    hph: np.ndarray


def _check_state(state: FilterState, model: SystemModel):
    if state.x.shape != (model.n_x,) or state.p.shape != (model.n_x, model.n_x):
        raise ConfigurationError(
            f"state dimensions {state.x.shape}/{state.p.shape} do not match n_x={model.n_x}"
        )


def kf_predict(state: FilterState, model: SystemModel, q: np.ndarray) -> FilterState:
    """Propagate the estimate one step: ``x' = phi x``, ``P' = phi P phi^T + Q``."""
    _check_state(state, model)
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_x, model.n_x):
        raise ConfigurationError(f"q must be {model.n_x}x{model.n_x}, got {q.shape}")
    phi = model.phi
    x = phi @ state.x
    p = symmetrize(phi @ state.p @ phi.T + q)
    return FilterState(x, p, state.k + 1)


def kf_update(
    state_pred: FilterState, model: SystemModel, r: np.ndarray, z
) -> tuple[FilterState, InnovationRecord]:
    """Measurement update with the Joseph-form covariance.

    Raises:
        NumericallySingularError: if the innovation covariance is singular or
            its condition number exceeds ``MAX_CONDITION``.
    """
    _check_state(state_pred, model)
    h = model.h
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float).reshape(-1)
    if r.shape != (model.n_z, model.n_z) or z.shape != (model.n_z,):
        raise ConfigurationError(
            f"r/z dimensions {r.shape}/{z.shape} do not match n_z={model.n_z}"
        )
    p = state_pred.p
    ph_t = p @ h.T
    hph = symmetrize(h @ ph_t)
    s = symmetrize(hph + r)
    if not np.all(np.isfinite(s)):
        raise NumericallySingularError("innovation covariance is not finite", s)
    w = np.linalg.eigvalsh(s)
    if w[0] <= 0.0 or w[-1] > MAX_CONDITION * w[0]:
        raise NumericallySingularError("innovation covariance is numerically singular", s)
    # S is symmetric positive definite here, so K^T = S^{-1} (H P)
    gain = np.linalg.solve(s, ph_t.T).T
    tau = z - h @ state_pred.x
    x = state_pred.x + gain @ tau
    ikh = np.eye(model.n_x) - gain @ h
    p_upd = symmetrize(ikh @ p @ ikh.T + gain @ r @ gain.T)
    return FilterState(x, p_upd, state_pred.k), InnovationRecord(tau, s, hph)
