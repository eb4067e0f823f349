"""ETKF analysis step with multiplicative inflation.

Two equivalent analysis forms are provided.  The covariance form builds the
``m x m`` forecast covariance and the Kalman gain explicitly; the transform
form works entirely in ensemble space with ``N x N`` matrices and is the one
the harness uses by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .ensemble import Ensemble, covariance
from .errors import (
    CapacityError,
    DimensionMismatch,
    EigenFailure,
    InvalidInflation,
    InvalidNoiseCovariance,
    NotSymmetric,
    SingularError,
)

#: Largest state dimension for which the covariance form will materialize
#: the forecast covariance.
DEFAULT_MAX_COVARIANCE_DIM = 512

_EIG_FLOOR = 1e-14


class ObservationOperator:
    """Linear observation operator, either the identity or a dense ``d x m`` matrix."""

    def __init__(self, matrix=None, *, dim=None):
        if matrix is None:
            if dim is None or dim < 1:
                raise DimensionMismatch("identity operator needs a positive dimension")
            self._matrix = None
            self.m = self.d = int(dim)
        else:
            H = np.array(matrix, dtype=float)
            if H.ndim != 2:
                raise DimensionMismatch(f"observation matrix must be 2-D, got {H.shape}")
            H.setflags(write=False)
            self._matrix = H
            self.d, self.m = H.shape

    @classmethod
    def identity(cls, m: int) -> "ObservationOperator":
        return cls(dim=m)

    @classmethod
    def from_matrix(cls, H) -> "ObservationOperator":
        return cls(H)

    @property
    def is_identity(self) -> bool:
        return self._matrix is None

    def dense(self) -> np.ndarray:
        return np.eye(self.m) if self._matrix is None else self._matrix

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``H x`` for a vector or for each column of a matrix."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.m:
            raise DimensionMismatch(f"operator expects state dimension {self.m}, got {x.shape[0]}")
        return x.copy() if self._matrix is None else self._matrix @ x

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.d:
            raise DimensionMismatch(f"adjoint expects dimension {self.d}, got {z.shape[0]}")
        return z.copy() if self._matrix is None else self._matrix.T @ z

    def __repr__(self):
        kind = "identity" if self.is_identity else "matrix"
        return f"ObservationOperator({kind}, d={self.d}, m={self.m})"


class NoiseCovariance:
    """Observation noise covariance, ``gamma**2 I`` or a dense SPD matrix.

    The scaled-identity form is stored by its standard deviation ``gamma``
    and takes a fast path in :meth:`solve` and :meth:`sample_transform`.
    """

    def __init__(self, *, gamma=None, dim=None, matrix=None):
        if matrix is not None:
            G = np.array(matrix, dtype=float)
            if G.ndim != 2 or G.shape[0] != G.shape[1]:
                raise InvalidNoiseCovariance(f"noise covariance must be square, got {G.shape}")
            if not np.allclose(G, G.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(G).max())):
                raise InvalidNoiseCovariance("noise covariance is not symmetric")
            G = 0.5 * (G + G.T)
            try:
                self._chol = np.linalg.cholesky(G)
            except np.linalg.LinAlgError as exc:
                raise InvalidNoiseCovariance("noise covariance is not positive definite") from exc
            if np.linalg.eigvalsh(G)[0] <= 0:
                raise InvalidNoiseCovariance("noise covariance is not positive definite")
            G.setflags(write=False)
            self._matrix = G
            self.gamma = None
            self.dim = G.shape[0]
        else:
            if gamma is None or not gamma > 0:
                raise InvalidNoiseCovariance(f"gamma must be positive, got {gamma}")
            if dim is None or dim < 1:
                raise InvalidNoiseCovariance("scaled identity needs a positive dimension")
            self._matrix = None
            self._chol = None
            self.gamma = float(gamma)
            self.dim = int(dim)

    @classmethod
    def scaled_identity(cls, gamma: float, dim: int) -> "NoiseCovariance":
        return cls(gamma=gamma, dim=dim)

    @classmethod
    def from_matrix(cls, G) -> "NoiseCovariance":
        return cls(matrix=G)

    @property
    def is_scaled_identity(self) -> bool:
        return self._matrix is None

    def dense(self) -> np.ndarray:
        if self._matrix is None:
            return self.gamma**2 * np.eye(self.dim)
        return self._matrix

    def solve(self, z: np.ndarray) -> np.ndarray:
        """``Gamma^{-1} z`` for a vector or matrix right-hand side."""
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.dim:
            raise DimensionMismatch(f"noise covariance has dimension {self.dim}, got {z.shape[0]}")
        if self._matrix is None:
            return z / self.gamma**2
        return sla.cho_solve((self._chol, True), z)

    def sample_transform(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals ``z`` to ``N(0, Gamma)`` draws."""
        if self._matrix is None:
            return self.gamma * z
        return self._chol @ z

    def __repr__(self):
        if self.is_scaled_identity:
            return f"NoiseCovariance(gamma={self.gamma}, dim={self.dim})"
        return f"NoiseCovariance(matrix, dim={self.dim})"


def _check_pair(H: ObservationOperator, Gamma: NoiseCovariance):
    if H.d != Gamma.dim:
        raise DimensionMismatch(f"observation dimension {H.d} != noise dimension {Gamma.dim}")


def _check_alpha(alpha):
    if not alpha >= 1.0:
        raise InvalidInflation(f"inflation factor must be >= 1, got {alpha}")


def inflate(Vhat: Ensemble, alpha: float) -> Ensemble:
    """Scale deviations about the mean by ``alpha``, keeping the mean fixed."""
    _check_alpha(alpha)
    if alpha == 1.0:
        return Vhat
    X = Vhat.values
    xbar = X.mean(axis=1, keepdims=True)
    return Ensemble(xbar + alpha * (X - xbar))


def kalman_gain(Chat, H: ObservationOperator, Gamma: NoiseCovariance) -> np.ndarray:
    """``K = C H^T (H C H^T + Gamma)^{-1}`` via a Cholesky solve of the innovation covariance."""
    _check_pair(H, Gamma)
    C = np.asarray(Chat, dtype=float)
    if C.shape != (H.m, H.m):
        raise DimensionMismatch(f"covariance shape {C.shape} does not match state dimension {H.m}")
    CHt = H.apply(C.T).T  # C H^T = (H C^T)^T, shape (m, d)
    S = H.apply(CHt) + Gamma.dense()
    S = 0.5 * (S + S.T)
    try:
        factor = sla.cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularError("innovation covariance is not positive definite") from exc
    # K S = C H^T  <=>  S K^T = H C
    return sla.cho_solve(factor, CHt.T).T


def mean_update(vbar_hat, y, K, H: ObservationOperator) -> np.ndarray:
    """``vbar = vbar_hat + K (y - H vbar_hat)``."""
    vbar_hat = np.asarray(vbar_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    K = np.asarray(K, dtype=float)
    if y.shape != (H.d,) or K.shape != (H.m, H.d) or vbar_hat.shape != (H.m,):
        raise DimensionMismatch(
            f"inconsistent shapes: mean {vbar_hat.shape}, obs {y.shape}, gain {K.shape}"
        )
    return vbar_hat + K @ (y - H.apply(vbar_hat))


def symmetric_inverse_sqrt(S, scale: float = 1.0) -> np.ndarray:
    """Return ``(I + scale * S)^{-1/2}`` for symmetric PSD ``S``.

    The eigendecomposition is taken of ``S`` itself and ``scale`` is applied
    to the eigenvalues afterwards, which keeps the result accurate when
    ``scale`` is very large (heavy inflation).  Eigenvalues of ``I + scale*S``
    are clamped at ``1e-14`` before the power.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got {S.shape}")
    norm = max(np.abs(S).max(initial=0.0), 1.0)
    if np.abs(S - S.T).max(initial=0.0) > 1e-10 * norm:
        raise NotSymmetric("matrix is not symmetric to 1e-10")
    try:
        w, U = np.linalg.eigh(0.5 * (S + S.T))
    except np.linalg.LinAlgError as exc:
        raise EigenFailure("symmetric eigendecomposition did not converge") from exc
    if not np.all(np.isfinite(w)):
        raise EigenFailure("non-finite eigenvalues")
    lam = np.maximum(1.0 + scale * np.maximum(w, 0.0), _EIG_FLOOR)
    out = (U * lam**-0.5) @ U.T
    return 0.5 * (out + out.T)


def _obs_space_gram(dVhat: np.ndarray, H: ObservationOperator, Gamma: NoiseCovariance):
    """Return ``(dY, Gamma^{-1} dY, dY^T Gamma^{-1} dY / (N-1))``."""
    N = dVhat.shape[1]
    dY = H.apply(dVhat)
    GinvdY = Gamma.solve(dY)
    G = dY.T @ GinvdY / (N - 1)
    return dY, GinvdY, 0.5 * (G + G.T)


def transform_matrix(dVhat, H: ObservationOperator, Gamma: NoiseCovariance, alpha: float = 1.0) -> np.ndarray:
    """Symmetric transform ``(I_N + alpha^2/(N-1) dV^T H^T Gamma^{-1} H dV)^{-1/2}``.

    ``dVhat`` must be the un-inflated forecast deviations.
    """
    _check_alpha(alpha)
    _check_pair(H, Gamma)
    dV = dVhat.values if isinstance(dVhat, Ensemble) else np.asarray(dVhat, dtype=float)
    _, _, G = _obs_space_gram(dV, H, Gamma)
    return symmetric_inverse_sqrt(G, scale=alpha**2)


@dataclass(frozen=True)
class AnalysisOutput:
    """Result of one analysis step.

    ``analysis_covariance`` is ``None`` when diagnostics were not requested or
    the state dimension exceeds the materialization threshold.
    ``forecast_min_eigenvalue`` refers to the un-inflated forecast covariance.
    """

    analysis: Ensemble
    kalman_gain_applied: bool
    analysis_covariance: np.ndarray | None = None
    forecast_min_eigenvalue: float | None = None
    analysis_min_eigenvalue: float | None = None


def min_eigenvalue(V: Ensemble, max_dim: int = DEFAULT_MAX_COVARIANCE_DIM) -> float | None:
    """Smallest eigenvalue of ``covariance(V)``.

    Exactly zero when ``N - 1 < m`` (rank deficiency); ``None`` when ``m``
    exceeds ``max_dim``.  Computed from the singular values of the deviations, which resolves
    small eigenvalues to relative accuracy ``eps * sqrt(cond)``.
    """
    if V.N - 1 < V.m:
        return 0.0
    if V.m > max_dim:
        return None
    X = V.values
    s = np.linalg.svd(X - X.mean(axis=1, keepdims=True), compute_uv=False)
    return float(s[V.m - 1] ** 2 / (V.N - 1))


def _diagnostics(Vhat, V, max_dim):
    if V.m > max_dim:
        return None, None, None
    return covariance(V), min_eigenvalue(Vhat, max_dim), min_eigenvalue(V, max_dim)


def analysis_step_covariance_form(
    Vhat: Ensemble,
    y,
    H: ObservationOperator,
    Gamma: NoiseCovariance,
    alpha: float = 1.0,
    *,
    max_dim: int = DEFAULT_MAX_COVARIANCE_DIM,
    diagnostics: bool = True,
) -> AnalysisOutput:
    """Analysis through the explicit Kalman gain.

    Raises :class:`CapacityError` when ``m > max_dim``; use
    :func:`analysis_step_transform_form` for large states.
    """
    _check_alpha(alpha)
    _check_pair(H, Gamma)
    if Vhat.m != H.m:
        raise DimensionMismatch(f"ensemble dimension {Vhat.m} != operator dimension {H.m}")
    if Vhat.m > max_dim:
        raise CapacityError(f"m={Vhat.m} exceeds covariance-form limit {max_dim}")
    y = np.asarray(y, dtype=float)
    X = Vhat.values
    xbar = X.mean(axis=1)
    dV = X - xbar[:, None]

    C_infl = alpha**2 * covariance(Vhat)
    K = kalman_gain(C_infl, H, Gamma)
    vbar = mean_update(xbar, y, K, H)
    T = transform_matrix(dV, H, Gamma, alpha)
    V = Ensemble(vbar[:, None] + alpha * (dV @ T))

    if not diagnostics:
        return AnalysisOutput(V, True)
    C, lam_f, lam_a = _diagnostics(Vhat, V, max_dim)
    return AnalysisOutput(V, True, C, lam_f, lam_a)


def analysis_step_transform_form(
    Vhat: Ensemble,
    y,
    H: ObservationOperator,
    Gamma: NoiseCovariance,
    alpha: float = 1.0,
    *,
    max_dim: int = DEFAULT_MAX_COVARIANCE_DIM,
    diagnostics: bool = True,
) -> AnalysisOutput:
    """Analysis entirely in ensemble space.

    ``V = vbar_hat 1 + alpha dV_hat T~`` with
    ``T~ = alpha/(N-1) T^2 dY^T Gamma^{-1} (y - H vbar_hat) 1 + T``; no
    ``m x m`` matrix is formed unless diagnostics are requested.
    """
    _check_alpha(alpha)
    _check_pair(H, Gamma)
    if Vhat.m != H.m:
        raise DimensionMismatch(f"ensemble dimension {Vhat.m} != operator dimension {H.m}")
    y = np.asarray(y, dtype=float)
    if y.shape != (H.d,):
        raise DimensionMismatch(f"observation has shape {y.shape}, expected ({H.d},)")
    X = Vhat.values
    N = X.shape[1]
    xbar = X.mean(axis=1)
    dV = X - xbar[:, None]

    _, GinvdY, G = _obs_space_gram(dV, H, Gamma)
    try:
        g, U = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure("symmetric eigendecomposition did not converge") from exc
    s = np.maximum(1.0 + alpha**2 * np.maximum(g, 0.0), _EIG_FLOOR)
    T = (U * s**-0.5) @ U.T
    T = 0.5 * (T + T.T)
    T2 = (U / s) @ U.T

    innovation = y - H.apply(xbar)
    w = alpha / (N - 1) * (T2 @ (GinvdY.T @ innovation))
    Ttilde = w[:, None] + T
    V = Ensemble(xbar[:, None] + alpha * (dV @ Ttilde))

    if not diagnostics:
        return AnalysisOutput(V, False)
    C, lam_f, lam_a = _diagnostics(Vhat, V, max_dim)
    return AnalysisOutput(V, False, C, lam_f, lam_a)


def analysis_min_eigenvalue_map(lambda_hat: float, alpha: float, gamma: float) -> float:
    """Analysis minimum eigenvalue from the forecast one, fully observed case.

    ``alpha^2 lambda_hat / (1 + (alpha^2 / gamma^2) lambda_hat)``.
    """
    a2 = alpha * alpha
    return a2 * lambda_hat / (1.0 + a2 * lambda_hat / (gamma * gamma))
