"""Randomized battery of the exact algebraic identities behind the filter.

Each check evaluates both sides of an identity by different routes (the
library code on one side, explicit inverses or matrix square roots on the
other) and reports the relative residual
``|lhs - rhs| / max(|lhs|, |rhs|, tiny)`` in the Frobenius norm.
Inequalities report the size of their worst violation instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .analysis import (
    NoiseCovariance,
    ObservationOperator,
    analysis_min_eigenvalue_map,
    analysis_step_covariance_form,
    analysis_step_transform_form,
    kalman_gain,
    transform_matrix,
)
from .ensemble import Ensemble, covariance, deviations, l2_norm, mean

DEFAULT_TOL = 1e-9
#: per-identity tolerances that differ from the default
TOLERANCES = {"eigenvalue_map": 1e-8}
_TINY = 1e-300

IDENTITY_NAMES = (
    "l2_norm_decomposition",
    "transform_covariance",
    "gain_identity",
    "implicit_mean_update",
    "deviations_sum_to_zero",
    "transform_fixes_ones",
    "transform_representation",
    "eigenvalue_map",
    "resolvent_identity",
    "resolvent_bounds",
    "woodbury_gain_form",
    "woodbury_inverse_form",
)


def rel_residual(lhs, rhs) -> float:
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs), _TINY)
    return float(np.linalg.norm(lhs - rhs) / scale)


# -- individual identities ----------------------------------------------------


def l2_norm_residual(V: Ensemble) -> float:
    """``|V|^2`` as a member sum, ``tr(V^T V)/N``, ``tr(V V^T)/N`` and ``|mean|^2 + |dV|^2``."""
    X = V.values
    N = V.N
    direct = sum(float(X[:, n] @ X[:, n]) for n in range(N)) / N
    forms = [
        l2_norm(V) ** 2,
        np.trace(X.T @ X) / N,
        np.trace(X @ X.T) / N,
        float(mean(V) @ mean(V)) + l2_norm(deviations(V)) ** 2,
    ]
    return max(rel_residual(direct, f) for f in forms)


def _explicit_gain(C, Hm, G):
    return C @ Hm.T @ np.linalg.inv(Hm @ C @ Hm.T + G)


def transform_covariance_residual(Vhat: Ensemble, H: ObservationOperator, Gamma: NoiseCovariance) -> float:
    """``dV T (dV T)^T / (N-1) = (I - K H) C``."""
    dV = deviations(Vhat).values
    T = transform_matrix(dV, H, Gamma)
    C = dV @ dV.T / (Vhat.N - 1)
    Hm = H.dense()
    K = _explicit_gain(C, Hm, Gamma.dense())
    lhs = (dV @ T) @ (dV @ T).T / (Vhat.N - 1)
    rhs = (np.eye(H.m) - K @ Hm) @ C
    return rel_residual(lhs, rhs)


def gain_identity_residual(C, H: ObservationOperator, Gamma: NoiseCovariance) -> float:
    """``K = (I - K H) C H^T Gamma^{-1}``."""
    K = kalman_gain(C, H, Gamma)
    Hm = H.dense()
    rhs = (np.eye(H.m) - K @ Hm) @ C @ Hm.T @ np.linalg.inv(Gamma.dense())
    return rel_residual(K, rhs)


def implicit_mean_update_residual(Vhat: Ensemble, y, H: ObservationOperator, Gamma: NoiseCovariance) -> float:
    """``(I + C H^T Gamma^{-1} H) vbar = vbar_hat + C H^T Gamma^{-1} y``."""
    vbar = mean(analysis_step_covariance_form(Vhat, y, H, Gamma, diagnostics=False).analysis)
    C = covariance(Vhat)
    Hm = H.dense()
    CHtGi = C @ Hm.T @ np.linalg.inv(Gamma.dense())
    lhs = (np.eye(H.m) + CHtGi @ Hm) @ vbar
    rhs = mean(Vhat) + CHtGi @ y
    return rel_residual(lhs, rhs)


def ones_residuals(Vhat: Ensemble, y, H: ObservationOperator, Gamma: NoiseCovariance) -> tuple[float, float]:
    """``dV 1 = 0`` for forecast and analysis, and ``T 1 = 1``.

    The first residual is relative to the size of the deviations.
    """
    V = analysis_step_transform_form(Vhat, y, H, Gamma, diagnostics=False).analysis
    worst = 0.0
    for E in (Vhat, V):
        dV = deviations(E).values
        worst = max(worst, np.linalg.norm(dV.sum(axis=1)) / max(np.linalg.norm(dV), _TINY))
    T = transform_matrix(deviations(Vhat), H, Gamma)
    ones = np.ones(Vhat.N)
    return float(worst), rel_residual(T @ ones, ones)


def transform_representation_residual(Vhat: Ensemble, y, H: ObservationOperator, Gamma: NoiseCovariance) -> float:
    """``(I + C H^T Gamma^{-1} H) V = Vhat T^{-1} + C H^T Gamma^{-1} y 1``.

    ``T^{-1}`` is taken as the principal square root of ``I + G`` via
    ``scipy.linalg.sqrtm``, independent of the eigendecomposition used by
    the filter.
    """
    V = analysis_step_transform_form(Vhat, y, H, Gamma, diagnostics=False).analysis
    N = Vhat.N
    dV = deviations(Vhat).values
    Hm = H.dense()
    Gi = np.linalg.inv(Gamma.dense())
    dY = Hm @ dV
    Tinv = np.real(sla.sqrtm(np.eye(N) + dY.T @ Gi @ dY / (N - 1)))
    C = dV @ dV.T / (N - 1)
    CHtGi = C @ Hm.T @ Gi
    lhs = (np.eye(H.m) + CHtGi @ Hm) @ V.values
    rhs = Vhat.values @ Tinv + np.outer(CHtGi @ y, np.ones(N))
    return rel_residual(lhs, rhs)


def eigenvalue_map_residual(Vhat: Ensemble, y, gamma: float, alpha: float) -> float:
    """Fully observed: ``lambda_min(C_a) = alpha^2 l / (1 + alpha^2 l / gamma^2)``, ``l = lambda_min(C_hat)``."""
    m = Vhat.m
    H = ObservationOperator.identity(m)
    Gamma = NoiseCovariance.scaled_identity(gamma, m)
    V = analysis_step_covariance_form(Vhat, y, H, Gamma, alpha, diagnostics=False).analysis
    lam_hat = _min_eig_svd(Vhat)
    lam_a = _min_eig_svd(V)
    return rel_residual(lam_a, analysis_min_eigenvalue_map(lam_hat, alpha, gamma))


def _min_eig_svd(V: Ensemble) -> float:
    # singular values keep small eigenvalues to relative accuracy, unlike eigvalsh of C
    s = sla.svdvals(deviations(V).values)
    return float(s[V.m - 1] ** 2 / (V.N - 1))


def resolvent_residual(A) -> float:
    """``(I + A)^{-1} = I - (I + A)^{-1} A`` with ``(I+A)^{-1}`` from a solve."""
    A = np.asarray(A, dtype=float)
    I = np.eye(A.shape[0])
    lhs = np.linalg.inv(I + A)
    rhs = I - np.linalg.solve(I + A, A)
    return rel_residual(lhs, rhs)


def resolvent_bounds_violation(A) -> float:
    """For symmetric ``A >= 0``: ``A (A+I)^{-1} = (A+I)^{-1} A`` and both it and
    ``(A+I)^{-1}`` have spectrum in ``[0, 1]``.  Returns the worst violation."""
    A = np.asarray(A, dtype=float)
    I = np.eye(A.shape[0])
    R = np.linalg.inv(A + I)
    left, right = A @ R, R @ A
    worst = rel_residual(left, right)
    for M in (0.5 * (left + right), R):
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        worst = max(worst, float(max(-w.min(), w.max() - 1.0, 0.0)))
    return worst


def woodbury_residuals(V, G) -> tuple[float, float]:
    """``(I + V^T G^{-1} V)^{-1} V^T G^{-1} = V^T (V V^T + G)^{-1}`` and
    ``(I + V^T G^{-1} V)^{-1} = I - V^T (V V^T + G)^{-1} V``."""
    V = np.asarray(V, dtype=float)
    G = np.asarray(G, dtype=float)
    N = V.shape[1]
    Gi = np.linalg.inv(G)
    inner = np.linalg.inv(np.eye(N) + V.T @ Gi @ V)
    outer = np.linalg.inv(V @ V.T + G)
    gain_form = rel_residual(inner @ V.T @ Gi, V.T @ outer)
    inverse_form = rel_residual(inner, np.eye(N) - V.T @ outer @ V)
    return gain_form, inverse_form


# -- battery --------------------------------------------------------------------


@dataclass
class IdentityReport:
    trials: int
    seed: int
    tol: float
    residuals: dict = field(default_factory=dict)

    def tolerance(self, name: str) -> float:
        return max(self.tol, TOLERANCES.get(name, self.tol))

    def ok(self, name: str) -> bool:
        return self.residuals[name] <= self.tolerance(name)

    @property
    def passed(self) -> bool:
        return all(self.ok(name) for name in self.residuals)

    def lines(self) -> list[str]:
        out = [f"identity battery: {self.trials} trials, seed {self.seed}, tolerance {self.tol:g}"]
        for name in IDENTITY_NAMES:
            r = self.residuals[name]
            out.append(f"  {name:26s} max residual {r:.3e} (tol {self.tolerance(name):g})  {'ok' if self.ok(name) else 'FAIL'}")
        out.append("PASS" if self.passed else "FAIL")
        return out


def _spd(rng, d):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return (Q * rng.uniform(0.5, 2.0, d)) @ Q.T


def _random_instance(rng, max_m=20, max_N=10):
    m = int(rng.integers(1, max_m + 1))
    N = int(rng.integers(2, max_N + 1))
    d = int(rng.integers(1, m + 1))
    Vhat = Ensemble(rng.standard_normal((m, 1)) + rng.standard_normal((m, N)))
    if rng.random() < 0.3 and d == m:
        H = ObservationOperator.identity(m)
    else:
        H = ObservationOperator.from_matrix(rng.standard_normal((d, m)))
    G = _spd(rng, d)
    Gamma = NoiseCovariance.from_matrix(0.5 * (G + G.T))
    y = H.apply(mean(Vhat)) + rng.standard_normal(d)
    return Vhat, H, Gamma, y


def verify_identities(seed: int = 0, trials: int = 1000, tol: float = DEFAULT_TOL) -> IdentityReport:
    """Run every identity on ``trials`` random instances (``m <= 20``, ``N <= 10``, ``d <= m``).

    Failures are reported, never raised.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(IDENTITY_NAMES, 0.0)

    def note(name, r):
        worst[name] = max(worst[name], r) if np.isfinite(r) else np.inf

    for _ in range(trials):
        Vhat, H, Gamma, y = _random_instance(rng)
        note("l2_norm_decomposition", l2_norm_residual(Vhat))
        note("transform_covariance", transform_covariance_residual(Vhat, H, Gamma))
        note("gain_identity", gain_identity_residual(covariance(Vhat), H, Gamma))
        note("implicit_mean_update", implicit_mean_update_residual(Vhat, y, H, Gamma))
        dev, ones = ones_residuals(Vhat, y, H, Gamma)
        note("deviations_sum_to_zero", dev)
        note("transform_fixes_ones", ones)
        note("transform_representation", transform_representation_residual(Vhat, y, H, Gamma))

        # fully observed, full-rank forecast covariance
        N = int(rng.integers(3, 11))
        m = int(rng.integers(1, N))
        Vf = Ensemble(rng.standard_normal((m, N)))
        gamma = float(10 ** rng.uniform(-1, 0.5))
        alpha = float(rng.uniform(1.0, 3.0))
        note("eigenvalue_map", eigenvalue_map_residual(Vf, rng.standard_normal(m), gamma, alpha))

        k = int(rng.integers(1, 21))
        A = rng.standard_normal((k, k))
        if np.linalg.cond(np.eye(k) + A) < 1e6:
            note("resolvent_identity", resolvent_residual(A))
        B = rng.standard_normal((k, k))
        note("resolvent_bounds", resolvent_bounds_violation(B @ B.T))

        d = int(rng.integers(1, 21))
        n = int(rng.integers(1, 11))
        wg, wi = woodbury_residuals(rng.standard_normal((d, n)), _spd(rng, d))
        note("woodbury_gain_form", wg)
        note("woodbury_inverse_form", wi)
    return IdentityReport(trials, seed, tol, worst)
