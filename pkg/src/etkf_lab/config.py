"""Twin-experiment configuration: JSON parsing and constant resolution.

A config file is a JSON object with the keys of :class:`RunConfig`; unknown
keys are rejected.  Bound constants (``rho``, ``beta``, ``beta_one_sided``,
``lambda0``) may be numbers or ``"auto"``; ``alpha`` may be a number or
``{"times_alpha0": k}``.  :func:`resolve_constants` turns these into numbers
and records where each one came from.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import bounds
from .analysis import DEFAULT_MAX_COVARIANCE_DIM, NoiseCovariance, ObservationOperator, min_eigenvalue
from .dynamics import (
    FlowConfig,
    LinearTest,
    ModelSystem,
    default_start,
    estimate_beta_one_sided,
    estimate_lipschitz,
    flow,
    model_from_dict,
    model_to_dict,
    trajectory,
)
from .ensemble import Ensemble
from .errors import ConfigError, ConfigMismatch
from .observation import TAG_ENSEMBLE, TAG_TRUTH, path_rng

AUTO = "auto"
ANALYSIS_FORMS = ("transform", "covariance")

# probe trajectory used by the "auto" radius / growth-rate helpers
_PROBE_H = 0.05
_PROBE_DT = 0.005


@dataclass(frozen=True)
class RunConfig:
    model: ModelSystem
    h: float
    ensemble_size: int
    cycles: int
    gamma: float | None = None
    observation_matrix: np.ndarray | None = field(default=None, repr=False)
    noise_covariance: np.ndarray | None = field(default=None, repr=False)
    dt: float | None = None
    alpha: float | dict = 1.0
    run_seed: int = 0
    replicates: int = 1
    initial_truth: tuple | None = None
    spinup_time: float = 0.0
    ensemble_offset: float | tuple = 0.0
    ensemble_spread: float = 1.0
    ensemble_members: tuple | None = None
    rho: float | str | None = None
    beta: float | str | None = None
    beta_one_sided: float | str | None = None
    epsilon: float | None = None
    lambda0: float | str | None = None
    analysis_form: str = "transform"
    max_covariance_dim: int = DEFAULT_MAX_COVARIANCE_DIM
    probe_steps: int = 4000
    probe_samples: int = 20000

    def __post_init__(self):
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be >= 2")
        if self.analysis_form not in ANALYSIS_FORMS:
            raise ConfigError(f"analysis_form must be one of {ANALYSIS_FORMS}")
        if (self.gamma is None) == (self.noise_covariance is None):
            raise ConfigError("give exactly one of gamma or noise_covariance")
        if isinstance(self.alpha, dict):
            if set(self.alpha) != {"times_alpha0"}:
                raise ConfigError("alpha object must be {'times_alpha0': k}")
        elif not self.alpha >= 1:
            raise ConfigError(f"alpha must be >= 1, got {self.alpha}")
        for name in ("rho", "beta", "beta_one_sided", "lambda0"):
            v = getattr(self, name)
            if isinstance(v, str) and v != AUTO:
                raise ConfigError(f"{name} must be a number, null or 'auto'")
        FlowConfig(self.h, self.dt)  # validates h/dt

    # -- derived objects -------------------------------------------------
    @property
    def flow_config(self) -> FlowConfig:
        return FlowConfig(self.h, self.dt)

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def observation_operator(self) -> ObservationOperator:
        if self.observation_matrix is None:
            return ObservationOperator.identity(self.m)
        return ObservationOperator.from_matrix(self.observation_matrix)

    @property
    def noise(self) -> NoiseCovariance:
        if self.noise_covariance is not None:
            return NoiseCovariance.from_matrix(self.noise_covariance)
        return NoiseCovariance.scaled_identity(self.gamma, self.observation_operator.d)

    @property
    def fully_observed(self) -> bool:
        return self.observation_matrix is None and self.gamma is not None

    def with_(self, **changes) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return RunConfig(**data)

    # -- (de)serialization ----------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        try:
            data["model"] = model_from_dict(data["model"])
        except KeyError as exc:
            raise ConfigError(f"missing required key {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for key in ("observation_matrix", "noise_covariance"):
            if data.get(key) is not None:
                data[key] = np.asarray(data[key], dtype=float)
        for key in ("initial_truth", "ensemble_offset", "ensemble_members"):
            if isinstance(data.get(key), list):
                data[key] = _to_tuple(data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "model":
                v = model_to_dict(v)
            elif isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, tuple):
                v = _to_list(v)
            out[f.name] = v
        return out


def _to_tuple(x):
    return tuple(_to_tuple(v) for v in x) if isinstance(x, list) else x


def _to_list(x):
    return [_to_list(v) for v in x] if isinstance(x, tuple) else x


# -- initial conditions --------------------------------------------------


def initial_truth(cfg: RunConfig) -> np.ndarray:
    """Initial true state; depends on ``run_seed`` only, so all replicates share it."""
    if cfg.initial_truth is not None:
        u = np.asarray(cfg.initial_truth, dtype=float)
        if u.shape != (cfg.m,):
            raise ConfigError(f"initial_truth has shape {u.shape}, model dimension is {cfg.m}")
    else:
        seed = int(path_rng(cfg.run_seed, 0, TAG_TRUTH).integers(2**63))
        u = default_start(cfg.model, seed)
    probe = FlowConfig(_PROBE_H, _PROBE_DT)
    for _ in range(math.ceil(cfg.spinup_time / _PROBE_H - 1e-9)):
        u = flow(cfg.model, probe, u)
    return u


def initial_ensemble(cfg: RunConfig, truth0: np.ndarray, replicate_id: int) -> Ensemble:
    """Explicit members, or ``truth0 + offset + spread * z`` with seeded normals ``z``."""
    if cfg.ensemble_members is not None:
        X = np.asarray(cfg.ensemble_members, dtype=float).T
        if X.shape != (cfg.m, cfg.ensemble_size):
            raise ConfigError(f"ensemble_members must be {cfg.ensemble_size} vectors of length {cfg.m}")
        return Ensemble(X)
    rng = path_rng(cfg.run_seed, replicate_id, TAG_ENSEMBLE)
    centre = truth0 + np.asarray(cfg.ensemble_offset, dtype=float)
    z = rng.standard_normal((cfg.m, cfg.ensemble_size))
    return Ensemble(centre[:, None] + cfg.ensemble_spread * z)


# -- constant resolution ---------------------------------------------------


@dataclass(frozen=True)
class ResolvedConstants:
    """Numeric bound constants for a config, with their provenance."""

    alpha: float
    rho: float | None
    beta: float | None
    beta_one_sided: float | None
    epsilon: float | None
    lambda0: float | None
    provenance: dict

    def params(self, cfg: RunConfig, *, one_sided: bool = False) -> bounds.BoundParams:
        beta = self.beta_one_sided if one_sided else self.beta
        if beta is None or self.rho is None or self.epsilon is None or cfg.gamma is None:
            raise ConfigMismatch("bound constants (beta, rho, epsilon, gamma) are not configured")
        lam0 = self.lambda0 if self.lambda0 and self.lambda0 > 0 else 1.0
        return bounds.BoundParams(
            beta=beta,
            epsilon=self.epsilon,
            rho=self.rho,
            h=cfg.h,
            gamma=cfg.gamma,
            N=cfg.ensemble_size,
            m=cfg.m,
            alpha=self.alpha,
            lambda0=lam0,
        )


def initial_min_eigenvalue(cfg: RunConfig) -> float:
    """Smallest ``lambda_min(C_0)`` across all replicates' initial ensembles."""
    truth0 = initial_truth(cfg)
    vals = [min_eigenvalue(initial_ensemble(cfg, truth0, r), cfg.max_covariance_dim) for r in range(cfg.replicates)]
    return float(min(v if v is not None else 0.0 for v in vals))


def _probe_points(cfg: RunConfig, truth0):
    probe = FlowConfig(_PROBE_H, _PROBE_DT)
    return trajectory(cfg.model, probe, truth0, cfg.probe_steps)


def resolve_constants(cfg: RunConfig) -> ResolvedConstants:
    """Replace ``"auto"`` entries by helper estimates and compute ``alpha``.

    ``rho`` auto: max ``|u|`` along a probe trajectory from the initial truth.
    ``beta``/``beta_one_sided`` auto: exact for linear models, otherwise
    sampled lower bounds over probe-trajectory pairs (Lipschitz and
    one-sided respectively).  ``beta_one_sided`` defaults to ``beta``.
    ``epsilon`` defaults to ``beta/10`` (``0.01`` if ``beta <= 0``).
    ``lambda0`` auto: :func:`initial_min_eigenvalue`.
    """
    prov = {}
    truth0 = None
    points = None

    def need_points():
        nonlocal truth0, points
        if points is None:
            truth0 = initial_truth(cfg)
            points = _probe_points(cfg, truth0)
        return points

    rho = cfg.rho
    if rho == AUTO:
        pts = need_points()
        rho = float(np.linalg.norm(pts, axis=1).max())
        prov["rho"] = f"max |u| over {cfg.probe_steps} probe steps of length {_PROBE_H}"
    elif rho is not None:
        prov["rho"] = "configured"

    def growth(value, kind):
        if value != AUTO:
            if value is not None:
                prov[kind] = "configured"
            return value
        if isinstance(cfg.model, LinearTest):
            A = cfg.model.A
            if kind == "beta":
                prov[kind] = "exact spectral norm of A"
                return float(np.linalg.norm(A, 2))
            prov[kind] = "exact max eigenvalue of sym(A)"
            return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])
        pts = need_points()
        radius = rho if rho is not None else float(np.linalg.norm(pts, axis=1).max())
        if kind == "beta":
            prov[kind] = f"sampled Lipschitz lower bound, {cfg.probe_samples} pairs"
            return estimate_lipschitz(cfg.model, radius, cfg.probe_samples, seed=cfg.run_seed, points=pts)
        prov[kind] = f"sampled one-sided lower bound, {cfg.probe_samples} pairs"
        return estimate_beta_one_sided(cfg.model, radius, cfg.probe_samples, seed=cfg.run_seed, points=pts)

    beta = growth(cfg.beta, "beta")
    if cfg.beta_one_sided is None:
        beta_os = beta
        if beta is not None:
            prov["beta_one_sided"] = "same as beta"
    else:
        beta_os = growth(cfg.beta_one_sided, "beta_one_sided")

    eps = cfg.epsilon
    if eps is None and beta is not None:
        eps = beta / 10 if beta > 0 else 0.01
        prov["epsilon"] = "default beta/10"
    elif eps is not None:
        prov["epsilon"] = "configured"

    lam0 = cfg.lambda0
    if lam0 == AUTO:
        lam0 = initial_min_eigenvalue(cfg)
        prov["lambda0"] = "min over replicates of lambda_min(C_0)"
    elif lam0 is not None:
        prov["lambda0"] = "configured"

    alpha = cfg.alpha
    if isinstance(alpha, dict):
        if not cfg.fully_observed:
            raise ConfigMismatch("alpha relative to alpha0 requires H = I and Gamma = gamma^2 I")
        if beta is None or rho is None or not lam0 or lam0 <= 0:
            raise ConfigMismatch("alpha relative to alpha0 needs beta, rho and a positive lambda0")
        p = bounds.BoundParams(beta, eps, rho, cfg.h, cfg.gamma, cfg.ensemble_size, cfg.m, 1.0, lam0)
        a0 = bounds.alpha_zero(p)
        alpha = alpha["times_alpha0"] * a0
        if not math.isfinite(alpha):
            raise ConfigMismatch(f"alpha0 overflows (a*h = {bounds.constant_a(p) * cfg.h:.3g}); reduce h")
        prov["alpha"] = f"{cfg.alpha['times_alpha0']} * alpha0 (alpha0 = {a0:.6g})"
        alpha = max(alpha, 1.0)
    else:
        prov["alpha"] = "configured"
    return ResolvedConstants(float(alpha), rho, beta, beta_os, eps, lam0, prov)
