"""Model vector fields, the RK4 flow map over one assimilation interval, and
empirical helpers for the regularity constants (absorbing radius, growth rates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .ensemble import Ensemble
from .errors import DimensionMismatch, NonFiniteState


@dataclass(frozen=True)
class Lorenz63:
    sigma: float = 10.0
    rho_l: float = 28.0
    beta_l: float = 8.0 / 3.0

    @property
    def m(self) -> int:
        return 3

    def rhs(self, u: np.ndarray) -> np.ndarray:
        x, y, z = u
        return np.array([self.sigma * (y - x), x * (self.rho_l - z) - y, x * y - self.beta_l * z])

    def _integrate(self, X, dt, nsteps):
        return _kernels.rk4_lorenz63(X, self.sigma, self.rho_l, self.beta_l, dt, nsteps)


@dataclass(frozen=True)
class Lorenz96:
    forcing: float = 8.0
    dim: int = 40

    def __post_init__(self):
        if self.dim < 4:
            raise ValueError(f"Lorenz96 needs dim >= 4, got {self.dim}")

    @property
    def m(self) -> int:
        return self.dim

    def rhs(self, u: np.ndarray) -> np.ndarray:
        return (np.roll(u, -1) - np.roll(u, 2)) * np.roll(u, 1) - u + self.forcing

    def _integrate(self, X, dt, nsteps):
        return _kernels.rk4_lorenz96(X, self.forcing, dt, nsteps)


@dataclass(frozen=True, eq=False)
class LinearTest:
    """Linear field ``du/dt = A u``."""

    A: np.ndarray = field(repr=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @classmethod
    def scaled_identity(cls, a: float, m: int) -> "LinearTest":
        return cls(a * np.eye(m))

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def rhs(self, u: np.ndarray) -> np.ndarray:
        return self.A @ u

    def _integrate(self, X, dt, nsteps):
        return _kernels.rk4_linear(X, self.A, dt, nsteps)

    def __repr__(self):
        return f"LinearTest(m={self.m})"


ModelSystem = Lorenz63 | Lorenz96 | LinearTest


@dataclass(frozen=True)
class FlowConfig:
    """Assimilation interval ``h`` split into ``h/dt`` RK4 substeps (default ``dt = h/10``)."""

    h: float
    dt: float | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        dt = self.h / 10 if self.dt is None else float(self.dt)
        if not 0 < dt <= self.h * (1 + 1e-12):
            raise ValueError(f"need 0 < dt <= h, got dt={dt}, h={self.h}")
        ratio = self.h / dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"h/dt must be an integer, got {ratio}")
        object.__setattr__(self, "dt", dt)

    @property
    def substeps(self) -> int:
        return int(round(self.h / self.dt))


def rhs(model: ModelSystem, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (model.m,):
        raise DimensionMismatch(f"state has shape {u.shape}, model dimension is {model.m}")
    return model.rhs(u)


def _propagate_rows(model, cfg: FlowConfig, X: np.ndarray) -> int:
    return model._integrate(X, cfg.dt, cfg.substeps)


def flow(model: ModelSystem, cfg: FlowConfig, u0) -> np.ndarray:
    """Advance one state by the interval ``cfg.h``."""
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (model.m,):
        raise DimensionMismatch(f"state has shape {u0.shape}, model dimension is {model.m}")
    X = np.array(u0[None, :], order="C")
    if _propagate_rows(model, cfg, X) >= 0:
        raise NonFiniteState("flow produced a non-finite state")
    return X[0]


def predict_ensemble(model: ModelSystem, cfg: FlowConfig, V: Ensemble) -> Ensemble:
    """Apply :func:`flow` to every member, preserving member order."""
    if V.m != model.m:
        raise DimensionMismatch(f"ensemble dimension {V.m} != model dimension {model.m}")
    X = np.array(V.values.T, order="C")
    bad = _propagate_rows(model, cfg, X)
    if bad >= 0:
        raise NonFiniteState(f"member {bad} became non-finite during prediction", member=bad)
    return Ensemble(X.T)


def trajectory(model: ModelSystem, cfg: FlowConfig, u0, n_steps: int) -> np.ndarray:
    """States at ``0, h, ..., n_steps*h`` as an ``(n_steps + 1, m)`` array."""
    out = np.empty((n_steps + 1, model.m))
    out[0] = u0
    X = np.array(np.asarray(u0, dtype=float)[None, :], order="C")
    for k in range(1, n_steps + 1):
        if _propagate_rows(model, cfg, X) >= 0:
            raise NonFiniteState(f"trajectory became non-finite at step {k}")
        out[k] = X[0]
    return out


def default_start(model: ModelSystem, seed: int = 0) -> np.ndarray:
    """A point near a fixed point of the field, slightly perturbed, for spin-up."""
    rng = np.random.default_rng(seed)
    if isinstance(model, Lorenz96):
        base = np.full(model.m, model.forcing)
    elif isinstance(model, Lorenz63):
        c = np.sqrt(model.beta_l * (model.rho_l - 1.0))
        base = np.array([c, c, model.rho_l - 1.0])
    else:
        base = np.zeros(model.m)
    return base + 0.01 * rng.standard_normal(model.m)


def absorbing_radius(model: ModelSystem, cfg: FlowConfig, u0, n_steps: int, burn_in: int = 0) -> float:
    """Practical absorbing-ball radius: ``max |u_t|`` along a long trajectory.

    States before ``burn_in`` steps are ignored.
    """
    traj = trajectory(model, cfg, u0, n_steps)
    return float(np.linalg.norm(traj[burn_in:], axis=1).max())


def _sample_ball(rng, m, rho, n):
    z = rng.standard_normal((n, m))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = rho * rng.random(n) ** (1.0 / m)
    return z * r[:, None]


def _sample_pairs(model, rho, n_samples, seed, points):
    rng = np.random.default_rng(seed)
    if points is None:
        U = _sample_ball(rng, model.m, rho, n_samples)
        W = _sample_ball(rng, model.m, rho, n_samples)
    else:
        points = np.asarray(points, dtype=float)
        U = points[rng.integers(len(points), size=n_samples)]
        W = points[rng.integers(len(points), size=n_samples)]
    # half of the pairs are close neighbours to probe the local growth rate
    close = rng.random(n_samples) < 0.5
    scale = 1e-3 * max(rho, 1.0)
    W[close] = U[close] + scale * rng.standard_normal((int(close.sum()), model.m))
    return U, W


def estimate_beta_one_sided(model: ModelSystem, rho: float, n_samples: int, seed: int = 0, points=None) -> float:
    """Sampled lower bound on the one-sided Lipschitz constant on ``B(rho)``.

    Returns ``max <F(u) - F(v), u - v> / |u - v|^2`` over ``n_samples`` pairs.
    Pairs are drawn uniformly from the ball, or from ``points`` (e.g. an
    attractor trajectory) when given.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    U, W = _sample_pairs(model, rho, n_samples, seed, points)
    best = -np.inf
    for u, v in zip(U, W):
        d = u - v
        nn = d @ d
        if nn == 0.0:
            continue
        best = max(best, (model.rhs(u) - model.rhs(v)) @ d / nn)
    return float(best)


def estimate_lipschitz(model: ModelSystem, rho: float, n_samples: int, seed: int = 0, points=None) -> float:
    """Sampled lower bound on the Lipschitz constant ``|F(u) - F(v)| / |u - v|``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    U, W = _sample_pairs(model, rho, n_samples, seed, points)
    best = 0.0
    for u, v in zip(U, W):
        nd = np.linalg.norm(u - v)
        if nd == 0.0:
            continue
        best = max(best, np.linalg.norm(model.rhs(u) - model.rhs(v)) / nd)
    return float(best)


def model_from_dict(data: dict) -> ModelSystem:
    """Build a model from ``{"kind": "lorenz63" | "lorenz96" | "linear", ...}``."""
    data = dict(data)
    kind = data.pop("kind", None)
    try:
        if kind == "lorenz63":
            return Lorenz63(**data)
        if kind == "lorenz96":
            return Lorenz96(**data)
        if kind == "linear":
            if "A" in data:
                return LinearTest(data.pop("A"), **data)
            return LinearTest.scaled_identity(data.pop("a"), data.pop("dim"), **data)
    except TypeError as exc:
        raise ValueError(f"bad parameters for model {kind!r}: {exc}") from exc
    except KeyError as exc:
        raise ValueError(f"model {kind!r} is missing parameter {exc}") from exc
    raise ValueError(f"unknown model kind {kind!r}")


def model_to_dict(model: ModelSystem) -> dict:
    if isinstance(model, Lorenz63):
        return {"kind": "lorenz63", "sigma": model.sigma, "rho_l": model.rho_l, "beta_l": model.beta_l}
    if isinstance(model, Lorenz96):
        return {"kind": "lorenz96", "forcing": model.forcing, "dim": model.dim}
    return {"kind": "linear", "A": model.A.tolist()}
