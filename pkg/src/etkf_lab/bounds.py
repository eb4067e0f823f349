"""Closed-form error bounds for the ETKF in the fully observed setting.

Two families:

* the finite-time growth bound on the mean squared ensemble error
  (no inflation needed), :func:`wellposed_bound`;
* the uniform-in-time bound on the mean error under multiplicative
  inflation, built from :func:`derive_constants`, :func:`finite_time_bound`
  and :func:`asymptotic_bound`.

``lambda_star`` returns ``None`` when no positive eigenvalue floor exists.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NotContracting

_THETA_ONE_TOL = 1e-12
# e^{-ah} alpha^2 must exceed 1 by more than rounding for a floor to exist
_GROWTH_TOL = 1e-12


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the bounds.

    ``beta`` is the growth constant of the dynamics (one-sided for the
    finite-time bound, Lipschitz for the uniform bound), ``epsilon`` the
    free slack in the mean-error growth estimate, ``rho`` the absorbing-ball
    radius, ``lambda0`` a lower bound on the initial covariance eigenvalues.
    """

    beta: float
    epsilon: float
    rho: float
    h: float
    gamma: float
    N: int
    m: int
    alpha: float = 1.0
    lambda0: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.N < 2:
            raise ValueError(f"N must be >= 2, got {self.N}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not self.alpha >= 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")

    def with_(self, **changes) -> "BoundParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DerivedConstants:
    D: float
    a: float
    lambda_star: float | None
    theta: float
    Theta_cap: float
    alpha0: float
    #: Theta evaluated with the run's alpha instead of the threshold alpha0;
    #: never larger than Theta_cap, so the bound using it is never smaller
    Theta_run: float

    @property
    def contracting(self) -> bool:
        return self.theta < 1.0


def _geometric(theta: float, j: int) -> float:
    """``(1 - theta^j) / (1 - theta)`` with the ``theta -> 1`` limit ``j``."""
    if abs(1.0 - theta) < _THETA_ONE_TOL:
        return float(j)
    return (1.0 - theta**j) / (1.0 - theta)


def wellposed_bound(j: int, E0_sq: float, p: BoundParams) -> float:
    """Upper bound on the mean squared ensemble error after ``j`` cycles.

    ``e^{2 beta h j} E0_sq + (N-1) gamma^2 (e^{2 beta h j} - 1)/(e^{2 beta h} - 1)``;
    for ``beta = 0`` the ratio becomes ``j``.
    """
    if j < 0:
        raise ValueError("j must be >= 0")
    r = 2.0 * p.beta * p.h
    if r == 0.0:
        ratio = float(j)
    else:
        ratio = math.expm1(r * j) / math.expm1(r)
    return _exp(r * j) * E0_sq + (p.N - 1) * p.gamma**2 * ratio


def constant_D(p: BoundParams) -> float:
    return 2.0 * p.beta**2 * p.rho**2 / (2.0 * (p.beta + p.epsilon) * p.epsilon)


def constant_a(p: BoundParams) -> float:
    """Eigenvalue decay rate bound ``8 N/(N-1) beta rho^2`` during prediction."""
    return 8.0 * p.N / (p.N - 1) * p.beta * p.rho**2


def lambda_star(p: BoundParams) -> float | None:
    """Floor on forecast-covariance eigenvalues, or ``None`` if none exists.

    ``min{e^{-ah} lambda0, (gamma^2/alpha^2)(e^{-ah} alpha^2 - 1)}``, defined
    only when ``e^{-ah} alpha^2 > 1`` (by more than ``1e-12``, so the
    boundary case stays excluded under rounding).
    """
    decay = _exp(-constant_a(p) * p.h)
    growth = decay * p.alpha**2
    if not growth > 1.0 + _GROWTH_TOL:
        return None
    return min(decay * p.lambda0, p.gamma**2 / p.alpha**2 * (growth - 1.0))


def theta(p: BoundParams, lam_star: float) -> float:
    """Contraction rate ``(1 + alpha^2 lam_star / gamma^2)^{-2} e^{2(beta+eps)h}``."""
    return (1.0 + p.alpha**2 / p.gamma**2 * lam_star) ** -2 * _exp(2.0 * (p.beta + p.epsilon) * p.h)


def alpha_zero(p: BoundParams) -> float:
    """Inflation threshold above which ``theta < 1``."""
    a = constant_a(p)
    c = (p.beta + p.epsilon) * p.h
    first = p.lambda0**-0.5 * p.gamma * _exp(a * p.h) * math.sqrt(max(math.expm1(c), 0.0))
    second = _exp(0.5 * (a * p.h + c))
    return max(first, second)


def floor_map(lam: float, p: BoundParams) -> float:
    """One prediction-plus-analysis step of the eigenvalue lower bound."""
    a2 = p.alpha**2
    return _exp(-constant_a(p) * p.h) * a2 * lam / (1.0 + a2 / p.gamma**2 * lam)


def iterate_floor_map(lam0: float, p: BoundParams, steps: int) -> float:
    lam = lam0
    for _ in range(steps):
        lam = floor_map(lam, p)
    return lam


def floor_fixed_point(p: BoundParams) -> float:
    """Limit of :func:`iterate_floor_map`: positive fixed point, or 0."""
    growth = _exp(-constant_a(p) * p.h) * p.alpha**2
    return p.gamma**2 / p.alpha**2 * (growth - 1.0) if growth > 1.0 + _GROWTH_TOL else 0.0


def derive_constants(p: BoundParams) -> DerivedConstants:
    """All constants of the uniform bound for the run's ``alpha``.

    Without an eigenvalue floor, ``theta`` is evaluated at zero floor, which
    is never contracting, and both Theta values are 1.
    """
    D = constant_D(p)
    a = constant_a(p)
    a0 = alpha_zero(p)
    lam = lambda_star(p)
    if lam is None:
        return DerivedConstants(D, a, None, theta(p, 0.0), 1.0, a0, 1.0)
    Theta_cap = (1.0 + a0**2 / p.gamma**2 * lam) ** -2
    Theta_run = (1.0 + p.alpha**2 / p.gamma**2 * lam) ** -2
    return DerivedConstants(D, a, lam, theta(p, lam), Theta_cap, a0, Theta_run)


def finite_time_bound(j: int, e0_sq: float, p: BoundParams, consts: DerivedConstants, *, run_alpha: bool = False) -> float:
    """Bound on the mean squared mean-error after ``j`` cycles.

    ``theta^j (e0 + D) + m gamma^2 G_j + ((1 - Theta) G_j - 1) D`` with
    ``G_j = (1 - theta^j)/(1 - theta)`` (``j`` when ``theta = 1``).
    ``run_alpha=True`` swaps in ``Theta_run``.
    """
    if j < 0:
        raise ValueError("j must be >= 0")
    if j == 0:
        return e0_sq
    th = consts.theta
    Th = consts.Theta_run if run_alpha else consts.Theta_cap
    G = _geometric(th, j)
    return th**j * (e0_sq + consts.D) + p.m * p.gamma**2 * G + ((1.0 - Th) * G - 1.0) * consts.D


def bound_recursion(j: int, e0_sq: float, p: BoundParams, consts: DerivedConstants, *, run_alpha: bool = False) -> float:
    """Iterate ``B -> theta (B + D) + m gamma^2 - Theta D`` ``j`` times from ``e0_sq``."""
    Th = consts.Theta_run if run_alpha else consts.Theta_cap
    B = e0_sq
    for _ in range(j):
        B = consts.theta * (B + consts.D) + p.m * p.gamma**2 - Th * consts.D
    return B


def asymptotic_bound(p: BoundParams, consts: DerivedConstants, *, run_alpha: bool = False) -> float:
    """``m gamma^2/(1 - theta) + ((1 - Theta)/(1 - theta) - 1) D``; needs ``theta < 1``."""
    th = consts.theta
    if not th < 1.0:
        raise NotContracting(f"theta = {th} >= 1")
    Th = consts.Theta_run if run_alpha else consts.Theta_cap
    return p.m * p.gamma**2 / (1.0 - th) + ((1.0 - Th) / (1.0 - th) - 1.0) * consts.D


def gamma_scaling_exponent(p_template: BoundParams, gammas) -> float:
    """Least-squares slope of ``log asymptotic_bound`` against ``log gamma``.

    Every other parameter, including ``alpha``, is taken from ``p_template``.
    """
    gammas = np.asarray(sorted(set(float(g) for g in gammas)))
    if len(gammas) < 2:
        raise ValueError("need at least two distinct gamma values")
    values = []
    for g in gammas:
        p = p_template.with_(gamma=g)
        consts = derive_constants(p)
        if not consts.contracting:
            raise NotContracting(f"theta = {consts.theta} >= 1 at gamma = {g}")
        values.append(asymptotic_bound(p, consts))
    slope, _ = np.polyfit(np.log(gammas), np.log(values), 1)
    return float(slope)


def bound_table(J: int, E0_sq: float, e0_sq: float, p_wellposed: BoundParams, p_uniform: BoundParams | None = None):
    """Rows ``(j, bound_wellposed, bound_thm37, asymptote)`` for ``j = 0..J``.

    Uniform-bound columns are NaN when ``p_uniform`` is missing or not
    contracting (the asymptote) / has no floor (both).
    """
    consts = derive_constants(p_uniform) if p_uniform is not None else None
    asym = math.nan
    if consts is not None and consts.contracting:
        asym = asymptotic_bound(p_uniform, consts)
    rows = []
    for j in range(J + 1):
        ft = math.nan
        if consts is not None and consts.lambda_star is not None:
            ft = finite_time_bound(j, e0_sq, p_uniform, consts)
        rows.append((j, wellposed_bound(j, E0_sq, p_wellposed), ft, asym))
    return rows


def write_bound_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "bound_wellposed", "bound_thm37", "asymptote"])
        for j, a, b, c in rows:
            w.writerow([j, f"{a:.17g}", f"{b:.17g}", f"{c:.17g}"])
