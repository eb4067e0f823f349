"""Twin-experiment driver.

A replicate evolves a truth trajectory, draws observations of it, and cycles
the filter (predict, inflate, analyse) against them while recording error
and eigenvalue diagnostics.  Replicates share the truth's initial state and
differ in their initial ensemble and observation noise; every random draw is
addressed by ``(run_seed, replicate_id, tag, step)`` so replicates can run
concurrently and in any order.

Bound checks compare Monte Carlo means against the closed forms in
:mod:`etkf_lab.bounds`, allowing a ``k``-sigma confidence half-width.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .analysis import analysis_step_covariance_form, analysis_step_transform_form, min_eigenvalue
from .config import ResolvedConstants, RunConfig, initial_ensemble, initial_truth, resolve_constants
from .dynamics import flow, predict_ensemble
from .ensemble import Ensemble, l2_norm
from .errors import ConfigMismatch, EigenFailure, NonFiniteState, NotContracting, ReplicateFailure, SingularError

# numerical breakdowns that end a run with a partial trace
_RUN_FAILURES = (NonFiniteState, EigenFailure, SingularError)
from .observation import NoiseStream, observe

TRACE_HEADER = (
    "step",
    "time",
    "e_sq",
    "spread_sq",
    "ensemble_err_sq",
    "lambda_min_forecast",
    "lambda_min_analysis",
    "bound_wellposed",
    "bound_thm37",
    "in_ball",
)

FLOOR_TOL = 1e-8
TERMINAL_WINDOW = 50


@dataclass
class ErrorTrace:
    """Per-step diagnostics of one filtering run.

    Arrays have length ``J + 1``; index 0 holds the initial ensemble (its
    ``lambda_min_forecast`` is NaN since no forecast precedes it).  After an
    abort, entries past ``steps_completed`` are NaN and ``failure`` carries
    the reason.
    """

    replicate_id: int
    h: float
    alpha: float
    e_sq: np.ndarray
    spread_sq: np.ndarray
    ensemble_err_sq: np.ndarray
    lambda_min_forecast: np.ndarray
    lambda_min_analysis: np.ndarray
    in_ball: np.ndarray
    steps_completed: int
    failure: str | None = None

    @classmethod
    def empty(cls, J: int, replicate_id: int = 0, h: float = 1.0, alpha: float = 1.0) -> "ErrorTrace":
        nan = lambda: np.full(J + 1, np.nan)  # noqa: E731
        return cls(replicate_id, h, alpha, nan(), nan(), nan(), nan(), nan(), np.ones(J + 1, dtype=bool), 0)

    @property
    def J(self) -> int:
        return len(self.e_sq) - 1

    @property
    def failed(self) -> bool:
        return self.failure is not None

    @property
    def time(self) -> np.ndarray:
        return self.h * np.arange(self.J + 1)

    def rmse(self, m: int) -> np.ndarray:
        """Root mean squared error of the ensemble mean per state component."""
        return np.sqrt(self.e_sq / m)


def _record(trace: ErrorTrace, j: int, V: Ensemble, truth: np.ndarray):
    X = V.values
    vbar = X.mean(axis=1)
    e = vbar - truth
    trace.e_sq[j] = e @ e
    trace.spread_sq[j] = l2_norm(X - vbar[:, None]) ** 2
    trace.ensemble_err_sq[j] = l2_norm(X - truth[:, None]) ** 2


def _inside(rho, truth, *ensembles) -> bool:
    if rho is None:
        return True
    if np.linalg.norm(truth) > rho:
        return False
    return all(np.linalg.norm(E.values, axis=0).max() <= rho for E in ensembles)


def run_filter(cfg: RunConfig, replicate_id: int = 0, constants: ResolvedConstants | None = None) -> ErrorTrace:
    """Run ``cfg.cycles`` assimilation cycles for one replicate.

    ``constants`` defaults to :func:`resolve_constants` of ``cfg``; pass it in
    when running many replicates to avoid re-resolving.  A non-finite state
    or a failed eigensolve stops the run and returns the partial trace with
    ``failure`` set.
    """
    if constants is None:
        constants = resolve_constants(cfg)
    alpha = constants.alpha
    H, Gamma = cfg.observation_operator, cfg.noise
    fcfg = cfg.flow_config
    step = analysis_step_transform_form if cfg.analysis_form == "transform" else analysis_step_covariance_form
    stream = NoiseStream(cfg.run_seed, replicate_id)
    rho = constants.rho

    trace = ErrorTrace.empty(cfg.cycles, replicate_id, cfg.h, alpha)
    truth = initial_truth(cfg)
    V = initial_ensemble(cfg, truth, replicate_id)
    _record(trace, 0, V, truth)
    lam0 = min_eigenvalue(V, cfg.max_covariance_dim)
    trace.lambda_min_analysis[0] = np.nan if lam0 is None else lam0
    trace.in_ball[0] = _inside(rho, truth, V)

    for j in range(1, cfg.cycles + 1):
        try:
            truth = flow(cfg.model, fcfg, truth)
            Vhat = predict_ensemble(cfg.model, fcfg, V)
            y = observe(truth, H, Gamma, stream, j).value
            V = step(Vhat, y, H, Gamma, alpha, max_dim=cfg.max_covariance_dim, diagnostics=False).analysis
            lf = min_eigenvalue(Vhat, cfg.max_covariance_dim)
            la = min_eigenvalue(V, cfg.max_covariance_dim)
        except _RUN_FAILURES as exc:
            trace.failure = f"step {j}: {exc}"
            trace.in_ball[j:] = False
            return trace
        _record(trace, j, V, truth)
        trace.lambda_min_forecast[j] = np.nan if lf is None else lf
        trace.lambda_min_analysis[j] = np.nan if la is None else la
        trace.in_ball[j] = _inside(rho, truth, Vhat, V)
        trace.steps_completed = j
    return trace


# -- Monte Carlo ----------------------------------------------------------------


def _column_fsum_mean(M: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(col) / len(col) for col in M.T])


def _column_sem(M: np.ndarray, mean: np.ndarray) -> np.ndarray:
    R = M.shape[0]
    if R < 2:
        return np.zeros(M.shape[1])
    var = np.array([math.fsum((col - mu) ** 2) / (R - 1) for col, mu in zip(M.T, mean)])
    return np.sqrt(var / R)


@dataclass
class MonteCarloSummary:
    """Per-step replicate averages with standard errors.

    The per-replicate matrices (rows ordered by replicate id) are kept so
    derived statistics, such as window averages, get their own standard
    errors.
    """

    h: float
    alpha: float
    replicate_ids: tuple
    e_sq: np.ndarray = field(repr=False)
    spread_sq: np.ndarray = field(repr=False)
    ensemble_err_sq: np.ndarray = field(repr=False)
    lambda_min_forecast: np.ndarray = field(repr=False)
    lambda_min_analysis: np.ndarray = field(repr=False)
    in_ball: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.mean_e_sq = _column_fsum_mean(self.e_sq)
        self.mean_spread_sq = _column_fsum_mean(self.spread_sq)
        self.mean_ensemble_err_sq = _column_fsum_mean(self.ensemble_err_sq)
        self.sem_e_sq = _column_sem(self.e_sq, self.mean_e_sq)
        self.sem_ensemble_err_sq = _column_sem(self.ensemble_err_sq, self.mean_ensemble_err_sq)
        with np.errstate(invalid="ignore"):
            self.min_lambda_forecast = np.min(self.lambda_min_forecast, axis=0)
            self.min_lambda_analysis = np.min(self.lambda_min_analysis, axis=0)
        self.all_in_ball = np.all(self.in_ball, axis=0)

    @property
    def replicates(self) -> int:
        return len(self.replicate_ids)

    @property
    def J(self) -> int:
        return self.e_sq.shape[1] - 1

    def half_width(self, quantity: str = "e_sq", k: float = 3.0) -> np.ndarray:
        """``k`` standard errors of the mean of ``quantity`` at each step (0 for one replicate)."""
        sem = {"e_sq": self.sem_e_sq, "ensemble_err_sq": self.sem_ensemble_err_sq}[quantity]
        return k * sem

    def window_mean(self, quantity: str, start: int, k: float = 3.0) -> tuple[float, float]:
        """Mean over steps ``start..J`` and its ``k``-sigma half-width across replicates."""
        per_rep = np.array([math.fsum(row[start:]) / (self.J + 1 - start) for row in getattr(self, quantity)])
        mu = math.fsum(per_rep) / len(per_rep)
        if len(per_rep) < 2:
            return mu, 0.0
        sd = math.sqrt(math.fsum((per_rep - mu) ** 2) / (len(per_rep) - 1))
        return mu, k * sd / math.sqrt(len(per_rep))


def summarize(traces) -> MonteCarloSummary:
    traces = sorted(traces, key=lambda t: t.replicate_id)
    if not traces:
        raise ValueError("no traces to summarize")
    stack = lambda name: np.vstack([getattr(t, name) for t in traces])  # noqa: E731
    return MonteCarloSummary(
        h=traces[0].h,
        alpha=traces[0].alpha,
        replicate_ids=tuple(t.replicate_id for t in traces),
        e_sq=stack("e_sq"),
        spread_sq=stack("spread_sq"),
        ensemble_err_sq=stack("ensemble_err_sq"),
        lambda_min_forecast=stack("lambda_min_forecast"),
        lambda_min_analysis=stack("lambda_min_analysis"),
        in_ball=stack("in_ball"),
    )


def default_threads() -> int:
    env = os.environ.get("ETKF_LAB_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("ETKF_LAB_THREADS must be >= 1")
        return n
    return min(8, os.cpu_count() or 1)


def run_monte_carlo(cfg: RunConfig, *, order=None, threads: int | None = None, constants: ResolvedConstants | None = None) -> MonteCarloSummary:
    """Run replicates ``0..cfg.replicates-1`` and aggregate them.

    ``order`` permutes the execution order (the summary does not depend on
    it).  ``threads`` defaults to ``ETKF_LAB_THREADS`` or the CPU count
    capped at 8.  Raises :class:`ReplicateFailure` if any replicate aborted.
    """
    if constants is None:
        constants = resolve_constants(cfg)
    ids = list(range(cfg.replicates)) if order is None else [int(r) for r in order]
    if sorted(ids) != list(range(cfg.replicates)):
        raise ValueError("order must be a permutation of the replicate ids")
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(ids) == 1:
        traces = [run_filter(cfg, r, constants) for r in ids]
    else:
        with ThreadPoolExecutor(max_workers=min(threads, len(ids))) as pool:
            traces = list(pool.map(lambda r: run_filter(cfg, r, constants), ids))
    failed = [(t.replicate_id, t.failure) for t in traces if t.failed]
    if failed:
        raise ReplicateFailure(sorted(failed), sorted(traces, key=lambda t: t.replicate_id))
    return summarize(traces)


# -- bound checks ---------------------------------------------------------------


@dataclass
class BoundReport:
    """Outcome of a bound check; ``lines`` is a human-readable log."""

    name: str
    passed: bool
    lines: list
    rows: list = field(default_factory=list, repr=False)
    violations: list = field(default_factory=list)
    floor_violations: list = field(default_factory=list)
    ball_exits: int = 0
    checks: dict = field(default_factory=dict)

    def text(self) -> str:
        return "\n".join(self.lines)


@dataclass(frozen=True)
class FloorViolation:
    step: int
    eigenvalue: float
    floor: float


def _require_fully_observed(cfg: RunConfig):
    if not cfg.fully_observed:
        raise ConfigMismatch("bound checks need H = I and Gamma = gamma^2 I")


def check_wellposedness(cfg: RunConfig, summary: MonteCarloSummary, constants: ResolvedConstants | None = None, k: float = 3.0) -> BoundReport:
    """Compare mean ``|E_j|^2`` with :func:`bounds.wellposed_bound` at every step.

    Uses the one-sided growth constant and the sample mean of ``|E_0|^2`` as
    the initial value.  A step violates the bound when the mean exceeds it
    by more than ``k`` standard errors.
    """
    _require_fully_observed(cfg)
    constants = resolve_constants(cfg) if constants is None else constants
    if constants.alpha != 1.0:
        raise ConfigMismatch("the growth bound holds without inflation; set alpha = 1")
    p = constants.params(cfg, one_sided=True)
    E0 = summary.mean_ensemble_err_sq[0]
    hw = summary.half_width("ensemble_err_sq", k)
    lines = [f"wellposedness: beta={p.beta:.6g} ({constants.provenance.get('beta_one_sided', '?')}), "
             f"N={p.N}, gamma={p.gamma:.6g}, h={p.h:.6g}, replicates={summary.replicates}"]
    rows, violations = [], []
    for j in range(summary.J + 1):
        b = bounds.wellposed_bound(j, E0, p)
        mean = summary.mean_ensemble_err_sq[j]
        margin = b - mean
        rows.append((j, mean, b, hw[j], margin))
        if mean > b + hw[j]:
            violations.append(j)
            lines.append(f"  VIOLATION j={j}: mean={mean:.6g} bound={b:.6g} half-width={hw[j]:.3g}")
    worst = min(rows[1:] or rows, key=lambda r: r[4])
    lines.append(f"  smallest margin {worst[4]:.6g} at j={worst[0]}; {len(violations)} violations")
    return BoundReport("wellposedness", not violations, lines, rows, violations, checks={"bound": not violations})


def check_uniform_bound(cfg: RunConfig, summary: MonteCarloSummary, constants: ResolvedConstants | None = None, k: float = 3.0, *, run_alpha: bool = False) -> BoundReport:
    """Check the eigenvalue floor, the finite-time bound and the asymptote.

    Needs a fully observed config with ``N - 1 >= m`` so the initial
    covariance can be positive definite.  Checks that cannot apply (no
    floor, not contracting) are skipped with a notice and count as not
    passed.  ``run_alpha=True`` evaluates the bounds with the run's ``alpha``
    in place of the threshold ``alpha0``.
    """
    _require_fully_observed(cfg)
    if cfg.ensemble_size - 1 < cfg.m:
        raise ConfigMismatch(f"N - 1 = {cfg.ensemble_size - 1} < m = {cfg.m}: initial covariance is singular")
    constants = resolve_constants(cfg) if constants is None else constants
    if constants.lambda0 is None or not constants.lambda0 > 0:
        raise ConfigMismatch("uniform bound needs a positive lambda0")
    p = constants.params(cfg)
    dc = bounds.derive_constants(p)
    lines = [
        f"uniform bound: alpha={p.alpha:.6g} alpha0={dc.alpha0:.6g} beta={p.beta:.6g} eps={p.epsilon:.6g} "
        f"rho={p.rho:.6g} lambda0={p.lambda0:.6g} replicates={summary.replicates}",
        f"  D={dc.D:.6g} a={dc.a:.6g} lambda*={dc.lambda_star} theta={dc.theta:.6g} "
        f"Theta={dc.Theta_cap:.6g} Theta_run={dc.Theta_run:.6g}",
        "  provenance: " + ", ".join(f"{k_}={v}" for k_, v in sorted(constants.provenance.items())),
    ]
    if p.alpha < dc.alpha0:
        lines.append(f"  note: alpha < alpha0, contraction is not guaranteed")
    report = BoundReport("uniform", False, lines)
    report.ball_exits = int(np.sum(~summary.all_in_ball))
    if report.ball_exits:
        lines.append(f"  {report.ball_exits} steps with a member or the truth outside B(rho)")

    # (i) eigenvalue floor
    lam = dc.lambda_star
    if lam is None:
        lines.append("  NoFloor: e^{-ah} alpha^2 <= 1, floor check skipped")
        report.checks["floor"] = None
    else:
        for j in range(1, summary.J + 1):
            v = summary.min_lambda_forecast[j]
            if not v >= lam - FLOOR_TOL:
                report.floor_violations.append(FloorViolation(j, float(v), lam))
        ok = not report.floor_violations
        report.checks["floor"] = ok
        lines.append(f"  floor: min lambda_min(forecast)={np.nanmin(summary.min_lambda_forecast[1:]):.6g} "
                     f"vs lambda*={lam:.6g}: {'ok' if ok else f'{len(report.floor_violations)} violations'}")

    # (ii) finite-time bound
    e0 = summary.mean_e_sq[0]
    hw = summary.half_width("e_sq", k)
    if lam is None:
        lines.append("  finite-time bound undefined without a floor, skipped")
        report.checks["finite_time"] = None
    else:
        for j in range(summary.J + 1):
            b = bounds.finite_time_bound(j, e0, p, dc, run_alpha=run_alpha)
            mean = summary.mean_e_sq[j]
            report.rows.append((j, mean, b, hw[j], b - mean))
            if mean > b + hw[j]:
                report.violations.append(j)
        ok = not report.violations
        report.checks["finite_time"] = ok
        worst = min(report.rows[1:] or report.rows, key=lambda r: r[4])
        lines.append(f"  finite-time: smallest margin {worst[4]:.6g} at j={worst[0]}; "
                     f"{len(report.violations)} violations")
        for j in report.violations[:5]:
            r = report.rows[j]
            lines.append(f"    VIOLATION j={j}: mean={r[1]:.6g} bound={r[2]:.6g} half-width={r[3]:.3g}")

    # (iii) asymptote against the terminal window
    try:
        asym = bounds.asymptotic_bound(p, dc, run_alpha=run_alpha)
    except NotContracting as exc:
        lines.append(f"  asymptote skipped: {exc}")
        report.checks["asymptote"] = None
    else:
        start = max(0, summary.J + 1 - TERMINAL_WINDOW)
        mu, whw = summary.window_mean("e_sq", start, k)
        ok = mu <= asym + whw
        report.checks["asymptote"] = ok
        report.checks["asymptote_values"] = (mu, asym, whw)
        lines.append(f"  asymptote: terminal mean {mu:.6g} (+/- {whw:.3g}) vs bound {asym:.6g}: {'ok' if ok else 'VIOLATION'}")

    report.passed = all(v is True for key, v in report.checks.items() if key in ("floor", "finite_time", "asymptote"))
    lines.append(f"  {'PASS' if report.passed else 'FAIL'}")
    return report


# -- CSV export -------------------------------------------------------------------


def trace_bounds(cfg: RunConfig, obj, constants: ResolvedConstants) -> tuple[np.ndarray, np.ndarray]:
    """Bound columns for :func:`export_trace`; NaN where a bound does not apply."""
    J = obj.J
    wp = np.full(J + 1, np.nan)
    ut = np.full(J + 1, np.nan)
    if not cfg.fully_observed:
        return wp, ut
    E0 = obj.mean_ensemble_err_sq[0] if isinstance(obj, MonteCarloSummary) else obj.ensemble_err_sq[0]
    e0 = obj.mean_e_sq[0] if isinstance(obj, MonteCarloSummary) else obj.e_sq[0]
    try:
        p_os = constants.params(cfg, one_sided=True)
        p = constants.params(cfg)
    except ConfigMismatch:
        return wp, ut
    dc = bounds.derive_constants(p)
    for j in range(J + 1):
        wp[j] = bounds.wellposed_bound(j, E0, p_os)
        if dc.lambda_star is not None:
            ut[j] = bounds.finite_time_bound(j, e0, p, dc)
    return wp, ut


def export_trace(obj, path, bound_wellposed=None, bound_thm37=None) -> None:
    """Write a trace or summary as CSV, one row per assimilation step ``1..J``.

    For a summary the error columns are replicate means, the eigenvalue
    columns are minima over replicates and ``in_ball`` is 1 only if every
    replicate stayed inside.  Floats use 17 significant digits.
    """
    if isinstance(obj, MonteCarloSummary):
        cols = (obj.mean_e_sq, obj.mean_spread_sq, obj.mean_ensemble_err_sq,
                obj.min_lambda_forecast, obj.min_lambda_analysis, obj.all_in_ball)
        last = obj.J
    else:
        cols = (obj.e_sq, obj.spread_sq, obj.ensemble_err_sq,
                obj.lambda_min_forecast, obj.lambda_min_analysis, obj.in_ball)
        last = obj.steps_completed
    J = obj.J
    wp = np.full(J + 1, np.nan) if bound_wellposed is None else np.asarray(bound_wellposed, dtype=float)
    ut = np.full(J + 1, np.nan) if bound_thm37 is None else np.asarray(bound_thm37, dtype=float)
    e, s, E, lf, la, ball = cols
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for j in range(1, last + 1):
            vals = (j * obj.h, e[j], s[j], E[j], lf[j], la[j], wp[j], ut[j])
            w.writerow([j] + [f"{float(v):.17g}" for v in vals] + [int(bool(ball[j]))])


def read_trace_csv(path) -> dict:
    """Read an :func:`export_trace` file back into column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = {name: [] for name in header}
    for r in rows[1:]:
        for name, v in zip(header, r):
            data[name].append(v)
    out = {}
    for name, vals in data.items():
        dtype = int if name in ("step", "in_ball") else float
        out[name] = np.array([dtype(v) for v in vals], dtype=dtype)
    return out
