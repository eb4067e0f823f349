import os
import subprocess
import sys

import numpy as np
import pytest

from etkf_lab import _kernels, _rk4_py
from etkf_lab.dynamics import (
    FlowConfig,
    LinearTest,
    Lorenz63,
    Lorenz96,
    absorbing_radius,
    default_start,
    estimate_beta_one_sided,
    estimate_lipschitz,
    flow,
    model_from_dict,
    model_to_dict,
    predict_ensemble,
    rhs,
    trajectory,
)
from etkf_lab.ensemble import Ensemble
from etkf_lab.errors import DimensionMismatch, NonFiniteState

try:
    from etkf_lab import _rk4_ext
except ImportError:  # pragma: no cover - extension not built
    _rk4_ext = None

BACKENDS = [_rk4_py] + ([_rk4_ext] if _rk4_ext is not None else [])


def test_rhs_cases():
    assert np.all(rhs(LinearTest(np.zeros((2, 2))), [1.0, -3.0]) == 0)
    np.testing.assert_array_equal(rhs(Lorenz63(), np.zeros(3)), 0.0)
    np.testing.assert_array_equal(rhs(Lorenz96(8.0, 5), np.zeros(5)), np.full(5, 8.0))
    with pytest.raises(DimensionMismatch):
        rhs(Lorenz63(), np.zeros(4))


def test_lorenz96_rhs_against_loop(rng):
    model = Lorenz96(8.0, 7)
    u = rng.standard_normal(7)
    m = 7
    oracle = [(u[(i + 1) % m] - u[(i - 2) % m]) * u[(i - 1) % m] - u[i] + 8.0 for i in range(m)]
    np.testing.assert_allclose(model.rhs(u), oracle, rtol=1e-14)


def test_flow_config():
    assert FlowConfig(0.1).substeps == 10
    assert FlowConfig(0.1, 0.001).substeps == 100
    with pytest.raises(ValueError):
        FlowConfig(0.1, 0.03)
    with pytest.raises(ValueError):
        FlowConfig(-1.0)


def test_flow_zero_field_is_identity(rng):
    u = rng.standard_normal(4)
    np.testing.assert_array_equal(flow(LinearTest(np.zeros((4, 4))), FlowConfig(0.3), u), u)


def test_flow_scalar_exponential():
    out = flow(LinearTest.scaled_identity(1.0, 1), FlowConfig(0.1, 0.001), [2.0])
    assert out[0] / (2.0 * np.exp(0.1)) == pytest.approx(1.0, abs=1e-8)


def test_lorenz63_step_size_convergence():
    u0 = np.array([1.0, 2.0, 20.0])
    a = flow(Lorenz63(), FlowConfig(0.01, 0.001), u0)
    b = flow(Lorenz63(), FlowConfig(0.01, 0.0005), u0)
    assert np.linalg.norm(a - b) <= 1e-9 * np.linalg.norm(b)


def test_flow_deterministic(rng):
    u = rng.standard_normal(6)
    cfg = FlowConfig(0.05)
    assert np.array_equal(flow(Lorenz96(8.0, 6), cfg, u), flow(Lorenz96(8.0, 6), cfg, u))


@pytest.mark.parametrize("model", [Lorenz63(), Lorenz96(8.0, 6), LinearTest(np.diag([-1.0, 0.5, 0.2]))], ids=repr)
def test_predict_matches_member_loop_and_permutation(model, rng):
    cfg = FlowConfig(0.05)
    V = Ensemble(rng.standard_normal((model.m, 5)))
    out = predict_ensemble(model, cfg, V)
    for n in range(5):
        np.testing.assert_allclose(out.member(n), flow(model, cfg, V.member(n)), rtol=1e-14, atol=1e-14)
    perm = rng.permutation(5)
    np.testing.assert_array_equal(predict_ensemble(model, cfg, Ensemble(V.values[:, perm])).values, out.values[:, perm])


def test_predict_identical_members(rng):
    u = rng.standard_normal(3)
    out = predict_ensemble(Lorenz63(), FlowConfig(0.02), Ensemble.from_members([u, u]))
    np.testing.assert_array_equal(out.member(0), out.member(1))
    np.testing.assert_array_equal(out.member(0), flow(Lorenz63(), FlowConfig(0.02), u))


def test_predict_reports_nonfinite_member():
    X = np.array([[1.0, 1e200], [1.0, 1e200], [1.0, 1e200]])
    with pytest.raises(NonFiniteState) as info:
        predict_ensemble(Lorenz63(), FlowConfig(0.1), Ensemble(X))
    assert info.value.member == 1


# -- kernels -----------------------------------------------------------------------


def _kernel_inputs(rng):
    return [
        ("l63", lambda k, X: k.rk4_lorenz63(X, 10.0, 28.0, 8.0 / 3.0, 0.001, 50), rng.standard_normal((4, 3)) * 5),
        ("l96", lambda k, X: k.rk4_lorenz96(X, 8.0, 0.005, 40), rng.standard_normal((4, 9)) + 8),
        ("lin", lambda k, X: k.rk4_linear(X, np.diag([-1.0, 0.3, 2.0]), 0.01, 30), rng.standard_normal((4, 3))),
    ]


@pytest.mark.skipif(_rk4_ext is None, reason="compiled extension not built")
def test_backends_agree(rng):
    for name, run, X in _kernel_inputs(rng):
        Xp, Xc = np.array(X), np.array(X)
        assert run(_rk4_py, Xp) == run(_rk4_ext, Xc) == -1
        np.testing.assert_allclose(Xc, Xp, rtol=1e-13, atol=1e-13, err_msg=name)


@pytest.mark.parametrize("kernel", BACKENDS, ids=lambda k: k.__name__.rsplit(".", 1)[-1])
def test_backend_flags_first_nonfinite_row(kernel, rng):
    X = rng.standard_normal((4, 6)) + 8
    X[2] *= 1e150
    X[3] *= 1e150
    assert kernel.rk4_lorenz96(X, 8.0, 0.01, 10) == 2


def test_backend_selection_env_override():
    code = "import etkf_lab._kernels as k; print(k.BACKEND)"
    env = dict(os.environ, ETKF_LAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert _kernels.BACKEND in ("python", "cython")


# -- growth constants ------------------------------------------------------------------


def test_beta_estimates_linear():
    model = LinearTest(np.diag([-1.0, -2.0]))
    small = estimate_beta_one_sided(model, 1.0, 50, seed=1)
    big = estimate_beta_one_sided(model, 1.0, 5000, seed=1)
    assert -2.0 <= small <= big <= -1.0
    assert big > -1.01
    assert estimate_beta_one_sided(LinearTest.scaled_identity(0.7, 3), 2.0, 200) == pytest.approx(0.7, abs=1e-10)
    assert estimate_lipschitz(LinearTest(np.diag([-1.0, -2.0])), 1.0, 2000) <= 2.0 + 1e-12


def test_beta_estimate_lorenz63_stable():
    model = Lorenz63()
    pts = trajectory(model, FlowConfig(0.05, 0.005), default_start(model), 2000)[200:]
    rho = float(np.linalg.norm(pts, axis=1).max())
    b1 = estimate_beta_one_sided(model, rho, 4000, seed=1)
    b2 = estimate_beta_one_sided(model, rho, 4000, seed=2)
    assert b1 > 0 and b2 > 0
    assert abs(b1 - b2) <= 0.1 * max(b1, b2)


def test_linear_flow_growth_bound(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    A = Q @ np.diag([-0.5, 0.2, 0.9]) @ Q.T  # symmetric, hence normal
    model, cfg = LinearTest(A), FlowConfig(0.1)
    lam = np.linalg.eigvalsh(0.5 * (A + A.T))[-1]
    for _ in range(100):
        u, v = rng.standard_normal(3), rng.standard_normal(3)
        lhs = np.linalg.norm(flow(model, cfg, u) - flow(model, cfg, v))
        assert lhs <= np.exp((lam + 1e-6) * cfg.h) * np.linalg.norm(u - v)


@pytest.mark.parametrize("model", [Lorenz63(), Lorenz96(8.0, 8)], ids=repr)
def test_trajectories_stay_in_ball(model):
    cfg = FlowConfig(0.05, 0.005)
    start = trajectory(model, cfg, default_start(model), 400)[-1]
    rho = absorbing_radius(model, cfg, start, 20000)
    starts = trajectory(model, cfg, start, 2000)[::100]
    for u in starts:
        assert np.linalg.norm(u) <= rho
        assert absorbing_radius(model, cfg, u, 200) <= rho * 1.01


def test_model_dict_roundtrip():
    for model in (Lorenz63(9.0, 27.0, 2.5), Lorenz96(7.5, 6), LinearTest(np.diag([1.0, -2.0]))):
        again = model_from_dict(model_to_dict(model))
        assert model_to_dict(again) == model_to_dict(model)
    with pytest.raises(ValueError):
        model_from_dict({"kind": "pendulum"})
    with pytest.raises(ValueError):
        Lorenz96(8.0, 3)
