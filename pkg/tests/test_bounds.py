import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etkf_lab.bounds import (
    BoundParams,
    DerivedConstants,
    alpha_zero,
    asymptotic_bound,
    bound_recursion,
    bound_table,
    constant_D,
    constant_a,
    derive_constants,
    finite_time_bound,
    floor_fixed_point,
    floor_map,
    gamma_scaling_exponent,
    iterate_floor_map,
    lambda_star,
    theta,
    wellposed_bound,
    write_bound_table,
)
from etkf_lab.errors import NotContracting


def P(**kw):
    base = dict(beta=1.0, epsilon=0.1, rho=1.0, h=0.1, gamma=0.5, N=3, m=2, alpha=1.0, lambda0=1.0)
    base.update(kw)
    return BoundParams(**base)


def random_params(rng, **fixed):
    kw = dict(
        beta=float(rng.uniform(0.0, 2.0)),
        epsilon=float(rng.uniform(0.01, 0.5)),
        rho=float(rng.uniform(0.1, 2.0)),
        h=float(rng.uniform(0.001, 0.1)),
        gamma=float(10 ** rng.uniform(-2, 0)),
        N=int(rng.integers(2, 30)),
        m=int(rng.integers(1, 10)),
        lambda0=float(10 ** rng.uniform(-4, 0)),
    )
    kw.update(fixed)
    return BoundParams(**kw)


def test_params_validation():
    with pytest.raises(ValueError):
        P(epsilon=0.0)
    with pytest.raises(ValueError):
        P(alpha=0.5)
    with pytest.raises(ValueError):
        P(N=1)


# -- growth bound ----------------------------------------------------------------------


def test_wellposed_cases():
    p = P(beta=1.0, h=0.1, N=3, gamma=0.5)
    assert wellposed_bound(0, 1.7, p) == 1.7
    assert wellposed_bound(1, 1.7, p) == pytest.approx(math.exp(0.2) * 1.7 + 2 * 0.25, rel=1e-14)
    expected = math.exp(0.4) + 2 * 0.25 * (math.exp(0.4) - 1) / (math.exp(0.2) - 1)
    assert wellposed_bound(2, 1.0, p) == pytest.approx(expected, rel=1e-14)
    assert wellposed_bound(2, 1.0, p) == pytest.approx(2.6025261, abs=5e-7)


def test_wellposed_zero_growth_limit():
    p = P(beta=0.0)
    assert wellposed_bound(7, 2.0, p) == pytest.approx(2.0 + (p.N - 1) * p.gamma**2 * 7)
    near = wellposed_bound(7, 2.0, P(beta=1e-12))
    assert near == pytest.approx(wellposed_bound(7, 2.0, p), rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1e-3, 2.0), st.floats(1e-3, 0.5), st.floats(1e-2, 2.0), st.integers(2, 50),
    st.floats(0.0, 10.0), st.integers(0, 100),
)
def test_wellposed_monotone(beta, h, gamma, N, E0, j):
    p = P(beta=beta, h=h, gamma=gamma, N=N)
    b = wellposed_bound(j, E0, p)
    assert wellposed_bound(j + 1, E0, p) >= b
    assert wellposed_bound(j, E0 + 1.0, p) >= b
    assert wellposed_bound(j, E0, p.with_(N=N + 1)) >= b
    assert wellposed_bound(j, E0, p.with_(gamma=gamma * 1.1)) >= b


# -- constants ---------------------------------------------------------------------------


def test_constant_D_and_a():
    assert constant_D(P(beta=1.0, rho=1.0, epsilon=1.0)) == pytest.approx(0.5)
    assert constant_D(P(beta=0.0)) == 0.0
    assert constant_D(P(rho=3.0)) == pytest.approx(9.0 * constant_D(P(rho=1.0)))
    assert constant_a(P(N=2, beta=1.0, rho=1.0)) == pytest.approx(16.0)
    assert constant_a(P(beta=0.0)) == 0.0
    seq = [constant_a(P(N=n)) for n in range(2, 50)]
    assert all(x > y for x, y in zip(seq, seq[1:])) and seq[-1] > 8.0


def test_lambda_star_branches():
    # a h = 1 exactly: N=2, beta=1, rho=0.5, h=0.25
    p = P(N=2, beta=1.0, rho=0.5, h=0.25)
    assert constant_a(p) * p.h == pytest.approx(1.0)
    assert lambda_star(p.with_(alpha=math.exp(0.5))) is None
    assert lambda_star(p.with_(alpha=1.0)) is None
    p0 = P(beta=0.0, alpha=2.0, gamma=0.3, lambda0=0.01)
    assert lambda_star(p0) == pytest.approx(min(0.01, 0.09 * (1 - 0.25)))
    p0 = p0.with_(lambda0=1e6)
    assert lambda_star(p0) == pytest.approx(0.09 / 4 * (4 - 1))


def test_theta_cases():
    p = P(alpha=2.0)
    assert theta(p, 0.0) == pytest.approx(math.exp(2 * (p.beta + p.epsilon) * p.h))
    c = (p.beta + p.epsilon) * p.h
    lam = math.expm1(c) * p.gamma**2 / p.alpha**2
    assert theta(p, lam) == pytest.approx(1.0, rel=1e-14)
    assert theta(p, 2 * lam) < theta(p, lam)


def test_alpha_zero_cases():
    p = P(beta=0.5, epsilon=0.1, rho=0.8, h=0.05, gamma=0.3)
    a, c = constant_a(p), 0.6 * 0.05
    lam0 = p.gamma**2 * math.exp(2 * a * p.h) * math.expm1(c)
    assert alpha_zero(p.with_(lambda0=lam0)) == pytest.approx(math.exp((a * p.h + c) / 2), rel=1e-12)
    assert alpha_zero(P(beta=0.0, epsilon=1e-300)) == 1.0


def test_threshold_gives_contraction():
    rng = np.random.default_rng(7)
    for _ in range(100):
        p = random_params(rng)
        p = p.with_(alpha=1.01 * alpha_zero(p))
        assert derive_constants(p).theta < 1.0


def test_below_threshold_not_contracting_when_decay_is_mild():
    # with the first branch of alpha0 active and e^{ah} <= 4, half of alpha0
    # cannot reach contraction, whatever the floor branch
    rng = np.random.default_rng(8)
    checked = 0
    while checked < 100:
        p = random_params(rng)
        a, c = constant_a(p), (p.beta + p.epsilon) * p.h
        first = p.lambda0**-0.5 * p.gamma * math.exp(a * p.h) * math.sqrt(math.expm1(c))
        if math.exp(a * p.h) > 4 or first < math.exp((a * p.h + c) / 2) or first < 2:
            continue
        q = p.with_(alpha=0.5 * alpha_zero(p))
        lam = lambda_star(q)
        assert lam is None or theta(q, lam) >= 1.0
        checked += 1


# -- uniform bound ---------------------------------------------------------------------------


def contracting_params():
    p = P(beta=1.0, epsilon=0.1, rho=0.5, h=0.05, gamma=0.2, N=6, m=3, lambda0=0.1)
    return p.with_(alpha=1.2 * alpha_zero(p))


def test_finite_time_bound_initial_value():
    p = contracting_params()
    consts = derive_constants(p)
    assert finite_time_bound(0, 0.37, p, consts) == 0.37


def test_finite_time_bound_zero_rate_matches_recursion():
    p = contracting_params()
    consts = DerivedConstants(D=2.0, a=1.0, lambda_star=0.1, theta=0.0, Theta_cap=0.3, alpha0=1.0, Theta_run=0.2)
    for j in range(1, 5):
        expected = p.m * p.gamma**2 - 0.3 * 2.0 + 2.0 - 2.0
        assert finite_time_bound(j, 1.0, p, consts) == pytest.approx(expected, rel=1e-12)
        assert bound_recursion(j, 1.0, p, consts) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.floats(0.0, 5.0), st.booleans())
def test_finite_time_bound_matches_recursion(seed, j, e0, run_alpha):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    p = p.with_(alpha=float(rng.uniform(1.0, 3.0)) * alpha_zero(p))
    consts = derive_constants(p)
    closed = finite_time_bound(j, e0, p, consts, run_alpha=run_alpha)
    rec = bound_recursion(j, e0, p, consts, run_alpha=run_alpha)
    scale = max(abs(closed), abs(rec), e0, consts.D, p.m * p.gamma**2)
    assert abs(closed - rec) <= 1e-10 * scale


def test_finite_time_bound_limit():
    p = contracting_params()
    consts = derive_constants(p)
    asym = asymptotic_bound(p, consts)
    assert finite_time_bound(10**6, 1.0, p, consts) == pytest.approx(asym, rel=1e-9)
    assert abs(finite_time_bound(5000, 1.0, p, consts) - asym) <= 1e-10 * max(abs(asym), 1.0)


def test_asymptotic_bound_cases():
    p = contracting_params()
    c = derive_constants(p)
    zero_D = DerivedConstants(0.0, c.a, c.lambda_star, c.theta, c.Theta_cap, c.alpha0, c.Theta_run)
    assert asymptotic_bound(p, zero_D) == pytest.approx(p.m * p.gamma**2 / (1 - c.theta))
    equal = DerivedConstants(5.0, c.a, c.lambda_star, 0.4, 0.4, c.alpha0, 0.4)
    assert asymptotic_bound(p, equal) == pytest.approx(p.m * p.gamma**2 / 0.6)
    with pytest.raises(NotContracting):
        asymptotic_bound(p, DerivedConstants(1.0, 1.0, None, 1.5, 1.0, 1.0, 1.0))


def test_run_alpha_variant_is_not_below_threshold_form():
    # Theta at alpha0 >= Theta at alpha, and the third term carries -Theta D
    p = contracting_params()
    c = derive_constants(p)
    assert c.Theta_cap >= c.Theta_run
    assert asymptotic_bound(p, c, run_alpha=True) >= asymptotic_bound(p, c)


def test_no_floor_constants():
    c = derive_constants(P(alpha=1.0))
    assert c.lambda_star is None and not c.contracting and c.Theta_cap == 1.0


# -- floor dynamics --------------------------------------------------------------------------


def test_floor_map_fixed_points():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = random_params(rng, beta=float(rng.uniform(0, 0.5)), rho=float(rng.uniform(0.1, 1.0)))
        p = p.with_(alpha=float(rng.uniform(1.0, 4.0)))
        fp = floor_fixed_point(p)
        if fp > 0:
            assert floor_map(fp, p) == pytest.approx(fp, rel=1e-12)
        lam = iterate_floor_map(float(rng.uniform(1e-3, 1.0)), p, 10_000)
        growth = math.exp(-constant_a(p) * p.h) * p.alpha**2
        if abs(math.log(growth)) > 0.01:
            assert abs(lam - fp) <= 1e-10


# -- scaling -----------------------------------------------------------------------------------


def flat_params(**kw):
    return P(beta=0.0, epsilon=0.01, rho=1.0, h=0.1, N=5, m=3, alpha=2.0, lambda0=1.0).with_(**kw)


def test_gamma_scaling_exact_slope():
    assert gamma_scaling_exponent(flat_params(), [1e-2, 1e-3, 1e-4]) == pytest.approx(2.0, abs=1e-3)
    assert 1.8 <= gamma_scaling_exponent(flat_params(), [0.1, 0.05]) <= 2.2
    with pytest.raises(ValueError):
        gamma_scaling_exponent(flat_params(), [0.1, 0.1])


def test_gamma_scaling_quadratic_at_heavy_inflation():
    p = flat_params(alpha=1e6)
    b1 = asymptotic_bound(p.with_(gamma=0.01), derive_constants(p.with_(gamma=0.01)))
    b2 = asymptotic_bound(p.with_(gamma=0.03), derive_constants(p.with_(gamma=0.03)))
    assert b2 / b1 == pytest.approx(9.0, rel=1e-6)


def test_bound_table_csv(tmp_path):
    p = contracting_params()
    rows = bound_table(3, 1.0, 0.5, p.with_(alpha=1.0), p)
    assert len(rows) == 4 and rows[0][1] == 1.0 and rows[0][2] == 0.5
    path = tmp_path / "b.csv"
    write_bound_table(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "j,bound_wellposed,bound_thm37,asymptote"
    assert len(lines) == 5
    assert float(lines[2].split(",")[1]) == rows[1][1]
