import numpy as np
import pytest

from etkf_lab.analysis import NoiseCovariance, ObservationOperator
from etkf_lab.ensemble import Ensemble
from etkf_lab.identities import (
    IDENTITY_NAMES,
    IdentityReport,
    eigenvalue_map_residual,
    l2_norm_residual,
    rel_residual,
    resolvent_bounds_violation,
    resolvent_residual,
    transform_representation_residual,
    verify_identities,
    woodbury_residuals,
)


def test_zero_operator_resolvent_is_exact():
    assert resolvent_residual(np.zeros((4, 4))) == 0.0
    assert resolvent_bounds_violation(np.zeros((4, 4))) == 0.0


def test_zero_ensemble_woodbury_is_exact():
    wg, wi = woodbury_residuals(np.zeros((3, 5)), np.diag([1.0, 2.0, 3.0]))
    assert wi == 0.0 and wg == 0.0


def test_rel_residual_scale():
    assert rel_residual([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert rel_residual([2.0], [1.0]) == pytest.approx(0.5)
    assert rel_residual([0.0], [0.0]) == 0.0


def test_residuals_detect_wrong_operands(rng):
    # a non-PSD matrix breaks the resolvent bounds
    assert resolvent_bounds_violation(-0.5 * np.eye(3)) > 0.1
    V = Ensemble(rng.standard_normal((4, 6)))
    assert l2_norm_residual(V) < 1e-14
    Vf = Ensemble(rng.standard_normal((3, 8)))
    assert eigenvalue_map_residual(Vf, rng.standard_normal(3), 0.5, 2.0) < 1e-10


def test_transform_representation_fully_observed(rng):
    V = Ensemble(rng.standard_normal((5, 7)))
    H = ObservationOperator.identity(5)
    Gamma = NoiseCovariance.scaled_identity(0.4, 5)
    assert transform_representation_residual(V, rng.standard_normal(5), H, Gamma) < 1e-10


def test_battery_small():
    report = verify_identities(seed=1, trials=50)
    assert set(report.residuals) == set(IDENTITY_NAMES)
    assert report.passed
    lines = report.lines()
    assert lines[-1] == "PASS" and len(lines) == len(IDENTITY_NAMES) + 2


def test_battery_deterministic():
    a = verify_identities(seed=3, trials=10).residuals
    b = verify_identities(seed=3, trials=10).residuals
    assert a == b


def test_report_flags_failure():
    rep = IdentityReport(1, 0, 1e-9, dict.fromkeys(IDENTITY_NAMES, 0.0))
    assert rep.passed
    rep.residuals["gain_identity"] = 1e-6
    assert not rep.passed and not rep.ok("gain_identity")
    rep.residuals["gain_identity"] = 0.0
    rep.residuals["eigenvalue_map"] = 5e-9
    assert rep.passed


def test_trials_must_be_positive():
    with pytest.raises(ValueError):
        verify_identities(trials=0)
