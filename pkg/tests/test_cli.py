import json

import pytest

from etkf_lab.cli import main
from etkf_lab.harness import TRACE_HEADER, read_trace_csv


@pytest.fixture
def config_path(tmp_path):
    cfg = dict(
        model={"kind": "linear", "a": -1.0, "dim": 3},
        h=0.05,
        ensemble_size=6,
        cycles=8,
        gamma=0.2,
        replicates=4,
        run_seed=1,
        initial_truth=[0.3, -0.2, 0.1],
        ensemble_spread=0.3,
        beta="auto",
        beta_one_sided="auto",
        rho=3.0,
        lambda0="auto",
        alpha={"times_alpha0": 1.1},
    )
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_run(config_path, tmp_path, capsys):
    out = tmp_path / "run.csv"
    assert main(["run", "--config", str(config_path), "--out", str(out), "--replicate", "2"]) == 0
    data = read_trace_csv(out)
    assert list(data) == list(TRACE_HEADER) and len(data["step"]) == 8
    assert "wrote 8 steps" in capsys.readouterr().out


def test_montecarlo_with_checks(config_path, tmp_path, capsys):
    out = tmp_path / "mc.csv"
    assert main(["montecarlo", "--config", str(config_path), "--replicates", "6", "--out", str(out), "--threads", "2", "--check"]) == 0
    text = capsys.readouterr().out
    assert "6 replicates" in text and "uniform bound" in text
    assert len(out.read_text().splitlines()) == 9


def test_bounds(config_path, tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bounds", "--config", str(config_path), "--out", str(out), "--E0-sq", "2.0"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "j,bound_wellposed,bound_thm37,asymptote" and len(lines) == 10
    assert float(lines[1].split(",")[1]) == 2.0


def test_verify_exit_code(capsys):
    assert main(["verify", "--trials", "20", "--seed", "4"]) == 0
    assert capsys.readouterr().out.strip().endswith("PASS")


def test_scaling(tmp_path, capsys):
    cfg = dict(model={"kind": "linear", "a": 0.0, "dim": 3}, h=0.1, ensemble_size=5, cycles=1, gamma=0.1,
               beta=0.0, epsilon=0.01, rho=1.0, lambda0=1.0, alpha=2.0)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(cfg))
    assert main(["scaling", "--config", str(path), "--gammas", "1e-1,1e-2,1e-3"]) == 0
    last = capsys.readouterr().out.strip().splitlines()[-1]
    assert abs(float(last.split()[-1]) - 2.0) < 1e-3


def test_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"kind": "linear", "a": 1.0, "dim": 2}, "h": 0.1, "ensemble_size": 3, "cycles": 2, "gamma": 1.0, "colour": 1}))
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "x.csv")]) == 2
    assert "unknown config keys" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", "x.csv"]) == 2


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
