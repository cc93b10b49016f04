import csv
import json
import shutil
import subprocess

import numpy as np
import pytest
from numpy.testing import assert_allclose

from smallnoise_gof import harness, limits
from smallnoise_gof.cli import main
from smallnoise_gof.gof_second import second_test
from smallnoise_gof.model import builtin_example1
from smallnoise_gof.sde import load_trajectory


@pytest.fixture
def traj_file(tmp_path):
    out = tmp_path / "x.csv"
    assert main(["simulate", "--model", "example1", "--theta", "0.5", "--eps", "0.1",
                 "--n", "500", "--seed", "2", "--stream-id", "3", "--out", str(out)]) == 0
    return out


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_simulate_writes_csv_and_sidecar(traj_file):
    with open(traj_file) as fh:
        assert next(csv.reader(fh)) == ["t", "x"]
    meta = json.loads(traj_file.with_suffix(".json").read_text())
    assert meta["seed"] == 2 and meta["stream_id"] == 3 and meta["epsilon"] == 0.1
    tr = load_trajectory(traj_file)
    assert tr.grid.n == 500 and tr.values[0] == 0.0


def test_estimate(traj_file, capsys):
    assert main(["estimate", str(traj_file), "--model", "example1"]) == 0
    out = _json(capsys)
    tr = load_trajectory(traj_file)
    # example1: the estimate is the end point
    assert_allclose(out["theta_hat"], [tr.values[-1]], atol=1e-12)


def test_test2_matches_library(traj_file, tmp_path, capsys):
    curves = tmp_path / "w.csv"
    assert main(["test2", str(traj_file), "--model", "example1", "--curves", str(curves)]) == 0
    out = _json(capsys)
    rep, cur = second_test(builtin_example1(), load_trajectory(traj_file))
    assert out["statistic"] == pytest.approx(rep.statistic, rel=1e-14)
    assert out["threshold"] == pytest.approx(limits.quantile("WIENER_SQ", 0.05))
    data = np.loadtxt(curves, delimiter=",", skiprows=1)
    assert data.shape == (501, 4)
    assert_allclose(data[:, 2], cur.W_values, rtol=1e-15)


def test_test1_threshold_and_curves(tmp_path, capsys):
    path = tmp_path / "ou.csv"
    main(["simulate", "--model", "ou", "--theta", "1", "--eps", "0.05", "--n", "400", "--out", str(path)])
    curves = tmp_path / "k.csv"
    assert main(["test1", str(path), "--model", "ou", "--d-alpha", "1e-9", "--curves", str(curves)]) == 0
    out = _json(capsys)
    assert out["threshold"] == 1e-9 and out["reject"] is True
    with open(curves) as fh:
        assert next(csv.reader(fh)) == ["t", "K", "h", "R", "Q"]


def test_linear_model_file(tmp_path, capsys):
    spec = tmp_path / "lin.toml"
    spec.write_text('schema_version = 1\nH = ["-x", "cos(t)"]\nx0 = 1.0\n')
    path = tmp_path / "lin.csv"
    tag = f"linear:{spec}"
    assert main(["simulate", "--model", tag, "--theta", "1,0.5", "--eps", "0.01",
                 "--n", "400", "--out", str(path)]) == 0
    assert main(["estimate", str(path), "--model", tag]) == 0
    est = _json(capsys)
    assert_allclose(est["theta_hat"], [1.0, 0.5], atol=0.2)
    assert main(["test2", str(path), "--model", tag, "--nu", "0.1"]) == 0
    assert _json(capsys)["test"] == "second"


def test_quantiles(tmp_path):
    out = tmp_path / "q.csv"
    assert main(["quantiles", "--family", "WIENER_SQ", "--alpha-list", "0.1,0.05",
                 "--draws", "20000", "--truncation", "100", "--out", str(out)]) == 0
    tabs = limits.read_table_csv(out)
    tab = tabs[limits.Family.WIENER_SQ]
    assert list(tab.alphas) == [0.05, 0.1] and tab.n_draws == 20000
    assert tab.quantiles[0] == pytest.approx(1.66, rel=0.05)


def test_experiment(tmp_path, capsys):
    cfg = tmp_path / "e.toml"
    cfg.write_text('schema_version = 1\nmodel = "example1"\ntheta0 = [0.5]\n'
                   'epsilons = [0.1]\nreplications = 30\ntest = "SECOND"\n')
    assert main(["experiment", "--config", str(cfg), "--output-dir", str(tmp_path / "o")]) == 0
    assert "rate=" in capsys.readouterr().out
    assert (tmp_path / "o" / "result.json").exists() and (tmp_path / "o" / "stats.csv").exists()


def test_experiment_abort_exit_code(tmp_path, monkeypatch, capsys):
    def boom(model, traj, *a, **kw):
        raise ArithmeticError("forced")
    monkeypatch.setattr(harness, "estimate", boom)
    cfg = tmp_path / "e.toml"
    cfg.write_text('schema_version = 1\nmodel = "ou"\nepsilons = [0.1]\nreplications = 5\n'
                   'grid_n = 200\ntest = "SECOND"\n')
    assert main(["experiment", "--config", str(cfg), "--output-dir", str(tmp_path / "o")]) == 2
    assert "aborted" in capsys.readouterr().err
    assert (tmp_path / "o" / "stats.csv").exists()


def test_estimation_failure_exit_code(tmp_path, capsys):
    # a flat path outside the reachable range pins the estimate to the boundary
    path = tmp_path / "flat.csv"
    t = np.linspace(0, 1, 101)
    np.savetxt(path, np.column_stack([t, 50.0 * t]), delimiter=",", header="t,x", comments="")
    assert main(["test2", str(path), "--model", "example1", "--eps", "0.1"]) == 1
    assert "error" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("smallnoise-gof") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["smallnoise-gof", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "experiment" in r.stdout
