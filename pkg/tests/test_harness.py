import csv
import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from smallnoise_gof import harness, limits
from smallnoise_gof.harness import (
    ExperimentAborted,
    ExperimentConfig,
    load_config,
    make_alternative,
    run_distribution_check,
    run_experiment,
    run_power_experiment,
    run_size_experiment,
)
from smallnoise_gof.model import builtin_ou


def band(alpha, M, k=3.0):
    se = np.sqrt(alpha * (1 - alpha) / M)
    return alpha - k * se, alpha + k * se


def test_config_validation():
    cfg = ExperimentConfig(theta0=1.0, epsilons=0.1)
    assert cfg.theta0 == [1.0] and cfg.epsilons == [0.1] and cfg.tests == ("FIRST", "SECOND")
    assert ExperimentConfig(test="second").tests == ("SECOND",)
    for bad in ({"replications": 0}, {"epsilons": [1.0]}, {"epsilons": [0.0]}, {"alpha": 1.0},
                {"test": "THIRD"}, {"kind": "other"}, {"schema_version": 2}):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)


def test_load_config_toml_and_json(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('schema_version = 1\nmodel = "example1"\ntheta0 = [0.5]\n'
                 'epsilons = [0.5, 0.1]\nreplications = 10\ntest = "SECOND"\nseed = 7\n')
    cfg = load_config(p)
    assert cfg.model == "example1" and cfg.epsilons == [0.5, 0.1] and cfg.seed == 7
    j = tmp_path / "c.json"
    j.write_text(json.dumps(cfg.to_dict()))
    assert load_config(j) == cfg


def test_load_config_rejects(tmp_path):
    p = tmp_path / "a.toml"
    p.write_text('model = "ou"\n')
    with pytest.raises(ValueError, match="schema_version"):
        load_config(p)
    p.write_text('schema_version = 1\nmodle = "ou"\n')
    with pytest.raises(ValueError, match="unknown"):
        load_config(p)


def test_make_alternative():
    m = builtin_ou()
    assert make_alternative(m, np.array([1.0]), None) is None
    alt = make_alternative(m, np.array([1.0]), "shift:0.5")
    assert alt(0.3, 2.0) == pytest.approx(-2.0 + 0.5)
    assert make_alternative(m, np.array([1.0]), "invisible:2") is not None
    with pytest.raises(ValueError):
        make_alternative(m, np.array([1.0]), "wobble")


@pytest.fixture(scope="module")
def example1_size():
    cfg = ExperimentConfig(model="example1", theta0=[0.5], epsilons=[0.1], replications=2000,
                           test="SECOND", seed=3)
    return run_size_experiment(cfg)


def test_example1_exact_size(example1_size):
    row = example1_size.row(0.1, "SECOND")
    assert row["n_valid"] == 2000 and row["failures"] == 0
    assert 0.038 <= row["rate"] <= 0.062
    assert row["se"] == pytest.approx(np.sqrt(row["rate"] * (1 - row["rate"]) / 2000))
    assert row["threshold"] == limits.quantile("WIENER_SQ", 0.05)


def test_example1_median_threshold(example1_size):
    stats = example1_size.statistics(0.1, "SECOND")
    rate = np.mean(stats > limits.quantile("WIENER_SQ", 0.5))
    assert 0.46 <= rate <= 0.54
    cfg = ExperimentConfig(model="example1", theta0=[0.5], epsilons=[0.1], replications=300,
                           test="SECOND", seed=3, alpha=0.5)
    res = run_size_experiment(cfg)
    # same seed and stream ids, so the statistics coincide
    assert_array_equal(res.statistics(0.1, "SECOND"), stats[:300])


def test_determinism_across_workers():
    cfg = ExperimentConfig(model="ou", theta0=[1.0], epsilons=[0.05, 0.02], replications=300,
                           grid_n=500, seed=9)
    a = run_size_experiment(cfg)
    cfg.workers = 2
    b = run_size_experiment(cfg)
    assert a.records == b.records and a.summary == b.summary
    # common random numbers: stream ids are shared across noise levels
    ids = [r["replication"] for r in a.records if r["epsilon"] == 0.02 and r["test"] == "FIRST"]
    assert ids == list(range(300))


def test_family_member_alternative_is_size():
    cfg = ExperimentConfig(model="ou", theta0=[1.0], alternative="shift:0", epsilons=[0.02],
                           replications=500, grid_n=500, test="FIRST", kind="power", seed=4)
    res = run_power_experiment(cfg)
    lo, hi = band(0.05, 500)
    assert lo <= res.rate(0.02, "FIRST") <= hi
    assert res.diagnostics["theta_star"] == pytest.approx([1.0], abs=1e-6)
    assert res.diagnostics["separation"] == pytest.approx(0.0, abs=1e-10)


def test_kind_checks():
    with pytest.raises(ValueError):
        run_size_experiment(ExperimentConfig(alternative="shift:1", replications=5))
    with pytest.raises(ValueError):
        run_power_experiment(ExperimentConfig(replications=5))
    with pytest.raises(ValueError, match="scalar"):
        run_size_experiment(ExperimentConfig(model="ou_level", theta0=[1.0, 0.5], test="FIRST",
                                             replications=5))


def _failing_estimate(every):
    real = harness.estimate

    def fake(model, traj, *a, **kw):
        if traj.stream_id % every == 0:
            raise ArithmeticError("forced failure")
        return real(model, traj, *a, **kw)
    return fake


def test_failures_excluded_with_count(monkeypatch):
    monkeypatch.setattr(harness, "estimate", _failing_estimate(25))
    cfg = ExperimentConfig(model="ou", epsilons=[0.05], replications=100, grid_n=300, test="SECOND")
    res = run_size_experiment(cfg)
    row = res.row(0.05, "SECOND")
    assert row["failures"] == 4 and row["n_valid"] == 96
    assert len(res.statistics(0.05, "SECOND")) == 96
    failed = [r for r in res.records if r["failure"]]
    assert [r["replication"] for r in failed] == [0, 25, 50, 75]
    assert all(r["statistic"] is None for r in failed)


def test_abort_on_too_many_failures(monkeypatch):
    monkeypatch.setattr(harness, "estimate", _failing_estimate(10))
    cfg = ExperimentConfig(model="ou", epsilons=[0.05], replications=100, grid_n=300, test="SECOND")
    with pytest.raises(ExperimentAborted) as info:
        run_size_experiment(cfg)
    assert info.value.result.row(0.05, "SECOND")["failures"] == 10


def test_single_replication_ks():
    cfg = ExperimentConfig(model="example1", theta0=[0.5], epsilons=[0.1], replications=1,
                           test="SECOND", kind="distribution", oracle_draws=20000, oracle_truncation=200)
    rep = run_distribution_check(cfg)
    x = rep.result.statistics(0.1, "SECOND")[0]
    oracle = rep.oracle["SECOND"]
    expected = max(np.mean(oracle <= x), 1 - np.mean(oracle < x))
    assert rep.ks[(0.1, "SECOND")] == pytest.approx(expected, abs=1e-12)


def test_distribution_check_example1():
    cfg = ExperimentConfig(model="example1", theta0=[0.5], epsilons=[0.1], replications=2000,
                           test="SECOND", kind="distribution", seed=1)
    rep = run_experiment(cfg)
    assert rep.ks[(0.1, "SECOND")] < 0.05


def test_outputs(tmp_path):
    cfg = ExperimentConfig(model="example1", theta0=[0.5], epsilons=[0.5, 0.1], replications=20,
                           test="BOTH", kind="distribution", oracle_draws=1000, oracle_truncation=50)
    rep = run_experiment(cfg)
    out = rep.write(tmp_path / "run")
    data = json.loads((out / "result.json").read_text())
    assert data["config"]["replications"] == 20 and data["wall_clock"] >= 0
    assert len(data["summary"]) == 4 and len(data["ks_distance"]) == 4
    for row in data["summary"]:
        assert 0 <= row["rate"] <= 1
    with open(out / "stats.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["replication", "epsilon", "statistic", "reject", "test"]
    assert len(rows) == 80
    assert (out / "oracle_first.csv").exists() and (out / "oracle_second.csv").exists()


def test_power_grows_as_noise_shrinks():
    cfg = ExperimentConfig(model="ou", theta0=[1.0], alternative="shift:0.5", epsilons=[0.04, 0.02, 0.01],
                           replications=500, grid_n=1000, test="FIRST", kind="power", seed=12)
    res = run_power_experiment(cfg)
    rates = [res.rate(e, "FIRST") for e in cfg.epsilons]
    assert rates[0] < rates[1] < rates[2] and rates[2] >= 0.95
    assert res.diagnostics["c5_norm_sq"] > 0 and res.diagnostics["unique"]
