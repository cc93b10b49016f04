"""The ten acceptance criteria, each at its stated tolerance.

Every criterion records one ``C<k> PASS|FAIL`` line, printed as it finishes
and again in the pytest terminal summary. Run alone with
``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
"""
import functools
import sys
import time

import numpy as np
import pytest
from scipy.stats import anderson

from smallnoise_gof import limits
from smallnoise_gof.gof_first import first_test
from smallnoise_gof.gof_second import nbar_matrices, second_test
from smallnoise_gof.harness import ExperimentConfig, run_distribution_check, run_power_experiment, run_size_experiment
from smallnoise_gof.mle import empirical_information, estimate, fisher_information, score_weights
from smallnoise_gof.model import builtin_example1, builtin_ou, builtin_ou_level
from smallnoise_gof.ode import DeterministicPath, Grid, solve_limit_ode
from smallnoise_gof.quadrature import trapz
from smallnoise_gof.sde import NoiseStream, Trajectory, brownian_increments, coarsen_increments, simulate, simulate_many

from conftest import ACCEPTANCE_LINES

ALPHA = 0.05


def criterion(number, title):
    """Record PASS/FAIL for a test returning ``(ok, detail)``."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                ok, detail = False, f"error: {type(exc).__name__}: {exc}"
                raise
            finally:
                line = (f"C{number} {'PASS' if ok else 'FAIL'}  {title}: {detail} "
                        f"[{time.perf_counter() - start:.1f} s]")
                ACCEPTANCE_LINES.append(line)
                print("\n" + line, flush=True)
            assert ok, line
        return run
    return wrap


def binomial_se(alpha, M):
    return float(np.sqrt(alpha * (1 - alpha) / M))


@criterion(1, "example 1 exactness")
def test_c1_example1_exactness():
    start = time.perf_counter()
    cfg = ExperimentConfig(model="example1", theta0=[0.5], epsilons=[0.5, 0.1, 0.01], replications=2000,
                           grid_n=2000, test="SECOND", kind="distribution", seed=101)
    rep = run_distribution_check(cfg)
    wall = time.perf_counter() - start
    ks = {e: rep.ks[(e, "SECOND")] for e in cfg.epsilons}
    ok = all(v < 0.05 for v in ks.values()) and wall < 60.0
    detail = ", ".join(f"KS(eps={e:g})={v:.4f}" for e, v in ks.items()) + f" (< 0.05); runtime {wall:.1f} s (< 60 s)"
    return ok, detail


@criterion(2, "example 1 bridge identity")
def test_c2_bridge_identity():
    m = builtin_example1()
    worst = 0.0
    rng = np.random.default_rng(2024)
    for seed in rng.integers(0, 2 ** 32, size=20):
        tr = simulate(m, [0.5], 0.1, Grid(2000, m.T), NoiseStream(int(seed)))
        rep, _ = first_test(m, tr, d_alpha=1.0)
        B = (tr.values - tr.values[-1] * tr.t) / tr.epsilon
        direct = trapz(B ** 2, tr.grid.dt)
        worst = max(worst, abs(rep.statistic / direct - 1))
    return worst < 1e-6, f"max relative gap {worst:.2e} over 20 seeds (< 1e-6)"


@pytest.fixture(scope="module")
def ou_size():
    cfg = ExperimentConfig(model="ou", theta0=[1.0], epsilons=[0.04, 0.02, 0.01], replications=1000,
                           grid_n=2000, test="BOTH", seed=303)
    start = time.perf_counter()
    res = run_size_experiment(cfg)
    return res, time.perf_counter() - start


def _size_line(res, test):
    return ", ".join(f"rate(eps={e:g})={res.rate(e, test):.3f}" for e in (0.04, 0.02, 0.01))


@criterion(3, "size of the first test")
def test_c3_first_test_size(ou_size):
    res, wall = ou_size
    r = {e: res.rate(e, "FIRST") for e in (0.04, 0.02, 0.01)}
    se = binomial_se(ALPHA, 1000)
    in_band = 0.03 <= r[0.01] <= 0.08
    shrinks = abs(r[0.01] - ALPHA) <= abs(r[0.04] - ALPHA) + 2 * se
    ok = in_band and shrinks and wall < 300
    return ok, (f"{_size_line(res, 'FIRST')}; band [0.03, 0.08] {'ok' if in_band else 'missed'}; "
                f"|rate-0.05| {abs(r[0.04] - ALPHA):.3f} -> {abs(r[0.01] - ALPHA):.3f} "
                f"(2 SE = {2 * se:.3f}); both tests in {wall:.0f} s (< 300 s)")


@criterion(4, "size of the second test")
def test_c4_second_test_size(ou_size):
    res, _ = ou_size
    r = res.rate(0.01, "SECOND")
    return 0.03 <= r <= 0.08, f"{_size_line(res, 'SECOND')}; band [0.03, 0.08]"


def test_size_error_nonincreasing(ou_size):
    # |rate - alpha| does not grow as eps decreases, within 2 binomial SE
    res, _ = ou_size
    se = binomial_se(ALPHA, 1000)
    for test in ("FIRST", "SECOND"):
        gaps = [abs(res.rate(e, test) - ALPHA) for e in (0.04, 0.02, 0.01)]
        assert gaps[1] <= gaps[0] + 2 * se and gaps[2] <= gaps[1] + 2 * se


def test_first_test_null_law(ou_size, bridge_oracle):
    res, _ = ou_size
    assert limits.ks_distance(res.statistics(0.01, "FIRST"), bridge_oracle) < 0.06


@criterion(5, "consistency against a separated alternative")
def test_c5_consistency():
    cfg = ExperimentConfig(model="ou", theta0=[1.0], alternative="shift:0.5", epsilons=[0.01, 0.005],
                           replications=500, grid_n=2000, test="FIRST", kind="power", seed=505)
    res = run_power_experiment(cfg)
    power = res.rate(0.01, "FIRST")
    med = {e: res.row(e, "FIRST")["median_statistic"] for e in cfg.epsilons}
    ratio = med[0.005] / med[0.01]
    c5 = res.diagnostics["c5_norm_sq"]
    ok = power >= 0.95 and ratio >= 3.0 and c5 > 0
    return ok, (f"power(eps=0.01)={power:.3f} (>= 0.95); median delta {med[0.01]:.1f} -> {med[0.005]:.1f}, "
                f"ratio {ratio:.2f} (>= 3); C5 norm^2 = {c5:.3g}")


@criterion(6, "invisible alternative")
def test_c6_invisible():
    cfg = ExperimentConfig(model="invisible", theta0=[1.0], alternative="invisible", epsilons=[0.01],
                           replications=500, grid_n=2000, test="FIRST", kind="power", seed=606)
    res = run_power_experiment(cfg)
    r = res.rate(0.01, "FIRST")
    return r < 0.2, f"rejection rate {r:.3f} (< 0.2), C5 norm^2 = {res.diagnostics['c5_norm_sq']:.2e}"


def _mle_sample(model, theta, eps=0.01, M=2000, n=2000, seed=707):
    grid = Grid(n, model.T)
    X = simulate_many(model, theta, eps, grid, [NoiseStream(seed, i) for i in range(M)])
    est = [estimate(model, Trajectory(grid, row, eps)) for row in X]
    assert all(e.converged for e in est)
    Z = (np.stack([e.theta_hat for e in est]) - theta) / eps
    info = fisher_information(model, theta, solve_limit_ode(model, theta, grid))
    return Z, info


@pytest.fixture(scope="module")
def mle_samples():
    return {"ou": _mle_sample(builtin_ou(), np.array([1.0])),
            "ou_level": _mle_sample(builtin_ou_level(), np.array([1.0, 0.5]))}


@criterion(7, "MLE representation")
def test_c7_mle_covariance(mle_samples):
    errs = {}
    for name, (Z, info) in mle_samples.items():
        target = np.linalg.inv(info)
        emp = np.atleast_2d(np.cov(Z, rowvar=False))
        errs[name] = np.linalg.norm(emp - target) / np.linalg.norm(target)
    ok = all(v < 0.15 for v in errs.values())
    return ok, ", ".join(f"{k}: Frobenius rel. error {v:.3f}" for k, v in errs.items()) + " (< 0.15)"


def test_mle_normality(mle_samples):
    # Anderson-Darling per whitened coordinate at the 1% level
    for Z, info in mle_samples.values():
        L = np.linalg.cholesky(info)
        for col in (Z @ L).T:
            res = anderson(col)
            assert res.statistic < res.critical_values[list(res.significance_level).index(1.0)]


@criterion(8, "normalizations")
def test_c8_normalizations():
    gaps = []
    for m, theta in ((builtin_ou(), [1.0]), (builtin_ou_level(), [1.0, 0.5]), (builtin_example1(), [0.5])):
        grid = Grid(2000, m.T)
        x = solve_limit_ode(m, theta, grid)
        h = score_weights(m, theta, x).h_values
        gaps.append(np.max(np.abs(trapz(h[:, :, None] * h[:, None, :], grid.dt) - np.eye(m.d))))
        gaps.append(np.max(np.abs(nbar_matrices(m, theta, x)[0] - fisher_information(m, theta, x))))
        tr = simulate(m, theta, 0.05, grid, NoiseStream(808))
        gaps.append(np.max(np.abs(nbar_matrices(m, theta, tr)[0] - empirical_information(m, theta, tr))))
    worst = max(gaps)

    m = builtin_ou()
    grid = Grid(2000, m.T)
    med = []
    for eps in (0.04, 0.02, 0.01):
        X = simulate_many(m, [1.0], eps, grid, [NoiseStream(809, i) for i in range(200)])
        trs = [Trajectory(grid, row, eps) for row in X]
        ests = [estimate(m, tr) for tr in trs]
        xs = solve_limit_ode(m, np.stack([e.theta_hat for e in ests]), grid).values
        KT = [first_test(m, tr, d_alpha=1.0, estimation=e, x_path=DeterministicPath(grid, xv))[1].K_values[-1]
              for tr, e, xv in zip(trs, ests, xs)]
        med.append(float(np.median(np.abs(KT))))
    monotone = med[0] > med[1] > med[2]
    ok = worst < 1e-10 and monotone
    return ok, (f"max |int h h^T - I|, |Nbar(0) - I| = {worst:.1e} (< 1e-10); median |K(T)| over eps "
                f"0.04/0.02/0.01 = {med[0]:.2e} / {med[1]:.2e} / {med[2]:.2e} (decreasing)")


@criterion(9, "limit-law oracles")
def test_c9_limit_laws():
    worst, means = 0.0, []
    for fam in limits.Family:
        path = limits.path_sample_limit(fam, 2_000_000, 500, seed=909)
        table = limits.default_table(fam)
        for a in (0.01, 0.05, 0.10):
            q_path = float(np.quantile(path, 1 - a))
            worst = max(worst, abs(limits.quantile(fam, a, table) / q_path - 1))
        kl = limits.sample_limit(fam, 200_000, 1000, seed=910)
        for name, s in (("KL", kl), ("path", path)):
            z = (s.mean() - fam.mean) / (s.std(ddof=1) / np.sqrt(s.size))
            means.append((fam.value, name, float(z)))
    ok = worst < 0.01 and all(abs(z) < 3 for *_, z in means)
    zs = ", ".join(f"{f[:6]}/{n} z={z:+.2f}" for f, n, z in means)
    return ok, f"max quantile gap {100 * worst:.2f}% (< 1%); mean z-scores {zs} (|z| < 3)"


@criterion(10, "numerics")
def test_c10_numerics():
    m = builtin_ou()
    errs = []
    for n in (10, 20, 40, 80, 160):
        grid = Grid(n, m.T)
        x = solve_limit_ode(m, [1.0], grid)
        errs.append(np.max(np.abs(x.values - np.exp(-grid.t))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    rk_ok = bool(np.all(np.abs(orders - 4) < 0.2))

    changes = []
    for seed in range(10):
        fine = Grid(4000, m.T)
        dW = brownian_increments(NoiseStream(1010, seed), fine)
        a = simulate(m, [1.0], 0.01, Grid(2000, m.T), NoiseStream(1010, seed), increments=coarsen_increments(dW))
        b = simulate(m, [1.0], 0.01, fine, NoiseStream(1010, seed), increments=dW)
        for test in (first_test, second_test):
            sa, sb = test(m, a, None, 1.0)[0].statistic, test(m, b, None, 1.0)[0].statistic
            changes.append(abs(sa / sb - 1))
    stable = max(changes) < 0.02
    return rk_ok and stable, (f"RK4 observed orders {np.round(orders, 3).tolist()} (4 +- 0.2); "
                              f"max change of delta/Delta n=2000 -> 4000 over 10 paths "
                              f"{100 * max(changes):.2f}% (< 2%)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
