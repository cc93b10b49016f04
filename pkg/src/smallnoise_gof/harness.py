"""Monte Carlo experiments: empirical size, power and limit-law checks.

Replications are grouped into fixed blocks of stream ids. Every replication
draws its noise from ``NoiseStream(seed, replication)``, so the results are
identical whatever the number of worker processes.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import limits
from .gof_first import first_test, theta_star
from .gof_second import TruncationPolicy, second_test
from .mle import estimate
from .model import AlternativeDrift, family_alternative, invisible_alternative, model_from_tag
from .ode import DeterministicPath, Grid, solve_limit_ode
from .sde import NoiseStream, SimulationError, Trajectory, simulate_alternative_many, simulate_many

__all__ = [
    "ExperimentAborted",
    "ExperimentConfig",
    "ExperimentResult",
    "DistributionReport",
    "load_config",
    "run_distribution_check",
    "run_experiment",
    "run_power_experiment",
    "run_size_experiment",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
BLOCK_SIZE = 250
MAX_FAILURE_FRACTION = 0.05
TESTS = ("FIRST", "SECOND")
FAMILY_OF = {"FIRST": limits.Family.BRIDGE_SQ, "SECOND": limits.Family.WIENER_SQ}


class ExperimentAborted(RuntimeError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass
class ExperimentConfig:
    model: str = "ou"
    theta0: List[float] = field(default_factory=lambda: [1.0])
    alternative: Optional[str] = None
    epsilons: List[float] = field(default_factory=lambda: [0.01])
    alpha: float = 0.05
    replications: int = 1000
    grid_n: int = 2000
    test: str = "BOTH"
    seed: int = 0
    nu: Optional[float] = None
    min_eig: float = 1e-10
    kind: str = "size"
    oracle_draws: int = 100_000
    oracle_truncation: int = 1000
    ito_correction: bool = False
    workers: int = 1
    output_dir: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.theta0 = [float(v) for v in np.atleast_1d(self.theta0)]
        self.epsilons = [float(e) for e in np.atleast_1d(self.epsilons)]
        self.test = self.test.upper()
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not all(0.0 < e < 1.0 for e in self.epsilons):
            raise ValueError("epsilons must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.test not in TESTS + ("BOTH",):
            raise ValueError("test must be FIRST, SECOND or BOTH")
        if self.kind not in ("size", "power", "distribution"):
            raise ValueError("kind must be size, power or distribution")

    @property
    def tests(self):
        return TESTS if self.test == "BOTH" else (self.test,)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path) -> ExperimentConfig:
    """Read a flat TOML (or JSON) experiment file."""
    path = Path(path)
    if path.suffix == ".json":
        data = json.loads(path.read_text())
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    if "schema_version" not in data:
        raise ValueError("config needs schema_version")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)


def make_alternative(model, theta0, text) -> Optional[AlternativeDrift]:
    """``None``, ``"invisible[:amplitude]"`` or ``"shift:<value>"``."""
    if text in (None, "", "none"):
        return None
    name, _, arg = str(text).partition(":")
    if name == "invisible":
        return invisible_alternative(theta0[0], float(arg) if arg else 1.0, model.T)
    if name == "shift":
        return family_alternative(model, theta0, float(arg or 0.0))
    raise ValueError(f"unknown alternative {text!r}")


@dataclass
class ExperimentResult:
    config: dict
    summary: list
    records: list
    thresholds: dict
    wall_clock: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def statistics(self, epsilon, test) -> np.ndarray:
        """Finite statistic values for one ``(epsilon, test)`` in replication order."""
        return np.array([r["statistic"] for r in self.records
                         if r["epsilon"] == epsilon and r["test"] == test and r["failure"] is None])

    def rate(self, epsilon, test) -> float:
        return next(s["rate"] for s in self.summary if s["epsilon"] == epsilon and s["test"] == test)

    def row(self, epsilon, test) -> dict:
        return next(s for s in self.summary if s["epsilon"] == epsilon and s["test"] == test)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "summary": self.summary,
            "thresholds": self.thresholds,
            "wall_clock": self.wall_clock,
            "diagnostics": self.diagnostics,
        }

    def write(self, output_dir) -> Path:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(json.dumps(self.to_dict(), indent=2))
        with open(out / "stats.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replication", "epsilon", "statistic", "reject", "test"])
            for r in self.records:
                stat = "nan" if r["statistic"] is None else repr(r["statistic"])
                rej = "" if r["reject"] is None else int(r["reject"])
                w.writerow([r["replication"], r["epsilon"], stat, rej, r["test"]])
        return out


def _run_block(cfg: ExperimentConfig, eps: float, start: int, stop: int, thresholds: dict) -> list:
    model = model_from_tag(cfg.model)
    theta0 = np.asarray(cfg.theta0)
    alt = make_alternative(model, theta0, cfg.alternative)
    grid = Grid(cfg.grid_n, model.T)
    policy = TruncationPolicy(cfg.nu, cfg.min_eig)
    ids = list(range(start, stop))

    def sim(noises):
        if alt is None:
            return simulate_many(model, theta0, eps, grid, noises)
        return simulate_alternative_many(alt, model, eps, grid, noises)

    try:
        paths = list(sim([NoiseStream(cfg.seed, i) for i in ids]))
    except SimulationError:
        paths = []
        for i in ids:
            try:
                paths.append(sim([NoiseStream(cfg.seed, i)])[0])
            except SimulationError:
                paths.append(None)

    failures = {}
    trajs, ests = {}, {}
    for i, X in zip(ids, paths):
        if X is None:
            failures[i] = "simulation diverged"
            continue
        traj = Trajectory(grid, X, eps, cfg.seed, i, model.name)
        try:
            est = estimate(model, traj)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            failures[i] = f"estimation error: {exc}"
            continue
        if not est.converged:
            failures[i] = "mle not converged"
            continue
        trajs[i], ests[i] = traj, est

    good = [i for i in ids if i in ests]
    xs = {}
    if good:
        thetas = np.stack([ests[i].theta_hat for i in good])
        vals = solve_limit_ode(model, thetas, grid, check=False).values
        xs = {i: DeterministicPath(grid, v) for i, v in zip(good, vals)}

    records = []
    for i in ids:
        for test in cfg.tests:
            rec = {"replication": i, "epsilon": eps, "test": test,
                   "statistic": None, "reject": None, "failure": failures.get(i)}
            if i in ests:
                try:
                    if test == "FIRST":
                        rep, _ = first_test(model, trajs[i], d_alpha=thresholds[test], alpha=cfg.alpha,
                                            estimation=ests[i], x_path=xs[i],
                                            ito_correction=cfg.ito_correction)
                    else:
                        rep, _ = second_test(model, trajs[i], c_alpha=thresholds[test], alpha=cfg.alpha,
                                             policy=policy, estimation=ests[i], x_path=xs[i],
                                             ito_correction=cfg.ito_correction)
                    rec["statistic"], rec["reject"] = rep.statistic, rep.reject
                except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                    rec["failure"] = f"{type(exc).__name__}: {exc}"
            records.append(rec)
    return records


def _thresholds(cfg) -> dict:
    return {t: limits.quantile(FAMILY_OF[t], cfg.alpha) for t in cfg.tests}


def _execute(cfg: ExperimentConfig, diagnostics=None) -> ExperimentResult:
    start_clock = time.perf_counter()
    model = model_from_tag(cfg.model)
    if cfg.alternative in (None, "", "none"):
        model.space.check(cfg.theta0)
    if "FIRST" in cfg.tests and model.d != 1:
        raise ValueError("the first test needs a scalar parameter")
    thresholds = _thresholds(cfg)
    M = cfg.replications
    tasks = [(eps, b, min(M, b + BLOCK_SIZE)) for eps in cfg.epsilons for b in range(0, M, BLOCK_SIZE)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            futures = [ex.submit(_run_block, cfg, e, a, b, thresholds) for e, a, b in tasks]
            blocks = [f.result() for f in futures]
    else:
        blocks = [_run_block(cfg, e, a, b, thresholds) for e, a, b in tasks]
    records = [r for blk in blocks for r in blk]

    summary = []
    aborted = []
    for eps in cfg.epsilons:
        for test in cfg.tests:
            rs = [r for r in records if r["epsilon"] == eps and r["test"] == test]
            ok = [r for r in rs if r["failure"] is None]
            n_fail = len(rs) - len(ok)
            for r in rs:
                if r["failure"] is not None:
                    log.warning("eps=%g test=%s replication %d excluded: %s",
                                eps, test, r["replication"], r["failure"])
            stats = np.array([r["statistic"] for r in ok])
            rate = float(np.mean([r["reject"] for r in ok])) if ok else float("nan")
            summary.append({
                "epsilon": eps,
                "test": test,
                "rate": rate,
                "se": float(np.sqrt(rate * (1 - rate) / len(ok))) if ok else float("nan"),
                "n_valid": len(ok),
                "failures": n_fail,
                "median_statistic": float(np.median(stats)) if ok else float("nan"),
                "threshold": thresholds[test],
            })
            if n_fail > MAX_FAILURE_FRACTION * M:
                aborted.append((eps, test, n_fail))
    result = ExperimentResult(cfg.to_dict(), summary, records, thresholds,
                              time.perf_counter() - start_clock, diagnostics or {})
    if aborted:
        raise ExperimentAborted(f"too many failed replications: {aborted}", result)
    return result


def run_size_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Rejection rates under the null model at ``theta0``."""
    if cfg.alternative not in (None, "", "none"):
        raise ValueError("size experiments simulate the null; drop `alternative`")
    return _execute(cfg)


def run_power_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Rejection rates under ``cfg.alternative``; the best in-family fit and
    its consistency functional are stored in ``diagnostics``."""
    model = model_from_tag(cfg.model)
    alt = make_alternative(model, np.asarray(cfg.theta0), cfg.alternative)
    if alt is None:
        raise ValueError("power experiments need an alternative")
    diag = theta_star(model, alt, model.space, Grid(cfg.grid_n, model.T))
    info = {
        "theta_star": diag.theta_star.tolist(),
        "separation": diag.separation,
        "c5_norm_sq": diag.c5_norm_sq,
        "unique": diag.unique,
    }
    return _execute(cfg, info)


@dataclass
class DistributionReport:
    result: ExperimentResult
    ks: dict
    oracle: dict

    def to_dict(self) -> dict:
        out = self.result.to_dict()
        out["ks_distance"] = [{"epsilon": e, "test": t, "ks": v} for (e, t), v in self.ks.items()]
        return out

    def write(self, output_dir) -> Path:
        out = self.result.write(output_dir)
        (out / "result.json").write_text(json.dumps(self.to_dict(), indent=2))
        for test, sample in self.oracle.items():
            np.savetxt(out / f"oracle_{test.lower()}.csv", sample, header="statistic", comments="")
        return out


def run_distribution_check(cfg: ExperimentConfig) -> DistributionReport:
    """Compare the statistics' empirical laws with KL oracle samples."""
    result = run_size_experiment(cfg) if cfg.alternative in (None, "", "none") else run_power_experiment(cfg)
    oracle = {t: limits.sample_limit(FAMILY_OF[t], cfg.oracle_draws, cfg.oracle_truncation,
                                     seed=cfg.seed + 1) for t in cfg.tests}
    ks = {(e, t): limits.ks_distance(result.statistics(e, t), oracle[t])
          for e in cfg.epsilons for t in cfg.tests}
    return DistributionReport(result, ks, oracle)


def run_experiment(cfg: ExperimentConfig):
    if cfg.kind == "size":
        return run_size_experiment(cfg)
    if cfg.kind == "power":
        return run_power_experiment(cfg)
    return run_distribution_check(cfg)
