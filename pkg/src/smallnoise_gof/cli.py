"""Command line entry point ``smallnoise-gof``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import harness, limits
from .gof_first import EstimationFailure, first_test
from .gof_second import TruncationPolicy, second_test
from .mle import estimate
from .model import model_from_tag
from .ode import Grid
from .sde import NoiseStream, load_trajectory, save_trajectory, simulate, simulate_alternative

EXIT_ABORTED = 2


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _dump(obj):
    print(json.dumps(obj, indent=2))


def _write_curves(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([f"{v:.17g}" for v in row])


def cmd_simulate(a):
    model = model_from_tag(a.model)
    grid = Grid(a.n, model.T)
    noise = NoiseStream(a.seed, a.stream_id)
    theta = _floats(a.theta)
    if a.alternative:
        alt = harness.make_alternative(model, np.asarray(theta), a.alternative)
        traj = simulate_alternative(alt, model, a.eps, grid, noise)
    else:
        traj = simulate(model, theta, a.eps, grid, noise)
    side = save_trajectory(traj, a.out)
    print(f"wrote {a.out} and {side}", file=sys.stderr)


def cmd_estimate(a):
    model = model_from_tag(a.model)
    traj = load_trajectory(a.trajectory, a.eps)
    _dump(estimate(model, traj).to_dict())


def cmd_test1(a):
    model = model_from_tag(a.model)
    traj = load_trajectory(a.trajectory, a.eps)
    rep, cur = first_test(model, traj, d_alpha=a.d_alpha, alpha=a.alpha,
                          ito_correction=a.ito_correction)
    if a.curves:
        _write_curves(a.curves, ["t", "K", "h", "R", "Q"],
                      [cur.t, cur.K_values, cur.h_emp, cur.R_values, cur.Q_values])
    _dump(rep.to_dict())


def cmd_test2(a):
    model = model_from_tag(a.model)
    traj = load_trajectory(a.trajectory, a.eps)
    policy = TruncationPolicy(a.nu, a.min_eig)
    rep, cur = second_test(model, traj, c_alpha=a.c_alpha, alpha=a.alpha, policy=policy,
                           ito_correction=a.ito_correction)
    if a.curves:
        _write_curves(a.curves, ["t", "U", "W", "det_Nbar"],
                      [cur.t, cur.U_values, cur.W_values, cur.det_nbar])
    _dump(rep.to_dict())


def cmd_quantiles(a):
    fams = list(limits.Family) if a.family == "both" else [limits.Family.of(a.family)]
    alphas = _floats(a.alpha_list) if a.alpha_list else limits.DEFAULT_ALPHAS
    tables = [limits.build_quantile_table(f, alphas, a.draws, a.truncation, a.seed, a.workers)
              for f in fams]
    if a.out:
        limits.write_table_csv(tables, a.out)
    else:
        limits._write_rows(tables, sys.stdout)


def cmd_experiment(a):
    cfg = harness.load_config(a.config)
    if a.workers is not None:
        cfg.workers = a.workers
    out = a.output_dir or cfg.output_dir or "."
    try:
        res = harness.run_experiment(cfg)
    except harness.ExperimentAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        if exc.result is not None:
            exc.result.write(out)
        return EXIT_ABORTED
    res.write(out)
    summary = res.result.summary if isinstance(res, harness.DistributionReport) else res.summary
    for row in summary:
        print(f"eps={row['epsilon']:g} test={row['test']} rate={row['rate']:.4f} "
              f"se={row['se']:.4f} failures={row['failures']}")
    if isinstance(res, harness.DistributionReport):
        for (e, t), v in res.ks.items():
            print(f"eps={e:g} test={t} ks={v:.4f}")
    return 0


def _add_traj_args(p):
    p.add_argument("trajectory", help="trajectory CSV with header t,x")
    p.add_argument("--model", required=True, help="example1 | ou | ou_level | invisible | linear:<file>")
    p.add_argument("--eps", type=float, default=None, help="noise level (default: from the sidecar)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smallnoise-gof",
                                description="Goodness-of-fit tests for small-noise diffusions.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one trajectory")
    s.add_argument("--model", required=True)
    s.add_argument("--theta", required=True, help="comma separated parameter")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stream-id", type=int, default=0)
    s.add_argument("--alternative", default=None, help="invisible[:amplitude] or shift:<value>")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", help="maximum likelihood estimate")
    _add_traj_args(s)
    s.set_defaults(func=cmd_estimate)

    for name, thr, func in (("test1", "--d-alpha", cmd_test1), ("test2", "--c-alpha", cmd_test2)):
        s = sub.add_parser(name, help=f"{'first' if name == 'test1' else 'second'} goodness-of-fit test")
        _add_traj_args(s)
        s.add_argument("--alpha", type=float, default=0.05)
        s.add_argument(thr, type=float, default=None, help="threshold (default: from the quantile table)")
        s.add_argument("--curves", default=None, help="write the statistic curves to this CSV")
        s.add_argument("--ito-correction", action="store_true")
        if name == "test2":
            s.add_argument("--nu", type=float, default=None)
            s.add_argument("--min-eig", type=float, default=1e-10)
        s.set_defaults(func=func)

    s = sub.add_parser("quantiles", help="tabulate limit-law quantiles")
    s.add_argument("--family", default="both", help="BRIDGE_SQ, WIENER_SQ or both")
    s.add_argument("--alpha-list", default=None)
    s.add_argument("--draws", type=int, default=10 ** 6)
    s.add_argument("--truncation", type=int, default=10 ** 4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_quantiles)

    s = sub.add_parser("experiment", help="Monte Carlo size / power / distribution experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--output-dir", default=None)
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except EstimationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
