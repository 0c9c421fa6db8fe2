"""Command line entry point: ``mfmcps <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import LipschitzLabEnv, SincEnv, generate_grid_dataset, generate_uniform_dataset, oracle_sweep
from .core import BatchDataset, Box, InputError, PolicySpec, make_rng
from .harness import ExperimentConfig, bounds_check, run_experiment
from .mfmc import MFMCEstimator
from .optim import ALGORITHMS, run_optimizer


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _range(text):
    """``start:stop:step`` inclusive of ``stop`` up to rounding."""
    try:
        start, stop, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("need step > 0 and stop >= start")
    k = int(np.floor((stop - start) / step + 1e-9))
    return np.round(start + step * np.arange(k + 1), 12)


def _interval(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    return lo, hi


def _vector(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _env(args):
    if args.env == "sinc":
        return SincEnv(epsilon=args.epsilon if args.epsilon is not None else 0.01)
    return LipschitzLabEnv(epsilon=args.epsilon if args.epsilon is not None else 0.1)


def cmd_gen_data(args):
    env = _env(args)
    rng = make_rng(args.seed, 1000)
    if args.layout == "grid":
        ds = generate_grid_dataset(env, args.n, rng)
    else:
        ds = generate_uniform_dataset(env, args.n, rng)
    ds.to_csv(args.out)
    print(f"n={len(ds)}")
    print(f"path={args.out}")


def _policy(d_x, d_u, box):
    return PolicySpec.linear(d_x, d_u, *box)


def cmd_evaluate(args):
    ds = BatchDataset.from_csv(args.dataset)
    x0 = args.x0 if args.x0 is not None else np.full(ds.d_x, -1.0)
    policy = _policy(ds.d_x, ds.d_u, args.box)
    est = MFMCEstimator(gamma=args.gamma, x0=x0, T=args.T, p=args.p, policy=policy, margin=0.0).fit(ds)
    report = est.report(args.theta)
    report.to_csv(args.out)
    print(f"j_hat={report.j_hat!r}")
    print(f"v_hat={report.v_hat!r}")
    print(f"p={report.p}")
    print(f"T={report.T}")
    print(f"indices={args.out}")


def cmd_oracle_sweep(args):
    env = _env(args)
    rows = oracle_sweep(env, PolicySpec.linear(), args.grid, args.rollouts, args.horizon, make_rng(args.seed, 2))
    lines = ["theta,j_mean,j_var,se"] + [",".join(repr(float(v)) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    best = rows[int(np.argmin(rows[:, 1]))]
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
        print(f"argmin_theta={float(best[0])!r}")
        print(f"min_j={float(best[1])!r}")


def _experiment_config(args, **extra):
    data = {}
    if args.config is not None:
        data = json.loads(Path(args.config).read_text())
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    data.update(extra)
    return ExperimentConfig.from_json(json.dumps(data))


def cmd_optimize(args):
    cfg = _experiment_config(args, n_datasets=1)
    if args.dataset is not None:
        ds = BatchDataset.from_csv(args.dataset)
    else:
        ds = cfg.dataset(0)
    policy = _policy(ds.d_x, ds.d_u, cfg.box)
    ev = MFMCEstimator(gamma=cfg.gamma, x0=np.full(ds.d_x, cfg.x0), T=cfg.T, p=cfg.p, policy=policy).fit(ds)
    opt = cfg.optimizer_config(args.algorithm)
    if ds.d_x * ds.d_u != 1:
        opt = dataclasses.replace(opt, box=Box.uniform(cfg.box[0], cfg.box[1], ds.d_x * ds.d_u))
    trace = run_optimizer(opt, ev, cfg.iterations, seed=cfg.seed)
    trace.to_csv(args.out)
    print(f"theta={' '.join(repr(float(v)) for v in trace.final_theta)}")
    print(f"theta_bar={' '.join(repr(float(v)) for v in trace.final_theta_bar)}")
    print(f"failed_steps={len(trace.errors)}")
    print(f"trace={args.out}")


def cmd_experiment(args):
    cfg = _experiment_config(args)
    result = run_experiment(cfg, args.out_dir)
    for alg, agg in result.items():
        print(
            f"{alg}: runs={agg.n_runs} mean_theta={float(agg.mean[-1, 0])!r} "
            f"mean_theta_bar={float(agg.mean_bar[-1, 0])!r} sd_theta_bar={float(agg.sd_bar[-1, 0])!r}"
        )
    print(f"out_dir={args.out_dir}")


def cmd_bounds_check(args):
    report = bounds_check(
        theta=args.theta, n=args.n, T=args.T, eta=args.eta, n_datasets=args.n_datasets, seed=args.seed,
        oracle_rollouts=args.rollouts,
    )
    for line in report.lines():
        print(line)


def build_parser():
    parser = _Parser(prog="mfmcps", description="Batch off-policy policy search with MFMC evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a benchmark dataset as CSV")
    p.add_argument("--env", choices=["sinc", "lab"], default="sinc")
    p.add_argument("--layout", choices=["grid", "uniform"], default="grid")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("evaluate", help="MFMC estimate of one policy")
    p.add_argument("--dataset", required=True)
    p.add_argument("--theta", type=_vector, required=True)
    p.add_argument("--p", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--x0", type=_vector)
    p.add_argument("--box", type=_interval, default=(0.0, 1.0))
    p.add_argument("--out", default="mfmc_report.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle-sweep", help="Monte Carlo cost-to-go over a parameter grid")
    p.add_argument("--env", choices=["sinc", "lab"], default="sinc")
    p.add_argument("--grid", type=_range, default=_range("0:1:0.01"))
    p.add_argument("--rollouts", type=int, default=10_000)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_sweep)

    def experiment_flags(p):
        p.add_argument("--config", help="JSON file with ExperimentConfig fields")
        p.add_argument("--iterations", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--delta", type=float)
        p.add_argument("--a0", type=float)
        p.add_argument("--kappa", type=float)
        p.add_argument("--omega", type=float)
        p.add_argument("--box", type=_interval)
        p.add_argument("--n", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--x0", type=float)
        p.add_argument("--T", type=int)
        p.add_argument("--p", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--lambda-max", dest="lambda_max", type=float)
        p.add_argument("--b0", type=float)

    p = sub.add_parser("optimize", help="run one optimizer on one dataset")
    experiment_flags(p)
    p.add_argument("--dataset", help="CSV dataset; generated from the config when omitted")
    p.add_argument("--algorithm", choices=ALGORITHMS, default="mcpg-spsa")
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("experiment", help="repeated runs over independent datasets with aggregation")
    experiment_flags(p)
    p.add_argument("--algorithms", type=lambda s: tuple(s.split(",")))
    p.add_argument("--n-datasets", dest="n_datasets", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", dest="out_dir", default="experiment")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bounds-check", help="empirical coverage of the high-probability MFMC bound")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--n-datasets", dest="n_datasets", type=int, default=100)
    p.add_argument("--rollouts", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bounds_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except (InputError, ValueError, OSError, RuntimeError) as exc:
        print(f"mfmcps {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
