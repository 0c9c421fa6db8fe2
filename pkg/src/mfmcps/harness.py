"""Experiment orchestration: repeated optimizer runs over independent datasets, aggregation, bound checks."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bench import (
    LipschitzLabEnv,
    SincEnv,
    generate_grid_dataset,
    generate_uniform_dataset,
    lipschitz_constants,
    oracle_return,
)
from .core import Box, InputError, PolicySpec, make_rng
from .mfmc import MFMCEstimator, MfmcConfig, contraction_factor, ContractionError, dispersion, hp_bound, mfmc_estimate
from .optim import OptimizerConfig, RiskConfig, StepSchedule, Trace, run_optimizer

logger = logging.getLogger(__name__)

DEFAULT_ALGORITHMS = ("mcpg-spsa", "mcpg-sf", "mcpn-spsa", "mcpn-sf")

# dataset streams start here so they never collide with optimizer streams 0 and 1
_DATASET_STREAM = 1000


@dataclass
class ExperimentConfig:
    n_datasets: int = 50
    iterations: int = 500
    algorithms: tuple = DEFAULT_ALGORITHMS
    delta: float = 0.1
    a0: float = 1.0
    kappa: float = 1.0
    box: tuple = (0.0, 1.0)
    omega: float = 0.1
    seed: int = 0
    n: int = 200
    epsilon: float = 0.01
    gamma: float = 0.95
    x0: float = -1.0
    T: int | None = None
    p: int | None = None
    alpha: float = 1.0
    lambda_max: float = 10.0
    b0: float = 0.1
    b_kappa: float = 1.0
    workers: int = 1
    min_success: float = 0.8

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        self.box = tuple(self.box)
        if self.n_datasets < 1 or self.iterations < 1:
            raise InputError("n_datasets and iterations must be >= 1")

    def env(self):
        return SincEnv(epsilon=self.epsilon, gamma=self.gamma, x0=self.x0)

    def optimizer_config(self, algorithm):
        schedule = StepSchedule(self.a0, self.kappa)
        risk = None
        if algorithm.startswith("risk"):
            risk = RiskConfig(self.alpha, self.lambda_max, StepSchedule(self.b0, self.b_kappa))
        return OptimizerConfig(
            algorithm=algorithm,
            delta=self.delta,
            schedule=schedule,
            box=Box(np.array([self.box[0]]), np.array([self.box[1]])),
            omega=self.omega,
            risk=risk,
        )

    def dataset(self, i):
        return generate_grid_dataset(self.env(), self.n, make_rng(self.seed, _DATASET_STREAM + i))

    def run_seed(self, i):
        """Optimizer seed for dataset ``i``, shared across algorithms."""
        return int(np.random.SeedSequence((int(self.seed), int(i))).generate_state(1)[0])

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class AggregateTrace:
    """Across-dataset statistics of ``theta(t)`` and its Polyak average for one algorithm."""

    algorithm: str
    t: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    ci: np.ndarray
    mean_bar: np.ndarray
    sd_bar: np.ndarray
    ci_bar: np.ndarray
    n_runs: int
    final_theta: np.ndarray = field(repr=False)
    final_theta_bar: np.ndarray = field(repr=False)

    @property
    def ci_defined(self):
        return self.n_runs > 1

    def to_csv(self, path):
        N = self.mean.shape[1]
        cols = []
        for prefix in ("mean_theta", "sd_theta", "ci_theta", "mean_theta_bar", "sd_theta_bar", "ci_theta_bar"):
            cols += [f"{prefix}_{i}" for i in range(N)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + cols + ["n_runs", "ci_defined"])
            for k in range(self.t.shape[0]):
                vals = np.concatenate(
                    [self.mean[k], self.sd[k], self.ci[k], self.mean_bar[k], self.sd_bar[k], self.ci_bar[k]]
                )
                w.writerow([int(self.t[k])] + [repr(float(v)) for v in vals] + [self.n_runs, int(self.ci_defined)])


def aggregate(algorithm, traces) -> AggregateTrace:
    """Mean, sample sd and 95% normal half-width ``1.96 sd / sqrt(runs)`` per iteration."""
    if not traces:
        raise InputError(f"no successful runs to aggregate for {algorithm}")
    th = np.stack([tr.theta for tr in traces])
    tb = np.stack([tr.theta_bar for tr in traces])
    R = th.shape[0]

    def stats(a):
        mean = a.mean(axis=0)
        if R > 1:
            sd = a.std(axis=0, ddof=1)
            ci = 1.96 * sd / math.sqrt(R)
        else:
            sd = np.zeros_like(mean)
            ci = np.zeros_like(mean)
        return mean, sd, ci

    m, s, c = stats(th)
    mb, sb, cb = stats(tb)
    return AggregateTrace(algorithm, traces[0].t.copy(), m, s, c, mb, sb, cb, R, th[:, -1], tb[:, -1])


def _run_one(cfg: ExperimentConfig, algorithm, i):
    ds = cfg.dataset(i)
    ev = MFMCEstimator(gamma=cfg.gamma, x0=cfg.x0, T=cfg.T, p=cfg.p).fit(ds)
    return run_optimizer(cfg.optimizer_config(algorithm), ev, cfg.iterations, seed=cfg.run_seed(i))


def _run_task(args):
    cfg, algorithm, i = args
    try:
        return algorithm, i, _run_one(cfg, algorithm, i), None
    except Exception as exc:  # excluded from aggregation by the caller
        return algorithm, i, None, repr(exc)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict[str, AggregateTrace]:
    """Run every algorithm on every dataset and aggregate per algorithm.

    With ``out_dir`` the layout is ``runs/<alg>/dataset_<i>.csv``,
    ``aggregate/<alg>.csv`` and a ``config.json`` snapshot.
    """
    for alg in cfg.algorithms:
        cfg.optimizer_config(alg)  # validate before spending compute
    tasks = [(cfg, alg, i) for alg in cfg.algorithms for i in range(cfg.n_datasets)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=1))
    else:
        results = [_run_task(t) for t in tasks]

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json() + "\n")
    traces = {alg: [] for alg in cfg.algorithms}
    failures = {alg: 0 for alg in cfg.algorithms}
    for alg, i, trace, err in results:
        if trace is None:
            failures[alg] += 1
            logger.warning("run %s on dataset %d failed: %s", alg, i, err)
            continue
        traces[alg].append(trace)
        if out is not None:
            d = out / "runs" / alg
            d.mkdir(parents=True, exist_ok=True)
            trace.to_csv(d / f"dataset_{i:03d}.csv")
    total_fail = sum(failures.values())
    if total_fail > (1.0 - cfg.min_success) * len(tasks):
        raise RuntimeError(f"{total_fail} of {len(tasks)} runs failed")
    result = {alg: aggregate(alg, traces[alg]) for alg in cfg.algorithms}
    if out is not None:
        (out / "aggregate").mkdir(parents=True, exist_ok=True)
        for alg, agg in result.items():
            agg.to_csv(out / "aggregate" / f"{alg}.csv")
    return result


@dataclass
class BoundsReport:
    errors: np.ndarray
    bounds: np.ndarray
    j_oracle: float
    p: int
    T: int
    eta: float

    @property
    def covered(self):
        return self.errors <= self.bounds

    @property
    def coverage(self):
        return float(np.mean(self.covered))

    def lines(self):
        return [
            f"j_oracle={self.j_oracle!r}",
            f"p={self.p}",
            f"T={self.T}",
            f"eta={self.eta!r}",
            f"datasets={self.errors.shape[0]}",
            f"mean_abs_error={float(self.errors.mean())!r}",
            f"mean_bound={float(self.bounds.mean())!r}",
            f"coverage={self.coverage!r}",
        ]


def bounds_check(
    env: LipschitzLabEnv | None = None,
    theta=0.5,
    n=200,
    T=10,
    p=None,
    eta=0.05,
    n_datasets=100,
    seed=0,
    oracle_rollouts=200_000,
    probe_grid=101,
) -> BoundsReport:
    """Compare ``|J_hat - J|`` with the high-probability bound over independent datasets."""
    env = LipschitzLabEnv() if env is None else env
    if not isinstance(env, LipschitzLabEnv):
        raise InputError("bounds_check runs on the Lipschitz lab environment")
    policy = PolicySpec.linear()
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    lc = lipschitz_constants(env, policy, theta)
    q = contraction_factor(lc, env.gamma)
    if q >= 1:
        raise ContractionError(f"gamma*L_f*(1+L_theta) = {q:.6g} must be < 1")
    horizon = max(200, int(math.ceil(math.log(1e-12) / math.log(env.gamma))))
    j_oracle, _, _ = oracle_return(env, policy, theta, oracle_rollouts, horizon, make_rng(seed, 1))
    cfg = MfmcConfig.default(n, env.gamma, env.x0, T=T, p=p)
    axis = np.linspace(-1.0, 1.0, probe_grid)
    probes = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    errors, bounds = [], []
    for i in range(n_datasets):
        ds = generate_uniform_dataset(env, n, make_rng(seed, _DATASET_STREAM + i))
        report = mfmc_estimate(ds, policy, theta, cfg)
        alpha = dispersion(ds, cfg.p * cfg.T, np.vstack([probes, ds.to_array()[:, :2]]))
        errors.append(abs(report.j_hat - j_oracle))
        bounds.append(hp_bound(lc, env.gamma, cfg.T, alpha, cfg.p, eta))
    return BoundsReport(np.array(errors), np.array(bounds), j_oracle, cfg.p, cfg.T, eta)


def default_workers():
    return max(1, min(8, os.cpu_count() or 1))
