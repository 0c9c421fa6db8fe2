"""Model-free Monte Carlo policy evaluation from a batch of transitions.

Artificial trajectories are rebuilt by greedily chaining the stored transition
closest to the current on-policy state-action pair, each transition being used
at most once. Diagnostics cover the sample variance of the rebuilt returns,
a VaR-like score, the k-dispersion of the dataset and the bias bounds that
depend on it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import BatchDataset, InputError, PolicySpec


class CapacityError(InputError):
    """The dataset holds fewer than ``p * T`` transitions."""


class UndefinedVarianceError(InputError):
    """Sample variance requested from fewer than two trajectories."""


class ContractionError(ValueError):
    """Bias bounds requested while ``gamma * L_f * (1 + L_theta) >= 1``."""


@dataclass(frozen=True)
class MfmcConfig:
    p: int
    T: int
    gamma: float
    x0: np.ndarray

    def __post_init__(self):
        if int(self.p) < 1 or int(self.T) < 1:
            raise InputError("p and T must be positive integers")
        if not 0.0 < self.gamma < 1.0:
            raise InputError("gamma must lie in (0, 1)")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))

    @classmethod
    def default(cls, n, gamma, x0, T=None, p=None):
        T = default_horizon(gamma) if T is None else T
        p = default_n_trajectories(n, T) if p is None else p
        return cls(p, T, gamma, x0)


def default_horizon(gamma):
    """Truncation ``ceil(1 / (1 - gamma))``."""
    # round first so 1/(1-0.95) = 20.000000000000018 maps to 20
    return int(math.ceil(round(1.0 / (1.0 - gamma), 9)))


def default_n_trajectories(n, T):
    """``ceil(ln(n / T))`` clamped to ``[1, floor(n / T)]``."""
    cap = n // T
    if cap < 1:
        raise CapacityError(f"n={n} transitions cannot support a single trajectory of length T={T}")
    p = math.ceil(math.log(n / T)) if n > T else 1
    return int(min(max(p, 1), cap))


@dataclass(frozen=True)
class MfmcReport:
    j_hat: float
    trajectory_returns: np.ndarray
    v_hat: float
    selected_indices: np.ndarray
    distances: np.ndarray
    costs: np.ndarray
    gamma: float

    @property
    def p(self):
        return self.trajectory_returns.shape[0]

    @property
    def T(self):
        return self.selected_indices.shape[1]

    def to_csv(self, path):
        """Write ``trajectory,step,index,cost,distance`` rows plus a ``#`` summary line."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trajectory", "step", "index", "cost", "distance"])
            for i in range(self.p):
                for t in range(self.T):
                    w.writerow(
                        [i + 1, t, int(self.selected_indices[i, t]), repr(float(self.costs[i, t])),
                         repr(float(self.distances[i, t]))]
                    )
            fh.write(f"# j_hat={self.j_hat!r},v_hat={self.v_hat!r},p={self.p},T={self.T}\n")


def _distance_kernel(dataset: BatchDataset):
    """Return ``d(x, u)``: distances from every stored pair to ``(x, u)`` as a fresh array."""
    X, U = dataset.pairs
    metric = dataset.metric
    if metric.ord == 1 and metric.state_weights is None and metric.action_weights is None:
        if X.shape[1] == 1 and U.shape[1] == 1:
            x_col, u_col = X[:, 0].copy(), U[:, 0].copy()

            def d(x, u):
                out = np.abs(x_col - x[0])
                out += np.abs(u_col - u[0])
                return out

            return d
        Z = np.hstack([X, U])
        return lambda x, u: np.abs(Z - np.concatenate([x, u])).sum(axis=1)
    return lambda x, u: metric(X, U, x, u)


def mfmc_estimate(dataset: BatchDataset, policy: PolicySpec, theta, cfg: MfmcConfig) -> MfmcReport:
    """Rebuild ``cfg.p`` artificial trajectories of length ``cfg.T`` and average their returns.

    At each step the transition nearest to ``(x_t, policy(x_t))`` among the not yet
    used ones is selected (lowest dataset index among ties), its cost is recorded,
    the walk moves to its successor state and the transition is removed.
    """
    n = len(dataset)
    if n == 0:
        raise InputError("empty dataset")
    p, T = cfg.p, cfg.T
    if p * T > n:
        raise CapacityError(f"p*T = {p * T} exceeds the {n} available transitions")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (policy.param_dim,):
        raise InputError(f"theta must have dimension {policy.param_dim}")
    if not policy.box.contains(theta):
        raise InputError(f"theta={theta} lies outside the parameter box")
    x0 = cfg.x0
    if x0.shape != (dataset.d_x,):
        raise InputError(f"x0 must have dimension {dataset.d_x}")

    dist = _distance_kernel(dataset)
    act = policy.bind(theta)
    Y = dataset.Y
    C = dataset.C
    # 0 for available transitions, +inf once consumed
    penalty = np.zeros(n)
    idx = np.empty((p, T), dtype=np.int64)
    psi = np.empty((p, T))
    for i in range(p):
        x = x0
        for t in range(T):
            d = dist(x, act(x))
            d += penalty
            # argmin returns the first minimiser, i.e. the lowest index among ties
            l = int(d.argmin())
            idx[i, t] = l
            psi[i, t] = d[l]
            penalty[l] = np.inf
            x = Y[l]
    costs = C[idx]
    discounts = [cfg.gamma**t for t in range(T)]
    # accumulate in time order so the sum does not depend on BLAS blocking
    returns = np.zeros(p)
    for t in range(T):
        returns += discounts[t] * costs[:, t]
    j_hat = float(returns.mean())
    v_hat = _sample_variance(returns) if p >= 2 else float("nan")
    return MfmcReport(j_hat, returns, v_hat, idx + 1, psi, costs, cfg.gamma)


def _sample_variance(returns):
    # a constant sample must give exactly zero, which the mean's rounding would spoil
    if np.ptp(returns) == 0.0:
        return 0.0
    return float(np.var(returns, ddof=1))


def mfmc_variance(report: MfmcReport) -> float:
    """Unbiased sample variance of the artificial trajectory returns."""
    if report.p < 2:
        raise UndefinedVarianceError("variance needs at least two artificial trajectories")
    return _sample_variance(report.trajectory_returns)


def mfmc_var_criterion(report: MfmcReport, b: float, c: float) -> float:
    """``+inf`` if the share of trajectory returns above ``b`` exceeds ``c``, else ``j_hat``."""
    if not 0.0 <= c < 1.0:
        raise InputError("c must lie in [0, 1)")
    if report.p < 1:
        raise InputError("report holds no trajectories")
    share = np.count_nonzero(report.trajectory_returns > b) / report.p
    return math.inf if share > c else report.j_hat


def default_probes(dataset: BatchDataset, grid_size=51):
    """Dataset pairs, plus a uniform grid over their bounding box when ``d_x + d_u <= 2``."""
    X, U = dataset.pairs
    Z = np.hstack([X, U])
    if Z.shape[1] <= 2:
        axes = [np.linspace(lo, hi, grid_size) for lo, hi in zip(Z.min(0), Z.max(0))]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, Z.shape[1])
        Z = np.vstack([Z, grid])
    return Z


def dispersion(dataset: BatchDataset, k: int, probes=None) -> float:
    """Largest distance from a probe pair to its ``k``-th nearest stored pair.

    The true k-dispersion is a supremum over the whole state-action space, so
    this is a lower estimate that tightens as the probe set gets denser.
    ``probes`` is an ``(m, d_x + d_u)`` array; defaults to :func:`default_probes`.
    """
    n = len(dataset)
    if not 1 <= k <= n:
        raise InputError(f"k must lie in [1, {n}]")
    Z = default_probes(dataset) if probes is None else np.atleast_2d(np.asarray(probes, dtype=float))
    if Z.shape[0] == 0:
        raise InputError("probe set is empty")
    if Z.shape[1] != dataset.d_x + dataset.d_u:
        raise InputError("probes must have d_x + d_u columns")
    X, U = dataset.pairs
    d_x = dataset.d_x
    worst = 0.0
    for chunk in np.array_split(Z, max(1, Z.shape[0] // 2048)):
        D = dataset.metric(X[None], U[None], chunk[:, None, :d_x], chunk[:, None, d_x:])
        kth = np.partition(D, k - 1, axis=1)[:, k - 1]
        worst = max(worst, float(kth.max()))
    return worst


@dataclass(frozen=True)
class LipschitzConstants:
    L_f: float
    L_c: float
    L_theta: float

    def __post_init__(self):
        for name in ("L_f", "L_c", "L_theta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InputError(f"{name} must be finite and nonnegative")


def contraction_factor(lc: LipschitzConstants, gamma):
    return gamma * lc.L_f * (1.0 + lc.L_theta)


def bias_constant(lc: LipschitzConstants, gamma, T):
    """``L_c / (1 - gamma L_f (1 + L_theta)) * sum_{t<T} gamma^t``."""
    q = contraction_factor(lc, gamma)
    if q >= 1.0:
        raise ContractionError(f"gamma*L_f*(1+L_theta) = {q:.6g} must be < 1")
    return lc.L_c / (1.0 - q) * (1.0 - gamma**T) / (1.0 - gamma)


def truncation_term(gamma, T):
    return gamma**T / (1.0 - gamma)


def bias_bound(lc: LipschitzConstants, gamma, T, alpha_pT):
    """Bound on ``|J - E[J_hat]|``: ``C * alpha_pT + gamma^T / (1 - gamma)``."""
    return bias_constant(lc, gamma, T) * alpha_pT + truncation_term(gamma, T)


def hp_bound(lc: LipschitzConstants, gamma, T, alpha_pT, p, eta):
    """Bound on ``|J - J_hat|`` holding with probability at least ``1 - eta``."""
    if not 0.0 < eta < 1.0:
        raise InputError("eta must lie in (0, 1)")
    if int(p) < 1:
        raise InputError("p must be positive")
    return bias_bound(lc, gamma, T, alpha_pT) * math.sqrt(2.0 * math.log(2.0 / eta) / p)


class MFMCEstimator(BaseEstimator):
    """Policy evaluator backed by a fitted batch of transitions.

    ``fit`` stores the dataset; afterwards the instance is a deterministic
    evaluator: ``est(theta)`` returns the cost-to-go estimate and
    ``est.evaluate(theta)`` returns ``(j_hat, v_hat)``.

    Parameters
    ----------
    gamma : float
        Discount factor.
    x0 : float or array-like
        Initial state of the rebuilt trajectories.
    T, p : int, optional
        Truncation horizon and number of trajectories; default to
        ``ceil(1/(1-gamma))`` and ``ceil(ln(n/T))``.
    policy : PolicySpec, optional
        Policy family; defaults to the 1-D linear family on ``[0, 1]``.
    margin : float
        Parameters within ``margin`` of the policy box are admissible. Perturbed
        parameters are evaluated without projection, hence the infinite default.
    """

    def __init__(self, gamma=0.95, x0=-1.0, T=None, p=None, policy=None, margin=np.inf):
        self.gamma = gamma
        self.x0 = x0
        self.T = T
        self.p = p
        self.policy = policy
        self.margin = margin

    def fit(self, X, y=None):
        if not isinstance(X, BatchDataset):
            d_x = np.atleast_1d(self.x0).shape[0]
            X = BatchDataset.from_array(X, d_x)
        self.dataset_ = X
        self.config_ = MfmcConfig.default(len(X), self.gamma, self.x0, T=self.T, p=self.p)
        policy = self.policy if self.policy is not None else PolicySpec.linear(X.d_x, X.d_u)
        self.policy_ = policy
        self._eval_policy = policy.with_box(policy.box.widen(self.margin))
        return self

    def report(self, theta) -> MfmcReport:
        check_is_fitted(self, "dataset_")
        return mfmc_estimate(self.dataset_, self._eval_policy, theta, self.config_)

    def evaluate(self, theta):
        r = self.report(theta)
        return r.j_hat, r.v_hat

    def __call__(self, theta):
        return self.report(theta).j_hat

    def score(self, theta):
        """Negated cost-to-go estimate (higher is better)."""
        return -self(theta)
