"""Benchmark environments, batch dataset generators and a Monte Carlo ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BatchDataset, InputError, PolicySpec
from .mfmc import LipschitzConstants


class UnsupportedEnvironmentError(TypeError):
    pass


@dataclass(frozen=True)
class SincEnv:
    """1-D system ``x' = sinc(10 (x + u + w))`` with cost ``-exp(-(x^2 + u^2)/2 + w) / (2 pi)``.

    ``w`` is uniform on ``[-epsilon/2, epsilon/2]``.
    """

    epsilon: float = 0.01
    gamma: float = 0.95
    x0: float = -1.0

    d_x = 1
    d_u = 1

    def sample_noise(self, rng, shape):
        return rng.uniform(-self.epsilon / 2, self.epsilon / 2, size=shape)

    def transition(self, x, u, w):
        """Vectorised ``(cost, next_state)`` for a given disturbance."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        # np.sinc is the normalised sinc with sinc(0) = 1
        y = np.sinc(10.0 * (x + u + w))
        c = -np.exp(-(x**2 + u**2) / 2.0 + w) / (2.0 * np.pi)
        return c, y

    def cost_bounds(self):
        return -math.exp(self.epsilon / 2) / (2 * math.pi), 0.0


@dataclass(frozen=True)
class LipschitzLabEnv:
    """1-D affine system with globally Lipschitz dynamics and clipped affine cost.

    ``x' = a_f x + b_f u + w`` and ``c = clip(c0 + c_x x + c_u u + w, 0, 1)`` with
    ``w`` uniform on ``[-epsilon/2, epsilon/2]``. Under the additive L1 metric the
    constants are ``L_f = max(|a_f|, |b_f|)`` and ``L_c = max(|c_x|, |c_u|)``.
    """

    a_f: float = 0.4
    b_f: float = 0.3
    c0: float = 0.5
    c_x: float = 0.3
    c_u: float = 0.2
    epsilon: float = 0.1
    gamma: float = 0.5
    x0: float = 0.5

    d_x = 1
    d_u = 1

    def sample_noise(self, rng, shape):
        return rng.uniform(-self.epsilon / 2, self.epsilon / 2, size=shape)

    def transition(self, x, u, w):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        y = self.a_f * x + self.b_f * u + w
        c = np.clip(self.c0 + self.c_x * x + self.c_u * u + w, 0.0, 1.0)
        return c, y

    def cost_bounds(self):
        return 0.0, 1.0

    @property
    def L_f(self):
        return max(abs(self.a_f), abs(self.b_f))

    @property
    def L_c(self):
        return max(abs(self.c_x), abs(self.c_u))


@dataclass(frozen=True)
class ZeroCostEnv:
    """Deterministic drift toward the origin at zero cost; a degenerate check case."""

    gamma: float = 0.9
    x0: float = 1.0
    epsilon: float = 0.0

    d_x = 1
    d_u = 1

    def sample_noise(self, rng, shape):
        return np.zeros(shape)

    def transition(self, x, u, w):
        x = np.asarray(x, dtype=float)
        return np.zeros(np.broadcast(x, u).shape), 0.5 * x + w

    def cost_bounds(self):
        return 0.0, 0.0


def env_step(env, x, u, rng):
    """Sample one transition; returns ``(cost, next_state)``."""
    w = env.sample_noise(rng, np.shape(x))
    return env.transition(x, u, w)


def grid_pairs(n):
    """State-action grid ``(-1 + 2i/s, -1 + 2j/s)``, ``s = floor(sqrt(n))``, state index outermost."""
    if n < 4:
        raise InputError("grid datasets need n >= 4")
    sigma = math.isqrt(int(n))
    axis = -1.0 + 2.0 * np.arange(sigma) / sigma
    X, U = np.meshgrid(axis, axis, indexing="ij")
    return X.reshape(-1, 1), U.reshape(-1, 1)


def _sample_dataset(env, X, U, rng, metric=None):
    w = env.sample_noise(rng, X.shape)
    c, y = env.transition(X, U, w)
    return BatchDataset(X, U, c.reshape(-1), y, metric=metric)


def generate_grid_dataset(env, n, rng, metric=None) -> BatchDataset:
    """Dataset over the deterministic grid of ``floor(sqrt(n))**2`` pairs.

    Only the disturbances, and hence costs and successors, depend on ``rng``.
    """
    X, U = grid_pairs(n)
    return _sample_dataset(env, X, U, rng, metric)


def generate_uniform_dataset(env, n, rng, low=-1.0, high=1.0, metric=None) -> BatchDataset:
    """Dataset with ``n`` state-action pairs drawn uniformly from ``[low, high]^2``."""
    X = rng.uniform(low, high, size=(n, env.d_x))
    U = rng.uniform(low, high, size=(n, env.d_u))
    return _sample_dataset(env, X, U, rng, metric)


def _rollout_returns(env, policy, thetas, noise):
    """Discounted returns for each theta row against a shared noise matrix ``(R, H)``."""
    R, H = noise.shape
    m = thetas.shape[0]
    x = np.full((m, R), float(env.x0))
    total = np.zeros((m, R))
    disc = 1.0
    linear_1d = policy.kind == "linear" and policy.param_dim == 1
    for t in range(H):
        if linear_1d:
            u = thetas[:, :1] * x
        else:
            u = np.stack([policy.batch_action(th, xi[:, None])[:, 0] for th, xi in zip(thetas, x)])
        c, x = env.transition(x, u, noise[:, t])
        total += disc * c
        disc *= env.gamma
    return total


def _summarise(returns):
    R = returns.shape[-1]
    mean = returns.mean(axis=-1)
    var = returns.var(axis=-1, ddof=1) if R > 1 else np.zeros_like(mean)
    return mean, var, np.sqrt(var / R)


def oracle_return(env, policy: PolicySpec, theta, rollouts=10_000, horizon=200, rng=None):
    """Monte Carlo ``(mean, variance, standard error)`` of the truncated discounted return."""
    if rollouts < 1 or horizon < 1:
        raise InputError("rollouts and horizon must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    noise = env.sample_noise(rng, (rollouts, horizon))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    mean, var, se = _summarise(_rollout_returns(env, policy, theta[None], noise))
    return float(mean[0]), float(var[0]), float(se[0])


def oracle_sweep(env, policy: PolicySpec, thetas, rollouts=10_000, horizon=200, rng=None, chunk=8):
    """Oracle over a list of parameters with common random numbers.

    Returns an array with rows ``(theta..., j_mean, j_var, se)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim == 1:
        thetas = thetas[:, None]
    noise = env.sample_noise(rng, (rollouts, horizon))
    rows = []
    for start in range(0, thetas.shape[0], chunk):
        block = thetas[start : start + chunk]
        mean, var, se = _summarise(_rollout_returns(env, policy, block, noise))
        rows.append(np.column_stack([block, mean, var, se]))
    return np.vstack(rows)


def lipschitz_constants(env, policy: PolicySpec, theta) -> LipschitzConstants:
    """Exact constants for the Lipschitz lab under the linear 1-D policy (``L_theta = |theta|``)."""
    if not isinstance(env, LipschitzLabEnv):
        raise UnsupportedEnvironmentError(f"{type(env).__name__} has no exact Lipschitz constants")
    if policy.kind != "linear":
        raise UnsupportedEnvironmentError("exact policy constant is only available for linear policies")
    W = np.asarray(theta, dtype=float).reshape(policy.d_u, policy.d_x)
    # operator norm induced by L1 on both spaces: largest column sum
    L_theta = float(np.abs(W).sum(axis=0).max())
    return LipschitzConstants(env.L_f, env.L_c, L_theta)
