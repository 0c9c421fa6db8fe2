"""Simultaneous-perturbation gradient and Hessian estimates.

Every estimator makes exactly two evaluator calls. SPSA variants use
Rademacher directions, smoothed-functional (SF) variants Gaussian ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .core import InputError


class PerturbationKind(enum.Enum):
    RADEMACHER = "rademacher"
    GAUSSIAN = "gaussian"


class Evaluator(Protocol):
    """Deterministic map ``theta -> J_hat``; ``evaluate`` also returns a variance estimate."""

    def __call__(self, theta) -> float: ...

    def evaluate(self, theta) -> tuple[float, float]: ...


class FunctionEvaluator:
    """Wrap plain functions as an :class:`Evaluator`.

    ``variance`` defaults to a function returning ``nan``.
    """

    def __init__(self, fun: Callable, variance: Callable | None = None):
        self.fun = fun
        self.variance = variance

    def __call__(self, theta):
        return float(self.fun(np.asarray(theta, dtype=float)))

    def evaluate(self, theta):
        theta = np.asarray(theta, dtype=float)
        v = float("nan") if self.variance is None else float(self.variance(theta))
        return float(self.fun(theta)), v


class CountingEvaluator:
    """Forward to ``inner`` while recording every parameter it is queried at."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    def __call__(self, theta):
        self.calls.append(np.array(theta, dtype=float))
        return self.inner(theta)

    def evaluate(self, theta):
        self.calls.append(np.array(theta, dtype=float))
        return self.inner.evaluate(theta)

    @property
    def n_calls(self):
        return len(self.calls)


@dataclass(frozen=True)
class GradEstimate:
    g: np.ndarray
    Delta: np.ndarray
    j_plus: float
    j_minus: float


@dataclass(frozen=True)
class HessEstimate:
    H: np.ndarray
    Delta: np.ndarray
    Delta_hat: np.ndarray | None
    j_first: float
    j_second: float


def sample_perturbation(kind: PerturbationKind, N: int, rng: np.random.Generator) -> np.ndarray:
    if N < 1:
        raise InputError("perturbation dimension must be positive")
    if kind is PerturbationKind.RADEMACHER:
        return rng.choice(np.array([-1.0, 1.0]), size=N)
    return rng.standard_normal(N)


def _check(theta, delta, *perturbations):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not delta > 0:
        raise InputError("delta must be positive")
    out = []
    for D in perturbations:
        D = np.atleast_1d(np.asarray(D, dtype=float))
        if D.shape != theta.shape:
            raise InputError("perturbation and theta dimensions differ")
        out.append(D)
    return theta, out


def _value(ev, theta):
    return ev(theta)


def spsa_gradient(ev, theta, delta, Delta, value=_value) -> GradEstimate:
    """Two-sided SPSA quotient ``(J(theta + dD) - J(theta - dD)) / (2 d D_i)``.

    ``value(ev, theta)`` extracts the scalar read from the evaluator; the
    risk-sensitive loops pass a Lagrangian reader here.
    """
    theta, (Delta,) = _check(theta, delta, Delta)
    if np.any(Delta == 0):
        raise InputError("SPSA perturbation coordinates must be nonzero")
    j_plus = value(ev, theta + delta * Delta)
    j_minus = value(ev, theta - delta * Delta)
    g = (j_plus - j_minus) / (2.0 * delta * Delta)
    return GradEstimate(g, Delta, j_plus, j_minus)


def sf_gradient(ev, theta, delta, Delta, value=_value) -> GradEstimate:
    """Smoothed-functional gradient ``D_i / (2 d) * (J(theta + dD) - J(theta - dD))``."""
    theta, (Delta,) = _check(theta, delta, Delta)
    j_plus = value(ev, theta + delta * Delta)
    j_minus = value(ev, theta - delta * Delta)
    g = Delta / (2.0 * delta) * (j_plus - j_minus)
    return GradEstimate(g, Delta, j_plus, j_minus)


def symmetrize_upper(A):
    """Copy the upper triangle onto the lower one."""
    return np.triu(A) + np.triu(A, 1).T


def spsa_hessian_sample(ev, theta, delta, Delta, Delta_hat, value=_value) -> HessEstimate:
    """One-sided SPSA Hessian sample.

    Entry ``(i, j)``, ``i <= j``, is
    ``(J(theta + dD + dD^) - J(theta + dD)) / (d^2 D_j D^_i)``; the lower triangle
    mirrors the upper one.
    """
    theta, (Delta, Delta_hat) = _check(theta, delta, Delta, Delta_hat)
    if np.any(Delta == 0) or np.any(Delta_hat == 0):
        raise InputError("SPSA perturbation coordinates must be nonzero")
    j_first = value(ev, theta + delta * Delta + delta * Delta_hat)
    j_second = value(ev, theta + delta * Delta)
    raw = (j_first - j_second) / (delta**2 * np.outer(Delta_hat, Delta))
    return HessEstimate(symmetrize_upper(raw), Delta, Delta_hat, j_first, j_second)


def h_bar(Delta) -> np.ndarray:
    """Moment matrix with ``D_i^2 - 1`` on the diagonal and ``D_i D_j`` elsewhere."""
    Delta = np.atleast_1d(np.asarray(Delta, dtype=float))
    return np.outer(Delta, Delta) - np.eye(Delta.shape[0])


def sf_hessian_sample(ev, theta, delta, Delta, value=_value, paper_exact_scaling=False) -> HessEstimate:
    """Smoothed-functional Hessian sample ``h_bar(D) (J(theta + dD) + J(theta - dD)) / (2 d^2)``.

    With ``paper_exact_scaling`` the divisor is ``d^2``, which targets twice the
    Hessian.
    """
    theta, (Delta,) = _check(theta, delta, Delta)
    j_plus = value(ev, theta + delta * Delta)
    j_minus = value(ev, theta - delta * Delta)
    scale = 1.0 / delta**2 if paper_exact_scaling else 1.0 / (2.0 * delta**2)
    return HessEstimate(scale * h_bar(Delta) * (j_plus + j_minus), Delta, None, j_plus, j_minus)
