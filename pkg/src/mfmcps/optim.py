"""Projected stochastic-approximation policy search loops.

First-order (gradient) and second-order (Newton) steps driven by
simultaneous-perturbation estimates, a Sherman-Morrison variant that keeps the
inverse Hessian directly, and risk-sensitive variants that descend a
Lagrangian ``J + lambda V`` on a fast timescale while the multiplier ascends on
a slower one.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Box, InputError, make_rng
from .mfmc import UndefinedVarianceError
from .perturb import (
    PerturbationKind,
    sample_perturbation,
    sf_gradient,
    sf_hessian_sample,
    spsa_gradient,
    spsa_hessian_sample,
    symmetrize_upper,
)

ALGORITHMS = (
    "mcpg-spsa",
    "mcpg-sf",
    "mcpn-spsa",
    "mcpn-sf",
    "mcpn-woodbury",
    "risk-mcpg",
    "risk-mcpn",
)


class DegenerateUpdateError(ArithmeticError):
    """Sherman-Morrison denominator too close to zero; the step is skipped."""


@dataclass(frozen=True)
class StepSchedule:
    """Step size ``a0 / t**kappa`` with ``kappa`` in ``(0.5, 1]`` and 1-based ``t``.

    For such exponents the steps sum to infinity while their squares are summable.
    """

    a0: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not self.a0 > 0:
            raise InputError("a0 must be positive")
        if not 0.5 < self.kappa <= 1.0:
            raise InputError("kappa must lie in (0.5, 1]")

    @property
    def kind(self):
        return "harmonic" if self.kappa == 1.0 else "power-law"

    def __call__(self, t):
        if t < 1:
            raise InputError("iteration counter is 1-based")
        return self.a0 / t**self.kappa


@dataclass(frozen=True)
class RiskConfig:
    """Variance cap ``alpha``, multiplier cap ``lambda_max`` and the slow schedule ``b``.

    ``b`` must be slower than the parameter schedule: a larger exponent, or the
    same exponent with a smaller scale.
    """

    alpha: float
    lambda_max: float = 10.0
    b_schedule: StepSchedule = StepSchedule(0.1, 1.0)
    lambda0: float = 0.0

    def __post_init__(self):
        # alpha = 0 is allowed so stress runs can keep the constraint permanently active
        if not 0 <= self.alpha < math.inf:
            raise InputError("alpha must be finite and nonnegative")
        if not 0 < self.lambda_max < math.inf:
            raise InputError("lambda_max must be positive and finite")
        if not 0 <= self.lambda0 <= self.lambda_max:
            raise InputError("lambda0 must lie in [0, lambda_max]")

    def check_timescales(self, a: StepSchedule):
        b = self.b_schedule
        if b.kappa < a.kappa or (b.kappa == a.kappa and b.a0 >= a.a0):
            raise InputError("multiplier schedule b(t) must be slower than a(t)")

    def project(self, lam):
        return min(max(lam, 0.0), self.lambda_max)


@dataclass(frozen=True)
class OptimizerState:
    t: int
    theta: np.ndarray
    theta_bar: np.ndarray
    rng: np.random.Generator = field(compare=False, repr=False)
    H: np.ndarray | None = None
    M: np.ndarray | None = None
    lam: float = 0.0
    j_plus: float = math.nan
    j_minus: float = math.nan

    @classmethod
    def initial(cls, theta0, rng, newton=False, omega=0.1, M0=None, lam=0.0):
        theta0 = np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
        N = theta0.shape[0]
        H = omega * np.eye(N) if newton else None
        if newton:
            M = np.linalg.inv(project_psd(H, omega)) if M0 is None else np.asarray(M0, dtype=float)
        else:
            M = None
        return cls(1, theta0, theta0.copy(), rng, H, M, float(lam))

    def advance(self, theta_next, **changes):
        """Move to ``t + 1`` with the Polyak average extended by ``theta_next``."""
        t1 = self.t + 1
        theta_bar = self.theta_bar + (theta_next - self.theta_bar) / t1
        return dataclasses.replace(self, t=t1, theta=theta_next, theta_bar=theta_bar, **changes)


def project_box(theta, box: Box):
    return box.project(theta)


def project_psd(H, omega):
    """Symmetric matrix with eigenvalues floored at ``omega``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if not np.all(np.isfinite(H)):
        raise InputError("matrix has non-finite entries")
    if not omega > 0:
        raise InputError("omega must be positive")
    if H.shape == (1, 1):
        return np.array([[max(H[0, 0], omega)]])
    H = 0.5 * (H + H.T)
    w, Q = np.linalg.eigh(H)
    return (Q * np.maximum(w, omega)) @ Q.T


def project_inverse(M, omega):
    """Image of :func:`project_psd` on inverses: eigenvalues of ``M`` confined to ``(0, 1/omega]``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise InputError("matrix has non-finite entries")
    cap = 1.0 / omega
    M = 0.5 * (M + M.T)
    w, Q = np.linalg.eigh(M)
    w = np.where((w <= 0) | (w > cap), cap, w)
    return (Q * w) @ Q.T


def _j(ev, theta):
    return ev(theta)


def _lagrangian(lam):
    def value(ev, theta):
        j, v = ev.evaluate(theta)
        if not math.isfinite(v):
            raise UndefinedVarianceError("risk-sensitive steps need a finite variance estimate (p >= 2)")
        return j + lam * v

    return value


def _gradient(kind, ev, theta, delta, Delta, value=_j):
    if kind is PerturbationKind.RADEMACHER:
        return spsa_gradient(ev, theta, delta, Delta, value=value)
    return sf_gradient(ev, theta, delta, Delta, value=value)


def mcpg_step(state: OptimizerState, ev, kind: PerturbationKind, delta, schedule: StepSchedule, box: Box):
    """Projected gradient step from two perturbed evaluations."""
    Delta = sample_perturbation(kind, state.theta.shape[0], state.rng)
    est = _gradient(kind, ev, state.theta, delta, Delta)
    theta = box.project(state.theta - schedule(state.t) * est.g)
    return state.advance(theta, j_plus=est.j_plus, j_minus=est.j_minus)


def _newton_step(state, ev, kind, delta, schedule, box, omega, value=_j, paper_exact_scaling=False):
    N = state.theta.shape[0]
    a = schedule(state.t)
    if kind is PerturbationKind.RADEMACHER:
        Delta = sample_perturbation(kind, N, state.rng)
        Delta_hat = sample_perturbation(kind, N, state.rng)
        hs = spsa_hessian_sample(ev, state.theta, delta, Delta, Delta_hat, value=value)
    else:
        Delta = sample_perturbation(kind, N, state.rng)
        hs = sf_hessian_sample(ev, state.theta, delta, Delta, value=value, paper_exact_scaling=paper_exact_scaling)
    est = _gradient(kind, ev, state.theta, delta, Delta, value=value)
    H = symmetrize_upper(state.H + a * (hs.H - state.H))
    M = np.linalg.inv(project_psd(H, omega))
    theta = box.project(state.theta - a * (M @ est.g))
    return state.advance(theta, H=H, M=M, j_plus=est.j_plus, j_minus=est.j_minus)


def mcpn_step(state, ev, kind, delta, schedule, box, omega=0.1, paper_exact_scaling=False):
    """Newton step: average a Hessian sample into ``H``, floor it, and descend along ``M g``.

    Makes four evaluator calls (two for the Hessian sample, two for the gradient).
    """
    return _newton_step(state, ev, kind, delta, schedule, box, omega, paper_exact_scaling=paper_exact_scaling)


def woodbury_inverse_update(M, a, b, C, U, V):
    """Rank-one inverse update ``M/(1-a) [I - C U V M / (1 - b + C V M U)]`` (unprojected)."""
    if abs(1.0 - a) < 1e-10:
        raise DegenerateUpdateError(f"step size a={a} makes 1 - a vanish")
    VM = V @ M
    denom = 1.0 - b + C * (VM @ U)
    if abs(denom) < 1e-10:
        raise DegenerateUpdateError(f"denominator {denom:.3g} too close to zero")
    N = M.shape[0]
    return (M / (1.0 - a)) @ (np.eye(N) - C * np.outer(U, VM) / denom)


def woodbury_step(state, ev, delta, schedule, box, omega=0.1, b_schedule=None):
    """Newton step keeping the inverse Hessian ``M`` via Sherman-Morrison (SPSA directions).

    ``b_schedule`` defaults to ``schedule``, which makes the update the exact inverse of
    the averaged-Hessian recursion.
    """
    kind = PerturbationKind.RADEMACHER
    N = state.theta.shape[0]
    Delta = sample_perturbation(kind, N, state.rng)
    Delta_hat = sample_perturbation(kind, N, state.rng)
    theta = state.theta
    j_first = ev(theta + delta * Delta + delta * Delta_hat)
    j_second = ev(theta + delta * Delta)
    est = spsa_gradient(ev, theta, delta, Delta)
    a = schedule(state.t)
    b = a if b_schedule is None else b_schedule(state.t)
    C = b * (j_first - j_second)
    U = 1.0 / (delta * Delta)
    V = 1.0 / (delta * Delta_hat)
    M = project_inverse(woodbury_inverse_update(state.M, a, b, C, U, V), omega)
    theta = box.project(theta - a * (M @ est.g))
    return state.advance(theta, M=M, j_plus=est.j_plus, j_minus=est.j_minus)


def _update_multiplier(state, ev, schedule_b, risk):
    _, v = ev.evaluate(state.theta)
    if not math.isfinite(v):
        raise UndefinedVarianceError("risk-sensitive steps need a finite variance estimate (p >= 2)")
    return risk.project(state.lam + schedule_b(state.t) * (v - risk.alpha))


def risk_mcpg_step(state, ev, delta, schedule, box, risk: RiskConfig):
    """SPSA descent on ``J + lambda V`` plus a projected multiplier ascent on the slow timescale."""
    kind = PerturbationKind.RADEMACHER
    Delta = sample_perturbation(kind, state.theta.shape[0], state.rng)
    est = spsa_gradient(ev, state.theta, delta, Delta, value=_lagrangian(state.lam))
    lam = _update_multiplier(state, ev, risk.b_schedule, risk)
    theta = box.project(state.theta - schedule(state.t) * est.g)
    return state.advance(theta, lam=lam, j_plus=est.j_plus, j_minus=est.j_minus)


def risk_mcpn_step(state, ev, delta, schedule, box, risk: RiskConfig, omega=0.1):
    """Newton step on the Lagrangian ``J + lambda V`` with the slow multiplier update."""
    nxt = _newton_step(
        state, ev, PerturbationKind.RADEMACHER, delta, schedule, box, omega, value=_lagrangian(state.lam)
    )
    return dataclasses.replace(nxt, lam=_update_multiplier(state, ev, risk.b_schedule, risk))


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "mcpg-spsa"
    delta: float = 0.1
    schedule: StepSchedule = StepSchedule()
    box: Box = Box(np.zeros(1), np.ones(1))
    omega: float = 0.1
    risk: RiskConfig | None = None
    woodbury_b: StepSchedule | None = None
    woodbury_k: float | None = None
    paper_exact_scaling: bool = False
    error_budget: int = 10

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InputError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not self.delta > 0:
            raise InputError("delta must be positive")
        if not self.omega > 0:
            raise InputError("omega must be positive")
        if self.algorithm.startswith("risk"):
            if self.risk is None:
                raise InputError(f"{self.algorithm} needs a RiskConfig")
            self.risk.check_timescales(self.schedule)

    @property
    def newton(self):
        return self.algorithm.startswith("mcpn") or self.algorithm == "risk-mcpn"

    @property
    def calls_per_iteration(self):
        return {"mcpg-spsa": 2, "mcpg-sf": 2, "risk-mcpg": 3, "risk-mcpn": 5}.get(self.algorithm, 4)

    def step(self, state, ev):
        a = self.algorithm
        if a == "mcpg-spsa":
            return mcpg_step(state, ev, PerturbationKind.RADEMACHER, self.delta, self.schedule, self.box)
        if a == "mcpg-sf":
            return mcpg_step(state, ev, PerturbationKind.GAUSSIAN, self.delta, self.schedule, self.box)
        if a == "mcpn-spsa":
            return mcpn_step(state, ev, PerturbationKind.RADEMACHER, self.delta, self.schedule, self.box, self.omega)
        if a == "mcpn-sf":
            return mcpn_step(
                state, ev, PerturbationKind.GAUSSIAN, self.delta, self.schedule, self.box, self.omega,
                paper_exact_scaling=self.paper_exact_scaling,
            )
        if a == "mcpn-woodbury":
            return woodbury_step(state, ev, self.delta, self.schedule, self.box, self.omega, self.woodbury_b)
        if a == "risk-mcpg":
            return risk_mcpg_step(state, ev, self.delta, self.schedule, self.box, self.risk)
        return risk_mcpn_step(state, ev, self.delta, self.schedule, self.box, self.risk, self.omega)


@dataclass
class Trace:
    """Per-iteration record of an optimizer run; row ``k`` describes the state after iteration ``k + 1``."""

    algorithm: str
    seed: int
    theta0: np.ndarray
    t: np.ndarray
    theta: np.ndarray
    theta_bar: np.ndarray
    j_plus: np.ndarray
    j_minus: np.ndarray
    lam: np.ndarray
    h_min_eig: np.ndarray
    failed: np.ndarray
    errors: list = field(default_factory=list)

    def __len__(self):
        return self.t.shape[0]

    @property
    def final_theta(self):
        return self.theta[-1]

    @property
    def final_theta_bar(self):
        return self.theta_bar[-1]

    def header(self):
        N = self.theta.shape[1]
        return (
            ["t"]
            + [f"theta_{i}" for i in range(N)]
            + [f"theta_bar_{i}" for i in range(N)]
            + ["j_plus", "j_minus", "lambda", "h_min_eig"]
        )

    def to_csv(self, path):
        theta0 = " ".join(repr(float(v)) for v in self.theta0)
        with open(path, "w", newline="") as fh:
            fh.write(f"# algorithm={self.algorithm},seed={self.seed},theta0={theta0}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for k in range(len(self)):
                w.writerow(
                    [int(self.t[k])]
                    + [repr(float(v)) for v in self.theta[k]]
                    + [repr(float(v)) for v in self.theta_bar[k]]
                    + [repr(float(self.j_plus[k])), repr(float(self.j_minus[k])), repr(float(self.lam[k])),
                       repr(float(self.h_min_eig[k]))]
                )


def _h_min_eig(state, omega):
    if state.H is not None:
        return float(np.linalg.eigvalsh(project_psd(state.H, omega)).min())
    if state.M is not None:
        return float(1.0 / np.linalg.eigvalsh(0.5 * (state.M + state.M.T)).max())
    return math.nan


class ErrorBudgetExceeded(RuntimeError):
    pass


def run_optimizer(config: OptimizerConfig, ev, iterations: int, seed: int = 0, theta0=None) -> Trace:
    """Iterate the configured step ``iterations`` times.

    ``theta0`` defaults to a uniform draw from the box (stream 0 of ``seed``);
    perturbations use stream 1. Failed steps leave ``theta`` unchanged and are
    recorded; more than ``config.error_budget`` failures abort the run.
    Precondition violations (:class:`InputError`) propagate immediately.
    """
    if int(iterations) < 1:
        raise InputError("iterations must be >= 1")
    box = config.box
    if theta0 is None:
        theta0 = box.sample(make_rng(seed, 0))
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if not box.contains(theta0):
        raise InputError("theta0 lies outside the box")
    N = theta0.shape[0]
    M0 = None
    if config.algorithm == "mcpn-woodbury":
        k = 1.0 / config.omega if config.woodbury_k is None else config.woodbury_k
        M0 = k * np.eye(N)
    lam0 = config.risk.lambda0 if config.risk is not None else 0.0
    state = OptimizerState.initial(theta0, make_rng(seed, 1), config.newton or M0 is not None, config.omega, M0, lam0)
    rows = []
    errors = []
    for _ in range(int(iterations)):
        failed = False
        try:
            state = config.step(state, ev)
        except InputError:
            raise
        except Exception as exc:
            failed = True
            errors.append((state.t, repr(exc)))
            if len(errors) > config.error_budget:
                raise ErrorBudgetExceeded(f"{len(errors)} failed steps; last: {exc!r}") from exc
            state = state.advance(state.theta.copy(), j_plus=math.nan, j_minus=math.nan)
        rows.append(
            (state.t - 1, state.theta, state.theta_bar, state.j_plus, state.j_minus, state.lam,
             _h_min_eig(state, config.omega), failed)
        )
    t, th, tb, jp, jm, lam, hm, fl = zip(*rows)
    return Trace(
        config.algorithm, seed, theta0, np.array(t), np.array(th), np.array(tb), np.array(jp), np.array(jm),
        np.array(lam), np.array(hm), np.array(fl), errors,
    )
