"""Scikit-learn style wrapper around the policy search loops."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import BatchDataset, Box, PolicySpec
from .mfmc import MFMCEstimator
from .optim import OptimizerConfig, RiskConfig, StepSchedule, run_optimizer


class PolicySearch(BaseEstimator):
    """Batch off-policy search for a linear policy ``u = W x``.

    ``fit`` takes a :class:`BatchDataset` (or an array with columns
    ``x..., u..., c, y...``), evaluates candidate parameters with MFMC and runs
    the selected stochastic-approximation loop. ``predict`` maps states to the
    actions of the Polyak-averaged parameter.

    Parameters
    ----------
    algorithm : str
        One of ``mcpg-spsa``, ``mcpg-sf``, ``mcpn-spsa``, ``mcpn-sf``,
        ``mcpn-woodbury``, ``risk-mcpg``, ``risk-mcpn``.
    iterations : int
    delta : float
        Perturbation size.
    a0, kappa : float
        Step size ``a0 / t**kappa``.
    low, high : float
        Parameter box, applied to every coordinate.
    omega : float
        Eigenvalue floor of the Hessian estimate.
    gamma, x0, T, p :
        MFMC settings, see :class:`~mfmcps.mfmc.MFMCEstimator`.
    alpha, lambda_max, b0, b_kappa :
        Variance cap and slow multiplier schedule of the risk-sensitive variants.
    random_state : int
    """

    def __init__(
        self,
        algorithm="mcpg-sf",
        iterations=500,
        delta=0.1,
        a0=1.0,
        kappa=1.0,
        low=0.0,
        high=1.0,
        omega=0.1,
        gamma=0.95,
        x0=-1.0,
        T=None,
        p=None,
        alpha=1.0,
        lambda_max=10.0,
        b0=0.1,
        b_kappa=1.0,
        random_state=0,
    ):
        self.algorithm = algorithm
        self.iterations = iterations
        self.delta = delta
        self.a0 = a0
        self.kappa = kappa
        self.low = low
        self.high = high
        self.omega = omega
        self.gamma = gamma
        self.x0 = x0
        self.T = T
        self.p = p
        self.alpha = alpha
        self.lambda_max = lambda_max
        self.b0 = b0
        self.b_kappa = b_kappa
        self.random_state = random_state

    def _dataset(self, X):
        if isinstance(X, BatchDataset):
            return X
        d_x = np.atleast_1d(self.x0).shape[0]
        return BatchDataset.from_array(check_array(X), d_x)

    def fit(self, X, y=None):
        ds = self._dataset(X)
        policy = PolicySpec.linear(ds.d_x, ds.d_u, self.low, self.high)
        x0 = np.broadcast_to(np.asarray(self.x0, dtype=float), (ds.d_x,))
        self.evaluator_ = MFMCEstimator(self.gamma, x0, self.T, self.p, policy).fit(ds)
        schedule = StepSchedule(self.a0, self.kappa)
        risk = None
        if self.algorithm.startswith("risk"):
            risk = RiskConfig(self.alpha, self.lambda_max, StepSchedule(self.b0, self.b_kappa))
        config = OptimizerConfig(
            algorithm=self.algorithm,
            delta=self.delta,
            schedule=schedule,
            box=Box.uniform(self.low, self.high, policy.param_dim),
            omega=self.omega,
            risk=risk,
        )
        seed = 0 if self.random_state is None else int(self.random_state)
        self.trace_ = run_optimizer(config, self.evaluator_, self.iterations, seed=seed)
        self.policy_ = policy
        self.theta_ = self.trace_.final_theta
        self.theta_bar_ = self.trace_.final_theta_bar
        self.n_features_in_ = ds.to_array().shape[1]
        return self

    def predict(self, X):
        """Actions of the averaged policy for states ``X`` of shape ``(m, d_x)``."""
        check_is_fitted(self, "theta_bar_")
        X = check_array(X)
        return self.policy_.batch_action(self.theta_bar_, X)

    def score(self, X=None, y=None):
        """Negated MFMC cost-to-go of the averaged parameter on ``X`` (default: the fitted data)."""
        check_is_fitted(self, "theta_bar_")
        ev = self.evaluator_ if X is None else MFMCEstimator(**self.evaluator_.get_params()).fit(self._dataset(X))
        return -ev(self.theta_bar_)
