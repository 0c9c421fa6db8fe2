"""Shared domain types: transitions, batch datasets, metrics, policies, RNG streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class InputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


@dataclass(frozen=True)
class Transition:
    """One stored system transition ``(x, u, c, y)`` with its 1-based index."""

    x: np.ndarray
    u: np.ndarray
    c: float
    y: np.ndarray
    index: int


@dataclass(frozen=True)
class StateActionMetric:
    """Additive distance ``||x - x'||_X + ||u - u'||_U``.

    Each factor is a weighted Minkowski norm of order ``ord`` (1 by default).
    Weights rescale coordinates carrying heterogeneous units.
    """

    ord: float = 1.0
    state_weights: np.ndarray | None = None
    action_weights: np.ndarray | None = None

    def _norm(self, diff, weights):
        if weights is not None:
            diff = diff * weights
        diff = np.abs(diff)
        if self.ord == 1:
            return diff.sum(axis=-1)
        if np.isinf(self.ord):
            return diff.max(axis=-1)
        return (diff**self.ord).sum(axis=-1) ** (1.0 / self.ord)

    def __call__(self, x, u, x2, u2):
        """Distance between ``(x, u)`` and ``(x2, u2)``; broadcasts over leading axes."""
        return self._norm(np.asarray(x) - x2, self.state_weights) + self._norm(
            np.asarray(u) - u2, self.action_weights
        )


def _as_2d(a, width, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, width) if width > 1 else a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[1] != width:
        raise InputError(f"{name} must have {width} columns, got shape {a.shape}")
    return a


class BatchDataset:
    """Immutable batch of one-step transitions stored column-wise.

    Parameters
    ----------
    X, U, C, Y : array-like
        States ``(n, d_x)``, actions ``(n, d_u)``, costs ``(n,)`` and successor
        states ``(n, d_x)``. Row order defines the 1-based transition index.
    metric : StateActionMetric, optional
        Distance over state-action pairs. Defaults to L1 on both factors.
    """

    def __init__(self, X, U, C, Y, metric: StateActionMetric | None = None, validate_metric=True):
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        d_x = X.shape[1] if X.ndim == 2 else 1
        d_u = U.shape[1] if U.ndim == 2 else 1
        X = _as_2d(X, d_x, "X")
        U = _as_2d(U, d_u, "U")
        Y = _as_2d(Y, d_x, "Y")
        C = np.asarray(C, dtype=float).reshape(-1)
        n = X.shape[0]
        if not (U.shape[0] == Y.shape[0] == C.shape[0] == n):
            raise InputError("X, U, C, Y must have the same number of rows")
        for name, arr in (("X", X), ("U", U), ("C", C), ("Y", Y)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite entries")
        self.metric = metric if metric is not None else StateActionMetric()
        self._X, self._U, self._C, self._Y = X.copy(), U.copy(), C.copy(), Y.copy()
        for arr in (self._X, self._U, self._C, self._Y):
            arr.setflags(write=False)
        if validate_metric and n > 0:
            _check_metric(self.metric, d_x, d_u)

    @property
    def X(self):
        return self._X

    @property
    def U(self):
        return self._U

    @property
    def C(self):
        return self._C

    @property
    def Y(self):
        return self._Y

    @property
    def d_x(self):
        return self._X.shape[1]

    @property
    def d_u(self):
        return self._U.shape[1]

    def __len__(self):
        return self._X.shape[0]

    def __getitem__(self, index: int) -> Transition:
        """Transition with 1-based ``index``."""
        if not 1 <= index <= len(self):
            raise IndexError(index)
        i = index - 1
        return Transition(self._X[i], self._U[i], float(self._C[i]), self._Y[i], index)

    def __iter__(self):
        for i in range(1, len(self) + 1):
            yield self[i]

    @property
    def pairs(self):
        """State-action pairs ``(X, U)`` of the dataset."""
        return self._X, self._U

    @classmethod
    def from_transitions(cls, transitions: Iterable[Transition | Sequence], metric=None):
        rows = list(transitions)
        if not rows:
            raise InputError("empty transition list")
        get = (lambda t: (t.x, t.u, t.c, t.y)) if isinstance(rows[0], Transition) else tuple
        X, U, C, Y = zip(*(get(t) for t in rows))
        X = np.atleast_1d(np.asarray(X, dtype=float))
        U = np.atleast_1d(np.asarray(U, dtype=float))
        if X.ndim == 1:
            X = X[:, None]
        if U.ndim == 1:
            U = U[:, None]
        return cls(X, U, C, np.asarray(Y, dtype=float).reshape(X.shape), metric=metric)

    def to_array(self):
        """Rows laid out as ``x..., u..., c, y...``."""
        return np.hstack([self._X, self._U, self._C[:, None], self._Y])

    @classmethod
    def from_array(cls, A, d_x, metric=None):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise InputError("expected a 2-D array")
        d_u = A.shape[1] - 2 * d_x - 1
        if d_u < 1:
            raise InputError(f"{A.shape[1]} columns cannot hold d_x={d_x} plus an action")
        X = A[:, :d_x]
        U = A[:, d_x : d_x + d_u]
        C = A[:, d_x + d_u]
        Y = A[:, d_x + d_u + 1 :]
        return cls(X, U, C, Y, metric=metric)

    def header(self):
        return (
            [f"x_{i}" for i in range(self.d_x)]
            + [f"u_{i}" for i in range(self.d_u)]
            + ["c"]
            + [f"y_{i}" for i in range(self.d_x)]
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            for row in self.to_array():
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, metric=None):
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        d_x = sum(1 for h in header if h.startswith("x_"))
        d_u = sum(1 for h in header if h.startswith("u_"))
        n_y = sum(1 for h in header if h.startswith("y_"))
        if d_x == 0 or d_u == 0 or n_y != d_x or "c" not in header or len(header) != 2 * d_x + d_u + 1:
            raise InputError(f"malformed dataset header: {header}")
        if not rows:
            raise InputError(f"{path} holds no transitions")
        return cls.from_array(np.array(rows), d_x, metric=metric)

    def __eq__(self, other):
        if not isinstance(other, BatchDataset):
            return NotImplemented
        return np.array_equal(self.to_array(), other.to_array())

    def __repr__(self):
        return f"BatchDataset(n={len(self)}, d_x={self.d_x}, d_u={self.d_u})"


def _check_metric(metric, d_x, d_u, n_probes=32, seed=0):
    rng = np.random.default_rng(seed)
    xa, xb = rng.normal(size=(2, n_probes, d_x))
    ua, ub = rng.normal(size=(2, n_probes, d_u))
    dab = metric(xa, ua, xb, ub)
    dba = metric(xb, ub, xa, ua)
    if np.any(dab < 0) or not np.allclose(dab, dba, rtol=0, atol=1e-12):
        raise InputError("metric must be nonnegative and symmetric")
    if np.any(metric(xa, ua, xa, ua) != 0):
        raise InputError("metric must vanish on identical pairs")


def metric_distance(dataset: BatchDataset, a, b) -> float:
    """Distance between state-action pairs ``a = (x, u)`` and ``b`` under the dataset metric."""
    (xa, ua), (xb, ub) = a, b
    xa, ua, xb, ub = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (xa, ua, xb, ub))
    if xa.shape != (dataset.d_x,) or xb.shape != (dataset.d_x,):
        raise InputError(f"state dimension must be {dataset.d_x}")
    if ua.shape != (dataset.d_u,) or ub.shape != (dataset.d_u,):
        raise InputError(f"action dimension must be {dataset.d_u}")
    return float(dataset.metric(xa, ua, xb, ub))


@dataclass(frozen=True)
class Box:
    """Closed per-coordinate interval ``[low, high]``."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float))
        high = np.atleast_1d(np.asarray(self.high, dtype=float))
        low, high = np.broadcast_arrays(low, high)
        if np.any(np.isnan(low)) or np.any(np.isnan(high)) or np.any(low > high):
            raise InputError("box must satisfy low <= high coordinatewise")
        object.__setattr__(self, "low", low.copy())
        object.__setattr__(self, "high", high.copy())

    @classmethod
    def uniform(cls, low, high, dim):
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @property
    def dim(self):
        return self.low.shape[0]

    def contains(self, theta, tol=0.0):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.low - tol) and np.all(theta <= self.high + tol))

    def project(self, theta):
        return np.clip(np.asarray(theta, dtype=float), self.low, self.high)

    def widen(self, margin):
        return Box(self.low - margin, self.high + margin)

    def sample(self, rng):
        return rng.uniform(self.low, self.high)


@dataclass(frozen=True)
class PolicySpec:
    """Deterministic policy family ``u = W(theta) phi(x)``.

    ``kind`` is ``"linear"`` (``phi(x) = x``), ``"affine"`` (``phi(x) = [x, 1]``) or
    ``"features"`` with a user feature map. ``theta`` is the row-major flattening
    of the ``(d_u, k)`` weight matrix.
    """

    d_x: int
    d_u: int
    box: Box
    kind: str = "linear"
    feature_map: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    n_features: int | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "affine", "features"):
            raise InputError(f"unknown policy kind {self.kind!r}")
        if self.kind == "features" and (self.feature_map is None or self.n_features is None):
            raise InputError("feature policies need feature_map and n_features")
        if self.box.dim != self.param_dim:
            raise InputError(f"box has dimension {self.box.dim}, policy needs {self.param_dim}")

    @classmethod
    def linear(cls, d_x=1, d_u=1, low=0.0, high=1.0):
        return cls(d_x, d_u, Box.uniform(low, high, d_x * d_u))

    @property
    def k(self):
        if self.kind == "linear":
            return self.d_x
        if self.kind == "affine":
            return self.d_x + 1
        return self.n_features

    @property
    def param_dim(self):
        return self.d_u * self.k

    def features(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.kind == "linear":
            return x
        if self.kind == "affine":
            return np.append(x, 1.0)
        return np.asarray(self.feature_map(x), dtype=float).reshape(self.n_features)

    def with_box(self, box: Box) -> "PolicySpec":
        return PolicySpec(self.d_x, self.d_u, box, self.kind, self.feature_map, self.n_features)

    def action(self, theta, x):
        """Unchecked evaluation; callers are responsible for box membership."""
        return self.bind(theta)(x)

    def bind(self, theta):
        """Return ``x -> u`` for a fixed ``theta`` (unchecked)."""
        W = np.asarray(theta, dtype=float).reshape(self.d_u, self.k)
        if self.kind == "linear":
            if W.shape == (1, 1):
                w = float(W[0, 0])
                return lambda x: w * x
            return lambda x: W @ x
        return lambda x: W @ self.features(x)

    def batch_action(self, theta, X):
        """Actions ``(m, d_u)`` for states ``X`` of shape ``(m, d_x)`` (unchecked)."""
        W = np.asarray(theta, dtype=float).reshape(self.d_u, self.k)
        X = np.asarray(X, dtype=float)
        if self.kind == "linear":
            return X @ W.T
        if self.kind == "affine":
            return X @ W[:, :-1].T + W[:, -1]
        return np.array([W @ self.features(x) for x in X]).reshape(X.shape[0], self.d_u)


def policy_action(policy: PolicySpec, theta, x) -> np.ndarray:
    """Action taken by ``policy`` at parameter ``theta`` in state ``x``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (policy.param_dim,):
        raise InputError(f"theta must have dimension {policy.param_dim}, got {theta.shape}")
    if not policy.box.contains(theta):
        raise InputError(f"theta={theta} lies outside the parameter box; project it first")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (policy.d_x,):
        raise InputError(f"state must have dimension {policy.d_x}")
    return policy.action(theta, x)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for logical consumer ``stream`` under master ``seed``.

    Equal ``(seed, stream)`` pairs reproduce identical draw sequences.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),)))
