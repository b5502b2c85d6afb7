"""Coupled distributed stochastic approximation.

Each iteration every agent takes a stochastic gradient step on its decision
variable (at its own parameter estimate) and on its parameter estimate, then
replaces both with a weighted average of its neighbors' temporaries.

The engine advances many independent Monte Carlo paths at once. Arrays are
laid out as ``(paths, agents, dim)``; every per-path result depends only on
that path's random streams, never on which other paths share the batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import rng as streams
from .metrics import METRICS, RunTrace, default_schedule, errors_at
from .network import WeightMatrix
from .problems import CoupledProblem


class DivergenceError(FloatingPointError):
    """Raised when an iterate becomes NaN or infinite."""

    def __init__(self, k: int, path: Optional[int] = None):
        where = f" on path {path}" if path is not None else ""
        super().__init__(f"non-finite iterate at iteration {k}{where}")
        self.k = k
        self.path = path


# ---------------------------------------------------------------------------
# step sizes


@dataclass(frozen=True)
class PaperHarmonic:
    """``alpha_k = beta / (mu_x (k + K))``, ``gamma_k = beta / (mu_theta (k + K))``."""

    beta: float
    K: int
    mu_x: float
    mu_theta: float

    def __post_init__(self):
        if not self.beta > 2:
            raise ValueError(f"beta must exceed 2, got {self.beta}")
        if self.K < 1 or int(self.K) != self.K:
            raise ValueError("K must be a positive integer")
        if self.mu_x <= 0 or self.mu_theta <= 0:
            raise ValueError("strong convexity constants must be positive")

    def __call__(self, k: int):
        return (self.beta / (self.mu_x * (k + self.K)),
                self.beta / (self.mu_theta * (k + self.K)))

    def describe(self) -> dict:
        return {"policy": "harmonic", "beta": self.beta, "K": self.K,
                "mu_x": self.mu_x, "mu_theta": self.mu_theta}


@dataclass(frozen=True)
class Explicit:
    """``alpha_k = gamma_k = a / (k + b)``."""

    a: float = 20.0
    b: float = 20.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")

    def __call__(self, k: int):
        s = self.a / (k + self.b)
        return s, s

    def describe(self) -> dict:
        return {"policy": "explicit", "a": self.a, "b": self.b}


def stepsizes(policy, k: int):
    if k < 0:
        raise ValueError("k must be non-negative")
    return policy(k)


def compute_K(beta, M_x, L_x, mu_x, M_theta, L_theta, mu_theta) -> int:
    """Offset ``ceil(max(3 beta (1+M) L^2 / mu^2))`` over both problems."""
    for name, v in (("beta", beta), ("L_x", L_x), ("mu_x", mu_x),
                    ("L_theta", L_theta), ("mu_theta", mu_theta)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if M_x < 0 or M_theta < 0:
        raise ValueError("variance multipliers must be non-negative")
    bx = 3 * beta * (1 + M_x) * L_x ** 2 / mu_x ** 2
    bt = 3 * beta * (1 + M_theta) * L_theta ** 2 / mu_theta ** 2
    # guard against 18.000000000000004 style rounding before the ceiling
    return int(math.ceil(round(max(bx, bt), 9)))


def harmonic_for(problem: CoupledProblem, beta: float = 3.0) -> PaperHarmonic:
    c = problem.analytic_constants()
    if c is None:
        raise ValueError(f"{problem.name} declares no analytic constants")
    K = compute_K(beta, c["M_x"], c["L_x"], c["mu_x"], c["M_theta"], c["L_theta"], c["mu_theta"])
    return PaperHarmonic(beta, K, c["mu_x"], c["mu_theta"])


# ---------------------------------------------------------------------------
# one iteration


@dataclass
class SwarmState:
    X: np.ndarray
    Theta: np.ndarray
    k: int = 0

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float)
        self.Theta = np.array(self.Theta, dtype=float)
        if self.X.ndim != 2 or self.Theta.ndim != 2 or self.X.shape[0] != self.Theta.shape[0]:
            raise ValueError("X must be (n, p) and Theta (n, q) with matching n")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Theta))):
            raise DivergenceError(self.k)


def sgd_phase(X, Theta, problem: CoupledProblem, alpha: float, gamma: float,
              comp_u, learn_u):
    """Local stochastic gradient step for every agent.

    ``comp_u`` / ``learn_u`` hold each agent's uniforms for this iteration;
    agent ``i``'s oracle is evaluated at its own ``(x_i, theta_i)``.
    """
    g = problem.comp_grad_batch(X, Theta, comp_u)
    phi = problem.learn_grad_batch(Theta, learn_u)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(phi))):
        raise FloatingPointError("oracle returned a non-finite gradient")
    return X - alpha * g, Theta - gamma * phi


def mix(w: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``W @ A`` along the agent axis.

    Stacked matmul multiplies each path's ``(n, dim)`` block separately, so a
    path's result does not depend on the other paths in the batch.
    """
    return np.matmul(w, A)


def mix_phase(W, X_tilde, Theta_tilde, k: int = 0) -> SwarmState:
    """Consensus step: ``X(k+1) = W X~``, ``Theta(k+1) = W Theta~``."""
    w = W.w if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    return SwarmState(mix(w, np.asarray(X_tilde, dtype=float)),
                      mix(w, np.asarray(Theta_tilde, dtype=float)), k + 1)


# ---------------------------------------------------------------------------
# full runs


def simulate(problem: CoupledProblem, W, policy, k_max: int, seed: int = 0,
             paths: Sequence[int] | int = 1, X0=None, Theta0=None, schedule=None,
             optimum=None, block: int = 256,
             callback: Optional[Callable] = None) -> list:
    """Run CDSA on several Monte Carlo paths; return one :class:`RunTrace` each.

    ``paths`` is a path count or an explicit list of path indices; path
    ``p`` always draws from the streams keyed by ``(seed, p)``. ``callback``
    (if given) is called as ``callback(k, X, Theta)`` at every recorded
    iteration with arrays of shape ``(len(paths), n, dim)``.
    """
    path_ids = list(range(paths)) if isinstance(paths, (int, np.integer)) else [int(p) for p in paths]
    if not path_ids:
        raise ValueError("need at least one path")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    w = W.w if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    n = problem.n
    if w.shape != (n, n):
        raise ValueError(f"weight matrix is {w.shape}, problem has n={n} agents")
    schedule = default_schedule(k_max) if schedule is None else np.asarray(schedule, dtype=int)
    if np.any(np.diff(schedule) <= 0) or schedule[0] < 1 or schedule[-1] > k_max:
        raise ValueError("schedule must be increasing within [1, k_max]")
    if optimum is None:
        optimum = problem.optimum()
    if optimum is None:
        raise ValueError("an optimum (x*, theta*) is needed to record errors")
    x_star, theta_star = optimum

    P = len(path_ids)
    X = np.empty((P, n, problem.p))
    Theta = np.empty((P, n, problem.q))
    x0, t0 = problem.initial_state()
    X[:] = x0 if X0 is None else np.asarray(X0, dtype=float)
    Theta[:] = t0 if Theta0 is None else np.asarray(Theta0, dtype=float)

    comp = [streams.Stream(seed, p, streams.COMP, n, problem.comp_width) for p in path_ids]
    learn = ([streams.Stream(seed, p, streams.LEARN, n, problem.learn_width) for p in path_ids]
             if problem.learn_width else None)
    empty_learn = np.zeros((P, n, 0))

    rec = {m: np.empty((P, len(schedule))) for m in METRICS}
    next_rec = 0
    k = 0
    while k < k_max:
        b = min(block, k_max - k)
        cu = np.stack([s.next(b) for s in comp], axis=1)          # (b, P, n, w)
        lu = np.stack([s.next(b) for s in learn], axis=1) if learn else None
        for j in range(b):
            alpha, gamma = policy(k)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    Xt, Tt = sgd_phase(X, Theta, problem, alpha, gamma, cu[j],
                                       lu[j] if learn else empty_learn)
            except FloatingPointError:
                raise DivergenceError(k + 1) from None
            X = mix(w, Xt)
            Theta = mix(w, Tt)
            k += 1
            if not (np.isfinite(X).all() and np.isfinite(Theta).all()):
                bad = ~(np.isfinite(X).all(axis=(1, 2)) & np.isfinite(Theta).all(axis=(1, 2)))
                raise DivergenceError(k, path_ids[int(np.flatnonzero(bad)[0])])
            if next_rec < len(schedule) and k == schedule[next_rec]:
                with np.errstate(over="ignore"):
                    vals = errors_at(X, Theta, x_star, theta_star)
                for m, v in zip(METRICS, vals):
                    rec[m][:, next_rec] = v
                next_rec += 1
                if callback is not None:
                    callback(k, X, Theta)

    meta = {"n": n, **problem.describe(), **policy.describe(), "k_max": int(k_max), "seed": int(seed)}
    if isinstance(W, WeightMatrix):
        meta["rho_w"] = float(W.rho_w)
        if W.topology is not None:
            meta["topology"] = W.topology.label
    return [RunTrace(schedule.copy(), {m: rec[m][i].copy() for m in METRICS},
                     {**meta, "path": pid, "paths": 1})
            for i, pid in enumerate(path_ids)]


def run(problem: CoupledProblem, W, policy, k_max: int, seed: int = 0, path: int = 0,
        X0=None, Theta0=None, schedule=None, optimum=None, callback=None) -> RunTrace:
    """Single CDSA run on Monte Carlo path ``path`` of ``seed``."""
    return simulate(problem, W, policy, k_max, seed, [path], X0, Theta0, schedule,
                    optimum, callback=callback)[0]


class CDSA(BaseEstimator):
    """Estimator-style front end to :func:`simulate`.

    ``fit(problem, weights)`` runs ``paths`` Monte Carlo paths and stores the
    averaged trace in ``trace_`` and the final network-average iterates of
    path 0 in ``x_`` / ``theta_``.

    Parameters
    ----------
    k_max : int
        Number of iterations.
    policy : {"explicit", "harmonic"}
        Step-size family. ``harmonic`` derives ``K`` from the problem's
        analytic constants.
    a, b : float
        Explicit schedule ``a / (k + b)``.
    beta : float
        Harmonic schedule multiplier (must exceed 2).
    paths : int
        Monte Carlo paths averaged into ``trace_``.
    random_state : int
        Master seed of the counter-based streams.
    """

    def __init__(self, k_max=1000, policy="explicit", a=20.0, b=20.0, beta=3.0,
                 paths=1, random_state=0):
        self.k_max = k_max
        self.policy = policy
        self.a = a
        self.b = b
        self.beta = beta
        self.paths = paths
        self.random_state = random_state

    def make_policy(self, problem):
        if self.policy == "explicit":
            return Explicit(self.a, self.b)
        if self.policy == "harmonic":
            return harmonic_for(problem, self.beta)
        raise ValueError(f"unknown policy {self.policy!r}")

    def fit(self, problem: CoupledProblem, weights):
        from .metrics import average_traces

        policy = self.make_policy(problem)
        finals = {}

        def grab(k, X, Theta):
            if k == self.k_max:
                finals["X"], finals["Theta"] = X[0].copy(), Theta[0].copy()

        traces = simulate(problem, weights, policy, self.k_max, self.random_state,
                          self.paths, callback=grab)
        self.trace_ = average_traces(traces)
        self.X_ = finals["X"]
        self.Theta_ = finals["Theta"]
        self.x_ = self.X_.mean(axis=0)
        self.theta_ = self.Theta_.mean(axis=0)
        self.n_iter_ = self.k_max
        return self

    def score(self, problem=None, weights=None):
        """Negative final mean-squared error of the decision variable."""
        return -float(self.trace_["mse_x"][-1])
