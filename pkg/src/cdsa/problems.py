"""Coupled problems: a computational objective f_i(x, theta) per agent plus a
parameter-learning objective h_i(theta), each reached through a stochastic
first-order oracle.

Oracles are written once in batched form. They take uniforms in ``[0, 1)``
with shape ``(..., n_agents, width)`` and map them to samples, so the
per-agent API, the Monte Carlo engine and the counter-based streams all share
one sampling transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .rng import std_normal

X_TILDE = np.array([1.0, 3.0, 5.0, 4.0, 9.0])
FEATURE_VAR = 1.0 / 12.0


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def learning_targets(n: int) -> np.ndarray:
    """Per-agent minimizers of h_i; agent index i maps to 0.01 * (i + 1)."""
    return 0.01 * (np.arange(n) + 1.0)


class CoupledProblem:
    """Base class for coupled problems.

    Subclasses set ``n``, ``p``, ``q``, ``comp_width``, ``learn_width`` and
    implement the batched oracle methods. ``agents`` arguments select which
    agent each slot along the agent axis belongs to (default: all agents in
    order).
    """

    n: int
    p: int
    q: int
    comp_width: int
    learn_width: int
    name = "coupled"

    # batched oracles -------------------------------------------------
    def comp_grad_batch(self, X, Theta, U, agents=None):
        raise NotImplementedError

    def learn_grad_batch(self, Theta, U, agents=None):
        raise NotImplementedError

    def comp_grad_exact(self, X, Theta, agents=None):
        raise NotImplementedError

    def learn_grad_exact(self, Theta, agents=None):
        raise NotImplementedError

    def optimum(self):
        return None

    def analytic_constants(self) -> Optional[dict]:
        return None

    def initial_state(self):
        return np.zeros((self.n, self.p)), np.zeros((self.n, self.q))

    def describe(self) -> dict:
        return {"problem": self.name, "n": self.n}

    # per-agent oracles -----------------------------------------------
    def comp_grad(self, i: int, x, theta, rng=None) -> np.ndarray:
        """Stochastic gradient g_i(x, theta, xi) for agent ``i``."""
        u = _as_rng(rng).random(self.comp_width)
        x = np.asarray(x, dtype=float).reshape(1, self.p)
        theta = np.asarray(theta, dtype=float).reshape(1, self.q)
        return self.comp_grad_batch(x, theta, u.reshape(1, -1), agents=np.array([i]))[0]

    def learn_grad(self, i: int, theta, rng=None) -> np.ndarray:
        """Stochastic gradient phi_i(theta, zeta) for agent ``i``."""
        u = _as_rng(rng).random(self.learn_width)
        theta = np.asarray(theta, dtype=float).reshape(1, self.q)
        return self.learn_grad_batch(theta, u.reshape(1, -1), agents=np.array([i]))[0]

    def _agents(self, agents, size):
        if agents is None:
            if size != self.n:
                raise ValueError(f"agent axis has length {size}, expected n={self.n}")
            return np.arange(self.n)
        return np.asarray(agents, dtype=int)


class _QuadraticLearning:
    """h_i(theta) = (theta - a_i)^2 with an optional Gaussian perturbation."""

    def _init_learning(self, learn_noise: float):
        if learn_noise < 0:
            raise ValueError("learn_noise must be non-negative")
        self.learn_noise = float(learn_noise)
        self.learn_width = 1 if self.learn_noise > 0 else 0
        self.alpha = learning_targets(self.n)

    def learn_grad_exact(self, Theta, agents=None):
        Theta = np.asarray(Theta, dtype=float)
        idx = self._agents(agents, Theta.shape[-2])
        return 2.0 * (Theta - self.alpha[idx][:, None])

    def learn_grad_batch(self, Theta, U, agents=None):
        g = self.learn_grad_exact(Theta, agents)
        if self.learn_noise > 0:
            g = g + self.learn_noise * std_normal(np.asarray(U)[..., :1])
        return g

    def learn_loss(self, theta, agents):
        return (theta - self.alpha[agents][:, None]) ** 2

    @property
    def theta_star(self) -> float:
        return float(self.alpha.mean())


# ---------------------------------------------------------------------------
# ridge regression with an unknown regularization weight


def ridge_optimum(n: int):
    """Closed-form ``(x*, theta*)`` of the ridge instance with ``n`` agents."""
    if n < 1:
        raise ValueError("n must be positive")
    theta = 0.005 * (n + 1)
    return ridge_x_of_theta(theta), theta


def ridge_x_of_theta(theta: float) -> np.ndarray:
    return FEATURE_VAR / (FEATURE_VAR + theta) * X_TILDE


def ridge_transform(U):
    """Map uniforms of width 6 to a sample ``(u, v)``."""
    U = np.asarray(U, dtype=float)
    u = U[..., :5] - 0.5
    eps = 0.1 * std_normal(U[..., 5])
    v = u @ X_TILDE + eps
    return u, v


def ridge_sample(i: int, rng=None):
    """Draw ``(u, v)``: ``u ~ U(-0.5, 0.5)^5`` and ``v = u . x_tilde + N(0, 0.01)``.

    All agents share the same data distribution, so ``i`` does not change
    the law; it is kept for the per-agent oracle signature.
    """
    return ridge_transform(_as_rng(rng).random(6))


def ridge_comp_grad(x, theta, sample):
    """Exact gradient of ``(u.x - v)^2 + theta * |x|^2`` for one sample."""
    u, v = sample
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    resid = np.sum(u * x, axis=-1) - v
    return 2.0 * u * np.expand_dims(resid, -1) + 2.0 * np.asarray(theta) * x


def ridge_learn_grad(i: int, theta: float) -> float:
    return 2.0 * (theta - 0.01 * (i + 1))


class RidgeProblem(_QuadraticLearning, CoupledProblem):
    """Streaming ridge regression; a fresh ``(u, v)`` is drawn per call."""

    name = "ridge"
    p = 5
    q = 1
    comp_width = 6

    def __init__(self, n: int, learn_noise: float = 0.0):
        if n < 1:
            raise ValueError("n must be positive")
        self.n = int(n)
        self._init_learning(learn_noise)

    def comp_grad_batch(self, X, Theta, U, agents=None):
        return ridge_comp_grad(X, Theta, ridge_transform(U))

    def comp_grad_exact(self, X, Theta, agents=None):
        # E[u u^T] = I/12 and E[v u] = x_tilde / 12
        X = np.asarray(X, dtype=float)
        return 2.0 * FEATURE_VAR * (X - X_TILDE) + 2.0 * np.asarray(Theta) * X

    def comp_loss(self, X, Theta, U, agents=None):
        u, v = ridge_transform(U)
        resid = np.sum(u * X, axis=-1) - v
        return resid ** 2 + np.asarray(Theta)[..., 0] * np.sum(X * X, axis=-1)

    def optimum(self):
        x, theta = ridge_optimum(self.n)
        return x, np.array([theta])

    def analytic_constants(self) -> dict:
        """Constants evaluated at theta = theta*.

        The x-curvature of the expected loss is ``1/6 + 2 theta``; the
        variance constants are second-moment bounds of the sampled gradient
        (``M_x`` from ``Var|2 u u^T d| = (2/15) |d|^2``).
        """
        x_star, theta = ridge_optimum(self.n)
        curv = 2.0 * FEATURE_VAR + 2.0 * theta
        d = x_star - X_TILDE
        sigma_x2 = (2.0 / 15.0) * float(d @ d) + 4.0 * (5.0 / 12.0) * 0.01
        return {
            "mu_x": curv, "L_x": curv,
            "mu_theta": 2.0, "L_theta": 2.0,
            "M_x": (2.0 / 15.0) / (2.0 * FEATURE_VAR) ** 2, "M_theta": 0.0,
            "sigma_x": float(np.sqrt(sigma_x2)), "sigma_theta": self.learn_noise,
        }

    def initial_state(self):
        return np.zeros((self.n, self.p)), np.ones((self.n, self.q))

    def describe(self) -> dict:
        return {"problem": self.name, "n": self.n, "learn_noise": self.learn_noise}


# ---------------------------------------------------------------------------
# logistic regression with an unknown ridge weight


def logistic_generate_data(i: int, m_i: int, seed: int):
    """Balanced two-class sample for agent ``i``.

    Returns ``(features, labels)`` with features of shape ``(m_i, 3)``. The
    first column is the constant 1; class +1 draws its free coordinates from
    ``N((1, 0), I)`` and class -1 from ``N((0, 1), I)``.
    """
    if m_i < 2 or m_i % 2:
        raise ValueError(f"m_i must be a positive even count, got {m_i}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(i)]))
    half = m_i // 2
    pos = rng.standard_normal((half, 2)) + np.array([1.0, 0.0])
    neg = rng.standard_normal((half, 2)) + np.array([0.0, 1.0])
    feats = np.ones((m_i, 3))
    feats[:half, 1:] = pos
    feats[half:, 1:] = neg
    labels = np.concatenate([np.ones(half), -np.ones(half)])
    return feats, labels


@dataclass
class LogisticProblem(_QuadraticLearning, CoupledProblem):
    """Finite-sum logistic regression, one private dataset per agent.

    The sampled oracle picks one local sample uniformly and rescales by
    ``m_i`` so that it is unbiased for the local sum.
    """

    n: int
    m: int = 200
    data_seed: int = 0
    learn_noise: float = 0.0
    features: Optional[np.ndarray] = field(default=None, repr=False)
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    name = "logistic"
    p = 3
    q = 1
    comp_width = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.features is None:
            data = [logistic_generate_data(i, self.m, self.data_seed) for i in range(self.n)]
            self.features = np.stack([f for f, _ in data])
            self.labels = np.stack([lab for _, lab in data])
        else:
            self.features = np.asarray(self.features, dtype=float)
            self.labels = np.asarray(self.labels, dtype=float)
            if self.features.shape[:2] != self.labels.shape or self.features.shape[0] != self.n:
                raise ValueError("features must be (n, m, 3) and labels (n, m)")
            self.m = self.features.shape[1]
        self.features.setflags(write=False)
        self.labels.setflags(write=False)
        self._init_learning(self.learn_noise)
        self._eta_star = None

    def comp_grad_batch(self, X, Theta, U, agents=None):
        X = np.asarray(X, dtype=float)
        idx = self._agents(agents, X.shape[-2])
        j = np.minimum((np.asarray(U)[..., 0] * self.m).astype(np.intp), self.m - 1)
        a = np.broadcast_to(idx, j.shape)
        feats = self.features[a, j]
        lab = self.labels[a, j]
        z = lab * np.sum(feats * X, axis=-1)
        data = -(self.m * lab * expit(-z))[..., None] * feats
        return data + (np.asarray(Theta) / self.n) * X

    def comp_grad_exact(self, X, Theta, agents=None):
        X = np.asarray(X, dtype=float)
        idx = self._agents(agents, X.shape[-2])
        feats = self.features[idx]                    # (a, m, 3)
        lab = self.labels[idx]                        # (a, m)
        z = lab * np.einsum("...ak,amk->...am", X, feats)
        data = -np.einsum("...am,amk->...ak", lab * expit(-z), feats)
        return data + (np.asarray(Theta) / self.n) * X

    def comp_loss(self, X, Theta, U, agents=None):
        idx = self._agents(agents, X.shape[-2])
        j = np.minimum((np.asarray(U)[..., 0] * self.m).astype(np.intp), self.m - 1)
        a = np.broadcast_to(idx, j.shape)
        feats = self.features[a, j]
        lab = self.labels[a, j]
        z = lab * np.sum(feats * X, axis=-1)
        return (self.m * np.logaddexp(0.0, -z)
                + np.asarray(Theta)[..., 0] / (2 * self.n) * np.sum(X * X, axis=-1))

    def optimum(self):
        if self._eta_star is None:
            self._eta_star = logistic_reference_optimum(self, self.theta_star)
        return self._eta_star, np.array([self.theta_star])

    def describe(self) -> dict:
        return {"problem": self.name, "n": self.n, "m": self.m,
                "data_seed": self.data_seed, "learn_noise": self.learn_noise}


def pooled_logistic_grad(problem: LogisticProblem, eta, theta: float):
    """Gradient of ``sum_i f_i(eta, theta)`` over all agents' data."""
    feats = problem.features.reshape(-1, 3)
    lab = problem.labels.reshape(-1)
    z = lab * (feats @ eta)
    return -(feats.T @ (lab * expit(-z))) + theta * eta


def pooled_logistic_loss(problem: LogisticProblem, eta, theta: float) -> float:
    feats = problem.features.reshape(-1, 3)
    lab = problem.labels.reshape(-1)
    return float(np.sum(np.logaddexp(0.0, -lab * (feats @ eta))) + 0.5 * theta * eta @ eta)


def logistic_reference_optimum(problem: LogisticProblem, theta_star: float,
                               tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Minimize the pooled objective ``sum_i f_i(eta, theta*)`` deterministically.

    Uses damped Newton steps (backtracking on the objective) and stops when
    the full gradient norm is below ``tol``.
    """
    if theta_star <= 0:
        raise ValueError("theta_star must be positive for a unique minimizer")
    feats = problem.features.reshape(-1, 3)
    lab = problem.labels.reshape(-1)
    eta = np.zeros(3)
    for _ in range(max_iter):
        g = pooled_logistic_grad(problem, eta, theta_star)
        if np.linalg.norm(g) < tol:
            return eta
        s = expit(lab * (feats @ eta))
        h = (feats * (s * (1.0 - s))[:, None]).T @ feats + theta_star * np.eye(3)
        step = np.linalg.solve(h, g)
        f0 = pooled_logistic_loss(problem, eta, theta_star)
        t = 1.0
        while t > 1e-12 and pooled_logistic_loss(problem, eta - t * step, theta_star) > f0 - 0.25 * t * (g @ step):
            t *= 0.5
        eta = eta - t * step
        if t <= 1e-12:
            # objective is flat to rounding; accept a plain Newton step
            eta = eta - step
    raise RuntimeError(f"reference optimum did not reach |grad| < {tol} in {max_iter} iterations")


# ---------------------------------------------------------------------------
# assumption diagnostics


@dataclass
class PointCheck:
    agent: int
    gap: float
    stderr: float
    variance: float
    grad_sq: float
    flagged: bool


@dataclass
class AssumptionReport:
    comp: list
    learn: list
    comp_sigma2: float
    comp_M: float
    learn_sigma2: float
    learn_M: float

    @property
    def flagged(self) -> list:
        return [c for c in self.comp + self.learn if c.flagged]

    @property
    def ok(self) -> bool:
        return not self.flagged

    def summary(self) -> str:
        worst_c = max(c.gap / c.stderr if c.stderr > 0 else 0.0 for c in self.comp)
        lines = [
            f"computational oracle: {len(self.comp)} checks, worst gap/stderr = {worst_c:.2f}",
            f"  fitted variance model: sigma^2 = {self.comp_sigma2:.4g}, M = {self.comp_M:.4g}",
            f"learning oracle: {len(self.learn)} checks",
            f"  fitted variance model: sigma^2 = {self.learn_sigma2:.4g}, M = {self.learn_M:.4g}",
            f"flagged: {len(self.flagged)}",
        ]
        return "\n".join(lines)


def _fit_variance(checks) -> tuple:
    if not checks:
        return 0.0, 0.0
    var = np.array([c.variance for c in checks])
    gsq = np.array([c.grad_sq for c in checks])
    if np.allclose(var, 0.0):
        return 0.0, 0.0
    A = np.column_stack([np.ones_like(gsq), gsq])
    (s2, m), *_ = np.linalg.lstsq(A, var, rcond=None)
    return float(max(s2, 0.0)), float(max(m, 0.0))


def _moments(sample_fn, exact, draws, chunk, rng, width):
    """Streaming mean and total variance of an oracle at a fixed point."""
    total = np.zeros_like(exact)
    total_sq = np.zeros(exact.shape[:-1])
    done = 0
    while done < draws:
        b = min(chunk, draws - done)
        U = rng.random((b,) + exact.shape[:-1] + (width,))
        # center on the exact value to keep the variance sum well-conditioned
        g = sample_fn(U) - exact
        total += g.sum(axis=0)
        total_sq += np.sum(g * g, axis=(0, -1))
        done += b
    mean_dev = total / draws
    var = total_sq / draws - np.sum(mean_dev ** 2, axis=-1)
    return mean_dev, np.maximum(var, 0.0) * draws / max(draws - 1, 1)


def validate_assumptions(problem: CoupledProblem, points: int = 10, draws: int = 100_000,
                         seed: int = 0, scale: float = 1.0, chunk: int = 10_000,
                         z_max: float = 4.0) -> AssumptionReport:
    """Monte Carlo check of oracle unbiasedness and bounded variance.

    At each random point every agent's oracle is sampled ``draws`` times.
    A check is flagged when ``|mean - exact| > z_max * stderr``; the
    per-point total variances are regressed on ``|grad|^2`` to fit
    ``(sigma^2, M)``.
    """
    rng = np.random.default_rng(seed)
    opt = problem.optimum()
    x0 = opt[0] if opt is not None else np.zeros(problem.p)
    t0 = opt[1] if opt is not None else np.zeros(problem.q)
    comp, learn = [], []
    for _ in range(points):
        X = x0 + scale * rng.standard_normal((problem.n, problem.p))
        Theta = t0 + scale * 0.1 * rng.standard_normal((problem.n, problem.q))
        exact = problem.comp_grad_exact(X, Theta)
        dev, var = _moments(lambda U: problem.comp_grad_batch(X, Theta, U), exact,
                            draws, chunk, rng, problem.comp_width)
        comp += _checks(dev, var, exact, draws, z_max)

        exact_l = problem.learn_grad_exact(Theta)
        if problem.learn_width:
            dev, var = _moments(lambda U: problem.learn_grad_batch(Theta, U), exact_l,
                                draws, chunk, rng, problem.learn_width)
        else:
            g = problem.learn_grad_batch(Theta, np.zeros(Theta.shape[:-1] + (0,)))
            dev, var = g - exact_l, np.zeros(problem.n)
        learn += _checks(dev, var, exact_l, draws, z_max)

    cs, cm = _fit_variance(comp)
    ls, lm = _fit_variance(learn)
    return AssumptionReport(comp, learn, cs, cm, ls, lm)


def _checks(dev, var, exact, draws, z_max):
    out = []
    for i in range(dev.shape[0]):
        gap = float(np.linalg.norm(dev[i]))
        se = float(np.sqrt(var[i] / draws))
        flagged = gap > z_max * se if se > 0 else gap > 1e-12
        out.append(PointCheck(i, gap, se, float(var[i]), float(exact[i] @ exact[i]), bool(flagged)))
    return out
