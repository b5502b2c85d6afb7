import numpy as np
import pytest
from scipy import integrate
from scipy.special import expit

from cdsa.problems import (
    X_TILDE,
    LogisticProblem,
    RidgeProblem,
    logistic_generate_data,
    logistic_reference_optimum,
    pooled_logistic_grad,
    ridge_comp_grad,
    ridge_learn_grad,
    ridge_optimum,
    ridge_sample,
    ridge_transform,
    validate_assumptions,
)


# -- ridge sampling ---------------------------------------------------------

@pytest.fixture(scope="module")
def ridge_draws():
    rng = np.random.default_rng(11)
    return ridge_transform(rng.random((1_000_000, 6)))


def test_ridge_feature_mean(ridge_draws):
    u, _ = ridge_draws
    se = np.sqrt(1 / 12 / len(u))
    assert np.all(np.abs(u.mean(axis=0)) < 3 * se)


def test_ridge_feature_covariance(ridge_draws):
    u, _ = ridge_draws
    n = len(u)
    cov = u.T @ u / n
    # Var(u^2) = 1/80 - 1/144 on the diagonal; sd(u_i u_j) = 1/12 off it
    se_diag = np.sqrt((1 / 80 - 1 / 144) / n)
    se_off = (1 / 12) / np.sqrt(n)
    assert np.all(np.abs(np.diag(cov) - 1 / 12) < 3 * se_diag)
    off = cov[~np.eye(5, dtype=bool)]
    assert np.all(np.abs(off) < 3 * se_off)


def test_ridge_output_given_features():
    rng = np.random.default_rng(3)
    U = rng.random((100_000, 6))
    U[:, :5] = np.array([0.1, 0, 0, 0, 0]) + 0.5
    _, v = ridge_transform(U)
    assert abs(v.mean() - 0.1) < 3 * 0.1 / np.sqrt(len(v))
    assert v.std() == pytest.approx(0.1, rel=0.02)


def test_ridge_sample_is_deterministic_in_rng():
    a = ridge_sample(0, np.random.default_rng(5))
    b = ridge_sample(0, np.random.default_rng(5))
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1] == b[1]


# -- ridge gradients ----------------------------------------------------------

def test_ridge_grad_at_origin():
    u, v = np.array([0.1, -0.2, 0.3, 0.0, 0.4]), 0.7
    np.testing.assert_allclose(ridge_comp_grad(np.zeros(5), 0.5, (u, v)), -2 * u * v)


def test_ridge_grad_hand_value():
    g = ridge_comp_grad(np.array([1.0, 0, 0, 0, 0]), 0.0, (np.array([0.5, 0, 0, 0, 0]), 1.0))
    np.testing.assert_allclose(g, [-0.5, 0, 0, 0, 0])


def test_ridge_grad_unbiased_at_optimum():
    x_star, theta = ridge_optimum(10)
    rng = np.random.default_rng(17)
    g = ridge_comp_grad(x_star, theta, ridge_transform(rng.random((1_000_000, 6))))
    se = g.std(axis=0) / np.sqrt(len(g))
    assert np.all(np.abs(g.mean(axis=0)) < 3 * se)


def test_ridge_learn_grad_values():
    assert ridge_learn_grad(3, 0.04) == 0.0
    assert ridge_learn_grad(0, 1.0) == pytest.approx(1.98)
    n = 10
    theta = 0.005 * (n + 1)
    assert sum(ridge_learn_grad(i, theta) for i in range(n)) == pytest.approx(0.0, abs=1e-14)


def test_problem_learn_oracle_matches_function():
    prob = RidgeProblem(10)
    assert prob.learn_grad(0, [1.0])[0] == pytest.approx(1.98)
    noisy = RidgeProblem(10, learn_noise=0.3)
    assert noisy.learn_grad(0, [1.0], np.random.default_rng(0))[0] != pytest.approx(1.98)


# -- ridge optimum ------------------------------------------------------------

def test_ridge_theta_star():
    assert ridge_optimum(10)[1] == pytest.approx(0.055)


def test_ridge_x_star_values():
    np.testing.assert_allclose(ridge_optimum(10)[0],
                               [0.602410, 1.807229, 3.012048, 2.409639, 5.421687], atol=1e-6)


def test_ridge_x_star_against_normal_equations():
    # E[u u^T] by quadrature, then solve (E[uu^T] + theta I) x = E[uu^T] x_tilde
    var = integrate.quad(lambda t: t * t, -0.5, 0.5)[0]
    for n in (1, 10, 25):
        x_star, theta = ridge_optimum(n)
        A = var * np.eye(5)
        x_ref = np.linalg.solve(A + theta * np.eye(5), A @ X_TILDE)
        np.testing.assert_allclose(x_star, x_ref, rtol=1e-12)


def test_ridge_unregularized_recovers_target():
    from cdsa.problems import ridge_x_of_theta

    np.testing.assert_allclose(ridge_x_of_theta(0.0), X_TILDE)


def test_ridge_exact_gradient_vanishes_at_optimum():
    prob = RidgeProblem(10)
    x_star, th = prob.optimum()
    g = prob.comp_grad_exact(np.tile(x_star, (10, 1)), np.tile(th, (10, 1)))
    np.testing.assert_allclose(g, 0.0, atol=1e-14)
    assert prob.learn_grad_exact(np.tile(th, (10, 1))).sum() == pytest.approx(0.0, abs=1e-14)


# -- logistic data ------------------------------------------------------------

def test_logistic_small_dataset():
    f, lab = logistic_generate_data(0, 4, seed=1)
    assert f.shape == (4, 3)
    assert np.all(f[:, 0] == 1.0)
    assert sorted(lab.tolist()) == [-1, -1, 1, 1]


def test_logistic_rejects_odd_count():
    with pytest.raises(ValueError):
        logistic_generate_data(0, 5, seed=1)


def test_logistic_class_means():
    f, lab = logistic_generate_data(2, 200_000, seed=9)
    pos = f[lab == 1, 1:]
    se = 1 / np.sqrt(len(pos))
    assert np.all(np.abs(pos.mean(axis=0) - [1.0, 0.0]) < 3 * se)
    neg = f[lab == -1, 1:]
    assert np.all(np.abs(neg.mean(axis=0) - [0.0, 1.0]) < 3 * se)


def test_logistic_data_is_deterministic():
    a = logistic_generate_data(3, 50, seed=4)
    b = logistic_generate_data(3, 50, seed=4)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    c = logistic_generate_data(4, 50, seed=4)
    assert a[0].tobytes() != c[0].tobytes()


def test_logistic_problem_labels_and_bias():
    prob = LogisticProblem(6, m=20, data_seed=2)
    assert np.all(prob.features[..., 0] == 1.0)
    assert set(np.unique(prob.labels)) == {-1.0, 1.0}


# -- logistic gradients -------------------------------------------------------

@pytest.fixture(scope="module")
def logistic():
    return LogisticProblem(5, m=40, data_seed=3)


def test_logistic_grad_at_zero(logistic):
    i, j = 2, 7
    U = np.array([[(j + 0.5) / logistic.m]])
    g = logistic.comp_grad_batch(np.zeros((1, 3)), np.array([[0.4]]), U, agents=[i])[0]
    x, lab = logistic.features[i, j], logistic.labels[i, j]
    np.testing.assert_allclose(g, logistic.m * (-0.5 * lab * x))


def test_logistic_enumeration_equals_exact_gradient(logistic):
    rng = np.random.default_rng(0)
    eta = rng.standard_normal((logistic.n, 3))
    theta = rng.uniform(0, 1, (logistic.n, 1))
    U = ((np.arange(logistic.m) + 0.5) / logistic.m)[:, None, None] * np.ones((1, logistic.n, 1))
    mean = logistic.comp_grad_batch(eta, theta, U).mean(axis=0)
    # brute-force local sum, written independently of the oracle code
    exact = np.zeros((logistic.n, 3))
    for i in range(logistic.n):
        for j in range(logistic.m):
            x, lab = logistic.features[i, j], logistic.labels[i, j]
            exact[i] += -lab * x / (1 + np.exp(lab * x @ eta[i]))
        exact[i] += theta[i, 0] / logistic.n * eta[i]
    np.testing.assert_allclose(mean, exact, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(logistic.comp_grad_exact(eta, theta), exact, rtol=1e-10, atol=1e-10)


def test_logistic_monte_carlo_mean(logistic):
    rng = np.random.default_rng(1)
    eta = np.tile([0.2, 0.5, -0.4], (logistic.n, 1))
    theta = np.full((logistic.n, 1), 0.1)
    g = logistic.comp_grad_batch(eta, theta, rng.random((100_000, logistic.n, 1)))
    se = g.std(axis=0) / np.sqrt(len(g))
    exact = logistic.comp_grad_exact(eta, theta)
    assert np.all(np.abs(g.mean(axis=0) - exact) < 3.5 * se + 1e-12)


def test_logistic_saturated_data_term():
    feats = np.ones((1, 2, 3))
    feats[0, 0, 1:] = [1.0, 0.0]
    feats[0, 1, 1:] = [0.0, 1.0]
    labels = np.array([[1.0, -1.0]])
    prob = LogisticProblem(1, features=feats, labels=labels)
    eta = np.array([[0.0, 1e4, -1e4]])
    theta = np.array([[0.3]])
    for u in (0.1, 0.9):
        g = prob.comp_grad_batch(eta, theta, np.array([[u]]))
        np.testing.assert_allclose(g, 0.3 * eta, rtol=1e-12)


# -- logistic reference optimum -------------------------------------------------

def test_reference_optimum_stationary():
    prob = LogisticProblem(10, m=50, data_seed=5)
    eta = logistic_reference_optimum(prob, prob.theta_star)
    assert np.linalg.norm(pooled_logistic_grad(prob, eta, prob.theta_star)) < 1e-10


def _mirrored_problem(n=4, m=30, seed=2):
    rng = np.random.default_rng(seed)
    half = m // 2
    feats = np.ones((n, m, 3))
    labels = np.empty((n, m))
    for i in range(n):
        pts = rng.standard_normal((half, 2)) + [1.0, 0.0]
        feats[i, :half, 1:] = pts
        feats[i, half:, 1:] = pts[:, ::-1]
        labels[i, :half], labels[i, half:] = 1.0, -1.0
    return LogisticProblem(n, features=feats, labels=labels)


def test_reference_optimum_mirror_symmetry():
    prob = _mirrored_problem()
    eta = logistic_reference_optimum(prob, 0.2)
    assert eta[1] == pytest.approx(-eta[2], abs=1e-8)
    assert eta[0] == pytest.approx(0.0, abs=1e-8)


def test_stronger_penalty_shrinks_optimum():
    prob = LogisticProblem(5, m=40, data_seed=8)
    a = logistic_reference_optimum(prob, 0.1)
    b = logistic_reference_optimum(prob, 0.2)
    assert np.linalg.norm(b) < np.linalg.norm(a)


def test_reference_optimum_needs_positive_theta():
    with pytest.raises(ValueError):
        logistic_reference_optimum(LogisticProblem(2, m=4), 0.0)


# -- assumption diagnostics ------------------------------------------------------

@pytest.mark.invariant
def test_ridge_oracles_pass_validation():
    rep = validate_assumptions(RidgeProblem(10), points=10, draws=100_000, seed=0)
    assert rep.ok, rep.summary()
    assert rep.learn_sigma2 == 0.0
    assert all(c.variance == 0.0 for c in rep.learn)


def test_noisy_learning_oracle_variance():
    rep = validate_assumptions(RidgeProblem(4, learn_noise=0.5), points=3, draws=50_000, seed=2)
    assert rep.ok
    assert rep.learn_sigma2 == pytest.approx(0.25, rel=0.05)


class _Biased(RidgeProblem):
    def comp_grad_batch(self, X, Theta, U, agents=None):
        return super().comp_grad_batch(X, Theta, U, agents) + 1.0


def test_biased_oracle_is_flagged():
    rep = validate_assumptions(_Biased(3), points=2, draws=20_000, seed=1)
    assert not rep.ok
    assert len(rep.flagged) == 2 * 3


# -- properties ---------------------------------------------------------------------

def _fd_grad(loss, x, h=1e-6):
    g = np.zeros_like(x)
    for c in range(x.shape[-1]):
        e = np.zeros_like(x)
        e[..., c] = h
        g[..., c] = (loss(x + e) - loss(x - e)) / (2 * h)
    return g


@pytest.mark.invariant
@pytest.mark.parametrize("make", [lambda: RidgeProblem(4), lambda: LogisticProblem(4, m=30, data_seed=1)])
def test_gradients_match_finite_differences(make):
    prob = make()
    rng = np.random.default_rng(21)
    for _ in range(20):
        X = rng.standard_normal((prob.n, prob.p))
        Th = rng.uniform(0.01, 0.5, (prob.n, 1))
        U = rng.random((prob.n, prob.comp_width))
        g = prob.comp_grad_batch(X, Th, U)
        fd = _fd_grad(lambda Z: prob.comp_loss(Z, Th, U), X)
        err = np.linalg.norm(g - fd, axis=-1) / np.maximum(np.linalg.norm(g, axis=-1), 1e-8)
        assert np.all(err < 1e-5)
        gl = prob.learn_grad_exact(Th)
        fdl = _fd_grad(lambda T: prob.learn_loss(T, np.arange(prob.n))[..., 0], Th)
        assert np.all(np.abs(gl - fdl) <= 1e-5 * np.maximum(np.abs(gl), 1e-8) + 1e-9)


@pytest.mark.invariant
def test_ridge_strong_convexity():
    prob = RidgeProblem(3)
    rng = np.random.default_rng(4)
    for _ in range(100):
        theta = rng.uniform(0, 0.3)
        x, y = rng.standard_normal((2, 1, 5)) * 3
        T = np.array([[theta]])
        d = (prob.comp_grad_exact(y, T) - prob.comp_grad_exact(x, T))[0] @ (y - x)[0]
        assert d >= (1 / 6 + 2 * theta) * np.sum((y - x) ** 2) - 1e-10


@pytest.mark.invariant
def test_learning_step_contraction():
    prob = RidgeProblem(8)
    rng = np.random.default_rng(5)
    for _ in range(100):
        i = int(rng.integers(0, 8))
        step = rng.uniform(0, 1)
        th = rng.normal(0, 2)
        g = prob.learn_grad_exact(np.array([[th]]), agents=[i])[0, 0]
        after = th - step * g
        a = prob.alpha[i]
        assert abs(after - a) == pytest.approx(abs(1 - 2 * step) * abs(th - a), abs=1e-12)


@pytest.mark.invariant
def test_oracles_are_pure_functions_of_rng_state():
    for prob in (RidgeProblem(3, learn_noise=0.1), LogisticProblem(3, m=10)):
        x = np.ones(prob.p)
        a = prob.comp_grad(1, x, [0.2], np.random.default_rng(9))
        b = prob.comp_grad(1, x, [0.2], np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)
        c = prob.learn_grad(1, [0.2], np.random.default_rng(9))
        d = prob.learn_grad(1, [0.2], np.random.default_rng(9))
        np.testing.assert_array_equal(c, d)


def test_sigmoid_helper_is_the_logistic_function():
    z = np.linspace(-30, 30, 7)
    np.testing.assert_allclose(expit(z), 1 / (1 + np.exp(-z)))
