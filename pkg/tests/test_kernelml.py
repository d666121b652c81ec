import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from uavqml import kernelml as km


def random_psd(rng, n):
    A = rng.normal(size=(n, n + 2))
    return A @ A.T / n


def random_labels(rng, n):
    y = rng.choice([-1.0, 1.0], size=n)
    y[0], y[1] = 1.0, -1.0
    return y


# ---------------------------------------------------------------- rbf

def test_rbf_values():
    assert km.rbf_kernel([1.0, 2.0], [1.0, 2.0], 0.5) == 1.0
    assert km.rbf_kernel([0.0], [1.0], 1.0) == pytest.approx(np.exp(-1))
    assert km.rbf_kernel([0.3, 1], [2, -1], 0.2) == km.rbf_kernel([2, -1], [0.3, 1], 0.2)
    X = np.random.default_rng(0).normal(size=(5, 3))
    G = km.rbf_gram(X, X, 0.4)
    for i in range(5):
        for j in range(5):
            assert G[i, j] == pytest.approx(km.rbf_kernel(X[i], X[j], 0.4), abs=1e-12)


# ---------------------------------------------------------------- ridge

def test_ridge_two_by_two_example():
    m = km.ridge_fit(np.eye(2), [1, -1], 1.0)
    assert m.alpha.tolist() == [0.5, -0.5]
    score, label = km.ridge_predict(m, [1.0, 0.0])
    assert (score, label) == (0.5, 1)
    assert km.ridge_predict(m, [0.0, 0.0]) == (0.0, 1)


def test_ridge_matches_dense_inverse():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(2, 7))
        K = random_psd(rng, n)
        y = random_labels(rng, n)
        lam = float(rng.uniform(0.01, 2))
        m = km.ridge_fit(K, y, lam)
        oracle = np.linalg.inv(K + lam * np.eye(n)) @ y
        Q = rng.normal(size=(3, n))
        np.testing.assert_allclose(km.ridge_scores(m, Q), Q @ oracle, atol=1e-8)
        assert np.linalg.norm((K + lam * np.eye(n)) @ m.alpha - y) < 1e-8


def test_ridge_large_lambda_shrinks():
    y = np.array([1.0, -1.0, 1.0])
    m = km.ridge_fit(np.eye(3) * 0.5, y, 1e6)
    np.testing.assert_allclose(m.alpha, y / 1e6, rtol=1e-5)


def test_ridge_negating_labels_negates_scores():
    rng = np.random.default_rng(2)
    K = random_psd(rng, 5)
    y = random_labels(rng, 5)
    rows = rng.normal(size=(4, 5))
    a = km.ridge_scores(km.ridge_fit(K, y, 0.3), rows)
    b = km.ridge_scores(km.ridge_fit(K, -y, 0.3), rows)
    np.testing.assert_allclose(a, -b, atol=1e-12)


def test_ridge_repairs_indefinite_kernel():
    K = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    m = km.ridge_fit(K, [1, -1], 0.5)
    assert m.jitter > 0
    assert np.all(np.isfinite(m.alpha))


def test_ridge_json_round_trip():
    m = km.ridge_fit(np.eye(2), [1, -1], 1.0, train_refs=[[0.0], [1.0]], kernel={"type": "x"})
    back = km.KernelRidgeModel.from_dict(m.to_dict())
    assert np.array_equal(back.alpha, m.alpha) and back.kernel == m.kernel


# ---------------------------------------------------------------- SMO

def qp_oracle(K, y, C):
    """Brute-force dual solve with a general-purpose constrained optimizer."""
    n = len(y)
    Q = np.outer(y, y) * K
    res = minimize(lambda a: 0.5 * a @ Q @ a - a.sum(), np.full(n, C / 2),
                   jac=lambda a: Q @ a - 1, bounds=[(0, C)] * n,
                   constraints=[{"type": "eq", "fun": lambda a: a @ y, "jac": lambda a: y}],
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 1000})
    return res.x


def test_smo_separable_points():
    X = np.array([[0.0, 0.0], [0.2, 0.1], [2.0, 2.0], [2.1, 1.8]])
    y = np.array([-1, -1, 1, 1])
    K = km.rbf_gram(X, X, 1.0)
    m = km.smo_fit(K, y, C=10.0)
    assert np.array_equal(km.sign(km.svm_scores(m, K)), y)
    margins = y * km.svm_scores(m, K)
    assert np.all(margins[m.support] >= 1 - 1e-3)


def test_smo_conflicting_duplicate_hits_box():
    K = np.ones((2, 2))
    m = km.smo_fit(K, [1, -1], C=0.1)
    assert np.any(np.isclose(np.abs(m.dual_coefs), 0.1))


def test_smo_degenerate_labels():
    with pytest.raises(km.DegenerateLabelsError):
        km.smo_fit(np.eye(3), [1, 1, 1])


def test_smo_mirror_problem_zero_bias():
    X = np.array([[-1.0, 0.3], [1.0, 0.3]])
    m = km.smo_fit(km.rbf_gram(X, X, 0.5), [-1, 1], C=1.0)
    assert abs(m.bias) < 1e-8


def test_smo_matches_qp_oracle():
    rng = np.random.default_rng(3)
    for _ in range(15):
        n = int(rng.integers(4, 10))
        X = rng.normal(size=(n, 2))
        y = random_labels(rng, n)
        K = km.rbf_gram(X, X, 0.7)
        C = float(rng.uniform(0.3, 3))
        m = km.smo_fit(K, y, C, tol=1e-8, max_passes=2000)
        a = np.abs(km.full_alpha(m))
        ref = qp_oracle(K, y, C)
        assert km.dual_objective(a, y, K) >= km.dual_objective(ref, y, K) - 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 5.0))
def test_smo_kkt_and_monotone_objective(seed, C):
    rng = np.random.default_rng(seed)
    n = 12
    X = rng.normal(size=(n, 3))
    y = random_labels(rng, n)
    K = km.rbf_gram(X, X, 0.5)
    tol = 1e-3
    m = km.smo_fit(K, y, C, tol=tol)
    alpha = np.abs(km.full_alpha(m))
    assert m.converged
    assert np.all(alpha >= 0) and np.all(alpha <= C + 1e-12)
    assert abs(alpha @ y) < 1e-9
    # the dual objective never decreases
    assert np.all(np.diff(m.trace) >= -1e-12)
    assert m.trace[-1] == pytest.approx(km.dual_objective(alpha, y, K), abs=1e-9)
    f = km.svm_scores(m, K)
    margin = y * f
    slack = 10 * tol
    free = (alpha > 1e-8) & (alpha < C - 1e-8)
    assert np.all(np.abs(margin[free] - 1) < slack)
    assert np.all(margin[alpha <= 1e-8] >= 1 - slack)
    assert np.all(margin[alpha >= C - 1e-8] <= 1 + slack)


def test_svm_scores_full_or_support_rows_and_tie_break():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(10, 2))
    y = random_labels(rng, 10)
    K = km.rbf_gram(X, X, 1.0)
    m = km.smo_fit(K, y, 1.0)
    np.testing.assert_allclose(km.svm_scores(m, K), km.svm_scores(m, K[:, m.support]))
    with pytest.raises(ValueError):
        km.svm_scores(m, np.zeros((1, 10 + 3)))
    assert km.sign(0.0) == 1


def test_svm_json_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 2))
    y = random_labels(rng, 6)
    K = km.rbf_gram(X, X, 1.0)
    m = km.smo_fit(K, y, 1.0, train_refs=X, kernel={"type": "rbf", "gamma": 1.0})
    back = km.SvmModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(km.svm_scores(back, K), km.svm_scores(m, K))
    np.testing.assert_array_equal(back.support_refs, X[m.support])
