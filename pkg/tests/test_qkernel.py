import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavqml import qkernel as qk
from uavqml.encode import EncoderConfig
from uavqml.simcore import overlap_sq, run_circuit, new_zero_state, Circuit, RY


def product_kernel(x, y, kappa=1.0):
    """Plain angle encoding factorizes: K = prod_j cos^2(kappa (x_j - y_j) / 2)."""
    return float(np.prod(np.cos(kappa * (np.asarray(x) - np.asarray(y)) / 2) ** 2))


def test_identical_inputs_give_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=8)
        assert abs(qk.kernel_exact(x, x) - 1) < 1e-10


def test_one_qubit_closed_form():
    rng = np.random.default_rng(1)
    for _ in range(100):
        x, y = rng.uniform(-np.pi, np.pi, size=(2, 1))
        kappa = rng.uniform(0.2, 2.0)
        cfg = EncoderConfig(num_qubits=1, scale=kappa)
        expected = np.cos(kappa * (x[0] - y[0]) / 2) ** 2
        assert abs(qk.kernel_exact(x, y, cfg) - expected) < 1e-10
        # cross-check against a hand-built pair of rotation states
        a = run_circuit(Circuit(1, [RY(0, kappa * x[0])]), new_zero_state(1))
        b = run_circuit(Circuit(1, [RY(0, kappa * y[0])]), new_zero_state(1))
        assert abs(overlap_sq(a, b) - expected) < 1e-12


def test_zero_and_pi():
    cfg = EncoderConfig(num_qubits=1)
    assert abs(qk.kernel_exact([0.0], [np.pi], cfg)) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_plain_kernel_matches_product_form_and_is_symmetric(x, y):
    cfg = EncoderConfig(num_qubits=4, scale=0.7)
    k = qk.kernel_exact(x, y, cfg)
    assert abs(k - product_kernel(x, y, 0.7)) < 1e-10
    assert k == qk.kernel_exact(y, x, cfg) or abs(k - qk.kernel_exact(y, x, cfg)) < 1e-15
    assert -1e-15 <= k <= 1.0


def test_gram_exact_entries_match_pairwise_calls():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(4, 3))
    cfg = EncoderConfig(num_qubits=3, mode="entangled", reps=2)
    G = qk.gram(X, "EXACT", cfg)
    for i in range(4):
        for j in range(4):
            assert abs(G.values[i, j] - qk.kernel_exact(X[i], X[j], cfg)) < 1e-12
    assert np.array_equal(G.values, G.values.T)
    assert np.all(np.diag(G.values) == 1.0)


def test_gram_single_point():
    assert qk.gram(np.zeros((1, 2))).values.tolist() == [[1.0]]


def test_gram_exact_is_psd():
    rng = np.random.default_rng(3)
    for mode in ("plain", "entangled"):
        X = rng.normal(size=(30, 6))
        G = qk.gram(X, "EXACT", EncoderConfig(num_qubits=6, mode=mode))
        assert G.min_eigenvalue() >= -1e-10


def test_shot_estimator_within_three_standard_errors():
    rng = np.random.default_rng(4)
    cfg = EncoderConfig(num_qubits=3)
    M = 10_000
    hits = 0
    for t in range(100):
        x, y = rng.uniform(-1.5, 1.5, size=(2, 3))
        exact = qk.kernel_exact(x, y, cfg)
        est = qk.kernel_shots(x, y, M, seed=t, config=cfg)
        se = np.sqrt(max(exact * (1 - exact), 1e-12) / M)
        hits += abs(est - exact) <= 3 * se + 1e-12
    assert hits >= 95


def test_shot_estimator_known_quarter():
    cfg = EncoderConfig(num_qubits=1)
    est = qk.kernel_shots([2 * np.pi / 3], [0.0], 10_000, seed=9, config=cfg)
    assert abs(est - 0.25) < 3 * np.sqrt(0.25 * 0.75 / 1e4)


def test_shot_estimator_identical_and_seeded():
    x = np.array([0.3, -0.2])
    assert qk.kernel_shots(x, x, 17, seed=0) == 1.0
    y = np.array([1.0, 0.4])
    assert qk.kernel_shots(x, y, 500, 3) == qk.kernel_shots(x, y, 500, 3)


def test_shot_estimator_is_unbiased_on_average():
    x, y = np.array([0.9, -0.4]), np.array([-0.5, 0.6])
    exact = qk.kernel_exact(x, y)
    est = np.mean([qk.kernel_shots(x, y, 200, seed=s) for s in range(400)])
    assert abs(est - exact) < 4 * np.sqrt(exact * (1 - exact) / (200 * 400))


def test_gram_shots_uses_pair_seeds():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(4, 2))
    cfg = EncoderConfig(num_qubits=2)
    G = qk.gram(X, "SHOTS", cfg, seed=13, shots=300)
    for i in range(4):
        for j in range(i, 4):
            ref = qk.kernel_shots(X[i], X[j], 300, qk.pair_seed(13, i, j), cfg)
            assert G.values[i, j] == ref == G.values[j, i]
    assert G.mode_label == "SHOTS(300)"


def test_repair_and_center():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(5, 5))
    S = A @ A.T
    ev, V = np.linalg.eigh(S)
    ev[0] = -0.01
    K = V @ np.diag(ev) @ V.T
    fixed = qk.repair(K, -1.0)
    assert fixed.min_eigenvalue() >= 0
    assert fixed.jitter == pytest.approx(0.01 + qk.AUTO_JITTER_MARGIN)
    assert np.array_equal(qk.repair(np.eye(3), 0.0).values, np.eye(3))
    assert np.allclose(np.diag(qk.repair(np.eye(3), 0.1).values), 1.1)
    assert qk.center(np.ones((1, 1))).values.tolist() == [[0.0]]
    assert np.allclose(qk.center(np.full((4, 4), 2.5)).values, 0)
    C = qk.center(S[:4, :4])
    assert np.max(np.abs(C.values.sum(1))) < 1e-9


def test_gram_csv_round_trip():
    G = qk.gram(np.random.default_rng(7).normal(size=(3, 2)), "SHOTS", seed=1, shots=64)
    back = qk.GramMatrix.from_csv(G.to_csv())
    assert np.array_equal(back.values, G.values)
    assert back.mode == "SHOTS" and back.shots == 64


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        qk.kernel_exact([0.0, 1.0], [0.0])
    with pytest.raises(ValueError):
        qk.gram(np.zeros((2, 2)), "SHOTS")
    with pytest.raises(ValueError):
        qk.repair(np.zeros((2, 3)), 0.0)
