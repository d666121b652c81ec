"""Quantum-trained hypernetwork.

An input-independent circuit ``U(theta)|0...0>`` produces a basis-state
distribution ``p``; the first ``M`` probabilities become the weights of a small
MLP through ``w = beta * (2**N * p - 1)``. Only ``theta`` is trained.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .encode import AnsatzSpec, build_ansatz
from .simcore import run_batch, zero_batch
from .vqc import PROB_CLAMP, SHIFT, Adam, TrainConfig, TrainingError, cross_entropy, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QtArch:
    """MLP ``input -> h -> h -> outputs`` with tanh hidden units, driven by an N-qubit generator."""

    hidden: int
    circuit_layers: int
    input_dim: int = 8
    outputs: int = 2
    entangler: str = "RING_CNOT"

    def __post_init__(self):
        if min(self.hidden, self.circuit_layers, self.input_dim, self.outputs) < 1:
            raise ValueError("architecture sizes must be positive")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        h = self.hidden
        return [(h, self.input_dim), (h, h), (self.outputs, h)]

    @property
    def classical_params(self) -> int:
        return sum(o * i + o for o, i in self.shapes)

    @property
    def num_qubits(self) -> int:
        return max(1, math.ceil(math.log2(self.classical_params)))

    @property
    def quantum_params(self) -> int:
        return self.num_qubits * self.circuit_layers

    @property
    def ansatz(self) -> AnsatzSpec:
        return AnsatzSpec(self.num_qubits, self.circuit_layers, self.entangler)

    def footprint(self) -> dict:
        return {
            "qubits": self.num_qubits,
            "layers": self.circuit_layers,
            "classical_params": self.classical_params,
            "quantum_params": self.quantum_params,
        }

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class QtnnModel:
    arch: QtArch
    theta: np.ndarray
    beta: float = 1.0

    def weights(self) -> np.ndarray:
        return generated_weights(self.theta, self.arch, self.beta)

    def footprint(self) -> dict:
        return self.arch.footprint()

    def to_dict(self) -> dict:
        return {"kind": "qtnn", "arch": self.arch.to_dict(), "theta": self.theta.tolist(),
                "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "QtnnModel":
        return cls(QtArch(**d["arch"]), np.array(d["theta"], dtype=float), d["beta"])


def generate_probs(theta, num_qubits: int, layers: int, entangler: str = "RING_CNOT") -> np.ndarray:
    spec = AnsatzSpec(num_qubits, layers, entangler)
    circuit = build_ansatz(spec, theta)
    state = run_batch(circuit, zero_batch(num_qubits, 1))[0]
    return np.abs(state) ** 2


def _shifted_probs(theta, spec: AnsatzSpec) -> np.ndarray:
    """Rows: base, then ``theta_k +/- pi/2`` for k = 0..P-1 (plus before minus)."""
    P = spec.num_params
    circuit = build_ansatz(spec, theta)
    cols = np.array([g for g, _ in sorted(circuit.param_slots, key=lambda s: s[1])])
    table = np.tile(circuit.angles(), (1 + 2 * P, 1))
    rows = 1 + np.arange(2 * P)
    table[rows, np.repeat(cols, 2)] += np.tile([SHIFT, -SHIFT], P)
    states = run_batch(circuit, zero_batch(spec.num_qubits, len(table)), table)
    return np.abs(states) ** 2


def map_weights(probs, arch: QtArch, beta: float = 1.0) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    dim = len(probs)
    M = arch.classical_params
    if dim < M:
        raise ValueError(f"{dim} basis probabilities cannot cover {M} network parameters")
    return beta * (dim * probs[:M] - 1.0)


def generated_weights(theta, arch: QtArch, beta: float = 1.0) -> np.ndarray:
    return map_weights(generate_probs(theta, arch.num_qubits, arch.circuit_layers, arch.entangler),
                       arch, beta)


def unpack(weights, arch: QtArch) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector layer by layer: row-major weight matrix, then bias."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (arch.classical_params,):
        raise ValueError(f"expected {arch.classical_params} weights, got {weights.shape}")
    layers = []
    pos = 0
    for out_dim, in_dim in arch.shapes:
        W = weights[pos : pos + out_dim * in_dim].reshape(out_dim, in_dim)
        pos += out_dim * in_dim
        b = weights[pos : pos + out_dim]
        pos += out_dim
        layers.append((W, b))
    return layers


def mlp_forward(X, weights, arch: QtArch) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != arch.input_dim:
        raise ValueError(f"expected {arch.input_dim} features, got {X.shape[1]}")
    (W1, b1), (W2, b2), (W3, b3) = unpack(weights, arch)
    h1 = np.tanh(X @ W1.T + b1)
    h2 = np.tanh(h1 @ W2.T + b2)
    out = h2 @ W3.T + b3
    return out[0] if single else out


def _mlp_loss_grad(X, cls, weights, arch: QtArch):
    """Cross-entropy of the MLP and its gradient with respect to the flat weights."""
    (W1, b1), (W2, b2), (W3, b3) = unpack(weights, arch)
    h1 = np.tanh(X @ W1.T + b1)
    h2 = np.tanh(h1 @ W2.T + b2)
    logits = h2 @ W3.T + b3
    probs = softmax(logits)
    ce, _ = cross_entropy(probs, cls)
    n = len(cls)
    d3 = probs.copy()
    d3[np.arange(n), cls] -= 1.0
    d3 /= n
    d3[probs[np.arange(n), cls] < PROB_CLAMP] = 0.0
    gW3 = d3.T @ h2
    gb3 = d3.sum(0)
    d2 = (d3 @ W3) * (1 - h2**2)
    gW2 = d2.T @ h1
    gb2 = d2.sum(0)
    d1 = (d2 @ W2) * (1 - h1**2)
    gW1 = d1.T @ X
    gb1 = d1.sum(0)
    grad = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2, gW3.ravel(), gb3])
    return ce, grad


def _labels_to_class(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be in {-1, +1}")
    return (y > 0).astype(int)


def qt_loss_and_grad(theta, X, y, arch: QtArch, beta: float = 1.0, lam: float = 0.0):
    """Composite loss and its gradient with respect to the circuit angles.

    Chain rule: dL/dtheta_k = sum_i dL/dw_i * beta * 2**N * dp_i/dtheta_k, with
    every dp_i/dtheta_k read off the same pair of shifted probability vectors.
    """
    theta = np.asarray(theta, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cls = _labels_to_class(y)
    spec = arch.ansatz
    probs = _shifted_probs(theta, spec)
    base = probs[0]
    M = arch.classical_params
    dim = len(base)
    weights = map_weights(base, arch, beta)
    ce, dL_dw = _mlp_loss_grad(X, cls, weights, arch)
    plus = probs[1::2, :M]
    minus = probs[2::2, :M]
    dp = 0.5 * (plus - minus)  # (P, M)
    grad = beta * dim * (dp @ dL_dw) + lam * theta
    value = ce + 0.5 * lam * float(theta @ theta)
    return value, grad


def init_theta(arch: QtArch, rng: np.random.Generator) -> np.ndarray:
    """Start near the uniform distribution so the generated weights start near zero.

    First-layer angles sit at ``pi/2`` (Hadamard-like), later layers near 0.
    """
    theta = rng.uniform(-0.1, 0.1, size=arch.quantum_params)
    theta[: arch.num_qubits] += np.pi / 2
    return theta


def qt_train(X, y, arch: QtArch, config: TrainConfig, beta: float = 1.0, theta0=None):
    from .evalkit import confusion, metrics

    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    _labels_to_class(y)
    rng = np.random.default_rng(config.seed)
    theta = init_theta(arch, rng) if theta0 is None else np.asarray(theta0, dtype=float).copy()
    opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    trace = []
    n = len(X)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        grad_sq = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grad = qt_loss_and_grad(theta, X[idx], y[idx], arch, beta, config.weight_decay)
            if not np.isfinite(value) or not np.all(np.isfinite(grad)):
                raise TrainingError(f"non-finite loss at epoch {epoch}: {value}")
            total += value * len(idx)
            grad_sq.append(float(grad @ grad))
            theta = opt.step({"theta": theta}, {"theta": grad})["theta"]
        model = QtnnModel(arch, theta, beta)
        preds = qt_predict(X, model)
        m = metrics(confusion(preds, y))
        trace.append({
            "epoch": epoch + 1,
            "loss": total / n,
            "accuracy": m.accuracy,
            "f1": m.f1,
            "specificity": m.specificity,
            "sensitivity": m.sensitivity,
            "grad_norm": float(np.sqrt(np.mean(grad_sq))),
            "theta_norm": float(np.linalg.norm(theta)),
        })
        log.info("qtnn epoch %d loss %.4f acc %.3f", epoch + 1, total / n, m.accuracy)
    return QtnnModel(arch, theta, beta), trace


def qt_scores(X, model: QtnnModel) -> np.ndarray:
    logits = np.atleast_2d(mlp_forward(X, model.weights(), model.arch))
    return logits[:, 1] - logits[:, 0]


def qt_predict(X, model: QtnnModel) -> np.ndarray:
    return np.where(qt_scores(X, model) >= 0, 1, -1)
