"""Variational QNN and hybrid QNN classifiers trained with parameter-shift gradients."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .encode import (
    AnsatzSpec,
    EncoderConfig,
    build_ansatz,
    encoding_angles,
    encoding_template,
    entangler_gates,
)
from .simcore import Circuit, Observable, expectation_batch, run_batch, z_expectations, zero_batch

log = logging.getLogger(__name__)

SHIFT = np.pi / 2
PROB_CLAMP = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 1e-4
    shots: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1 when given")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClassicalHead:
    W: np.ndarray
    b: np.ndarray

    @property
    def num_params(self) -> int:
        return self.W.size + self.b.size

    @classmethod
    def init(cls, outputs: int, readouts: int, rng: np.random.Generator) -> "ClassicalHead":
        limit = np.sqrt(6.0 / (outputs + readouts))
        return cls(rng.uniform(-limit, limit, size=(outputs, readouts)), np.zeros(outputs))


@dataclass
class QnnModel:
    """Encoder + ansatz + readout observables, with an optional linear head.

    Without a head the model reads a single observable (``Z`` on qubit 0 by
    default) and classifies by its sign. With a head the readouts feed two
    logits ``W f + b``.
    """

    ansatz: AnsatzSpec
    theta: np.ndarray
    encoder: EncoderConfig
    observables: tuple = ()
    head: ClassicalHead | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (self.ansatz.num_params,):
            raise ValueError(
                f"theta must have {self.ansatz.num_params} entries, got {self.theta.size}"
            )
        if self.encoder.num_qubits != self.ansatz.num_qubits:
            raise ValueError("encoder and ansatz widths differ")
        if not self.observables:
            n = self.ansatz.num_qubits
            qubits = range(n) if self.head is not None else (0,)
            self.observables = tuple(Observable.z(q) for q in qubits)
        self.observables = tuple(self.observables)
        if self.head is not None and self.head.W.shape[1] != len(self.observables):
            raise ValueError("head width does not match the number of readouts")

    @property
    def num_qubits(self) -> int:
        return self.ansatz.num_qubits

    @property
    def quantum_params(self) -> int:
        return self.ansatz.num_params

    @property
    def classical_params(self) -> int:
        return 0 if self.head is None else self.head.num_params

    def footprint(self) -> dict:
        return {
            "qubits": self.num_qubits,
            "layers": self.ansatz.layers,
            "classical_params": self.classical_params,
            "quantum_params": self.quantum_params,
        }

    def to_dict(self) -> dict:
        return {
            "kind": "hybrid_qnn" if self.head is not None else "qnn",
            "ansatz": self.ansatz.to_dict(),
            "encoder": self.encoder.to_dict(),
            "theta": self.theta.tolist(),
            "observables": [list(map(list, o.terms)) for o in self.observables],
            "W": None if self.head is None else self.head.W.tolist(),
            "b": None if self.head is None else self.head.b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QnnModel":
        head = None
        if d.get("W") is not None:
            head = ClassicalHead(np.array(d["W"], dtype=float), np.array(d["b"], dtype=float))
        obs = tuple(Observable(tuple((c, p) for c, p in terms)) for terms in d["observables"])
        return cls(AnsatzSpec(**d["ansatz"]), np.array(d["theta"]), EncoderConfig(**d["encoder"]),
                   obs, head)


def make_qnn(num_qubits: int = 8, layers: int = 6, hybrid: bool = False, seed: int = 0,
             encoder: EncoderConfig | None = None, entangler: str = "RING_CNOT",
             reupload: bool = False) -> QnnModel:
    """Fresh model with ``theta ~ U(-0.1, 0.1)`` and, for hybrids, a 2-logit head."""
    rng = np.random.default_rng(seed)
    spec = AnsatzSpec(num_qubits, layers, entangler, reupload)
    theta = rng.uniform(-0.1, 0.1, size=spec.num_params)
    head = ClassicalHead.init(2, num_qubits, rng) if hybrid else None
    encoder = encoder or EncoderConfig(num_qubits=num_qubits)
    return QnnModel(spec, theta, encoder, (), head)


# ---------------------------------------------------------------------------
# circuit layout


@dataclass(frozen=True)
class _Layout:
    circuit: Circuit
    enc_offsets: tuple[int, ...]
    enc_width: int
    param_cols: np.ndarray  # gate index of every trainable parameter
    layer_starts: tuple[int, ...]  # first gate of each ansatz layer (incl. its re-upload block)


def _layout(model: QnnModel) -> _Layout:
    key = (model.ansatz, model.encoder)
    hit = model._cache.get("layout")
    if hit is not None and hit[0] == key:
        return hit[1]
    enc = encoding_template(model.encoder)
    ans = build_ansatz(model.ansatz, np.zeros(model.ansatz.num_params), encoding=enc)
    circuit = enc + ans
    ge = len(enc.gates)
    n = model.ansatz.num_qubits
    per_layer = n + len(entangler_gates(n, model.ansatz.entangler))
    offsets = [0]
    starts = []
    pos = ge
    for layer in range(model.ansatz.layers):
        starts.append(pos)
        if model.ansatz.reupload and layer > 0:
            offsets.append(pos)
            pos += ge
        pos += per_layer
    assert pos == len(circuit.gates)
    cols = np.zeros(circuit.num_params, dtype=int)
    for g, p in circuit.param_slots:
        cols[p] = g
    layout = _Layout(circuit, tuple(offsets), ge, cols, tuple(starts))
    model._cache["layout"] = (key, layout)
    return layout


def _angle_table(layout: _Layout, enc_angles: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    rows = len(enc_angles)
    table = np.zeros((rows, len(layout.circuit.gates)))
    for off in layout.enc_offsets:
        table[:, off : off + layout.enc_width] = enc_angles
    table[:, layout.param_cols] = thetas
    return table


def _readouts_from_states(states: np.ndarray, model: QnnModel, shots=None, rng=None) -> np.ndarray:
    n = model.num_qubits
    z_only = all(
        len(o.terms) == 1 and set(o.terms[0][1]) <= {"I", "Z"} and o.terms[0][1].count("Z") == 1
        for o in model.observables
    )
    if shots is None:
        if z_only:
            zs = z_expectations(states, n)
            cols = [o.terms[0][1].index("Z") for o in model.observables]
            coeffs = np.array([o.terms[0][0] for o in model.observables])
            return zs[:, cols] * coeffs
        return np.stack([expectation_batch(states, o, n) for o in model.observables], axis=1)
    if not all(set(p) <= {"I", "Z"} for o in model.observables for _, p in o.terms):
        raise ValueError("shot mode supports diagonal (I/Z) observables only")
    probs = np.abs(states) ** 2
    probs /= probs.sum(axis=1, keepdims=True)
    counts = rng.multinomial(shots, probs)
    freqs = counts / shots
    idx = np.arange(2**n)
    out = np.zeros((len(states), len(model.observables)))
    for c, o in enumerate(model.observables):
        for coeff, pauli in o.terms:
            sign = np.ones(2**n)
            for q, letter in enumerate(pauli):
                if letter == "Z":
                    sign *= 1.0 - 2.0 * ((idx >> q) & 1)
            out[:, c] += coeff * (freqs @ sign)
    return out


def readouts(X, model: QnnModel, theta=None, shots=None, rng=None) -> np.ndarray:
    """Observable expectations ``f(x; theta)`` for every row of ``X``, shape ``(n, C)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    layout = _layout(model)
    theta = model.theta if theta is None else np.asarray(theta, dtype=float)
    enc = encoding_angles(X, model.encoder)
    table = _angle_table(layout, enc, np.broadcast_to(theta, (len(X), len(theta))))
    states = run_batch(layout.circuit, zero_batch(model.num_qubits, len(X)), table)
    return _readouts_from_states(states, model, shots, rng)


def readout_jacobian(X, model: QnnModel, shots=None, rng=None):
    """Readouts and their parameter-shift derivatives.

    Returns ``(f, J)`` with ``f`` of shape ``(n, C)`` and ``J[i, c, k]`` the
    derivative of readout ``c`` on sample ``i`` with respect to ``theta[k]``,
    computed as ``(f(theta_k + pi/2) - f(theta_k - pi/2)) / 2``. Shifted
    circuits restart from the cached state entering the shifted parameter's
    layer, so the shared prefix is simulated once.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    layout = _layout(model)
    n_s = len(X)
    N = model.num_qubits
    P = model.quantum_params
    C = len(model.observables)
    theta = model.theta
    enc = encoding_angles(X, model.encoder)
    base = _angle_table(layout, enc, np.broadcast_to(theta, (n_s, P)))

    # forward pass, caching the state entering every layer
    states = run_batch(
        Circuit(N, layout.circuit.gates[: layout.layer_starts[0]]), zero_batch(N, n_s),
        base[:, : layout.layer_starts[0]],
    )
    entering = []
    bounds = list(layout.layer_starts) + [len(layout.circuit.gates)]
    for layer in range(model.ansatz.layers):
        entering.append(states)
        seg = Circuit(N, layout.circuit.gates[bounds[layer] : bounds[layer + 1]])
        states = run_batch(seg, states, base[:, bounds[layer] : bounds[layer + 1]])
    f = _readouts_from_states(states, model, shots, rng)

    J = np.zeros((n_s, C, P))
    for layer in range(model.ansatz.layers):
        ks = np.arange(layer * N, (layer + 1) * N)
        # rows ordered (sample, param, +/-)
        start = np.repeat(entering[layer], 2 * N, axis=0)
        table = np.repeat(base, 2 * N, axis=0)
        shift = np.tile(np.array([SHIFT, -SHIFT]), N)
        cols = np.repeat(layout.param_cols[ks], 2)
        table[np.arange(len(table)), np.tile(cols, n_s)] += np.tile(shift, n_s)
        out = run_batch(layout.circuit, start, table, start=bounds[layer])
        vals = _readouts_from_states(out, model, shots, rng).reshape(n_s, N, 2, C)
        J[:, :, ks] = (0.5 * (vals[:, :, 0, :] - vals[:, :, 1, :])).transpose(0, 2, 1)
    return f, J


def param_shift_grad(x, model: QnnModel, k: int, shots=None, rng=None) -> np.ndarray:
    """Derivative of every readout with respect to ``theta[k]`` for a single input."""
    if not 0 <= k < model.quantum_params:
        raise IndexError(f"parameter index {k} out of range 0..{model.quantum_params - 1}")
    x = np.asarray(x, dtype=float)[None, :]
    plus = model.theta.copy()
    minus = model.theta.copy()
    plus[k] += SHIFT
    minus[k] -= SHIFT
    f_plus = readouts(x, model, plus, shots, rng)[0]
    f_minus = readouts(x, model, minus, shots, rng)[0]
    return 0.5 * (f_plus - f_minus)


# ---------------------------------------------------------------------------
# link, loss and gradients


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits_from_readouts(f: np.ndarray, model: QnnModel) -> np.ndarray:
    """Two logits (normal, attack). Pure models use ``(-f0, +f0)``."""
    if model.head is None:
        return np.stack([-f[:, 0], f[:, 0]], axis=1)
    return f @ model.head.W.T + model.head.b


def qnn_forward(x, model: QnnModel) -> np.ndarray:
    """Readouts for a pure model, logits for a hybrid one."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.encoder.num_qubits,):
        raise ValueError(f"expected {model.encoder.num_qubits} features, got {x.shape}")
    f = readouts(x[None, :], model)
    if model.head is None:
        return f[0]
    return logits_from_readouts(f, model)[0]


def decision_scores(X, model: QnnModel) -> np.ndarray:
    """Continuous attack score; ``>= 0`` means attack."""
    logits = logits_from_readouts(readouts(X, model), model)
    return logits[:, 1] - logits[:, 0]


def predict(X, model: QnnModel) -> np.ndarray:
    return np.where(decision_scores(X, model) >= 0, 1, -1)


def _class_index(y) -> np.ndarray:
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be in {-1, +1}")
    return (y > 0).astype(int)


def cross_entropy(probs: np.ndarray, cls: np.ndarray) -> tuple[float, int]:
    p_true = probs[np.arange(len(cls)), cls]
    clamps = int(np.sum(p_true < PROB_CLAMP))
    if clamps:
        log.debug("clamped %d true-class probabilities at %g", clamps, PROB_CLAMP)
    return float(-np.mean(np.log(np.maximum(p_true, PROB_CLAMP)))), clamps


def decay_term(model: QnnModel, lam: float) -> float:
    sq = float(model.theta @ model.theta)
    if model.head is not None:
        sq += float(np.sum(model.head.W**2) + np.sum(model.head.b**2))
    return 0.5 * lam * sq


def loss(X, y, model: QnnModel, lam: float) -> float:
    X = np.atleast_2d(X)
    if len(X) == 0:
        raise ValueError("empty batch")
    probs = softmax(logits_from_readouts(readouts(X, model), model))
    ce, _ = cross_entropy(probs, _class_index(y))
    return ce + decay_term(model, lam)


def loss_and_grad(X, y, model: QnnModel, lam: float, shots=None, rng=None):
    """Loss plus gradients for ``theta`` (parameter shift) and head ``W, b`` (backprop)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cls = _class_index(y)
    f, J = readout_jacobian(X, model, shots, rng)
    probs = softmax(logits_from_readouts(f, model))
    ce, _ = cross_entropy(probs, cls)
    value = ce + decay_term(model, lam)

    d_logits = probs.copy()
    d_logits[np.arange(len(cls)), cls] -= 1.0
    d_logits /= len(cls)
    # the clamp makes the loss flat in that region
    clamped = probs[np.arange(len(cls)), cls] < PROB_CLAMP
    d_logits[clamped] = 0.0

    grads = {}
    if model.head is None:
        d_f = (d_logits[:, 1] - d_logits[:, 0])[:, None]
    else:
        d_f = d_logits @ model.head.W
        grads["W"] = d_logits.T @ f + lam * model.head.W
        grads["b"] = d_logits.sum(axis=0) + lam * model.head.b
    grads["theta"] = np.einsum("ic,ick->k", d_f, J) + lam * model.theta
    return value, grads


# ---------------------------------------------------------------------------
# optimizer and training loop


class Adam:
    """Adam over a dict of named arrays."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for name, g in grads.items():
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name] = m
            self.v[name] = v
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            out[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def _with_params(model: QnnModel, params: dict) -> QnnModel:
    head = model.head
    if head is not None:
        head = ClassicalHead(params["W"], params["b"])
    return replace(model, theta=params["theta"], head=head, _cache=model._cache)


def _params(model: QnnModel) -> dict:
    out = {"theta": model.theta.copy()}
    if model.head is not None:
        out["W"] = model.head.W.copy()
        out["b"] = model.head.b.copy()
    return out


def train(X, y, model: QnnModel, config: TrainConfig, eval_fn=None):
    """Mini-batch Adam on cross-entropy with weight decay.

    Returns the trained model and a per-epoch trace (list of dicts with loss,
    training metrics, gradient norm and ``theta`` norm).
    """
    from .evalkit import confusion, metrics

    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    _class_index(y)
    rng = np.random.default_rng(config.seed)
    shot_rng = np.random.default_rng([config.seed, 1]) if config.shots else None
    opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    params = _params(model)
    trace = []
    n = len(X)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        grad_sq = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grads = loss_and_grad(X[idx], y[idx], model, config.weight_decay,
                                         config.shots, shot_rng)
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(
                    f"non-finite loss/gradient at epoch {epoch}, batch starting {start}: loss={value}"
                )
            batch_losses.append(value * len(idx))
            grad_sq.append(float(np.sum(grads["theta"] ** 2)))
            params = opt.step(params, grads)
            model = _with_params(model, params)
        preds = predict(X, model)
        m = metrics(confusion(preds, y))
        row = {
            "epoch": epoch + 1,
            "loss": float(np.sum(batch_losses) / n),
            "accuracy": m.accuracy,
            "f1": m.f1,
            "specificity": m.specificity,
            "sensitivity": m.sensitivity,
            "grad_norm": float(np.sqrt(np.mean(grad_sq))),
            "theta_norm": float(np.linalg.norm(model.theta)),
        }
        if eval_fn is not None:
            row.update(eval_fn(model))
        trace.append(row)
        log.info("epoch %d loss %.4f acc %.3f", epoch + 1, row["loss"], row["accuracy"])
    return model, trace


TRACE_COLUMNS = ("epoch", "loss", "accuracy", "f1", "specificity", "sensitivity", "grad_norm",
                 "theta_norm")
