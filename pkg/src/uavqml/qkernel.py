"""Fidelity kernels ``|<phi(x)|phi(y)>|^2`` and Gram matrix utilities."""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, replace

import numpy as np

from .encode import EncoderConfig, angle_encode, encoding_angles, encoding_template
from .simcore import (
    StateVector,
    new_zero_state,
    overlap_sq,
    run_batch,
    run_circuit,
    sample_probabilities,
    zero_batch,
)

AUTO_JITTER_MARGIN = 1e-10


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    mode: str = "EXACT"
    shots: int | None = None
    jitter: float = 0.0
    centered: bool = False

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def mode_label(self) -> str:
        return "EXACT" if self.mode == "EXACT" else f"SHOTS({self.shots})"

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.values)[0])

    def condition_number(self) -> float:
        ev = np.linalg.eigvalsh(self.values)
        if ev[0] <= 0:
            return float("inf")
        return float(ev[-1] / ev[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mode", "jitter"])
        w.writerow([self.n, self.mode_label, repr(float(self.jitter))])
        for row in self.values:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GramMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["n", "mode", "jitter"]:
            raise ValueError("not a Gram matrix CSV")
        n = int(rows[1][0])
        label = rows[1][1]
        values = np.array([[float(v) for v in r] for r in rows[2 : 2 + n]])
        if values.shape != (n, n):
            raise ValueError(f"expected {n}x{n} values, got {values.shape}")
        if label == "EXACT":
            return cls(values, "EXACT", None, float(rows[1][2]))
        shots = int(label[len("SHOTS(") : -1])
        return cls(values, "SHOTS", shots, float(rows[1][2]))


def _check_pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def _config_for(x, config):
    return config or EncoderConfig(num_qubits=len(x))


def encoded_state(x, config: EncoderConfig | None = None) -> StateVector:
    config = _config_for(x, config)
    return run_circuit(angle_encode(x, config), new_zero_state(config.num_qubits))


def encoded_states(X, config: EncoderConfig) -> np.ndarray:
    """Encoded statevectors for every row of ``X``, shape ``(n, 2**N)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    tmpl = encoding_template(config)
    return run_batch(tmpl, zero_batch(config.num_qubits, len(X)), encoding_angles(X, config))


def kernel_exact(x, y, config: EncoderConfig | None = None) -> float:
    x, y = _check_pair(x, y)
    config = _config_for(x, config)
    return overlap_sq(encoded_state(x, config), encoded_state(y, config))


def _uncompute_probs(x, Y, config: EncoderConfig) -> np.ndarray:
    """Outcome distributions of ``U_E(x)^dag U_E(y)|0>`` for each row ``y`` of ``Y``."""
    Y = np.atleast_2d(Y)
    tmpl = encoding_template(config)
    fwd = run_batch(tmpl, zero_batch(config.num_qubits, len(Y)), encoding_angles(Y, config))
    inv = tmpl.inverse()
    inv_angles = -encoding_angles(np.asarray(x, dtype=float)[None, :], config)[0][::-1]
    out = run_batch(inv, fwd, np.tile(inv_angles, (len(Y), 1)))
    return np.abs(out) ** 2


def kernel_shots(x, y, shots: int, seed, config: EncoderConfig | None = None) -> float:
    """Frequency of the all-zeros outcome of the compute-uncompute circuit."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    x, y = _check_pair(x, y)
    config = _config_for(x, config)
    probs = _uncompute_probs(x, y[None, :], config)[0]
    counts = sample_probabilities(probs, shots, seed)
    return counts[0] / shots


def pair_seed(seed: int, i: int, j: int) -> np.random.SeedSequence:
    """Seed for Gram entry ``(i, j)``; independent of evaluation order."""
    return np.random.SeedSequence([int(seed), int(i), int(j)])


def gram(X, mode: str = "EXACT", config: EncoderConfig | None = None, seed: int = 0,
         shots: int | None = None) -> GramMatrix:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = len(X)
    if n == 0 or X.size == 0:
        raise ValueError("empty input")
    config = config or EncoderConfig(num_qubits=X.shape[1])
    mode = mode.upper()
    if mode == "EXACT":
        S = encoded_states(X, config)
        K = np.abs(S.conj() @ S.T) ** 2
        K = np.clip(np.triu(K, 1), 0.0, 1.0)
        K = K + K.T
        np.fill_diagonal(K, 1.0)
        return GramMatrix(K, "EXACT")
    if mode != "SHOTS":
        raise ValueError(f"unknown kernel mode {mode!r}")
    if not shots or shots < 1:
        raise ValueError("SHOTS mode needs shots >= 1")
    K = np.zeros((n, n))
    for i in range(n):
        probs = _uncompute_probs(X[i], X[i:], config)
        for off, p in enumerate(probs):
            j = i + off
            K[i, j] = sample_probabilities(p, shots, pair_seed(seed, i, j))[0] / shots
    K = np.triu(K) + np.triu(K, 1).T
    return GramMatrix(K, "SHOTS", shots)


def cross_gram(A, B, config: EncoderConfig) -> np.ndarray:
    """Exact kernel rows between query set ``A`` and reference set ``B``."""
    SA = encoded_states(A, config)
    SB = encoded_states(B, config)
    return np.clip(np.abs(SA.conj() @ SB.T) ** 2, 0.0, 1.0)


def cross_gram_shots(A, B, config: EncoderConfig, shots: int, seed: int) -> np.ndarray:
    A = np.atleast_2d(A)
    out = np.zeros((len(A), len(B)))
    for i, a in enumerate(A):
        probs = _uncompute_probs(a, B, config)
        for j, p in enumerate(probs):
            out[i, j] = sample_probabilities(p, shots, pair_seed(seed, i, j))[0] / shots
    return out


def _square(K) -> np.ndarray:
    V = K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)
    if V.ndim != 2 or V.shape[0] != V.shape[1]:
        raise ValueError(f"kernel matrix must be square, got shape {V.shape}")
    return V


def repair(K, jitter: float) -> GramMatrix:
    """Add ``jitter * I``; a negative ``jitter`` picks the smallest PSD-restoring shift."""
    V = _square(K)
    base = K if isinstance(K, GramMatrix) else GramMatrix(V)
    if jitter < 0:
        lam_min = float(np.linalg.eigvalsh(V)[0])
        jitter = max(0.0, -lam_min + AUTO_JITTER_MARGIN) if lam_min < 0 else 0.0
    if jitter == 0:
        return replace(base, values=V.copy())
    return replace(base, values=V + jitter * np.eye(len(V)), jitter=base.jitter + jitter)


def center(K) -> GramMatrix:
    V = _square(K)
    base = K if isinstance(K, GramMatrix) else GramMatrix(V)
    n = len(V)
    Hc = np.eye(n) - np.full((n, n), 1.0 / n)
    Kc = Hc @ V @ Hc
    Kc = 0.5 * (Kc + Kc.T)
    return replace(base, values=Kc, centered=True)


def gram_digest(K: GramMatrix) -> str:
    return hashlib.sha256(np.ascontiguousarray(K.values).tobytes()).hexdigest()[:16]
