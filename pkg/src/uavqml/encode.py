"""Data-encoding circuits and hardware-efficient trainable ansätze."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .simcore import CNOT, CZ, RY, Circuit, Gate, SimulationError

ENTANGLERS = ("RING_CNOT", "LINE_CNOT", "RING_CZ")
ENCODING_MODES = ("plain", "entangled")


@dataclass(frozen=True)
class EncoderConfig:
    """Angle encoding ``RY(scale * x_j)`` on qubit ``j``.

    ``mode="entangled"`` appends a CZ ring after the rotations and repeats the
    block ``reps`` times.
    """

    num_qubits: int = 8
    scale: float = 1.0
    mode: str = "plain"
    reps: int = 1

    def __post_init__(self):
        if self.mode not in ENCODING_MODES:
            raise ValueError(f"encoding mode must be one of {ENCODING_MODES}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AnsatzSpec:
    num_qubits: int
    layers: int
    entangler: str = "RING_CNOT"
    reupload: bool = False

    def __post_init__(self):
        if self.entangler not in ENTANGLERS:
            raise ValueError(f"entangler must be one of {ENTANGLERS}")
        if self.num_qubits < 1 or self.layers < 1:
            raise ValueError("num_qubits and layers must be positive")

    @property
    def num_params(self) -> int:
        return self.num_qubits * self.layers

    def to_dict(self) -> dict:
        return asdict(self)


def entangler_gates(n: int, kind: str) -> list[Gate]:
    if n < 2:
        return []
    if kind == "LINE_CNOT":
        return [CNOT(q, q + 1) for q in range(n - 1)]
    if kind == "RING_CNOT":
        return [CNOT(q, (q + 1) % n) for q in range(n)]
    # CZ is symmetric, so a 2-qubit ring would apply the same gate twice
    edges = [(q, (q + 1) % n) for q in range(n if n > 2 else 1)]
    return [CZ(a, b) for a, b in edges]


def encoding_template(config: EncoderConfig) -> Circuit:
    """Encoding gate list with zero angles; rotation ``g`` of rep ``r`` reads feature ``g``."""
    n = config.num_qubits
    gates: list[Gate] = []
    for _ in range(config.reps):
        gates.extend(RY(q, 0.0) for q in range(n))
        if config.mode == "entangled":
            gates.extend(entangler_gates(n, "RING_CZ"))
    return Circuit(n, gates)


def encoding_angles(X: np.ndarray, config: EncoderConfig) -> np.ndarray:
    """Per-row angle table for :func:`encoding_template`, shape ``(rows, gates)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = config.num_qubits
    if X.shape[1] != n:
        raise ValueError(f"feature dimension {X.shape[1]} does not match {n} qubits")
    block = config.scale * X
    if config.mode == "entangled":
        n_cz = len(entangler_gates(n, "RING_CZ"))
        block = np.hstack([block, np.zeros((X.shape[0], n_cz))])
    return np.tile(block, (1, config.reps))


def angle_encode(features, config: EncoderConfig | None = None) -> Circuit:
    config = config or EncoderConfig(num_qubits=len(np.atleast_1d(features)))
    angles = encoding_angles(np.asarray(features, dtype=float)[None, :], config)[0]
    tmpl = encoding_template(config)
    gates = [g.with_angle(a) if g.is_rotation else g for g, a in zip(tmpl.gates, angles)]
    return Circuit(config.num_qubits, gates)


def build_ansatz(spec: AnsatzSpec, theta, encoding: Circuit | None = None) -> Circuit:
    """Layered RY + entangler circuit.

    Layer ``l`` applies ``RY(theta[l*N + q])`` on every qubit ``q`` followed by
    the entangler. With ``spec.reupload`` the ``encoding`` circuit is inserted
    before every layer after the first (the model already applies it once in
    front of the ansatz).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.num_params,):
        raise SimulationError(
            f"ansatz ({spec.num_qubits} qubits, {spec.layers} layers) needs "
            f"{spec.num_params} parameters, got {theta.size}"
        )
    if spec.reupload and encoding is None:
        raise ValueError("re-uploading ansatz needs the encoding circuit")
    n = spec.num_qubits
    ent = entangler_gates(n, spec.entangler)
    gates: list[Gate] = []
    slots: list[tuple[int, int]] = []
    for layer in range(spec.layers):
        if spec.reupload and layer > 0:
            gates.extend(encoding.gates)
        for q in range(n):
            p = layer * n + q
            slots.append((len(gates), p))
            gates.append(RY(q, theta[p]))
        gates.extend(ent)
    return Circuit(n, gates, slots)
