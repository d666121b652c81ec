"""Dense statevector simulation for few-qubit circuits.

Conventions
-----------
* Qubit 0 is the least-significant bit of the basis-state integer.
* ``RY(t)|0> = cos(t/2)|0> + sin(t/2)|1>``, ``RZ(t) = diag(e^{-it/2}, e^{it/2})``,
  ``RX(t) = exp(-i t X / 2)``.
* Global phase is never observable here: every contract is stated in terms of
  probabilities, expectations or overlaps.

Besides the single-state API (:class:`StateVector`) the module exposes a batched
engine (:func:`run_batch`) that pushes many states through the same gate
sequence at once, with per-row rotation angles. Encoding a data set and
parameter-shift gradients both reduce to one batched call.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MAX_QUBITS = 12

ROTATIONS = frozenset({"RX", "RY", "RZ"})
TWO_QUBIT = frozenset({"CNOT", "CZ"})
GATE_KINDS = ROTATIONS | TWO_QUBIT | {"HADAMARD"}

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


class SimulationError(ValueError):
    """Invalid state, gate or circuit for the simulator."""


class _Stats:
    """Process-wide counters for circuits executed and shots drawn."""

    def __init__(self):
        self._lock = threading.Lock()
        self.circuits = 0
        self.shots = 0

    def add(self, circuits=0, shots=0):
        with self._lock:
            self.circuits += int(circuits)
            self.shots += int(shots)

    def snapshot(self) -> dict:
        with self._lock:
            return {"circuits": self.circuits, "shots": self.shots}

    def reset(self):
        with self._lock:
            self.circuits = 0
            self.shots = 0


STATS = _Stats()


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    angle: float = 0.0
    control: int | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise SimulationError(f"unknown gate kind {self.kind!r}")
        if self.target < 0:
            raise SimulationError("negative qubit index")
        if self.kind in TWO_QUBIT:
            if self.control is None or self.control < 0:
                raise SimulationError(f"{self.kind} needs a control qubit")
            if self.control == self.target:
                raise SimulationError("control and target must differ")

    @property
    def is_rotation(self) -> bool:
        return self.kind in ROTATIONS

    def qubits(self) -> tuple[int, ...]:
        if self.control is None:
            return (self.target,)
        return (self.control, self.target)

    def inverse(self) -> "Gate":
        if self.is_rotation:
            return Gate(self.kind, self.target, -self.angle)
        return self

    def with_angle(self, angle: float) -> "Gate":
        return Gate(self.kind, self.target, float(angle), self.control)


def RX(q: int, angle: float) -> Gate:
    return Gate("RX", q, float(angle))


def RY(q: int, angle: float) -> Gate:
    return Gate("RY", q, float(angle))


def RZ(q: int, angle: float) -> Gate:
    return Gate("RZ", q, float(angle))


def H(q: int) -> Gate:
    return Gate("HADAMARD", q)


def CNOT(control: int, target: int) -> Gate:
    return Gate("CNOT", target, control=control)


def CZ(control: int, target: int) -> Gate:
    return Gate("CZ", target, control=control)


@dataclass(frozen=True)
class Circuit:
    """Ordered gate list on ``num_qubits`` qubits.

    ``param_slots`` maps trainable parameters onto rotation gates: entry
    ``(g, p)`` says that gate ``g`` takes its angle from parameter ``p``.
    """

    num_qubits: int
    gates: tuple[Gate, ...] = ()
    param_slots: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "param_slots", tuple(tuple(s) for s in self.param_slots))
        _check_qubits(self.num_qubits)
        for g in self.gates:
            if max(g.qubits()) >= self.num_qubits:
                raise SimulationError(
                    f"gate {g.kind} on qubit {max(g.qubits())} exceeds {self.num_qubits} qubits"
                )
        if self.param_slots:
            seen = sorted(p for _, p in self.param_slots)
            if seen != list(range(len(seen))):
                raise SimulationError("param_slots must index parameters 0..P-1 densely")
            for g, _ in self.param_slots:
                if not 0 <= g < len(self.gates) or not self.gates[g].is_rotation:
                    raise SimulationError(f"param slot on gate {g} is not a rotation")

    @property
    def num_params(self) -> int:
        return len(self.param_slots)

    def angles(self) -> np.ndarray:
        """Angle of every gate (0 for non-rotations), shape ``(len(gates),)``."""
        return np.array([g.angle for g in self.gates], dtype=float)

    def params(self) -> np.ndarray:
        out = np.zeros(self.num_params)
        for g, p in self.param_slots:
            out[p] = self.gates[g].angle
        return out

    def bind(self, theta: Sequence[float]) -> "Circuit":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.num_params,):
            raise SimulationError(f"expected {self.num_params} parameters, got {theta.shape}")
        gates = list(self.gates)
        for g, p in self.param_slots:
            gates[g] = gates[g].with_angle(theta[p])
        return Circuit(self.num_qubits, gates, self.param_slots)

    def inverse(self) -> "Circuit":
        n = len(self.gates)
        slots = tuple((n - 1 - g, p) for g, p in self.param_slots)
        return Circuit(self.num_qubits, [g.inverse() for g in reversed(self.gates)], slots)

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.num_qubits != self.num_qubits:
            raise SimulationError("cannot concatenate circuits of different widths")
        offset_g = len(self.gates)
        offset_p = self.num_params
        slots = self.param_slots + tuple((g + offset_g, p + offset_p) for g, p in other.param_slots)
        return Circuit(self.num_qubits, self.gates + other.gates, slots)


@dataclass
class StateVector:
    num_qubits: int
    amps: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_qubits(self.num_qubits)
        self.amps = np.asarray(self.amps, dtype=complex)
        if self.amps.shape != (2**self.num_qubits,):
            raise SimulationError(
                f"amplitude array must have length {2 ** self.num_qubits}, got {self.amps.shape}"
            )

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def norm_sq(self) -> float:
        return float(np.sum(self.probabilities()))

    def to_json(self) -> str:
        return json.dumps(
            {"n": self.num_qubits, "amps": [[float(a.real), float(a.imag)] for a in self.amps]}
        )

    @classmethod
    def from_json(cls, text: str) -> "StateVector":
        d = json.loads(text)
        amps = np.array([complex(re, im) for re, im in d["amps"]])
        return cls(int(d["n"]), amps)


@dataclass(frozen=True)
class Observable:
    """Real linear combination of Pauli strings.

    ``pauli[q]`` is the letter acting on qubit ``q``; strings shorter than the
    state are padded with identities.
    """

    terms: tuple[tuple[float, str], ...]

    def __post_init__(self):
        terms = tuple((float(c), str(p).upper()) for c, p in self.terms)
        for _, p in terms:
            if set(p) - set("IXYZ"):
                raise SimulationError(f"bad Pauli string {p!r}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def z(cls, qubit: int, coeff: float = 1.0) -> "Observable":
        return cls(((coeff, "I" * qubit + "Z"),))

    @property
    def width(self) -> int:
        return max((len(p) for _, p in self.terms), default=0)

    def norm_bound(self) -> float:
        return float(sum(abs(c) for c, _ in self.terms))

    def __neg__(self) -> "Observable":
        return Observable(tuple((-c, p) for c, p in self.terms))


@dataclass(frozen=True)
class ShotHistogram:
    counts: dict
    shots: int
    seed: int

    def frequency(self, index: int) -> float:
        return self.counts.get(index, 0) / self.shots


def _check_qubits(n: int):
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise SimulationError(f"num_qubits must be in 1..{MAX_QUBITS}, got {n}")


def new_zero_state(num_qubits: int) -> StateVector:
    _check_qubits(num_qubits)
    amps = np.zeros(2**num_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(num_qubits, amps)


# ---------------------------------------------------------------------------
# batched engine: arrays of shape (batch, 2**n)


def zero_batch(num_qubits: int, batch: int, dtype=float) -> np.ndarray:
    _check_qubits(num_qubits)
    arr = np.zeros((batch, 2**num_qubits), dtype=dtype)
    arr[:, 0] = 1.0
    return arr


def _split(arr: np.ndarray, q: int, n: int) -> np.ndarray:
    return arr.reshape(arr.shape[0], 2 ** (n - q - 1), 2, 2**q)


def _angle_column(angle, batch: int) -> np.ndarray:
    a = np.asarray(angle, dtype=float)
    if a.ndim == 0:
        return a
    if a.shape != (batch,):
        raise SimulationError(f"per-row angles must have shape ({batch},), got {a.shape}")
    return a[:, None, None]


_PERM_CACHE: dict = {}
_SIGN_CACHE: dict = {}


def _cnot_perm(control: int, target: int, n: int) -> np.ndarray:
    key = (control, target, n)
    perm = _PERM_CACHE.get(key)
    if perm is None:
        idx = np.arange(2**n)
        perm = np.where((idx >> control) & 1, idx ^ (1 << target), idx)
        _PERM_CACHE[key] = perm
    return perm


def _cz_sign(a: int, b: int, n: int) -> np.ndarray:
    key = (min(a, b), max(a, b), n)
    sign = _SIGN_CACHE.get(key)
    if sign is None:
        idx = np.arange(2**n)
        sign = np.where(((idx >> a) & 1) & ((idx >> b) & 1), -1.0, 1.0)
        _SIGN_CACHE[key] = sign
    return sign


def apply_gate_batch(arr: np.ndarray, gate: Gate, n: int, angle=None) -> np.ndarray:
    """Return ``gate`` applied to every row of ``arr``.

    ``angle`` overrides the gate's own angle; it may be a scalar or one angle
    per row.
    """
    if max(gate.qubits()) >= n:
        raise SimulationError(f"gate {gate.kind} acts on qubit {max(gate.qubits())} of {n}")
    kind = gate.kind
    if kind == "CNOT":
        return arr[:, _cnot_perm(gate.control, gate.target, n)]
    if kind == "CZ":
        return arr * _cz_sign(gate.control, gate.target, n)

    batch = arr.shape[0]
    a = _split(arr, gate.target, n)
    a0 = a[:, :, 0, :]
    a1 = a[:, :, 1, :]
    if kind == "HADAMARD":
        out = np.empty_like(a)
        out[:, :, 0, :] = (a0 + a1) * _INV_SQRT2
        out[:, :, 1, :] = (a0 - a1) * _INV_SQRT2
        return out.reshape(arr.shape)

    theta = _angle_column(gate.angle if angle is None else angle, batch)
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    if kind == "RY":
        out = np.empty_like(a)
        out[:, :, 0, :] = c * a0 - s * a1
        out[:, :, 1, :] = s * a0 + c * a1
    elif kind == "RX":
        out = np.empty(a.shape, dtype=complex)
        out[:, :, 0, :] = c * a0 - 1j * s * a1
        out[:, :, 1, :] = -1j * s * a0 + c * a1
    else:  # RZ
        out = np.empty(a.shape, dtype=complex)
        phase = np.exp(-0.5j * theta)
        out[:, :, 0, :] = phase * a0
        out[:, :, 1, :] = np.conj(phase) * a1
    return out.reshape(arr.shape)


def _fused_plan(circuit: Circuit, start: int):
    """Group consecutive CNOT/CZ gates into one permutation / sign vector."""
    n = circuit.num_qubits
    dim = 2**n
    plan = []
    g = start
    gates = circuit.gates
    while g < len(gates):
        gate = gates[g]
        if gate.kind in TWO_QUBIT:
            perm = np.arange(dim)
            sign = np.ones(dim)
            while g < len(gates) and gates[g].kind in TWO_QUBIT:
                gk = gates[g]
                # track out = (arr * sign)[:, perm]
                if gk.kind == "CNOT":
                    p = _cnot_perm(gk.control, gk.target, n)
                    perm = perm[p]
                else:
                    sign = sign * _cz_sign(gk.control, gk.target, n)[np.argsort(perm)]
                g += 1
            plan.append(("perm", perm, sign))
        else:
            plan.append(("gate", g, gate))
            g += 1
    return plan


def run_batch(circuit: Circuit, states: np.ndarray, angles: np.ndarray | None = None,
              start: int = 0) -> np.ndarray:
    """Run ``circuit`` (from gate index ``start`` on) on every row of ``states``.

    ``angles`` has shape ``(batch, len(circuit.gates))`` and supplies a
    per-row angle for every rotation gate; entries for other gates are ignored.
    """
    states = np.asarray(states)
    if states.ndim != 2 or states.shape[1] != 2**circuit.num_qubits:
        raise SimulationError(
            f"states must have shape (batch, {2 ** circuit.num_qubits}), got {states.shape}"
        )
    if angles is not None:
        angles = np.asarray(angles, dtype=float)
        if angles.shape != (states.shape[0], len(circuit.gates)):
            raise SimulationError(
                f"angle table must have shape {(states.shape[0], len(circuit.gates))}, "
                f"got {angles.shape}"
            )
    n = circuit.num_qubits
    out = states
    for step in _fused_plan(circuit, start):
        if step[0] == "perm":
            _, perm, sign = step
            out = out * sign if np.any(sign < 0) else out
            out = out[:, perm]
        else:
            _, g, gate = step
            override = angles[:, g] if angles is not None and gate.is_rotation else None
            out = apply_gate_batch(out, gate, n, override)
    STATS.add(circuits=states.shape[0])
    return out


_PAULI_CACHE: dict = {}


def _pauli_action(pauli: str, n: int):
    """Flip mask and per-index phase for ``P|i> = phase[i] |i ^ mask>``."""
    key = (pauli, n)
    hit = _PAULI_CACHE.get(key)
    if hit is not None:
        return hit
    idx = np.arange(2**n)
    mask = 0
    phase = np.ones(2**n, dtype=complex)
    for q, letter in enumerate(pauli):
        bit = (idx >> q) & 1
        if letter == "X":
            mask |= 1 << q
        elif letter == "Y":
            mask |= 1 << q
            phase = phase * np.where(bit, -1j, 1j)
        elif letter == "Z":
            phase = phase * np.where(bit, -1.0, 1.0)
    if np.all(phase.imag == 0):
        phase = phase.real
    _PAULI_CACHE[key] = (mask, phase)
    return mask, phase


def expectation_batch(states: np.ndarray, obs: Observable, n: int) -> np.ndarray:
    if obs.width > n:
        raise SimulationError(f"observable acts on {obs.width} qubits, state has {n}")
    idx = np.arange(2**n)
    total = np.zeros(states.shape[0])
    for coeff, pauli in obs.terms:
        mask, phase = _pauli_action(pauli, n)
        if mask == 0:
            val = np.sum(np.abs(states) ** 2 * phase, axis=1)
        else:
            # <psi|P|psi> = sum_i conj(psi[i ^ mask]) * phase[i] * psi[i]
            val = np.sum(np.conj(states[:, idx ^ mask]) * phase * states, axis=1)
        total += coeff * np.real(val)
    return total


def z_expectations(states: np.ndarray, n: int) -> np.ndarray:
    """``<Z_q>`` for every qubit, shape ``(batch, n)``."""
    probs = np.abs(states) ** 2
    idx = np.arange(2**n)
    signs = 1.0 - 2.0 * ((idx[:, None] >> np.arange(n)[None, :]) & 1)
    return probs @ signs


# ---------------------------------------------------------------------------
# single-state API


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    out = apply_gate_batch(state.amps[None, :], gate, state.num_qubits)
    return StateVector(state.num_qubits, out[0])


def run_circuit(circuit: Circuit, state: StateVector) -> StateVector:
    if circuit.num_qubits != state.num_qubits:
        raise SimulationError(
            f"circuit has {circuit.num_qubits} qubits, state has {state.num_qubits}"
        )
    out = run_batch(circuit, state.amps[None, :])
    return StateVector(state.num_qubits, out[0])


def expectation(state: StateVector, obs: Observable) -> float:
    return float(expectation_batch(state.amps[None, :], obs, state.num_qubits)[0])


def overlap_sq(a: StateVector, b: StateVector) -> float:
    if a.num_qubits != b.num_qubits:
        raise SimulationError("overlap of states with different qubit counts")
    val = abs(np.vdot(a.amps, b.amps)) ** 2
    return float(min(val, 1.0))


def sample_counts(state: StateVector, shots: int, seed: int) -> ShotHistogram:
    if shots < 1:
        raise SimulationError("shots must be >= 1")
    counts = sample_probabilities(state.probabilities(), shots, seed)
    return ShotHistogram({int(i): int(c) for i, c in enumerate(counts) if c}, int(shots), seed)


def sample_probabilities(probs: np.ndarray, shots: int, seed) -> np.ndarray:
    """Multinomial draw of ``shots`` outcomes; ``seed`` feeds a fresh generator."""
    if shots < 1:
        raise SimulationError("shots must be >= 1")
    p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    STATS.add(shots=shots)
    return rng.multinomial(shots, p)


def random_circuit(num_qubits: int, depth: int, rng: np.random.Generator) -> Circuit:
    """Random gate sequence over the full gate set, for property tests."""
    gates: list[Gate] = []
    kinds = sorted(GATE_KINDS)
    for _ in range(depth):
        kind = kinds[rng.integers(len(kinds))]
        if kind in TWO_QUBIT:
            if num_qubits < 2:
                continue
            c, t = rng.choice(num_qubits, size=2, replace=False)
            gates.append(Gate(kind, int(t), control=int(c)))
        elif kind in ROTATIONS:
            gates.append(Gate(kind, int(rng.integers(num_qubits)), float(rng.uniform(-np.pi, np.pi) * 2)))
        else:
            gates.append(Gate(kind, int(rng.integers(num_qubits))))
    return Circuit(num_qubits, gates)


def random_state(num_qubits: int, rng: np.random.Generator) -> StateVector:
    v = rng.normal(size=2**num_qubits) + 1j * rng.normal(size=2**num_qubits)
    return StateVector(num_qubits, v / np.linalg.norm(v))


def concat(circuits: Iterable[Circuit]) -> Circuit:
    circuits = list(circuits)
    out = circuits[0]
    for c in circuits[1:]:
        out = out + c
    return out
