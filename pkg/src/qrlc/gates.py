"""Native gates, device topology and generalized action spaces."""

from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
from itertools import combinations

import numpy as np

from .linalg import dagger, identity, tensor

I2 = np.eye(2, dtype=np.complex128)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
CZ = np.diag([1, 1, 1, -1]).astype(np.complex128)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)
SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=np.complex128
)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
_S5 = 1 / np.sqrt(5)


def rotation(pauli: np.ndarray, angle: float) -> np.ndarray:
    """Half-angle rotation exp(-i angle P / 2)."""
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * pauli


def rx(angle: float) -> np.ndarray:
    return rotation(PAULI_X, angle)


def ry(angle: float) -> np.ndarray:
    return rotation(PAULI_Y, angle)


def rz(angle: float) -> np.ndarray:
    return rotation(PAULI_Z, angle)


def rphi(phi: float) -> np.ndarray:
    """pi/2 rotation about the equatorial axis (cos phi, sin phi, 0)."""
    axis = np.cos(phi) * PAULI_X + np.sin(phi) * PAULI_Y
    return np.cos(np.pi / 4) * I2 - 1j * np.sin(np.pi / 4) * axis


_T = np.diag([1, np.exp(1j * np.pi / 4)]).astype(np.complex128)
_V1 = _S5 * np.array([[1, 2j], [2j, 1]], dtype=np.complex128)
_V2 = _S5 * np.array([[1, 2], [-2, 1]], dtype=np.complex128)
_V3 = _S5 * np.array([[1 + 2j, 0], [0, 1 - 2j]], dtype=np.complex128)

_FIXED = {
    "X/2": rx(np.pi / 2),
    "-X/2": rx(-np.pi / 2),
    "Y/2": ry(np.pi / 2),
    "-Y/2": ry(-np.pi / 2),
    "T": _T,
    "T†": dagger(_T),
    "H": HADAMARD,
    "CZ": CZ,
    "V1": _V1,
    "V1†": dagger(_V1),
    "V2": _V2,
    "V2†": dagger(_V2),
    "V3": _V3,
    "V3†": dagger(_V3),
}
_PARAMETRIC = {"RX": rx, "RY": ry, "RZ": rz, "RPHI": rphi}
_ALIASES = {"Tdg": "T†", "V1dg": "V1†", "V2dg": "V2†", "V3dg": "V3†"}

SUPPORTED_GATES = tuple(_FIXED) + tuple(_PARAMETRIC)


class GateError(ValueError):
    pass


def gate_matrix(name: str, angle: float | None = None) -> np.ndarray:
    """Matrix of a native gate; parametric gates (RX, RY, RZ, RPHI) need ``angle``."""
    name = _ALIASES.get(name, name)
    if name in _FIXED:
        if angle is not None:
            raise GateError(f"gate {name!r} takes no angle")
        return _FIXED[name].copy()
    if name in _PARAMETRIC:
        if angle is None:
            raise GateError(f"gate {name!r} requires an angle")
        return _PARAMETRIC[name](float(angle))
    raise GateError(f"unknown gate {name!r}")


def _format_angle(angle: float) -> str:
    frac = angle / np.pi
    for den in (1, 2, 3, 4, 6, 8, 12, 16, 32, 64, 128, 256):
        num = frac * den
        if abs(num - round(num)) < 1e-12:
            num = int(round(num))
            return f"{num}pi/{den}" if den > 1 else f"{num}pi"
    return repr(float(angle))


@dataclass(frozen=True)
class NativeGate:
    name: str
    angle: float | None = None

    @property
    def matrix(self) -> np.ndarray:
        return gate_matrix(self.name, self.angle)

    @property
    def arity(self) -> int:
        return int(np.log2(self.matrix.shape[0]))

    @property
    def label(self) -> str:
        if self.angle is None:
            return self.name
        return f"{self.name}({_format_angle(self.angle)})"


@dataclass(frozen=True)
class Topology:
    """Qubits are numbered 1..num_qubits; edges are unordered pairs."""

    num_qubits: int
    edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError("topology needs at least one qubit")
        norm = []
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop on qubit {a}")
            if not (1 <= a <= self.num_qubits and 1 <= b <= self.num_qubits):
                raise ValueError(f"edge ({a}, {b}) outside qubits 1..{self.num_qubits}")
            pair = (min(a, b), max(a, b))
            if pair not in norm:
                norm.append(pair)
        object.__setattr__(self, "edges", tuple(sorted(norm)))

    @classmethod
    def chain(cls, n: int) -> "Topology":
        return cls(n, tuple((q, q + 1) for q in range(1, n)))

    @classmethod
    def full(cls, n: int) -> "Topology":
        return cls(n, tuple(combinations(range(1, n + 1), 2)))


def embed(local: np.ndarray, qubits: tuple[int, ...], n_qubits: int) -> np.ndarray:
    """Lift a 1- or 2-qubit operator onto ``qubits`` of an ``n_qubits`` register.

    For two qubits the first listed qubit maps to the operator's most
    significant factor. Non-adjacent placements go through a permutation.
    """
    local = np.asarray(local, dtype=np.complex128)
    k = len(qubits)
    if local.shape != (2**k, 2**k):
        raise ValueError(f"operator of shape {local.shape} does not act on {k} qubits")
    if len(set(qubits)) != k or not all(1 <= q <= n_qubits for q in qubits):
        raise ValueError(f"invalid qubit placement {qubits} on {n_qubits} qubits")
    if k == 1:
        q = qubits[0]
        return tensor(identity(q - 1), local, identity(n_qubits - q))
    # scatter each input column amplitude-by-amplitude; dim <= 8 keeps this cheap
    full = local.reshape([2] * (2 * k))
    dim = 2**n_qubits
    out = np.zeros((dim, dim), dtype=np.complex128)
    for col in range(dim):
        bits = [(col >> (n_qubits - q)) & 1 for q in range(1, n_qubits + 1)]
        sub_in = tuple(bits[q - 1] for q in qubits)
        for sub_out in np.ndindex(*([2] * k)):
            amp = full[sub_out + sub_in]
            if amp == 0:
                continue
            new_bits = list(bits)
            for q, b in zip(qubits, sub_out):
                new_bits[q - 1] = b
            row = 0
            for b in new_bits:
                row = (row << 1) | b
            out[row, col] += amp
    return out


@dataclass(frozen=True)
class Action:
    label: str
    gate: NativeGate
    qubits: tuple[int, ...]
    matrix: np.ndarray = field(repr=False, compare=False)

    @property
    def is_two_qubit(self) -> bool:
        return len(self.qubits) == 2


class ActionSpace:
    """Ordered, inversion-closed list of full-register native-gate actions."""

    def __init__(self, actions: list[Action], num_qubits: int, inverse_index: list[int]):
        self.actions = list(actions)
        self.num_qubits = num_qubits
        self.inverse_index = list(inverse_index)
        self.matrices = np.stack([a.matrix for a in self.actions])
        self.labels = [a.label for a in self.actions]
        self.fingerprint = fingerprint_labels(self.labels)

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i: int) -> Action:
        return self.actions[i]

    def __repr__(self) -> str:
        return f"ActionSpace(num_qubits={self.num_qubits}, d={len(self)}, fingerprint={self.fingerprint:016x})"

    @property
    def dim(self) -> int:
        return 2**self.num_qubits

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"no action labelled {label!r}") from None

    def index_of_gate(self, name: str, qubits) -> int:
        qubits = tuple(qubits)
        for i, a in enumerate(self.actions):
            if a.gate.label == name and a.qubits == qubits:
                return i
        raise KeyError(f"no action {name} on qubits {qubits}")


def fingerprint_labels(labels) -> int:
    digest = hashlib.blake2b("\n".join(labels).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def action_label(gate: NativeGate, qubits: tuple[int, ...]) -> str:
    return f"{gate.label}@" + "".join(f"q{q}" for q in qubits)


def build_action_space(gates, topology: Topology, tol: float = 1e-10) -> ActionSpace:
    """Lift every gate to every valid placement; order is gate-major, placement ascending.

    Raises GateError if some action has no inverse within the space.
    """
    gates = [g if isinstance(g, NativeGate) else parse_gate(g) for g in gates]
    if not gates:
        raise GateError("gate list is empty")
    n = topology.num_qubits
    actions = []
    for g in gates:
        if g.arity == 1:
            placements = [(q,) for q in range(1, n + 1)]
        elif g.arity == 2:
            placements = list(topology.edges)
        else:
            raise GateError(f"gate {g.label} acts on {g.arity} qubits; only 1 and 2 supported")
        for qubits in placements:
            actions.append(Action(action_label(g, qubits), g, qubits, embed(g.matrix, qubits, n)))

    inverse = []
    mats = np.stack([a.matrix for a in actions])
    for i, a in enumerate(actions):
        target = dagger(a.matrix)
        dev = np.max(np.abs(mats - target[None]), axis=(1, 2))
        hits = np.flatnonzero(dev <= tol)
        if hits.size == 0:
            raise GateError(f"action {a.label} has no inverse in the gate set")
        inverse.append(int(hits[0]))
    return ActionSpace(actions, n, inverse)


def action_inverse(space: ActionSpace, i: int) -> int:
    return space.inverse_index[i]


def _rot_set(den: int) -> list[NativeGate]:
    a = np.pi / den
    return [
        NativeGate("RX", a), NativeGate("RX", -a),
        NativeGate("RY", a), NativeGate("RY", -a),
        NativeGate("RZ", a), NativeGate("RZ", -a),
    ]


_XYT = [NativeGate(n) for n in ("X/2", "-X/2", "Y/2", "-Y/2", "T", "T†")]
_HRC = [NativeGate(n) for n in ("V1", "V1†", "V2", "V2†", "V3", "V3†")]

# name -> (gate list, topology)
GATESETS = {
    "1q-x": ([NativeGate("X/2"), NativeGate("-X/2")], Topology(1)),
    "1q-xy": ([NativeGate(n) for n in ("X/2", "-X/2", "Y/2", "-Y/2")], Topology(1)),
    "1q-xyt": (_XYT, Topology(1)),
    "2-1": (_XYT + [NativeGate("CZ")], Topology.full(2)),
    "2-2": (_rot_set(6), Topology.full(2)),
    "2-3": (_rot_set(128), Topology.full(2)),
    "3-1": (_XYT + [NativeGate("CZ")], Topology.chain(3)),
    "3-2": (_HRC + [NativeGate("CZ")], Topology.chain(3)),
    "3-3": (_HRC + [NativeGate("H"), NativeGate("CZ")], Topology.full(3)),
    "3-4": (_rot_set(128), Topology(3)),
}


def named_action_space(name: str) -> ActionSpace:
    try:
        gates, topo = GATESETS[name]
    except KeyError:
        raise GateError(f"unknown gate set {name!r}; known: {', '.join(GATESETS)}") from None
    return build_action_space(gates, topo)


def parse_gate(token: str) -> NativeGate:
    """``"T"`` or ``"RX(0.0245)"`` or ``"RX:0.0245"`` -> NativeGate."""
    token = token.strip()
    for open_, close in (("(", ")"), (":", "")):
        if open_ in token:
            name, rest = token.split(open_, 1)
            if close:
                rest = rest.rstrip(close)
            return NativeGate(name.strip(), _parse_angle(rest))
    gate_matrix(token)
    return NativeGate(token)


def _parse_angle(text: str) -> float:
    text = text.strip().replace(" ", "")
    if "pi" in text:
        num, _, den = text.partition("/")
        num = num.replace("pi", "")
        coeff = -1.0 if num == "-" else float(num) if num not in ("", "+") else 1.0
        return coeff * np.pi / (float(den) if den else 1.0)
    return float(text)
