"""Variational refinement of compiled circuits.

Single-qubit gates become ZXZXZ ``u3`` slots; two-qubit gates stay fixed. The
angles are fitted to the target by Adam on ``dim - Re Tr(U^dagger V)``
(default) or the phase-blind ``dim - |Tr(U^dagger V)|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .gates import CZ, ActionSpace, embed, rx, rz
from .linalg import as_matrix, fidelity_f1, identity
from .qnet import AdamState, adam_step

_MZ = -0.5j * np.diag([1.0, -1.0]).astype(np.complex128)  # d/da rz(a) = _MZ @ rz(a)
_RX90 = rx(np.pi / 2)


def u3(theta: float, phi: float, lam: float) -> np.ndarray:
    """RZ(phi - pi/2) RX(pi/2) RZ(pi - theta) RX(pi/2) RZ(lam - pi/2)."""
    return rz(phi - np.pi / 2) @ _RX90 @ rz(np.pi - theta) @ _RX90 @ rz(lam - np.pi / 2)


def u3_grad(theta: float, phi: float, lam: float):
    """Partial derivatives of :func:`u3` w.r.t. (theta, phi, lam)."""
    a, b, c = rz(phi - np.pi / 2), rz(np.pi - theta), rz(lam - np.pi / 2)
    d_theta = -(a @ _RX90 @ (_MZ @ b) @ _RX90 @ c)
    d_phi = (_MZ @ a) @ _RX90 @ b @ _RX90 @ c
    d_lam = a @ _RX90 @ b @ _RX90 @ (_MZ @ c)
    return d_theta, d_phi, d_lam


def _wrap(angle: float) -> float:
    """Map to (-pi, pi]."""
    w = (angle + np.pi) % (2 * np.pi) - np.pi
    return np.pi if w == -np.pi else w


def euler_angles(g) -> tuple[float, float, float]:
    """Angles with u3(theta, phi, lam) equal to ``g`` up to global phase.

    theta is in [0, pi]; phi and lam are in (-pi, pi]. When g is diagonal
    (theta = 0) or anti-diagonal (theta = pi) the undetermined half of the
    phase split is set to zero.
    """
    g = as_matrix(g)
    if g.shape != (2, 2):
        raise ValueError("euler_angles expects a 2x2 unitary")
    g = g / np.sqrt(np.linalg.det(g))
    c, s = abs(g[0, 0]), abs(g[1, 0])
    theta = 2 * np.arctan2(s, c)
    half_sigma = -np.angle(g[0, 0]) if c > 1e-12 else 0.0
    half_delta = np.angle(1j * g[1, 0]) if s > 1e-12 else 0.0
    return float(theta), _wrap(half_sigma + half_delta), _wrap(half_sigma - half_delta)


def _reduce(env, qubit, num_qubits):
    """E[a, b] = sum over the other qubits of env[(i, a, k), (i, b, k)]."""
    lo, hi = 2 ** (qubit - 1), 2 ** (num_qubits - qubit)
    return np.einsum("iakibk->ab", env.reshape(lo, 2, hi, lo, 2, hi))


@dataclass
class Slot:
    kind: str  # "u3" or "fixed"
    qubits: tuple
    matrix: np.ndarray | None = None  # local matrix of a fixed gate
    name: str = ""


@dataclass
class Ansatz:
    """Ordered gate slots in application order; ``init`` holds 3 angles per u3 slot."""

    slots: list
    num_qubits: int
    init: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.init = np.asarray(self.init, dtype=float).ravel()
        if self.init.size == 0:
            self.init = np.zeros(self.n_params)
        if self.init.size != self.n_params:
            raise ValueError(f"expected {self.n_params} initial angles, got {self.init.size}")
        self._fixed = [
            embed(s.matrix, s.qubits, self.num_qubits) if s.kind == "fixed" else None
            for s in self.slots
        ]

    @property
    def n_params(self) -> int:
        return 3 * sum(1 for s in self.slots if s.kind == "u3")

    @property
    def n_two_qubit(self) -> int:
        return sum(1 for s in self.slots if s.kind == "fixed" and len(s.qubits) == 2)

    def _slot_matrices(self, params):
        mats, k = [], 0
        for s, fixed in zip(self.slots, self._fixed):
            if s.kind == "u3":
                mats.append(embed(u3(*params[k:k + 3]), s.qubits, self.num_qubits))
                k += 3
            else:
                mats.append(fixed)
        return mats

    def unitary(self, params=None) -> np.ndarray:
        params = self.init if params is None else np.asarray(params, dtype=float)
        u = identity(self.num_qubits)
        for m in self._slot_matrices(params):
            u = m @ u
        return u

    def loss(self, params, target, kind: str = "re") -> float:
        return self._evaluate(params, target, kind, grad=False)[0]

    def loss_and_grad(self, params, target, kind: str = "re"):
        """Loss and its analytic gradient (prefix/suffix products per slot)."""
        loss, g, _ = self._evaluate(params, target, kind, grad=True)
        return loss, g

    def _evaluate(self, params, target, kind, grad):
        params = np.asarray(params, dtype=float)
        target = as_matrix(target)
        dim = 2**self.num_qubits
        mats = self._slot_matrices(params)
        prefix = [identity(self.num_qubits)]  # prefix[k] = S_{k-1} ... S_0
        for m in mats:
            prefix.append(m @ prefix[-1])
        tr = np.trace(target.conj().T @ prefix[-1])
        f1 = float(abs(tr) / dim)
        if kind == "re":
            loss, coef = dim - tr.real, 1.0
        elif kind == "abs":
            loss = dim - abs(tr)
            coef = np.conj(tr) / abs(tr) if abs(tr) > 0 else 1.0
        else:
            raise ValueError(f"unknown loss kind {kind!r}")
        if not grad:
            return float(loss), None, f1
        g = np.zeros_like(params)
        suffix = identity(self.num_qubits)  # S_{n-1} ... S_{i+1}
        k = self.n_params
        udag = target.conj().T
        for i in range(len(mats) - 1, -1, -1):
            s = self.slots[i]
            if s.kind == "u3":
                k -= 3
                # Tr(U^dag suffix dS prefix) = Tr(E dS_local), E the reduced environment
                env = _reduce(prefix[i] @ udag @ suffix, s.qubits[0], self.num_qubits)
                for j, dm in enumerate(u3_grad(*params[k:k + 3])):
                    g[k + j] = -(coef * np.sum(env.T * dm)).real
            suffix = suffix @ mats[i]
        return float(loss), g, f1

    def gates(self, params=None) -> list[dict]:
        """Circuit-file gate records; u3 slots carry explicit angles."""
        params = self.init if params is None else np.asarray(params, dtype=float)
        out, k = [], 0
        for s in self.slots:
            if s.kind == "u3":
                out.append({"name": "u3", "qubits": list(s.qubits),
                            "angles": [float(a) for a in params[k:k + 3]]})
                k += 3
            else:
                out.append({"name": s.name, "qubits": list(s.qubits)})
        return out


def parameterize(seq, space: ActionSpace) -> Ansatz:
    """Ansatz from a gate sequence (labels, action indices, or a CompileResult)."""
    if hasattr(seq, "actions"):
        seq = seq.actions
    slots, init = [], []
    for item in seq:
        a = space.actions[space.index(item) if isinstance(item, str) else int(item)]
        local = a.gate.matrix
        if a.is_two_qubit:
            slots.append(Slot("fixed", a.qubits, local, a.gate.label))
        else:
            slots.append(Slot("u3", a.qubits))
            init.extend(euler_angles(local))
    return Ansatz(slots, space.num_qubits, np.array(init))


@dataclass
class VariationalConfig:
    steps: int = 500
    lr: float = 0.01
    restarts: int = 5
    jitter: float = 0.1
    loss: str = "re"
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.restarts < 1:
            raise ValueError("steps must be >= 0 and restarts >= 1")
        if self.loss not in ("re", "abs"):
            raise ValueError("loss must be 're' or 'abs'")


@dataclass
class OptimizeResult:
    params: np.ndarray
    f1: float
    trace: np.ndarray  # best-so-far loss of the winning restart
    raw_trace: np.ndarray
    restart_f1: list
    init_f1: float


def optimize(ansatz: Ansatz, target, cfg: VariationalConfig | None = None) -> OptimizeResult:
    """Adam over the angles from several starts; keeps the best point seen.

    Restart 0 starts from ``ansatz.init``; the others add Gaussian jitter.
    The returned F1 is never below the initial F1.
    """
    cfg = cfg or VariationalConfig()
    target = as_matrix(target)
    dim = 2**ansatz.num_qubits
    if target.shape != (dim, dim):
        raise ValueError(f"target shape {target.shape} does not match ansatz dim {dim}")
    rng = np.random.default_rng(cfg.seed)
    init_f1 = fidelity_f1(target, ansatz.unitary())
    best = None
    restart_f1 = []
    for r in range(cfg.restarts):
        x = ansatz.init.copy()
        if r > 0:
            x = x + rng.normal(0.0, cfg.jitter, size=x.shape)
        params = {"x": x}
        state = AdamState.zeros_like(params)
        raw = []
        run_best = (-1.0, x)
        for _ in range(cfg.steps):
            loss, g, f1 = ansatz._evaluate(params["x"], target, cfg.loss, grad=True)
            raw.append(loss)
            if f1 > run_best[0]:
                run_best = (f1, params["x"].copy())
            params, state = adam_step(params, {"x": g}, state, cfg.lr)
        f1 = fidelity_f1(target, ansatz.unitary(params["x"]))
        if f1 > run_best[0]:
            run_best = (f1, params["x"].copy())
        if cfg.steps == 0 or ansatz.n_params == 0:
            raw.append(ansatz.loss(x, target, cfg.loss))
        restart_f1.append(run_best[0])
        if best is None or run_best[0] > best[0]:
            best = (run_best[0], run_best[1], np.array(raw))
        if ansatz.n_params == 0:
            break
    if best[0] < init_f1:
        best = (init_f1, ansatz.init.copy(), best[2])
    raw = best[2]
    return OptimizeResult(best[1], best[0], np.minimum.accumulate(raw), raw, restart_f1, init_f1)


# -- templates -----------------------------------------------------------------


def layered_template(pairs, num_qubits: int, seed: int = 0, two_qubit=CZ, name: str = "CZ") -> Ansatz:
    """u3 on every qubit, then each entangler followed by another u3 layer."""
    rng = np.random.default_rng(seed)
    layer = [Slot("u3", (q,)) for q in range(1, num_qubits + 1)]
    slots = list(layer)
    for pair in pairs:
        slots.append(Slot("fixed", tuple(pair), two_qubit, name))
        slots.extend(Slot("u3", (q,)) for q in range(1, num_qubits + 1))
    n = 3 * sum(1 for s in slots if s.kind == "u3")
    return Ansatz(slots, num_qubits, rng.uniform(-np.pi, np.pi, size=n))


def rzz_template(seed: int = 0) -> Ansatz:
    """[u3 x u3] CZ [u3 x u3] on two qubits."""
    return layered_template([(1, 2)], 2, seed)


def nearest_neighbor_patterns(n_cz: int = 7, max_repeats: int = 1) -> list[str]:
    """Upper/lower pair strings ("U" = (1,2), "L" = (2,3)) that alternate,
    allowing at most ``max_repeats`` adjacent repeats. 14 patterns for 7 CZs."""
    out = []
    for letters in product("UL", repeat=n_cz):
        repeats = sum(1 for a, b in zip(letters, letters[1:]) if a == b)
        if repeats <= max_repeats:
            out.append("".join(letters))
    out.sort(key=lambda p: (sum(1 for a, b in zip(p, p[1:]) if a == b), p))
    return out


def qft_template(pattern: str, seed: int = 0) -> Ansatz:
    pairs = [(1, 2) if c == "U" else (2, 3) for c in pattern]
    return layered_template(pairs, 3, seed)
