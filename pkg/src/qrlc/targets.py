"""Benchmark target unitaries: Haar-random, KAK-template, R_ZZ and QFT."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gates import CNOT, SWAP, ActionSpace, embed
from .linalg import as_matrix, identity


def haar_unitary(dim: int, seed: int) -> np.ndarray:
    """Haar-random special unitary (Ginibre + QR with phase fix, det scaled to 1)."""
    if dim not in (2, 4, 8):
        raise ValueError(f"dim must be 2, 4 or 8, got {dim}")
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    q = q * (d / np.abs(d))
    det = np.linalg.det(q)
    return q * det ** (-1.0 / dim)


def single_qubit_pool(space: ActionSpace, qubits=None) -> list:
    """Single-qubit actions of ``space``, optionally restricted to some qubits."""
    return [
        a for a in space.actions
        if not a.is_two_qubit and (qubits is None or a.qubits[0] in qubits)
    ]


def kak_template_target(pool, n_single: int, seed: int, num_qubits: int = 2) -> np.ndarray:
    """Three fixed CNOTs interleaved with four layers of sampled single-qubit gates.

    Gate k of the ``n_single`` sampled gates is placed in layer ``k % 4``. The
    CNOTs act on (1, 2) for two qubits and on (1, 3) for three qubits, control
    first.
    """
    if n_single <= 0:
        raise ValueError("n_single must be positive")
    pool = list(pool)
    if not pool:
        raise ValueError("gate pool is empty")
    if any(a.is_two_qubit for a in pool):
        raise ValueError("gate pool must contain only single-qubit actions")
    if num_qubits not in (2, 3):
        raise ValueError("KAK template targets need 2 or 3 qubits")
    dim = 2**num_qubits
    if any(a.matrix.shape != (dim, dim) for a in pool):
        raise ValueError(f"pool actions must act on {num_qubits} qubits")

    rng = np.random.default_rng(seed)
    picks = rng.integers(len(pool), size=n_single)
    layers = [identity(num_qubits) for _ in range(4)]
    for k, idx in enumerate(picks):
        layers[k % 4] = pool[idx].matrix @ layers[k % 4]

    cnot = embed(CNOT, (1, 2) if num_qubits == 2 else (1, 3), num_qubits)
    u = layers[0]
    for layer in layers[1:]:
        u = layer @ cnot @ u
    return u


def rzz(gamma: float) -> np.ndarray:
    """exp(-i gamma/2 Z⊗Z)."""
    h = gamma / 2
    return np.diag(np.exp(1j * np.array([-h, h, h, -h])))


def bit_reversal(num_qubits: int) -> np.ndarray:
    dim = 2**num_qubits
    perm = np.zeros((dim, dim), dtype=np.complex128)
    for j in range(dim):
        rev = int(format(j, f"0{num_qubits}b")[::-1], 2)
        perm[rev, j] = 1
    return perm


def qft(num_qubits: int, bit_reversed: bool = False) -> np.ndarray:
    """Discrete Fourier transform F[j, k] = exp(2 pi i jk / N) / sqrt(N).

    No terminal qubit reversal is included. ``bit_reversed=True`` returns
    ``R @ F``, the unitary of the usual QFT circuit with its final SWAPs dropped.
    """
    if num_qubits not in (1, 2, 3):
        raise ValueError("qft supports 1 to 3 qubits")
    n = 2**num_qubits
    j = np.arange(n)
    f = np.exp(2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    return bit_reversal(num_qubits) @ f if bit_reversed else f


@dataclass
class TargetSpec:
    kind: str
    num_qubits: int
    seed: int = 0
    params: dict = field(default_factory=dict)
    name: str = ""

    def build(self, space: ActionSpace | None = None) -> np.ndarray:
        k, m = self.kind, self.num_qubits
        if k == "haar":
            return haar_unitary(2**m, self.seed)
        if k == "rzz":
            return rzz(self.params["gamma"])
        if k == "qft":
            return qft(m, bit_reversed=self.params.get("bit_reversed", False))
        if k == "identity":
            return identity(m)
        if k == "swap":
            return SWAP.copy()
        if k == "explicit":
            return as_matrix(self.params["matrix"])
        if k == "kak_template":
            if space is None:
                raise ValueError("kak_template targets need an action space for the gate pool")
            qubits = (1, 3) if m == 3 else None
            return kak_template_target(
                single_qubit_pool(space, qubits), self.params.get("n_single", 80), self.seed, m
            )
        raise ValueError(f"unknown target kind {k!r}")


def parse_target(text: str, num_qubits: int) -> TargetSpec:
    """Parse CLI target strings.

    Forms: ``qft3``, ``qft3r`` (bit reversed), ``rzz:1.5708``, ``haar:SEED``,
    ``kak:SEED[:N_SINGLE]``, ``swap``, ``identity``, ``file:PATH.npy``.
    """
    text = text.strip()
    head, _, rest = text.partition(":")
    if head.startswith("qft"):
        digits = head[3:].rstrip("r")
        m = int(digits) if digits else num_qubits
        return TargetSpec("qft", m, params={"bit_reversed": head.endswith("r")}, name=text)
    if head == "rzz":
        return TargetSpec("rzz", 2, params={"gamma": float(rest)}, name=text)
    if head == "haar":
        return TargetSpec("haar", num_qubits, seed=int(rest or 0), name=text)
    if head == "kak":
        seed, _, n = rest.partition(":")
        return TargetSpec(
            "kak_template", num_qubits, seed=int(seed or 0),
            params={"n_single": int(n) if n else 80}, name=text,
        )
    if head in ("swap", "identity"):
        return TargetSpec(head, 2 if head == "swap" else num_qubits, name=text)
    if head == "file":
        mat = as_matrix(np.load(rest))
        return TargetSpec("explicit", int(np.log2(mat.shape[0])), params={"matrix": mat}, name=text)
    raise ValueError(f"cannot parse target {text!r}")
