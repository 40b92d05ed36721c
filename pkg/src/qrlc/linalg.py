"""Dense complex linear algebra for small (2, 4, 8 dimensional) unitaries.

Unitaries and state vectors are plain ``numpy`` complex128 arrays. Qubit 1 is
the leftmost tensor factor and the most significant bit of a basis index, so
``tensor(X, I2) @ |00>`` is ``|10>``.
"""

from __future__ import annotations

from functools import reduce
import hashlib

import numpy as np

UNITARY_TOL = 1e-10
PHASE_TOL = 1e-9
ANCHOR_TOL = 1e-9
KEY_DECIMALS = 6


def as_matrix(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {u.shape}")
    n = u.shape[0]
    if n < 2 or n & (n - 1):
        raise ValueError(f"matrix dimension {n} is not a power of two")
    return u


def num_qubits(u) -> int:
    return int(np.log2(np.shape(u)[0]))


def identity(n_qubits: int) -> np.ndarray:
    return np.eye(2**n_qubits, dtype=np.complex128)


def is_unitary(u, tol: float = UNITARY_TOL) -> bool:
    """True iff every entry of u^dagger u deviates from I by at most ``tol``."""
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    dev = u.conj().T @ u - np.eye(u.shape[0])
    return bool(np.max(np.abs(dev)) <= tol)


def fidelity_f1(u, v) -> float:
    """Phase-invariant circuit fidelity ``|Tr(u^dagger v)| / dim``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    # sum of elementwise products == trace of the matrix product, without the matmul
    return float(abs(np.vdot(u, v)) / u.shape[0])


def fidelity_to_identity(u) -> float:
    u = np.asarray(u)
    return float(abs(np.trace(u)) / u.shape[0])


def tensor(*factors) -> np.ndarray:
    """Kronecker product; the first factor acts on the most significant qubits."""
    if not factors:
        raise ValueError("tensor() needs at least one factor")
    return reduce(np.kron, (np.asarray(f, dtype=np.complex128) for f in factors))


def dagger(u) -> np.ndarray:
    return np.asarray(u).conj().T


def canonical_phase(u) -> np.ndarray:
    """Remove the global phase so the first non-negligible entry is real positive.

    The anchor is the first entry (row-major) with modulus above 1e-9.
    """
    u = np.asarray(u, dtype=np.complex128)
    flat = u.reshape(-1)
    mask = np.abs(flat) > ANCHOR_TOL
    if not mask.any():
        raise ValueError("cannot canonicalize the phase of an all-zero matrix")
    anchor = flat[np.argmax(mask)]
    return u * (abs(anchor) / anchor)


def canonical_phase_batch(us: np.ndarray) -> np.ndarray:
    """Vectorised :func:`canonical_phase` over a stack of matrices (n, dim, dim)."""
    us = np.asarray(us, dtype=np.complex128)
    flat = us.reshape(us.shape[0], -1)
    idx = np.argmax(np.abs(flat) > ANCHOR_TOL, axis=1)
    anchors = flat[np.arange(flat.shape[0]), idx]
    if np.any(np.abs(anchors) <= ANCHOR_TOL):
        raise ValueError("cannot canonicalize the phase of an all-zero matrix")
    return us * (np.abs(anchors) / anchors)[:, None, None]


def dedup_key(u) -> bytes:
    """Hashable identity of a unitary modulo global phase.

    Canonical phase, entries rounded to six decimals, negative zeros folded,
    then a 16-byte digest. Shared by the dataset generator and the oracle.
    """
    c = np.round(canonical_phase(u), KEY_DECIMALS) + 0.0
    return hashlib.blake2b(np.ascontiguousarray(c).tobytes(), digest_size=16).digest()


def dedup_keys(us: np.ndarray) -> list[bytes]:
    c = np.round(canonical_phase_batch(us), KEY_DECIMALS) + 0.0
    c = np.ascontiguousarray(c)
    return [hashlib.blake2b(row.tobytes(), digest_size=16).digest() for row in c]


def equal_up_to_phase(u, v, tol: float = PHASE_TOL) -> bool:
    return np.allclose(canonical_phase(u), canonical_phase(v), atol=tol, rtol=0)


def apply(u, state) -> np.ndarray:
    u = np.asarray(u, dtype=np.complex128)
    state = np.asarray(state, dtype=np.complex128)
    if u.shape[1] != state.shape[0]:
        raise ValueError(f"dimension mismatch: {u.shape} applied to {state.shape}")
    return u @ state


def basis_state(bits: str) -> np.ndarray:
    """Computational basis state from a bit string, qubit 1 first (``"100"``)."""
    psi = np.zeros(2 ** len(bits), dtype=np.complex128)
    psi[int(bits, 2)] = 1.0
    return psi


def product_state(labels: str) -> np.ndarray:
    """Product state from per-qubit labels in ``0 1 + -`` (e.g. ``"++0"``)."""
    single = {
        "0": np.array([1, 0], dtype=np.complex128),
        "1": np.array([0, 1], dtype=np.complex128),
        "+": np.array([1, 1], dtype=np.complex128) / np.sqrt(2),
        "-": np.array([1, -1], dtype=np.complex128) / np.sqrt(2),
    }
    try:
        return reduce(np.kron, (single[c] for c in labels))
    except KeyError as exc:
        raise ValueError(f"unknown single-qubit state label {exc.args[0]!r}") from None
