"""Exact breadth-first enumeration of the action-space Cayley graph.

Provides ground-truth distances to the identity, an oracle Q-function with the
same interface as a trained network, and a checker for generated training sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import struct

import numpy as np

from .dataset import DatasetMemoryError, LoopData, TrainingSet, expand_loop
from .gates import ActionSpace
from .linalg import dedup_key, dedup_keys, identity

TABLE_MAGIC = b"QRLO"
TABLE_VERSION = 1


class FingerprintMismatch(ValueError):
    def __init__(self, expected: int, got: int, what: str = "model"):
        super().__init__(
            f"{what} fingerprint {got:016x} does not match action space fingerprint {expected:016x}"
        )
        self.expected = expected
        self.got = got


@dataclass
class ValueTable:
    entries: dict  # dedup key -> (distance, witness sequence)
    max_depth: int
    fingerprint: int
    num_qubits: int
    n_actions: int

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, u) -> bool:
        return dedup_key(u) in self.entries

    def distances(self) -> np.ndarray:
        return np.array([d for d, _ in self.entries.values()])

    def items(self):
        return self.entries.items()


def bfs_table(space: ActionSpace, depth: int, max_states: int = 5_000_000) -> ValueTable:
    """Exhaustive BFS from the identity by left-multiplying actions, up to ``depth``."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    start = identity(space.num_qubits)
    seen = {dedup_keys(start[None])[0]: 0}
    entries = {next(iter(seen)): (0, ())}
    shell = LoopData(0, start[None], np.zeros(1, dtype=np.int64), [()], True)
    for level in range(1, depth + 1):
        if len(shell) == 0:
            break
        shell = expand_loop(shell, space, seen=seen)
        if len(seen) > max_states:
            raise DatasetMemoryError(level, len(seen), max_states)
        for key, seq in zip(dedup_keys(shell.unitaries) if len(shell) else [], shell.sequences):
            entries[key] = (level, seq)
    return ValueTable(entries, depth, space.fingerprint, space.num_qubits, len(space))


def sequence_unitary(seq, space: ActionSpace, start=None) -> np.ndarray:
    """Product of actions applied in order: ``A_{s_k} ... A_{s_1} @ start``."""
    u = identity(space.num_qubits) if start is None else np.array(start, dtype=np.complex128)
    for i in seq:
        u = space.matrices[i] @ u
    return u


def oracle_distance(u, table: ValueTable) -> int | None:
    hit = table.entries.get(dedup_key(u))
    return None if hit is None else hit[0]


class OracleQ:
    """Q-function read off a BFS table: Q(p, A) = -distance(A p).

    Children outside the table get ``-(max_depth + 1)``, a lower bound on
    their true value.
    """

    def __init__(self, table: ValueTable, space: ActionSpace):
        if table.fingerprint != space.fingerprint:
            raise FingerprintMismatch(space.fingerprint, table.fingerprint, "table")
        self.table = table
        self.space = space
        self.fingerprint = space.fingerprint
        self.n_actions = len(space)

    def q_values(self, residuals: np.ndarray) -> np.ndarray:
        residuals = np.asarray(residuals)
        n, d, dim = residuals.shape[0], len(self.space), self.space.dim
        kids = np.einsum("aij,njk->naik", self.space.matrices, residuals).reshape(-1, dim, dim)
        miss = -(self.table.max_depth + 1)
        vals = [
            -hit[0] if (hit := self.table.entries.get(k)) is not None else miss
            for k in dedup_keys(kids)
        ]
        return np.array(vals, dtype=float).reshape(n, d)


@dataclass
class VerifyReport:
    checked: int = 0
    uncovered: int = 0
    failures: int = 0
    noise: int = 0
    worst: list = field(default_factory=list)  # (loop, sequence, stored, oracle)

    @property
    def ok(self) -> bool:
        return self.failures == 0


def verify_values(ts: TrainingSet, table: ValueTable, max_report: int = 10) -> VerifyReport:
    """Compare stored percept values with BFS distances.

    Each percept is rebuilt from its generating sequence on the exact identity,
    so perturbed starts still map onto table keys. Exhaustive-loop mismatches
    are failures; in sampled loops a value more negative than the truth is
    label noise, anything else is a failure.
    """
    if ts.space.fingerprint != table.fingerprint:
        raise FingerprintMismatch(table.fingerprint, ts.space.fingerprint, "training set")
    rep = VerifyReport()
    for ld in ts.loops:
        for value, seq in zip(ld.values, ld.sequences):
            dist = oracle_distance(sequence_unitary(seq, ts.space), table)
            if dist is None:
                rep.uncovered += 1
                continue
            rep.checked += 1
            value = int(value)
            if value == -dist:
                continue
            if not ld.exhaustive and value < -dist:
                rep.noise += 1
                continue
            rep.failures += 1
            if len(rep.worst) < max_report:
                rep.worst.append((ld.loop, seq, value, -dist))
    return rep


def save_table(table: ValueTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<HBHQHI", TABLE_VERSION, table.num_qubits, table.n_actions,
                             table.fingerprint, table.max_depth, len(table)))
        for key, (dist, seq) in table.entries.items():
            fh.write(key)
            fh.write(struct.pack(f"<HH{len(seq)}H", dist, len(seq), *seq))


def load_table(path) -> ValueTable:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != TABLE_MAGIC:
        raise ValueError(f"{path}: not an oracle table")
    hdr = "<HBHQHI"
    try:
        version, m, d, fp, depth, count = struct.unpack_from(hdr, data, 4)
        if version != TABLE_VERSION:
            raise ValueError(f"{path}: unsupported table version {version}")
        off = 4 + struct.calcsize(hdr)
        entries = {}
        for _ in range(count):
            key = data[off: off + 16]
            if len(key) != 16:
                raise struct.error("short key")
            dist, n = struct.unpack_from("<HH", data, off + 16)
            seq = struct.unpack_from(f"<{n}H", data, off + 20)
            off += 20 + 2 * n
            entries[key] = (dist, tuple(seq))
    except struct.error as exc:
        raise ValueError(f"{path}: truncated oracle table") from exc
    return ValueTable(entries, depth, fp, m, d)
