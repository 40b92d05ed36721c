"""Loop-wise synthesis of training percepts and their ground-truth values.

Loop ``l`` applies every action to the percepts first produced at loop ``l-1``
(left multiplication, ``child = A @ W``). Up to ``l_star`` the expansion is
exhaustive with phase-invariant deduplication, so a percept's value is exactly
minus its gate distance to the start. Beyond ``l_star`` parents are sampled and
children get the value ``-l`` without deduplication; those labels may
overestimate the distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import struct

import numpy as np

from .gates import ActionSpace, PAULI_X, PAULI_Y, PAULI_Z, I2
from .linalg import dedup_keys, identity, tensor

logger = logging.getLogger(__name__)

SHARD_MAGIC = b"QRLD"
SHARD_VERSION = 1


class DatasetMemoryError(MemoryError):
    def __init__(self, loop: int, n_states: int, limit: int):
        super().__init__(
            f"dataset generation exceeded the state budget at loop {loop} "
            f"({n_states} states > {limit})"
        )
        self.loop = loop


def perturbed_identity(num_qubits: int, seed: int, alpha: float | None = None,
                       alpha_max: float = 0.002) -> np.ndarray:
    """Tensor product of small random rotations, one random axis per qubit.

    The rotation angle is shared by all qubits and drawn from
    ``U[-alpha_max, alpha_max]`` unless given explicitly.
    """
    if num_qubits not in (1, 2, 3):
        raise ValueError("num_qubits must be 1, 2 or 3")
    rng = np.random.default_rng(seed)
    if alpha is None:
        alpha = rng.uniform(-alpha_max, alpha_max)
    factors = []
    for _ in range(num_qubits):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        gen = axis[0] * PAULI_X + axis[1] * PAULI_Y + axis[2] * PAULI_Z
        factors.append(np.cos(alpha / 2) * I2 - 1j * np.sin(alpha / 2) * gen)
    return tensor(*factors)


@dataclass
class Percept:
    unitary: np.ndarray
    value: int
    sequence: tuple[int, ...]
    loop: int


@dataclass
class LoopData:
    """Percepts first produced at one loop.

    ``child_values[i, j]`` is the value of ``actions[j] @ unitaries[i]``; it is
    filled in when the next loop is expanded exhaustively and stays ``None``
    otherwise.
    """

    loop: int
    unitaries: np.ndarray
    values: np.ndarray
    sequences: list[tuple[int, ...]]
    exhaustive: bool
    child_values: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def percepts(self) -> list[Percept]:
        return [
            Percept(u, int(v), s, self.loop)
            for u, v, s in zip(self.unitaries, self.values, self.sequences)
        ]


def _children(unitaries: np.ndarray, space: ActionSpace) -> np.ndarray:
    # (n, d, dim, dim): child[i, j] = A_j @ W_i
    return np.einsum("aij,njk->naik", space.matrices, unitaries, optimize=True)


def expand_loop(previous: LoopData, space: ActionSpace, seen: dict | None = None,
                budget: int | None = None, rng=None) -> LoopData:
    """Expand ``previous`` by one loop.

    With ``seen`` (dedup key -> value), the expansion is exhaustive: every
    child of every parent is looked up, ``previous.child_values`` is filled and
    only never-seen children become the new loop's percepts. Without it,
    ``budget`` parents are drawn uniformly and each receives one random action
    (never the inverse of its own last action).
    """
    if len(previous) == 0:
        raise ValueError("cannot expand an empty loop")
    loop = previous.loop + 1
    d = len(space)
    dim = space.dim

    if seen is not None:
        kids = _children(previous.unitaries, space)
        keys = dedup_keys(kids.reshape(-1, dim, dim))
        child_values = np.empty(len(keys), dtype=np.int64)
        new_idx = []
        for k, key in enumerate(keys):
            v = seen.get(key)
            if v is None:
                v = -loop
                seen[key] = v
                new_idx.append(k)
            child_values[k] = v
        previous.child_values = child_values.reshape(len(previous), d)
        flat = kids.reshape(-1, dim, dim)
        seqs = [previous.sequences[k // d] + (k % d,) for k in new_idx]
        unitaries = flat[new_idx] if new_idx else np.empty((0, dim, dim), dtype=np.complex128)
        return LoopData(loop, unitaries, np.full(len(new_idx), -loop, dtype=np.int64), seqs, True)

    if budget is None or budget <= 0:
        raise ValueError("sampled expansion needs a positive budget")
    rng = np.random.default_rng() if rng is None else rng
    parents = rng.integers(len(previous), size=budget)
    actions = rng.integers(d, size=budget)
    for k, p in enumerate(parents):
        seq = previous.sequences[p]
        if seq and d > 1 and actions[k] == space.inverse_index[seq[-1]]:
            actions[k] = (actions[k] + 1 + rng.integers(d - 1)) % d
    unitaries = np.einsum(
        "nij,njk->nik", space.matrices[actions], previous.unitaries[parents], optimize=True
    )
    seqs = [previous.sequences[p] + (int(a),) for p, a in zip(parents, actions)]
    return LoopData(loop, unitaries, np.full(budget, -loop, dtype=np.int64), seqs, False)


@dataclass
class TrainingSet:
    space: ActionSpace
    start: np.ndarray
    loops: list[LoopData]
    config: dict = field(default_factory=dict)

    @property
    def max_loop(self) -> int:
        return self.loops[-1].loop

    def loop(self, l: int) -> LoopData:
        return self.loops[l]

    def percepts(self) -> list[Percept]:
        return [p for ld in self.loops[1:] for p in ld.percepts]

    def pool(self, upto: int):
        """Percepts of loops ``0..upto`` stacked, with exact child values where known.

        Returns ``(unitaries, child_values)``; rows without exact labels hold NaN.
        """
        parts = self.loops[: upto + 1]
        us = np.concatenate([ld.unitaries for ld in parts])
        d = len(self.space)
        cv = np.concatenate([
            ld.child_values.astype(float) if ld.child_values is not None
            else np.full((len(ld), d), np.nan)
            for ld in parts
        ])
        return us, cv


class DatasetBuilder:
    """Incremental generator; ``next_loop()`` yields one more loop at a time."""

    def __init__(self, space: ActionSpace, l_star: int, budget: int, seed: int = 0,
                 perturb: bool = True, max_states: int = 2_000_000):
        if l_star < 1 or budget < 1:
            raise ValueError("l_star and budget must be >= 1")
        self.space = space
        self.l_star = l_star
        self.budget = budget
        self.max_states = max_states
        self.rng = np.random.default_rng(seed)
        m = space.num_qubits
        start = perturbed_identity(m, seed) if perturb else identity(m)
        root = LoopData(0, start[None], np.zeros(1, dtype=np.int64), [()], True)
        self.seen = {dedup_keys(start[None])[0]: 0}
        self.set = TrainingSet(space, start, [root], {
            "l_star": l_star, "budget": budget, "seed": seed, "perturb": perturb,
        })

    def next_loop(self) -> LoopData:
        prev = self.set.loops[-1]
        loop = prev.loop + 1
        if loop <= self.l_star:
            if len(prev) == 0:
                # the reachable group closed at an earlier loop
                dim = self.space.dim
                nxt = LoopData(loop, np.empty((0, dim, dim), dtype=np.complex128),
                               np.empty(0, dtype=np.int64), [], True)
            else:
                nxt = expand_loop(prev, self.space, seen=self.seen)
            if len(self.seen) > self.max_states:
                raise DatasetMemoryError(loop, len(self.seen), self.max_states)
        else:
            source = prev if len(prev) else next(ld for ld in reversed(self.set.loops) if len(ld))
            nxt = expand_loop(source, self.space, budget=self.budget, rng=self.rng)
            nxt.loop = loop
            nxt.values[:] = -loop
        self.set.loops.append(nxt)
        logger.info("loop %d: %d percepts (%s)", loop, len(nxt),
                    "exhaustive" if nxt.exhaustive else "sampled")
        return nxt


def generate_training_set(space: ActionSpace, L: int, l_star: int, budget: int = 200_000,
                          seed: int = 0, perturb: bool = True,
                          max_states: int = 2_000_000) -> TrainingSet:
    if L < 1:
        raise ValueError("L must be >= 1")
    builder = DatasetBuilder(space, l_star, budget, seed, perturb, max_states)
    builder.set.config["L"] = L
    for _ in range(L):
        builder.next_loop()
    return builder.set


def write_shard(path, loop: LoopData, space: ActionSpace) -> None:
    m = space.num_qubits
    with open(path, "wb") as fh:
        fh.write(SHARD_MAGIC)
        fh.write(struct.pack("<HBHHI", SHARD_VERSION, m, len(space), loop.loop, len(loop)))
        for u, v, seq in zip(loop.unitaries, loop.values, loop.sequences):
            fh.write(struct.pack("<bH", int(v), len(seq)))
            fh.write(struct.pack(f"<{len(seq)}H", *seq))
            fh.write(np.concatenate([u.real.ravel(), u.imag.ravel()]).astype("<f8").tobytes())


def read_shard(path) -> LoopData:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SHARD_MAGIC:
        raise ValueError(f"{path}: not a percept shard")
    version, m, _d, loop, count = struct.unpack_from("<HBHHI", data, 4)
    if version != SHARD_VERSION:
        raise ValueError(f"{path}: unsupported shard version {version}")
    dim = 2**m
    off = 4 + struct.calcsize("<HBHHI")
    us, vals, seqs = [], [], []
    try:
        for _ in range(count):
            v, n = struct.unpack_from("<bH", data, off)
            off += 3
            seq = struct.unpack_from(f"<{n}H", data, off)
            off += 2 * n
            flat = np.frombuffer(data, dtype="<f8", count=2 * dim * dim, offset=off)
            off += 16 * dim * dim
            us.append((flat[: dim * dim] + 1j * flat[dim * dim:]).reshape(dim, dim))
            vals.append(v)
            seqs.append(tuple(seq))
    except (struct.error, ValueError) as exc:
        raise ValueError(f"{path}: truncated shard") from exc
    unitaries = np.array(us) if us else np.empty((0, dim, dim), dtype=np.complex128)
    return LoopData(loop, unitaries, np.array(vals, dtype=np.int64), seqs, False)
