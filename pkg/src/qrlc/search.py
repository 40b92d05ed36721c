"""Q-guided circuit synthesis: greedy rollout, frontier search, multi-model search.

The search state is the residual ``p`` that remains to be decomposed. It starts
at the target; taking action ``A`` moves to ``A p`` and appends ``A^dagger`` to
the circuit. A model is anything with ``q_values(residuals) -> (n, d)`` and a
``fingerprint`` attribute (a trained :class:`QNetwork` or an ``OracleQ``).

Termination uses infidelity ``1 - F1 <= eps``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import time

import numpy as np

from .gates import ActionSpace
from .linalg import as_matrix, canonical_phase, dedup_key, fidelity_f1, identity
from .oracle import FingerprintMismatch

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"


@dataclass
class SearchConfig:
    depth: int | None = None  # None: 200 for up to two qubits, 500 for three
    eps: float = 1e-4
    width: int = 128
    time_limit: float | None = 600.0
    max_expansions: int | None = None
    mode: str = "frontier"

    def __post_init__(self):
        if self.depth is not None and self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        if self.mode not in ("greedy", "frontier"):
            raise ValueError(f"mode must be 'greedy' or 'frontier', got {self.mode!r}")

    def depth_for(self, num_qubits: int) -> int:
        if self.depth is not None:
            return self.depth
        return 500 if num_qubits >= 3 else 200


@dataclass(eq=False)
class SearchNode:
    residual: np.ndarray
    g: int  # minus the number of actions taken
    actions: tuple = ()
    q: np.ndarray | None = None
    tried: set = field(default_factory=set)
    order: int = 0

    @property
    def infidelity(self) -> float:
        return 1.0 - abs(np.trace(self.residual)) / self.residual.shape[0]


@dataclass
class CompileResult:
    """``actions`` / ``gates`` are in circuit-application order (first applied first)."""

    actions: list
    gates: list
    f1: float
    n1: int
    n2: int
    nodes_expanded: int
    elapsed: float
    status: str
    num_qubits: int
    stage_f1: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def infidelity(self) -> float:
        return 1.0 - self.f1

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def check_model(model, space: ActionSpace) -> None:
    fp = getattr(model, "fingerprint", None)
    if fp != space.fingerprint:
        raise FingerprintMismatch(space.fingerprint, fp if fp is not None else 0)


def eval_f(node: SearchNode, action: int, model, space: ActionSpace | None = None) -> float:
    """f(p, A) = g(p) + Q(p, A)."""
    if space is not None:
        check_model(model, space)
    if node.q is None:
        node.q = model.q_values(node.residual[None])[0]
    return float(node.g + node.q[action])


def circuit_unitary(actions, space: ActionSpace) -> np.ndarray:
    """Re-simulate a circuit given as action indices in application order."""
    u = identity(space.num_qubits)
    for a in actions:
        u = space.matrices[a] @ u
    return u


def _result(node_actions, target, space, expanded, t0, eps, stage_f1=None) -> CompileResult:
    # node_actions are the search actions; the circuit applies their inverses in reverse
    circuit = [space.inverse_index[a] for a in reversed(node_actions)]
    f1 = fidelity_f1(target, circuit_unitary(circuit, space))
    n2 = sum(1 for a in circuit if space.actions[a].is_two_qubit)
    status = CONVERGED if 1.0 - f1 <= eps else BUDGET_EXHAUSTED
    return CompileResult(
        circuit, [space.labels[a] for a in circuit], f1, len(circuit) - n2, n2,
        expanded, time.perf_counter() - t0, status, space.num_qubits,
        stage_f1 if stage_f1 is not None else [f1],
    )


def _prepare(target, model, space):
    target = as_matrix(target)
    if target.shape != (space.dim, space.dim):
        raise ValueError(f"target shape {target.shape} does not match action space dim {space.dim}")
    check_model(model, space)
    return target


def greedy_rollout(target, model, space: ActionSpace, cfg: SearchConfig | None = None) -> CompileResult:
    """Repeatedly apply the argmax-Q action (lowest index on ties)."""
    cfg = cfg or SearchConfig(mode="greedy")
    target = _prepare(target, model, space)
    t0 = time.perf_counter()
    depth = cfg.depth_for(space.num_qubits)
    p = canonical_phase(target)
    path = []
    best_inf, best_len = _infid(p), 0
    expanded = 0
    while best_inf > cfg.eps and len(path) < depth:
        if _out_of_budget(cfg, t0, expanded):
            break
        a = int(np.argmax(model.q_values(p[None])[0]))
        p = canonical_phase(space.matrices[a] @ p)
        path.append(a)
        expanded += 1
        inf = _infid(p)
        if inf < best_inf:
            best_inf, best_len = inf, len(path)
    return _result(path[:best_len], target, space, expanded, t0, cfg.eps)


def _infid(p) -> float:
    return 1.0 - abs(np.trace(p)) / p.shape[0]


def _out_of_budget(cfg, t0, expanded) -> bool:
    if cfg.max_expansions is not None and expanded >= cfg.max_expansions:
        return True
    return cfg.time_limit is not None and time.perf_counter() - t0 > cfg.time_limit


def frontier_search(target, model, space: ActionSpace, cfg: SearchConfig | None = None) -> CompileResult:
    """Set-based best-first search over residuals.

    Each iteration expands every open node once. A pinned lane follows the
    argmax action exactly like :func:`greedy_rollout`; every other node
    expands its best untried action whose successor has not been seen.
    Expanded nodes stay open while they have untried actions. The open set
    is cut back to ``width`` nodes by ``f = g + max untried Q`` (newer nodes
    first on ties). On budget exhaustion the node closest to the identity is
    returned, earliest-created first on ties.
    """
    cfg = cfg or SearchConfig()
    target = _prepare(target, model, space)
    t0 = time.perf_counter()
    depth = cfg.depth_for(space.num_qubits)
    d = len(space)

    counter = 0
    root = SearchNode(canonical_phase(target), 0)
    root.q = model.q_values(root.residual[None])[0]
    best = root
    if root.infidelity <= cfg.eps:
        return _result((), target, space, 0, t0, cfg.eps)
    seen = {dedup_key(root.residual)}
    lane = root
    open_nodes: list[SearchNode] = []  # non-lane nodes
    expanded = 0
    done = None

    for _ in range(depth):
        if _out_of_budget(cfg, t0, expanded):
            break
        fresh = []
        # lane step
        a = int(np.argmax(lane.q))
        lane.tried.add(a)
        counter += 1
        succ = SearchNode(canonical_phase(space.matrices[a] @ lane.residual), lane.g - 1,
                          lane.actions + (a,), order=counter)
        seen.add(dedup_key(succ.residual))
        expanded += 1
        old_tip, lane = lane, succ
        fresh.append(succ)
        # ordinary nodes
        for node in list(open_nodes) if cfg.width > 1 else []:
            child = _expand_best_unseen(node, space, seen)
            if child is None:
                continue
            expanded += 1
            counter += 1
            child.order = counter
            fresh.append(child)
        qs = model.q_values(np.stack([n.residual for n in fresh]))
        for n, q in zip(fresh, qs):
            n.q = q
        for n in fresh:
            if n.infidelity < best.infidelity:
                best = n
            if done is None and n.infidelity <= cfg.eps:
                done = n
        if done is not None:
            break
        open_nodes.append(old_tip)  # the previous lane tip stays open as an ordinary node
        open_nodes.extend(fresh[1:])
        open_nodes = _truncate(open_nodes, cfg.width - 1, d)
    final = done if done is not None else best
    return _result(final.actions, target, space, expanded, t0, cfg.eps)


def _expand_best_unseen(node: SearchNode, space: ActionSpace, seen: set):
    for a in np.argsort(-node.q, kind="stable"):
        a = int(a)
        if a in node.tried:
            continue
        node.tried.add(a)
        r = canonical_phase(space.matrices[a] @ node.residual)
        key = dedup_key(r)
        if key in seen:
            continue
        seen.add(key)
        return SearchNode(r, node.g - 1, node.actions + (a,))
    return None


def _node_f(node: SearchNode, d: int) -> float:
    untried = [a for a in range(d) if a not in node.tried]
    return node.g + float(np.max(node.q[untried]))


def _truncate(nodes, width, d):
    live = [n for n in nodes if len(n.tried) < d]
    if width <= 0:
        return []
    live.sort(key=lambda n: (-_node_f(n, d), -n.order))
    return live[:width]


def compile_target(target, model, space, cfg: SearchConfig | None = None) -> CompileResult:
    cfg = cfg or SearchConfig()
    if cfg.mode == "greedy":
        return greedy_rollout(target, model, space, cfg)
    return frontier_search(target, model, space, cfg)


def multi_dqn_search(target, models, spaces, cfg: SearchConfig | None = None) -> CompileResult:
    """Sequential collaboration: stage j compiles the residual left by stages 1..j-1.

    ``spaces`` is one ActionSpace shared by all models or a list matching
    ``models``. The final circuit applies the last stage's gates first, so its
    unitary is ``V_1 V_2 ... V_J``.
    """
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    if isinstance(spaces, ActionSpace):
        spaces = [spaces] * len(models)
    spaces = list(spaces)
    if len(spaces) != len(models):
        raise ValueError("one action space per model required")
    if len({s.dim for s in spaces}) != 1:
        raise ValueError("all action spaces must act on the same number of qubits")
    cfg = cfg or SearchConfig()
    target = as_matrix(target)
    t0 = time.perf_counter()

    first = compile_target(target, models[0], spaces[0], cfg)
    if len(models) == 1 or first.converged:
        return first
    stages = [(first, spaces[0])]
    residual = target
    stage_f1 = [first.f1]
    expanded = first.nodes_expanded
    for model, space in zip(models[1:], spaces[1:]):
        prev, prev_space = stages[-1]
        # target = V_prev @ residual_new
        residual = circuit_unitary(prev.actions, prev_space).conj().T @ residual
        stage_cfg = cfg
        if cfg.time_limit is not None:
            left = max(cfg.time_limit - (time.perf_counter() - t0), 1e-3)
            stage_cfg = SearchConfig(cfg.depth, cfg.eps, cfg.width, left, cfg.max_expansions, cfg.mode)
        res = compile_target(residual, model, space, stage_cfg)
        stages.append((res, space))
        expanded += res.nodes_expanded
        stage_f1.append(fidelity_f1(target, _stage_product(stages)))
        if 1.0 - stage_f1[-1] <= cfg.eps:
            break
    labels, actions = _concat(stages)
    v = _stage_product(stages)
    f1 = fidelity_f1(target, v)
    n2 = sum(sum(1 for a in r.actions if s.actions[a].is_two_qubit) for r, s in stages)
    status = CONVERGED if 1.0 - f1 <= cfg.eps else BUDGET_EXHAUSTED
    return CompileResult(actions, labels, f1, len(labels) - n2, n2, expanded,
                         time.perf_counter() - t0, status, spaces[0].num_qubits, stage_f1)


def _concat(stages):
    labels, actions = [], []
    for res, _ in reversed(stages):
        labels.extend(res.gates)
        actions.extend(res.actions)
    return labels, actions


def _stage_product(stages):
    v = None
    for res, space in stages:
        u = circuit_unitary(res.actions, space)
        v = u if v is None else v @ u
    return v


def gates_unitary(labels, space: ActionSpace) -> np.ndarray:
    """Re-simulate a circuit given as action labels in application order."""
    return circuit_unitary([space.index(lbl) for lbl in labels], space)
