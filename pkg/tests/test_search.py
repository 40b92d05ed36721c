import numpy as np
import pytest

from qrlc.gates import CZ, named_action_space
from qrlc.linalg import canonical_phase, fidelity_f1, identity
from qrlc.oracle import FingerprintMismatch, OracleQ, bfs_table, oracle_distance, sequence_unitary
from qrlc.qnet import TrainConfig, train
from qrlc.search import (
    BUDGET_EXHAUSTED, CONVERGED, SearchConfig, SearchNode, circuit_unitary, compile_target,
    eval_f, frontier_search, gates_unitary, greedy_rollout, multi_dqn_search,
)
from qrlc.targets import haar_unitary, kak_template_target, single_qubit_pool


@pytest.fixture(scope="module")
def oracle21():
    space = named_action_space("2-1")
    return space, OracleQ(bfs_table(space, 2), space)


@pytest.fixture(scope="module")
def oracle_xyt(xyt_space, xyt_table):
    return OracleQ(xyt_table, xyt_space)


def _same_result(a, b):
    return (a.actions == b.actions and a.gates == b.gates and a.f1 == b.f1 and a.status == b.status
            and a.nodes_expanded == b.nodes_expanded and a.stage_f1 == b.stage_f1)


def test_identity_target_is_empty(oracle21):
    space, q = oracle21
    for mode in ("greedy", "frontier"):
        r = compile_target(identity(2), q, space, SearchConfig(mode=mode))
        assert r.gates == [] and r.f1 == pytest.approx(1.0) and r.status == CONVERGED


def test_cz_target(oracle21):
    space, q = oracle21
    r = greedy_rollout(CZ, q, space)
    assert r.gates == ["CZ@q1q2"] and r.f1 == pytest.approx(1.0) and (r.n1, r.n2) == (0, 1)


def test_three_action_targets_optimal(xyt_space, xyt_table, oracle_xyt):
    rng = np.random.default_rng(0)
    n = 0
    while n < 20:
        seq = rng.integers(len(xyt_space), size=3)
        u = sequence_unitary(seq, xyt_space)
        if oracle_distance(u, xyt_table) != 3:
            continue
        n += 1
        r = greedy_rollout(u, oracle_xyt, xyt_space)
        assert r.length == 3 and r.infidelity < 1e-4


def test_eval_f_examples(xyt_space, oracle_xyt):
    node = SearchNode(canonical_phase(xyt_space.matrices[0]), 0)
    raw = oracle_xyt.q_values(node.residual[None])[0]
    assert eval_f(node, 2, oracle_xyt, xyt_space) == raw[2]
    deep = SearchNode(node.residual, -5)
    assert eval_f(deep, 2, oracle_xyt) == raw[2] - 5
    with pytest.raises(FingerprintMismatch):
        eval_f(node, 0, oracle_xyt, named_action_space("2-1"))


def test_max_f_constant_along_optimal_path(xyt_space, oracle_xyt):
    u = sequence_unitary([0, 2, 4, 1, 4], xyt_space)
    r = greedy_rollout(u, oracle_xyt, xyt_space)
    assert r.converged
    search_actions = [xyt_space.inverse_index[a] for a in reversed(r.actions)]
    p = canonical_phase(u)
    values = []
    for g, a in enumerate([None] + search_actions):
        if a is not None:
            p = canonical_phase(xyt_space.matrices[a] @ p)
        node = SearchNode(p, -g)
        values.append(max(eval_f(node, j, oracle_xyt) for j in range(len(xyt_space))))
    assert len(set(values[:-1])) == 1


def test_residual_algebra(desk_model, xyt_space):
    net = desk_model[0]
    for seed in range(5):
        u = haar_unitary(2, seed)
        r = greedy_rollout(u, net, xyt_space, SearchConfig(depth=25, mode="greedy"))
        search_actions = [xyt_space.inverse_index[a] for a in reversed(r.actions)]
        p = u.copy()
        emitted = identity(1)
        for a in search_actions:
            p = canonical_phase(xyt_space.matrices[a] @ p)
            emitted = emitted @ xyt_space.matrices[a].conj().T
            assert np.allclose(canonical_phase(emitted @ p), canonical_phase(u), atol=1e-8)


def test_width_one_equals_greedy(desk_model, xyt_space):
    net = desk_model[0]
    rng = np.random.default_rng(1)
    targets = [haar_unitary(2, s) for s in range(10)]
    targets += [sequence_unitary(rng.integers(6, size=5), xyt_space) for _ in range(10)]
    for u in targets:
        g = greedy_rollout(u, net, xyt_space, SearchConfig(depth=40, mode="greedy"))
        f = frontier_search(u, net, xyt_space, SearchConfig(depth=40, width=1))
        assert g.actions == f.actions and g.f1 == f.f1 and g.status == f.status


def test_frontier_dominates_greedy(desk_model, xyt_space):
    net = desk_model[0]
    rng = np.random.default_rng(2)
    targets = [haar_unitary(2, 100 + s) for s in range(25)]
    targets += [sequence_unitary(rng.integers(6, size=rng.integers(4, 12)), xyt_space)
                for _ in range(25)]
    violations = []
    for i, u in enumerate(targets):
        g = greedy_rollout(u, net, xyt_space, SearchConfig(depth=60, mode="greedy"))
        f = frontier_search(u, net, xyt_space, SearchConfig(depth=60, width=32))
        if g.converged:
            ok = f.converged and f.length <= g.length
        else:
            ok = f.f1 >= g.f1
        if not ok:
            violations.append((i, g.f1, f.f1))
    assert violations == []


def test_seen_states_not_readded():
    space = named_action_space("1q-x")
    q = OracleQ(bfs_table(space, 4), space)
    cfg = SearchConfig(depth=50, width=128)
    r = frontier_search(haar_unitary(2, 0), q, space, cfg)
    # one lane step per iteration plus at most the 4 states of the cyclic group
    assert r.status == BUDGET_EXHAUSTED
    assert r.nodes_expanded <= cfg.depth + 4


def test_resimulation_matches(desk_model, xyt_space, oracle21):
    net = desk_model[0]
    space21, q21 = oracle21
    results = [compile_target(haar_unitary(2, s), net, xyt_space, SearchConfig(depth=30, width=8))
               for s in range(5)]
    results += [compile_target(haar_unitary(4, s), q21, space21, SearchConfig(depth=6, width=4))
                for s in range(3)]
    for r, u in zip(results, [haar_unitary(2, s) for s in range(5)] + [haar_unitary(4, s) for s in range(3)]):
        space = xyt_space if r.num_qubits == 1 else space21
        assert abs(fidelity_f1(u, gates_unitary(r.gates, space)) - r.f1) < 1e-10
        assert abs(fidelity_f1(u, circuit_unitary(r.actions, space)) - r.f1) < 1e-10
        assert r.n1 + r.n2 == r.length


def test_errors(oracle21, xyt_space, oracle_xyt):
    space, q = oracle21
    with pytest.raises(FingerprintMismatch):
        greedy_rollout(identity(1), q, xyt_space)
    with pytest.raises(ValueError):
        frontier_search(identity(1), q, space)
    with pytest.raises(ValueError):
        SearchConfig(eps=0)
    with pytest.raises(ValueError):
        SearchConfig(mode="beam")
    with pytest.raises(ValueError):
        multi_dqn_search(identity(1), [], xyt_space)
    with pytest.raises(ValueError):
        multi_dqn_search(identity(1), [oracle_xyt, q], [xyt_space, space])


def test_time_and_expansion_budgets(desk_model, xyt_space):
    net = desk_model[0]
    r = frontier_search(haar_unitary(2, 3), net, xyt_space, SearchConfig(depth=500, max_expansions=50))
    assert r.nodes_expanded <= 50 + 32
    r = greedy_rollout(haar_unitary(2, 3), net, xyt_space, SearchConfig(depth=500, max_expansions=7,
                                                                      mode="greedy"))
    assert r.nodes_expanded == 7


def test_multi_single_model_identical(desk_model, xyt_space):
    net = desk_model[0]
    cfg = SearchConfig(depth=40, width=16)
    for s in range(5):
        u = haar_unitary(2, 200 + s)
        assert _same_result(multi_dqn_search(u, [net], xyt_space, cfg),
                            frontier_search(u, net, xyt_space, cfg))


def test_multi_stage_f1_monotone(desk_model, xyt_space, oracle_xyt):
    net = desk_model[0]
    cfg = SearchConfig(depth=30, width=8)
    for s in range(10):
        u = haar_unitary(2, 300 + s)
        r = multi_dqn_search(u, [net, oracle_xyt, net], xyt_space, cfg)
        assert all(b >= a - 1e-12 for a, b in zip(r.stage_f1, r.stage_f1[1:]))
        assert abs(fidelity_f1(u, gates_unitary(r.gates, xyt_space)) - r.f1) < 1e-10
        assert r.f1 == pytest.approx(r.stage_f1[-1], abs=1e-12)


def test_multi_two_seeded_models_on_kak_targets():
    space = named_action_space("2-1")
    models = [train(space, TrainConfig(loops=2, l_star=2, hidden=(64, 32), n_blocks=1, seed=s))[0]
              for s in (0, 1)]
    pool = single_qubit_pool(space)
    cfg = SearchConfig(depth=12, width=8)
    single, multi = [], []
    for seed in range(20):
        u = kak_template_target(pool, 2, seed=seed)
        single.append(frontier_search(u, models[0], space, cfg).f1)
        multi.append(multi_dqn_search(u, models, space, cfg).f1)
    assert np.mean(multi) >= np.mean(single)
