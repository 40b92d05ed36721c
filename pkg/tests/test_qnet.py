import numpy as np
import pytest

from qrlc.gates import named_action_space
from qrlc.linalg import identity
from qrlc.oracle import FingerprintMismatch, OracleQ, bfs_table, sequence_unitary
from qrlc.qnet import (
    AdamState, ModelFormatError, QNetwork, TrainConfig, adam_step, bootstrap_targets,
    encode_batch, encode_percept, load_model, loss_bootstrap, loss_exact, network_for_space,
    save_model, train,
)
from qrlc.targets import haar_unitary


def small_net(space=None, seed=0, **kw):
    space = space or named_action_space("2-1")
    return network_for_space(space, hidden=(24, 16), n_blocks=2, seed=seed, **kw)


def test_encode_examples():
    x = encode_percept(identity(2))
    assert x.shape == (32,)
    assert np.flatnonzero(x).tolist() == [0, 5, 10, 15] and np.all(x[[0, 5, 10, 15]] == 1)
    u = haar_unitary(4, 1)
    assert np.allclose(encode_percept(np.exp(0.9j) * u), encode_percept(u), atol=1e-13)
    assert encode_percept(identity(3)).shape == (128,)
    assert encode_batch(np.stack([u, u])).shape == (2, 32)


def test_zero_head_gives_zero_q():
    net = small_net()
    net.params["out.W"][:] = 0
    net.params["out.b"][:] = 0
    x = np.random.default_rng(0).standard_normal((5, 32))
    assert np.all(net.forward(x, train=True) == 0)
    assert np.all(net.forward(x) == 0)


def test_eval_mode_independent_of_batch():
    net = small_net()
    x = np.random.default_rng(1).standard_normal((16, 32))
    net.forward(x, train=True)  # populate running stats
    full = net.forward(x)
    for i in range(0, 16, 5):
        assert np.allclose(net.forward(x[i:i + 3]), full[i:i + 3], atol=1e-12)
    before = {k: v.copy() for k, v in net.buffers.items()}
    net.forward(x[:4])
    assert all(np.array_equal(before[k], net.buffers[k]) for k in before)


def test_nonfinite_params_raise():
    net = small_net()
    net.params["fc1.W"][0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        net.forward(np.ones((3, 32)))


def _fd_check(net, x, loss_fn, n_coords=20, h=1e-5, seed=0):
    """Max relative error of backprop vs central differences over random coordinates."""
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(grad=True)
    names = list(net.params)
    worst = 0.0
    for k in range(n_coords):
        name = names[k % len(names)]
        p = net.params[name]
        idx = tuple(rng.integers(s) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp = loss_fn()
        p[idx] = old - h
        lm = loss_fn()
        p[idx] = old
        fd = (lp - lm) / (2 * h)
        an = grads[name][idx]
        denom = max(abs(fd), abs(an), 1e-6)
        worst = max(worst, abs(fd - an) / denom)
    return worst


def test_backprop_sum_of_outputs_matches_fd():
    net = small_net(seed=3)
    x = np.random.default_rng(2).standard_normal((9, 32))

    def loss_fn(grad=False):
        q = net.forward(x, train=True, update_stats=False, keep_cache=grad)
        if not grad:
            return float(q.sum())
        return float(q.sum()), net.backward(np.ones_like(q))

    assert _fd_check(net, x, loss_fn, n_coords=40) <= 1e-4


def test_backprop_loss_exact_matches_fd():
    net = small_net(seed=4)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((11, 32))
    y = -rng.integers(0, 5, size=(11, 13)).astype(float)

    def loss_fn(grad=False):
        if grad:
            return loss_exact(net, x, y, grad=True)
        q = net.forward(x, train=True, update_stats=False)
        return float(np.mean((q - y) ** 2))

    assert _fd_check(net, x, loss_fn, n_coords=40) <= 1e-4


def test_loss_exact_examples():
    net = QNetwork(4, 2, hidden=(3, 3), n_blocks=0)
    net.params["out.W"][:] = 0
    net.params["out.b"][:] = 0
    x = np.zeros((1, 4))
    assert loss_exact(net, x, [[-1.0, -1.0]]) == pytest.approx(1.0)
    assert loss_exact(net, x, [[0.0, 0.0]]) == 0.0
    y = np.array([[0.5, -2.0]])
    assert loss_exact(net, x, 3 * y) == pytest.approx(9 * loss_exact(net, x, y))


def test_bootstrap_constant_target_net_and_anchor():
    space = named_action_space("1q-xyt")
    aux = network_for_space(space, hidden=(8, 8), n_blocks=1)
    aux.params["out.W"][:] = 0
    aux.params["out.b"][:] = -2.5
    w = haar_unitary(2, 0)[None]
    y = bootstrap_targets(aux, w, space)
    assert np.allclose(y, -3.5)
    # a percept one action away from the goal anchors that action's target at 0
    w = space.matrices[space.inverse_index[4]][None]
    y = bootstrap_targets(aux, w, space)
    assert y[0, 4] == 0 and np.allclose(np.delete(y[0], 4), -3.5)


def test_bootstrap_fixed_point_on_exact_values():
    space = named_action_space("1q-x")
    table = bfs_table(space, 6)
    oracle = OracleQ(table, space)
    us = np.stack([sequence_unitary(seq, space) for _, (_, seq) in table.items()])
    y = bootstrap_targets(oracle, us, space)
    assert np.array_equal(y, oracle.q_values(us))
    # a network reproducing those values has zero bootstrap loss
    net = QNetwork(8, 2, hidden=(4, 4), n_blocks=0, fingerprint=space.fingerprint)
    net.params["out.W"][:] = 0
    net.params["out.b"][:] = 0
    loss = loss_bootstrap(net, oracle, us, space, train=False)
    assert loss == pytest.approx(float(np.mean(y**2)))
    assert loss >= 0


def test_target_net_untouched_by_updates():
    space = named_action_space("1q-xyt")
    net = network_for_space(space, hidden=(16, 8), n_blocks=1)
    aux = net.copy()
    snap = {k: v.copy() for k, v in aux.params.items()}
    us = np.stack([haar_unitary(2, s) for s in range(8)])
    loss, g = loss_bootstrap(net, aux, us, space, grad=True)
    net.params, _ = adam_step(net.params, g, AdamState.zeros_like(net.params))
    assert all(np.array_equal(snap[k], aux.params[k]) for k in snap)
    assert not np.array_equal(net.params["out.b"], aux.params["out.b"])


def test_adam_properties():
    p = {"a": np.array([1.0, -2.0, 3.0])}
    s = AdamState.zeros_like(p)
    same, _ = adam_step(p, {"a": np.zeros(3)}, s, lr=0.1)
    assert np.array_equal(same["a"], p["a"])
    g = {"a": np.array([0.3, -7.0, 1e-3])}
    new, s1 = adam_step(p, g, s, lr=1e-3)
    step = new["a"] - p["a"]
    assert np.allclose(step, -1e-3 * np.sign(g["a"]), rtol=0.01)
    again, _ = adam_step(p, g, s, lr=1e-3)
    assert np.array_equal(again["a"], new["a"]) and s1.t == 1
    with pytest.raises(FloatingPointError):
        adam_step(p, {"a": np.array([np.inf, 0, 0])}, s)


def test_train_single_loop_reaches_delta():
    space = named_action_space("2-1")
    cfg = TrainConfig(loops=1, l_star=3, hidden=(64, 32), n_blocks=1, seed=0)
    net, log = train(space, cfg)
    assert log.epochs_in_loop(1) <= 100
    assert log.final_loss() <= 0.02


def test_train_epoch_cap_and_determinism():
    space = named_action_space("1q-xy")
    cfg = TrainConfig(loops=4, l_star=2, budget=50, hidden=(16, 16), n_blocks=1,
                      delta=1e-9, batch_size=32, seed=3)
    net1, log1 = train(space, cfg)
    net2, _ = train(space, cfg)
    for loop in range(1, 5):
        assert log1.epochs_in_loop(loop) == 100 * loop
    assert [s["mode"] for s in log1.loop_summary] == ["exact", "exact", "bootstrap", "bootstrap"]
    assert all(np.array_equal(net1.params[k], net2.params[k]) for k in net1.params)


def test_desk_argmax_matches_oracle(desk_model, xyt_space, xyt_table):
    net, _, _ = desk_model
    us, good = [], []
    for _, (d, seq) in xyt_table.items():
        if 1 <= d <= 4:
            u = sequence_unitary(seq, xyt_space)
            us.append(u)
            kids = [xyt_table.entries.get(k) for k in _child_keys(u, xyt_space)]
            good.append({j for j, e in enumerate(kids) if e is not None and e[0] == d - 1})
    pred = net.q_values(np.stack(us)).argmax(axis=1)
    hit = np.mean([p in g for p, g in zip(pred, good)])
    assert hit >= 0.95


def _child_keys(u, space):
    from qrlc.linalg import dedup_keys
    return dedup_keys(np.einsum("aij,jk->aik", space.matrices, u))


def test_save_load_roundtrip(tmp_path):
    space = named_action_space("2-1")
    net = small_net(space, seed=7)
    x = np.random.default_rng(0).standard_normal((6, 32))
    net.forward(x, train=True)
    net.loop = 3
    path = tmp_path / "m.qrlc"
    save_model(net, path, TrainConfig())
    back = load_model(path, expected_fingerprint=space.fingerprint)
    assert np.array_equal(back.forward(x), net.forward(x))
    assert back.loop == 3 and back.fingerprint == space.fingerprint


def test_load_errors(tmp_path):
    space = named_action_space("2-1")
    net = small_net(space)
    path = tmp_path / "m.qrlc"
    save_model(net, path)
    other = named_action_space("1q-xyt").fingerprint
    with pytest.raises(FingerprintMismatch) as exc:
        load_model(path, expected_fingerprint=other)
    assert f"{other:016x}" in str(exc.value) and f"{space.fingerprint:016x}" in str(exc.value)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ModelFormatError):
        load_model(path)
    path.write_bytes(data[:20])
    with pytest.raises(ModelFormatError):
        load_model(path)
    path.write_bytes(b"NOPE" + data[4:])
    with pytest.raises(ModelFormatError):
        load_model(path)
