"""Residual-MLP Q-network with hand-written backprop, Adam, and the training loop.

The network maps an encoded unitary ``W`` to one value per action; entry ``j``
estimates the value (minus the gate distance to the identity) of
``actions[j] @ W``.

Architecture::

    x -> [Linear -> BN -> LeakyReLU] x 2
      -> R x ( r -> Linear -> BN -> LeakyReLU -> Linear -> BN, + r, LeakyReLU )
      -> Linear(+bias) -> q

Linear layers that feed a batch norm carry no bias (the BN shift absorbs it).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import json
import logging
import struct
import time

import numpy as np

from .dataset import DatasetBuilder
from .gates import ActionSpace
from .linalg import canonical_phase_batch
from .oracle import FingerprintMismatch

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"QRLC"
MODEL_VERSION = 1
GOAL_INFIDELITY = 1e-4


class ModelFormatError(ValueError):
    pass


def encode_percept(u) -> np.ndarray:
    """Canonical phase, then real parts row-major followed by imaginary parts."""
    return encode_batch(np.asarray(u)[None])[0]


def encode_batch(us) -> np.ndarray:
    us = canonical_phase_batch(us)
    flat = us.reshape(us.shape[0], -1)
    return np.concatenate([flat.real, flat.imag], axis=1)


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


class QNetwork:
    """Parameters live in ``params`` (ordered dict of float64 arrays);
    batch-norm running statistics live in ``buffers``."""

    def __init__(self, input_dim: int, n_actions: int, hidden=(512, 256), n_blocks: int = 2,
                 leak: float = 0.01, momentum: float = 0.9, bn_eps: float = 1e-5,
                 seed: int = 0, num_qubits: int | None = None, fingerprint: int = 0):
        self.input_dim = int(input_dim)
        self.n_actions = int(n_actions)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_blocks = int(n_blocks)
        self.leak = float(leak)
        self.momentum = float(momentum)
        self.bn_eps = float(bn_eps)
        self.num_qubits = num_qubits if num_qubits is not None else _qubits_from_input(input_dim)
        self.fingerprint = int(fingerprint)
        self.loop = 0
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None
        rng = np.random.default_rng(seed)

        h1, h2 = self.hidden
        self._linear("fc0", self.input_dim, h1, rng)
        self._bn("bn0", h1)
        self._linear("fc1", h1, h2, rng)
        self._bn("bn1", h2)
        for b in range(self.n_blocks):
            self._linear(f"blk{b}.fca", h2, h2, rng)
            self._bn(f"blk{b}.bna", h2)
            self._linear(f"blk{b}.fcb", h2, h2, rng)
            self._bn(f"blk{b}.bnb", h2)
        self.params["out.W"] = rng.standard_normal((h2, self.n_actions)) * np.sqrt(1.0 / h2)
        self.params["out.b"] = np.zeros(self.n_actions)

    def _linear(self, name, fan_in, fan_out, rng):
        self.params[f"{name}.W"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)

    def _bn(self, name, width):
        self.params[f"{name}.gamma"] = np.ones(width)
        self.params[f"{name}.beta"] = np.zeros(width)
        self.buffers[f"{name}.mean"] = np.zeros(width)
        self.buffers[f"{name}.var"] = np.ones(width)

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden, self.n_blocks, self.n_actions]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "QNetwork":
        new = object.__new__(QNetwork)
        new.__dict__.update(self.__dict__)
        new.params = {k: v.copy() for k, v in self.params.items()}
        new.buffers = {k: v.copy() for k, v in self.buffers.items()}
        new._cache = None
        return new

    # -- forward / backward -------------------------------------------------

    def _bn_forward(self, name, z, train, update_stats, cache):
        gamma, beta = self.params[f"{name}.gamma"], self.params[f"{name}.beta"]
        # a single row has no batch statistics; fall back to the running ones
        train = train and z.shape[0] > 1
        if train:
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            if update_stats:
                m = self.momentum
                self.buffers[f"{name}.mean"] = m * self.buffers[f"{name}.mean"] + (1 - m) * mu
                self.buffers[f"{name}.var"] = m * self.buffers[f"{name}.var"] + (1 - m) * var
        else:
            mu, var = self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"]
        inv_std = 1.0 / np.sqrt(var + self.bn_eps)
        xhat = (z - mu) * inv_std
        if cache is not None:
            cache[name] = (xhat, inv_std, train)
        return gamma * xhat + beta

    def _bn_backward(self, name, dy, cache, grads):
        xhat, inv_std, train = cache[name]
        gamma = self.params[f"{name}.gamma"]
        grads[f"{name}.gamma"] = (dy * xhat).sum(axis=0)
        grads[f"{name}.beta"] = dy.sum(axis=0)
        dxhat = dy * gamma
        if not train:
            return dxhat * inv_std
        n = dy.shape[0]
        return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))

    def forward(self, x, train: bool = False, update_stats: bool = True, keep_cache: bool = False):
        """Q-values for a batch of encoded percepts, shape (n, n_actions).

        ``train=True`` normalises with batch statistics (and updates the
        running ones unless ``update_stats=False``); eval mode uses the
        running statistics and is a pure function of (params, x).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != self.input_dim:
            raise ValueError(f"input width {x.shape[1]} != network input {self.input_dim}")
        cache = {} if keep_cache else None
        p = self.params
        slope = self.leak

        def dense_bn_act(name_fc, name_bn, h):
            z = h @ p[f"{name_fc}.W"]
            n = self._bn_forward(name_bn, z, train, update_stats, cache)
            a = _leaky(n, slope)
            if cache is not None:
                cache[name_fc] = (h, n)
            return a

        h = dense_bn_act("fc0", "bn0", x)
        h = dense_bn_act("fc1", "bn1", h)
        for b in range(self.n_blocks):
            r = h
            a = dense_bn_act(f"blk{b}.fca", f"blk{b}.bna", r)
            z = a @ p[f"blk{b}.fcb.W"]
            nb = self._bn_forward(f"blk{b}.bnb", z, train, update_stats, cache)
            s = nb + r
            h = _leaky(s, slope)
            if cache is not None:
                cache[f"blk{b}.fcb"] = (a, s)
        q = h @ p["out.W"] + p["out.b"]
        if cache is not None:
            cache["out"] = h
            self._cache = cache
        if not np.all(np.isfinite(q)):
            raise FloatingPointError("non-finite network output")
        return q

    def backward(self, dq) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dq * q)`` w.r.t. all params for the last cached forward."""
        cache = self._cache
        if cache is None:
            raise RuntimeError("backward() needs a preceding forward(..., keep_cache=True)")
        p = self.params
        slope = self.leak
        grads = {}
        h = cache["out"]
        grads["out.W"] = h.T @ dq
        grads["out.b"] = dq.sum(axis=0)
        dh = dq @ p["out.W"].T

        def dense_bn_act_back(name_fc, name_bn, da):
            h_in, n = cache[name_fc]
            dn = da * np.where(n > 0, 1.0, slope)
            dz = self._bn_backward(name_bn, dn, cache, grads)
            grads[f"{name_fc}.W"] = h_in.T @ dz
            return dz @ p[f"{name_fc}.W"].T

        for b in reversed(range(self.n_blocks)):
            a, s = cache[f"blk{b}.fcb"]
            ds = dh * np.where(s > 0, 1.0, slope)
            dz = self._bn_backward(f"blk{b}.bnb", ds, cache, grads)
            grads[f"blk{b}.fcb.W"] = a.T @ dz
            da = dz @ p[f"blk{b}.fcb.W"].T
            dh = ds + dense_bn_act_back(f"blk{b}.fca", f"blk{b}.bna", da)
        dh = dense_bn_act_back("fc1", "bn1", dh)
        dense_bn_act_back("fc0", "bn0", dh)
        return {k: grads[k] for k in p}

    def q_values(self, residuals) -> np.ndarray:
        """Eval-mode Q-values for a stack of unitaries (n, dim, dim)."""
        return self.forward(encode_batch(residuals), train=False)


def _qubits_from_input(input_dim: int) -> int:
    dim2 = input_dim // 2
    return int(round(np.log2(dim2) / 2))


def network_for_space(space: ActionSpace, hidden=(512, 256), n_blocks: int = 2,
                      seed: int = 0, **kw) -> QNetwork:
    return QNetwork(2 * space.dim**2, len(space), hidden, n_blocks, seed=seed,
                    num_qubits=space.num_qubits, fingerprint=space.fingerprint, **kw)


# -- losses ----------------------------------------------------------------


def loss_exact(net: QNetwork, x, targets, grad: bool = False, train: bool = True):
    """Mean squared error between Q(W_i, A_j) and the true child values V_ji."""
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    q = net.forward(x, train=train, keep_cache=grad)
    resid = q - targets
    loss = float(np.mean(resid**2))
    if not grad:
        return loss
    return loss, net.backward(2.0 * resid / resid.size)


def bootstrap_targets(target_net: QNetwork, unitaries, space: ActionSpace, exact=None) -> np.ndarray:
    """y_ji = max_A' Q_target(A_j W_i, A') - 1, or 0 when A_j W_i is the goal.

    Where ``exact`` (n, d) holds finite values they replace the estimate.
    ``target_net`` may be any object with ``q_values`` (e.g. an exact oracle).
    """
    us = np.asarray(unitaries)
    n, d, dim = us.shape[0], len(space), space.dim
    kids = np.einsum("aij,njk->naik", space.matrices, us).reshape(-1, dim, dim)
    est = target_net.q_values(kids).max(axis=1) - 1.0
    fid = np.abs(np.trace(kids, axis1=1, axis2=2)) / dim
    y = np.where(1.0 - fid < GOAL_INFIDELITY, 0.0, est).reshape(n, d)
    if exact is not None:
        exact = np.asarray(exact, dtype=float)
        y = np.where(np.isnan(exact), y, exact)
    return y


def loss_bootstrap(net: QNetwork, target_net: QNetwork, unitaries, space: ActionSpace,
                   grad: bool = False, exact=None, train: bool = True):
    """Squared Bellman error against the frozen auxiliary network.

    ``target_net`` only provides targets; no gradient flows into it.
    """
    us = np.asarray(unitaries)
    if us.shape[0] == 0:
        raise ValueError("empty batch")
    y = bootstrap_targets(target_net, us, space, exact)
    return loss_exact(net, encode_batch(us), y, grad=grad, train=train)


# -- optimiser ---------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3):
    """One bias-corrected Adam update (no weight decay). Returns (params, state)."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        new_p[k] = p - lr * mhat / (np.sqrt(vhat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    loops: int = 8
    l_star: int = 3
    lr: float = 1e-3
    delta: float = 0.02
    epoch_factor: int = 100  # T(l) = epoch_factor * l
    batch_size: int = 1024
    batches_per_epoch: int = 1
    budget: int = 200_000
    hidden: tuple = (512, 256)
    n_blocks: int = 2
    perturb: bool = True
    max_states: int = 2_000_000
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        for name in ("loops", "l_star", "epoch_factor", "batch_size", "batches_per_epoch",
                     "budget", "n_blocks", "max_states"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lr <= 0 or self.delta <= 0:
            raise ValueError("lr and delta must be positive")

    def epochs(self, loop: int) -> int:
        return self.epoch_factor * loop


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # (loop, epoch, loss, mode)
    loop_summary: list = field(default_factory=list)

    def epochs_in_loop(self, loop: int) -> int:
        return sum(1 for r in self.records if r[0] == loop)

    def final_loss(self) -> float:
        return self.records[-1][2]


def train(space: ActionSpace, cfg: TrainConfig, builder: DatasetBuilder | None = None,
          on_loop_end=None, net: QNetwork | None = None):
    """Loop-wise DQN training with an auxiliary target network.

    At loop ``l`` the inputs are all percepts first produced at loops
    ``0..l-1``. Exact child values are the targets while ``l <= l_star``;
    afterwards the auxiliary network supplies bootstrapped targets for rows
    without exact labels. Each loop runs up to ``T(l)`` epochs and stops early
    once the epoch loss drops to ``delta``; the auxiliary network is then
    synchronised. ``on_loop_end(loop, net)`` is called after every loop.
    """
    rng = np.random.default_rng(cfg.seed)
    if builder is None:
        builder = DatasetBuilder(space, cfg.l_star, cfg.budget, cfg.seed, cfg.perturb,
                                 cfg.max_states)
    if net is None:
        net = network_for_space(space, cfg.hidden, cfg.n_blocks, seed=cfg.seed)
    elif net.fingerprint != space.fingerprint:
        raise FingerprintMismatch(space.fingerprint, net.fingerprint)
    target_net = net.copy()
    state = AdamState.zeros_like(net.params)
    log = TrainLog()

    for loop in range(1, cfg.loops + 1):
        t0 = time.perf_counter()
        builder.next_loop()
        us, exact = builder.set.pool(loop - 1)
        bootstrap = loop > cfg.l_star and np.isnan(exact).any()
        feats = None if bootstrap else encode_batch(us)
        n = us.shape[0]
        bs = min(cfg.batch_size, n)
        loss = np.inf
        epochs_run = 0
        for epoch in range(1, cfg.epochs(loop) + 1):
            losses = []
            for _ in range(cfg.batches_per_epoch):
                idx = rng.choice(n, size=bs, replace=False)
                if bootstrap:
                    loss_b, grads = loss_bootstrap(net, target_net, us[idx], space, grad=True,
                                                   exact=exact[idx])
                else:
                    loss_b, grads = loss_exact(net, feats[idx], exact[idx], grad=True)
                net.params, state = adam_step(net.params, grads, state, cfg.lr)
                losses.append(loss_b)
            loss = float(np.mean(losses))
            epochs_run = epoch
            log.records.append((loop, epoch, loss, "bootstrap" if bootstrap else "exact"))
            if loss <= cfg.delta:
                break
        target_net = net.copy()
        net.loop = loop
        log.loop_summary.append({
            "loop": loop, "epochs": epochs_run, "loss": loss, "pool": n,
            "mode": "bootstrap" if bootstrap else "exact",
            "seconds": time.perf_counter() - t0,
        })
        logger.info("loop %d: %d epochs, loss %.4g, pool %d", loop, epochs_run, loss, n)
        if on_loop_end is not None:
            on_loop_end(loop, net)
    return net, log


# -- persistence -----------------------------------------------------------


_HEADER = "<HBHQ"


def save_model(net: QNetwork, path, train_config: TrainConfig | dict | None = None) -> None:
    """Binary model file plus a ``.json`` sidecar with loop index and config."""
    dims = net.layer_dims
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack(_HEADER, MODEL_VERSION, net.num_qubits, net.n_actions, net.fingerprint))
        fh.write(struct.pack(f"<H{len(dims)}I", len(dims), *dims))
        fh.write(struct.pack("<3d", net.leak, net.momentum, net.bn_eps))
        for arr in list(net.params.values()) + list(net.buffers.values()):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if isinstance(train_config, TrainConfig):
        train_config = asdict(train_config)
    meta = {"loop": net.loop, "fingerprint": f"{net.fingerprint:016x}",
            "train_config": train_config}
    with open(f"{path}.json", "w") as fh:
        json.dump(meta, fh, indent=2, default=list)


def load_model(path, expected_fingerprint: int | None = None) -> QNetwork:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic, not a model file")
    try:
        off = 4
        version, m, d, fp = struct.unpack_from(_HEADER, data, off)
        off += struct.calcsize(_HEADER)
        if version != MODEL_VERSION:
            raise ModelFormatError(f"{path}: unsupported model version {version}")
        (n_dims,) = struct.unpack_from("<H", data, off)
        off += 2
        dims = struct.unpack_from(f"<{n_dims}I", data, off)
        off += 4 * n_dims
        leak, momentum, eps = struct.unpack_from("<3d", data, off)
        off += 24
    except struct.error as exc:
        raise ModelFormatError(f"{path}: truncated header") from exc
    if expected_fingerprint is not None and fp != expected_fingerprint:
        raise FingerprintMismatch(expected_fingerprint, fp)
    input_dim, h1, h2, n_blocks, n_actions = dims
    net = QNetwork(input_dim, n_actions, (h1, h2), n_blocks, leak, momentum, eps,
                   num_qubits=m, fingerprint=fp)
    need = 8 * (sum(p.size for p in net.params.values()) + sum(b.size for b in net.buffers.values()))
    if len(data) - off != need:
        raise ModelFormatError(f"{path}: expected {need} tensor bytes, found {len(data) - off}")
    for store in (net.params, net.buffers):
        for k, arr in store.items():
            store[k] = np.frombuffer(data, dtype="<f8", count=arr.size, offset=off).reshape(arr.shape).copy()
            off += 8 * arr.size
    try:
        with open(f"{path}.json") as fh:
            net.loop = int(json.load(fh).get("loop", 0))
    except (OSError, ValueError):
        pass
    return net
