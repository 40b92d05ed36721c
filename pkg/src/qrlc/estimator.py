"""scikit-learn style wrappers around training, search and refinement."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import os

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .gates import named_action_space
from .linalg import as_matrix, fidelity_f1
from .qnet import TrainConfig, load_model, save_model, train
from .search import SearchConfig, compile_target
from .variational import Ansatz, VariationalConfig, optimize, parameterize

THREADS_ENV = "QRLC_THREADS"


def check_unitary(u, dim: int | None = None, tol: float = 1e-8) -> np.ndarray:
    """Validate a single square unitary; returns it as complex128."""
    try:
        u = as_matrix(u)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"not a square matrix: {exc}") from exc
    if dim is not None and u.shape != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} unitary, got shape {u.shape}")
    if u.shape[0] not in (2, 4, 8):
        raise ValueError(f"unitary dimension must be 2, 4 or 8, got {u.shape[0]}")
    if not np.all(np.isfinite(u)):
        raise ValueError("unitary contains non-finite entries")
    err = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
    if err > tol:
        raise ValueError(f"matrix is not unitary (max deviation {err:.3g} > {tol:g})")
    return u


def check_unitary_batch(X, dim: int | None = None, tol: float = 1e-8) -> np.ndarray:
    """Accept one unitary or a stack (n, dim, dim); returns a validated stack."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected (n, dim, dim) unitaries, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no unitaries given")
    return np.stack([check_unitary(u, dim, tol) for u in X])


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class DQNCompiler(BaseEstimator):
    """Train a Q-network on a named gate set and compile unitaries with it.

    ``fit`` ignores X: training data are synthesized from the action space.
    ``predict`` returns one CompileResult per target.
    """

    def __init__(self, gateset="1q-xyt", loops=8, l_star=3, budget=200_000, lr=1e-3,
                 delta=0.02, epoch_factor=100, batch_size=1024, hidden=(512, 256),
                 n_blocks=2, perturb=True, mode="greedy", depth=None, eps=1e-4,
                 width=128, time_limit=600.0, seed=0):
        self.gateset = gateset
        self.loops = loops
        self.l_star = l_star
        self.budget = budget
        self.lr = lr
        self.delta = delta
        self.epoch_factor = epoch_factor
        self.batch_size = batch_size
        self.hidden = hidden
        self.n_blocks = n_blocks
        self.perturb = perturb
        self.mode = mode
        self.depth = depth
        self.eps = eps
        self.width = width
        self.time_limit = time_limit
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(loops=self.loops, l_star=self.l_star, lr=self.lr, delta=self.delta,
                           epoch_factor=self.epoch_factor, batch_size=self.batch_size,
                           budget=self.budget, hidden=tuple(self.hidden), n_blocks=self.n_blocks,
                           perturb=self.perturb, seed=self.seed)

    def _search_config(self) -> SearchConfig:
        return SearchConfig(depth=self.depth, eps=self.eps, width=self.width,
                            time_limit=self.time_limit, mode=self.mode)

    def fit(self, X=None, y=None):
        self.space_ = named_action_space(self.gateset)
        self.model_, self.log_ = train(self.space_, self._train_config())
        return self

    def load(self, path):
        """Use a saved model instead of training."""
        self.space_ = named_action_space(self.gateset)
        self.model_ = load_model(path, expected_fingerprint=self.space_.fingerprint)
        self.log_ = None
        return self

    def save(self, path):
        check_is_fitted(self, "model_")
        save_model(self.model_, path, self._train_config())

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_unitary_batch(X, self.space_.dim)
        cfg = self._search_config()

        def run(u):
            return compile_target(u, self.model_, self.space_, cfg)

        n = _threads()
        if n == 1 or len(X) == 1:
            return [run(u) for u in X]
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(run, X))

    def score(self, X, y=None):
        """Mean achieved F1."""
        return float(np.mean([r.f1 for r in self.predict(X)]))


class VariationalRefiner(BaseEstimator):
    """Fit u3 angles of an ansatz (or a compiled sequence) to a target unitary."""

    def __init__(self, steps=500, lr=0.01, restarts=5, jitter=0.1, loss="re", seed=0):
        self.steps = steps
        self.lr = lr
        self.restarts = restarts
        self.jitter = jitter
        self.loss = loss
        self.seed = seed

    def fit(self, X, y, space=None):
        """X: an Ansatz, or a CompileResult / gate list with ``space``; y: target."""
        ansatz = X if isinstance(X, Ansatz) else None
        if ansatz is None:
            if space is None:
                raise ValueError("a gate sequence needs the action space it came from")
            ansatz = parameterize(X, space)
        target = check_unitary(y, 2**ansatz.num_qubits)
        cfg = VariationalConfig(self.steps, self.lr, self.restarts, self.jitter, self.loss, self.seed)
        self.ansatz_ = ansatz
        self.result_ = optimize(ansatz, target, cfg)
        self.params_ = self.result_.params
        self.f1_ = self.result_.f1
        return self

    def predict(self, X=None):
        """Refined unitary."""
        check_is_fitted(self, "params_")
        return self.ansatz_.unitary(self.params_)

    def score(self, X, y):
        check_is_fitted(self, "params_")
        return fidelity_f1(check_unitary(y, 2**self.ansatz_.num_qubits), self.predict())

