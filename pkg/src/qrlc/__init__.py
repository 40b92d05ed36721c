"""Q-network guided compilation of 1-3 qubit unitaries into native gate sequences."""

from .linalg import canonical_phase, dedup_key, fidelity_f1, identity, tensor
from .gates import GATESETS, ActionSpace, NativeGate, Topology, build_action_space, named_action_space
from .targets import haar_unitary, kak_template_target, qft, rzz
from .dataset import generate_training_set, perturbed_identity
from .oracle import OracleQ, bfs_table, verify_values
from .config import load_config, preset
from .qnet import QNetwork, TrainConfig, load_model, save_model, train
from .search import CompileResult, SearchConfig, frontier_search, greedy_rollout, multi_dqn_search
from .variational import Ansatz, VariationalConfig, euler_angles, optimize, parameterize, u3
from .metrics import compile_report, gate_counts, output_distribution, tv_distance
from .estimator import DQNCompiler, VariationalRefiner, check_unitary, check_unitary_batch

__version__ = "0.1.0"
