"""Deterministic federated LoRA simulator with heterogeneous adapter ranks.

Clients train low-rank adapter pairs on frozen toy models over
non-IID shards; the server aggregates either the raw factors (naive
averaging) or their merged products, refactorizing the aggregate per
client rank. Everything is reproducible bit for bit from one master
seed.
"""

from .backend import backend_name, set_backend
from .config import ConfigError, ExperimentConfig, parse_config
from .data import Dataset, Partition, dirichlet_partition, generate_synthetic, iid_partition, load_csv
from .federation import (
    HLORA_HETEROGENEOUS,
    HLORA_HOMOGENEOUS,
    NAIVE,
    STRATEGIES,
    ClientConfig,
    FedContext,
    RankPolicy,
    ServerState,
    aggregate_hlora,
    aggregate_naive,
    assign_ranks,
    bias_gap,
    build_environment,
    compute_weights,
    distribute,
    run_experiment,
    run_round,
    sample_clients,
)
from .linalg import (
    SvdConvergenceError,
    SvdResult,
    frobenius_norm,
    matmul,
    random_gaussian,
    svd,
    truncate,
    weighted_sum,
)
from .lora import LoraAdapter, approximation_error, decompose, init_adapter, merge
from .metrics import RoundReport, evaluate, read_results, rounds_to_target, write_results
from .model import Batch, Layer, ToyModel, TrainSettings, backward, forward, local_train, loss
from .rng import SeededRng

__version__ = "0.1.0"
