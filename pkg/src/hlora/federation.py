"""Server/client round loop with three aggregation strategies.

* ``naive`` averages the uploaded factor pairs independently
  (weighted sums of the b's and of the a's) and redistributes the
  averaged pair to every client. Averaging factors instead of their
  products biases the implied update; ``bias_gap`` measures that bias.
* ``hlora_homogeneous`` / ``hlora_heterogeneous`` merge each client's
  factors into a dense per-layer update, average those products with
  sample-count weights, and redistribute by factorizing the aggregate
  once per layer and truncating at each client's rank. The
  heterogeneous variant draws per-client ranks from a uniform range;
  the homogeneous variant gives everyone the same rank.

Each round replaces the global update: clients restart from factors
of the previous aggregate, so their uploads already contain it.
All randomness flows through streams keyed by (master seed, purpose,
round, client id); running strategies in any order or clients in
parallel cannot change any draw.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from . import linalg
from .data import Dataset, Partition, dirichlet_partition, generate_synthetic, iid_partition, load_csv
from .linalg import as_matrix
from .lora import LoraAdapter, merge
from .metrics import RoundReport, evaluate
from .model import (
    ToyModel,
    TrainSettings,
    apply_dense_updates,
    build_model,
    local_train_stats,
    mlp_activations,
    mlp_dims,
    zero_adapter,
)
from .rng import SeededRng

NAIVE = "naive"
HLORA_HOMOGENEOUS = "hlora_homogeneous"
HLORA_HETEROGENEOUS = "hlora_heterogeneous"
STRATEGIES = (NAIVE, HLORA_HOMOGENEOUS, HLORA_HETEROGENEOUS)

_SPLIT_RETRIES = 20


@dataclass(frozen=True)
class RankPolicy:
    """How per-client adapter ranks are assigned for a run."""

    kind: str
    r_min: int
    r_max: int

    def __post_init__(self):
        if self.kind not in ("homogeneous", "random_uniform"):
            raise ValueError(f"unknown rank policy {self.kind!r}")
        if not (1 <= self.r_min <= self.r_max):
            raise ValueError(f"infeasible rank bounds [{self.r_min}, {self.r_max}]")

    @classmethod
    def homogeneous(cls, r: int) -> "RankPolicy":
        return cls(kind="homogeneous", r_min=r, r_max=r)

    @classmethod
    def random_uniform(cls, r_min: int, r_max: int) -> "RankPolicy":
        return cls(kind="random_uniform", r_min=r_min, r_max=r_max)


@dataclass(frozen=True)
class ClientConfig:
    """Static per-client facts: id, per-layer ranks, data shard."""

    id: int
    ranks: tuple
    shard: np.ndarray
    n_k: int

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks)
        if any(r < 1 for r in ranks):
            raise ValueError(f"client {self.id}: ranks must be positive, got {ranks}")
        shard = np.asarray(self.shard, dtype=np.int64)
        if len(shard) != self.n_k or self.n_k < 1:
            raise ValueError(f"client {self.id}: shard size {len(shard)} != n_k {self.n_k}")
        shard.flags.writeable = False
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "shard", shard)


@dataclass(frozen=True)
class ServerState:
    """Global aggregate after ``round_index`` completed rounds.

    ``updates`` holds the dense per-layer aggregate; under the naive
    strategy ``naive_factors`` additionally holds the averaged factor
    pair per layer (whose product equals ``updates``).
    """

    round_index: int
    updates: tuple
    naive_factors: tuple | None = None


@dataclass(frozen=True)
class RoundTrace:
    """Diagnostics for one round: who trained and what they uploaded."""

    sampled: tuple
    uploads: tuple
    weights: np.ndarray
    client_losses: tuple


@dataclass(frozen=True)
class FedContext:
    """Everything immutable across the rounds of one run."""

    base: ToyModel
    train: Dataset
    test: Dataset
    clients: tuple
    sampled_per_round: int
    settings: TrainSettings
    strategy: str
    seed: int
    init_std: float
    record_timing: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not (1 <= self.sampled_per_round <= len(self.clients)):
            raise ValueError(
                f"sampled_per_round must be in [1, {len(self.clients)}], got {self.sampled_per_round}"
            )
        dims = [layer.w0.shape for layer in self.base.layers]
        ranks_seen = set()
        for client in self.clients:
            if len(client.ranks) != len(dims):
                raise ValueError(
                    f"client {client.id} has {len(client.ranks)} ranks for {len(dims)} layers"
                )
            for (d, k), r in zip(dims, client.ranks):
                if r > min(d, k):
                    raise ValueError(
                        f"client {client.id} rank {r} exceeds min(d, k) = {min(d, k)} "
                        f"for a {d}x{k} layer"
                    )
            ranks_seen.add(client.ranks)
        if self.strategy == NAIVE and len(ranks_seen) > 1:
            raise ValueError("the naive strategy requires one uniform rank across clients")


def assign_ranks(policy: RankPolicy, k: int, rng: SeededRng) -> np.ndarray:
    """Per-client ranks: all equal, or i.i.d. uniform integers in the range."""
    if k < 1:
        raise ValueError(f"client count must be positive, got {k}")
    if policy.kind == "homogeneous":
        return np.full(k, policy.r_min, dtype=np.int64)
    return rng.generator().integers(policy.r_min, policy.r_max + 1, size=k, dtype=np.int64)


def sample_clients(k: int, m: int, rng: SeededRng) -> np.ndarray:
    """Uniform sample of m distinct client ids, sorted ascending."""
    if not (1 <= m <= k):
        raise ValueError(f"cannot sample {m} of {k} clients")
    picks = rng.generator().choice(k, size=m, replace=False)
    return np.sort(picks.astype(np.int64))


def compute_weights(sample_counts) -> np.ndarray:
    """FedAvg weights n_k / n over the sampled cohort; they sum to one."""
    counts = np.asarray(sample_counts, dtype=np.float64)
    if counts.ndim != 1 or len(counts) == 0:
        raise ValueError("sample_counts must be a non-empty 1-D sequence")
    if np.any(counts < 1):
        raise ValueError("every sampled client must hold at least one sample")
    return counts / counts.sum()


def aggregate_naive(adapters, weights):
    """Weighted sums of the b factors and of the a factors, separately.

    Requires one uniform rank; averaging factor pairs of unequal inner
    dimension is not defined.
    """
    adapters = list(adapters)
    ranks = sorted({ad.rank for ad in adapters})
    if len(ranks) != 1:
        raise ValueError(
            f"naive factor averaging requires a uniform rank, got ranks {ranks}; "
            f"use a product-reconstruction strategy for mixed ranks"
        )
    b = linalg.weighted_sum([ad.b for ad in adapters], weights)
    a = linalg.weighted_sum([ad.a for ad in adapters], weights)
    return b, a


def aggregate_hlora(adapters, weights):
    """Weighted sum of the merged products: each pair contributes whole."""
    return linalg.weighted_sum([merge(ad) for ad in adapters], weights)


def bias_gap(adapters, weights) -> float:
    """Frobenius distance between the product of averaged factors and
    the average of products; zero iff factor averaging is unbiased here."""
    b, a = aggregate_naive(adapters, weights)
    return linalg.frobenius_norm(b @ a - aggregate_hlora(adapters, weights))


def distribute(updates, client_ranks):
    """Per-client factor pairs from the dense per-layer aggregates.

    Factorizes each layer's update once and truncates per client; equal
    ranks share one truncation, so equally-ranked clients receive
    identical factors.
    """
    updates = [as_matrix(u, f"updates[{i}]") for i, u in enumerate(updates)]
    decomps = [linalg.svd(u) for u in updates]
    cache = [dict() for _ in updates]
    out = []
    for ranks in client_ranks:
        ranks = tuple(int(r) for r in ranks)
        if len(ranks) != len(updates):
            raise ValueError(f"got {len(ranks)} ranks for {len(updates)} layers")
        adapters = []
        for layer_index, r in enumerate(ranks):
            if r not in cache[layer_index]:
                u_r, s_r, vt_r = linalg.truncate(decomps[layer_index], r)
                cache[layer_index][r] = LoraAdapter(b=u_r, a=s_r[:, None] * vt_r)
            adapters.append(cache[layer_index][r])
        out.append(adapters)
    return out


def initial_state(ctx: FedContext) -> ServerState:
    updates = tuple(np.zeros(layer.w0.shape) for layer in ctx.base.layers)
    return ServerState(round_index=0, updates=updates, naive_factors=None)


def _initial_adapters(ctx: FedContext, clients_subset):
    """Round-zero factors, identical across strategies: b = 0 and a = the
    top rows of one per-layer Gaussian master, so clients of nested ranks
    start from nested factors and every strategy starts from the same
    zero update."""
    root = SeededRng(ctx.seed)
    masters = []
    for layer_index, layer in enumerate(ctx.base.layers):
        d, k = layer.w0.shape
        masters.append(
            linalg.random_gaussian(root.derive("init_a0", layer_index), min(d, k), k, ctx.init_std)
        )
    out = []
    for client in clients_subset:
        adapters = []
        for layer, master, r in zip(ctx.base.layers, masters, client.ranks):
            d = layer.w0.shape[0]
            adapters.append(LoraAdapter(b=np.zeros((d, r)), a=master[:r]))
        out.append(adapters)
    return out


def _start_adapters(ctx: FedContext, state: ServerState, clients_subset):
    if state.round_index == 0:
        return _initial_adapters(ctx, clients_subset)
    if ctx.strategy == NAIVE:
        shared = [LoraAdapter(b=b, a=a) for b, a in state.naive_factors]
        return [shared for _ in clients_subset]
    return distribute(state.updates, [client.ranks for client in clients_subset])


def _aggregate_uploads(strategy: str, uploads, weights, aggregate_fn=None):
    """New global state pieces from this round's uploads alone."""
    layer_count = len(uploads[0])
    if strategy == NAIVE:
        factors = tuple(
            aggregate_naive([client_adapters[l] for client_adapters in uploads], weights)
            for l in range(layer_count)
        )
        updates = tuple(linalg.matmul(b, a) for b, a in factors)
        return updates, factors
    agg = aggregate_fn if aggregate_fn is not None else aggregate_hlora
    updates = tuple(
        agg([client_adapters[l] for client_adapters in uploads], weights)
        for l in range(layer_count)
    )
    return updates, None


def _round_bias_gap(uploads, weights):
    """Root-sum-square of per-layer gaps; None when ranks are mixed."""
    layer_count = len(uploads[0])
    for l in range(layer_count):
        if len({client_adapters[l].rank for client_adapters in uploads}) > 1:
            return None
    total = 0.0
    for l in range(layer_count):
        gap = bias_gap([client_adapters[l] for client_adapters in uploads], weights)
        total += gap * gap
    return float(np.sqrt(total))


def run_round(ctx: FedContext, state: ServerState, aggregate_fn=None):
    """One communication round.

    Sample clients, hand each factors of the current aggregate, train
    locally, aggregate the uploads per the strategy, replace the global
    update, and evaluate. Returns (new state, report, trace).
    """
    started = time.perf_counter()
    round_index = state.round_index
    root = SeededRng(ctx.seed)

    picked = sample_clients(len(ctx.clients), ctx.sampled_per_round, root.derive("sample", round_index))
    cohort = [ctx.clients[i] for i in picked]
    starts = _start_adapters(ctx, state, cohort)

    uploads = []
    losses = []
    for client, adapters in zip(cohort, starts):
        client_model = ctx.base.with_adapters(adapters)
        shard = ctx.train.subset(client.shard)
        trained, mean_loss = local_train_stats(
            client_model, shard, ctx.settings, root.derive("train", round_index, client.id)
        )
        uploads.append(trained.adapters())
        losses.append(mean_loss)

    weights = compute_weights([client.n_k for client in cohort])
    updates, naive_factors = _aggregate_uploads(ctx.strategy, uploads, weights, aggregate_fn)
    gap = _round_bias_gap(uploads, weights)

    eval_model = apply_dense_updates(ctx.base, updates)
    accuracy, _test_loss = evaluate(eval_model, ctx.test.as_batch())

    wall_ms = int((time.perf_counter() - started) * 1000) if ctx.record_timing else 0
    report = RoundReport(
        round=round_index,
        strategy=ctx.strategy,
        seed=ctx.seed,
        mean_train_loss=float(np.dot(weights, losses)),
        test_accuracy=accuracy,
        bias_gap=gap,
        wall_ms=wall_ms,
    )
    trace = RoundTrace(
        sampled=tuple(int(i) for i in picked),
        uploads=tuple(tuple(u) for u in uploads),
        weights=weights,
        client_losses=tuple(losses),
    )
    new_state = ServerState(round_index=round_index + 1, updates=updates, naive_factors=naive_factors)
    return new_state, report, trace


@dataclass(frozen=True)
class Environment:
    """Data, base model, and partition shared by every strategy of a seed."""

    train: Dataset
    test: Dataset
    planted: ToyModel | None
    base: ToyModel
    partition: Partition
    partition_digest: str


@dataclass(frozen=True)
class ExperimentResult:
    strategy: str
    seed: int
    history: tuple
    initial_accuracy: float
    initial_loss: float
    partition_digest: str
    client_ranks: tuple
    final_state: ServerState
    states: tuple | None = None


def _digest_partition(partition: Partition) -> str:
    h = hashlib.sha256()
    for shard in partition.shards:
        h.update(np.int64(len(shard)).tobytes())
        h.update(np.ascontiguousarray(shard).tobytes())
    return h.hexdigest()[:16]


def _split_classes_ok(dataset: Dataset, n_train: int) -> bool:
    train_labels = dataset.labels[:n_train]
    test_labels = dataset.labels[n_train:]
    return (
        len(np.unique(train_labels)) == dataset.num_classes
        and len(np.unique(test_labels)) == dataset.num_classes
    )


def _synthetic_environment(config):
    root = SeededRng(config.seed)
    total = config.train_samples + config.test_samples
    for attempt in range(_SPLIT_RETRIES):
        dataset, planted = generate_synthetic(
            root.derive("data", attempt),
            total,
            config.input_dim,
            config.hidden_dim,
            config.num_classes,
            config.true_rank,
            config.label_noise,
            layers=config.layers,
        )
        if _split_classes_ok(dataset, config.train_samples):
            break
    else:
        raise RuntimeError("train/test split kept missing a class; enlarge the dataset")
    train = Dataset(
        features=dataset.features[: config.train_samples],
        labels=dataset.labels[: config.train_samples],
        num_classes=config.num_classes,
    )
    test = Dataset(
        features=dataset.features[config.train_samples :],
        labels=dataset.labels[config.train_samples :],
        num_classes=config.num_classes,
    )
    base = planted.with_adapters(
        [zero_adapter(*layer.w0.shape) for layer in planted.layers]
    )
    return train, test, planted, base


def _csv_environment(config):
    root = SeededRng(config.seed)
    dataset = load_csv(config.data_csv)
    if config.test_samples >= len(dataset):
        raise ValueError(
            f"test_samples {config.test_samples} must be smaller than the dataset ({len(dataset)} rows)"
        )
    n_train = len(dataset) - config.test_samples
    for attempt in range(_SPLIT_RETRIES):
        perm = root.derive("split", attempt).generator().permutation(len(dataset))
        shuffled = Dataset(
            features=dataset.features[perm],
            labels=dataset.labels[perm],
            num_classes=dataset.num_classes,
        )
        if _split_classes_ok(shuffled, n_train):
            break
    else:
        raise RuntimeError("could not split the CSV dataset with every class on both sides")
    train = Dataset(shuffled.features[:n_train], shuffled.labels[:n_train], dataset.num_classes)
    test = Dataset(shuffled.features[n_train:], shuffled.labels[n_train:], dataset.num_classes)

    dims = mlp_dims(dataset.input_dim, config.hidden_dim, dataset.num_classes, config.layers)
    w0s = [
        linalg.random_gaussian(root.derive("base_init", l), d, k, 1.0 / np.sqrt(k))
        for l, (d, k) in enumerate(dims)
    ]
    adapters = [zero_adapter(d, k) for d, k in dims]
    base = build_model(w0s, mlp_activations(config.layers), adapters, dataset.num_classes)
    return train, test, None, base


def build_environment(config) -> Environment:
    """Data, split, base model, and partition for one master seed."""
    if config.data_csv:
        train, test, planted, base = _csv_environment(config)
    else:
        train, test, planted, base = _synthetic_environment(config)
    root = SeededRng(config.seed)
    if config.partition == "iid":
        partition = iid_partition(train, config.clients, root.derive("partition"))
    else:
        partition = dirichlet_partition(
            train, config.clients, config.alpha, config.effective_min_shard, root.derive("partition")
        )
    return Environment(
        train=train,
        test=test,
        planted=planted,
        base=base,
        partition=partition,
        partition_digest=_digest_partition(partition),
    )


def rank_policy_for(config, strategy: str) -> RankPolicy:
    if strategy == HLORA_HETEROGENEOUS:
        return RankPolicy.random_uniform(config.rank_min, config.rank_max)
    return RankPolicy.homogeneous(config.rank)


def build_context(config, env: Environment) -> FedContext:
    """Per-strategy round-loop context over a shared environment."""
    root = SeededRng(config.seed)
    strategy = config.strategy
    ranks = assign_ranks(rank_policy_for(config, strategy), config.clients, root.derive("ranks"))
    layer_count = len(env.base.layers)
    if config.layer_ranks is not None:
        per_layer = tuple(config.layer_ranks)
        clients = tuple(
            ClientConfig(id=i, ranks=per_layer, shard=shard, n_k=len(shard))
            for i, shard in enumerate(env.partition.shards)
        )
    else:
        clients = tuple(
            ClientConfig(id=i, ranks=(int(r),) * layer_count, shard=shard, n_k=len(shard))
            for i, (r, shard) in enumerate(zip(ranks, env.partition.shards))
        )
    return FedContext(
        base=env.base,
        train=env.train,
        test=env.test,
        clients=clients,
        sampled_per_round=config.sampled_per_round,
        settings=TrainSettings(
            learning_rate=config.learning_rate,
            local_epochs=config.local_epochs,
            batch_size=config.batch_size,
        ),
        strategy=strategy,
        seed=config.seed,
        init_std=config.init_std,
        record_timing=config.timing,
    )


def run_experiment(config, env: Environment | None = None, *, keep_states: bool = False, on_round=None) -> ExperimentResult:
    """Execute ``config.rounds`` federated rounds and collect reports.

    ``env`` lets callers share one data/partition environment across
    strategies; it must have been built from the same seed. The
    optional ``on_round(state, report, trace)`` callback sees each
    round as it completes.
    """
    if env is None:
        env = build_environment(config)
    ctx = build_context(config, env)
    state = initial_state(ctx)
    initial_accuracy, initial_loss = evaluate(env.base, env.test.as_batch())
    history = []
    states = []
    for _ in range(config.rounds):
        state, report, trace = run_round(ctx, state)
        history.append(report)
        if keep_states:
            states.append(state)
        if on_round is not None:
            on_round(state, report, trace)
    return ExperimentResult(
        strategy=ctx.strategy,
        seed=config.seed,
        history=tuple(history),
        initial_accuracy=initial_accuracy,
        initial_loss=initial_loss,
        partition_digest=env.partition_digest,
        client_ranks=tuple(tuple(c.ranks) for c in ctx.clients),
        final_state=state,
        states=tuple(states) if keep_states else None,
    )
