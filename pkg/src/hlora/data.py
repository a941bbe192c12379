"""Synthetic classification tasks and client-side data partitioning.

``generate_synthetic`` plants a model whose effective weights are a
frozen base plus a low-rank delta, labels Gaussian features by that
model's argmax (optionally flipping a fraction to a random other
class), and returns both the data and the planted model, so callers
know the accuracy ceiling and the base weights a learner should start
from.

Partitioners split a dataset across clients: ``iid_partition`` into
equal random shards, ``dirichlet_partition`` with per-class
proportions drawn from Dirichlet(alpha), the standard label-skew
protocol (small alpha = heavy skew).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .linalg import Matrix, as_matrix
from .lora import LoraAdapter
from .model import Batch, ToyModel, build_model, forward, mlp_activations, mlp_dims
from .rng import SeededRng

_PLANT_RETRIES = 20


@dataclass(frozen=True)
class Dataset:
    """Labeled feature block in which every class occurs at least once."""

    features: Matrix
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = as_matrix(self.features, "features")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or len(labels) != features.shape[0]:
            raise ValueError("labels must be 1-D with one entry per feature row")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels out of range [0, {self.num_classes})")
        present = np.unique(labels)
        if len(present) != self.num_classes:
            missing = sorted(set(range(self.num_classes)) - set(present.tolist()))
            raise ValueError(f"classes {missing} never occur in the dataset")
        object.__setattr__(self, "features", linalg._readonly(features))
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> Batch:
        """Rows selected by index; a plain batch (classes may be missing)."""
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(features=self.features[idx], labels=self.labels[idx])

    def as_batch(self) -> Batch:
        return Batch(features=self.features, labels=self.labels)


@dataclass(frozen=True)
class Partition:
    """Disjoint index shards into a parent dataset of ``n_total`` rows."""

    shards: tuple
    n_total: int

    def __post_init__(self):
        shards = tuple(np.asarray(s, dtype=np.int64) for s in self.shards)
        if not shards:
            raise ValueError("partition needs at least one shard")
        seen = np.concatenate(shards) if shards else np.empty(0, dtype=np.int64)
        for i, s in enumerate(shards):
            if len(s) == 0:
                raise ValueError(f"shard {i} is empty")
            if s.min() < 0 or s.max() >= self.n_total:
                raise ValueError(f"shard {i} has indices outside [0, {self.n_total})")
        if len(np.unique(seen)) != len(seen):
            raise ValueError("shards overlap")
        for s in shards:
            s.flags.writeable = False
        object.__setattr__(self, "shards", shards)

    @property
    def sizes(self) -> tuple:
        return tuple(len(s) for s in self.shards)

    def __len__(self) -> int:
        return len(self.shards)


def _planted_layer(gen, d: int, k: int, rank: int):
    """Frozen base plus a rank-``rank`` delta of comparable magnitude."""
    w0 = gen.standard_normal((d, k)) / np.sqrt(k)
    b = gen.standard_normal((d, rank)) / np.sqrt(rank * k)
    a = gen.standard_normal((rank, k))
    return w0, LoraAdapter(b=b, a=a)


def generate_synthetic(
    rng: SeededRng,
    n_samples: int,
    input_dim: int,
    hidden_dim: int,
    num_classes: int,
    true_rank: int,
    label_noise: float,
    layers: int = 2,
):
    """Gaussian features labeled by a planted low-rank model.

    Returns ``(dataset, planted_model)``. With ``label_noise`` p, each
    label is replaced by a uniformly random other class with
    probability p, so the planted model scores 1 - p in expectation on
    its own data. Re-draws the planted model (bounded retries) if some
    class never wins the argmax.
    """
    if n_samples < num_classes:
        raise ValueError(f"need at least {num_classes} samples, got {n_samples}")
    if not (0 <= label_noise < 0.5):
        raise ValueError(f"label_noise must be in [0, 0.5), got {label_noise}")
    dims = mlp_dims(input_dim, hidden_dim, num_classes, layers)
    max_rank = min(min(d, k) for d, k in dims)
    if not (1 <= true_rank <= max_rank):
        raise ValueError(
            f"true_rank {true_rank} infeasible: layer shapes {dims} support at most {max_rank}"
        )

    features = rng.derive("features").generator().standard_normal((n_samples, input_dim))
    for attempt in range(_PLANT_RETRIES):
        gen = rng.derive("planted", attempt).generator()
        w0s, adapters = zip(*(_planted_layer(gen, d, k, true_rank) for d, k in dims))
        planted = build_model(w0s, mlp_activations(layers), adapters, num_classes)
        labels = np.argmax(forward(planted, features), axis=1)

        noise_gen = rng.derive("noise", attempt).generator()
        flips = noise_gen.random(n_samples) < label_noise
        offsets = noise_gen.integers(1, num_classes, size=n_samples)
        labels = np.where(flips, (labels + offsets) % num_classes, labels)

        if len(np.unique(labels)) == num_classes:
            return Dataset(features=features, labels=labels, num_classes=num_classes), planted
    raise RuntimeError(
        f"planted model never produced all {num_classes} classes in {_PLANT_RETRIES} attempts"
    )


def iid_partition(dataset: Dataset, k: int, rng: SeededRng) -> Partition:
    """Random disjoint shards of near-equal size (within one sample)."""
    n = len(dataset)
    if not (1 <= k <= n):
        raise ValueError(f"client count must be in [1, {n}], got {k}")
    perm = rng.generator().permutation(n)
    shards = [np.sort(part) for part in np.array_split(perm, k)]
    return Partition(shards=tuple(shards), n_total=n)


def dirichlet_partition(
    dataset: Dataset,
    k: int,
    alpha: float,
    min_samples: int,
    rng: SeededRng,
    max_retries: int = 200,
) -> Partition:
    """Label-skewed shards: per-class client proportions ~ Dirichlet(alpha).

    Redraws the whole assignment (up to ``max_retries`` times) until
    every shard holds at least ``min_samples`` rows; if heavy skew
    never yields a compliant draw, the last draw is topped up by moving
    single samples out of the largest shards. Requests that cannot be
    satisfied at all (``k * min_samples > n``) fail upfront.
    """
    n = len(dataset)
    if k < 1:
        raise ValueError(f"client count must be positive, got {k}")
    if not (alpha > 0):
        raise ValueError(f"alpha must be positive, got {alpha}")
    if min_samples < 1:
        raise ValueError(f"min_samples must be positive, got {min_samples}")
    if k * min_samples > n:
        raise ValueError(
            f"cannot give {k} clients {min_samples} samples each from {n} total"
        )
    by_class = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    shards = None
    for attempt in range(max_retries):
        gen = rng.derive("attempt", attempt).generator()
        parts = [[] for _ in range(k)]
        for idx in by_class:
            shuffled = gen.permutation(idx)
            props = gen.dirichlet(np.full(k, alpha))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
            for shard_parts, piece in zip(parts, np.split(shuffled, cuts)):
                shard_parts.append(piece)
        shards = [np.concatenate(p) for p in parts]
        if min(len(s) for s in shards) >= min_samples:
            break
    else:
        # heavy skew at large K makes a compliant draw vanishingly rare;
        # top up deficient shards from the largest ones instead of failing
        shards = _rebalance_to_minimum(shards, min_samples, rng.derive("rebalance"))
    return Partition(shards=tuple(np.sort(s) for s in shards), n_total=n)


def _rebalance_to_minimum(shards, min_samples, rng: SeededRng):
    """Move single samples from the largest shards until all reach the floor."""
    gen = rng.generator()
    shards = [list(s) for s in shards]
    sizes = np.array([len(s) for s in shards])
    while sizes.min() < min_samples:
        needy = int(np.argmin(sizes))
        donor = int(np.argmax(sizes))
        take = int(gen.integers(0, sizes[donor]))
        shards[needy].append(shards[donor].pop(take))
        sizes[needy] += 1
        sizes[donor] -= 1
    return [np.asarray(s, dtype=np.int64) for s in shards]


def load_csv(path) -> Dataset:
    """Read a dataset from CSV with header ``label,f0,f1,...``.

    Labels are nonnegative integers; features parse as 64-bit reals.
    The class count is one more than the largest label.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        expected = ["label"] + [f"f{i}" for i in range(len(header) - 1)]
        if header != expected:
            raise ValueError(f"{path}: header must be 'label,f0,f1,...', got {','.join(header)}")
        labels = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if label < 0:
                raise ValueError(f"{path}:{lineno}: labels must be nonnegative, got {label}")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    labels = np.asarray(labels, dtype=np.int64)
    return Dataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=labels,
        num_classes=int(labels.max()) + 1,
    )
