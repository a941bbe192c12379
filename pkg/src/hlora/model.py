"""Frozen toy classifiers with one low-rank adapter per layer.

A model is a chain of dense layers; each layer applies
``x @ (w0 + b @ a).T`` followed by its activation. The base weights
``w0`` never move (they are stored read-only and shared across model
values); training touches only the adapter factors. The final layer
always produces raw logits.

``forward``/``backward`` are the straightforward numpy reference used
by oracles and evaluation. ``local_train`` runs mini-batch SGD through
the fused kernel of the active backend when the architecture matches
one of the two supported shapes (linear classifier, or one rectifier
hidden layer), and falls back to the reference path otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend, linalg
from .linalg import Matrix, as_matrix
from .lora import LoraAdapter, merge
from .rng import SeededRng

IDENTITY = "identity"
RELU = "relu"
_ACTIVATIONS = (IDENTITY, RELU)


@dataclass(frozen=True)
class Layer:
    """One dense layer: frozen w0 (d x k), trainable adapter, activation."""

    w0: Matrix
    adapter: LoraAdapter
    activation: str

    def __post_init__(self):
        w0 = as_matrix(self.w0, "w0")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; expected one of {_ACTIVATIONS}")
        if self.adapter.shape != w0.shape:
            raise ValueError(
                f"adapter update shape {self.adapter.shape} does not match w0 shape {w0.shape}"
            )
        object.__setattr__(self, "w0", linalg._readonly(w0))

    @property
    def out_dim(self) -> int:
        return self.w0.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w0.shape[1]

    def effective_weight(self) -> Matrix:
        return self.w0 + merge(self.adapter)


@dataclass(frozen=True)
class ToyModel:
    layers: tuple
    num_classes: int

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("model needs at least one layer")
        for i in range(len(layers) - 1):
            if layers[i].out_dim != layers[i + 1].in_dim:
                raise ValueError(
                    f"layer {i} outputs dim {layers[i].out_dim} but layer {i + 1} "
                    f"expects dim {layers[i + 1].in_dim}"
                )
        if layers[-1].activation != IDENTITY:
            raise ValueError("final layer must emit raw logits (identity activation)")
        if self.num_classes != layers[-1].out_dim:
            raise ValueError(
                f"num_classes {self.num_classes} != final layer output dim {layers[-1].out_dim}"
            )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    def adapters(self) -> tuple:
        return tuple(layer.adapter for layer in self.layers)

    def with_adapters(self, adapters) -> "ToyModel":
        """Same frozen bases and activations, new adapters."""
        adapters = tuple(adapters)
        if len(adapters) != len(self.layers):
            raise ValueError(f"expected {len(self.layers)} adapters, got {len(adapters)}")
        layers = tuple(
            Layer(w0=layer.w0, adapter=ad, activation=layer.activation)
            for layer, ad in zip(self.layers, adapters)
        )
        return ToyModel(layers=layers, num_classes=self.num_classes)


@dataclass(frozen=True)
class Batch:
    """A block of samples: features (n x input_dim), integer labels."""

    features: Matrix
    labels: np.ndarray

    def __post_init__(self):
        # zero-row batches are legal values; consumers reject them explicitly
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] < 1:
            raise ValueError(f"features must be 2-D with at least one column, got {features.shape}")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite entries")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or len(labels) != features.shape[0]:
            raise ValueError(
                f"labels must be 1-D with one entry per row; got {labels.shape} "
                f"for {features.shape[0]} rows"
            )
        if len(labels) and labels.min() < 0:
            raise ValueError("labels must be nonnegative class indices")
        features = np.ascontiguousarray(features)
        features.flags.writeable = False
        object.__setattr__(self, "features", features)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class AdapterGrad:
    db: Matrix
    da: Matrix


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float
    local_epochs: int
    batch_size: int

    def __post_init__(self):
        if not (self.learning_rate >= 0):
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be positive, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")


def _activate(z: Matrix, activation: str) -> Matrix:
    if activation == RELU:
        return np.maximum(z, 0.0)
    return z


def forward(model: ToyModel, features: Matrix) -> Matrix:
    """Logits for a feature block; pure."""
    x = as_matrix(features, "features")
    if x.shape[1] != model.input_dim:
        raise ValueError(f"features have dim {x.shape[1]}, model expects {model.input_dim}")
    for layer in model.layers:
        x = _activate(x @ layer.effective_weight().T, layer.activation)
    return x


def loss(logits: Matrix, labels) -> float:
    """Mean softmax cross-entropy."""
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != logits.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(f"labels out of range for {logits.shape[1]} classes")
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def _loss_grad_logits(logits: Matrix, labels: np.ndarray):
    n = logits.shape[0]
    shift = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - shift)
    z = ex.sum(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(z[:, 0])
    rows = np.arange(n)
    value = float(np.mean(lse - logits[rows, labels]))
    grad = ex / z
    grad[rows, labels] -= 1.0
    grad /= n
    return value, grad


def _backward_arrays(w0s, adapters_ba, activations, x, labels):
    """Loss and per-layer (db, da) for explicit weight arrays.

    ``adapters_ba`` is a list of (b, a) array pairs. The rectifier
    derivative at exactly zero is taken as zero.
    """
    pre = []
    post = [x]
    h = x
    for w0, (b, a), act in zip(w0s, adapters_ba, activations):
        z = h @ (w0 + b @ a).T
        pre.append(z)
        h = _activate(z, act)
        post.append(h)
    value, g = _loss_grad_logits(post[-1], labels)

    grads = [None] * len(w0s)
    for i in reversed(range(len(w0s))):
        b, a = adapters_ba[i]
        dw = g.T @ post[i]
        grads[i] = (dw @ a.T, b.T @ dw)
        if i > 0:
            g = g @ (w0s[i] + b @ a)
            if activations[i - 1] == RELU:
                g = np.where(pre[i - 1] > 0.0, g, 0.0)
    return value, grads


def backward(model: ToyModel, batch: Batch):
    """Analytic gradients of the mean batch loss w.r.t. each adapter.

    Returns one :class:`AdapterGrad` per layer; the frozen bases have
    no gradient of any kind.
    """
    if len(batch) == 0:
        raise ValueError("cannot take gradients over an empty batch")
    if batch.labels.max() >= model.num_classes:
        raise ValueError("batch labels out of range for the model's classes")
    w0s = [layer.w0 for layer in model.layers]
    pairs = [(layer.adapter.b, layer.adapter.a) for layer in model.layers]
    acts = [layer.activation for layer in model.layers]
    _, grads = _backward_arrays(w0s, pairs, acts, batch.features, batch.labels)
    return [AdapterGrad(db=db, da=da) for db, da in grads]


def _kernel_shape(model: ToyModel):
    """Kernel id when the architecture matches a fused SGD kernel."""
    acts = [layer.activation for layer in model.layers]
    if acts == [IDENTITY]:
        return "one"
    if acts == [RELU, IDENTITY]:
        return "two"
    return None


def local_train_stats(model: ToyModel, shard: Batch, settings: TrainSettings, rng: SeededRng):
    """Mini-batch SGD over the shard; returns (new model, mean batch loss).

    Epoch order is reshuffled from ``rng``; given equal inputs the
    result is bit-identical run to run. The mean loss averages each
    pre-update mini-batch loss weighted by batch size.
    """
    if len(shard) == 0:
        raise ValueError("cannot train on an empty shard")
    if shard.labels.max() >= model.num_classes:
        raise ValueError("shard labels out of range for the model's classes")
    n = len(shard)
    gen = rng.generator()
    w0s = [layer.w0 for layer in model.layers]
    acts = [layer.activation for layer in model.layers]
    pairs = [
        (layer.adapter.b.copy(order="C"), layer.adapter.a.copy(order="C"))
        for layer in model.layers
    ]
    kernel = _kernel_shape(model)
    impl = backend.get_impl()
    lr = settings.learning_rate
    total = 0.0
    count = 0
    for _ in range(settings.local_epochs):
        perm = gen.permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = perm[start : start + settings.batch_size]
            x = np.ascontiguousarray(shard.features[idx])
            y = np.ascontiguousarray(shard.labels[idx])
            if kernel == "one":
                value = impl.sgd_step_one_layer(x, y, w0s[0], pairs[0][0], pairs[0][1], lr)
            elif kernel == "two":
                value = impl.sgd_step_two_layer(
                    x, y, w0s[0], pairs[0][0], pairs[0][1], w0s[1], pairs[1][0], pairs[1][1], lr
                )
            else:
                value, grads = _backward_arrays(w0s, pairs, acts, x, y)
                for (b, a), (db, da) in zip(pairs, grads):
                    b -= lr * db
                    a -= lr * da
            total += value * len(idx)
            count += len(idx)
    adapters = [LoraAdapter(b=b, a=a) for b, a in pairs]
    return model.with_adapters(adapters), total / count


def local_train(model: ToyModel, shard: Batch, settings: TrainSettings, rng: SeededRng) -> ToyModel:
    """SGD over the shard for the configured epochs; bases untouched."""
    trained, _ = local_train_stats(model, shard, settings, rng)
    return trained


def zero_adapter(d: int, k: int, rank: int = 1) -> LoraAdapter:
    """Adapter whose merged update is exactly zero."""
    return LoraAdapter(b=np.zeros((d, rank)), a=np.zeros((rank, k)))


def mlp_dims(input_dim: int, hidden_dim: int, num_classes: int, layers: int):
    """Per-layer (out, in) shapes for the supported architectures."""
    if layers == 1:
        return [(num_classes, input_dim)]
    if layers == 2:
        return [(hidden_dim, input_dim), (num_classes, hidden_dim)]
    raise ValueError(f"layers must be 1 or 2, got {layers}")


def mlp_activations(layers: int):
    return [IDENTITY] if layers == 1 else [RELU, IDENTITY]


def build_model(w0s, activations, adapters, num_classes: int) -> ToyModel:
    layers = tuple(
        Layer(w0=w0, adapter=ad, activation=act)
        for w0, ad, act in zip(w0s, adapters, activations)
    )
    return ToyModel(layers=layers, num_classes=num_classes)


def apply_dense_updates(base: ToyModel, updates) -> ToyModel:
    """Model whose effective weights are ``w0 + update`` per layer.

    Used to evaluate an aggregated dense update without factorizing it;
    the returned model carries zero adapters.
    """
    updates = list(updates)
    if len(updates) != len(base.layers):
        raise ValueError(f"expected {len(base.layers)} updates, got {len(updates)}")
    layers = []
    for layer, upd in zip(base.layers, updates):
        upd = as_matrix(upd, "update")
        if upd.shape != layer.w0.shape:
            raise ValueError(f"update shape {upd.shape} does not match layer shape {layer.w0.shape}")
        layers.append(
            Layer(
                w0=layer.w0 + upd,
                adapter=zero_adapter(*layer.w0.shape),
                activation=layer.activation,
            )
        )
    return ToyModel(layers=tuple(layers), num_classes=base.num_classes)
