"""Independent oracles used across the test suite.

Everything here is deliberately written the slow, obvious way (loops,
elementwise sums, central differences, LAPACK where the package uses
its own factorization) so the tests never share a code path with the
implementation they check.
"""

from __future__ import annotations

import numpy as np

from hlora.lora import LoraAdapter
from hlora.model import Batch, ToyModel, forward, loss


def frobenius_by_summation(m) -> float:
    total = 0.0
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            total += float(m[i, j]) ** 2
    return total ** 0.5


def matmul_by_loops(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for l in range(a.shape[1]):
                acc += a[i, l] * b[l, j]
            out[i, j] = acc
    return out


def lapack_singular_values(m):
    return np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)


def log_sum_exp_loss(logits, labels):
    """Per-sample log-sum-exp cross-entropy, averaged, no shortcuts shared
    with the implementation (uses mpmath-free plain floats, explicit loop)."""
    total = 0.0
    for row, label in zip(np.asarray(logits), np.asarray(labels)):
        shift = max(row)
        total += shift + np.log(np.sum(np.exp(row - shift))) - row[label]
    return total / len(labels)


def dense_weighted_average(uploads_layer, weights):
    """Plain-numpy FedAvg of merged adapter products for one layer."""
    out = np.zeros(
        (uploads_layer[0].b.shape[0], uploads_layer[0].a.shape[1])
    )
    for w, adapter in zip(weights, uploads_layer):
        out += w * (np.asarray(adapter.b) @ np.asarray(adapter.a))
    return out


def replace_adapter_entry(model: ToyModel, layer_index: int, attr: str, idx, delta: float) -> ToyModel:
    layer = model.layers[layer_index]
    arr = getattr(layer.adapter, attr).copy()
    arr[idx] += delta
    if attr == "b":
        adapter = LoraAdapter(b=arr, a=layer.adapter.a)
    else:
        adapter = LoraAdapter(b=layer.adapter.b, a=arr)
    adapters = list(model.adapters())
    adapters[layer_index] = adapter
    return model.with_adapters(adapters)


def central_difference_grads(model: ToyModel, batch: Batch, h: float = 1e-5):
    """Per-layer (db, da) by central finite differences of the batch loss."""
    grads = []
    for layer_index, layer in enumerate(model.layers):
        pair = []
        for attr in ("b", "a"):
            shape = getattr(layer.adapter, attr).shape
            out = np.zeros(shape)
            for idx in np.ndindex(shape):
                plus = replace_adapter_entry(model, layer_index, attr, idx, +h)
                minus = replace_adapter_entry(model, layer_index, attr, idx, -h)
                lp = loss(forward(plus, batch.features), batch.labels)
                lm = loss(forward(minus, batch.features), batch.labels)
                out[idx] = (lp - lm) / (2.0 * h)
            pair.append(out)
        grads.append(pair)
    return grads


def gradient_relative_error(analytic, numeric, floor: float = 1e-3) -> float:
    """Max entrywise relative error with a magnitude floor.

    Central differences carry ~1e-10 absolute noise, so a raw relative
    error is meaningless for near-zero entries; the floor keeps the
    check sharp for every entry large enough to matter.
    """
    worst = 0.0
    for got, (fd_b, fd_a) in zip(analytic, numeric):
        for g, fd in ((got.db, fd_b), (got.da, fd_a)):
            denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
            worst = max(worst, float(np.max(np.abs(g - fd) / denom)))
    return worst
