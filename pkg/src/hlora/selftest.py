"""Built-in property suites behind ``hlora selftest``.

Each suite re-checks one family of invariants at a size that keeps the
whole run under a couple of minutes. Suites are self-contained: they
build their own inputs and verdicts so a broken kernel cannot hide
behind a broken test helper. ``run_all`` accepts an alternative
product aggregation function purely so tests can verify that an
injected bias is actually caught by the equivalence suite.
"""

from __future__ import annotations

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import federation, linalg, lora, metrics, model
from .config import ExperimentConfig
from .data import dirichlet_partition, generate_synthetic, iid_partition
from .rng import SeededRng


def _suite_svd_roundtrip():
    gen = np.random.default_rng(20240811)
    worst = 0.0
    for shape in [(6, 6), (12, 5), (5, 12), (1, 9), (32, 32)]:
        m = gen.standard_normal(shape)
        res = linalg.svd(m)
        again = linalg.svd(m)
        if not (
            np.array_equal(res.u, again.u)
            and np.array_equal(res.singular_values, again.singular_values)
            and np.array_equal(res.vt, again.vt)
        ):
            return False, f"shape {shape}: repeated factorization differs"
        rel = np.linalg.norm(res.reconstruct() - m) / max(np.linalg.norm(m), 1e-12)
        p = min(shape)
        orth = max(
            np.abs(res.u.T @ res.u - np.eye(p)).max(),
            np.abs(res.vt @ res.vt.T - np.eye(p)).max(),
        )
        worst = max(worst, rel, orth)
    if worst > 1e-9:
        return False, f"round-trip/orthonormality error {worst:.2e} > 1e-9"
    return True, f"worst error {worst:.2e}"


def _suite_eckart_young():
    gen = np.random.default_rng(7)
    for trial in range(20):
        m = gen.standard_normal((20, 30))
        res = linalg.svd(m)
        for r in (1, 4):
            u_r, s_r, vt_r = linalg.truncate(res, r)
            best = np.linalg.norm(m - (u_r * s_r) @ vt_r)
            tail = float(np.sqrt(np.sum(res.singular_values[r:] ** 2)))
            if abs(best - tail) > 1e-9:
                return False, f"trial {trial} rank {r}: tail identity off by {abs(best - tail):.2e}"
            for _ in range(10):
                b = gen.standard_normal((20, r))
                a = gen.standard_normal((r, 30))
                if best > np.linalg.norm(m - b @ a) + 1e-9:
                    return False, f"trial {trial} rank {r}: a random factorization beat the truncation"
    return True, "20 matrices x ranks {1,4} x 10 competitors"


def _suite_lora_roundtrip():
    gen = np.random.default_rng(11)
    w = gen.standard_normal((10, 7))
    full = lora.decompose(w, 7)
    rel = lora.approximation_error(w, full) / np.linalg.norm(w)
    if rel > 1e-9:
        return False, f"full-rank factorization misses by {rel:.2e}"
    errors = [lora.approximation_error(w, lora.decompose(w, r)) for r in range(1, 8)]
    if any(errors[i] < errors[i + 1] - 1e-12 for i in range(len(errors) - 1)):
        return False, f"truncation error not monotone in rank: {errors}"
    return True, f"full-rank relative error {rel:.2e}"


def _fd_gradients(m: model.ToyModel, batch: model.Batch, h: float = 1e-5):
    grads = []
    for li, layer in enumerate(m.layers):
        pair = []
        for attr in ("b", "a"):
            base_arr = getattr(layer.adapter, attr)
            out = np.zeros_like(base_arr)
            for idx in np.ndindex(base_arr.shape):
                vals = []
                for sign in (1.0, -1.0):
                    arr = base_arr.copy()
                    arr[idx] += sign * h
                    if attr == "b":
                        ad = lora.LoraAdapter(b=arr, a=layer.adapter.a)
                    else:
                        ad = lora.LoraAdapter(b=layer.adapter.b, a=arr)
                    adapters = list(m.adapters())
                    adapters[li] = ad
                    vals.append(model.loss(model.forward(m.with_adapters(adapters), batch.features), batch.labels))
                out[idx] = (vals[0] - vals[1]) / (2 * h)
            pair.append(out)
        grads.append(pair)
    return grads


def _suite_gradients():
    worst = 0.0
    for point in range(3):
        rng = SeededRng(900 + point)
        gen = rng.generator()
        dims = model.mlp_dims(6, 5, 3, 2)
        w0s = [gen.standard_normal((d, k)) / np.sqrt(k) for d, k in dims]
        adapters = [
            lora.LoraAdapter(b=gen.standard_normal((d, 2)) * 0.3, a=gen.standard_normal((2, k)) * 0.3)
            for d, k in dims
        ]
        net = model.build_model(w0s, model.mlp_activations(2), adapters, 3)
        batch = model.Batch(features=gen.standard_normal((12, 6)), labels=gen.integers(0, 3, 12))
        analytic = model.backward(net, batch)
        numeric = _fd_gradients(net, batch)
        for got, (fd_b, fd_a) in zip(analytic, numeric):
            for g, fd in ((got.db, fd_b), (got.da, fd_a)):
                denom = np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-3)
                worst = max(worst, float(np.max(np.abs(g - fd) / denom)))
    if worst > 1e-6:
        return False, f"max relative gradient error {worst:.2e} > 1e-6"
    return True, f"max relative gradient error {worst:.2e}"


def _suite_partitions():
    rng = SeededRng(31)
    dataset, _ = generate_synthetic(rng.derive("data"), 2000, 8, 8, 4, 2, 0.0)
    for k, alpha in [(2, 0.3), (10, 0.3), (10, 1000.0)]:
        part = dirichlet_partition(dataset, k, alpha, 1, rng.derive("p", k, str(alpha)))
        if sum(part.sizes) != len(dataset):
            return False, f"K={k} alpha={alpha}: shard sizes do not sum to the dataset"
        joined = np.concatenate(part.shards)
        if len(np.unique(joined)) != len(dataset):
            return False, f"K={k} alpha={alpha}: shards overlap or drop indices"
    part = iid_partition(dataset, 7, rng.derive("iid"))
    if max(part.sizes) - min(part.sizes) > 1:
        return False, f"iid shard sizes differ by more than one: {part.sizes}"
    return True, "dirichlet grid + iid balance"


def _suite_bias_witness():
    b1 = np.array([[1.0], [0.0]])
    a1 = np.array([[1.0, 0.0]])
    b2 = np.array([[0.0], [1.0]])
    a2 = np.array([[0.0, 1.0]])
    pair = [lora.LoraAdapter(b=b1, a=a1), lora.LoraAdapter(b=b2, a=a2)]
    weights = [0.5, 0.5]
    gap = federation.bias_gap(pair, weights)
    if abs(gap - 0.5) > 1e-12:
        return False, f"two-client witness gap {gap!r} != 0.5"
    same = [pair[0], pair[0]]
    if federation.bias_gap(same, weights) != 0.0:
        return False, "identical clients should have zero gap"
    return True, "gap exactly 0.5 on the witness, 0 on identical clients"


def _equivalence_config() -> ExperimentConfig:
    return ExperimentConfig(
        seed=5,
        strategy=federation.HLORA_HETEROGENEOUS,
        clients=8,
        sampled_per_round=4,
        rounds=3,
        rank=4,
        rank_min=1,
        rank_max=4,
        layers=2,
        input_dim=8,
        hidden_dim=8,
        num_classes=4,
        train_samples=320,
        test_samples=80,
        true_rank=2,
        label_noise=0.0,
        alpha=0.5,
        batch_size=8,
    )


def _suite_fedavg_equivalence(aggregate_fn=None):
    config = _equivalence_config()
    env = federation.build_environment(config)
    ctx = federation.build_context(config, env)
    state = federation.initial_state(ctx)
    for _ in range(config.rounds):
        state, _report, trace = federation.run_round(ctx, state, aggregate_fn=aggregate_fn)
        for l, update in enumerate(state.updates):
            expected = np.zeros_like(update)
            for w, client_adapters in zip(trace.weights, trace.uploads):
                expected += w * (client_adapters[l].b @ client_adapters[l].a)
            err = np.linalg.norm(update - expected)
            if err > 1e-12:
                return False, (
                    f"round {state.round_index} layer {l}: aggregate differs from the "
                    f"dense weighted average by {err:.2e}"
                )
    return True, f"{config.rounds} rounds within 1e-12 of dense averaging"


def _suite_metrics_roundtrip():
    history = [
        metrics.RoundReport(0, "naive", 3, 1.0 / 3.0, 0.25, 0.125, 0),
        metrics.RoundReport(1, "naive", 3, 0.9871234567890123, 0.5, None, 0),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "roundtrip.csv"
        metrics.write_results(history, path)
        back = metrics.read_results(path)
        first = path.read_bytes()
        metrics.write_results(back, path)
        if back != history:
            return False, "parsed history differs from what was written"
        if path.read_bytes() != first:
            return False, "rewriting parsed history changed the bytes"
    return True, "exact round trip"


def _suite_determinism():
    config = replace(_equivalence_config(), rounds=2)
    with tempfile.TemporaryDirectory() as tmp:
        paths = [Path(tmp) / f"run{i}.csv" for i in range(2)]
        for path in paths:
            result = federation.run_experiment(config)
            metrics.write_results(result.history, path)
        if paths[0].read_bytes() != paths[1].read_bytes():
            return False, "two identical runs produced different CSV bytes"
    return True, "byte-identical repeat run"


SUITES = (
    ("linalg.svd_roundtrip", _suite_svd_roundtrip),
    ("linalg.eckart_young", _suite_eckart_young),
    ("lora.roundtrip", _suite_lora_roundtrip),
    ("model.gradients", _suite_gradients),
    ("data.partitions", _suite_partitions),
    ("federation.bias_witness", _suite_bias_witness),
    ("federation.fedavg_equivalence", _suite_fedavg_equivalence),
    ("metrics.roundtrip", _suite_metrics_roundtrip),
    ("end_to_end.determinism", _suite_determinism),
)


def run_all(aggregate_fn=None, emit=print) -> bool:
    """Run every suite; prints one PASS/FAIL line each; True iff all pass."""
    all_ok = True
    for name, suite in SUITES:
        if name == "federation.fedavg_equivalence":
            ok, detail = suite(aggregate_fn)
        else:
            ok, detail = suite()
        all_ok &= ok
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
