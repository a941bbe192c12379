"""Evaluation semantics and CSV round trips."""

import numpy as np
import pytest

from hlora.data import generate_synthetic
from hlora.metrics import (
    CSV_HEADER,
    RoundReport,
    evaluate,
    read_results,
    rounds_to_target,
    write_results,
)
from hlora.model import Batch, build_model, mlp_activations, zero_adapter
from hlora.rng import SeededRng

from oracles import log_sum_exp_loss


def report(round_, accuracy, **kw):
    base = dict(
        round=round_,
        strategy="naive",
        seed=1,
        mean_train_loss=0.5,
        test_accuracy=accuracy,
        bias_gap=None,
        wall_ms=0,
    )
    base.update(kw)
    return RoundReport(**base)


class TestEvaluate:
    def test_planted_model_on_clean_data(self):
        dataset, planted = generate_synthetic(SeededRng(0), 400, 8, 8, 4, 2, 0.0)
        accuracy, ce = evaluate(planted, dataset.as_batch())
        assert accuracy == 1.0
        assert ce >= 0.0

    def test_constant_logits_tie_break_to_class_zero(self):
        net = build_model([np.zeros((4, 3))], mlp_activations(1), [zero_adapter(4, 3)], 4)
        labels = np.array([0, 1, 2, 3] * 5)
        batch = Batch(features=np.ones((20, 3)), labels=labels)
        accuracy, _ = evaluate(net, batch)
        assert accuracy == pytest.approx(0.25, abs=0)  # always predicts class 0

    def test_matches_per_sample_oracle(self):
        gen = np.random.default_rng(1)
        w0 = gen.standard_normal((5, 6))
        net = build_model([w0], mlp_activations(1), [zero_adapter(5, 6)], 5)
        batch = Batch(features=gen.standard_normal((40, 6)), labels=gen.integers(0, 5, 40))
        accuracy, ce = evaluate(net, batch)
        correct = 0
        for x, y in zip(batch.features, batch.labels):
            logits = w0 @ x
            if int(np.argmax(logits)) == y:
                correct += 1
        assert accuracy == correct / 40
        logits_all = batch.features @ w0.T
        assert ce == pytest.approx(log_sum_exp_loss(logits_all, batch.labels), abs=1e-10)

    def test_order_independent(self):
        gen = np.random.default_rng(2)
        w0 = gen.standard_normal((3, 4))
        net = build_model([w0], mlp_activations(1), [zero_adapter(3, 4)], 3)
        features = gen.standard_normal((30, 4))
        labels = gen.integers(0, 3, 30)
        forward_order = evaluate(net, Batch(features=features, labels=labels))
        perm = gen.permutation(30)
        shuffled = evaluate(net, Batch(features=features[perm], labels=labels[perm]))
        assert forward_order[0] == shuffled[0]
        assert forward_order[1] == pytest.approx(shuffled[1], abs=1e-12)

    def test_empty_set_rejected(self):
        net = build_model([np.zeros((3, 4))], mlp_activations(1), [zero_adapter(3, 4)], 3)
        with pytest.raises(ValueError, match="empty"):
            evaluate(net, Batch(features=np.zeros((0, 4)), labels=np.zeros(0, dtype=int)))


class TestRoundsToTarget:
    def test_target_zero_hits_first_round(self):
        history = [report(0, 0.5), report(1, 0.7)]
        assert rounds_to_target(history, 0.0) == 0

    def test_unreachable_target(self):
        history = [report(0, 0.5), report(1, 0.9)]
        assert rounds_to_target(history, 1.01) is None

    def test_first_crossing(self):
        history = [report(0, 0.5), report(1, 0.7), report(2, 0.9)]
        assert rounds_to_target(history, 0.7) == 1


class TestCsvRoundTrip:
    def test_empty_history_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_results([], path)
        assert path.read_text(encoding="utf-8") == CSV_HEADER + "\n"

    def test_round_trip_exact(self, tmp_path):
        history = [
            report(0, 1.0 / 3.0, mean_train_loss=2.0943951023931953, bias_gap=0.5, wall_ms=12),
            report(1, 0.9999999999999999, mean_train_loss=1e-300),
            report(2, 0.0, bias_gap=0.1 + 0.2),
        ]
        path = tmp_path / "results.csv"
        write_results(history, path)
        assert read_results(path) == history

    def test_rewrite_is_byte_identical(self, tmp_path):
        history = [report(i, i / 7.0, mean_train_loss=np.pi / (i + 1)) for i in range(5)]
        first = tmp_path / "a.csv"
        second = tmp_path / "b.csv"
        write_results(history, first)
        write_results(read_results(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_seventeen_digit_serialization(self, tmp_path):
        value = 0.1 + 0.2  # != 0.3 in float64
        path = tmp_path / "digits.csv"
        write_results([report(0, 0.5, mean_train_loss=value)], path)
        text = path.read_text(encoding="utf-8")
        assert "0.30000000000000004" in text
        assert read_results(path)[0].mean_train_loss == value

    def test_missing_bias_gap_is_empty_field(self, tmp_path):
        path = tmp_path / "gap.csv"
        write_results([report(0, 0.5, bias_gap=None)], path)
        line = path.read_text(encoding="utf-8").splitlines()[1]
        assert line.split(",")[5] == ""

    def test_header_checked_on_read(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("round,foo\n", encoding="utf-8")
        with pytest.raises(ValueError, match="header"):
            read_results(path)

    def test_write_failure_names_path(self, tmp_path):
        missing = tmp_path / "nodir" / "out.csv"
        with pytest.raises(OSError, match="nodir"):
            write_results([], missing)


class TestRoundReportValidation:
    def test_accuracy_bounds(self):
        with pytest.raises(ValueError, match="test_accuracy"):
            report(0, 1.5)

    def test_round_nonnegative(self):
        with pytest.raises(ValueError, match="round"):
            report(-1, 0.5)
