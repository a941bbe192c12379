"""Round records, evaluation, and lossless CSV serialization.

The results file is plain CSV with a fixed header; real-valued fields
are written with 17 significant digits so parsing them back returns
bit-identical float64 values, making rewrite-from-history and
read-back round trips exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Batch, ToyModel, forward, loss as ce_loss

CSV_HEADER = "round,strategy,seed,mean_train_loss,test_accuracy,bias_gap,wall_ms"


@dataclass(frozen=True)
class RoundReport:
    """One row of an experiment's history."""

    round: int
    strategy: str
    seed: int
    mean_train_loss: float
    test_accuracy: float
    bias_gap: float | None
    wall_ms: int

    def __post_init__(self):
        if self.round < 0:
            raise ValueError(f"round must be nonnegative, got {self.round}")
        if not (0.0 <= self.test_accuracy <= 1.0):
            raise ValueError(f"test_accuracy must lie in [0, 1], got {self.test_accuracy}")
        if self.wall_ms < 0:
            raise ValueError(f"wall_ms must be nonnegative, got {self.wall_ms}")


def evaluate(model: ToyModel, batch: Batch):
    """(accuracy, mean loss) on the given samples.

    Predictions are the argmax of the logits; exact ties go to the
    lowest class index.
    """
    if len(batch) == 0:
        raise ValueError("cannot evaluate on an empty set")
    logits = forward(model, batch.features)
    preds = np.argmax(logits, axis=1)
    accuracy = float(np.mean(preds == batch.labels))
    return accuracy, ce_loss(logits, batch.labels)


def rounds_to_target(history, target_accuracy: float):
    """Round index of the first report at or above the target, else None."""
    for report in history:
        if report.test_accuracy >= target_accuracy:
            return report.round
    return None


def _fmt_real(x: float) -> str:
    return f"{float(x):.17g}"


def _format_row(report: RoundReport) -> str:
    gap = "" if report.bias_gap is None else _fmt_real(report.bias_gap)
    return ",".join(
        (
            str(report.round),
            report.strategy,
            str(report.seed),
            _fmt_real(report.mean_train_loss),
            _fmt_real(report.test_accuracy),
            gap,
            str(report.wall_ms),
        )
    )


def write_results(history, path) -> None:
    """Write the history as CSV; byte-identical for identical histories."""
    path = Path(path)
    lines = [CSV_HEADER]
    lines.extend(_format_row(report) for report in history)
    try:
        with path.open("w", newline="\n", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path):
    """Parse a results CSV back into RoundReport values (exact floats)."""
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing or unexpected header")
    history = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 7:
            raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(fields)}")
        history.append(
            RoundReport(
                round=int(fields[0]),
                strategy=fields[1],
                seed=int(fields[2]),
                mean_train_loss=float(fields[3]),
                test_accuracy=float(fields[4]),
                bias_gap=None if fields[5] == "" else float(fields[5]),
                wall_ms=int(fields[6]),
            )
        )
    return history
