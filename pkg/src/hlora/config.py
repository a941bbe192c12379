"""Experiment configuration.

Configs live in flat ``key=value`` text files (``#`` starts a comment).
Unknown keys are rejected outright, every invariant failure names the
offending field, and command-line flags override file values. The
defaults describe a desk-scale synthetic task that a comparison run
finishes in minutes; ``configs/`` ships ready-made files.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .federation import HLORA_HETEROGENEOUS, NAIVE, STRATEGIES
from .model import mlp_dims


class ConfigError(ValueError):
    """A configuration file or override that cannot be accepted."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_rank_list(text: str):
    text = text.strip()
    if not text:
        return None
    return tuple(int(part) for part in text.split(","))


def _parse_optional_str(text: str):
    return text.strip() or None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    strategy: str = "hlora_heterogeneous"
    clients: int = 20
    sampled_per_round: int = 10
    rounds: int = 50
    rank: int = 8
    rank_min: int = 2
    rank_max: int = 8
    layer_ranks: tuple | None = None
    layers: int = 2
    input_dim: int = 32
    hidden_dim: int = 16
    num_classes: int = 8
    train_samples: int = 2000
    test_samples: int = 3000
    true_rank: int = 4
    label_noise: float = 0.2
    partition: str = "dirichlet"
    alpha: float = 0.3
    min_shard: int = 0  # 0 means "use batch_size"
    data_csv: str | None = None
    learning_rate: float = 0.05
    local_epochs: int = 3
    batch_size: int = 16
    init_std: float = 0.02
    timing: bool = False
    target_accuracy: float | None = None
    out: str = "results.csv"

    def __post_init__(self):
        _validate(self)

    @property
    def effective_min_shard(self) -> int:
        return self.min_shard if self.min_shard > 0 else self.batch_size

    def resolved_target(self) -> float:
        """Accuracy target: explicit, or midway between the label-noise
        ceiling and chance level."""
        if self.target_accuracy is not None:
            return self.target_accuracy
        return ((1.0 - self.label_noise) + 1.0 / self.num_classes) / 2.0


_PARSERS = {
    "seed": int,
    "strategy": str,
    "clients": int,
    "sampled_per_round": int,
    "rounds": int,
    "rank": int,
    "rank_min": int,
    "rank_max": int,
    "layer_ranks": _parse_rank_list,
    "layers": int,
    "input_dim": int,
    "hidden_dim": int,
    "num_classes": int,
    "train_samples": int,
    "test_samples": int,
    "true_rank": int,
    "label_noise": float,
    "partition": str,
    "alpha": float,
    "min_shard": int,
    "data_csv": _parse_optional_str,
    "learning_rate": float,
    "local_epochs": int,
    "batch_size": int,
    "init_std": float,
    "timing": _parse_bool,
    "target_accuracy": float,
    "out": str,
}


def _fail(message: str):
    raise ConfigError(message)


def _validate(cfg: ExperimentConfig):
    if cfg.seed < 0:
        _fail(f"seed must be nonnegative, got {cfg.seed}")
    if cfg.strategy not in STRATEGIES:
        _fail(f"strategy must be one of {', '.join(STRATEGIES)}, got {cfg.strategy!r}")
    if cfg.clients < 1:
        _fail(f"clients must be positive, got {cfg.clients}")
    if not (1 <= cfg.sampled_per_round <= cfg.clients):
        _fail(
            f"sampled_per_round ({cfg.sampled_per_round}) must lie in [1, clients] "
            f"(clients is {cfg.clients})"
        )
    if cfg.rounds < 0:
        _fail(f"rounds must be nonnegative, got {cfg.rounds}")
    if cfg.layers not in (1, 2):
        _fail(f"layers must be 1 or 2, got {cfg.layers}")
    for name in ("rank", "rank_min", "rank_max", "input_dim", "hidden_dim", "batch_size", "local_epochs", "test_samples"):
        if getattr(cfg, name) < 1:
            _fail(f"{name} must be positive, got {getattr(cfg, name)}")
    if cfg.rank_min > cfg.rank_max:
        _fail(f"rank_min ({cfg.rank_min}) must not exceed rank_max ({cfg.rank_max})")
    if cfg.num_classes < 2:
        _fail(f"num_classes must be at least 2, got {cfg.num_classes}")
    if not (0 <= cfg.label_noise < 0.5):
        _fail(f"label_noise must lie in [0, 0.5), got {cfg.label_noise}")
    if cfg.partition not in ("dirichlet", "iid"):
        _fail(f"partition must be 'dirichlet' or 'iid', got {cfg.partition!r}")
    if not (cfg.alpha > 0):
        _fail(f"alpha must be positive, got {cfg.alpha}")
    if cfg.min_shard < 0:
        _fail(f"min_shard must be nonnegative (0 means batch_size), got {cfg.min_shard}")
    if cfg.learning_rate < 0:
        _fail(f"learning_rate must be nonnegative, got {cfg.learning_rate}")
    if not (cfg.init_std > 0):
        _fail(f"init_std must be positive, got {cfg.init_std}")
    if cfg.target_accuracy is not None and not (0 <= cfg.target_accuracy <= 1):
        _fail(f"target_accuracy must lie in [0, 1], got {cfg.target_accuracy}")

    if cfg.data_csv is None:
        if cfg.train_samples < cfg.clients * cfg.effective_min_shard:
            _fail(
                f"train_samples ({cfg.train_samples}) cannot give {cfg.clients} clients "
                f"min_shard ({cfg.effective_min_shard}) samples each"
            )
        dims = mlp_dims(cfg.input_dim, cfg.hidden_dim, cfg.num_classes, cfg.layers)
        cap = min(min(d, k) for d, k in dims)
        if not (1 <= cfg.true_rank <= cap):
            _fail(f"true_rank ({cfg.true_rank}) infeasible for layer shapes {dims} (max {cap})")
        if cfg.layer_ranks is not None:
            if len(cfg.layer_ranks) != cfg.layers:
                _fail(f"layer_ranks lists {len(cfg.layer_ranks)} ranks for {cfg.layers} layers")
            for (d, k), r in zip(dims, cfg.layer_ranks):
                if not (1 <= r <= min(d, k)):
                    _fail(f"layer_ranks entry {r} infeasible for a {d}x{k} layer (max {min(d, k)})")
        elif cfg.strategy == HLORA_HETEROGENEOUS:
            if cfg.rank_max > cap:
                _fail(f"rank_max ({cfg.rank_max}) exceeds the smallest layer dimension ({cap})")
        else:
            if cfg.rank > cap:
                _fail(f"rank ({cfg.rank}) exceeds the smallest layer dimension ({cap})")


def read_config_file(path) -> dict:
    """Raw key/value strings from a flat config file; rejects unknown keys."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Config from a file plus typed overrides (flag values win)."""
    values = read_config_file(path)
    kwargs = {}
    for key, text in values.items():
        try:
            kwargs[key] = _PARSERS[key](text)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None
    config = ExperimentConfig(**kwargs)
    if overrides:
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown override keys: {sorted(unknown)}")
        config = replace(config, **overrides)
    return config
