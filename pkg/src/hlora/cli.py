"""Command-line entry point.

Subcommands:

    hlora run --config PATH [--seed N] [--out PATH]
    hlora compare --config PATH --strategies LIST --seeds LIST --out PATH
    hlora selftest

``run`` executes one experiment and writes its CSV. ``compare`` runs
the cross product of strategies and seeds over shared data,
partitions, and rank draws (only the strategy differs within a seed),
appends everything into one CSV, and prints an ordering table.
``selftest`` executes the built-in property suites.

Exit codes: 0 success, 1 validation/selftest failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace

from . import selftest
from .config import ConfigError, ExperimentConfig, parse_config
from .federation import STRATEGIES, build_environment, run_experiment
from .metrics import rounds_to_target, write_results


def _parse_strategies(text: str):
    names = [part.strip() for part in text.split(",") if part.strip()]
    if len(names) < 2:
        raise ConfigError("compare needs at least two strategies (comma-separated)")
    for name in names:
        if name not in STRATEGIES:
            raise ConfigError(f"unknown strategy {name!r}; expected one of {', '.join(STRATEGIES)}")
    return names


def _parse_seeds(text: str):
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"seeds must be a comma-separated list of integers, got {text!r}") from None
    if not seeds:
        raise ConfigError("compare needs at least one seed")
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be nonnegative")
    return seeds


def run_comparison(config: ExperimentConfig, strategies, seeds):
    """Cross product of strategies and seeds over shared environments.

    Returns ``{(strategy, seed): ExperimentResult}``. Within each seed
    a single environment (data, split, partition) is reused, and rank
    draws come from a strategy-independent stream, so strategy is the
    only varying factor.
    """
    results = {}
    for seed in seeds:
        seeded = replace(config, seed=seed)
        env = build_environment(seeded)
        for strategy in strategies:
            run_config = replace(seeded, strategy=strategy)
            results[(strategy, seed)] = run_experiment(run_config, env)
    return results


def _summary_line(result, target: float) -> str:
    final = result.history[-1].test_accuracy if result.history else result.initial_accuracy
    reached = rounds_to_target(result.history, target)
    reached_text = "never" if reached is None else str(reached)
    return f"final_acc={final:.4f}  rounds_to_target={reached_text}"


def cmd_run(config: ExperimentConfig) -> int:
    started = time.perf_counter()
    result = run_experiment(config)
    write_results(result.history, config.out)
    elapsed = time.perf_counter() - started
    target = config.resolved_target()
    print(f"strategy          {result.strategy}")
    print(f"seed              {result.seed}")
    print(f"initial accuracy  {result.initial_accuracy:.4f}")
    if result.history:
        final = result.history[-1]
        print(f"final accuracy    {final.test_accuracy:.4f} (round {final.round})")
        reached = rounds_to_target(result.history, target)
        reached_text = "never reached" if reached is None else f"reached at round {reached}"
        print(f"target accuracy   {target:.4f} {reached_text}")
    print(f"wrote {len(result.history)} rounds to {config.out} in {elapsed:.1f} s")
    return 0


def cmd_compare(config: ExperimentConfig, strategies, seeds) -> int:
    started = time.perf_counter()
    results = run_comparison(config, strategies, seeds)
    history = []
    for seed in seeds:
        for strategy in strategies:
            history.extend(results[(strategy, seed)].history)
    write_results(history, config.out)

    target = config.resolved_target()
    width = max(len(s) for s in strategies)
    for seed in seeds:
        digest = results[(strategies[0], seed)].partition_digest
        print(f"seed {seed}  (partition {digest})")
        for strategy in strategies:
            print(f"  {strategy:<{width}}  {_summary_line(results[(strategy, seed)], target)}")
    print(f"ordering over {len(seeds)} seed(s), target {target:.4f}:")
    for strategy in strategies:
        finals = []
        reached = []
        for seed in seeds:
            result = results[(strategy, seed)]
            finals.append(result.history[-1].test_accuracy if result.history else result.initial_accuracy)
            reached.append(rounds_to_target(result.history, target))
        hit = [r for r in reached if r is not None]
        mean_rounds = f"{sum(hit) / len(hit):.1f}" if hit else "never"
        print(
            f"  {strategy:<{width}}  mean_final={sum(finals) / len(finals):.4f}  "
            f"mean_rounds_to_target={mean_rounds}  reached={len(hit)}/{len(seeds)}"
        )
    print(f"{len(history)} rows written to {config.out} in {time.perf_counter() - started:.1f} s")
    return 0


def cmd_selftest() -> int:
    return 0 if selftest.run_all() else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlora", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and write its CSV")
    p_run.add_argument("--config", required=True, help="path to a key=value config file")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="override the output CSV path")

    p_cmp = sub.add_parser("compare", help="run strategies side by side on shared data")
    p_cmp.add_argument("--config", required=True, help="path to a key=value config file")
    p_cmp.add_argument("--strategies", required=True, help="comma-separated strategy names")
    p_cmp.add_argument("--seeds", required=True, help="comma-separated master seeds")
    p_cmp.add_argument("--out", required=True, help="combined output CSV path")

    sub.add_parser("selftest", help="run the built-in property suites")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            return cmd_selftest()
        overrides = {}
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        if getattr(args, "out", None) is not None:
            overrides["out"] = args.out
        config = parse_config(args.config, overrides)
        if args.command == "run":
            return cmd_run(config)
        strategies = _parse_strategies(args.strategies)
        seeds = _parse_seeds(args.seeds)
        return cmd_compare(config, strategies, seeds)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
