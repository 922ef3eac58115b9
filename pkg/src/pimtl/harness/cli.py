"""Command-line entry point.

Subcommands::

    pimtl synthetic   [--config F] [--seed S] [--out DIR] [--synthetic.m 10 ...]
    pimtl portfolio   [--mode P-MTL] [--tasks 30] ...
    pimtl gen-prices  --out prices.csv [--portfolio.n_periods 1000 ...]
    pimtl eval        --checkpoint ckpt.json [--portfolio.data prices.csv] ...

Values are resolved defaults < config file < flags. Exit codes: 0 ok,
2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from ..core import uniform_allocation
from ..envs.portfolio import make_tasks
from ..envs.prices import generate_synthetic_prices, save_prices
from ..errors import ConfigError, DataError, DomainError, NumericError
from ..policy import load_params
from ..trainer import evaluate_task
from . import portfolio_run
from .config import ExperimentConfig, flat_fields, format_value, load_config, set_key
from .io import write_json

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
COMMANDS = ("synthetic", "portfolio", "gen-prices", "eval")
SHORT_FLAGS = ("seed", "out")  # exposed as --seed/--out rather than twice

log = logging.getLogger("pimtl")


def _type_name(tp) -> str:
    if typing.get_origin(tp) is tuple:
        return "comma list"
    return getattr(tp, "__name__", str(tp))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pimtl", description="Permutation-invariant multi-task allocation")
    sub = parser.add_subparsers(dest="command", required=True)
    defaults = ExperimentConfig()
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", help="first seed")
        p.add_argument("--out", help="output directory (gen-prices: CSV path)")
        p.add_argument("--mode", help="portfolio: train only this condition (STL, MTL-uniform, P-MTL)")
        p.add_argument("--tasks", type=int, help="portfolio: number of training tasks")
        p.add_argument("--verbose", "-v", action="store_true")
        if name == "eval":
            p.add_argument("--checkpoint", required=True, help="policy checkpoint JSON")
        for key, tp in flat_fields(defaults).items():
            if key in SHORT_FLAGS:
                continue
            p.add_argument(f"--{key}", dest=key, metavar=_type_name(tp).upper().replace(" ", "_"),
                           help=f"default: {format_value(_get(defaults, key))}")
    return parser


def _get(cfg, key):
    for part in key.split("."):
        cfg = getattr(cfg, part)
    return cfg


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    cfg.experiment = "synthetic-bound" if args.command == "synthetic" else "portfolio"
    if args.config:
        cfg = load_config(args.config, cfg)
    values = vars(args)
    for key in flat_fields(cfg):
        if values.get(key) is not None:
            set_key(cfg, key, values[key])
    if args.command == "synthetic":
        cfg.experiment = "synthetic-bound"
    elif args.command == "portfolio":
        cfg.experiment = "portfolio"
    if args.mode:
        cfg.portfolio.conditions = (portfolio_run.canonical_mode(args.mode),)
    if args.tasks is not None:
        if args.tasks < 1:
            raise ConfigError("--tasks must be >= 1")
        cfg.portfolio.task_counts = (args.tasks,)
    cfg.validate()
    return cfg


def cmd_synthetic(cfg: ExperimentConfig) -> None:
    from .synthetic_bound import run_synthetic_bound

    res = run_synthetic_bound(cfg)
    for key, g in res["bound"]["gap"].items():
        print(f"eps={key} gap={g['mean']:.5f} se={g['se']:.5f}")
    print(f"wrote {cfg.out}")


def cmd_portfolio(cfg: ExperimentConfig) -> None:
    res = portfolio_run.run_portfolio(cfg)
    for label, s in res["summary"].items():
        if s["n_seeds"]:
            print(f"{label}: mean test reward {s['mean']:.6f} [{s['iqr_low']:.6f}, {s['iqr_high']:.6f}]")
    print(f"wrote {cfg.out}")


def cmd_gen_prices(cfg: ExperimentConfig) -> None:
    pc = cfg.portfolio
    series = generate_synthetic_prices(pc.universe + pc.held_out, pc.n_periods,
                                       np.random.default_rng([cfg.seed, 10]), cfg.prices)
    path = Path(cfg.out)
    if path.suffix.lower() != ".csv":
        path = path / "prices.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_prices(series, path)
    print(f"wrote {path}")


def cmd_eval(cfg: ExperimentConfig, checkpoint) -> None:
    """Evaluate a checkpoint on the test period of the seed's training tasks."""
    pc = cfg.portfolio
    try:
        params = load_params(checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot load checkpoint {checkpoint}: {exc}") from exc
    series = portfolio_run.build_series(cfg, cfg.seed)
    env = portfolio_run.build_env(cfg, series)
    tasks = make_tasks(pc.universe, pc.task_size, max(pc.task_counts), np.random.default_rng([cfg.seed, 30]))
    tasks = tasks[: pc.eval_tasks]
    backend = cfg.trainer.backend or None
    rows = []
    for task in tasks:
        ev = evaluate_task(params, task, env, "test", backend)
        crp = evaluate_task(None, task, env, "test", policy_fn=lambda s: uniform_allocation(len(s)))
        rows.append({"task_id": task.id, "test_reward": ev.mean_reward,
                     "annualized_return": ev.annualized_return, "crp_reward": crp.mean_reward})
        print(f"task {task.id}: test reward {ev.mean_reward:.6f} (equal CRP {crp.mean_reward:.6f})")
    write_json(Path(cfg.out) / "eval.json", {"checkpoint": str(checkpoint), "seed": cfg.seed, "tasks": rows})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synthetic":
            cmd_synthetic(cfg)
        elif args.command == "portfolio":
            cmd_portfolio(cfg)
        elif args.command == "gen-prices":
            cmd_gen_prices(cfg)
        else:
            cmd_eval(cfg, args.checkpoint)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
