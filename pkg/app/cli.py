"""
Command-line front end.

    python -m app.cli [--config PATH] [--out DIR] [--seed N]
                      [--budget-mode wall|count] [--threads N] <command> ...

Exit codes: 0 success, 1 the problem itself has no answer (for example an
unpartitionable pool), 2 configuration or input error, 3 benchmark finished
with oracle-limit warnings (some references are best-known, not exact).
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from app.config import (
    AttentionConfig,
    ExperimentConfig,
    MctsConfig,
    TrainConfig,
    load_config,
    settings,
)
from app.domain import Instance, feature_width, generate_instance
from app.errors import ConclaveError, ConfigError, InvalidArgument
from app.experiments import diversity_report, run_experiment
from app.generate import GenerationBudget, dump_pool, generate_pool, load_pool
from app.logging import setup_logging
from app.mcts import mcts_search
from app.models import BudgetMode, Domain, InstanceRecord, Method, RolloutPolicy, WspMode
from app.solver import WspInstance, solve_bnb, solve_exact
from app.train import model_from_checkpoint, train

logger = logging.getLogger("conclave")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_ORACLE_WARNINGS = 3


def _global_flags() -> argparse.ArgumentParser:
    # Shared by the root parser and every subcommand so flags work on either side.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--budget-mode", choices=[m.value for m in BudgetMode], default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="conclave", parents=[common], description=__doc__.splitlines()[1])
    sub = parser.add_subparsers(dest="command", required=True)
    domains = [d.value for d in Domain]

    p = sub.add_parser("train", parents=[common], help="train a policy with REINFORCE")
    p.add_argument("--domain", choices=domains, default=Domain.RIDESHARING.value)
    p.add_argument("--n", type=int, default=10, help="pool size of the training instances")
    p.add_argument("--profile", choices=["desk", "full"], default="desk")
    p.add_argument("--epochs", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eval-size", type=int)
    p.add_argument("--gamma", type=float)

    p = sub.add_parser("gen", parents=[common], help="sample a candidate pool")
    p.add_argument("--checkpoint", type=Path, required=True)
    _instance_flags(p, domains)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--seconds", type=float)

    p = sub.add_parser("solve", parents=[common], help="solve a pool dump or an instance exactly")
    p.add_argument("--pool", type=Path, help="pool JSON lines from `gen`")
    p.add_argument("--n", type=int, help="agent count of the pool")
    p.add_argument("--mode", choices=[m.value for m in WspMode], default=WspMode.PACKING.value)
    p.add_argument("--instance", type=Path, help="instance JSON; solved over every feasible collective")
    p.add_argument("--time-budget", type=float)
    p.add_argument("--node-limit", type=int)

    p = sub.add_parser("mcts", parents=[common], help="run a tree-search baseline")
    _instance_flags(p, domains)
    p.add_argument("--policy", choices=[r.value for r in RolloutPolicy], default=RolloutPolicy.GREEDY.value)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seconds", type=float)

    p = sub.add_parser("bench", parents=[common], help="optimality-ratio benchmark")
    p.add_argument("--domain", choices=domains)
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--instances", type=int, dest="instances_per_size")
    p.add_argument("--seeds", type=int)
    p.add_argument("--methods", nargs="+", choices=[m.value for m in Method])
    p.add_argument("--checkpoint", type=Path)

    p = sub.add_parser("diversity", parents=[common], help="compare pool diversity of two checkpoints")
    p.add_argument("--checkpoint-a", type=Path, required=True)
    p.add_argument("--checkpoint-b", type=Path, required=True)
    _instance_flags(p, domains)
    p.add_argument("--rollouts", type=int)
    p.add_argument("--seconds", type=float)
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _instance_flags(p: argparse.ArgumentParser, domains: List[str]):
    p.add_argument("--instance", type=Path, help="instance JSON (overrides the generator flags)")
    p.add_argument("--domain", choices=domains, default=Domain.RIDESHARING.value)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--instance-seed", type=int, default=0)


# --- HELPERS ---


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out", None) or settings.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args) -> int:
    return getattr(args, "seed", 0)


def _load_instance(args) -> Instance:
    if args.instance is not None:
        try:
            record = InstanceRecord.model_validate_json(Path(args.instance).read_text())
        except OSError as e:
            raise ConfigError(f"Cannot read instance {args.instance}: {e}") from e
        return Instance.from_record(record)
    return generate_instance(Domain(args.domain), args.n, args.instance_seed)


def _generation_budget(args) -> GenerationBudget:
    if args.rollouts is None and args.seconds is None:
        if settings.BUDGET_MODE == BudgetMode.COUNT:
            return GenerationBudget(rollouts=2_000)
        return GenerationBudget(seconds=settings.TOTAL_BUDGET_SECONDS * settings.GENERATION_SPLIT)
    return GenerationBudget(seconds=args.seconds, rollouts=args.rollouts)


def _emit(payload: str, path: Optional[Path] = None):
    if path is not None:
        path.write_text(payload + "\n")
    print(payload)


# --- COMMANDS ---


def cmd_train(args) -> int:
    domain = Domain(args.domain)
    overrides = {
        "epochs": args.epochs,
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "tau": args.tau,
        "lr": args.lr,
        "alpha": args.alpha,
        "eval_size": args.eval_size,
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
    }
    config = load_config(TrainConfig, getattr(args, "config", None), overrides)
    attention = AttentionConfig.preset(args.profile, feature_width(domain), gamma=args.gamma)
    out = _out_dir(args)
    (out / "config.json").write_text(
        json.dumps({"domain": domain.value, "n": args.n, "train": config.model_dump(), "attention": attention.model_dump()}, indent=2)
    )
    result = train(config, domain, args.n, attention, checkpoint_dir=out)
    logger.info(f"Training done: {len(result.log)} epochs, {result.swaps} baseline swaps")
    return EXIT_OK


def cmd_gen(args) -> int:
    instance = _load_instance(args)
    model, meta = model_from_checkpoint(args.checkpoint)
    if meta.get("domain") != instance.domain.value:
        raise ConfigError(f"checkpoint was trained on {meta.get('domain')}, instance is {instance.domain.value}")
    pool = generate_pool(model, instance, _generation_budget(args), np.random.default_rng(_seed(args)))
    out = _out_dir(args)
    (out / "instance.json").write_text(instance.to_record().model_dump_json() + "\n")
    dump_pool(pool, out / "pool.jsonl")
    print(json.dumps({"collectives": len(pool.collectives), "rollouts": pool.rollouts, "duplicates": pool.duplicates}))
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.instance is not None:
        packing = solve_exact(_load_instance(args), time_budget=args.time_budget)
    elif args.pool is not None:
        records = load_pool(args.pool)
        n = args.n if args.n is not None else 1 + max(i for r in records for i in r.members)
        inst = WspInstance.from_pool_records(n, records, WspMode(args.mode))
        packing = solve_bnb(inst, time_budget=args.time_budget, node_limit=args.node_limit)
    else:
        raise ConfigError("solve needs --pool or --instance")
    _emit(packing.model_dump_json(), _out_dir(args) / "packing.json")
    return EXIT_OK


def cmd_mcts(args) -> int:
    instance = _load_instance(args)
    overrides = {"policy": args.policy, "iterations": args.iterations, "seconds": args.seconds, "seed": getattr(args, "seed", None)}
    if args.iterations is None and args.seconds is None and getattr(args, "config", None) is None:
        if settings.BUDGET_MODE == BudgetMode.COUNT:
            overrides["iterations"] = 2_000
        else:
            overrides["seconds"] = settings.TOTAL_BUDGET_SECONDS
    config = load_config(MctsConfig, getattr(args, "config", None), overrides)
    packing = mcts_search(instance, config)
    _emit(packing.model_dump_json(), _out_dir(args) / "mcts.json")
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = {
        "domain": args.domain,
        "sizes": args.sizes,
        "instances_per_size": args.instances_per_size,
        "seeds": args.seeds,
        "methods": args.methods,
        "checkpoint": args.checkpoint,
        "budget_mode": getattr(args, "budget_mode", None),
        "threads": getattr(args, "threads", None),
    }
    config = load_config(ExperimentConfig, getattr(args, "config", None), overrides)
    outcome = run_experiment(config, _out_dir(args))
    for row in outcome.report:
        print(f"{row.method:>7} n={row.n:<4} ratio {row.mean_ratio:.4f} ± {row.std_ratio:.4f} ({row.reference})")
    return EXIT_ORACLE_WARNINGS if outcome.warnings else EXIT_OK


def cmd_diversity(args) -> int:
    instance = _load_instance(args)
    out = _out_dir(args)
    hist_a, hist_b = diversity_report(
        args.checkpoint_a,
        args.checkpoint_b,
        instance,
        _generation_budget(args),
        seed=_seed(args),
        bins=args.bins,
        out_path=out / "diversity.csv",
    )
    print(json.dumps({"a": {"distinct": hist_a.distinct}, "b": {"distinct": hist_b.distinct}}))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "gen": cmd_gen,
    "solve": cmd_solve,
    "mcts": cmd_mcts,
    "bench": cmd_bench,
    "diversity": cmd_diversity,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    if getattr(args, "budget_mode", None):
        settings.BUDGET_MODE = BudgetMode(args.budget_mode)
    if getattr(args, "threads", None):
        settings.THREADS = args.threads
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except (ConfigError, InvalidArgument) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except ConclaveError as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
