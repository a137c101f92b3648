import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np

from app.config import ExperimentConfig, MctsConfig, settings
from app.domain import Instance, generate_instance
from app.errors import ConfigError
from app.generate import GenerationBudget, generate_pool
from app.mcts import mcts_search
from app.models import METHOD_TO_POLICY, BudgetMode, Domain, Method, Packing
from app.solver import solve_bnb
from app.train import model_from_checkpoint

logger = logging.getLogger("conclave")


@dataclass(frozen=True)
class BenchJob:
    """One (method, instance, run seed) cell of a benchmark grid."""

    method: Method
    n: int
    instance_seed: int
    run_seed: int


@dataclass(frozen=True)
class BenchOutcome:
    job: BenchJob
    value: float
    feasible: bool
    wall_ms: int


def apply_run_settings(config: ExperimentConfig):
    """Pushes run-level knobs into the process-wide settings (also inside pool workers)."""
    settings.BUDGET_MODE = config.budget_mode
    if config.team_size_cap is not None:
        settings.TEAM_SIZE_CAP = config.team_size_cap


@lru_cache(maxsize=4)
def _cached_model(path: str, domain: Domain):
    model, meta = model_from_checkpoint(path)
    if meta.get("domain") != domain.value:
        raise ConfigError(f"checkpoint {path} was trained on {meta.get('domain')}, not {domain.value}")
    return model


def run_seed_for(instance_seed: int, run_seed: int) -> int:
    return int(np.random.SeedSequence([instance_seed, run_seed]).generate_state(1)[0])


def run_am(config: ExperimentConfig, instance: Instance, run_seed: int) -> Packing:
    """Attention pipeline: sample a pool for k*t, then branch-and-bound for (1-k)*t."""
    if config.checkpoint is None:
        raise ConfigError("method AM needs a checkpoint")
    model = _cached_model(str(config.checkpoint), config.domain)
    rng = np.random.default_rng([instance.seed, run_seed])
    if config.budget_mode == BudgetMode.COUNT:
        budget = GenerationBudget(rollouts=config.generation_rollouts)
        solve_kwargs = dict(node_limit=config.solve_nodes)
    else:
        budget = GenerationBudget(seconds=config.budget.generation_seconds)
        solve_kwargs = dict(time_budget=config.budget.solve_seconds)
    pool = generate_pool(model, instance, budget, rng)
    packing = solve_bnb(pool.to_wsp(), **solve_kwargs)
    if config.budget_mode != BudgetMode.COUNT:
        packing.wall_ms += pool.wall_ms
    return packing


def run_mcts(config: ExperimentConfig, instance: Instance, method: Method, run_seed: int) -> Packing:
    # every baseline gets the full budget t
    if config.budget_mode == BudgetMode.COUNT:
        budget = dict(iterations=config.mcts_iterations)
    else:
        budget = dict(seconds=config.budget.total_t)
    mcts = MctsConfig(
        policy=METHOD_TO_POLICY[method], seed=run_seed_for(instance.seed, run_seed), **budget
    )
    return mcts_search(instance, mcts)


def run_bench_job(config: ExperimentConfig, job: BenchJob) -> BenchOutcome:
    apply_run_settings(config)
    instance = generate_instance(config.domain, job.n, job.instance_seed)
    if job.method == Method.AM:
        packing = run_am(config, instance, job.run_seed)
    else:
        packing = run_mcts(config, instance, job.method, job.run_seed)
    value = packing.total if packing.feasible else -math.inf
    return BenchOutcome(job, value, packing.feasible, packing.wall_ms)


def run_bench_jobs(
    config: ExperimentConfig, jobs: Sequence[BenchJob], threads: Optional[int] = None
) -> List[BenchOutcome]:
    """
    Runs every job, in worker processes when threads > 1.
    Outcomes come back in job order whatever the worker count.
    """
    threads = config.threads if threads is None else threads
    if threads <= 1 or len(jobs) <= 1:
        return [run_bench_job(config, job) for job in jobs]

    logger.info(f"Running {len(jobs)} benchmark jobs on {threads} workers")
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(run_bench_job, config, job) for job in jobs]
        return [f.result() for f in futures]
