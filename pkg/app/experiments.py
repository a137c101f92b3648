"""
Benchmark harness: runs every method on a grid of instances and seeds and
reports optimality ratios against the exact optimum where one is provable,
or against the best value any method reached otherwise.
"""

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.config import ExperimentConfig, settings
from app.domain import Instance, generate_instance
from app.errors import ConfigError, EnumerationTooLarge
from app.generate import GenerationBudget, generate_pool, pool_diversity
from app.models import DiversityHistogram, Method, ReferenceKind, ReportRow, ResultRow
from app.solver import solve_exact
from app.train import model_from_checkpoint
from app.workers import BenchJob, apply_run_settings, run_bench_jobs

logger = logging.getLogger("conclave")

RESULT_COLUMNS = list(ResultRow.model_fields)
REPORT_COLUMNS = list(ReportRow.model_fields)


@dataclass
class ExperimentOutcome:
    rows: List[ResultRow]
    report: List[ReportRow]
    warnings: List[str] = field(default_factory=list)


def optimality_ratio(value: float, reference: float, feasible: bool = True) -> float:
    """
    value / reference for positive references. Log-utility domains can have
    negative optima; there the ratio is reference / value so it stays in [0, 1].
    """
    if not feasible or not math.isfinite(value) or not math.isfinite(reference):
        return 0.0
    if reference > 0:
        return max(0.0, value / reference)
    if reference == 0:
        return 1.0 if value >= 0 else 0.0
    if value >= 0:
        return 1.0
    return max(0.0, reference / value)


def exact_reference(instance: Instance, node_limit: Optional[int] = None) -> Optional[float]:
    """Proven optimum of the instance, or None when it is out of reach."""
    limit = settings.ORACLE_NODE_LIMIT if node_limit is None else node_limit
    try:
        packing = solve_exact(instance, node_limit=limit)
    except EnumerationTooLarge:
        return None
    return packing.total if packing.proven_optimal else None


def build_jobs(config: ExperimentConfig) -> List[BenchJob]:
    jobs = []
    for n in config.sizes:
        for k in range(config.resolved_instances):
            for run_seed in range(config.seeds):
                for method in config.methods:
                    jobs.append(BenchJob(method, n, config.instance_seed_base + k, run_seed))
    return jobs


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> ExperimentOutcome:
    if Method.AM in config.methods:
        if config.checkpoint is None or not Path(config.checkpoint).exists():
            raise ConfigError(f"method AM needs an existing checkpoint, got {config.checkpoint}")
    apply_run_settings(config)

    jobs = build_jobs(config)
    logger.info(f"Benchmark: {len(jobs)} runs over sizes {config.sizes}")
    outcomes = run_bench_jobs(config, jobs)

    # 1. References per instance
    warnings: List[str] = []
    references: Dict[Tuple[int, int], Tuple[float, ReferenceKind]] = {}
    best_seen: Dict[Tuple[int, int], float] = defaultdict(lambda: -math.inf)
    for o in outcomes:
        key = (o.job.n, o.job.instance_seed)
        if o.feasible:
            best_seen[key] = max(best_seen[key], o.value)

    for key in sorted({(o.job.n, o.job.instance_seed) for o in outcomes}):
        n, seed = key
        exact = exact_reference(generate_instance(config.domain, n, seed))
        if exact is not None:
            references[key] = (exact, ReferenceKind.EXACT_OPTIMUM)
        else:
            message = f"n={n} instance {seed}: exact optimum out of reach, using the best known value"
            logger.warning(message)
            warnings.append(message)
            references[key] = (best_seen[key], ReferenceKind.BEST_KNOWN)

    # 2. Per-run rows
    rows = []
    for o in outcomes:
        ref, kind = references[(o.job.n, o.job.instance_seed)]
        rows.append(
            ResultRow(
                method=o.job.method,
                n=o.job.n,
                instance_seed=o.job.instance_seed,
                run_seed=o.job.run_seed,
                value=o.value,
                reference_value=ref,
                reference=kind,
                ratio=optimality_ratio(o.value, ref, o.feasible),
                wall_ms=o.wall_ms,
            )
        )
    rows.sort(key=lambda r: (r.method, r.n, r.instance_seed, r.run_seed))
    report = summarize(rows)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_results_csv(out_dir / "results.csv", rows, config)
        write_report_csv(out_dir / "report.csv", report)
    return ExperimentOutcome(rows, report, warnings)


def summarize(rows: List[ResultRow]) -> List[ReportRow]:
    """Mean ratio over all runs; the deviation is across per-instance means."""
    grouped: Dict[Tuple[str, int], Dict[int, List[float]]] = defaultdict(lambda: defaultdict(list))
    kinds: Dict[Tuple[str, int], set] = defaultdict(set)
    for r in rows:
        grouped[(r.method, r.n)][r.instance_seed].append(r.ratio)
        kinds[(r.method, r.n)].add(r.reference)

    report = []
    for (method, n), per_instance in sorted(grouped.items()):
        all_ratios = [x for ratios in per_instance.values() for x in ratios]
        instance_means = [float(np.mean(v)) for _, v in sorted(per_instance.items())]
        exact_only = kinds[(method, n)] == {ReferenceKind.EXACT_OPTIMUM.value}
        report.append(
            ReportRow(
                method=method,
                n=n,
                mean_ratio=float(np.mean(all_ratios)),
                std_ratio=float(np.std(instance_means)),
                reference=ReferenceKind.EXACT_OPTIMUM if exact_only else ReferenceKind.BEST_KNOWN,
            )
        )
    return report


# --- CSV I/O ---


def write_results_csv(path: Path, rows: List[ResultRow], config: ExperimentConfig):
    """The first line records the resolved run configuration as JSON."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# config: {config.model_dump_json()}\n")
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())


def write_report_csv(path: Path, report: List[ReportRow]):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in report:
            writer.writerow(row.model_dump())


def read_results_csv(path: Path) -> Tuple[dict, List[ResultRow]]:
    """Returns (recorded config, rows)."""
    config = {}
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("# config: "):
            config = json.loads(first[len("# config: "):])
        else:
            fh.seek(0)
        return config, [ResultRow.model_validate(r) for r in csv.DictReader(fh)]


# --- DIVERSITY ---


def diversity_report(
    checkpoint_a: Path,
    checkpoint_b: Path,
    instance: Instance,
    budget: GenerationBudget,
    seed: int = 0,
    bins: int = 20,
    out_path: Optional[Path] = None,
) -> Tuple[DiversityHistogram, DiversityHistogram]:
    """
    Samples a pool from each checkpoint on the same instance, budget and
    seed, and bins both on one shared value range.
    """
    pools = []
    for path in (checkpoint_a, checkpoint_b):
        model, meta = model_from_checkpoint(path)
        if meta.get("domain") != instance.domain.value:
            raise ConfigError(
                f"checkpoint {path} was trained on {meta.get('domain')}, instance is {instance.domain.value}"
            )
        pools.append(generate_pool(model, instance, budget, np.random.default_rng(seed)))

    values = [c.value for pool in pools for c in pool.collectives if c.members in pool.sampled]
    values = values or [c.value for pool in pools for c in pool.collectives]
    lo, hi = min(values), max(values)
    value_range = (lo - 0.5, hi + 0.5) if lo == hi else (lo, hi)
    hist_a, hist_b = (pool_diversity(p, bins=bins, value_range=value_range) for p in pools)

    if out_path is not None:
        write_diversity_csv(out_path, {"a": hist_a, "b": hist_b})
    return hist_a, hist_b


def write_diversity_csv(path: Path, histograms: Dict[str, DiversityHistogram]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "bin_lo", "bin_hi", "mass", "distinct", "sampled"])
        for label, h in histograms.items():
            for i, mass in enumerate(h.mass):
                writer.writerow([label, h.edges[i], h.edges[i + 1], mass, h.distinct, h.sampled])
