import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from app.domain import Collective, Instance, rules_for
from app.errors import InvalidArgument
from app.models import DiversityHistogram, PoolRecord, RolloutMode, WspMode
from app.policy import PolicyModel, State
from app.solver import WspInstance

logger = logging.getLogger("conclave")


@dataclass(frozen=True)
class GenerationBudget:
    """Wall-clock seconds, or a rollout count for reproducible runs."""

    seconds: Optional[float] = None
    rollouts: Optional[int] = None

    def __post_init__(self):
        if self.seconds is None and self.rollouts is None:
            raise InvalidArgument("a generation budget needs seconds or rollouts")
        if (self.seconds is not None and self.seconds < 0) or (self.rollouts is not None and self.rollouts < 0):
            raise InvalidArgument("generation budgets must be nonnegative")


@dataclass
class CandidatePool:
    instance: Instance
    collectives: List[Collective]
    sampled: Set[Tuple[int, ...]] = field(default_factory=set)
    rollouts: int = 0
    duplicates: int = 0
    wall_ms: int = 0

    def to_wsp(self) -> WspInstance:
        mode = WspMode.PARTITION if rules_for(self.instance.domain).partition_required else WspMode.PACKING
        return WspInstance.from_collectives(self.instance.n, self.collectives, mode)

    def records(self) -> List[PoolRecord]:
        return [PoolRecord(members=list(c.members), value=c.value) for c in self.collectives]


def generate_pool(
    model: PolicyModel,
    instance: Instance,
    budget: GenerationBudget,
    rng: np.random.Generator,
) -> CandidatePool:
    """
    Samples collectives from the empty state until the budget runs out.
    Singletons go in first so the downstream packing is always feasible.
    """
    started = time.monotonic()
    entries: Dict[Tuple[int, ...], Collective] = {}
    for i in range(instance.n):
        entries[(i,)] = Collective.of(instance, (i,))

    encoding = model.encode_pool(instance)
    start = State(instance)
    deadline = None if budget.seconds is None else started + budget.seconds
    sampled: Set[Tuple[int, ...]] = set()
    rollouts = duplicates = 0

    while True:
        if budget.rollouts is not None and rollouts >= budget.rollouts:
            break
        if deadline is not None and time.monotonic() >= deadline:
            break
        r = model.rollout(instance, start, RolloutMode.SAMPLE, rng, encoding=encoding)
        rollouts += 1
        key = r.collective.members
        if key in sampled:
            duplicates += 1
            continue
        sampled.add(key)
        if key not in entries:
            entries[key] = r.collective

    pool = CandidatePool(
        instance,
        list(entries.values()),
        sampled,
        rollouts,
        duplicates,
        int((time.monotonic() - started) * 1000),
    )
    logger.debug(
        f"Pool: {len(pool.collectives)} collectives from {rollouts} rollouts ({duplicates} duplicates)"
    )
    return pool


def pool_diversity(
    pool: CandidatePool, bins: int = 20, value_range: Optional[Tuple[float, float]] = None
) -> DiversityHistogram:
    """Normalised histogram of sampled collective values plus the distinct count."""
    if not pool.collectives:
        raise InvalidArgument("empty pool")
    values = [c.value for c in pool.collectives if c.members in pool.sampled]
    if not values:
        values = [c.value for c in pool.collectives]
    values = np.asarray(values)
    if value_range is None:
        lo, hi = float(values.min()), float(values.max())
        value_range = (lo - 0.5, hi + 0.5) if lo == hi else (lo, hi)
    values = np.clip(values, *value_range)
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    mass = counts / counts.sum()
    return DiversityHistogram(
        edges=edges.tolist(),
        mass=mass.tolist(),
        distinct=len(pool.sampled),
        sampled=pool.rollouts,
    )


def dump_pool(pool: CandidatePool, path: Path):
    with open(path, "w") as fh:
        for record in pool.records():
            fh.write(record.model_dump_json() + "\n")


def load_pool(path: Path) -> List[PoolRecord]:
    with open(path) as fh:
        return [PoolRecord.model_validate(json.loads(line)) for line in fh if line.strip()]
