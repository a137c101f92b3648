"""
Exact weighted set packing.

solve_bnb branches on the lowest undecided agent: either one of the sets
whose smallest member is that agent, or (packing mode only) leaving the
agent uncovered. The optimistic bound gives every undecided agent its best
per-member share max_S w(S)/|S|, clipped at 0 in packing mode.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from app.config import settings
from app.domain import Collective, Instance, enumerate_feasible, rules_for
from app.errors import EnumerationTooLarge, Infeasible, InvalidArgument
from app.models import BudgetMode, Packing, PoolRecord, WspMode

logger = logging.getLogger("conclave")

# Slack on bound comparisons so float rounding never prunes an optimal branch.
BOUND_TOLERANCE = 1e-9


@dataclass(frozen=True)
class WspInstance:
    n: int
    members: Tuple[Tuple[int, ...], ...]
    weights: Tuple[float, ...]
    mode: WspMode = WspMode.PACKING

    def __post_init__(self):
        if len(self.members) != len(self.weights):
            raise InvalidArgument("members and weights differ in length")
        for m, w in zip(self.members, self.weights):
            if not m or any(not (0 <= i < self.n) for i in m) or len(set(m)) != len(m):
                raise InvalidArgument(f"bad set {m} for n={self.n}")
            if not math.isfinite(w):
                raise InvalidArgument(f"weight {w} of set {m} is not finite")

    @classmethod
    def from_sets(cls, n: int, sets: Iterable[Tuple[Sequence[int], float]], mode: WspMode = WspMode.PACKING):
        members, weights = [], []
        for m, w in sets:
            members.append(tuple(sorted(int(i) for i in m)))
            weights.append(float(w))
        return cls(n, tuple(members), tuple(weights), mode)

    @classmethod
    def from_collectives(cls, n: int, collectives: Iterable[Collective], mode: WspMode):
        return cls.from_sets(n, ((c.members, c.value) for c in collectives), mode)

    @classmethod
    def from_pool_records(cls, n: int, records: Iterable[PoolRecord], mode: WspMode):
        return cls.from_sets(n, ((r.members, r.value) for r in records), mode)

    @property
    def masks(self) -> List[int]:
        return [sum(1 << i for i in m) for m in self.members]

    def covered(self) -> int:
        bits = 0
        for mask in self.masks:
            bits |= mask
        return bits

    def usable(self) -> List[int]:
        """Set indices worth branching on: nonpositive sets never help a packing."""
        if self.mode == WspMode.PARTITION:
            return list(range(len(self.weights)))
        return [j for j, w in enumerate(self.weights) if w > 0.0]


def _packing(inst: WspInstance, chosen: Iterable[int], proven: bool, nodes: int, started: float) -> Packing:
    chosen = sorted(chosen)
    return Packing(
        chosen=chosen,
        chosen_members=[list(inst.members[j]) for j in chosen],
        total=math.fsum(inst.weights[j] for j in chosen),
        proven_optimal=proven,
        feasible=True,
        nodes_expanded=nodes,
        wall_ms=_elapsed_ms(started),
    )


def _elapsed_ms(started: float) -> int:
    if settings.BUDGET_MODE == BudgetMode.COUNT:
        return 0
    return int((time.monotonic() - started) * 1000)


def _check_coverable(inst: WspInstance):
    if inst.mode == WspMode.PARTITION:
        full = (1 << inst.n) - 1
        missing = full & ~inst.covered()
        if missing:
            agents = [i for i in range(inst.n) if missing >> i & 1]
            raise Infeasible(f"agents {agents} appear in no set; a partition is impossible")


def greedy_incumbent(inst: WspInstance) -> Packing:
    """Best weight-per-member first; partition mode patches holes with singletons."""
    started = time.monotonic()
    _check_coverable(inst)
    masks = inst.masks
    order = sorted(inst.usable(), key=lambda j: (-inst.weights[j] / len(inst.members[j]), j))
    used, chosen = 0, []
    for j in order:
        if not used & masks[j]:
            used |= masks[j]
            chosen.append(j)

    if inst.mode == WspMode.PARTITION:
        singletons = {}
        for j, m in enumerate(inst.members):
            if len(m) == 1 and (m[0] not in singletons or inst.weights[j] > inst.weights[singletons[m[0]]]):
                singletons[m[0]] = j
        for i in range(inst.n):
            if not used >> i & 1:
                if i not in singletons:
                    raise Infeasible(f"greedy packing cannot cover agent {i}")
                used |= 1 << i
                chosen.append(singletons[i])
    return _packing(inst, chosen, False, 0, started)


def solve_bnb(
    inst: WspInstance,
    time_budget: Optional[float] = None,
    node_limit: Optional[int] = None,
) -> Packing:
    """
    Depth-first branch-and-bound. Stops at the time budget (seconds) or the
    node limit and returns the incumbent with proven_optimal=False.
    """
    started = time.monotonic()
    _check_coverable(inst)
    deadline = None if time_budget is None else started + time_budget
    partition = inst.mode == WspMode.PARTITION
    masks = inst.masks
    weights = inst.weights
    full = (1 << inst.n) - 1

    # 1. Per-agent optimistic share and branching lists
    usable = inst.usable()
    share = [-math.inf if partition else 0.0] * inst.n
    by_min = [[] for _ in range(inst.n)]
    for j in usable:
        per_member = weights[j] / len(inst.members[j])
        for i in inst.members[j]:
            share[i] = max(share[i], per_member)
        by_min[inst.members[j][0]].append(j)
    for lst in by_min:
        lst.sort(key=lambda j: (-weights[j], j))
    set_share = {j: sum(share[i] for i in inst.members[j]) for j in usable}

    # 2. Warm start
    best_total = -math.inf
    best_chosen: List[int] = []
    try:
        incumbent = greedy_incumbent(inst)
        best_total, best_chosen = incumbent.total, list(incumbent.chosen)
    except Infeasible:
        pass

    nodes = 0
    exhausted = False

    def search(decided: int, current: float, bound: float, chosen: List[int]):
        nonlocal best_total, best_chosen, nodes, exhausted
        if exhausted:
            return
        nodes += 1
        if (node_limit is not None and nodes > node_limit) or (
            deadline is not None and time.monotonic() > deadline
        ):
            exhausted = True
            return
        if decided == full:
            total = math.fsum(weights[j] for j in chosen)
            if total > best_total or (total == best_total and sorted(chosen) < sorted(best_chosen)):
                best_total, best_chosen = total, list(chosen)
            return
        if current + bound < best_total - BOUND_TOLERANCE * (1.0 + abs(best_total)):
            return

        # lowest undecided agent
        low = (~decided & (decided + 1)).bit_length() - 1
        for j in by_min[low]:
            if not decided & masks[j]:
                chosen.append(j)
                search(decided | masks[j], current + weights[j], bound - set_share[j], chosen)
                chosen.pop()
        if not partition:
            search(decided | (1 << low), current, bound - share[low], chosen)

    total_share = math.fsum(share) if all(math.isfinite(s) for s in share) else -math.inf
    if math.isfinite(total_share):
        search(0, 0.0, total_share, [])

    if best_total == -math.inf:
        raise Infeasible("no partition exists over the given sets")
    if exhausted:
        logger.warning(f"WSP budget expired after {nodes} nodes; returning incumbent")
    return _packing(inst, best_chosen, not exhausted, nodes, started)


def solve_bruteforce(inst: WspInstance, node_limit: Optional[int] = None) -> Packing:
    """
    Enumerates every family of pairwise-disjoint sets; independent of solve_bnb.
    Packing mode leaves nonpositive sets out, like every solver here.
    """
    started = time.monotonic()
    limit = settings.ORACLE_NODE_LIMIT if node_limit is None else node_limit
    masks = inst.masks
    candidates = inst.usable()
    full = (1 << inst.n) - 1
    partition = inst.mode == WspMode.PARTITION
    best: Tuple[float, List[int]] = (-math.inf, [])
    nodes = 0

    def visit(start: int, used: int, chosen: List[int]):
        nonlocal best, nodes
        nodes += 1
        if nodes > limit:
            raise EnumerationTooLarge(f"brute force exceeded {limit} nodes")
        if not partition or used == full:
            total = math.fsum(inst.weights[j] for j in chosen)
            if total > best[0] or (total == best[0] and chosen < best[1]):
                best = (total, list(chosen))
        for k in range(start, len(candidates)):
            j = candidates[k]
            if not used & masks[j]:
                chosen.append(j)
                visit(k + 1, used | masks[j], chosen)
                chosen.pop()

    visit(0, 0, [])
    if best[0] == -math.inf:
        raise Infeasible("no partition exists over the given sets")
    return _packing(inst, best[1], True, nodes, started)


def solve_exact(
    instance: Instance, time_budget: Optional[float] = None, node_limit: Optional[int] = None
) -> Packing:
    """Branch-and-bound over every feasible collective of the instance."""
    rules = rules_for(instance.domain)
    mode = WspMode.PARTITION if rules.partition_required else WspMode.PACKING
    inst = WspInstance.from_collectives(instance.n, enumerate_feasible(instance), mode)
    return solve_bnb(inst, time_budget=time_budget, node_limit=node_limit)
