"""
Agents, instances, collectives and the two synthetic benchmark domains.

Utilities are self-contained stand-ins:
- ridesharing: distance saved by sharing a car, i.e. the sum of solo
  Manhattan trips minus a nearest-neighbour route that picks everyone up
  and then drops everyone off;
- team formation: log of a balance score built from gender balance,
  personality spread and competence coverage (sum of logs = Nash product).
"""

import itertools
import math
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np

from app.config import settings
from app.errors import EnumerationTooLarge, InfeasibleCollective, InvalidArgument
from app.models import Domain, InstanceRecord

RIDESHARING_DX = 4
TEAM_FORMATION_DX = 12
ZONE_GRID = 10
PERSONALITY = slice(1, 5)
COMPETENCE = slice(5, 12)
COMPETENCE_REQUIREMENT = 0.6
UTILITY_FLOOR = 1e-6


@dataclass(frozen=True)
class Instance:
    """A pool of agents; row i of `features` is agent i."""

    domain: Domain
    features: np.ndarray
    seed: int = 0

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise InvalidArgument("an instance needs at least one agent")
        if feats.shape[1] != feature_width(self.domain):
            raise InvalidArgument(
                f"{self.domain.value} agents have {feature_width(self.domain)} features, "
                f"got {feats.shape[1]}"
            )
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d_x(self) -> int:
        return self.features.shape[1]

    def to_record(self) -> InstanceRecord:
        agents = [[float(f"{x:.9g}") for x in row] for row in self.features.tolist()]
        return InstanceRecord(domain=self.domain, seed=self.seed, n=self.n, agents=agents)

    @classmethod
    def from_record(cls, record: InstanceRecord) -> "Instance":
        if len(record.agents) != record.n:
            raise InvalidArgument(f"record declares n={record.n} but lists {len(record.agents)} agents")
        return cls(record.domain, np.asarray(record.agents, dtype=np.float64), record.seed)


@dataclass(frozen=True)
class Collective:
    members: Tuple[int, ...]
    value: float

    @classmethod
    def of(cls, instance: Instance, members: Iterable[int]) -> "Collective":
        ordered = tuple(sorted(members))
        return cls(ordered, utility(instance, ordered))

    @property
    def mask(self) -> int:
        bits = 0
        for i in self.members:
            bits |= 1 << i
        return bits


@dataclass(frozen=True)
class DomainRules:
    max_cardinality: int
    partition_required: bool
    utility: Callable[[Instance, Sequence[int]], float] = field(repr=False)


def feature_width(domain: Domain) -> int:
    return RIDESHARING_DX if domain == Domain.RIDESHARING else TEAM_FORMATION_DX


def rules_for(domain: Domain) -> DomainRules:
    if domain == Domain.RIDESHARING:
        return DomainRules(settings.RIDESHARING_CAP, False, _ridesharing_value)
    return DomainRules(settings.TEAM_SIZE_CAP, True, _team_value)


def generate_instance(domain: Domain, n: int, seed: int) -> Instance:
    """Draws n agents i.i.d. from the domain's feature distribution."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if domain == Domain.RIDESHARING:
        zones = rng.integers(0, ZONE_GRID, size=(n, RIDESHARING_DX))
        features = zones / (ZONE_GRID - 1)
    else:
        gender = rng.integers(0, 2, size=(n, 1)).astype(np.float64)
        personality = rng.uniform(-1.0, 1.0, size=(n, 4))
        competence = rng.uniform(0.0, 1.0, size=(n, 7))
        features = np.hstack([gender, personality, competence])
    return Instance(domain, features, seed)


def is_feasible(instance: Instance, members: Sequence[int]) -> bool:
    members = list(members)
    if not members or len(set(members)) != len(members):
        return False
    if any(not (0 <= int(i) < instance.n) for i in members):
        return False
    return len(members) <= rules_for(instance.domain).max_cardinality


def utility(instance: Instance, members: Sequence[int]) -> float:
    if not is_feasible(instance, members):
        raise InfeasibleCollective(f"infeasible collective {list(members)} for n={instance.n}")
    rules = rules_for(instance.domain)
    return rules.utility(instance, sorted(int(i) for i in members))


def enumerate_feasible(instance: Instance) -> List[Collective]:
    """All feasible collectives, by size and then lexicographically."""
    cap = min(rules_for(instance.domain).max_cardinality, instance.n)
    total = sum(comb(instance.n, k) for k in range(1, cap + 1))
    if total > settings.ENUMERATION_LIMIT:
        raise EnumerationTooLarge(
            f"{total} feasible collectives exceed the limit of {settings.ENUMERATION_LIMIT}"
        )
    return [
        Collective.of(instance, members)
        for k in range(1, cap + 1)
        for members in itertools.combinations(range(instance.n), k)
    ]


# --- RIDESHARING ---


def _manhattan(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _nearest_neighbour_tour(start, stops: List[Tuple[float, float]]):
    """Visits every stop greedily from `start`; returns (length, last point)."""
    length = 0.0
    here = start
    remaining = list(stops)
    while remaining:
        k = min(range(len(remaining)), key=lambda j: (_manhattan(here, remaining[j]), j))
        length += _manhattan(here, remaining[k])
        here = remaining.pop(k)
    return length, here


def shared_route_cost(instance: Instance, members: Sequence[int]) -> float:
    """Best nearest-neighbour route over all starting origins: pick-ups, then drop-offs."""
    rows = instance.features[list(members)].tolist()
    origins = [(r[0], r[1]) for r in rows]
    destinations = [(r[2], r[3]) for r in rows]
    best = math.inf
    for s in range(len(origins)):
        pickup, last = _nearest_neighbour_tour(origins[s], origins[:s] + origins[s + 1 :])
        dropoff, _ = _nearest_neighbour_tour(last, destinations)
        best = min(best, pickup + dropoff)
    return best


def solo_cost(instance: Instance, i: int) -> float:
    r = instance.features[i].tolist()
    return _manhattan((r[0], r[1]), (r[2], r[3]))


def _ridesharing_value(instance: Instance, members: Sequence[int]) -> float:
    solo = 0.0
    for i in members:
        solo += solo_cost(instance, i)
    return solo - shared_route_cost(instance, members)


# --- TEAM FORMATION ---


def team_balance(instance: Instance, members: Sequence[int]) -> float:
    """u_team in (0, 1]: gender balance x personality spread x competence fit, floored."""
    team = instance.features[list(members)]
    g_bal = 1.0 - abs(team[:, 0].mean() - 0.5) * 2.0 * 0.5

    traits = team[:, PERSONALITY]
    if len(members) > 1:
        spreads = [
            np.abs(traits[a] - traits[b]).mean()
            for a, b in itertools.combinations(range(len(members)), 2)
        ]
        spread = float(np.mean(spreads))
    else:
        spread = 0.0
    # spread is in [0, 2]
    p_cov = (1.0 + spread) / 3.0

    best = team[:, COMPETENCE].max(axis=0)
    c_fit = 1.0 - float(np.abs(best - COMPETENCE_REQUIREMENT).mean())

    return float(g_bal * p_cov * c_fit) + UTILITY_FLOOR


def _team_value(instance: Instance, members: Sequence[int]) -> float:
    return math.log(team_balance(instance, members))
