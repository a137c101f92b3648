from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

# --- ENUMS ---
# Using string-based Enums for easy serialization to JSON/CSV


class Domain(str, Enum):
    RIDESHARING = "ridesharing"
    TEAM_FORMATION = "team_formation"


class WspMode(str, Enum):
    PACKING = "packing"  # every agent covered at most once
    PARTITION = "partition"  # every agent covered exactly once


class RolloutMode(str, Enum):
    SAMPLE = "sample"
    GREEDY = "greedy"


class RolloutPolicy(str, Enum):
    """Tree-search rollout policies."""

    GREEDY = "greedy"
    ADAPTED = "adapted"
    RANDOM = "random"


class Method(str, Enum):
    AM = "AM"
    G_MCTS = "G-MCTS"
    A_MCTS = "A-MCTS"
    R_MCTS = "R-MCTS"


class BudgetMode(str, Enum):
    WALL = "wall"
    COUNT = "count"


class ReferenceKind(str, Enum):
    EXACT_OPTIMUM = "ExactOptimum"
    BEST_KNOWN = "BestKnown"


# --- MAPPINGS ---
METHOD_TO_POLICY = {
    Method.G_MCTS: RolloutPolicy.GREEDY,
    Method.A_MCTS: RolloutPolicy.ADAPTED,
    Method.R_MCTS: RolloutPolicy.RANDOM,
}

# --- WIRE SCHEMAS ---


class InstanceRecord(BaseModel):
    """JSON form of an Instance. Feature values carry 9 significant digits."""

    domain: Domain
    seed: int
    n: int = Field(ge=1)
    agents: List[List[float]]


class PoolRecord(BaseModel):
    """One line of a pool dump."""

    members: List[int]
    value: float


class Packing(BaseModel):
    """
    Result of any packing method (branch-and-bound, brute force, greedy, MCTS).
    `chosen` indexes the WSP set list; tree search fills `chosen_members` only.
    """

    chosen: List[int] = Field(default_factory=list)
    chosen_members: List[List[int]] = Field(default_factory=list)
    total: float = 0.0
    proven_optimal: bool = False
    feasible: bool = True
    nodes_expanded: int = 0
    wall_ms: int = 0

    model_config = ConfigDict(ser_json_inf_nan="constants")


class TrainLogEntry(BaseModel):
    epoch: int
    mean_value: float
    baseline_value: float
    mean_sample_value: float
    mean_advantage: float
    mean_entropy: float
    baseline_swapped: bool
    wall_ms: int


class ResultRow(BaseModel):
    """One benchmark run; the per-run CSV schema, in column order."""

    method: Method
    n: int
    instance_seed: int
    run_seed: int
    value: float
    reference_value: float
    reference: ReferenceKind
    ratio: float
    wall_ms: int

    model_config = ConfigDict(use_enum_values=True)


class ReportRow(BaseModel):
    method: Method
    n: int
    mean_ratio: float
    std_ratio: float
    reference: ReferenceKind

    model_config = ConfigDict(use_enum_values=True)


class DiversityHistogram(BaseModel):
    """Normalised value histogram of a candidate pool."""

    edges: List[float]
    mass: List[float]
    distinct: int
    sampled: int


# --- API REQUESTS ---


class InstanceRequest(BaseModel):
    domain: Domain = Domain.RIDESHARING
    n: int = Field(..., ge=1, le=1000)
    seed: int = 0


class WspSet(BaseModel):
    members: List[int] = Field(..., min_length=1)
    value: float


class SolveRequest(BaseModel):
    n: int = Field(..., ge=1)
    mode: WspMode = WspMode.PACKING
    sets: List[WspSet]
    time_budget: Optional[float] = Field(default=None, gt=0.0)
    node_limit: Optional[int] = Field(default=None, gt=0)


class ExactRequest(BaseModel):
    instance: InstanceRecord
    time_budget: Optional[float] = Field(default=None, gt=0.0)


class PoolRequest(BaseModel):
    instance: InstanceRecord
    rollouts: Optional[int] = Field(default=None, gt=0, le=1_000_000)
    seconds: Optional[float] = Field(default=None, gt=0.0, le=600.0)
    seed: int = 0


class MctsRequest(BaseModel):
    instance: InstanceRecord
    policy: RolloutPolicy = RolloutPolicy.GREEDY
    iterations: int = Field(default=500, ge=0, le=1_000_000)
    seed: int = 0
