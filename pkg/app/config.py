import json
import math
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import ConfigError
from app.models import BudgetMode, Domain, Method, RolloutPolicy


class Settings(BaseSettings):
    """
    Application Configuration.
    Reads from environment variables or .env file.
    """

    # --- APPLICATION ---
    APP_TITLE: str = "Conclave Collective Formation"
    LOG_LEVEL: str = "INFO"
    OUTPUT_DIR: str = "runs"

    # Checkpoint served by the HTTP API. Optional: the solver endpoints work without it.
    CHECKPOINT_PATH: Optional[str] = None

    # --- BUDGETS ---
    # 'wall' budgets are seconds, 'count' budgets are rollouts / nodes / iterations.
    BUDGET_MODE: BudgetMode = BudgetMode.WALL
    TOTAL_BUDGET_SECONDS: float = 60.0
    GENERATION_SPLIT: float = 5 / 6
    THREADS: int = 1

    # --- DOMAIN RULES ---
    RIDESHARING_CAP: int = 5
    TEAM_SIZE_CAP: int = 3

    # --- SEARCH LIMITS ---
    ENUMERATION_LIMIT: int = 2_000_000
    ORACLE_NODE_LIMIT: int = 5_000_000

    # --- POLICY ---
    GAMMA: float = 10.0

    model_config = SettingsConfigDict(
        env_file=".env", env_ignore_empty=True, extra="ignore"
    )

    @model_validator(mode="after")
    def check_ranges(self):
        if not 0.0 < self.GENERATION_SPLIT < 1.0:
            raise ValueError("GENERATION_SPLIT must lie in (0, 1)")
        if self.THREADS < 1:
            raise ValueError("THREADS must be >= 1")
        return self


settings = Settings()


# --- RUN CONFIGURATIONS ---


class AttentionConfig(BaseModel):
    """Shape of the encoder-decoder policy. `gamma` scales the tanh-clipped logits."""

    d_x: int = Field(gt=0)
    d_h: int = Field(default=64, gt=0)
    heads: int = Field(default=4, gt=0)
    d_ff: int = Field(default=128, gt=0)
    blocks: int = Field(default=2, gt=0)
    gamma: float = Field(default=10.0, ge=0.0)

    @model_validator(mode="after")
    def check_heads(self):
        if self.d_h % self.heads:
            raise ValueError(f"d_h={self.d_h} is not divisible by heads={self.heads}")
        return self

    @classmethod
    def preset(cls, name: str, d_x: int, gamma: Optional[float] = None) -> "AttentionConfig":
        presets = {
            "desk": dict(d_h=64, heads=4, d_ff=128, blocks=2),
            "full": dict(d_h=256, heads=8, d_ff=512, blocks=3),
        }
        if name not in presets:
            raise ConfigError(f"Unknown attention profile '{name}'")
        return cls(
            d_x=d_x,
            gamma=settings.GAMMA if gamma is None else gamma,
            **presets[name],
        )


class TrainConfig(BaseModel):
    """REINFORCE-with-rollout-baseline schedule. Defaults are the full-scale values."""

    epochs: int = Field(default=100, gt=0)
    iterations: int = Field(default=400, gt=0)
    batch_size: int = Field(default=256, gt=0)
    alpha: float = Field(default=0.05, gt=0.0, lt=1.0)
    tau: float = Field(default=0.05, ge=0.0)
    lr: float = Field(default=1e-4, gt=0.0)
    eval_size: int = Field(default=100, ge=2)
    seed: int = 0
    threads: int = Field(default=1, ge=1)


class BudgetSplit(BaseModel):
    total_t: float = Field(default=60.0, gt=0.0)
    k: float = Field(default=5 / 6, gt=0.0, lt=1.0)

    @property
    def generation_seconds(self) -> float:
        return self.k * self.total_t

    @property
    def solve_seconds(self) -> float:
        return (1.0 - self.k) * self.total_t


class MctsConfig(BaseModel):
    exploration: float = Field(default=math.sqrt(2.0), ge=0.0)
    policy: RolloutPolicy = RolloutPolicy.GREEDY
    # Exactly one of the two budgets is used; iterations win when both are set.
    seconds: Optional[float] = Field(default=None, ge=0.0)
    iterations: Optional[int] = Field(default=None, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def check_budget(self):
        if self.seconds is None and self.iterations is None:
            raise ValueError("MctsConfig needs seconds or iterations")
        return self


class ExperimentConfig(BaseModel):
    """Benchmark grid: sizes x instances x run seeds x methods."""

    domain: Domain = Domain.RIDESHARING
    sizes: List[int] = Field(default_factory=lambda: [50, 100, 200])
    instances_per_size: Optional[int] = Field(default=None, gt=0)
    seeds: int = Field(default=50, gt=0)
    instance_seed_base: int = 1_000
    budget: BudgetSplit = Field(default_factory=BudgetSplit)
    budget_mode: BudgetMode = BudgetMode.WALL
    methods: List[Method] = Field(default_factory=lambda: list(Method))
    checkpoint: Optional[Path] = None
    team_size_cap: Optional[int] = Field(default=None, gt=0)
    threads: int = Field(default=1, ge=1)

    # Count-mode budgets
    generation_rollouts: int = Field(default=2_000, gt=0)
    solve_nodes: int = Field(default=200_000, gt=0)
    mcts_iterations: int = Field(default=2_000, ge=0)

    @field_validator("sizes")
    @classmethod
    def check_sizes(cls, sizes: List[int]) -> List[int]:
        if not sizes or any(n <= 0 for n in sizes):
            raise ValueError("sizes must be a nonempty list of positive counts")
        return sizes

    @field_validator("methods")
    @classmethod
    def check_methods(cls, methods: List[Method]) -> List[Method]:
        if not methods:
            raise ValueError("methods must not be empty")
        return methods

    @property
    def resolved_instances(self) -> int:
        if self.instances_per_size is not None:
            return self.instances_per_size
        return 50 if self.domain == Domain.RIDESHARING else 20


def load_config(model_cls, path: Optional[Path], overrides: dict):
    """Reads a JSON config file (optional) and applies non-None flag overrides."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    return model_cls.model_validate(data)
