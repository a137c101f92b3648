"""
REINFORCE with a greedy rollout baseline and an entropy bonus.

Per state: sample a collective under θ, roll out greedily under θ_BL from
the same state, and push θ along (f(S) - f(S_BL)) ∇log π(S) + τ ∇H.
At every epoch end θ and θ_BL pack a fixed evaluation set greedily; θ_BL
is replaced only when a one-sided paired t-test says θ is better.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import betainc

from app.config import AttentionConfig, TrainConfig, settings
from app.domain import Instance, generate_instance
from app.errors import ConfigError, InvalidArgument, ShapeError
from app.models import BudgetMode, Domain, RolloutMode, TrainLogEntry
from app.nn import ParamStore, load_checkpoint, save_checkpoint
from app.policy import PolicyModel, State, greedy_packing

logger = logging.getLogger("conclave")

SEED_SPACE = 2**63 - 1


# --- OPTIMIZER ---


class Adam:
    """Bias-corrected Adam over every tensor of a ParamStore."""

    def __init__(self, params: ParamStore, lr: float = 1e-4, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1 = b1
        self.b2 = b2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.values.items()}

    def step(self, grads: Optional[dict] = None):
        grads = self.params.grads if grads is None else grads
        self.t += 1
        for name, value in self.params.values.items():
            g = grads[name]
            if g.shape != value.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {value.shape}")
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / (1 - self.b1**self.t)
            v_hat = self.v[name] / (1 - self.b2**self.t)
            value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict:
        arrays = {"t": np.array(self.t)}
        arrays.update({f"m.{k}": v for k, v in self.m.items()})
        arrays.update({f"v.{k}": v for k, v in self.v.items()})
        return arrays

    def load_arrays(self, arrays):
        self.t = int(arrays["t"])
        for k in self.m:
            self.m[k] = np.array(arrays[f"m.{k}"])
            self.v[k] = np.array(arrays[f"v.{k}"])


# --- STATISTICS ---


def paired_ttest_pvalue(values_model: Sequence[float], values_baseline: Sequence[float]) -> float:
    """One-sided p-value for H1: mean(model) > mean(baseline), paired by instance."""
    a = np.asarray(values_model, dtype=np.float64)
    b = np.asarray(values_baseline, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"paired samples differ in length: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise InvalidArgument("paired t-test needs at least two pairs")
    diff = a - b
    mean = diff.mean()
    sd = diff.std(ddof=1)
    if sd == 0.0:
        return 0.0 if mean > 0 else 1.0
    df = diff.size - 1
    t = mean / (sd / np.sqrt(diff.size))
    # Student-t upper tail via the regularized incomplete beta function
    tail = 0.5 * float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return tail if t > 0 else 1.0 - tail


def paired_ttest_improves(values_model: Sequence[float], values_baseline: Sequence[float], alpha: float) -> bool:
    """Zero-variance differences decide on the sign of the mean difference."""
    return paired_ttest_pvalue(values_model, values_baseline) <= alpha


# --- GRADIENT ---


@dataclass
class BaselineState:
    model: PolicyModel
    eval_set: List[Instance]
    eval_values: List[float] = field(default_factory=list)


@dataclass
class GradientDiagnostics:
    mean_advantage: float
    mean_entropy: float
    mean_value: float


def loss_gradient(
    model: PolicyModel,
    baseline: BaselineState,
    states: Sequence[State],
    rng: np.random.Generator,
    tau: float,
    threads: int = 1,
) -> GradientDiagnostics:
    """
    Fills model.params.grads with the batch-mean gradient of the loss that the
    optimizer minimizes: -(f(S) - f(S_BL)) log π(S) - τ H.
    """
    if not states:
        raise InvalidArgument("empty batch")
    item_rngs = rng.spawn(len(states))

    def run(i: int):
        state = states[i]
        sample = model.rollout(state.instance, state, RolloutMode.SAMPLE, item_rngs[i], keep_trace=True)
        greedy = baseline.model.rollout(state.instance, state, RolloutMode.GREEDY)
        return sample, greedy

    # Rollouts only read parameters; gradients are accumulated in item order below.
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(run, range(len(states))))
    else:
        pairs = [run(i) for i in range(len(states))]

    model.params.zero_grad()
    batch = len(states)
    advantages, entropies, values = [], [], []
    for sample, greedy in pairs:
        advantage = sample.collective.value - greedy.collective.value
        model.backward(sample, coef_log_prob=-advantage / batch, coef_entropy=-tau / batch)
        advantages.append(advantage)
        entropies.append(sample.entropy)
        values.append(sample.collective.value)
    return GradientDiagnostics(
        float(np.mean(advantages)), float(np.mean(entropies)), float(np.mean(values))
    )


# --- TRAINING LOOP ---


@dataclass
class TrainResult:
    model: PolicyModel
    log: List[TrainLogEntry]
    swaps: int


def evaluate(model: PolicyModel, instances: Sequence[Instance]) -> List[float]:
    return [greedy_packing(model, inst)[1] for inst in instances]


def checkpoint_meta(model: PolicyModel, domain: Domain, tau: float) -> dict:
    return {"domain": domain.value, "tau": tau, **model.config.model_dump()}


def model_from_checkpoint(path: Path):
    """Loads (model, meta) from a checkpoint file."""
    params, meta = load_checkpoint(path)
    config = AttentionConfig.model_validate(
        {k: meta[k] for k in AttentionConfig.model_fields if k in meta}
    )
    return PolicyModel(config, params), meta


def _eval_set(domain: Domain, n: int, size: int, seed: int) -> List[Instance]:
    seeds = np.random.default_rng([seed, 1]).integers(0, SEED_SPACE, size=size)
    return [generate_instance(domain, n, int(s)) for s in seeds]


def train(
    config: TrainConfig,
    domain: Domain,
    n_train: int,
    attention: AttentionConfig,
    checkpoint_dir: Optional[Path] = None,
) -> TrainResult:
    """Algorithm loop: E epochs x I iterations of B fresh instances."""
    deterministic = settings.BUDGET_MODE == BudgetMode.COUNT
    model = PolicyModel(attention, seed=config.seed)
    eval_set = _eval_set(domain, n_train, config.eval_size, config.seed)
    baseline = BaselineState(model.clone(), eval_set)
    optimizer = Adam(model.params, lr=config.lr)
    log: List[TrainLogEntry] = []
    swaps = 0
    first_epoch = 1

    # 1. Resume if a previous run left its state behind
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        state_file = checkpoint_dir / "state.json"
        if state_file.exists():
            state = json.loads(state_file.read_text())
            with np.load(checkpoint_dir / "optimizer.npz") as arrays:
                optimizer.load_arrays(arrays)
                _load_snapshot(model.params, arrays, "model")
                _load_snapshot(baseline.model.params, arrays, "baseline")
            swaps = state["swaps"]
            first_epoch = state["epoch"] + 1
            log = [TrainLogEntry.model_validate(e) for e in state.get("log", [])]
            logger.info(f"Resuming training at epoch {first_epoch}")

    baseline.eval_values = evaluate(baseline.model, eval_set)

    for epoch in range(first_epoch, config.epochs + 1):
        started = time.monotonic()
        rng = np.random.default_rng([config.seed, epoch])
        diagnostics = []

        # 2. Policy-gradient iterations on fresh random states
        for _ in range(config.iterations):
            seeds = rng.integers(0, SEED_SPACE, size=config.batch_size)
            states = [State(generate_instance(domain, n_train, int(s))) for s in seeds]
            diagnostics.append(
                loss_gradient(model, baseline, states, rng, config.tau, config.threads)
            )
            optimizer.step()

        # 3. Compare against the baseline on the fixed evaluation set
        model_values = evaluate(model, eval_set)
        swapped = paired_ttest_improves(model_values, baseline.eval_values, config.alpha)
        if swapped:
            baseline.model.params.load_values(model.params)
            baseline.eval_values = model_values
            swaps += 1
            logger.info(f"Epoch {epoch}: baseline replaced (eval mean {np.mean(model_values):.4f})")

        entry = TrainLogEntry(
            epoch=epoch,
            mean_value=float(np.mean(model_values)),
            baseline_value=float(np.mean(baseline.eval_values)),
            mean_sample_value=float(np.mean([d.mean_value for d in diagnostics])),
            mean_advantage=float(np.mean([d.mean_advantage for d in diagnostics])),
            mean_entropy=float(np.mean([d.mean_entropy for d in diagnostics])),
            baseline_swapped=swapped,
            wall_ms=0 if deterministic else int((time.monotonic() - started) * 1000),
        )
        log.append(entry)
        logger.info(
            f"Epoch {epoch}/{config.epochs}: eval {entry.mean_value:.4f} "
            f"baseline {entry.baseline_value:.4f} entropy {entry.mean_entropy:.3f}"
        )

        # 4. Checkpoint
        if checkpoint_dir is not None:
            _write_epoch(checkpoint_dir, epoch, model, baseline, optimizer, domain, config, swaps, log)

    return TrainResult(model, log, swaps)


def _write_epoch(directory: Path, epoch, model, baseline, optimizer, domain, config, swaps, log):
    meta = checkpoint_meta(model, domain, config.tau)
    save_checkpoint(directory / f"epoch_{epoch:03d}.ckpt", model.params, meta)
    save_checkpoint(directory / "model.ckpt", model.params, meta)
    save_checkpoint(directory / "baseline.ckpt", baseline.model.params, meta)
    # float64 resume snapshot; the .ckpt files are the float32 export
    arrays = optimizer.state_arrays()
    arrays.update({f"model.{k}": v for k, v in model.params.values.items()})
    arrays.update({f"baseline.{k}": v for k, v in baseline.model.params.values.items()})
    np.savez(directory / "optimizer.npz", **arrays)
    with open(directory / "train_log.jsonl", "w") as fh:
        for entry in log:
            fh.write(entry.model_dump_json() + "\n")
    state = {"epoch": epoch, "swaps": swaps, "log": [e.model_dump() for e in log]}
    (directory / "state.json").write_text(json.dumps(state))


def _load_snapshot(params: ParamStore, arrays, prefix: str):
    for name in params.names():
        key = f"{prefix}.{name}"
        if key not in arrays:
            raise ConfigError(f"Resume snapshot lacks {key}")
        params.values[name][...] = arrays[key]
