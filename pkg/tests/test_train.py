import json
from unittest.mock import patch

import numpy as np
import pytest
from scipy import stats

from app.config import TrainConfig, settings
from app.domain import generate_instance
from app.errors import InvalidArgument, ShapeError
from app.models import BudgetMode, Domain, RolloutMode
from app.nn import ParamStore
from app.policy import PolicyModel, State
from app.train import (
    Adam,
    BaselineState,
    loss_gradient,
    model_from_checkpoint,
    paired_ttest_improves,
    paired_ttest_pvalue,
    train,
)

# --- OPTIMIZER ---


def test_adam_first_step_moves_by_lr():
    """
    SCENARIO: One bias-corrected step from zero moments.

    Expected Behavior:
        - Every coordinate moves by ~lr against the sign of its gradient.
    """
    store = ParamStore({"w": np.array([1.0, -2.0, 3.0])})
    store.grads["w"][...] = [0.5, -4.0, 1e-3]
    Adam(store, lr=0.1).step()
    assert np.allclose(store["w"], [0.9, -1.9, 2.9], atol=1e-4)


def test_adam_zero_gradient_is_a_fixed_point():
    store = ParamStore({"w": np.array([0.3, -1.2])})
    Adam(store, lr=0.1).step({"w": np.zeros(2)})
    assert np.array_equal(store["w"], [0.3, -1.2])


def test_adam_descends_a_quadratic_bowl():
    store = ParamStore({"x": np.array([1.0])})
    opt = Adam(store, lr=1e-2)
    for _ in range(500):
        opt.step({"x": 2.0 * store["x"]})
    assert abs(store["x"][0]) < 1e-2


def test_adam_rejects_mismatched_gradients():
    store = ParamStore({"w": np.zeros(3)})
    with pytest.raises(ShapeError):
        Adam(store).step({"w": np.zeros(4)})


def test_adam_state_resumes_exactly():
    rng = np.random.default_rng(0)
    grads = [{"w": rng.normal(size=(2, 2))} for _ in range(4)]

    straight = ParamStore({"w": np.ones((2, 2))})
    opt = Adam(straight, lr=0.01)
    for g in grads:
        opt.step(g)

    resumed = ParamStore({"w": np.ones((2, 2))})
    first = Adam(resumed, lr=0.01)
    for g in grads[:2]:
        first.step(g)
    second = Adam(resumed, lr=0.01)
    second.load_arrays(first.state_arrays())
    for g in grads[2:]:
        second.step(g)

    assert np.array_equal(straight["w"], resumed["w"])


# --- STATISTICS ---


def test_paired_ttest_matches_scipy():
    """
    SCENARIO: 100 random paired samples of varying size and shift.

    Expected Behavior:
        - One-sided p-values agree with scipy.stats.ttest_rel within 1e-6.
        - Decisions at alpha=0.05 agree.
    """
    rng = np.random.default_rng(42)
    for _ in range(100):
        size = int(rng.integers(2, 60))
        base = rng.normal(size=size)
        model = base + rng.normal(loc=rng.normal(0, 0.3), scale=1.0, size=size)
        ours = paired_ttest_pvalue(model, base)
        oracle = stats.ttest_rel(model, base, alternative="greater").pvalue
        assert ours == pytest.approx(oracle, abs=1e-6)
        assert paired_ttest_improves(model, base, 0.05) == (oracle <= 0.05)


def test_paired_ttest_zero_variance():
    assert paired_ttest_pvalue([2.0, 3.0], [1.0, 2.0]) == 0.0
    assert paired_ttest_pvalue([1.0, 2.0], [1.0, 2.0]) == 1.0
    assert not paired_ttest_improves([1.0, 2.0], [1.0, 2.0], 0.05)


def test_paired_ttest_input_checks():
    with pytest.raises(InvalidArgument):
        paired_ttest_pvalue([1.0], [0.0])
    with pytest.raises(InvalidArgument):
        paired_ttest_pvalue([1.0, 2.0], [0.0])


# --- GRADIENT ---


def _exact_objective_and_gradient(model: PolicyModel, instance, baseline_value: float):
    """
    Enumerates every trajectory of a 2-agent pool.
    Returns (E[f(S) - b], sum_t p(t) (f(t) - b) grad log p(t)).
    """
    stop = instance.n
    trajectories = [(0, stop), (0, 1, stop), (1, stop), (1, 0, stop)]
    objective = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.values.items()}
    for t in trajectories:
        model.params.zero_grad()
        r = model.replay(instance, t)
        p = float(np.exp(r.log_prob))
        advantage = r.collective.value - baseline_value
        objective += p * advantage
        model.backward(r, coef_log_prob=p * advantage, coef_entropy=0.0)
        for k in grads:
            grads[k] += model.params.grads[k]
    return objective, grads


def test_reinforce_gradient_matches_exact_expectation(ride_config):
    """
    SCENARIO: Two agents, four trajectories, a frozen baseline value.

    Expected Behavior:
        - The enumerated score-function gradient equals central finite
          differences of the exact expected advantage (rel. err < 1e-3).
    """
    model = PolicyModel(ride_config.model_copy(update={"gamma": 2.0}), seed=8)
    inst = generate_instance(Domain.RIDESHARING, 2, 5)
    b = 0.1
    _, analytic = _exact_objective_and_gradient(model, inst, b)

    eps = 1e-6
    for name in ("embed.weight", "dec.query", "stop", "placeholder"):
        x = model.params.values[name]
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            keep = x[idx]
            x[idx] = keep + eps
            up = _exact_objective_and_gradient(model, inst, b)[0]
            x[idx] = keep - eps
            down = _exact_objective_and_gradient(model, inst, b)[0]
            x[idx] = keep
            numeric[idx] = (up - down) / (2 * eps)
        err = np.linalg.norm(analytic[name] - numeric) / max(
            np.linalg.norm(analytic[name]) + np.linalg.norm(numeric), 1e-12
        )
        assert err < 1e-3, name


def test_loss_gradient_uses_per_item_streams(ride_model, ride_instance):
    """
    SCENARIO: A batch of one state.

    Expected Behavior:
        - The buffer equals a manual backward of the sampled rollout with
          coefficients -(f(S) - f(S_BL)) and -tau, drawn from the first
          spawned stream of the batch generator.
    """
    baseline = BaselineState(ride_model.clone(), [])
    tau = 0.05
    loss_gradient(ride_model, baseline, [State(ride_instance)], np.random.default_rng(5), tau)
    produced = {k: v.copy() for k, v in ride_model.params.grads.items()}

    item_rng = np.random.default_rng(5).spawn(1)[0]
    sample = ride_model.rollout(ride_instance, mode=RolloutMode.SAMPLE, rng=item_rng, keep_trace=True)
    greedy = baseline.model.rollout(ride_instance, mode=RolloutMode.GREEDY)
    ride_model.params.zero_grad()
    ride_model.backward(
        sample,
        coef_log_prob=-(sample.collective.value - greedy.collective.value),
        coef_entropy=-tau,
    )
    for k, v in produced.items():
        assert np.allclose(v, ride_model.params.grads[k], rtol=0, atol=1e-12), k


def test_loss_gradient_is_thread_count_independent(ride_model):
    states = [State(generate_instance(Domain.RIDESHARING, 5, s)) for s in range(6)]
    baseline = BaselineState(ride_model.clone(), [])

    loss_gradient(ride_model, baseline, states, np.random.default_rng(3), 0.05, threads=1)
    single = {k: v.copy() for k, v in ride_model.params.grads.items()}
    loss_gradient(ride_model, baseline, states, np.random.default_rng(3), 0.05, threads=3)
    for k, v in single.items():
        assert np.array_equal(v, ride_model.params.grads[k]), k


def test_loss_gradient_rejects_empty_batch(ride_model):
    with pytest.raises(InvalidArgument):
        loss_gradient(ride_model, BaselineState(ride_model.clone(), []), [], np.random.default_rng(0), 0.0)


def test_constant_utility_without_entropy_gives_zero_gradient(ride_model):
    states = [State(generate_instance(Domain.RIDESHARING, 5, s)) for s in range(4)]
    baseline = BaselineState(ride_model.clone(), [])
    with patch("app.policy.utility", return_value=1.0):
        diagnostics = loss_gradient(ride_model, baseline, states, np.random.default_rng(2), tau=0.0)
    assert diagnostics.mean_advantage == 0.0
    for name, g in ride_model.params.grads.items():
        assert not np.any(g), name


def test_entropy_only_step_raises_batch_entropy(ride_model):
    """
    SCENARIO: Constant utility (zero advantage everywhere), tau=0.05.

    Test:
        Take one small Adam step on the loss gradient, then replay the
        same sampled trajectories.

    Expected Behavior:
        - The summed step entropies of the frozen batch increase.
    """
    states = [State(generate_instance(Domain.RIDESHARING, 5, s)) for s in range(4)]
    item_rngs = np.random.default_rng(6).spawn(len(states))
    batch = [
        (s.instance, ride_model.rollout(s.instance, mode=RolloutMode.SAMPLE, rng=r).actions)
        for s, r in zip(states, item_rngs)
    ]
    before = sum(ride_model.replay(inst, actions).entropy for inst, actions in batch)

    with patch("app.policy.utility", return_value=1.0):
        loss_gradient(ride_model, BaselineState(ride_model.clone(), []), states, np.random.default_rng(6), tau=0.05)
    Adam(ride_model.params, lr=1e-5).step()

    after = sum(ride_model.replay(inst, actions).entropy for inst, actions in batch)
    assert after > before


def test_single_step_does_not_decrease_expected_advantage(ride_config):
    """
    SCENARIO: A frozen batch of 2-agent pools with fixed baseline values, tau=0.

    Test:
        Enumerate the exact expected advantage and its gradient, take one
        Adam step at lr=1e-5 on the negated gradient, enumerate again.

    Expected Behavior:
        - The expected advantage does not drop (tolerance 1e-9).
    """
    model = PolicyModel(ride_config.model_copy(update={"gamma": 2.0}), seed=11)
    batch = [generate_instance(Domain.RIDESHARING, 2, s) for s in (1, 2, 3)]
    baselines = [model.rollout(inst, mode=RolloutMode.GREEDY).collective.value for inst in batch]

    def objective_and_gradient():
        total = 0.0
        grads = {k: np.zeros_like(v) for k, v in model.params.values.items()}
        for inst, b in zip(batch, baselines):
            value, g = _exact_objective_and_gradient(model, inst, b)
            total += value
            for k in grads:
                grads[k] += g[k]
        return total, grads

    before, grads = objective_and_gradient()
    Adam(model.params, lr=1e-5).step({k: -g for k, g in grads.items()})
    after, _ = objective_and_gradient()
    assert after >= before - 1e-9


# --- TRAINING LOOP ---


def _tiny_train_config(**kw):
    base = dict(epochs=2, iterations=2, batch_size=4, eval_size=4, lr=1e-3, seed=7)
    base.update(kw)
    return TrainConfig(**base)


def test_train_writes_checkpoints_and_resumes(tmp_path, ride_config):
    """
    SCENARIO: Train two epochs, then ask for three in the same directory.

    Expected Behavior:
        - Per-epoch and latest checkpoints, optimizer state and the log exist.
        - The second call resumes at epoch 3 and keeps the earlier entries.
    """
    settings.BUDGET_MODE = BudgetMode.COUNT
    result = train(_tiny_train_config(), Domain.RIDESHARING, 4, ride_config, checkpoint_dir=tmp_path)
    assert [e.epoch for e in result.log] == [1, 2]
    for name in ("epoch_001.ckpt", "epoch_002.ckpt", "model.ckpt", "baseline.ckpt", "optimizer.npz", "state.json"):
        assert (tmp_path / name).exists(), name
    assert json.loads((tmp_path / "state.json").read_text())["epoch"] == 2
    assert all(e.wall_ms == 0 for e in result.log)

    resumed = train(_tiny_train_config(epochs=3), Domain.RIDESHARING, 4, ride_config, checkpoint_dir=tmp_path)
    assert [e.epoch for e in resumed.log] == [1, 2, 3]
    assert resumed.log[:2] == result.log

    model, meta = model_from_checkpoint(tmp_path / "model.ckpt")
    assert meta["domain"] == "ridesharing"
    assert model.config.d_h == ride_config.d_h


def test_training_log_is_deterministic_in_count_mode(tmp_path, ride_config):
    settings.BUDGET_MODE = BudgetMode.COUNT
    for run in ("a", "b"):
        train(_tiny_train_config(), Domain.RIDESHARING, 4, ride_config, checkpoint_dir=tmp_path / run)
    assert (tmp_path / "a" / "train_log.jsonl").read_bytes() == (tmp_path / "b" / "train_log.jsonl").read_bytes()
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


def test_resumed_training_replays_a_straight_run(tmp_path, ride_config):
    """
    SCENARIO: Three epochs in one go versus two epochs and a resume to three.

    Expected Behavior:
        - Identical model checkpoint bytes and training logs.
    """
    settings.BUDGET_MODE = BudgetMode.COUNT
    straight, split = tmp_path / "straight", tmp_path / "split"
    train(_tiny_train_config(epochs=3), Domain.RIDESHARING, 4, ride_config, checkpoint_dir=straight)
    train(_tiny_train_config(epochs=2), Domain.RIDESHARING, 4, ride_config, checkpoint_dir=split)
    train(_tiny_train_config(epochs=3), Domain.RIDESHARING, 4, ride_config, checkpoint_dir=split)

    for name in ("model.ckpt", "baseline.ckpt", "train_log.jsonl"):
        assert (straight / name).read_bytes() == (split / name).read_bytes(), name


def test_baseline_value_never_decreases(ride_config):
    settings.BUDGET_MODE = BudgetMode.COUNT
    result = train(_tiny_train_config(epochs=5, lr=1e-2), Domain.RIDESHARING, 5, ride_config)
    values = [e.baseline_value for e in result.log]
    assert all(later >= earlier for earlier, later in zip(values, values[1:]))
    for entry in result.log:
        if entry.baseline_swapped:
            assert entry.baseline_value == entry.mean_value
