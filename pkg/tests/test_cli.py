import json

from app.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, EXIT_ORACLE_WARNINGS, main
from app.config import settings
from app.models import Packing


def test_gen_then_solve_pool_and_instance(tmp_path, ride_checkpoint):
    """
    SCENARIO: Sample a pool with `gen`, then solve it and the instance.

    Expected Behavior:
        - gen writes instance.json and pool.jsonl.
        - Solving the pool never beats solving the instance exactly.
    """
    out = tmp_path / "run"
    code = main(["--out", str(out), "--seed", "1", "gen", "--checkpoint", str(ride_checkpoint), "--n", "6", "--rollouts", "40"])
    assert code == EXIT_OK
    assert (out / "instance.json").exists()
    assert (out / "pool.jsonl").exists()

    assert main(["--out", str(out), "solve", "--pool", str(out / "pool.jsonl"), "--n", "6"]) == EXIT_OK
    pooled = Packing.model_validate_json((out / "packing.json").read_text())
    assert main(["--out", str(out), "solve", "--instance", str(out / "instance.json")]) == EXIT_OK
    exact = Packing.model_validate_json((out / "packing.json").read_text())
    assert exact.proven_optimal
    assert pooled.total <= exact.total + 1e-9


def test_global_flags_after_the_subcommand(tmp_path):
    out = tmp_path / "mcts"
    code = main(["mcts", "--n", "6", "--iterations", "30", "--policy", "adapted", "--out", str(out), "--budget-mode", "count"])
    assert code == EXIT_OK
    result = Packing.model_validate_json((out / "mcts.json").read_text())
    assert result.feasible
    assert result.wall_ms == 0


def test_bench_exit_codes(tmp_path):
    """
    SCENARIO: A tiny benchmark, once with a reachable oracle, once without.

    Expected Behavior:
        - 0 when every reference is exact.
        - 3 when some reference had to fall back to the best known value.
    """
    config = tmp_path / "bench.json"
    config.write_text(json.dumps({"mcts_iterations": 20, "instances_per_size": 1, "seeds": 1}))
    args = ["--config", str(config), "--out", str(tmp_path / "bench"), "--budget-mode", "count",
            "bench", "--sizes", "4", "--methods", "A-MCTS"]
    assert main(args) == EXIT_OK
    assert (tmp_path / "bench" / "results.csv").read_text().startswith("# config: ")

    settings.ORACLE_NODE_LIMIT = 1
    assert main(args) == EXIT_ORACLE_WARNINGS


def test_config_errors_exit_with_two(tmp_path):
    missing_checkpoint = ["--out", str(tmp_path), "bench", "--sizes", "4", "--methods", "AM"]
    assert main(missing_checkpoint) == EXIT_CONFIG

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["--config", str(broken), "--out", str(tmp_path), "bench"]) == EXIT_CONFIG

    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps({"seeds": 0}))
    assert main(["--config", str(invalid), "--out", str(tmp_path), "bench"]) == EXIT_CONFIG

    assert main(["--out", str(tmp_path), "solve"]) == EXIT_CONFIG


def test_train_command_writes_a_loadable_checkpoint(tmp_path):
    config = tmp_path / "train.json"
    config.write_text(json.dumps({"epochs": 1, "iterations": 1, "batch_size": 2, "eval_size": 2}))
    out = tmp_path / "model"
    code = main(["--config", str(config), "--out", str(out), "--budget-mode", "count", "train", "--n", "4"])
    assert code == EXIT_OK
    assert (out / "model.ckpt").exists()
    recorded = json.loads((out / "config.json").read_text())
    assert recorded["train"]["epochs"] == 1
    assert recorded["attention"]["d_h"] == 64

    div = tmp_path / "div"
    code = main(["--out", str(div), "diversity", "--checkpoint-a", str(out / "model.ckpt"),
                 "--checkpoint-b", str(out / "epoch_001.ckpt"), "--n", "5", "--rollouts", "20"])
    assert code == EXIT_OK
    assert (div / "diversity.csv").exists()


def test_failures_and_bad_inputs_exit_differently(tmp_path):
    """
    SCENARIO: An unpartitionable pool, then a corrupt checkpoint.

    Expected Behavior:
        - The pool fails the run with exit code 1, not as a configuration error.
        - The truncated checkpoint is a configuration error (exit code 2).
    """
    pool = tmp_path / "pool.jsonl"
    pool.write_text(json.dumps({"members": [0, 1], "value": 1.0}) + "\n")
    args = ["--out", str(tmp_path), "solve", "--pool", str(pool), "--n", "3", "--mode", "partition"]
    assert main(args) == EXIT_FAILED

    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(b"CNCL" + b"\x01\x00\x00\x00" + b"\xf4\x01\x00\x00" + b"{}")
    args = ["--out", str(tmp_path / "gen"), "gen", "--checkpoint", str(broken), "--n", "4", "--rollouts", "5"]
    assert main(args) == EXIT_CONFIG
