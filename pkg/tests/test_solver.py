import itertools

import numpy as np
import pytest

from tests.conftest import slow

from app.config import settings
from app.domain import enumerate_feasible, generate_instance
from app.errors import EnumerationTooLarge, Infeasible, InvalidArgument
from app.models import BudgetMode, Domain, WspMode
from app.solver import WspInstance, greedy_incumbent, solve_bnb, solve_bruteforce, solve_exact


def random_wsp(rng, max_n=10, max_sets=40, mode=WspMode.PACKING) -> WspInstance:
    n = int(rng.integers(2, max_n + 1))
    sets = []
    for _ in range(int(rng.integers(1, max_sets + 1))):
        size = int(rng.integers(1, min(4, n) + 1))
        members = rng.choice(n, size=size, replace=False)
        sets.append((members, float(rng.normal(1.0, 1.5))))
    if mode == WspMode.PARTITION and rng.random() < 0.7:
        sets += [([i], float(rng.normal(0.0, 1.0))) for i in range(n)]
    return WspInstance.from_sets(n, sets, mode)


def assert_agree(inst: WspInstance):
    try:
        oracle = solve_bruteforce(inst)
    except Infeasible:
        with pytest.raises(Infeasible):
            solve_bnb(inst)
        return
    bnb = solve_bnb(inst)
    assert bnb.proven_optimal
    assert bnb.total == oracle.total
    assert bnb.chosen == oracle.chosen
    used = [i for j in bnb.chosen for i in inst.members[j]]
    assert len(used) == len(set(used))
    if inst.mode == WspMode.PARTITION:
        assert sorted(used) == list(range(inst.n))


def test_greedy_is_beaten_by_the_exact_solver():
    """
    SCENARIO: {0,1}:3, {1,2}:3, {0}:2, {2}:2 in packing mode.

    Expected Behavior:
        - Greedy takes the two singletons by weight per member: total 4.
        - Branch-and-bound finds 5; of the two optimal packings the
          lexicographically smaller index list [0, 3] wins.
    """
    inst = WspInstance.from_sets(3, [([0, 1], 3.0), ([1, 2], 3.0), ([0], 2.0), ([2], 2.0)])
    greedy = greedy_incumbent(inst)
    assert greedy.total == 4.0
    assert greedy.chosen == [2, 3]

    best = solve_bnb(inst)
    assert best.total == 5.0
    assert best.chosen == [0, 3]
    assert best.chosen_members == [[0, 1], [2]]
    assert best.proven_optimal
    assert solve_bruteforce(inst).chosen == [0, 3]


@pytest.mark.parametrize("mode", [WspMode.PACKING, WspMode.PARTITION])
def test_bnb_matches_brute_force(mode):
    """
    SCENARIO: 150 seeded random instances per mode (n <= 10, <= 40 sets).

    Expected Behavior:
        - Identical optimal totals, disjoint choices, full cover in partition mode.
        - Infeasible partitions raise in both solvers.
    """
    rng = np.random.default_rng(2024 if mode == WspMode.PACKING else 2025)
    for _ in range(150):
        assert_agree(random_wsp(rng, mode=mode))


@slow
def test_bnb_matches_brute_force_full_sweep():
    rng = np.random.default_rng(7)
    for k in range(500):
        mode = WspMode.PACKING if k % 2 else WspMode.PARTITION
        assert_agree(random_wsp(rng, max_n=10, max_sets=300, mode=mode))


def test_packing_skips_nonpositive_sets():
    inst = WspInstance.from_sets(3, [([0], -1.0), ([1], 0.0), ([2], 2.0)])
    result = solve_bnb(inst)
    assert result.chosen == [2]
    assert result.total == 2.0


def test_empty_packing_is_worth_zero():
    inst = WspInstance.from_sets(2, [([0], -1.0), ([0, 1], -3.0)])
    result = solve_bnb(inst)
    assert result.chosen == []
    assert result.total == 0.0


def test_partition_accepts_negative_weights():
    inst = WspInstance.from_sets(
        3, [([0], -1.0), ([1], -1.0), ([2], -1.0), ([0, 1, 2], -2.5)], WspMode.PARTITION
    )
    result = solve_bnb(inst)
    assert result.chosen == [3]
    assert result.total == -2.5


def test_partition_without_cover_is_infeasible():
    inst = WspInstance.from_sets(3, [([0, 1], 1.0)], WspMode.PARTITION)
    with pytest.raises(Infeasible):
        solve_bnb(inst)
    with pytest.raises(Infeasible):
        greedy_incumbent(inst)


def test_partition_with_cover_but_no_exact_partition():
    inst = WspInstance.from_sets(3, [([0, 1], 1.0), ([1, 2], 1.0)], WspMode.PARTITION)
    with pytest.raises(Infeasible):
        solve_bnb(inst)
    with pytest.raises(Infeasible):
        solve_bruteforce(inst)


def test_node_limit_returns_the_incumbent(caplog):
    """
    SCENARIO: A budget of a single search node.

    Expected Behavior:
        - The greedy incumbent comes back, flagged as not proven optimal.
        - The expiry is logged as a warning.
    """
    inst = WspInstance.from_sets(3, [([0, 1], 3.0), ([1, 2], 3.0), ([0], 2.0), ([2], 2.0)])
    with caplog.at_level("WARNING", logger="conclave"):
        result = solve_bnb(inst, node_limit=1)
    assert not result.proven_optimal
    assert result.total == 4.0
    assert "budget expired" in caplog.text


def test_count_mode_zeroes_wall_time():
    settings.BUDGET_MODE = BudgetMode.COUNT
    inst = random_wsp(np.random.default_rng(1))
    assert solve_bnb(inst).wall_ms == 0


def test_bad_sets_are_rejected():
    with pytest.raises(InvalidArgument):
        WspInstance.from_sets(2, [([0, 2], 1.0)])
    with pytest.raises(InvalidArgument):
        WspInstance.from_sets(2, [([], 1.0)])
    with pytest.raises(InvalidArgument):
        WspInstance.from_sets(2, [([0], float("nan"))])


def test_brute_force_node_limit():
    inst = WspInstance.from_sets(8, [([i], 1.0) for i in range(8)])
    with pytest.raises(EnumerationTooLarge):
        solve_bruteforce(inst, node_limit=10)


@pytest.mark.parametrize("domain,n", [(Domain.RIDESHARING, 6), (Domain.TEAM_FORMATION, 6)])
def test_solve_exact_matches_enumeration(domain, n):
    """
    SCENARIO: Exact optimum over every feasible collective of a small pool.

    Expected Behavior:
        - Equal to the brute-force oracle on the same set list.
        - Team formation returns a full partition into teams of at most 3.
    """
    inst = generate_instance(domain, n, 13)
    exact = solve_exact(inst)
    mode = WspMode.PARTITION if domain == Domain.TEAM_FORMATION else WspMode.PACKING
    oracle = solve_bruteforce(WspInstance.from_collectives(n, enumerate_feasible(inst), mode))
    assert exact.total == oracle.total
    assert exact.proven_optimal
    if domain == Domain.TEAM_FORMATION:
        members = sorted(itertools.chain.from_iterable(exact.chosen_members))
        assert members == list(range(n))
        assert all(len(m) <= 3 for m in exact.chosen_members)


def test_zero_value_singletons_do_not_change_the_chosen_sets():
    """
    SCENARIO: A ridesharing-style pool: worthless singletons first, then one pair.

    Expected Behavior:
        - Both solvers pick only the pair; zero-value sets are never chosen
          in packing mode.
    """
    inst = WspInstance.from_sets(3, [([0], 0.0), ([1], 0.0), ([2], 0.0), ([1, 2], 1.5)])
    for packing in (solve_bnb(inst), solve_bruteforce(inst)):
        assert packing.chosen == [3]
        assert packing.total == 1.5


@pytest.mark.parametrize("mode", [WspMode.PACKING, WspMode.PARTITION])
def test_scaling_weights_keeps_the_argmax(mode):
    rng = np.random.default_rng(21)
    for _ in range(100):
        inst = random_wsp(rng, max_n=8, max_sets=25, mode=mode)
        c = float(rng.uniform(0.1, 10.0))
        scaled = WspInstance(inst.n, inst.members, tuple(c * w for w in inst.weights), inst.mode)
        try:
            original = solve_bnb(inst)
        except Infeasible:
            continue
        rescaled = solve_bnb(scaled)
        assert rescaled.total == pytest.approx(c * original.total, rel=1e-9, abs=1e-12)
        assert rescaled.chosen == original.chosen


@pytest.mark.parametrize("mode", [WspMode.PACKING, WspMode.PARTITION])
def test_greedy_never_beats_the_optimum(mode):
    rng = np.random.default_rng(22)
    for _ in range(200):
        inst = random_wsp(rng, max_n=8, max_sets=25, mode=mode)
        try:
            optimum = solve_bruteforce(inst)
        except Infeasible:
            continue
        try:
            greedy = greedy_incumbent(inst)
        except Infeasible:
            continue
        assert greedy.total <= optimum.total + 1e-9
