"""
Monte Carlo tree search baselines over collective-formation decisions.

A decision either adds an uncommitted agent to the open collective or
closes it (action index n). The episode ends when every agent is committed.
Tree edges always respect the cardinality cap; rollouts follow one of three
policies:
- GREEDY: best immediate value increment, ties to the lowest index;
- ADAPTED: uniform over actions that keep the open collective feasible;
- RANDOM: uniform over every syntactically available action, including
  adds past the cap, which dead-end the rollout.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from app.config import MctsConfig, settings
from app.domain import Instance, rules_for, utility
from app.errors import RolloutFailed
from app.models import BudgetMode, Packing, RolloutPolicy

logger = logging.getLogger("conclave")


@dataclass(frozen=True)
class FormationState:
    instance: Instance
    committed: int = 0  # bitmask of agents in closed (or dropped) collectives
    partial: Tuple[int, ...] = ()
    closed: Tuple[Tuple[int, ...], ...] = ()
    value: float = 0.0
    partial_value: float = 0.0

    @property
    def close_action(self) -> int:
        return self.instance.n

    @property
    def cap(self) -> int:
        return rules_for(self.instance.domain).max_cardinality

    def is_terminal(self) -> bool:
        return not self.partial and self.committed == (1 << self.instance.n) - 1

    def open_agents(self) -> List[int]:
        taken = self.committed
        for i in self.partial:
            taken |= 1 << i
        return [i for i in range(self.instance.n) if not taken >> i & 1]

    def syntactic_actions(self) -> List[int]:
        actions = self.open_agents()
        if self.partial:
            actions.append(self.close_action)
        return actions

    def feasible_actions(self) -> List[int]:
        actions = self.open_agents() if len(self.partial) < self.cap else []
        if self.partial:
            actions.append(self.close_action)
        return actions

    def gain(self, action: int) -> float:
        """Immediate value increment of an action; closing adds nothing new."""
        if action == self.close_action:
            return 0.0
        return utility(self.instance, self.partial + (action,)) - self.partial_value

    def apply(self, action: int) -> "FormationState":
        if action == self.close_action:
            mask = 0
            for i in self.partial:
                mask |= 1 << i
            return FormationState(
                self.instance,
                self.committed | mask,
                (),
                self.closed + (tuple(sorted(self.partial)),),
                self.value + self.partial_value,
                0.0,
            )
        partial = tuple(sorted(self.partial + (action,)))
        return FormationState(
            self.instance,
            self.committed,
            partial,
            self.closed,
            self.value,
            utility(self.instance, partial),
        )

    def drop_partial(self) -> "FormationState":
        """Leaves the open agents uncovered (packing mode only)."""
        mask = 0
        for i in self.partial:
            mask |= 1 << i
        return FormationState(self.instance, self.committed | mask, (), self.closed, self.value, 0.0)


def rollout_policy_step(state: FormationState, policy: RolloutPolicy, rng: np.random.Generator) -> int:
    """Picks the next rollout action; raises RolloutFailed on a dead end."""
    if policy == RolloutPolicy.RANDOM:
        actions = state.syntactic_actions()
        if not actions:
            raise RolloutFailed("no action available")
        action = actions[int(rng.integers(len(actions)))]
        if action != state.close_action and len(state.partial) >= state.cap:
            raise RolloutFailed(f"adding agent {action} overflows the cap of {state.cap}")
        return action

    actions = state.feasible_actions()
    if not actions:
        raise RolloutFailed("no feasible action available")
    if policy == RolloutPolicy.ADAPTED:
        return actions[int(rng.integers(len(actions)))]

    # GREEDY: max gain, ties to the lowest action index (close is index n)
    best, best_gain = actions[0], -math.inf
    for a in sorted(actions):
        g = state.gain(a)
        if g > best_gain:
            best, best_gain = a, g
    return best


def simulate(state: FormationState, policy: RolloutPolicy, rng: np.random.Generator) -> Optional[FormationState]:
    """Plays to a terminal state; None when a partition-mode rollout dead-ends."""
    partition = rules_for(state.instance.domain).partition_required
    while not state.is_terminal():
        try:
            action = rollout_policy_step(state, policy, rng)
        except RolloutFailed:
            if partition:
                return None
            state = state.drop_partial()
            continue
        state = state.apply(action)
    return state


@dataclass
class SearchNode:
    state: FormationState
    parent: Optional["SearchNode"] = None
    untried: List[int] = field(default_factory=list)
    children: Dict[int, "SearchNode"] = field(default_factory=dict)
    visits: int = 0
    raw_sum: float = 0.0  # sum of feasible rollout values
    feasible_visits: int = 0

    def mean_reward(self, lo: float, hi: float) -> float:
        """Mean reward normalised to [0, 1] by the value range seen so far."""
        if self.visits == 0 or self.feasible_visits == 0:
            return 0.0
        mean_raw = self.raw_sum / self.feasible_visits
        span = hi - lo
        scaled = 1.0 if span <= 0 else (mean_raw - lo) / span
        return scaled * self.feasible_visits / self.visits


def ucb_select(node: SearchNode, c: float, lo: float, hi: float) -> SearchNode:
    """UCB1 over expanded children; ties go to the lowest action index."""
    log_n = math.log(max(node.visits, 1))
    best, best_score = None, -math.inf
    for action in sorted(node.children):
        child = node.children[action]
        explore = c * math.sqrt(log_n / child.visits) if child.visits else math.inf
        score = child.mean_reward(lo, hi) + explore
        if score > best_score:
            best, best_score = child, score
    return best


def mcts_search(instance: Instance, config: MctsConfig) -> Packing:
    """UCT until the budget expires; returns the best complete packing ever simulated."""
    started = time.monotonic()
    rng = np.random.default_rng(config.seed)
    root_state = FormationState(instance)
    root = SearchNode(root_state, untried=root_state.feasible_actions())
    deadline = None if config.seconds is None or config.iterations is not None else started + config.seconds

    best_state: Optional[FormationState] = None
    lo, hi = math.inf, -math.inf

    def record(final: Optional[FormationState]):
        nonlocal best_state, lo, hi
        if final is None:
            return
        lo, hi = min(lo, final.value), max(hi, final.value)
        if best_state is None or final.value > best_state.value:
            best_state = final

    # Incumbent from one rollout at the root, even with a zero budget
    record(simulate(root_state, config.policy, rng))

    iterations = 0
    while True:
        if config.iterations is not None and iterations >= config.iterations:
            break
        if deadline is not None and time.monotonic() >= deadline:
            break
        iterations += 1

        # 1. Selection
        node = root
        while not node.untried and node.children and not node.state.is_terminal():
            node = ucb_select(node, config.exploration, lo, hi)

        # 2. Expansion
        if node.untried and not node.state.is_terminal():
            action = node.untried.pop(0)
            child_state = node.state.apply(action)
            child = SearchNode(child_state, parent=node, untried=child_state.feasible_actions())
            node.children[action] = child
            node = child

        # 3. Simulation
        final = simulate(node.state, config.policy, rng)
        record(final)

        # 4. Backpropagation
        while node is not None:
            node.visits += 1
            if final is not None:
                node.raw_sum += final.value
                node.feasible_visits += 1
            node = node.parent

    if best_state is None:
        logger.warning(f"{config.policy.value} MCTS found no feasible packing in {iterations} iterations")
    else:
        logger.debug(f"{config.policy.value} MCTS: {iterations} iterations, best {best_state.value:.4f}")

    return _to_packing(best_state, iterations, started)


def _to_packing(state: Optional[FormationState], iterations: int, started: float) -> Packing:
    wall_ms = 0 if settings.BUDGET_MODE == BudgetMode.COUNT else int((time.monotonic() - started) * 1000)
    if state is None:
        return Packing(total=-math.inf, feasible=False, nodes_expanded=iterations, wall_ms=wall_ms)
    return Packing(
        chosen_members=[list(m) for m in state.closed],
        total=math.fsum(utility(state.instance, m) for m in state.closed),
        proven_optimal=False,
        feasible=True,
        nodes_expanded=iterations,
        wall_ms=wall_ms,
    )
