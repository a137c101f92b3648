"""
Attention encoder-decoder policy over (pool, partial collective) states.

The action space has n + 1 entries: agent i, or STOP at index n. STOP
carries its own learnable embedding and is masked while the partial
collective is empty; selected and blocked agents are masked too.
"""

from dataclasses import dataclass, field
from typing import Callable, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from app.config import AttentionConfig
from app.domain import Collective, Instance, rules_for, utility
from app.errors import NoActionAvailable, ShapeError
from app.models import RolloutMode
from app.nn import EncoderBlock, Linear, MultiHeadAttention, ParamStore, init_params


@dataclass(frozen=True)
class State:
    """(pool, partial collective); `blocked` agents are committed elsewhere."""

    instance: Instance
    members: Tuple[int, ...] = ()
    blocked: FrozenSet[int] = frozenset()

    def partial(self) -> np.ndarray:
        bits = np.zeros(self.instance.n, dtype=bool)
        bits[list(self.members)] = True
        return bits

    def with_member(self, i: int) -> "State":
        return State(self.instance, tuple(sorted(self.members + (i,))), self.blocked)


@dataclass
class PolicyOutput:
    probs: np.ndarray
    log_probs: np.ndarray
    entropy: float
    mask: np.ndarray


@dataclass
class Encoding:
    h_A: np.ndarray
    cache: tuple = field(repr=False)


@dataclass
class _Step:
    members: Tuple[int, ...]
    action: int
    output: PolicyOutput
    cache: tuple


@dataclass
class Rollout:
    collective: Collective
    actions: List[int]
    step_log_probs: List[float]
    step_entropies: List[float]
    steps: List[_Step] = field(default_factory=list, repr=False)
    encoding: Optional[Encoding] = field(default=None, repr=False)

    @property
    def log_prob(self) -> float:
        return float(sum(self.step_log_probs))

    @property
    def entropy(self) -> float:
        return float(sum(self.step_entropies))


class PolicyModel:
    def __init__(self, config: AttentionConfig, params: Optional[ParamStore] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.embed = Linear(self.params, "embed")
        self.blocks = [
            EncoderBlock(self.params, f"enc{b}", config.heads) for b in range(config.blocks)
        ]
        self.cross = MultiHeadAttention(self.params, "dec.attn", config.heads)

    def clone(self) -> "PolicyModel":
        return PolicyModel(self.config, self.params.copy())

    # --- ENCODER ---

    def encode_pool(self, instance: Instance) -> Encoding:
        x = instance.features
        if x.shape[1] != self.config.d_x:
            raise ShapeError(f"policy expects d_x={self.config.d_x}, instance has {x.shape[1]}")
        h, embed_cache = self.embed.forward(x)
        block_caches = []
        for block in self.blocks:
            h, c = block.forward(h)
            block_caches.append(c)
        return Encoding(h, (embed_cache, block_caches))

    def _encoder_backward(self, encoding: Encoding, dh: np.ndarray):
        embed_cache, block_caches = encoding.cache
        for block, c in zip(reversed(self.blocks), reversed(block_caches)):
            dh = block.backward(c, dh)
        self.embed.backward(embed_cache, dh)

    def encode_collective(self, h_A: np.ndarray, partial: np.ndarray) -> np.ndarray:
        """Mean of member rows, or the learnable placeholder when empty."""
        if partial.shape[0] != h_A.shape[0]:
            raise ShapeError(f"partial has {partial.shape[0]} bits for {h_A.shape[0]} agents")
        if not partial.any():
            return self.params["placeholder"].copy()
        return h_A[partial].mean(axis=0)

    # --- DECODER ---

    def decode_probs(self, h_A: np.ndarray, h_S: np.ndarray, mask: np.ndarray) -> PolicyOutput:
        return self._decode(h_A, h_S, mask)[0]

    def _decode(self, h_A: np.ndarray, h_S: np.ndarray, mask: np.ndarray):
        if mask.all():
            raise NoActionAvailable("every action is masked")
        p = self.params
        d = self.config.d_h
        H = np.vstack([h_A, p["stop"][None, :]])
        kv = np.vstack([h_S[None, :], H])
        h_prime, attn_cache = self.cross.forward(H, kv)

        q = h_S @ p["dec.query"]
        k = h_prime @ p["dec.key"]
        u = (k @ q) / np.sqrt(d)
        t = np.tanh(u)
        z = np.where(mask, -np.inf, self.config.gamma * t)
        top = z.max()
        log_probs = z - (top + np.log(np.exp(z - top).sum()))
        probs = np.exp(log_probs)
        open_ = ~mask
        entropy = float(-(probs[open_] * log_probs[open_]).sum())

        out = PolicyOutput(probs, log_probs, entropy, mask)
        return out, (h_A, h_S, h_prime, attn_cache, q, k, t)

    def _decoder_backward(self, cache, dz: np.ndarray):
        """Returns (d h_A, d h_S) given d logits (zero on masked entries)."""
        h_A, h_S, h_prime, attn_cache, q, k, t = cache
        p, g = self.params, self.params.grads
        scale = 1.0 / np.sqrt(self.config.d_h)
        n = h_A.shape[0]

        du = dz * self.config.gamma * (1.0 - t * t)
        dq = (du @ k) * scale
        dk = np.outer(du, q) * scale
        g["dec.query"] += np.outer(h_S, dq)
        dh_S = p["dec.query"] @ dq
        g["dec.key"] += h_prime.T @ dk
        dh_prime = dk @ p["dec.key"].T

        dH, dkv = self.cross.backward(attn_cache, dh_prime)
        dH = dH + dkv[1:]
        dh_S = dh_S + dkv[0]
        g["stop"] += dH[n]
        return dH[:n], dh_S

    # --- ROLLOUTS ---

    def action_mask(self, state: State) -> np.ndarray:
        mask = np.zeros(state.instance.n + 1, dtype=bool)
        mask[list(state.members)] = True
        mask[list(state.blocked)] = True
        mask[-1] = not state.members
        return mask

    def rollout(
        self,
        instance: Instance,
        start: Optional[State] = None,
        mode: RolloutMode = RolloutMode.GREEDY,
        rng: Optional[np.random.Generator] = None,
        encoding: Optional[Encoding] = None,
        keep_trace: bool = False,
    ) -> Rollout:
        """Builds one collective, stopping on STOP or at the cardinality cap."""
        if mode == RolloutMode.SAMPLE:
            if rng is None:
                raise ValueError("sample mode needs a random generator")
            chooser = lambda out: _sample(out.probs, rng)
        else:
            chooser = lambda out: int(np.argmax(out.probs))
        return self._run(instance, start, chooser, encoding, keep_trace)

    def replay(
        self,
        instance: Instance,
        actions: Sequence[int],
        start: Optional[State] = None,
        keep_trace: bool = True,
    ) -> Rollout:
        """Re-evaluates a fixed action sequence."""
        forced = iter(actions)
        return self._run(instance, start, lambda out: next(forced), None, keep_trace)

    def _run(
        self,
        instance: Instance,
        start: Optional[State],
        chooser: Callable[[PolicyOutput], int],
        encoding: Optional[Encoding],
        keep_trace: bool,
    ) -> Rollout:
        state = start or State(instance)
        encoding = encoding or self.encode_pool(instance)
        cap = rules_for(instance.domain).max_cardinality
        n = instance.n

        actions, log_probs, entropies, steps = [], [], [], []
        while len(state.members) < cap:
            mask = self.action_mask(state)
            partial = state.partial()
            h_S = self.encode_collective(encoding.h_A, partial)
            out, cache = self._decode(encoding.h_A, h_S, mask)
            a = chooser(out)
            actions.append(a)
            log_probs.append(float(out.log_probs[a]))
            entropies.append(out.entropy)
            if keep_trace:
                steps.append(_Step(state.members, a, out, cache))
            if a == n:
                break
            state = state.with_member(a)

        collective = Collective(state.members, utility(instance, state.members))
        return Rollout(
            collective,
            actions,
            log_probs,
            entropies,
            steps,
            encoding if keep_trace else None,
        )

    def backward(self, rollout: Rollout, coef_log_prob: float, coef_entropy: float):
        """
        Accumulates d/dθ [coef_log_prob * Σ log π(a_t) + coef_entropy * Σ H_t]
        for a rollout recorded with keep_trace=True.
        """
        if rollout.encoding is None:
            raise ValueError("rollout was recorded without a trace")
        h_A = rollout.encoding.h_A
        dh_A = np.zeros_like(h_A)
        for step in rollout.steps:
            out = step.output
            open_ = ~out.mask
            lp = np.where(open_, out.log_probs, 0.0)
            p = out.probs
            dz = np.zeros_like(p)
            if coef_log_prob:
                dz -= coef_log_prob * p
                dz[step.action] += coef_log_prob
            if coef_entropy:
                dz -= coef_entropy * p * (lp + out.entropy)
            dz[~open_] = 0.0

            dA, dS = self._decoder_backward(step.cache, dz)
            dh_A += dA
            if step.members:
                dh_A[list(step.members)] += dS / len(step.members)
            else:
                self.params.grads["placeholder"] += dS
        self._encoder_backward(rollout.encoding, dh_A)


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    if i >= len(probs) or probs[i] == 0.0:
        # float edge at the top of the cdf
        i = int(np.flatnonzero(probs > 0.0)[-1])
    return i


def greedy_packing(model: PolicyModel, instance: Instance, encoding: Optional[Encoding] = None):
    """
    Packs the whole pool: greedy rollouts from an empty partial with every
    already-packed agent blocked, until nobody is left.
    Returns (collectives, total value).
    """
    encoding = encoding or model.encode_pool(instance)
    blocked: FrozenSet[int] = frozenset()
    collectives = []
    while len(blocked) < instance.n:
        r = model.rollout(instance, State(instance, (), blocked), RolloutMode.GREEDY, encoding=encoding)
        collectives.append(r.collective)
        blocked = blocked | frozenset(r.collective.members)
    return collectives, float(sum(c.value for c in collectives))
