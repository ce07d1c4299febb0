"""Semantic-guided best-first search over token sequences.

Each iteration selects a promising partial patch by a policy over
``(Q, N, prior)``, expands it with the model's top-k next tokens, completes it
greedily into a full patch, scores that patch against the test suite, and
pushes the reward up to the root with a running max. Model queries go
through a prefix-keyed cache of top-k results, and rewards are memoized per
complete token sequence.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .costmodel import MemoryModelParams, Meter
from .decode import DEFAULT_ALPHA, DecodeConfig, charge_batched_forward, greedy_decode
from .errors import PrefixTerminal, SimulatedOOM
from .model import TokenDist, TokenModel, top_k
from .reward import EXPR_VOCAB, Bug, RewardReport, Spec, evaluate_reward


class Policy(enum.Enum):
    UCB = "ucb"
    PUCB_FIXED = "pucb-fixed"
    PUCB_VAR = "pucb-var"

    @property
    def code(self) -> int:
        return {Policy.UCB: _kernels.UCB, Policy.PUCB_FIXED: _kernels.PUCB_FIXED,
                Policy.PUCB_VAR: _kernels.PUCB_VAR}[self]


@dataclass(frozen=True)
class SearchConfig:
    expansion_k: int = 10
    policy: Policy = Policy.PUCB_VAR
    c_ucb: float = 1.414
    c_puct: float = 4.0
    c_base: float = 10.0
    c_init: float = 4.0
    max_patches: int = 200
    timeout: float = 60.0
    max_sim_tokens: int = 8
    stop_on_plausible: bool = True
    use_cache: bool = True
    memory_cap: int | None = None
    alpha: int = DEFAULT_ALPHA

    def __post_init__(self):
        if self.expansion_k < 1:
            raise ValueError("expansion_k must be >= 1")
        if self.max_patches < 1:
            raise ValueError("max_patches must be >= 1")
        if self.max_sim_tokens < 1:
            raise ValueError("max_sim_tokens must be >= 1")
        if not isinstance(self.policy, Policy):
            object.__setattr__(self, "policy", Policy(self.policy))


@dataclass(eq=False)
class SearchNode:
    state: tuple[int, ...]
    prior: float = 1.0
    parent: SearchNode | None = field(default=None, repr=False)
    q_value: float = 0.0
    visits: int = 0
    children: dict[int, SearchNode] = field(default_factory=dict, repr=False)
    expanded: bool = False
    is_terminal: bool = False
    exhausted: bool = False

    def path(self) -> list[SearchNode]:
        """Nodes from the root down to this one."""
        out = []
        node = self
        while node is not None:
            out.append(node)
            node = node.parent
        return out[::-1]


@dataclass(frozen=True)
class PatchCandidate:
    tokens: tuple[int, ...]
    reward: float
    iteration: int
    source: str = "flames"
    complete: bool = True
    error: str | None = None


@dataclass
class SearchReport:
    iterations: int = 0
    distinct_patches: int = 0
    forward_calls: int = 0
    cache_hits: int = 0
    reward_evaluations: int = 0
    wall_ms: float = 0.0
    peak_bytes: int = 0
    oom: bool = False
    stop_reason: str = ""
    best_reward: float = 0.0
    first_plausible_iteration: int | None = None
    first_plausible_ms: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def policy_score(policy: Policy, node_q: float, node_n: int, node_p: float, parent_n: int,
                 config: SearchConfig) -> float:
    """Score of one child; see :func:`_kernels.policy_scores` for the vector form.

    UCB: ``Q + c_ucb * sqrt(ln(N_parent) / N)`` (infinite when unvisited).
    Fixed P-UCB: ``Q + c_puct * P * sqrt(N_parent) / (1 + N)``.
    Variable P-UCB replaces ``c_puct`` by ``log((N_parent + c_base + 1) / c_base) + c_init``.
    """
    policy = Policy(policy)
    return float(_kernels.policy_scores(policy.code, [node_q], [node_n], [node_p], parent_n,
                                        config.c_ucb, config.c_puct, config.c_base, config.c_init)[0])


class TopKCache:
    """Prefix-keyed memo of truncated next-token distributions.

    Safe to share between searches over the same model and ``k``.
    """

    def __init__(self):
        self._store: dict[tuple[int, ...], TokenDist] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def get(self, prefix):
        with self._lock:
            return self._store.get(prefix)

    def put(self, prefix, dist):
        with self._lock:
            self._store[prefix] = dist


def cached_top_k(cache: TopKCache | None, model: TokenModel, prefix: Sequence[int], k: int) -> TokenDist:
    prefix = tuple(prefix)
    if cache is not None:
        hit = cache.get(prefix)
        if hit is not None:
            model.stats.add_hit()
            return hit
    dist = top_k(model.next_dist(prefix), k)
    if cache is not None:
        cache.put(prefix, dist)
    return dist


class CachedView:
    """Presents ``cached_top_k`` as a model so the greedy decoder can use it."""

    def __init__(self, model: TokenModel, cache: TopKCache | None, k: int):
        self.model = model
        self.vocab = model.vocab
        self.cache = cache
        self.k = k

    def next_dist(self, prefix):
        return cached_top_k(self.cache, self.model, prefix, self.k)


def select(tree: SearchNode, config: SearchConfig) -> SearchNode:
    """Descend by best policy score until an unexpanded or terminal node.

    Exhausted subtrees are skipped; ties go to the smallest token id.
    """
    node = tree
    code = config.policy.code
    while node.expanded and not node.is_terminal:
        live = [c for c in node.children.values() if not c.exhausted]
        if not live:
            break
        scores = _kernels.policy_scores(
            code,
            [c.q_value for c in live],
            [c.visits for c in live],
            [c.prior for c in live],
            node.visits,
            config.c_ucb, config.c_puct, config.c_base, config.c_init,
        )
        node = live[int(np.argmax(scores))]
    return node


def _depth(node: SearchNode) -> int:
    return len(node.state) - 1


def expand(node: SearchNode, model: TokenModel, config: SearchConfig, cache: TopKCache | None = None,
           meter: Meter | None = None):
    """Attach the top-k next tokens as children, priors untouched.

    Zero-probability tokens are not attached. A node already at the length
    limit is marked expanded with no children.
    """
    if node.is_terminal:
        raise PrefixTerminal(f"cannot expand complete patch {node.state}")
    if node.expanded:
        return
    node.expanded = True
    if _depth(node) >= config.max_sim_tokens:
        return
    if cache is None or cache.get(node.state) is None:
        if meter is not None:
            charge_batched_forward(meter, _greedy_params(model, config))
    dist = cached_top_k(cache, model, node.state, config.expansion_k)
    terminals = model.vocab.terminal_ids
    for tok, p in sorted(dist.entries):
        if p <= 0:
            continue
        node.children[tok] = SearchNode(node.state + (tok,), prior=p, parent=node, is_terminal=tok in terminals)


def _greedy_params(model: TokenModel, config: SearchConfig) -> MemoryModelParams:
    return MemoryModelParams(config.alpha, 1, 1, config.max_sim_tokens, len(model.vocab))


def backprop(tree: SearchNode, leaf: SearchNode, reward: float):
    """``Q <- max(Q, reward)`` and ``N <- N + 1`` from ``leaf`` up to the root."""
    node = leaf
    while node is not None:
        node.q_value = max(node.q_value, reward)
        node.visits += 1
        if node is tree:
            break
        node = node.parent


def _refresh_exhausted(node: SearchNode):
    while node is not None:
        if node.is_terminal:
            node.exhausted = node.visits > 0
        else:
            node.exhausted = node.expanded and all(c.exhausted for c in node.children.values())
        node = node.parent


def _score(tokens: tuple[int, ...], complete: bool, reward_fn, memo: dict | None, iteration: int) -> PatchCandidate:
    if not complete:
        return PatchCandidate(tokens, 0.0, iteration, complete=False)
    if memo is not None and tokens in memo:
        return memo[tokens]
    error = None
    try:
        result = reward_fn(tokens)
        reward = float(result.reward if hasattr(result, "reward") else result)
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward {reward} outside [0, 1]")
    except Exception as exc:  # harness failures count as a failed patch
        reward, error = 0.0, f"{type(exc).__name__}: {exc}"
    cand = PatchCandidate(tokens, reward, iteration, error=error)
    if memo is not None:
        memo[tokens] = cand
    return cand


def simulate(node: SearchNode, model: TokenModel, reward_fn, config: SearchConfig,
             cache: TopKCache | None = None, memo: dict | None = None, meter: Meter | None = None,
             iteration: int = 0) -> PatchCandidate:
    """Complete ``node`` greedily and score the result.

    A terminal node is scored as is. Rollouts that hit the length limit
    without a terminal token get reward 0 and are not sent to ``reward_fn``.
    With a ``memo`` dict, each complete patch is scored at most once.
    """
    remaining = config.max_sim_tokens - _depth(node)
    if node.is_terminal or remaining <= 0:
        tokens, complete = node.state, node.is_terminal
    else:
        view = CachedView(model, cache, config.expansion_k)
        dcfg = DecodeConfig(max_new_tokens=remaining, memory_cap=config.memory_cap, alpha=config.alpha)
        seq = greedy_decode(view, node.state, dcfg, meter=meter)
        tokens, complete = seq.tokens, seq.complete
    return _score(tokens, complete, reward_fn, memo, iteration)


class FlamesSearch:
    """One search over one bug. Owns its tree; the cache may be shared."""

    def __init__(self, model: TokenModel, reward_fn: Callable[[tuple[int, ...]], RewardReport | float],
                 config: SearchConfig, prefix: Sequence[int] | None = None, cache: TopKCache | None = None):
        self.model = model
        self.reward_fn = reward_fn
        self.config = config
        self.vocab = model.vocab
        self.root = SearchNode(tuple(prefix) if prefix is not None else (model.vocab.sos_id,))
        self.cache = (cache if cache is not None else TopKCache()) if config.use_cache else None
        self.meter = Meter(cap=config.memory_cap)
        self.memo: dict[tuple[int, ...], PatchCandidate] = {}
        self.reward_calls = 0
        self.iteration = 0
        self.selected: list[tuple[int, ...]] = []

    # the four phases -------------------------------------------------

    def select(self) -> SearchNode:
        return select(self.root, self.config)

    def expand(self, node: SearchNode):
        expand(node, self.model, self.config, self.cache, self.meter)

    def simulate(self, node: SearchNode) -> PatchCandidate:
        return simulate(node, self.model, self._counted_reward, self.config, self.cache, self.memo,
                        self.meter, self.iteration)

    def backprop(self, leaf: SearchNode, reward: float):
        backprop(self.root, leaf, reward)

    def _counted_reward(self, tokens):
        self.reward_calls += 1
        return self.reward_fn(tokens)

    def step(self) -> PatchCandidate:
        self.iteration += 1
        node = self.select()
        self.selected.append(node.state)
        if not node.is_terminal and not node.expanded:
            self.expand(node)
        cand = self.simulate(node)
        self.backprop(node, cand.reward)
        _refresh_exhausted(node)
        return cand

    def run(self) -> tuple[list[PatchCandidate], SearchReport]:
        cfg = self.config
        report = SearchReport()
        stats0 = self.model.stats.snapshot()
        start = time.monotonic()
        seen: dict[tuple[int, ...], PatchCandidate] = {}
        try:
            while True:
                if time.monotonic() - start >= cfg.timeout:
                    report.stop_reason = "timeout"
                    break
                if self.root.exhausted:
                    report.stop_reason = "exhausted"
                    break
                cand = self.step()
                if cand.complete and cand.tokens not in seen:
                    seen[cand.tokens] = cand
                    if cand.reward >= 1.0 and report.first_plausible_iteration is None:
                        report.first_plausible_iteration = self.iteration
                        report.first_plausible_ms = (time.monotonic() - start) * 1000.0
                if cfg.stop_on_plausible and report.first_plausible_iteration is not None:
                    report.stop_reason = "plausible"
                    break
                if len(seen) >= cfg.max_patches:
                    report.stop_reason = "max_patches"
                    break
        except SimulatedOOM:
            report.oom = True
            report.stop_reason = "oom"
        stats1 = self.model.stats.snapshot()
        report.iterations = self.iteration
        report.distinct_patches = len(seen)
        report.forward_calls = stats1["forward_calls"] - stats0["forward_calls"]
        report.cache_hits = stats1["cache_hits"] - stats0["cache_hits"]
        report.reward_evaluations = self.reward_calls
        report.wall_ms = (time.monotonic() - start) * 1000.0
        report.peak_bytes = self.meter.read().peak
        candidates = sorted(seen.values(), key=lambda c: (-c.reward, c.iteration))
        report.best_reward = candidates[0].reward if candidates else 0.0
        return candidates, report


def flames_search(model: TokenModel, bug: Bug, spec: Spec, config: SearchConfig,
                  cache: TopKCache | None = None, vocab=None) -> tuple[list[PatchCandidate], SearchReport]:
    vocab = vocab or EXPR_VOCAB
    search = FlamesSearch(model, lambda toks: evaluate_reward(toks, spec, vocab), config,
                          prefix=bug.prompt_tokens, cache=cache)
    return search.run()
