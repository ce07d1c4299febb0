"""Baseline decoders: greedy, batched beam search, sequential beam search, sampling.

Every decoder charges a :class:`~flames.costmodel.Meter` once per decoding
step. Batched beam search charges ``k * alpha`` for the batched forward plus
one ``k * beta`` output buffer; the sequential variant charges the output
buffer twice (per-sub-batch stack and the stacked result) and one ``alpha``
per sub-batch forward, released before the next. Greedy decoding is batched
beam search with ``k = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .costmodel import MemoryModelParams, Meter
from .model import TokenModel

DEFAULT_ALPHA = 1000


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 1
    max_new_tokens: int = 16
    temperature: float = 1.0
    rng_seed: int = 0
    memory_cap: int | None = None
    alpha: int = DEFAULT_ALPHA

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")

    def memory_params(self, n_in: int, v: int, k: int | None = None) -> MemoryModelParams:
        return MemoryModelParams(self.alpha, self.beam_size if k is None else k, n_in, self.max_new_tokens, v)


@dataclass(frozen=True)
class ScoredSequence:
    tokens: tuple[int, ...]
    logprob: float
    complete: bool


def _meter(config: DecodeConfig, meter: Meter | None) -> Meter:
    return Meter(cap=config.memory_cap) if meter is None else meter


def charge_batched_forward(meter: Meter, params: MemoryModelParams):
    """One batched step-2: ``k`` forwards in parallel plus one output buffer."""
    forward = params.k * params.alpha
    output = params.k * params.beta
    meter.charge_checked(forward)
    meter.charge_checked(output)
    meter.release(output)
    meter.release(forward)
    meter.end_step()


def _charge_sequential_forward(meter: Meter, params: MemoryModelParams):
    buffers = 2 * params.k * params.beta
    meter.charge_checked(buffers)
    for _ in range(params.k):
        meter.charge_checked(params.alpha)
        meter.release(params.alpha)
    meter.release(buffers)
    meter.end_step()


def _log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


def score_sequence(model: TokenModel, tokens: Sequence[int], n_prefix: int) -> float:
    """Cumulative log-probability of ``tokens[n_prefix:]`` given what precedes each."""
    tokens = tuple(tokens)
    total = 0.0
    for i in range(n_prefix, len(tokens)):
        total += _log(model.next_dist(tokens[:i]).prob(tokens[i]))
    return total


def greedy_decode(model: TokenModel, prefix: Sequence[int], config: DecodeConfig,
                  meter: Meter | None = None) -> ScoredSequence:
    meter = _meter(config, meter)
    seq = tuple(prefix)
    terminals = model.vocab.terminal_ids
    if seq and seq[-1] in terminals:
        return ScoredSequence(seq, 0.0, True)
    params = config.memory_params(len(seq), len(model.vocab), k=1)
    logprob = 0.0
    for _ in range(config.max_new_tokens):
        charge_batched_forward(meter, params)
        dist = model.next_dist(seq)
        tok = dist.ids[0]
        logprob += _log(dist.probs[0])
        seq += (tok,)
        if tok in terminals:
            return ScoredSequence(seq, logprob, True)
    return ScoredSequence(seq, logprob, False)


def _beam(model: TokenModel, prefix: Sequence[int], config: DecodeConfig, meter: Meter | None,
          sequential: bool) -> list[ScoredSequence]:
    meter = _meter(config, meter)
    prefix = tuple(prefix)
    k = config.beam_size
    v = len(model.vocab)
    terminals = model.vocab.terminal_ids
    n_in = len(prefix)
    params = config.memory_params(n_in, v)
    charge = _charge_sequential_forward if sequential else charge_batched_forward

    live: list[tuple[tuple[int, ...], float]] = [(prefix, 0.0)]
    frozen: list[ScoredSequence] = []
    for _ in range(config.max_new_tokens):
        if not live:
            break
        charge(meter, params)
        rows = np.empty((len(live), v))
        for i, (seq, score) in enumerate(live):
            dense = model.next_dist(seq).dense(v)
            rows[i] = [score + _log(p) for p in dense]
        flat = rows.ravel()
        pool = list(frozen)
        for idx in _kernels.topk_desc(flat, k):
            seq = live[idx // v][0] + (int(idx % v),)
            pool.append(ScoredSequence(seq, float(flat[idx]), seq[-1] in terminals))
        pool.sort(key=lambda s: (-s.logprob, s.tokens))
        kept = pool[:k]
        finished = [s.complete or len(s.tokens) - n_in >= config.max_new_tokens for s in kept]
        frozen = [s for s, f in zip(kept, finished) if f]
        live = sorted((s.tokens, s.logprob) for s, f in zip(kept, finished) if not f)
    out = frozen + [ScoredSequence(seq, score, False) for seq, score in live]
    out.sort(key=lambda s: (-s.logprob, s.tokens))
    return out


def beam_search(model: TokenModel, prefix: Sequence[int], config: DecodeConfig,
                meter: Meter | None = None) -> list[ScoredSequence]:
    """Length-synchronous beam search over raw cumulative log-probabilities.

    Finished sequences keep their beam slot and compete in every later ranking.
    Returns at most ``config.beam_size`` sequences, best first, ties broken by
    lexicographic token order. Raises :class:`~flames.errors.SimulatedOOM` when
    a step would exceed ``config.memory_cap``.
    """
    return _beam(model, prefix, config, meter, sequential=False)


def sequential_beam_search(model: TokenModel, prefix: Sequence[int], config: DecodeConfig,
                           meter: Meter | None = None) -> list[ScoredSequence]:
    """Same output as :func:`beam_search`; only the memory profile differs."""
    return _beam(model, prefix, config, meter, sequential=True)


def multiple_sampling(model: TokenModel, prefix: Sequence[int], config: DecodeConfig, n_samples: int,
                      meter: Meter | None = None) -> list[ScoredSequence]:
    """Ancestral sampling from ``p ** (1 / temperature)``, renormalized.

    ``logprob`` of each sample is scored under the untempered model.
    """
    meter = _meter(config, meter)
    rng = np.random.default_rng(config.rng_seed)
    prefix = tuple(prefix)
    v = len(model.vocab)
    terminals = model.vocab.terminal_ids
    params = config.memory_params(len(prefix), v, k=1)
    inv_t = 1.0 / config.temperature
    out = []
    for _ in range(n_samples):
        seq = prefix
        logprob = 0.0
        complete = False
        for _ in range(config.max_new_tokens):
            charge_batched_forward(meter, params)
            probs = model.next_dist(seq).dense(v)
            scaled = probs if inv_t == 1.0 else probs ** inv_t
            cdf = np.cumsum(scaled)
            tok = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            tok = min(tok, v - 1)
            while scaled[tok] == 0:
                tok -= 1
            logprob += _log(probs[tok])
            seq += (tok,)
            if tok in terminals:
                complete = True
                break
        out.append(ScoredSequence(seq, logprob, complete))
    return out
