"""Test-guided best-first token search for program repair, with beam-search baselines
and an analytic memory model."""

from .costmodel import (MemoryModelParams, MemoryReading, Meter, bs_step2_memory, flames_memory, memory_delta,
                        seqbs_step2_memory, sweep)
from .decode import (DecodeConfig, ScoredSequence, beam_search, greedy_decode, multiple_sampling,
                     sequential_beam_search)
from .model import (MaskedModel, MixtureModel, ModelStats, NGramModel, PositionalCopyModel, RemoteModel,
                    TableModel, TokenDist, TokenModel, UniformModel, Vocab, next_dist, top_k)
from .reward import (EXPR_VOCAB, Bug, RewardReport, Spec, TestCase, decode_program, evaluate_reward,
                     generate_bug_corpus)
from .search import (FlamesSearch, PatchCandidate, Policy, SearchConfig, SearchNode, SearchReport, TopKCache,
                     backprop, cached_top_k, expand, flames_search, policy_score, select, simulate)

__version__ = "0.1.0"

__all__ = [
    "Bug", "DecodeConfig", "EXPR_VOCAB", "FlamesSearch", "MaskedModel", "MemoryModelParams", "MemoryReading",
    "Meter", "MixtureModel", "ModelStats", "NGramModel", "PatchCandidate", "Policy", "PositionalCopyModel",
    "RemoteModel", "RewardReport", "ScoredSequence", "SearchConfig", "SearchNode", "SearchReport", "Spec",
    "TableModel", "TestCase", "TokenDist", "TokenModel", "TopKCache", "UniformModel", "Vocab", "backprop",
    "beam_search", "bs_step2_memory", "cached_top_k", "decode_program", "evaluate_reward", "expand",
    "flames_memory", "flames_search", "generate_bug_corpus", "greedy_decode", "memory_delta",
    "multiple_sampling", "next_dist", "policy_score", "select", "seqbs_step2_memory", "sequential_beam_search",
    "simulate", "sweep", "top_k",
]
