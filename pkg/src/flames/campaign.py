"""Repair campaigns: run one algorithm over a bug corpus and tabulate the results."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

from .costmodel import Meter
from .decode import (DEFAULT_ALPHA, DecodeConfig, beam_search, greedy_decode, multiple_sampling,
                     sequential_beam_search)
from .errors import ConfigError, FlamesError, PairingError, SimulatedOOM
from .model import RemoteModel, TokenModel, load_table_model
from .reward import (EXPR_VOCAB, Bug, Spec, background_corpus, bug_conditioned_model, evaluate_reward,
                     ngram_bug_model, read_corpus)
from .search import FlamesSearch, Policy, SearchConfig, TopKCache

log = logging.getLogger(__name__)

ALGORITHMS = ("flames", "beam", "seqbeam", "sample", "greedy")


@dataclass(frozen=True)
class CampaignConfig:
    algorithm: str
    corpus_path: str | None = None
    model: str = "repair"
    beam_size: int | None = None
    expansion_k: int = 10
    policy: Policy | str | None = Policy.PUCB_VAR
    max_patches: int = 200
    timeout: float = 60.0
    memory_cap: int | None = None
    seed: int = 0
    max_new_tokens: int = 8
    temperature: float = 1.0
    alpha: int = DEFAULT_ALPHA
    stop_on_plausible: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.algorithm in ("beam", "seqbeam") and not self.beam_size:
            raise ConfigError(f"{self.algorithm} needs a beam size")
        if self.algorithm == "flames":
            if self.policy is None:
                raise ConfigError("flames needs a policy")
            try:
                object.__setattr__(self, "policy", Policy(self.policy))
            except ValueError:
                raise ConfigError(f"unknown policy {self.policy!r}") from None
        if self.beam_size is not None and self.beam_size < 1:
            raise ConfigError("beam size must be >= 1")
        if self.max_patches < 1 or self.expansion_k < 1 or self.max_new_tokens < 1:
            raise ConfigError("max_patches, expansion_k and max_new_tokens must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def search_config(self) -> SearchConfig:
        return SearchConfig(expansion_k=self.expansion_k, policy=self.policy, max_patches=self.max_patches,
                            timeout=self.timeout, max_sim_tokens=self.max_new_tokens,
                            stop_on_plausible=self.stop_on_plausible, memory_cap=self.memory_cap,
                            alpha=self.alpha)

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(beam_size=self.beam_size or 1, max_new_tokens=self.max_new_tokens,
                            temperature=self.temperature, rng_seed=self.seed, memory_cap=self.memory_cap,
                            alpha=self.alpha)

    def to_json(self) -> dict:
        out = asdict(self)
        out["policy"] = self.policy.value if isinstance(self.policy, Policy) else self.policy
        return out


@dataclass
class BugRow:
    bug_id: str
    plausible_found: bool = False
    best_reward: float = 0.0
    patches_validated: int = 0
    wall_ms: float = 0.0
    peak_bytes: int = 0
    oom: bool = False
    time_to_plausible_ms: float | None = None
    best_patch: list[int] | None = None
    error: str | None = None


@dataclass
class CampaignReport:
    config: dict
    rows: list[BugRow] = field(default_factory=list)

    @property
    def plausible_count(self) -> int:
        return sum(r.plausible_found for r in self.rows)

    @property
    def oom_rate(self) -> float:
        return sum(r.oom for r in self.rows) / len(self.rows) if self.rows else 0.0

    @property
    def mean_time_to_plausible(self) -> float | None:
        times = [r.time_to_plausible_ms for r in self.rows if r.time_to_plausible_ms is not None]
        return sum(times) / len(times) if times else None

    @property
    def mean_peak(self) -> float:
        return sum(r.peak_bytes for r in self.rows) / len(self.rows) if self.rows else 0.0

    def aggregates(self, timing: bool = True) -> dict:
        return {
            "plausible_count": self.plausible_count,
            "oom_rate": self.oom_rate,
            "mean_time_to_plausible": self.mean_time_to_plausible if timing else None,
            "mean_peak": self.mean_peak,
            "bugs": len(self.rows),
        }

    def to_json(self, timing: bool = True) -> dict:
        rows = []
        for r in self.rows:
            row = asdict(r)
            if not timing:
                row["wall_ms"] = None
                row["time_to_plausible_ms"] = None
            rows.append(row)
        return {"config": self.config, "rows": rows, "aggregates": self.aggregates(timing)}

    def dumps(self, timing: bool = True) -> str:
        return json.dumps(self.to_json(timing), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> "CampaignReport":
        return cls(obj.get("config", {}), [BugRow(**r) for r in obj["rows"]])


def load_report(path) -> CampaignReport:
    with open(path) as fh:
        return CampaignReport.from_json(json.load(fh))


# ---------------------------------------------------------------- models


def model_factory(spec: str, vocab=EXPR_VOCAB, max_len: int = 8) -> Callable[[Bug], TokenModel]:
    """Turn a model spec string into a per-bug model constructor.

    ``repair`` (default): copy-of-buggy-program mixture; ``ngram[:ORDER]``:
    n-gram over background programs plus the buggy one; ``table:PATH``: one
    JSON table model for all bugs; ``remote:URL``: HTTP endpoint.
    """
    kind, _, arg = spec.partition(":")
    if kind == "repair":
        background = background_corpus(vocab=vocab)
        return lambda bug: bug_conditioned_model(bug, vocab, background=background, max_len=max_len)
    if kind == "ngram":
        order = int(arg) if arg else 3
        background = background_corpus(vocab=vocab)
        return lambda bug: ngram_bug_model(bug, vocab, background=background, order=order, max_len=max_len)
    if kind == "table":
        if not arg:
            raise ConfigError("table model needs a path: table:PATH")
        table = load_table_model(arg)
        return lambda bug: table
    if kind == "remote":
        if not arg:
            raise ConfigError("remote model needs an endpoint: remote:URL")
        client = RemoteModel(vocab, arg)
        return lambda bug: client
    raise ConfigError(f"unknown model spec {spec!r}")


# ---------------------------------------------------------------- running


def _validate(candidates, spec: Spec, vocab, row: BugRow, start: float, max_patches: int):
    best = None
    for seq in candidates:
        if row.patches_validated >= max_patches:
            break
        row.patches_validated += 1
        reward = evaluate_reward(seq.tokens, spec, vocab).reward
        if best is None or reward > row.best_reward:
            row.best_reward = reward
            best = seq.tokens
        if reward >= 1.0 and row.time_to_plausible_ms is None:
            row.time_to_plausible_ms = (time.monotonic() - start) * 1000.0
    row.best_patch = list(best) if best is not None else None


def _unique_complete(seqs):
    seen = set()
    out = []
    for s in seqs:
        if s.complete and s.tokens not in seen:
            seen.add(s.tokens)
            out.append(s)
    return out


def run_bug(bug: Bug, spec: Spec, model: TokenModel, config: CampaignConfig, vocab=EXPR_VOCAB,
            cache: TopKCache | None = None) -> BugRow:
    row = BugRow(bug.id)
    start = time.monotonic()
    try:
        if config.algorithm == "flames":
            search = FlamesSearch(model, lambda toks: evaluate_reward(toks, spec, vocab), config.search_config(),
                                  prefix=bug.prompt_tokens, cache=cache)
            cands, rep = search.run()
            row.patches_validated = rep.distinct_patches
            row.best_reward = rep.best_reward
            row.best_patch = list(cands[0].tokens) if cands else None
            row.time_to_plausible_ms = rep.first_plausible_ms
            row.peak_bytes = rep.peak_bytes
            row.oom = rep.oom
            if rep.oom:
                row.patches_validated = 0
                row.best_reward = 0.0
                row.best_patch = None
                row.time_to_plausible_ms = None
        else:
            meter = Meter(cap=config.memory_cap)
            dcfg = config.decode_config()
            try:
                if config.algorithm == "greedy":
                    seqs = [greedy_decode(model, bug.prompt_tokens, dcfg, meter)]
                elif config.algorithm == "beam":
                    seqs = beam_search(model, bug.prompt_tokens, dcfg, meter)
                elif config.algorithm == "seqbeam":
                    seqs = sequential_beam_search(model, bug.prompt_tokens, dcfg, meter)
                else:
                    samples = multiple_sampling(model, bug.prompt_tokens, dcfg, config.max_patches, meter)
                    seqs = sorted(_unique_complete(samples), key=lambda s: (-s.logprob, s.tokens))
            except SimulatedOOM:
                row.oom = True
                seqs = []
            row.peak_bytes = meter.read().peak
            _validate(_unique_complete(seqs), spec, vocab, row, start, config.max_patches)
    except FlamesError as exc:
        log.warning("bug %s failed: %s", bug.id, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    row.plausible_found = row.best_reward >= 1.0
    row.wall_ms = (time.monotonic() - start) * 1000.0
    return row


def run_campaign(config: CampaignConfig, corpus: Sequence[tuple[Bug, Spec]] | None = None,
                 vocab=EXPR_VOCAB) -> CampaignReport:
    """Run ``config.algorithm`` on every bug; rows keep corpus order."""
    if corpus is None:
        if config.corpus_path is None:
            raise ConfigError("no corpus given")
        corpus = read_corpus(config.corpus_path, vocab)
    make_model = model_factory(config.model, vocab, max_len=config.max_new_tokens)

    def one(item):
        bug, spec = item
        return run_bug(bug, spec, make_model(bug), config, vocab)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            rows = list(pool.map(one, corpus))
    else:
        rows = [one(item) for item in corpus]
    return CampaignReport(config.to_json(), rows)


# ---------------------------------------------------------------- comparison


@dataclass
class ComparisonRow:
    bug_id: str
    plausible_diff: int
    wall_ms_diff: float
    peak_bytes_diff: int


@dataclass
class ComparisonSummary:
    rows: list[ComparisonRow]
    plausible_diff: int
    oom_rate_diff: float
    mean_peak_diff: float

    def to_json(self) -> dict:
        return asdict(self)


def compare(report_a: CampaignReport, report_b: CampaignReport) -> ComparisonSummary:
    """Paired per-bug differences ``a - b``. Both reports must cover the same bugs."""
    a_rows = {r.bug_id: r for r in report_a.rows}
    b_rows = {r.bug_id: r for r in report_b.rows}
    if set(a_rows) != set(b_rows):
        raise PairingError("reports cover different bugs")
    rows = []
    for r in report_a.rows:
        o = b_rows[r.bug_id]
        rows.append(ComparisonRow(r.bug_id, int(r.plausible_found) - int(o.plausible_found),
                                  r.wall_ms - o.wall_ms, r.peak_bytes - o.peak_bytes))
    return ComparisonSummary(rows, report_a.plausible_count - report_b.plausible_count,
                             report_a.oom_rate - report_b.oom_rate, report_a.mean_peak - report_b.mean_peak)


# ---------------------------------------------------------------- ablation


@dataclass
class AblationRow:
    policy: str
    expansion_k: int
    plausible_count: int
    mean_patches: float
    mean_time_to_plausible: float | None


def run_ablation(base: CampaignConfig, corpus: Sequence[tuple[Bug, Spec]],
                 policies: Sequence[Policy | str] = tuple(Policy), ks: Sequence[int] = (3, 5, 7, 10),
                 vocab=EXPR_VOCAB) -> list[AblationRow]:
    out = []
    for policy in policies:
        for k in ks:
            cfg = replace(base, algorithm="flames", policy=Policy(policy), expansion_k=k)
            report = run_campaign(cfg, corpus, vocab)
            mean_patches = sum(r.patches_validated for r in report.rows) / max(len(report.rows), 1)
            out.append(AblationRow(Policy(policy).value, k, report.plausible_count, mean_patches,
                                   report.mean_time_to_plausible))
    return out


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    lines = ["policy,expansion_k,plausible_count,mean_patches,mean_time_to_plausible_ms"]
    for r in rows:
        t = "" if r.mean_time_to_plausible is None else f"{r.mean_time_to_plausible:.3f}"
        lines.append(f"{r.policy},{r.expansion_k},{r.plausible_count},{r.mean_patches:.3f},{t}")
    return "\n".join(lines) + "\n"
