"""Next-token distribution providers over a shared vocabulary.

A model maps a token prefix (always starting with the start-of-sequence id) to
a probability distribution over the whole vocabulary. Concrete models here are
small and deterministic so that every search result can be checked by brute
force: an explicit table model, an add-lambda n-gram model, and a few
composable wrappers. :class:`RemoteModel` talks to an HTTP inference endpoint.
"""

from __future__ import annotations

import json
import math
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BadK, PrefixTerminal, ProtocolError, TransportError, UnknownToken


@dataclass(frozen=True)
class Vocab:
    surfaces: tuple[str, ...]
    terminal_ids: frozenset[int]
    sos_id: int

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "terminal_ids", frozenset(int(t) for t in self.terminal_ids))
        if len(set(self.surfaces)) != len(self.surfaces):
            raise ValueError("token surfaces must be unique")
        if not self.terminal_ids:
            raise ValueError("at least one terminal token is required")
        if not all(0 <= t < len(self.surfaces) for t in self.terminal_ids):
            raise ValueError("terminal ids must be valid token ids")
        if not 0 <= self.sos_id < len(self.surfaces) or self.sos_id in self.terminal_ids:
            raise ValueError("sos id must be a valid, non-terminal token id")

    def __len__(self):
        return len(self.surfaces)

    @property
    def tokens(self):
        return list(enumerate(self.surfaces))

    def id_of(self, surface: str) -> int:
        try:
            return self.surfaces.index(surface)
        except ValueError:
            raise UnknownToken(f"unknown token surface {surface!r}") from None

    def is_terminal(self, token_id: int) -> bool:
        return token_id in self.terminal_ids

    def to_json(self) -> dict:
        return {"tokens": list(self.surfaces), "terminals": sorted(self.terminal_ids), "sos": self.sos_id}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Vocab":
        return cls(tuple(obj["tokens"]), frozenset(obj["terminals"]), int(obj["sos"]))


@dataclass(frozen=True)
class TokenDist:
    """Token ids with their probabilities, highest first, ties by ascending id."""

    ids: tuple[int, ...]
    probs: tuple[float, ...]

    @classmethod
    def from_dense(cls, probs) -> "TokenDist":
        probs = np.asarray(probs, dtype=np.float64)
        order = np.lexsort((np.arange(probs.shape[0]), -probs))
        return cls(tuple(int(i) for i in order), tuple(float(probs[i]) for i in order))

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.ids, self.probs))

    def __len__(self):
        return len(self.ids)

    def dense(self, v: int) -> np.ndarray:
        out = np.zeros(v, dtype=np.float64)
        out[list(self.ids)] = self.probs
        return out

    def prob(self, token_id: int) -> float:
        try:
            return self.probs[self.ids.index(token_id)]
        except ValueError:
            return 0.0


class ModelStats:
    """Thread-safe forward/cache counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self._forward_calls = 0
        self._cache_hits = 0

    @property
    def forward_calls(self) -> int:
        return self._forward_calls

    @property
    def cache_hits(self) -> int:
        return self._cache_hits

    def add_forward(self, n=1):
        with self._lock:
            self._forward_calls += n

    def add_hit(self, n=1):
        with self._lock:
            self._cache_hits += n

    def snapshot(self) -> dict:
        with self._lock:
            return {"forward_calls": self._forward_calls, "cache_hits": self._cache_hits}


class TokenModel:
    """Base class. Subclasses implement :meth:`_probs` returning a dense vector."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab
        self.stats = ModelStats()

    def check_prefix(self, prefix: Sequence[int]) -> tuple[int, ...]:
        prefix = tuple(int(t) for t in prefix)
        v = len(self.vocab)
        for t in prefix:
            if not 0 <= t < v:
                raise UnknownToken(f"token id {t} outside vocabulary of size {v}")
        if not prefix or prefix[0] != self.vocab.sos_id:
            raise ValueError("prefix must start with the sos token")
        if prefix[-1] in self.vocab.terminal_ids:
            raise PrefixTerminal(f"prefix {prefix} is already complete")
        if any(t in self.vocab.terminal_ids for t in prefix[:-1]):
            raise ValueError("terminal token in the middle of a prefix")
        return prefix

    def next_dist(self, prefix: Sequence[int]) -> TokenDist:
        prefix = self.check_prefix(prefix)
        self.stats.add_forward()
        return TokenDist.from_dense(self._probs(prefix))

    def _probs(self, prefix: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError


def next_dist(model: TokenModel, prefix: Sequence[int]) -> TokenDist:
    return model.next_dist(prefix)


def top_k(dist: TokenDist, k: int) -> TokenDist:
    """First ``k`` entries of ``dist``; probabilities are left as they are."""
    if k < 1:
        raise BadK(f"k must be positive, got {k}")
    return TokenDist(dist.ids[:k], dist.probs[:k])


def _terminal_uniform(vocab: Vocab) -> np.ndarray:
    out = np.zeros(len(vocab))
    out[sorted(vocab.terminal_ids)] = 1.0 / len(vocab.terminal_ids)
    return out


class TableModel(TokenModel):
    """Explicit prefix -> distribution rules.

    Prefixes without a rule get the uniform distribution over terminal tokens.
    Rules may list only the non-zero entries; they must sum to one.
    """

    def __init__(self, vocab: Vocab, rules: Mapping[Sequence[int], Mapping[int, float]]):
        super().__init__(vocab)
        v = len(vocab)
        self.rules: dict[tuple[int, ...], np.ndarray] = {}
        for prefix, dist in rules.items():
            vec = np.zeros(v)
            for tok, p in dist.items():
                if not 0 <= int(tok) < v:
                    raise UnknownToken(f"rule for {tuple(prefix)} mentions token {tok}")
                if p < 0:
                    raise ValueError("negative probability in table rule")
                vec[int(tok)] = p
            if abs(vec.sum() - 1.0) > 1e-9:
                raise ValueError(f"rule for {tuple(prefix)} sums to {vec.sum()}, not 1")
            self.rules[tuple(int(t) for t in prefix)] = vec
        self._default = _terminal_uniform(vocab)

    def _probs(self, prefix):
        return self.rules.get(prefix, self._default)

    def to_json(self) -> dict:
        rules = {}
        for prefix, vec in self.rules.items():
            rules[" ".join(map(str, prefix))] = {str(i): float(p) for i, p in enumerate(vec) if p > 0}
        return {"vocab": self.vocab.to_json(), "rules": rules}

    @classmethod
    def from_json(cls, obj: Mapping) -> "TableModel":
        vocab = Vocab.from_json(obj["vocab"])
        rules = {}
        for key, dist in obj["rules"].items():
            prefix = tuple(int(t) for t in key.split())
            rules[prefix] = {int(t): float(p) for t, p in dist.items()}
        return cls(vocab, rules)


def load_table_model(path) -> TableModel:
    with open(path) as fh:
        return TableModel.from_json(json.load(fh))


class UniformModel(TokenModel):
    """Every token equally likely, sos included."""

    def _probs(self, prefix):
        v = len(self.vocab)
        return np.full(v, 1.0 / v)


class NGramModel(TokenModel):
    """Add-lambda smoothed n-gram model.

    Training sequences are given without the leading sos token; a terminal is
    appended when a sequence does not already end in one. The sos token never
    receives probability mass. The context is the last ``order - 1`` tokens of
    the prefix (shorter at the very start); an unseen context backs off to the
    next shorter one, down to the empty context.
    """

    def __init__(self, vocab: Vocab, corpus: Iterable[Sequence[int]], order: int = 2,
                 smoothing: float = 1.0, weights: Sequence[float] | None = None):
        super().__init__(vocab)
        if order < 1:
            raise ValueError("order must be at least 1")
        if smoothing < 0:
            raise ValueError("smoothing must be non-negative")
        self.order = order
        self.smoothing = smoothing
        self.counts: dict[tuple[int, ...], np.ndarray] = {}
        v = len(vocab)
        self._allowed = np.ones(v, dtype=bool)
        self._allowed[vocab.sos_id] = False
        end = min(vocab.terminal_ids)
        corpus = list(corpus)
        weights = [1.0] * len(corpus) if weights is None else list(weights)
        for seq, w in zip(corpus, weights):
            seq = [int(t) for t in seq]
            if not seq or seq[-1] not in vocab.terminal_ids:
                seq.append(end)
            full = [vocab.sos_id] + seq
            for i in range(1, len(full)):
                history = full[:i]
                for n in range(0, min(order, len(history) + 1)):
                    ctx = tuple(history[-n:]) if n else ()
                    vec = self.counts.setdefault(ctx, np.zeros(v))
                    vec[full[i]] += w

    def context(self, prefix: tuple[int, ...]) -> tuple[int, ...]:
        n = self.order - 1
        return tuple(prefix[-n:]) if n else ()

    def _probs(self, prefix):
        ctx = self.context(prefix)
        while ctx not in self.counts and ctx:
            ctx = ctx[1:]
        counts = self.counts.get(ctx)
        allowed = self._allowed
        if counts is None:
            counts = np.zeros(len(self.vocab))
        smoothed = np.where(allowed, counts + self.smoothing, 0.0)
        total = smoothed.sum()
        if total <= 0:
            return allowed / allowed.sum()
        return smoothed / total


class MixtureModel(TokenModel):
    """Weighted sum of component models sharing one vocabulary."""

    def __init__(self, components: Sequence[tuple[float, TokenModel]]):
        if not components:
            raise ValueError("mixture needs at least one component")
        vocab = components[0][1].vocab
        if any(m.vocab != vocab for _, m in components):
            raise ValueError("mixture components must share a vocabulary")
        total = float(sum(w for w, _ in components))
        if total <= 0 or any(w < 0 for w, _ in components):
            raise ValueError("mixture weights must be non-negative with a positive sum")
        super().__init__(vocab)
        self.components = [(w / total, m) for w, m in components]

    def _probs(self, prefix):
        out = np.zeros(len(self.vocab))
        for w, m in self.components:
            out += w * m._probs(prefix)
        return out


class PositionalCopyModel(TokenModel):
    """Puts ``p_copy`` on the reference token at the current position.

    The remaining mass is spread uniformly over all non-sos tokens. Past the end
    of the reference only terminals are predicted.
    """

    def __init__(self, vocab: Vocab, reference: Sequence[int], p_copy: float = 0.9):
        super().__init__(vocab)
        self.reference = tuple(int(t) for t in reference)
        self.p_copy = p_copy
        self._rest = np.ones(len(vocab))
        self._rest[vocab.sos_id] = 0.0
        self._rest /= self._rest.sum()
        self._past_end = _terminal_uniform(vocab)

    def _probs(self, prefix):
        pos = len(prefix) - 1
        if pos >= len(self.reference):
            return self._past_end
        out = (1.0 - self.p_copy) * self._rest
        out[self.reference[pos]] += self.p_copy
        return out


class MaskedModel(TokenModel):
    """Zeroes tokens rejected by ``mask_fn(prefix)`` and renormalizes."""

    def __init__(self, base: TokenModel, mask_fn):
        super().__init__(base.vocab)
        self.base = base
        self.mask_fn = mask_fn

    def _probs(self, prefix):
        mask = np.asarray(self.mask_fn(prefix), dtype=bool)
        if not mask.any():
            return _terminal_uniform(self.vocab)
        probs = np.where(mask, self.base._probs(prefix), 0.0)
        total = probs.sum()
        if total <= 0:
            return mask / mask.sum()
        return probs / total


class RemoteModel(TokenModel):
    """Client for ``POST /v1/next_token`` endpoints.

    The endpoint answers with log-probabilities for a (possibly truncated) set of
    tokens; they are exponentiated and renormalized over the returned entries.
    Failed requests are retried with capped exponential backoff.
    """

    def __init__(self, vocab: Vocab, endpoint: str, k: int = 10, timeout: float = 10.0,
                 attempts: int = 3, backoff: float = 0.1, max_backoff: float = 2.0):
        super().__init__(vocab)
        self.endpoint = endpoint
        self.k = k
        self.timeout = timeout
        self.attempts = attempts
        self.backoff = backoff
        self.max_backoff = max_backoff

    def _post(self, payload: bytes) -> bytes:
        url = self.endpoint.rstrip("/") + "/v1/next_token"
        delay = self.backoff
        last = None
        for attempt in range(self.attempts):
            req = urllib.request.Request(url, data=payload, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return resp.read()
            except (urllib.error.URLError, OSError) as exc:
                last = exc
            if attempt + 1 < self.attempts:
                time.sleep(delay)
                delay = min(delay * 2, self.max_backoff)
        raise TransportError(f"{url}: {last}")

    def _probs(self, prefix):
        raw = self._post(json.dumps({"prefix": list(prefix), "k": self.k}).encode())
        try:
            logprobs = json.loads(raw)["logprobs"]
            items = [(int(t), float(lp)) for t, lp in logprobs.items()]
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise ProtocolError(f"malformed response: {exc}") from None
        v = len(self.vocab)
        if not items:
            raise ProtocolError("empty logprobs")
        if any(not 0 <= t < v for t, _ in items) or any(math.isnan(lp) for _, lp in items):
            raise ProtocolError("response mentions tokens outside the vocabulary")
        top = max(lp for _, lp in items)
        out = np.zeros(v)
        for t, lp in items:
            out[t] = math.exp(lp - top)
        return out / out.sum()


def remote_next_dist(client: RemoteModel, prefix: Sequence[int]) -> TokenDist:
    return client.next_dist(prefix)
