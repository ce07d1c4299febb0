"""Repair problems over a tiny prefix-notation integer language.

Programs are token sequences such as ``+ x0 1 <end>`` (``x0 + 1``). Every
operator is binary, so whether a prefix can still be completed is decidable
token by token. A bug is a ground-truth program with one token replaced; its
test suite is the ground truth evaluated on random integer inputs. The reward
of a candidate is the fraction of test cases it passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Sequence, Union

import numpy as np

from . import _kernels
from .errors import GenerationExhausted, ParseError
from .model import MaskedModel, MixtureModel, NGramModel, PositionalCopyModel, TokenModel, Vocab

SOS = "<sos>"
END = "<end>"
OPERATORS = ("+", "-", "*", "/", "min", "max")
VARIABLES = ("x0", "x1", "x2", "x3")
CONSTANTS = ("1", "2")
N_INPUTS = len(VARIABLES)

_OPCODES = {
    "+": _kernels.OP_ADD,
    "-": _kernels.OP_SUB,
    "*": _kernels.OP_MUL,
    "/": _kernels.OP_DIV,
    "min": _kernels.OP_MIN,
    "max": _kernels.OP_MAX,
}

Tree = Union[str, tuple]


def expr_vocab() -> Vocab:
    return Vocab((SOS, END) + OPERATORS + VARIABLES + CONSTANTS, frozenset({1}), 0)


EXPR_VOCAB = expr_vocab()


@dataclass(frozen=True)
class TestCase:
    inputs: tuple[int, ...]
    expected: int

    __test__ = False


@dataclass(frozen=True)
class Spec:
    cases: tuple[TestCase, ...]

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        if not self.cases:
            raise ValueError("a spec needs at least one test case")

    @property
    def inputs(self) -> np.ndarray:
        return _inputs_array(self.cases)

    @property
    def expected(self) -> np.ndarray:
        return np.array([c.expected for c in self.cases], dtype=np.int64)

    def to_json(self) -> list:
        return [{"inputs": list(c.inputs), "expected": c.expected} for c in self.cases]

    @classmethod
    def from_json(cls, obj) -> "Spec":
        return cls(tuple(TestCase(tuple(int(x) for x in c["inputs"]), int(c["expected"])) for c in obj))


@lru_cache(maxsize=4096)
def _inputs_array(cases):
    arr = np.zeros((len(cases), N_INPUTS), dtype=np.int64)
    for i, c in enumerate(cases):
        arr[i, : len(c.inputs)] = c.inputs
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Bug:
    id: str
    buggy_tokens: tuple[int, ...]
    prompt_tokens: tuple[int, ...]
    expected_depth: int
    ground_truth: tuple[int, ...] | None = None


@dataclass(frozen=True)
class RewardReport:
    f_pass: int
    f_fail: int
    reward: float
    failures: tuple[int, ...] = ()
    parse_error: bool = False


@dataclass(frozen=True)
class Program:
    tree: Tree
    ops: np.ndarray = field(repr=False, compare=False)
    args: np.ndarray = field(repr=False, compare=False)

    def __call__(self, *inputs: int) -> int:
        values, ok = _kernels.eval_prefix(self.ops, self.args, np.array([list(inputs) + [0] * (N_INPUTS - len(inputs))]))
        if not ok[0]:
            raise ZeroDivisionError("division by zero")
        return int(values[0])


def _strip(tokens: Sequence[int], vocab: Vocab) -> list[str]:
    tokens = list(tokens)
    if tokens and tokens[0] == vocab.sos_id:
        tokens = tokens[1:]
    if not tokens or tokens[-1] not in vocab.terminal_ids:
        raise ParseError("program is not terminated")
    body = tokens[:-1]
    if any(not 0 <= t < len(vocab) for t in body):
        raise ParseError("token id outside the vocabulary")
    return [vocab.surfaces[t] for t in body]


def decode_program(tokens: Sequence[int], vocab: Vocab = EXPR_VOCAB) -> Program:
    """Parse a terminal-ended token sequence (optionally led by sos)."""
    words = _strip(tokens, vocab)
    pos = 0

    def parse() -> Tree:
        nonlocal pos
        if pos >= len(words):
            raise ParseError("missing operand")
        w = words[pos]
        pos += 1
        if w in _OPCODES:
            return (w, parse(), parse())
        if w in VARIABLES or w in CONSTANTS:
            return w
        raise ParseError(f"unexpected token {w!r}")

    tree = parse()
    if pos != len(words):
        raise ParseError("trailing tokens after a complete expression")
    ops = np.empty(len(words), dtype=np.int64)
    args = np.zeros(len(words), dtype=np.int64)
    for i, w in enumerate(words):
        if w in _OPCODES:
            ops[i] = _OPCODES[w]
        elif w in VARIABLES:
            ops[i], args[i] = _kernels.OP_VAR, VARIABLES.index(w)
        else:
            ops[i], args[i] = _kernels.OP_CONST, int(w)
    return Program(tree, ops, args)


def tree_tokens(tree: Tree, vocab: Vocab = EXPR_VOCAB) -> tuple[int, ...]:
    """Token ids of ``tree`` followed by the terminal token (no sos)."""
    out = []

    def walk(t):
        if isinstance(t, tuple):
            out.append(vocab.id_of(t[0]))
            walk(t[1])
            walk(t[2])
        else:
            out.append(vocab.id_of(t))

    walk(tree)
    out.append(min(vocab.terminal_ids))
    return tuple(out)


def render(tokens: Sequence[int], vocab: Vocab = EXPR_VOCAB) -> str:
    return " ".join(vocab.surfaces[t] for t in tokens if t != vocab.sos_id)


def evaluate_reward(tokens: Sequence[int], spec: Spec, vocab: Vocab = EXPR_VOCAB) -> RewardReport:
    n = len(spec.cases)
    try:
        prog = decode_program(tokens, vocab)
    except ParseError:
        return RewardReport(0, n, 0.0, tuple(range(n)), parse_error=True)
    values, ok = _kernels.eval_prefix(prog.ops, prog.args, spec.inputs)
    passed = ok & (values == spec.expected)
    f_pass = int(passed.sum())
    failures = tuple(int(i) for i in np.flatnonzero(~passed))
    return RewardReport(f_pass, n - f_pass, f_pass / n, failures)


# ---------------------------------------------------------------- grammar


def _open_slots(words_ids: Sequence[int], vocab: Vocab) -> int:
    need = 1
    for t in words_ids:
        if need <= 0:
            return -1
        need += 1 if vocab.surfaces[t] in _OPCODES else -1
    return need


def grammar_mask(prefix: Sequence[int], vocab: Vocab = EXPR_VOCAB, max_len: int = 8) -> np.ndarray:
    """Tokens that keep ``prefix`` completable within ``max_len`` tokens after sos.

    ``max_len`` counts the terminal token. Once the expression is closed only
    terminals are allowed.
    """
    body = list(prefix[1:]) if prefix and prefix[0] == vocab.sos_id else list(prefix)
    v = len(vocab)
    mask = np.zeros(v, dtype=bool)
    if any(t == vocab.sos_id or t in vocab.terminal_ids for t in body):
        mask[sorted(vocab.terminal_ids)] = True
        return mask
    need = _open_slots(body, vocab)
    if need <= 0:
        mask[sorted(vocab.terminal_ids)] = True
        return mask
    used = len(body)
    for t, w in enumerate(vocab.surfaces):
        if w in _OPCODES:
            # operator, then need + 1 leaves, then the terminal
            mask[t] = used + 1 + (need + 1) + 1 <= max_len
        elif w in VARIABLES or w in CONSTANTS:
            mask[t] = used + 1 + (need - 1) + 1 <= max_len
    return mask


# ---------------------------------------------------------------- corpus


def _sample_tree(rng: np.random.Generator, n_ops: int) -> Tree:
    if n_ops == 0:
        if rng.random() < 0.75:
            return VARIABLES[int(rng.integers(len(VARIABLES)))]
        return CONSTANTS[int(rng.integers(len(CONSTANTS)))]
    op = OPERATORS[int(rng.integers(len(OPERATORS)))]
    left = int(rng.integers(n_ops))
    return (op, _sample_tree(rng, left), _sample_tree(rng, n_ops - 1 - left))


def random_program(rng: np.random.Generator, max_ops: int = 3, vocab: Vocab = EXPR_VOCAB) -> tuple[int, ...]:
    return tree_tokens(_sample_tree(rng, int(rng.integers(1, max_ops + 1))), vocab)


def _mutate(rng: np.random.Generator, tokens: tuple[int, ...], vocab: Vocab) -> tuple[int, ...]:
    pos = int(rng.integers(len(tokens) - 1))
    word = vocab.surfaces[tokens[pos]]
    pool = OPERATORS if word in OPERATORS else VARIABLES + CONSTANTS
    choices = [w for w in pool if w != word]
    new = choices[int(rng.integers(len(choices)))]
    return tokens[:pos] + (vocab.id_of(new),) + tokens[pos + 1:]


def generate_bug_corpus(seed: int, n_bugs: int, vocab: Vocab = EXPR_VOCAB, n_cases: int = 5,
                        max_ops: int = 3, input_range: int = 5,
                        max_attempts: int = 1000) -> list[tuple[Bug, Spec]]:
    """Sample ``n_bugs`` single-token bugs with test suites; reproducible per seed.

    The ground truth passes its own suite by construction; mutants that also
    pass every case are rejected. Raises :class:`GenerationExhausted` when a
    bug cannot be produced within ``max_attempts`` draws.
    """
    if n_bugs < 1:
        raise ValueError("n_bugs must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for b in range(n_bugs):
        for _ in range(max_attempts):
            truth = random_program(rng, max_ops, vocab)
            inputs = rng.integers(-input_range, input_range + 1, size=(n_cases, N_INPUTS))
            prog = decode_program(truth, vocab)
            values, ok = _kernels.eval_prefix(prog.ops, prog.args, inputs)
            if not ok.all() or len(set(values.tolist())) < 2:
                continue
            spec = Spec(tuple(TestCase(tuple(int(x) for x in row), int(val)) for row, val in zip(inputs, values)))
            buggy = _mutate(rng, truth, vocab)
            if evaluate_reward(buggy, spec, vocab).reward >= 1.0:
                continue
            bug = Bug(f"bug-{seed}-{b:04d}", buggy, (vocab.sos_id,), len(truth), truth)
            out.append((bug, spec))
            break
        else:
            raise GenerationExhausted(f"could not generate bug {b} in {max_attempts} attempts")
    return out


def write_corpus(path, corpus: Sequence[tuple[Bug, Spec]]):
    with open(path, "w") as fh:
        for bug, spec in corpus:
            row = {
                "id": bug.id,
                "buggy_tokens": list(bug.buggy_tokens),
                "ground_truth": list(bug.ground_truth or ()),
                "spec": spec.to_json(),
            }
            fh.write(json.dumps(row) + "\n")


def read_corpus(path, vocab: Vocab = EXPR_VOCAB) -> list[tuple[Bug, Spec]]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                truth = tuple(int(t) for t in row.get("ground_truth") or ()) or None
                bug = Bug(str(row["id"]), tuple(int(t) for t in row["buggy_tokens"]), (vocab.sos_id,),
                          len(truth) if truth else len(row["buggy_tokens"]), truth)
                out.append((bug, Spec.from_json(row["spec"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad corpus row ({exc})") from None
    return out


# ---------------------------------------------------------------- models


def background_corpus(seed: int = 0, n: int = 300, vocab: Vocab = EXPR_VOCAB) -> list[tuple[int, ...]]:
    rng = np.random.default_rng(seed)
    return [random_program(rng, vocab=vocab) for _ in range(n)]


def bug_conditioned_model(bug: Bug, vocab: Vocab = EXPR_VOCAB, *, background=None, copy_weight: float = 0.6,
                          order: int = 3, max_len: int = 8, smoothing: float = 0.5) -> TokenModel:
    """Stand-in for a repair-tuned LLM: mostly reproduces the buggy program.

    Mixes a positional copy of the buggy tokens with an n-gram model of
    background programs, restricted to grammatical continuations.
    """
    if background is None:
        background = background_corpus(vocab=vocab)
    ngram = NGramModel(vocab, list(background), order=order, smoothing=smoothing)
    copy = PositionalCopyModel(vocab, bug.buggy_tokens, p_copy=1.0)
    mix = MixtureModel([(copy_weight, copy), (1.0 - copy_weight, ngram)])
    return MaskedModel(mix, partial(grammar_mask, vocab=vocab, max_len=max_len))


def ngram_bug_model(bug: Bug, vocab: Vocab = EXPR_VOCAB, *, background=None, order: int = 3,
                    bug_weight: float = 20.0, max_len: int = 8, smoothing: float = 0.5) -> TokenModel:
    """n-gram trained on background programs plus a heavily weighted buggy program."""
    if background is None:
        background = background_corpus(vocab=vocab)
    corpus = list(background) + [bug.buggy_tokens]
    weights = [1.0] * len(background) + [bug_weight]
    ngram = NGramModel(vocab, corpus, order=order, smoothing=smoothing, weights=weights)
    return MaskedModel(ngram, partial(grammar_mask, vocab=vocab, max_len=max_len))
