import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from flames import _kernels  # noqa: E402
from flames.model import TableModel, Vocab  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_sessionstart(session):
    _kernels.warmup()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def abc_vocab():
    # 0 sos, 1 end, 2 a, 3 b, 4 c
    return Vocab(("<sos>", "<end>", "a", "b", "c"), frozenset({1}), 0)


@pytest.fixture
def simple_table(abc_vocab):
    return TableModel(abc_vocab, {(0,): {2: 0.7, 1: 0.3}, (0, 2): {1: 1.0}})
