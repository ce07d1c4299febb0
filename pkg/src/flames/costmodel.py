"""Analytic memory model for batched and sequential beam search, plus the meter.

All quantities are integer "abstract bytes". ``alpha`` is the cost of one
single-sequence model forward; ``beta`` is the size of one beam's output
buffer, ``4 * (n_in + n_out) * v`` (float32 logits over the whole sequence).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .errors import SimulatedOOM

BEAM_GRID = (1, 10, 25, 50, 100, 200)


@dataclass(frozen=True)
class MemoryModelParams:
    alpha: int
    k: int
    n_in: int
    n_out: int
    v: int

    def __post_init__(self):
        for name in ("alpha", "k", "n_in", "n_out", "v"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.k < 1 or self.n_out < 1 or self.v < 1:
            raise ValueError("k, n_out and v must be positive")

    @property
    def beta(self) -> int:
        return 4 * (self.n_in + self.n_out) * self.v

    def with_k(self, k: int) -> "MemoryModelParams":
        return MemoryModelParams(self.alpha, k, self.n_in, self.n_out, self.v)


def bs_step2_memory(params: MemoryModelParams) -> int:
    return params.k * params.alpha + params.k * params.beta


def seqbs_step2_memory(params: MemoryModelParams) -> int:
    return params.alpha + 2 * params.k * params.beta


def memory_delta(params: MemoryModelParams) -> int:
    """Batched minus sequential step-2 memory: ``(k-1)*alpha - k*beta``."""
    return (params.k - 1) * params.alpha - params.k * params.beta


def flames_memory(params: MemoryModelParams) -> int:
    """Greedy decoding footprint; independent of how many patches are generated."""
    return bs_step2_memory(params.with_k(1))


def seqbs_saves_memory(params: MemoryModelParams) -> bool:
    """True when alpha/beta > k/(k-1), i.e. the sequential variant is strictly cheaper."""
    if params.k == 1:
        return False
    return Fraction(params.alpha, params.beta) > Fraction(params.k, params.k - 1)


@dataclass(frozen=True)
class MemoryReading:
    peak: int
    per_step: tuple[int, ...]
    oom: bool


@dataclass
class Meter:
    """Peak-tracking allocation counter with an optional cap.

    ``charge`` never raises; callers check :attr:`oom` (or use
    :meth:`charge_checked`) to turn a cap breach into :class:`SimulatedOOM`.
    """

    cap: int | None = None
    current: int = 0
    peak: int = 0
    oom: bool = False
    per_step: list[int] = field(default_factory=list)
    _step_peak: int = 0
    _dirty: bool = False

    def charge(self, nbytes: int):
        self.current += nbytes
        self._dirty = True
        self._step_peak = max(self._step_peak, self.current)
        if self.current > self.peak:
            self.peak = self.current
        if self.cap is not None and self.current > self.cap:
            self.oom = True

    def charge_checked(self, nbytes: int):
        self.charge(nbytes)
        if self.oom:
            raise SimulatedOOM(self.read(), self.cap)

    def release(self, nbytes: int):
        if nbytes > self.current:
            raise ValueError("releasing more than is charged")
        self.current -= nbytes

    def end_step(self):
        if self._dirty:
            self.per_step.append(self._step_peak)
        self._step_peak = self.current
        self._dirty = False

    def read(self) -> MemoryReading:
        steps = list(self.per_step)
        if self._dirty:
            steps.append(self._step_peak)
        return MemoryReading(self.peak, tuple(steps), self.oom)


def meter_charge(meter: Meter, nbytes: int) -> MemoryReading:
    meter.charge(nbytes)
    return meter.read()


def meter_release(meter: Meter, nbytes: int) -> MemoryReading:
    meter.release(nbytes)
    return meter.read()


def meter_read(meter: Meter) -> MemoryReading:
    return meter.read()


@dataclass(frozen=True)
class SweepRow:
    k: int
    bs_bytes: int
    seqbs_bytes: int
    delta_bytes: int
    oom: bool


def sweep(params: MemoryModelParams, ks: Iterable[int] = BEAM_GRID, cap: int | None = None) -> list[SweepRow]:
    rows = []
    for k in ks:
        p = params.with_k(k)
        bs = bs_step2_memory(p)
        rows.append(SweepRow(k, bs, seqbs_step2_memory(p), memory_delta(p), cap is not None and bs > cap))
    return rows


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k", "bs_bytes", "seqbs_bytes", "delta_bytes", "oom"])
    for r in rows:
        writer.writerow([r.k, r.bs_bytes, r.seqbs_bytes, r.delta_bytes, str(r.oom).lower()])
    return buf.getvalue()
