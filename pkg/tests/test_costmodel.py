import csv
import io
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from flames.costmodel import (BEAM_GRID, MemoryModelParams, Meter, bs_step2_memory, flames_memory, memory_delta,
                              meter_charge, meter_read, meter_release, seqbs_saves_memory, seqbs_step2_memory,
                              sweep, sweep_csv)
from flames.errors import SimulatedOOM

REF = MemoryModelParams(alpha=1000, k=10, n_in=10, n_out=20, v=100)


def test_beta_derivation():
    assert REF.beta == 4 * 30 * 100 == 12000


def test_bs_example():
    assert bs_step2_memory(REF) == 130000


def test_bs_k1_collapse():
    p = REF.with_k(1)
    assert bs_step2_memory(p) == p.alpha + p.beta


def test_seqbs_example():
    assert seqbs_step2_memory(REF) == 241000


def test_seqbs_alpha_zero_doubles():
    p = MemoryModelParams(0, 7, 3, 5, 11)
    assert seqbs_step2_memory(p) == 2 * bs_step2_memory(p)


def test_alpha_huge():
    p = MemoryModelParams(10**9, 10, 10, 20, 100)
    assert seqbs_step2_memory(p) == 1_000_240_000
    assert bs_step2_memory(p) == 10_000_120_000
    assert seqbs_saves_memory(p)


def test_delta_example():
    # beta = 4 * (1 + 2) * 1 = 12 is the closest integer-parameter stand-in for beta=10
    p = MemoryModelParams(100, 10, 1, 2, 1)
    assert p.beta == 12
    assert memory_delta(p) == 9 * 100 - 10 * 12 == 780


def test_delta_crossover_is_zero():
    p = MemoryModelParams(16, 2, 1, 1, 1)
    assert p.beta == 8
    assert memory_delta(p) == 0
    assert not seqbs_saves_memory(p)


def test_delta_negative_below_ratio():
    p = MemoryModelParams(10, 4, 1, 1, 1)
    assert memory_delta(p) < 0


def test_k1_delta_is_minus_beta():
    p = REF.with_k(1)
    assert memory_delta(p) == -p.beta


params_st = st.builds(MemoryModelParams, st.integers(0, 10**7), st.integers(1, 500), st.integers(0, 2000),
                      st.integers(1, 2000), st.integers(1, 50000))


@given(params_st)
def test_delta_identity(p):
    assert memory_delta(p) == bs_step2_memory(p) - seqbs_step2_memory(p)


@given(params_st)
def test_sign_law(p):
    if p.k >= 2:
        assert (memory_delta(p) <= 0) == (Fraction(p.alpha, p.beta) <= Fraction(p.k, p.k - 1))


@given(params_st)
def test_linear_in_k(p):
    assert bs_step2_memory(p.with_k(2 * p.k)) == 2 * bs_step2_memory(p)


def test_params_validation():
    with pytest.raises(ValueError):
        MemoryModelParams(1, 0, 1, 1, 1)
    with pytest.raises(ValueError):
        MemoryModelParams(-1, 1, 1, 1, 1)


class TestMeter:
    def test_trace_peak(self):
        m = Meter()
        meter_charge(m, 5)
        meter_charge(m, 3)
        meter_release(m, 3)
        r = meter_charge(m, 4)
        assert r.peak == 9
        assert not r.oom

    def test_trace_cap(self):
        m = Meter(cap=8)
        assert not meter_charge(m, 5).oom
        assert not meter_charge(m, 3).oom
        meter_release(m, 3)
        assert meter_charge(m, 4).oom

    def test_empty(self):
        r = meter_read(Meter())
        assert r.peak == 0 and not r.oom and r.per_step == ()

    def test_checked_raises(self):
        m = Meter(cap=10)
        with pytest.raises(SimulatedOOM) as info:
            m.charge_checked(11)
        assert info.value.cap == 10
        assert info.value.reading.peak == 11

    def test_peak_is_max_of_steps(self):
        m = Meter()
        for n in (4, 9, 2):
            m.charge(n)
            m.release(n)
            m.end_step()
        r = m.read()
        assert r.per_step == (4, 9, 2)
        assert r.peak == max(r.per_step)

    def test_over_release(self):
        with pytest.raises(ValueError):
            Meter().release(1)


def test_sweep_strictly_increasing():
    rows = sweep(REF)
    assert [r.k for r in rows] == list(BEAM_GRID)
    bs = [r.bs_bytes for r in rows]
    assert all(a < b for a, b in zip(bs, bs[1:]))


def test_sweep_cap_between_50_and_100():
    cap = (bs_step2_memory(REF.with_k(50)) + bs_step2_memory(REF.with_k(100))) // 2
    rows = sweep(REF, cap=cap)
    assert {r.k for r in rows if r.oom} == {100, 200}


def test_flames_row_is_k1():
    assert flames_memory(REF) == bs_step2_memory(REF.with_k(1))
    assert flames_memory(REF.with_k(200)) == flames_memory(REF)


def test_sweep_csv():
    text = sweep_csv(sweep(REF, ks=(1, 10), cap=100000))
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == ["k", "bs_bytes", "seqbs_bytes", "delta_bytes", "oom"]
    assert rows[1] == {"k": "10", "bs_bytes": "130000", "seqbs_bytes": "241000", "delta_bytes": "-111000",
                       "oom": "true"}
    assert rows[0]["oom"] == "false"
