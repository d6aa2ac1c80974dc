"""Core timing-model tests: the documented timing contract, hardware-loop
staggering, pseudo-dual-issue, and stall accounting."""

import pytest

from streamsim.isa import ProgramBuilder, ST_RD, ST_RS3
from streamsim.core import TimingContract, simulate, speedup
from streamsim.formats import gen_sparse_vector, gen_dense_vector
from streamsim.kernels import run_spvv


def _halt_only():
    b = ProgramBuilder()
    b.halt()
    return b.build()


def test_halt_runs_one_cycle():
    _, st = simulate(_halt_only())
    assert st.cycles == 1
    assert st.fmadds == 0


def test_fmadd_retires_at_issue_plus_latency():
    def run(latency):
        b = ProgramBuilder()
        b.fmadd(3, 4, 5, 6)
        b.halt()
        return simulate(b.build(), TimingContract(fpu_latency=latency))[1]

    s4, s7 = run(4), run(7)
    # The machine quiesces exactly when the single multiply-add retires, so
    # total cycles move one-for-one with the latency.
    assert s4.last_fmadd_retire == s4.cycles
    assert s7.last_fmadd_retire == s7.cycles
    assert s7.cycles - s4.cycles == 3
    assert s4.fmadds == s4.mac_ops == 1


def test_scfgw_occupies_two_cycles():
    b = ProgramBuilder()
    for _ in range(4):
        b.scfgw(0, 0, 0)      # status writes: config side effects only
    b.halt()
    _, st = simulate(b.build())
    assert st.cycles == 1 + 4 * TimingContract().scfgw_cycles


def test_self_speedup_is_one():
    fiber = gen_sparse_vector(256, 16, seed=1)
    x = gen_dense_vector(256, seed=2)
    _, st = run_spvv("base", fiber, x, 32)
    assert speedup(st, st) == 1.0


def test_determinism():
    fiber = gen_sparse_vector(512, 64, seed=3)
    x = gen_dense_vector(512, seed=4)
    _, a = run_spvv("issr", fiber, x, 16)
    _, b = run_spvv("issr", fiber, x, 16)
    assert a.cycles == b.cycles
    assert a.stalls == b.stalls
    assert a.fmadds == b.fmadds


def _frep_program(n, stagger, trailing_ints=0):
    b = ProgramBuilder()
    b.li(9, n)
    b.frep(9, 1, stagger, ST_RD | ST_RS3)
    b.fmadd(2, 10, 11, 2)
    for _ in range(trailing_ints):
        b.addi(20, 0, 1)
    b.fp_sync()
    b.halt()
    return b.build()


def test_frep_stagger_covers_latency():
    """Stagger 3 gives dependency distance 4 = L: one multiply-add per cycle
    with no read-after-write stalls."""
    _, st = simulate(_frep_program(300, 3))
    assert st.fmadds == 300
    assert "raw" not in st.stalls


def test_frep_stagger_below_latency_stalls():
    """Stagger 2 gives distance 3 < L=4: one stall per three multiply-adds
    in steady state (the trailing iteration's stall is never paid)."""
    s3 = simulate(_frep_program(300, 3))[1]
    s2 = simulate(_frep_program(300, 2))[1]
    assert s2.cycles - s3.cycles == 300 // 3 - 1
    assert s2.stalls.get("raw", 0) >= 90


def test_pseudo_dual_issue_hides_integer_work():
    """Independent integer instructions after a hardware loop cost nothing
    while the FPU drains."""
    plain = simulate(_frep_program(40, 3))[1]
    filled = simulate(_frep_program(40, 3, trailing_ints=5))[1]
    assert filled.cycles == plain.cycles


def test_fp_sync_stall_is_accounted():
    _, st = simulate(_frep_program(64, 3))
    assert st.stalls.get("fp_sync", 0) > 0


def test_load_use_slot_fillable():
    def run(fill):
        b = ProgramBuilder()
        b.li(1, 0x100)
        b.lw(5, 1, 0)
        if fill:
            b.addi(7, 0, 1)   # independent work in the load-use slot
        b.add(6, 5, 5)
        b.halt()
        return simulate(b.build())[1]

    dep, filled = run(False), run(True)
    assert dep.cycles == filled.cycles
    assert dep.stalls.get("core_hazard", 0) == 1
    assert "core_hazard" not in filled.stalls


def test_halfword_load_zero_extends():
    b = ProgramBuilder()
    b.li(1, 0x100)
    b.lh(5, 1, 0)
    b.addi(5, 5, 0)           # space out the load-use slot
    b.sw(5, 1, 8)
    b.halt()
    m, _ = simulate(b.build(), mem_image=[(0x100, (0x8001).to_bytes(2,
                                                                    "little"))])
    assert m.memory.read_raw(0x108, 4) == 0x8001   # not sign-extended
    assert m.cc.core.rf.read_x(5) == 0x8001


def test_utilization_metrics():
    fiber = gen_sparse_vector(4096, 500, seed=9)
    x = gen_dense_vector(4096, seed=10)
    _, st = run_spvv("issr", fiber, x, 16)
    assert st.utilization == st.mac_ops / st.cycles
    # The reduction-free metric stops the clock at the last multiply-add,
    # so it can only be higher.
    assert st.utilization_reduction_free >= st.utilization
    assert st.fmadds == 500


def test_queue_depth_backpressures_core():
    """With a queue of 1 the core serializes against the FPU; deepening the
    queue can only help."""
    fiber = gen_sparse_vector(1024, 200, seed=13)
    x = gen_dense_vector(1024, seed=14)
    shallow = run_spvv("base", fiber, x, 16,
                       TimingContract(fpu_queue_depth=1))[1]
    deep = run_spvv("base", fiber, x, 16)[1]
    assert shallow.cycles >= deep.cycles
    assert shallow.stalls.get("fpu_queue_full", 0) > 0
