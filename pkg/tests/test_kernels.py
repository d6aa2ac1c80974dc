"""Kernel builder/runner tests: functional correctness against the
references, degenerate cases, dispatch paths and contract overrides."""

import numpy as np
import pytest

from streamsim.isa import ProgramBuilder
from streamsim.core import TimingContract
from streamsim.formats import (FormatError, SparseFiber, gen_sparse_vector,
                               gen_banded_csr, gen_dense_vector, CsrMatrix,
                               spvv_ref, csrmv_ref)
from streamsim.kernels import (accumulators_for, KernelDescriptor,
                               emit_row_range, run_spvv, run_csrmv,
                               run_csrmm, run_codebook, run_scatter)

VARIANTS = ("base", "ssr", "issr")


def test_accumulators_for():
    assert accumulators_for(16, 4) == 4    # ceil(4 * 4/5)
    assert accumulators_for(32, 4) == 3    # ceil(4 * 2/3)
    assert accumulators_for(16, 1) == 1
    assert accumulators_for(32, 7) == 5


def test_descriptor_validation():
    with pytest.raises(ValueError, match="kernel"):
        KernelDescriptor("sort", "base")
    with pytest.raises(ValueError, match="variant"):
        KernelDescriptor("spvv", "simd")
    with pytest.raises(ValueError, match="width"):
        KernelDescriptor("spvv", "base", W=24)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("W", [16, 32])
def test_spvv_matches_reference(variant, W):
    fiber = gen_sparse_vector(512, 60, seed=17)
    x = gen_dense_vector(512, seed=18)
    got, stats = run_spvv(variant, fiber, x, W)
    naive = spvv_ref(fiber, x)
    assert abs(got - naive) <= 1e-10 * max(1.0, abs(naive))
    assert stats.fmadds == 60


@pytest.mark.parametrize("variant", VARIANTS)
def test_spvv_empty_fiber(variant):
    fiber = SparseFiber([], [], 16)
    got, stats = run_spvv(variant, fiber, np.ones(16), 16)
    assert got == 0.0
    assert stats.cycles < 30


def test_spvv_tiny_rows_every_dispatch_path():
    """n_nz from 1 through K+2 exercises every unrolled path plus the
    hardware-loop path."""
    x = gen_dense_vector(64, seed=19)
    for n in range(1, 7):
        fiber = gen_sparse_vector(64, n, seed=20 + n)
        for W in (16, 32):
            run_spvv("issr", fiber, x, W)   # raises on any mismatch


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("W", [16, 32])
def test_csrmv_matches_reference(variant, W):
    matrix = gen_banded_csr(24, 128, 5, seed=23)
    x = gen_dense_vector(128, seed=24)
    got, _ = run_csrmv(variant, matrix, x, W)
    naive = np.array([np.dot(v, x[i]) for i, v in
                      map(matrix.row_fiber, range(matrix.rows))])
    assert np.max(np.abs(got - naive)) <= 1e-10


def test_csrmv_handles_empty_and_ragged_rows():
    ptr = [0, 0, 3, 3, 4, 10]
    indices = [1, 4, 9, 0, 0, 1, 2, 3, 5, 8]
    values = np.arange(1.0, 11.0)
    matrix = CsrMatrix(ptr, indices, values, (5, 16))
    x = gen_dense_vector(16, seed=25)
    for variant in VARIANTS:
        got, _ = run_csrmv(variant, matrix, x, 16)
        assert got[0] == 0.0 and got[2] == 0.0


def test_csrmv_y_stride():
    matrix = gen_banded_csr(8, 64, 3, seed=26)
    x = gen_dense_vector(64, seed=27)
    plain, _ = run_csrmv("issr", matrix, x, 16)
    strided, _ = run_csrmv("issr", matrix, x, 16, y_stride=2)
    assert np.array_equal(plain, strided)


def test_single_row_csrmv_close_to_spvv():
    """A 1-row matrix degenerates to the dot product up to a constant of
    row-loop setup."""
    fiber = gen_sparse_vector(1024, 200, seed=28)
    matrix = CsrMatrix([0, fiber.n_nz], fiber.indices, fiber.values,
                       (1, 1024))
    x = gen_dense_vector(1024, seed=29)
    cy_spvv = run_spvv("issr", fiber, x, 16)[1].cycles
    cy_csrmv = run_csrmv("issr", matrix, x, 16)[1].cycles
    assert abs(cy_csrmv - cy_spvv) < 60


def test_cycles_monotonic_in_density():
    x = gen_dense_vector(4096, seed=30)
    cycles = []
    for nnz in (8, 64, 256):
        fiber = gen_sparse_vector(4096, nnz, seed=31)
        cycles.append(run_spvv("issr", fiber, x, 16)[1].cycles)
    assert cycles[0] < cycles[1] < cycles[2]


def test_csrmv_incremental_cycle_model():
    """Adding nonzeros to every row costs the streaming rate (1 element per
    1/0.8 cycles at W=16) within 10%."""
    x = gen_dense_vector(1024, seed=32)
    rows = 128
    c = {}
    for nnz in (50, 100):
        matrix = gen_banded_csr(rows, 1024, nnz, seed=33)
        c[nnz] = run_csrmv("issr", matrix, x, 16)[1].cycles
    predicted = rows * 50 / 0.8
    assert abs((c[100] - c[50]) - predicted) <= 0.10 * predicted


@pytest.mark.parametrize("W", [16, 32])
def test_csrmm_matches_reference(W):
    matrix = gen_banded_csr(12, 128, 4, seed=34)
    dense = np.stack([gen_dense_vector(128, seed=35 + c) for c in range(4)],
                     axis=1)
    for variant in VARIANTS:
        got, _ = run_csrmm(variant, matrix, dense, W)
        naive = np.stack([
            [np.dot(v, dense[i, c]) for i, v in
             map(matrix.row_fiber, range(matrix.rows))]
            for c in range(4)], axis=1)
        assert np.max(np.abs(got - naive)) <= 1e-10


def test_csrmm_requires_power_of_two_columns():
    matrix = gen_banded_csr(4, 64, 2, seed=36)
    dense = np.ones((64, 3))
    with pytest.raises(FormatError, match="power-of-two"):
        run_csrmm("issr", matrix, dense, 16)


def test_row_dispatch_accumulator_guard():
    b = ProgramBuilder()
    with pytest.raises(FormatError, match="at most"):
        emit_row_range(b, "issr", 16, 5, 5, "t")


def test_latency_override_rederives_accumulators():
    """With L=1 the kernel runs a single accumulator and stays correct."""
    fiber = gen_sparse_vector(512, 50, seed=37)
    x = gen_dense_vector(512, seed=38)
    contract = TimingContract(fpu_latency=1)
    got, _ = run_spvv("issr", fiber, x, 16, contract)
    naive = spvv_ref(fiber, x)
    assert abs(got - naive) <= 1e-10 * max(1.0, abs(naive))
    matrix = gen_banded_csr(6, 128, 7, seed=39)
    run_csrmv("issr", matrix, gen_dense_vector(128, seed=40), 32, contract)


def test_explicit_accumulator_override():
    fiber = gen_sparse_vector(256, 30, seed=41)
    x = gen_dense_vector(256, seed=42)
    for K in (1, 2, 4):
        run_spvv("issr", fiber, x, 16, K=K)   # verified internally per K


# ---------------------------------------------------------------------------
# Demo kernels
# ---------------------------------------------------------------------------

def test_codebook_example():
    got, _ = run_codebook([1.5, 2.5], [0, 1, 1, 0])
    assert list(got) == [1.5, 2.5, 2.5, 1.5]


def test_codebook_random():
    rng = np.random.default_rng(43)
    table = rng.standard_normal(64)
    codes = rng.integers(0, 64, size=200)
    for W in (16, 32):
        got, _ = run_codebook(table, codes, W)
        assert np.array_equal(got, table[codes])


def test_codebook_rejects_out_of_range_codes():
    with pytest.raises(FormatError, match="out of table range"):
        run_codebook([1.0, 2.0], [0, 2])


def test_scatter_example():
    got, _ = run_scatter(np.zeros(4), [3, 1], [7.0, 8.0])
    assert list(got) == [0.0, 8.0, 0.0, 7.0]


def test_scatter_identity_is_copy():
    vals = gen_dense_vector(32, seed=44)
    got, _ = run_scatter(np.zeros(32), np.arange(32), vals)
    assert np.array_equal(got, vals)


def test_scatter_random_permutation():
    rng = np.random.default_rng(45)
    perm = rng.permutation(64)
    vals = rng.standard_normal(64)
    y0 = rng.standard_normal(64)
    for W in (16, 32):
        got, _ = run_scatter(y0, perm, vals, W)
        want = y0.copy()
        want[perm] = vals
        assert np.array_equal(got, want)
