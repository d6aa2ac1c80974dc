"""Multi-core cluster tests: tile planning, double-buffered execution
against the reference, and scaling sanity bounds."""

import numpy as np
import pytest

from streamsim.formats import gen_banded_csr, gen_dense_vector, csrmv_ref
from streamsim.kernels import run_csrmv
from streamsim.cluster import (N_WORKERS, TCDM_BYTES, plan_tiles,
                               simulate_cluster_csrmv, cluster_speedup)


def test_plan_small_matrix_single_tile():
    matrix = gen_banded_csr(64, 256, 4, seed=1)
    plan = plan_tiles(matrix, 16)
    assert plan.n_tiles == 1
    tile = plan.tiles[0]
    assert (tile.row0, tile.row1) == (0, 64)
    assert (tile.nnz0, tile.nnz1) == (0, matrix.n_nz)


def test_plan_uniform_matrix_splits_workers_evenly():
    matrix = gen_banded_csr(64, 256, 4, seed=2)
    plan = plan_tiles(matrix, 16)
    cuts = plan.tiles[0].cuts
    assert len(cuts) == N_WORKERS + 1
    spans = [cuts[w + 1] - cuts[w] for w in range(N_WORKERS)]
    assert spans == [8] * N_WORKERS


def test_plan_covers_rows_without_overlap():
    matrix = gen_banded_csr(3000, 512, 20, seed=3)
    plan = plan_tiles(matrix, 16, tcdm_bytes=TCDM_BYTES // 4)
    assert plan.n_tiles > 1
    assert plan.tiles[0].row0 == 0
    assert plan.tiles[-1].row1 == matrix.rows
    for prev, cur in zip(plan.tiles, plan.tiles[1:]):
        assert cur.row0 == prev.row1
        assert cur.nnz0 == prev.nnz1


@pytest.mark.parametrize("W", [16, 32])
def test_cluster_matches_reference_single_tile(W):
    matrix = gen_banded_csr(256, 256, 4, seed=4)
    x = gen_dense_vector(256, seed=5)
    y, stats = simulate_cluster_csrmv(matrix, x, W=W)
    want = csrmv_ref(matrix, x)
    assert np.max(np.abs(y - want)) <= 1e-10
    assert stats.n_tiles == 1
    assert stats.fmadds == matrix.n_nz


def test_cluster_matches_reference_multi_tile():
    # Small nnz but many rows so the row-pointer footprint forces tiling.
    matrix = gen_banded_csr(2048, 256, 8, seed=6)
    x = gen_dense_vector(256, seed=7)
    y, stats = simulate_cluster_csrmv(matrix, x, W=16)
    assert stats.n_tiles >= 2
    want = csrmv_ref(matrix, x)
    assert np.max(np.abs(y - want)) <= 1e-10


def test_cluster_base_variant_matches_reference():
    matrix = gen_banded_csr(128, 256, 4, seed=8)
    x = gen_dense_vector(256, seed=9)
    y, _ = simulate_cluster_csrmv(matrix, x, variant="base", W=16)
    assert np.max(np.abs(y - csrmv_ref(matrix, x))) <= 1e-10


def test_cluster_determinism():
    matrix = gen_banded_csr(512, 256, 10, seed=10)
    x = gen_dense_vector(256, seed=11)
    _, a = simulate_cluster_csrmv(matrix, x, W=16)
    _, b = simulate_cluster_csrmv(matrix, x, W=16)
    assert a.cycles == b.cycles
    assert a.per_core == b.per_core


def test_aggregate_utilization_below_streaming_ceiling():
    matrix = gen_banded_csr(1024, 1024, 100, seed=12)
    x = gen_dense_vector(1024, seed=13)
    _, stats = simulate_cluster_csrmv(matrix, x, W=16)
    assert 0.0 < stats.aggregate_utilization <= 0.8
    assert stats.aggregate_utilization == \
        stats.mac_ops / (N_WORKERS * stats.cycles)


def test_cluster_speedup_bounded_by_single_core_gain():
    """The cluster ratio (indirect streams vs scalar baseline, both on the
    cluster) cannot beat the single-core kernel ratio: the data mover and
    barriers only ever add overhead."""
    matrix = gen_banded_csr(256, 256, 20, seed=14)
    x = gen_dense_vector(256, seed=15)
    ratio, sb, si = cluster_speedup(matrix, x, W=16)
    assert ratio == pytest.approx(sb.cycles / si.cycles)
    base = run_csrmv("base", matrix, x, 16)[1]
    issr = run_csrmv("issr", matrix, x, 16)[1]
    assert 1.0 < ratio < base.cycles / issr.cycles
