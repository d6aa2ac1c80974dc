"""Sparse containers, random generators, Matrix Market ingestion, memory
image layout, and golden reference kernels.

Two reference flavors exist for every kernel: a naive sequential one (for
relative-error checks) and an order-replicating one that mirrors the
simulated kernels' accumulator partitioning and linear reduction order, so
simulator output can be compared bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .util import fma


class FormatError(Exception):
    pass


@dataclass(frozen=True)
class SparseFiber:
    """One sparse axis: parallel (values, indices) arrays of length n_nz
    over a logical dimension n.  Indices sorted and duplicate-free."""

    values: np.ndarray    # float64
    indices: np.ndarray   # unsigned, < n
    n: int

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "indices",
                           np.asarray(self.indices, dtype=np.int64))
        if len(self.values) != len(self.indices):
            raise FormatError("values/indices length mismatch")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= self.n:
                raise FormatError("fiber index out of range")
            if np.any(np.diff(self.indices) <= 0):
                raise FormatError("fiber indices must be strictly increasing")

    @property
    def n_nz(self):
        return len(self.values)


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse row: 32-bit row pointers over a concatenated fiber."""

    ptr: np.ndarray       # uint32, length rows+1
    indices: np.ndarray   # column indices, sorted per row
    values: np.ndarray    # float64
    shape: tuple          # (rows, cols)

    def __post_init__(self):
        object.__setattr__(self, "ptr", np.asarray(self.ptr, dtype=np.uint32))
        object.__setattr__(self, "indices",
                           np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=np.float64))
        rows, cols = self.shape
        if len(self.ptr) != rows + 1:
            raise FormatError("row pointer array must have rows+1 entries")
        if self.ptr[0] != 0 or self.ptr[-1] != len(self.values):
            raise FormatError("row pointers must span [0, n_nz]")
        if np.any(np.diff(self.ptr.astype(np.int64)) < 0):
            raise FormatError("row pointers must be non-decreasing")
        if len(self.indices) != len(self.values):
            raise FormatError("indices/values length mismatch")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= cols:
                raise FormatError("column index out of range")
        for r in range(rows):
            lo, hi = int(self.ptr[r]), int(self.ptr[r + 1])
            if hi - lo > 1 and np.any(np.diff(self.indices[lo:hi]) <= 0):
                raise FormatError(f"row {r} column indices not sorted")

    @property
    def rows(self):
        return self.shape[0]

    @property
    def cols(self):
        return self.shape[1]

    @property
    def n_nz(self):
        return len(self.values)

    @property
    def mean_nnz(self):
        return self.n_nz / self.rows if self.rows else 0.0

    def row_fiber(self, r):
        lo, hi = int(self.ptr[r]), int(self.ptr[r + 1])
        return self.indices[lo:hi], self.values[lo:hi]


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_sparse_vector(n, n_nz, W=32, seed=0):
    """Sparse vector with n_nz distinct uniform indices (sorted) and
    standard-normal values; deterministic per seed."""
    if n_nz > n:
        raise FormatError(f"n_nz={n_nz} exceeds dimension n={n}")
    if n >= (1 << W):
        raise FormatError(f"dimension {n} not addressable with {W}-bit indices")
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(n, size=n_nz, replace=False))
    values = rng.standard_normal(n_nz)
    return SparseFiber(values, indices, n)


def gen_banded_csr(rows, cols, nnz_per_row, W=32, seed=0):
    """CSR matrix with exactly nnz_per_row sorted uniform column indices in
    every row (a controlled-density stand-in for collection matrices)."""
    if nnz_per_row > cols:
        raise FormatError(f"nnz_per_row={nnz_per_row} exceeds cols={cols}")
    if cols > (1 << W):
        raise FormatError(f"{cols} columns not addressable with {W}-bit indices")
    rng = np.random.default_rng(seed)
    ptr = np.arange(rows + 1, dtype=np.uint32) * nnz_per_row
    idx_rows = [np.sort(rng.choice(cols, size=nnz_per_row, replace=False))
                for _ in range(rows)]
    indices = (np.concatenate(idx_rows) if idx_rows
               else np.empty(0, dtype=np.int64))
    values = rng.standard_normal(rows * nnz_per_row)
    return CsrMatrix(ptr, indices, values, (rows, cols))


def gen_dense_vector(n, seed=0):
    return np.random.default_rng(seed).standard_normal(n)


# ---------------------------------------------------------------------------
# Matrix Market
# ---------------------------------------------------------------------------

def load_matrix_market(path):
    """Read a MatrixMarket coordinate file (real/integer/pattern,
    general/symmetric) into a canonical CsrMatrix: symmetric entries
    expanded, duplicates summed, rows and columns sorted."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if (len(header) < 5 or header[0] != "%%MatrixMarket"
                or header[1].lower() != "matrix"
                or header[2].lower() != "coordinate"):
            raise FormatError(f"{path}: not a MatrixMarket coordinate file")
        value_type = header[3].lower()
        symmetry = header[4].lower()
        if value_type not in ("real", "integer", "pattern"):
            raise FormatError(f"{path}: unsupported value type {value_type}")
        if symmetry not in ("general", "symmetric"):
            raise FormatError(f"{path}: unsupported symmetry {symmetry}")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        try:
            rows, cols, count = (int(t) for t in line.split())
        except ValueError:
            raise FormatError(f"{path}: malformed size line") from None
        entries = {}
        seen = 0
        for raw in fh:
            raw = raw.strip()
            if not raw or raw.startswith("%"):
                continue
            toks = raw.split()
            try:
                i, j = int(toks[0]) - 1, int(toks[1]) - 1
                v = 1.0 if value_type == "pattern" else float(toks[2])
            except (ValueError, IndexError):
                raise FormatError(f"{path}: malformed entry {raw!r}") from None
            if not (0 <= i < rows and 0 <= j < cols):
                raise FormatError(f"{path}: entry ({i + 1},{j + 1}) out of "
                                  f"declared bounds {rows}x{cols}")
            seen += 1
            entries[(i, j)] = entries.get((i, j), 0.0) + v
            if symmetry == "symmetric" and i != j:
                entries[(j, i)] = entries.get((j, i), 0.0) + v
        if seen != count:
            raise FormatError(f"{path}: header declares {count} entries, "
                              f"found {seen}")
    return _coo_to_csr(entries, rows, cols)


def _coo_to_csr(entries, rows, cols):
    keys = sorted(entries)
    indices = np.array([j for _, j in keys], dtype=np.int64)
    values = np.array([entries[k] for k in keys], dtype=np.float64)
    ptr = np.zeros(rows + 1, dtype=np.uint32)
    for i, _ in keys:
        ptr[i + 1] += 1
    ptr = np.cumsum(ptr).astype(np.uint32)
    return CsrMatrix(ptr, indices, values, (rows, cols))


def write_matrix_market(path, matrix):
    """Write a CsrMatrix as a general real coordinate file."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{matrix.rows} {matrix.cols} {matrix.n_nz}\n")
        for r in range(matrix.rows):
            idx, vals = matrix.row_fiber(r)
            for j, v in zip(idx, vals):
                fh.write(f"{r + 1} {int(j) + 1} {float(v)!r}\n")


# ---------------------------------------------------------------------------
# Memory layout
# ---------------------------------------------------------------------------

@dataclass
class MemoryLayout:
    """Bump allocator assigning array base addresses inside one image."""

    base: int = 0
    limit: int = None
    cursor: int = field(init=False)
    regions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cursor = self.base

    def alloc(self, name, nbytes, align=8):
        addr = -(-self.cursor // align) * align
        if self.limit is not None and addr + nbytes > self.limit:
            raise FormatError(
                f"layout overflow placing {name!r}: {addr + nbytes:#x} past "
                f"limit {self.limit:#x}")
        self.cursor = addr + nbytes
        self.regions[name] = (addr, nbytes)
        return addr

    def place_doubles(self, name, values):
        blob = np.asarray(values, dtype="<f8").tobytes()
        return self.alloc(name, len(blob), 8), blob

    def place_indices(self, name, indices, W, align=None):
        dtype = "<u2" if W == 16 else "<u4"
        blob = np.asarray(indices, dtype=dtype).tobytes()
        return self.alloc(name, len(blob), align or (W // 8)), blob

    def place_words(self, name, words):
        blob = np.asarray(words, dtype="<u4").tobytes()
        return self.alloc(name, len(blob), 4), blob


def pack_doubles(values):
    return np.asarray(values, dtype="<f8").tobytes()


def unpack_doubles(blob):
    return np.frombuffer(blob, dtype="<f8").copy()


def pack_indices(indices, W):
    return np.asarray(indices, dtype="<u2" if W == 16 else "<u4").tobytes()


def pack_words(words):
    return np.asarray(words, dtype="<u4").tobytes()


# ---------------------------------------------------------------------------
# References
# ---------------------------------------------------------------------------

def reduce_linear(accs):
    """Linear reduction matching the kernels' teardown order."""
    total = accs[0]
    for a in accs[1:]:
        total += a
    return total


def spvv_ref(fiber, x):
    """Naive sequential fused-multiply-add dot product."""
    acc = 0.0
    for j, v in zip(fiber.indices, fiber.values):
        acc = fma(float(x[j]), float(v), acc)
    return acc


def spvv_ref_ordered(fiber, x, K):
    """Order-replicating dot product: element j accumulates into
    accumulator j mod K, followed by a linear reduction over the
    accumulators actually used."""
    m = fiber.n_nz
    if m == 0:
        return 0.0
    accs = [0.0] * min(m, K)
    for j, (col, v) in enumerate(zip(fiber.indices, fiber.values)):
        k = j % K
        accs[k] = fma(float(x[col]), float(v), accs[k])
    return reduce_linear(accs)


def _row_dot(idx, vals, x, K=None):
    if K is None:
        acc = 0.0
        for j, v in zip(idx, vals):
            acc = fma(float(x[j]), float(v), acc)
        return acc
    m = len(vals)
    if m == 0:
        return 0.0
    accs = [0.0] * min(m, K)
    for j in range(m):
        accs[j % K] = fma(float(x[idx[j]]), float(vals[j]), accs[j % K])
    return reduce_linear(accs)


def csrmv_ref(matrix, x, K=None):
    """Matrix-vector product; with K set, replicates the kernels' per-row
    accumulator order for bit-exact comparison."""
    if len(x) < matrix.cols:
        raise FormatError("dense vector shorter than matrix columns")
    y = np.empty(matrix.rows, dtype=np.float64)
    for r in range(matrix.rows):
        idx, vals = matrix.row_fiber(r)
        y[r] = _row_dot(idx, vals, x, K)
    return y


def csrmm_ref(matrix, dense, K=None):
    """Matrix-matrix product, column-by-column over the dense operand
    (matching the kernels' outer loop).  dense is row-major (cols_A, ncols)."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] < matrix.cols:
        raise FormatError("dense operand shape incompatible")
    ncols = dense.shape[1]
    out = np.empty((matrix.rows, ncols), dtype=np.float64)
    for c in range(ncols):
        out[:, c] = csrmv_ref(matrix, dense[:, c], K)
    return out


def codebook_ref(table, codes):
    return np.asarray([table[c] for c in codes], dtype=np.float64)


def scatter_ref(y, indices, values):
    """In-order scatter; on duplicate indices the last write wins."""
    out = np.array(y, dtype=np.float64)
    for i, v in zip(indices, values):
        out[i] = v
    return out
