"""Program builders and runners for the evaluated kernels:
{base, ssr, issr} x {SpVV, CsrMV, CsrMM} x {W=16, W=32}, plus the
codebook-decode and scatter demo kernels.

Variant conventions (see core module for the timing contract):

  * base: pure integer/FP loop, 9 issue slots per nonzero for SpVV.
  * ssr:  stream unit 0 (register f0) streams the sparse values affinely,
          7 issue slots per nonzero.
  * issr: unit 0 streams values, unit 1 (register f1) gathers the dense
          operand through the index stream; the inner loop is a hardware
          loop over a single staggered FMADD.

All builders are pure; the run_* helpers lay operands out in memory, run
the simulation, extract results and verify them bit-for-bit against the
order-replicating reference before returning stats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .isa import ProgramBuilder, ST_RD, ST_RS3
from .core import TimingContract, simulate
from .stream import (Mode, Direction, pack_idxcfg, REG_REPEAT, REG_BOUND0,
                     REG_STRIDE0, REG_IDXCFG, REG_IDX_BASE, REG_DATA_BASE)
from .formats import (MemoryLayout, FormatError, unpack_doubles, spvv_ref_ordered,
                      csrmv_ref, csrmm_ref, codebook_ref, scatter_ref)

VARIANTS = ("base", "ssr", "issr")
KERNELS = ("spvv", "csrmv", "csrmm", "codebook", "scatter")


class KernelResultMismatch(Exception):
    """Simulated result differs from the order-replicating reference."""


def accumulators_for(W, fpu_latency=4):
    """Smallest accumulator count K with K >= L * peak data rate."""
    peak = 4 / 5 if W == 16 else 2 / 3
    return max(1, math.ceil(fpu_latency * peak))


@dataclass(frozen=True)
class KernelDescriptor:
    kernel: str
    variant: str
    W: int = 32
    K: int = 0          # accumulators; 0 = derive from W and FPU latency
    U0: int = 0         # row-unroll threshold; 0 = same as K
    x_shift: int = 0    # power-of-two dense-operand stride exponent
    y_stride: int = 1   # result stride in elements

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.W not in (16, 32):
            raise ValueError(f"index width must be 16 or 32, got {self.W}")

    def resolve(self, contract):
        k = self.K or accumulators_for(self.W, contract.fpu_latency)
        u0 = self.U0 or k
        return k, u0


# ---------------------------------------------------------------------------
# Shared emission helpers
# ---------------------------------------------------------------------------

# Integer register allocation shared by all builders.
_CFG = 1        # stream-config scratch
_CFG2 = 2
_IDXT = 5       # loaded index / address temp
_IDXP = 6       # index pointer
_VALP = 7       # value pointer (base variant)
_XB = 8         # dense base
_IEND = 9       # inner-loop end
_YP = 10        # result pointer
_T0 = 11        # ptr[i]
_T1 = 12        # ptr[i+1]
_M = 13         # row nonzero count
_FCNT = 14      # hardware-loop trip count
_KC = 15        # constant K
_PP = 16        # row-pointer pointer
_PEND = 17      # row-pointer end
_COL = 18       # dense-column counter
_XCB = 19       # per-column dense base
_YCB = 20       # per-column result base
_C1, _C2, _C3 = 21, 22, 23   # small-row dispatch constants
_TMP = 24
_YSTR = 25      # result row stride in bytes

_ACC = 2        # first FP accumulator (f2..); f0/f1 are stream-mapped

# Registers preloaded with the small-row dispatch constants 1..3.
_SMALL_ROW_REGS = {1: _C1, 2: _C2, 3: _C3}


def _cfg_affine_values(b, unit, count, base, stride=8):
    b.li(_CFG, count);  b.scfgw(unit, REG_BOUND0, _CFG)
    b.li(_CFG, stride); b.scfgw(unit, REG_STRIDE0, _CFG)
    b.li(_CFG, pack_idxcfg(Mode.AFFINE)); b.scfgw(unit, REG_IDXCFG, _CFG)
    b.li(_CFG, 1);      b.scfgw(unit, REG_REPEAT, _CFG)


def _cfg_indirect(b, unit, count, idx_base, W, shift=0,
                  direction=Direction.READ):
    b.li(_CFG2, count); b.scfgw(unit, REG_BOUND0, _CFG2)
    b.li(_CFG2, pack_idxcfg(Mode.INDIRECT, width=W, direction=direction,
                            shift=shift))
    b.scfgw(unit, REG_IDXCFG, _CFG2)
    b.li(_CFG2, 1);     b.scfgw(unit, REG_REPEAT, _CFG2)
    b.li(_CFG2, idx_base); b.scfgw(unit, REG_IDX_BASE, _CFG2)


def _launch(b, unit, data_base, reg=_CFG):
    b.li(reg, data_base)
    b.scfgw(unit, REG_DATA_BASE, reg)


def _reduce_store(b, used, yreg=_YP, offset=0):
    """Linear reduction of f2..f2+used-1 into f2, then store."""
    for k in range(1, used):
        b.fadd(_ACC, _ACC, _ACC + k)
    b.fsd(_ACC, yreg, offset)


def _idx_load(b, W):
    """Load one index: LH (16-bit) or LW (32-bit), zero-extending."""
    if W == 16:
        b.lh(_IDXT, _IDXP, 0)
    else:
        b.lw(_IDXT, _IDXP, 0)


# ---------------------------------------------------------------------------
# SpVV
# ---------------------------------------------------------------------------

def build_spvv(desc, n_nz, idx_base, val_base, x_base, y_base,
               contract=None):
    contract = contract or TimingContract()
    K, _ = desc.resolve(contract)
    b = ProgramBuilder()
    if n_nz == 0:
        b.fmv_zero(_ACC)
        b.li(_YP, y_base)
        b.fsd(_ACC, _YP, 0)
        b.fp_sync()
        b.halt()
        return b.build()
    if desc.variant == "base":
        _spvv_base(b, desc.W, n_nz, idx_base, val_base, x_base, desc.x_shift)
    elif desc.variant == "ssr":
        _spvv_ssr(b, desc.W, n_nz, idx_base, val_base, x_base, desc.x_shift)
    else:
        _spvv_issr(b, desc.W, K, n_nz, idx_base, val_base, x_base,
                   desc.x_shift)
        b.li(_YP, y_base)
        _reduce_store(b, min(n_nz, K))
        b.fp_sync()
        b.ssr_disable()
        b.halt()
        return b.build()
    b.li(_YP, y_base)
    b.fsd(_ACC, _YP, 0)
    b.fp_sync()
    if desc.variant == "ssr":
        b.ssr_disable()
    b.halt()
    return b.build()


def _spvv_base(b, W, n, idx_base, val_base, x_base, x_shift):
    step = W // 8
    b.li(_IDXP, idx_base)
    b.li(_VALP, val_base)
    b.li(_XB, x_base)
    b.li(_IEND, idx_base + step * n)
    b.fmv_zero(_ACC)
    b.label("loop")
    _idx_load(b, W)
    b.addi(_IDXP, _IDXP, step)
    b.addi(_VALP, _VALP, 8)
    b.slli(_IDXT, _IDXT, 3 + x_shift)
    b.add(_IDXT, _IDXT, _XB)
    b.fld(3, _IDXT, 0)           # dense element
    b.fld(4, _VALP, -8)          # sparse value
    b.fmadd(_ACC, 3, 4, _ACC)
    b.bne(_IDXP, _IEND, "loop")


def _spvv_ssr(b, W, n, idx_base, val_base, x_base, x_shift):
    step = W // 8
    _cfg_affine_values(b, 0, n, val_base)
    _launch(b, 0, val_base)
    b.ssr_enable()
    b.li(_IDXP, idx_base)
    b.li(_XB, x_base)
    b.li(_IEND, idx_base + step * n)
    b.fmv_zero(_ACC)
    b.label("loop")
    _idx_load(b, W)
    b.addi(_IDXP, _IDXP, step)
    b.slli(_IDXT, _IDXT, 3 + x_shift)
    b.add(_IDXT, _IDXT, _XB)
    b.fld(3, _IDXT, 0)
    b.fmadd(_ACC, 3, 0, _ACC)    # f0 = value stream
    b.bne(_IDXP, _IEND, "loop")


def _spvv_issr(b, W, K, n, idx_base, val_base, x_base, x_shift):
    _cfg_affine_values(b, 0, n, val_base)
    _cfg_indirect(b, 1, n, idx_base, W, shift=x_shift)
    used = min(n, K)
    for k in range(used):
        b.fmv_zero(_ACC + k)
    if n > K:
        b.li(_FCNT, n - K)
    # Launch both streams only after the full setup, right before enable.
    _launch(b, 0, val_base, reg=_CFG)
    _launch(b, 1, x_base, reg=_CFG2)
    b.ssr_enable()
    if n <= K:
        for k in range(n):
            b.fmadd(_ACC + k, 1, 0, _ACC + k)
    else:
        for k in range(K):
            b.fmadd(_ACC + k, 1, 0, _ACC + k)
        b.frep(_FCNT, 1, K - 1, ST_RD | ST_RS3)
        b.fmadd(_ACC, 1, 0, _ACC)


def run_spvv(variant, fiber, x, W=32, contract=None, idx_align=None,
             K=0):
    """Lay out a sparse-dense dot product, simulate, verify, return
    (result, stats)."""
    desc = KernelDescriptor("spvv", variant, W, K=K)
    lay = MemoryLayout(base=0x100)
    idx_addr, idx_blob = lay.place_indices("idx", fiber.indices, W,
                                           align=idx_align)
    val_addr, val_blob = lay.place_doubles("val", fiber.values)
    x_addr, x_blob = lay.place_doubles("x", np.asarray(x, dtype=np.float64))
    y_addr = lay.alloc("y", 8)
    contract = _fit_contract(contract, lay.cursor)
    prog = build_spvv(desc, fiber.n_nz, idx_addr, val_addr, x_addr, y_addr,
                      contract)
    mach, stats = simulate(prog, contract,
                           mem_image=[(idx_addr, idx_blob),
                                      (val_addr, val_blob),
                                      (x_addr, x_blob)])
    got = unpack_doubles(mach.memory.dump_image(y_addr, 8))[0]
    K, _ = desc.resolve(contract)
    ref = (spvv_ref_ordered(fiber, x, K) if variant == "issr"
           else spvv_ref_ordered(fiber, x, 1))
    _check_bits(np.asarray([got]), np.asarray([ref]), f"spvv/{variant}/W{W}")
    return got, stats


# ---------------------------------------------------------------------------
# CsrMV / CsrMM
# ---------------------------------------------------------------------------

def build_csrmv(desc, matrix_shape, n_nz, ptr_base, idx_base, val_base,
                x_base, y_base, contract=None, ncols_dense=1):
    """CsrMV program; with ncols_dense > 1 this is CsrMM: an outer loop over
    dense columns re-running the row schedule with per-column base bumps."""
    contract = contract or TimingContract()
    K, U0 = desc.resolve(contract)
    rows, cols = matrix_shape
    if ncols_dense & (ncols_dense - 1):
        raise FormatError("matrix-matrix product needs a power-of-two "
                          "dense column count")
    col_shift = int(ncols_dense).bit_length() - 1  # log2 for power of two
    y_row_stride = 8 * desc.y_stride * ncols_dense
    b = ProgramBuilder()

    if desc.variant == "issr":
        b.li(_KC, U0)
        for c, reg in zip((1, 2, 3), (_C1, _C2, _C3)):
            if c < U0:
                b.li(reg, c)
    b.li(_YSTR, y_row_stride)
    b.li(_COL, ncols_dense)
    b.li(_XCB, x_base)
    b.li(_YCB, y_base)

    b.label("column")
    if desc.variant == "issr" and n_nz:
        # Config rewritten per column so one- and many-column products run
        # the identical per-column schedule.
        _cfg_affine_values(b, 0, n_nz, val_base)
        _cfg_indirect(b, 1, n_nz, idx_base, desc.W, shift=col_shift)
        _launch(b, 0, val_base, reg=_CFG)
        b.scfgw(1, REG_DATA_BASE, _XCB)
        b.ssr_enable()
    if desc.variant == "ssr" and n_nz:
        _cfg_affine_values(b, 0, n_nz, val_base)
        _launch(b, 0, val_base)
        b.ssr_enable()
    b.li(_PP, ptr_base)
    b.li(_PEND, ptr_base + 4 * rows)
    b.lw(_T0, _PP, 0)
    b.add(_YP, _YCB, 0)
    if desc.variant != "issr":
        b.li(_IDXP, idx_base)
        b.li(_VALP, val_base)
        b.add(_XB, _XCB, 0)

    emit_row_range(b, desc.variant, desc.W, K, U0, "c", col_shift)

    # End of one dense column.
    if desc.variant in ("ssr", "issr") and n_nz:
        b.fp_sync()
        b.ssr_disable()
    b.addi(_COL, _COL, -1)
    b.addi(_XCB, _XCB, 8)
    b.addi(_YCB, _YCB, 8 * desc.y_stride)
    b.bne(_COL, 0, "column")
    b.fp_sync()
    b.halt()
    return b.build()


def emit_row_range(b, variant, W, K, U0, tag, col_shift=0):
    """Loop over the row-pointer range [_PP, _PEND): compute each row's
    nonzero count, run the per-variant row body, store y, advance.

    Expects _PP/_PEND/_T0/_YP/_YSTR preset (plus _IDXP/_VALP/_XB for the
    scalar variants); `tag` keeps labels unique across multiple emissions.
    """
    if variant == "issr" and U0 > 1 + len(_SMALL_ROW_REGS):
        raise FormatError(f"row dispatch supports at most "
                          f"{1 + len(_SMALL_ROW_REGS)} accumulators, "
                          f"got {U0}")
    b.label(f"{tag}_row")
    b.lw(_T1, _PP, 4)
    b.addi(_PP, _PP, 4)
    b.sub(_M, _T1, _T0)
    if variant == "issr":
        # Empty rows are folded into the issr dispatch chain, so the common
        # case pays no standalone zero test.
        _emit_issr_row(b, K, U0, tag)
    else:
        b.bne(_M, 0, f"{tag}_work")
        b.fmv_zero(_ACC)
        b.fsd(_ACC, _YP, 0)
        b.jump(f"{tag}_next")
        b.label(f"{tag}_work")
        _emit_scalar_row(b, variant, W, col_shift, tag)
    b.label(f"{tag}_next")
    b.add(_YP, _YP, _YSTR)
    b.add(_T0, _T1, 0)
    b.bne(_PP, _PEND, f"{tag}_row")


def _emit_scalar_row(b, variant, W, col_shift, tag):
    """Row loop body for the base (9-slot) and ssr (7-slot) variants."""
    step = W // 8
    shift = int(math.log2(step))
    b.slli(_IEND, _M, shift)
    b.add(_IEND, _IEND, _IDXP)
    b.fmv_zero(_ACC)
    b.label(f"{tag}_inner")
    _idx_load(b, W)
    b.addi(_IDXP, _IDXP, step)
    if variant == "base":
        b.addi(_VALP, _VALP, 8)
    b.slli(_IDXT, _IDXT, 3 + col_shift)
    b.add(_IDXT, _IDXT, _XB)
    b.fld(3, _IDXT, 0)
    if variant == "base":
        b.fld(4, _VALP, -8)
        b.fmadd(_ACC, 3, 4, _ACC)
    else:
        b.fmadd(_ACC, 3, 0, _ACC)
    b.bne(_IDXP, _IEND, f"{tag}_inner")
    b.fsd(_ACC, _YP, 0)


def _emit_issr_row(b, K, U0, tag):
    """Row body: rows with m <= U0 nonzeros take a straight-line unrolled
    path; longer rows an unrolled prologue + hardware loop; both end in a
    linear reduction and a store.  Empty rows are tested last in the chain
    (they are the rare case) and store 0.0 without touching the streams."""
    for m in range(1, U0):
        b.bne(_M, _SMALL_ROW_REGS[m], f"{tag}_gt{m}")
        _emit_unrolled(b, m)
        b.jump(f"{tag}_done")
        b.label(f"{tag}_gt{m}")
    b.bne(_M, _KC, f"{tag}_chk0")
    _emit_unrolled(b, U0)
    b.jump(f"{tag}_done")
    b.label(f"{tag}_chk0")
    b.bne(_M, 0, f"{tag}_big")
    b.fmv_zero(_ACC)
    b.fsd(_ACC, _YP, 0)
    b.jump(f"{tag}_done")
    b.label(f"{tag}_big")
    for k in range(K):
        b.fmv_zero(_ACC + k)
    for k in range(K):
        b.fmadd(_ACC + k, 1, 0, _ACC + k)
    b.addi(_FCNT, _M, -K)
    b.frep(_FCNT, 1, K - 1, ST_RD | ST_RS3)
    b.fmadd(_ACC, 1, 0, _ACC)
    _reduce_store(b, K)
    b.label(f"{tag}_done")


def _emit_unrolled(b, m):
    for k in range(m):
        b.fmv_zero(_ACC + k)
    for k in range(m):
        b.fmadd(_ACC + k, 1, 0, _ACC + k)
    _reduce_store(b, m)


def _layout_csr(lay, matrix, W):
    ptr_addr, ptr_blob = lay.place_words("ptr", matrix.ptr)
    idx_addr, idx_blob = lay.place_indices("idx", matrix.indices, W)
    val_addr, val_blob = lay.place_doubles("val", matrix.values)
    return (ptr_addr, idx_addr, val_addr,
            [(ptr_addr, ptr_blob), (idx_addr, idx_blob),
             (val_addr, val_blob)])


def run_csrmv(variant, matrix, x, W=32, contract=None, y_stride=1,
              K=0):
    desc = KernelDescriptor("csrmv", variant, W, K=K, y_stride=y_stride)
    lay = MemoryLayout(base=0x100)
    ptr_addr, idx_addr, val_addr, image = _layout_csr(lay, matrix, W)
    x_addr, x_blob = lay.place_doubles("x", np.asarray(x, dtype=np.float64))
    image.append((x_addr, x_blob))
    y_addr = lay.alloc("y", 8 * y_stride * matrix.rows)
    contract = _fit_contract(contract, lay.cursor)
    prog = build_csrmv(desc, matrix.shape, matrix.n_nz, ptr_addr, idx_addr,
                       val_addr, x_addr, y_addr, contract)
    mach, stats = simulate(prog, contract, mem_image=image)
    raw = unpack_doubles(mach.memory.dump_image(y_addr,
                                                8 * y_stride * matrix.rows))
    got = raw[::y_stride]
    K, _ = desc.resolve(contract)
    ref = csrmv_ref(matrix, x, K if variant == "issr" else 1)
    _check_bits(got, ref, f"csrmv/{variant}/W{W}")
    return got, stats


def run_csrmm(variant, matrix, dense, W=32, contract=None, K=0):
    dense = np.asarray(dense, dtype=np.float64)
    ncols = dense.shape[1]
    desc = KernelDescriptor("csrmm", variant, W, K=K)
    lay = MemoryLayout(base=0x100)
    ptr_addr, idx_addr, val_addr, image = _layout_csr(lay, matrix, W)
    x_addr, x_blob = lay.place_doubles("dense", dense.reshape(-1))
    image.append((x_addr, x_blob))
    y_addr = lay.alloc("y", 8 * matrix.rows * ncols)
    contract = _fit_contract(contract, lay.cursor)
    prog = build_csrmv(desc, matrix.shape, matrix.n_nz, ptr_addr, idx_addr,
                       val_addr, x_addr, y_addr, contract, ncols_dense=ncols)
    mach, stats = simulate(prog, contract, mem_image=image)
    got = unpack_doubles(
        mach.memory.dump_image(y_addr, 8 * matrix.rows * ncols)
    ).reshape(matrix.rows, ncols)
    K, _ = desc.resolve(contract)
    ref = csrmm_ref(matrix, dense, K if variant == "issr" else 1)
    _check_bits(got.reshape(-1), ref.reshape(-1), f"csrmm/{variant}/W{W}")
    return got, stats


# ---------------------------------------------------------------------------
# Demo kernels: codebook decode and scatter
# ---------------------------------------------------------------------------

_FZERO = 31   # FP register pinned to +0.0 for register moves


def build_codebook(n, code_base, table_base, out_base, W, contract=None):
    """out[k] = table[code[k]]: unit 1 gathers through the code stream while
    unit 0 runs an affine WRITE job over the output."""
    b = ProgramBuilder()
    b.fmv_zero(_FZERO)
    _cfg_affine_values(b, 0, n, out_base)
    b.li(_CFG, pack_idxcfg(Mode.AFFINE, direction=Direction.WRITE))
    b.scfgw(0, REG_IDXCFG, _CFG)
    _cfg_indirect(b, 1, n, code_base, W)
    b.li(_FCNT, n)
    _launch(b, 0, out_base, reg=_CFG)
    _launch(b, 1, table_base, reg=_CFG2)
    b.ssr_enable()
    b.frep(_FCNT, 1, 0, 0)
    b.fadd(0, 1, _FZERO)      # register move: gathered datum -> write stream
    b.fp_sync()
    b.ssr_disable()
    b.halt()
    return b.build()


def run_codebook(table, codes, W=16, contract=None):
    table = np.asarray(table, dtype=np.float64)
    codes = np.asarray(codes, dtype=np.int64)
    if len(codes) == 0:
        raise FormatError("empty code stream")
    if codes.min() < 0 or codes.max() >= len(table):
        raise FormatError("code index out of table range")
    lay = MemoryLayout(base=0x100)
    code_addr, code_blob = lay.place_indices("codes", codes, W)
    table_addr, table_blob = lay.place_doubles("table", table)
    out_addr = lay.alloc("out", 8 * len(codes))
    contract = _fit_contract(contract, lay.cursor)
    prog = build_codebook(len(codes), code_addr, table_addr, out_addr, W,
                          contract)
    mach, stats = simulate(prog, contract,
                           mem_image=[(code_addr, code_blob),
                                      (table_addr, table_blob)])
    got = unpack_doubles(mach.memory.dump_image(out_addr, 8 * len(codes)))
    _check_bits(got, codebook_ref(table, codes), f"codebook/W{W}")
    return got, stats


def build_scatter(n, val_base, idx_base, y_base, W, contract=None):
    """y[idx[k]] = vals[k]: unit 0 streams the values affinely, unit 1 runs
    an indirect WRITE job over y."""
    b = ProgramBuilder()
    b.fmv_zero(_FZERO)
    _cfg_affine_values(b, 0, n, val_base)
    _cfg_indirect(b, 1, n, idx_base, W, direction=Direction.WRITE)
    b.li(_FCNT, n)
    _launch(b, 0, val_base, reg=_CFG)
    _launch(b, 1, y_base, reg=_CFG2)
    b.ssr_enable()
    b.frep(_FCNT, 1, 0, 0)
    b.fadd(1, 0, _FZERO)
    b.fp_sync()
    b.ssr_disable()
    b.halt()
    return b.build()


def run_scatter(y0, indices, values, W=16, contract=None):
    y0 = np.asarray(y0, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if len(indices) == 0:
        raise FormatError("empty scatter")
    if indices.min() < 0 or indices.max() >= len(y0):
        raise FormatError("scatter index out of range")
    lay = MemoryLayout(base=0x100)
    val_addr, val_blob = lay.place_doubles("vals", values)
    idx_addr, idx_blob = lay.place_indices("idx", indices, W)
    y_addr, y_blob = lay.place_doubles("y", y0)
    contract = _fit_contract(contract, lay.cursor)
    prog = build_scatter(len(values), val_addr, idx_addr, y_addr, W, contract)
    mach, stats = simulate(prog, contract,
                           mem_image=[(val_addr, val_blob),
                                      (idx_addr, idx_blob),
                                      (y_addr, y_blob)])
    got = unpack_doubles(mach.memory.dump_image(y_addr, 8 * len(y0)))
    _check_bits(got, scatter_ref(y0, indices, values), f"scatter/W{W}")
    return got, stats


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _fit_contract(contract, high_water):
    """Widen the address space (only) when the operand image needs it."""
    base = contract or TimingContract()
    bits = base.addr_bits
    while (1 << bits) < high_water:
        bits += 1
    if bits == base.addr_bits:
        return base
    from dataclasses import replace
    return replace(base, addr_bits=bits)


def _check_bits(got, want, what):
    got = np.ascontiguousarray(got, dtype=np.float64)
    want = np.ascontiguousarray(want, dtype=np.float64)
    if got.shape != want.shape or not np.array_equal(
            got.view(np.uint64), want.view(np.uint64)):
        bad = np.nonzero(got.view(np.uint64) != want.view(np.uint64))[0][:5] \
            if got.shape == want.shape else []
        raise KernelResultMismatch(
            f"{what}: simulated result differs from reference "
            f"(first mismatches at {list(bad)}; "
            f"got {got[bad] if len(bad) else got}, "
            f"want {want[bad] if len(bad) else want})")
