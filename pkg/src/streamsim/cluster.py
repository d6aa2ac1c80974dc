"""Eight-core cluster mode: worker core complexes on a banked scratchpad,
a block-transfer engine to main memory, and a scripted data-mover core that
double-buffers CsrMV tiles through the scratchpad.

Execution scheme
----------------

The matrix lives in main memory in CSR form.  A static tile plan cuts the
row range into tiles whose CSR slice plus result slice fits one half of the
scratchpad budget; within each tile the rows are split into eight
contiguous, nonzero-balanced worker ranges.  Workers run ordinary
single-core row-loop programs (one emission per tile, all addresses
resolved at build time) and synchronize with the data mover through two
flag words:

  * per-worker `go` words (written by the data mover): the index+1 of the
    tile workers may start; each worker spin-polls its own copy.
  * per-worker `done` words (written by each worker): index+1 of the last
    tile that worker finished.

The data mover is scripted, not instruction-simulated: each cycle it
inspects the flags and the transfer engine, enqueues the next tile load /
result write-back when its buffer dependences clear, and releases the
barrier a fixed signalling delay after a tile's operands have landed.
The dense vector is transferred in full before the first tile is released.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .isa import ProgramBuilder
from .core import TimingContract, CoreComplex, CycleStats
from .mem import IdealMemory, TcdmModel, DmaEngine, SimFault
from .formats import MemoryLayout, FormatError, pack_doubles, pack_indices, \
    pack_words, unpack_doubles, csrmv_ref
from . import kernels
from .kernels import (KernelDescriptor, emit_row_range, _launch,
                      _fit_contract, _check_bits, KernelResultMismatch)
from .stream import (REG_BOUND0, REG_STRIDE0, REG_IDXCFG, REG_REPEAT,
                     REG_IDX_BASE, Mode, pack_idxcfg)

N_WORKERS = 8
TCDM_BANKS = 32
TCDM_BANK_BYTES = 8 * 1024
TCDM_BYTES = TCDM_BANKS * TCDM_BANK_BYTES
MAIN_BASE = 1 << 20

# Flag block at the bottom of the scratchpad; go and done words sit
# 64 bytes apart so each lands in its own bank.  The go flag is replicated
# per worker so every spin loop hammers a different bank instead of all
# eight piling onto one and crowding out transfer traffic there.
GO_ADDR = 0x00
DONE_ADDR = 64 * N_WORKERS
_FLAG_BYTES = DONE_ADDR + 64 * N_WORKERS

# Cycles between the data mover observing a tile's dependences cleared and
# the barrier-release flag write becoming visible.
BARRIER_SIGNAL_CYCLES = 6

# Scratch integer registers for the barrier protocol; disjoint from the
# kernel row-loop allocation.
_R_POLL = 3
_R_GOADDR = 4
_R_GOVAL = 27
_R_DONEADDR = 29
_R_DONEVAL = 30


def _pad8(n):
    return (n + 7) & ~7


@dataclass(frozen=True)
class Tile:
    row0: int
    row1: int
    nnz0: int
    nnz1: int
    cuts: tuple     # N_WORKERS + 1 row boundaries, cuts[0] == row0

    @property
    def rows(self):
        return self.row1 - self.row0

    @property
    def n_nz(self):
        return self.nnz1 - self.nnz0


@dataclass(frozen=True)
class TilePlan:
    tiles: tuple
    ptr_cap: int    # per-buffer region capacities, bytes
    idx_cap: int
    val_cap: int
    y_cap: int

    @property
    def n_tiles(self):
        return len(self.tiles)


def _split_rows(ptr, row0, row1, n_workers):
    """Contiguous, nonzero-balanced split of [row0, row1) into n ranges."""
    total = int(ptr[row1]) - int(ptr[row0])
    cuts = [row0]
    for k in range(1, n_workers):
        target = int(ptr[row0]) + (k * total) // n_workers
        r = bisect_left(ptr, target, cuts[-1], row1)
        cuts.append(r)
    cuts.append(row1)
    return tuple(cuts)


def plan_tiles(matrix, W, n_workers=N_WORKERS, tcdm_bytes=TCDM_BYTES):
    """Greedy static tile plan for a double-buffered CsrMV.

    Rows are packed into a tile while both buffer copies of the running
    region maxima (row pointers, indices, values, result slice) still fit
    beside the dense vector and the flag block.
    """
    ptr = matrix.ptr
    rows, cols = matrix.shape
    avail = tcdm_bytes - _FLAG_BYTES - 8 * cols
    if avail <= 0:
        raise FormatError("dense vector does not fit in the scratchpad")
    caps = [0, 0, 0, 0]      # ptr, idx, val, y region capacities so far

    def grown(nrows, nnz):
        return [max(caps[0], _pad8(4 * (nrows + 1)) + 8),
                max(caps[1], _pad8(nnz * W // 8) + 8),
                max(caps[2], 8 * nnz),
                max(caps[3], 8 * nrows)]

    tiles = []
    r = 0
    while r < rows:
        r2 = r
        while r2 < rows:
            cand = grown(r2 + 1 - r, int(ptr[r2 + 1]) - int(ptr[r]))
            if 2 * sum(cand) > avail:
                break
            r2 += 1
        if r2 == r:
            raise FormatError(f"row {r} alone exceeds the scratchpad tile "
                              f"budget ({avail // 2} bytes per buffer)")
        # Round interior tiles down to a worker multiple: on uniform
        # matrices this removes the one-extra-row quantization imbalance.
        if r2 < rows and r2 - r > n_workers:
            r2 -= (r2 - r) % n_workers
        caps = grown(r2 - r, int(ptr[r2]) - int(ptr[r]))
        tiles.append(Tile(r, r2, int(ptr[r]), int(ptr[r2]),
                          _split_rows(ptr, r, r2, n_workers)))
        r = r2
    return TilePlan(tuple(tiles), *caps)


# ---------------------------------------------------------------------------
# Scratchpad / main-memory layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _ClusterLayout:
    x: int
    ybuf: tuple          # two result staging buffers
    ptrbuf: tuple        # double-buffered CSR slice regions
    idxbuf: tuple
    valbuf: tuple
    main_ptr: int        # main-memory array bases
    main_idx: int
    main_val: int
    main_x: int
    main_y: int
    main_size: int


def _layout(plan, matrix, W):
    lay = MemoryLayout(base=_FLAG_BYTES, limit=TCDM_BYTES)
    x = lay.alloc("x", 8 * matrix.cols)
    ybuf = tuple(lay.alloc(f"y{i}", plan.y_cap) for i in range(2))
    ptrbuf = tuple(lay.alloc(f"ptr{i}", plan.ptr_cap) for i in range(2))
    idxbuf = tuple(lay.alloc(f"idx{i}", plan.idx_cap) for i in range(2))
    valbuf = tuple(lay.alloc(f"val{i}", plan.val_cap) for i in range(2))

    main = MemoryLayout(base=MAIN_BASE)
    mp = main.alloc("ptr", 4 * (matrix.rows + 1))
    mi = main.alloc("idx", matrix.n_nz * W // 8, align=W // 8)
    mv = main.alloc("val", 8 * matrix.n_nz)
    mx = main.alloc("x", 8 * matrix.cols)
    my = main.alloc("y", 8 * matrix.rows)
    return _ClusterLayout(x, ybuf, ptrbuf, idxbuf, valbuf,
                          mp, mi, mv, mx, my, main.cursor - MAIN_BASE)


def _tile_addrs(lay, plan, tile_idx, W):
    """Scratchpad addresses of one tile's CSR slice.

    Destination regions keep the source address's offset modulo 8 so the
    transfer engine can move full words after at most two narrow chunks.
    """
    t = plan.tiles[tile_idx]
    half = tile_idx % 2
    ptr_src = lay.main_ptr + 4 * t.row0
    idx_src = lay.main_idx + (W // 8) * t.nnz0
    val_src = lay.main_val + 8 * t.nnz0
    return (lay.ptrbuf[half] + (ptr_src & 7), ptr_src,
            lay.idxbuf[half] + (idx_src & 7), idx_src,
            lay.valbuf[half], val_src)


# ---------------------------------------------------------------------------
# Worker programs
# ---------------------------------------------------------------------------

def build_worker_program(worker, desc, plan, lay, matrix, contract):
    """Per-tile: spin on the barrier flag, run this worker's row range of
    the tile with all slice addresses resolved statically, publish done."""
    K, U0 = desc.resolve(contract)
    ptr = matrix.ptr
    b = ProgramBuilder()
    if desc.variant == "issr":
        b.li(kernels._KC, U0)
        for c, reg in zip((1, 2, 3),
                          (kernels._C1, kernels._C2, kernels._C3)):
            if c < U0:
                b.li(reg, c)
    b.li(kernels._YSTR, 8)
    b.li(_R_GOADDR, GO_ADDR + 64 * worker)
    b.li(_R_DONEADDR, DONE_ADDR + 64 * worker)
    # Tile-invariant stream configuration lives in the shadow registers
    # once; each tile only rewrites bounds and bases before launching.
    if desc.variant in ("ssr", "issr"):
        b.li(kernels._CFG, 8)
        b.scfgw(0, REG_STRIDE0, kernels._CFG)
        b.li(kernels._CFG, pack_idxcfg(Mode.AFFINE))
        b.scfgw(0, REG_IDXCFG, kernels._CFG)
        b.li(kernels._CFG, 1)
        b.scfgw(0, REG_REPEAT, kernels._CFG)
    if desc.variant == "issr":
        b.li(kernels._CFG2, pack_idxcfg(Mode.INDIRECT, width=desc.W))
        b.scfgw(1, REG_IDXCFG, kernels._CFG2)
        b.li(kernels._CFG2, 1)
        b.scfgw(1, REG_REPEAT, kernels._CFG2)

    for ti, tile in enumerate(plan.tiles):
        tag = f"t{ti}w"
        b.li(_R_GOVAL, ti + 1)
        b.label(f"{tag}_spin")
        b.lw(_R_POLL, _R_GOADDR, 0)
        b.bne(_R_POLL, _R_GOVAL, f"{tag}_spin")

        r0, r1 = tile.cuts[worker], tile.cuts[worker + 1]
        if r1 > r0:
            ptr_addr, _, idx_addr, _, val_addr, _ = \
                _tile_addrs(lay, plan, ti, desc.W)
            local0 = int(ptr[r0]) - tile.nnz0
            nnz_w = int(ptr[r1]) - int(ptr[r0])
            idx_slice = idx_addr + (desc.W // 8) * local0
            val_slice = val_addr + 8 * local0
            if nnz_w and desc.variant == "issr":
                b.li(kernels._CFG, nnz_w)
                b.scfgw(0, REG_BOUND0, kernels._CFG)
                b.scfgw(1, REG_BOUND0, kernels._CFG)
                b.li(kernels._CFG2, idx_slice)
                b.scfgw(1, REG_IDX_BASE, kernels._CFG2)
                _launch(b, 0, val_slice, reg=kernels._CFG)
                _launch(b, 1, lay.x, reg=kernels._CFG2)
                b.ssr_enable()
            elif nnz_w and desc.variant == "ssr":
                b.li(kernels._CFG, nnz_w)
                b.scfgw(0, REG_BOUND0, kernels._CFG)
                _launch(b, 0, val_slice)
                b.ssr_enable()
            if desc.variant != "issr":
                b.li(kernels._IDXP, idx_slice)
                b.li(kernels._VALP, val_slice)
                b.li(kernels._XB, lay.x)
            b.li(kernels._PP, ptr_addr + 4 * (r0 - tile.row0))
            b.li(kernels._PEND, ptr_addr + 4 * (r1 - tile.row0))
            b.lw(kernels._T0, kernels._PP, 0)
            b.li(kernels._YP, lay.ybuf[ti % 2] + 8 * (r0 - tile.row0))
            emit_row_range(b, desc.variant, desc.W, K, U0, tag)
            b.fp_sync()
            if nnz_w and desc.variant in ("ssr", "issr"):
                b.ssr_disable()

        b.li(_R_DONEVAL, ti + 1)
        b.sw(_R_DONEVAL, _R_DONEADDR, 0)
    b.halt()
    return b.build()


# ---------------------------------------------------------------------------
# Scripted data-mover core
# ---------------------------------------------------------------------------

class DataMover:
    """Flag-driven transfer scheduler standing in for the ninth core.

    Keeps at most two tiles resident: tile t+1 loads into the buffer tile
    t-1 vacated; a tile's result slice streams back to main memory as soon
    as every worker published done for it.
    """

    def __init__(self, engine, tcdm, plan, lay, W):
        self.engine = engine
        self.tcdm = tcdm
        self.plan = plan
        self.lay = lay
        self.W = W
        self.next_in = 0
        self.next_out = 0
        self.next_go = 0
        self.in_tid = {}
        self.out_tid = {}
        self.go_fire = None
        self.barrier_cycles = 0
        self.x_tid = engine.enqueue(lay.main_x, lay.x,
                                    lay.main_y - lay.main_x)

    def _computed(self, tile_idx):
        want = tile_idx + 1
        return all(self.tcdm.read_raw(DONE_ADDR + 64 * w, 4) >= want
                   for w in range(N_WORKERS))

    def _enqueue_tile(self, ti):
        lay, plan = self.lay, self.plan
        t = plan.tiles[ti]
        pd, ps, id_, is_, vd, vs = _tile_addrs(lay, plan, ti, self.W)
        tid = self.engine.enqueue(ps, pd, 4 * (t.rows + 1))
        if t.n_nz:
            self.engine.enqueue(is_, id_, (self.W // 8) * t.n_nz)
            tid = self.engine.enqueue(vs, vd, 8 * t.n_nz)
        self.in_tid[ti] = tid

    def step(self, cycle):
        plan, engine = self.plan, self.engine
        T = plan.n_tiles
        if self.next_in < T and (self.next_in < 2
                                 or self._computed(self.next_in - 2)):
            self._enqueue_tile(self.next_in)
            self.next_in += 1
        if self.next_out < T and self._computed(self.next_out):
            ti = self.next_out
            t = plan.tiles[ti]
            self.out_tid[ti] = engine.enqueue(
                self.lay.ybuf[ti % 2], self.lay.main_y + 8 * t.row0,
                8 * t.rows)
            self.next_out += 1
        t = self.next_go
        if t < T:
            deps = (engine.done(self.in_tid.get(t, -1))
                    and (t > 0 or engine.done(self.x_tid))
                    and (t < 2 or engine.done(self.out_tid[t - 2])))
            if deps and self.go_fire is None:
                self.go_fire = cycle + BARRIER_SIGNAL_CYCLES
            if self.go_fire is not None and cycle >= self.go_fire:
                for w in range(N_WORKERS):
                    self.tcdm.write_raw(GO_ADDR + 64 * w, 4, t + 1)
                self.barrier_cycles += BARRIER_SIGNAL_CYCLES
                self.next_go += 1
                self.go_fire = None
        engine.step(cycle)

    @property
    def finished(self):
        return (self.next_out == self.plan.n_tiles and self.engine.idle
                and all(self.engine.done(t) for t in self.out_tid.values()))


# ---------------------------------------------------------------------------
# Cluster simulation
# ---------------------------------------------------------------------------

@dataclass
class ClusterStats:
    cycles: int
    n_tiles: int
    per_core: list
    fmadds: int
    mac_ops: int
    dma_busy_cycles: int
    tcdm_conflict_denied: int
    barrier_signal_cycles: int
    contract: TimingContract

    @property
    def aggregate_utilization(self):
        """MAC throughput averaged over all worker FPUs."""
        if not self.cycles:
            return 0.0
        return self.mac_ops / (N_WORKERS * self.cycles)


def simulate_cluster_csrmv(matrix, x, variant="issr", W=16, contract=None,
                           max_cycles=200_000_000):
    """Run a tiled, double-buffered CsrMV on the eight-worker cluster.

    Returns (y, ClusterStats); the result read back from main memory is
    verified bit-for-bit against the ordering-faithful reference first.
    """
    x = np.asarray(x, dtype=np.float64)
    if matrix.cols != len(x):
        raise FormatError(f"operand shape mismatch: matrix is {matrix.shape},"
                          f" x has {len(x)} entries")
    desc = KernelDescriptor("csrmv", variant, W)
    contract = contract or TimingContract()
    plan = plan_tiles(matrix, W)
    lay = _layout(plan, matrix, W)
    contract = _fit_contract(contract, TCDM_BYTES)

    tcdm = TcdmModel(TCDM_BANKS, TCDM_BANK_BYTES)
    main = IdealMemory(lay.main_size, base=MAIN_BASE)
    main.load_image(lay.main_ptr, pack_words(matrix.ptr))
    main.load_image(lay.main_idx, pack_indices(matrix.indices, W))
    main.load_image(lay.main_val, pack_doubles(matrix.values))
    main.load_image(lay.main_x, pack_doubles(x))

    workers = []
    for w in range(N_WORKERS):
        prog = build_worker_program(w, desc, plan, lay, matrix, contract)
        shared = tcdm.new_port(f"w{w}.shared")
        shared.priority = 1     # worker traffic wins contested banks
        issr = tcdm.new_port(f"w{w}.issr")
        issr.priority = 1
        workers.append(CoreComplex(prog, contract, shared, issr,
                                   name=f"w{w}"))
    engine = DmaEngine(tcdm, main)
    mover = DataMover(engine, tcdm, plan, lay, W)

    cycle = 0
    while True:
        cycle += 1
        tcdm.deliver()
        for cc in workers:
            cc.step(cycle)
        mover.step(cycle)
        tcdm.step(cycle)
        if mover.finished and all(cc.core.halted and cc.quiesced(cycle)
                                  for cc in workers):
            break
        if cycle >= max_cycles:
            raise SimFault(f"cluster simulation exceeded {max_cycles} cycles "
                           f"(tiles released {mover.next_go}/{plan.n_tiles})")

    got = np.asarray(unpack_doubles(
        main.dump_image(lay.main_y, 8 * matrix.rows)))
    K, _ = desc.resolve(contract)
    ref = csrmv_ref(matrix, x, K if variant == "issr" else 1)
    _check_bits(got, ref, f"cluster-csrmv/{variant}/W{W}")

    per_core = [cc.finalize_stats(cycle) for cc in workers]
    stats = ClusterStats(
        cycles=cycle,
        n_tiles=plan.n_tiles,
        per_core=per_core,
        fmadds=sum(s.fmadds for s in per_core),
        mac_ops=sum(s.mac_ops for s in per_core),
        dma_busy_cycles=engine.busy_cycles,
        tcdm_conflict_denied=tcdm.conflict_denied,
        barrier_signal_cycles=mover.barrier_cycles,
        contract=contract,
    )
    return got, stats


def cluster_speedup(matrix, x, W=16, contract=None):
    """(base cluster cycles) / (issr cluster cycles) on the same operands."""
    _, sb = simulate_cluster_csrmv(matrix, x, "base", W, contract)
    _, si = simulate_cluster_csrmv(matrix, x, "issr", W, contract)
    return sb.cycles / si.cycles, sb, si
