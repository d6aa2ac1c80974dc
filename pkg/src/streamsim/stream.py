"""Stream semantic register units: affine address generation, streaming
indirection (index fetch, serialization, shift/offset arithmetic) and the
streamer FIFOs with round-robin index/data port arbitration.

Each unit owns one memory port.  In affine mode the port carries only data
traffic; in indirection mode index-word fetches and data accesses share the
port through a round-robin multiplexer, which caps steady-state data
throughput at 4/5 (16-bit indices) or 2/3 (32-bit indices) of a word per
cycle.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .mem import SimFault

# FIFO depths are not architecturally fixed.  The data FIFO is sized so a
# stream can bank enough lead during loop-boundary bubbles to ride out
# bursts of scratchpad arbitration losses; the throughput ceiling itself is
# set by the request-port mux, not by these depths.
DATA_FIFO_DEPTH = 8
IDX_FIFO_WORDS = 4

# Config register map (SCFGW immediates).
REG_STATUS = 0
REG_REPEAT = 1
REG_BOUND0 = 2     # ..5
REG_STRIDE0 = 6    # ..9
REG_IDXCFG = 10
REG_IDX_BASE = 11
REG_DATA_BASE = 12  # writing this register launches the job

IDXCFG_INDIRECT = 1 << 0
IDXCFG_W16 = 1 << 1
IDXCFG_WRITE = 1 << 2
IDXCFG_SHIFT_POS = 3


class Mode(enum.Enum):
    AFFINE = "affine"
    INDIRECT = "indirect"


class Direction(enum.Enum):
    READ = "read"
    WRITE = "write"


def pack_idxcfg(mode, width=32, direction=Direction.READ, shift=0):
    v = 0
    if mode is Mode.INDIRECT:
        v |= IDXCFG_INDIRECT
    if width == 16:
        v |= IDXCFG_W16
    elif width != 32:
        raise SimFault(f"index width must be 16 or 32, got {width}")
    if direction is Direction.WRITE:
        v |= IDXCFG_WRITE
    v |= shift << IDXCFG_SHIFT_POS
    return v


@dataclass
class StreamJob:
    """One stream configuration, snapshotted at launch."""

    mode: Mode
    direction: Direction
    data_base: int
    bounds: tuple = (1, 1, 1, 1)
    strides: tuple = (0, 0, 0, 0)
    idx_base: int = 0
    count: int = 0              # element count (indirect); affine uses bounds
    width: int = 32             # index width W in bits
    shift: int = 0              # extra power-of-two axis-stride exponent
    repeat: int = 1

    def __post_init__(self):
        if self.mode is Mode.AFFINE:
            self.count = 1
            for b in self.bounds:
                self.count *= b

    def validate(self, addr_bits):
        limit = 1 << addr_bits
        if self.width not in (16, 32):
            raise SimFault(f"index width must be 16 or 32, got {self.width}")
        if self.repeat < 1:
            raise SimFault("repeat count must be >= 1")
        if self.shift < 0:
            raise SimFault("shift must be >= 0")
        if self.count < 1:
            raise SimFault("stream job must cover at least one element")
        if self.direction is Direction.WRITE and self.repeat != 1:
            raise SimFault("repeat not supported for write streams")
        if not 0 <= self.data_base < limit:
            raise SimFault(f"data base {self.data_base:#x} exceeds "
                           f"{addr_bits}-bit address width")
        if self.mode is Mode.INDIRECT:
            aligned = self.idx_base & ~7
            lanes = 64 // self.width
            start = (self.idx_base & 7) // (self.width // 8)
            words = -(-(start + self.count) // lanes)
            if aligned + 8 * words > limit:
                raise SimFault("index array exceeds address width")
        else:
            for level in range(4):
                if self.bounds[level] < 1:
                    raise SimFault("affine bounds must be >= 1")


def serialize_indices(word, width, start_offset, limit=None):
    """Extract little-endian 16- or 32-bit index lanes from a 64-bit word,
    starting at lane `start_offset`, optionally clipped to `limit` lanes."""
    lanes = 64 // width
    if not 0 <= start_offset < lanes:
        raise SimFault(f"start offset {start_offset} out of range")
    mask = (1 << width) - 1
    out = [(word >> (lane * width)) & mask
           for lane in range(start_offset, lanes)]
    return out if limit is None else out[:limit]


def affine_addresses(bounds, strides, base):
    """Reference odometer: yields the affine address sequence."""
    counters = [0, 0, 0, 0]
    pointer = base
    total = 1
    for b in bounds:
        total *= b
    for _ in range(total):
        yield pointer
        for level in range(4):
            counters[level] += 1
            if counters[level] < bounds[level]:
                pointer += strides[level]
                break
            counters[level] = 0


def index_words_needed(idx_base, count, width):
    """Conservation: 64-bit index words fetched for a count-element job."""
    lanes = 64 // width
    start = (idx_base & 7) // (width // 8)
    return -(-(start + count) // lanes)


@dataclass
class StreamStats:
    emissions: int = 0          # data-address grants
    index_fetches: int = 0
    jobs_completed: int = 0
    stall_fifo_full: int = 0


class StreamUnit:
    """One SSR/ISSR with its shadowed configuration interface.

    The owning core advances it once per cycle (accept() in the response
    phase, step() in the request phase).  FIFO safety is asserted on every
    transition.
    """

    def __init__(self, port, addr_bits=18, name="stream0"):
        self.port = port
        self.addr_bits = addr_bits
        self.name = name
        # Shadow configuration registers (persist across launches).
        self.cfg_repeat = 1
        self.cfg_bounds = [1, 1, 1, 1]
        self.cfg_strides = [0, 0, 0, 0]
        self.cfg_idxcfg = 0
        self.cfg_idx_base = 0
        self.job = None
        self.shadow = None
        self._start_after = -1   # job activation blocked through this cycle
        # Data FIFO (raw 64-bit words) shared by read and write directions.
        self.data_fifo = deque()
        self.inflight_data = 0
        self.emitted = 0         # data addresses generated
        self.consumed = 0        # datums fully served to / from the register
        self._serve_count = 0
        # Affine iterator state.
        self.counters = [0, 0, 0, 0]
        self.pointer = 0
        # Indirection state.
        self.idx_fifo = deque()
        self.idx_outstanding = 0
        self.idx_words_fetched = 0
        self.idx_words_needed = 0
        self.cur_word = None
        self.lane = 0
        self.short_offset = 0    # first-word lane from index-array alignment
        self._first_word = False
        self.pushed = 0
        # Round-robin multiplexer state; persists across jobs.
        self.rr_data_next = True
        self._req_kind = None
        self._req_contested = False
        self.stats = StreamStats()

    # -- configuration interface ---------------------------------------------

    def write_cfg(self, reg, value, cycle):
        """Config write from the core.  Returns False when the write is a
        launch and both the running and shadowed job slots are occupied
        (the core must stall and retry)."""
        if reg == REG_STATUS:
            pass
        elif reg == REG_REPEAT:
            self.cfg_repeat = value
        elif REG_BOUND0 <= reg < REG_BOUND0 + 4:
            self.cfg_bounds[reg - REG_BOUND0] = value
        elif REG_STRIDE0 <= reg < REG_STRIDE0 + 4:
            self.cfg_strides[reg - REG_STRIDE0] = value
        elif reg == REG_IDXCFG:
            self.cfg_idxcfg = value
        elif reg == REG_IDX_BASE:
            self.cfg_idx_base = value
        elif reg == REG_DATA_BASE:
            return self._launch(value, cycle)
        else:
            raise SimFault(f"{self.name}: invalid config register {reg}")
        return True

    def _launch(self, data_base, cycle):
        if self.job is not None and self.shadow is not None:
            return False
        cfg = self.cfg_idxcfg
        mode = Mode.INDIRECT if cfg & IDXCFG_INDIRECT else Mode.AFFINE
        job = StreamJob(
            mode=mode,
            direction=Direction.WRITE if cfg & IDXCFG_WRITE else Direction.READ,
            data_base=data_base,
            bounds=tuple(self.cfg_bounds),
            strides=tuple(self.cfg_strides),
            idx_base=self.cfg_idx_base,
            count=self.cfg_bounds[0] if mode is Mode.INDIRECT else 0,
            width=16 if cfg & IDXCFG_W16 else 32,
            shift=cfg >> IDXCFG_SHIFT_POS,
            repeat=self.cfg_repeat,
        )
        job.validate(self.addr_bits)
        if self.job is None:
            self.shadow = job
            self._start_after = cycle  # starts next cycle
        else:
            self.shadow = job
        return True

    @property
    def busy(self):
        return self.job is not None or self.shadow is not None

    def _activate(self):
        job = self.shadow
        self.shadow = None
        self.job = job
        self.emitted = 0
        self.consumed = 0
        self.pushed = 0
        self._serve_count = 0
        self.counters = [0, 0, 0, 0]
        self.pointer = job.data_base
        self.idx_fifo.clear()
        self.idx_outstanding = 0
        self.idx_words_fetched = 0
        self.cur_word = None
        if job.mode is Mode.INDIRECT:
            lanes = 64 // job.width
            self.short_offset = (job.idx_base & 7) // (job.width // 8)
            self.lane = self.short_offset
            self._first_word = True
            self.idx_words_needed = -(-(self.short_offset + job.count) // lanes)
        assert not self.data_fifo, f"{self.name}: stale data at job start"

    def _finish_job(self, cycle):
        assert not self.data_fifo and self.inflight_data == 0
        self.job = None
        self.stats.jobs_completed += 1
        # A shadowed job begins the cycle after the running one drains.
        self._start_after = max(self._start_after, cycle)

    # -- register-file side ---------------------------------------------------

    def can_pop(self):
        return bool(self.data_fifo)

    def pop(self, cycle):
        """Serve one read datum to the mapped register."""
        job = self.job
        assert job is not None and job.direction is Direction.READ
        value = self.data_fifo[0]
        self._serve_count += 1
        if self._serve_count == job.repeat:
            self.data_fifo.popleft()
            self._serve_count = 0
            self.consumed += 1
            if self.consumed == job.count and self.emitted == job.count:
                self._finish_job(cycle)
        return value

    def can_push(self):
        return len(self.data_fifo) < DATA_FIFO_DEPTH

    def push(self, value, cycle):
        """Accept one write datum from the mapped register."""
        job = self.job
        assert job is not None and job.direction is Direction.WRITE
        assert len(self.data_fifo) < DATA_FIFO_DEPTH
        self.data_fifo.append(value)
        self.pushed += 1
        assert self.pushed <= job.count, \
            f"{self.name}: more register writes than job elements"

    # -- per-cycle advance ----------------------------------------------------

    def accept(self, cycle):
        """Response phase: collect grants and read data from the port."""
        if self.port.resp is not None:
            value, tag = self.port.take_resp()
            if tag == "idx":
                self.idx_fifo.append(value)
                self.idx_outstanding -= 1
                assert self.idx_outstanding >= 0
                assert len(self.idx_fifo) + self.idx_outstanding \
                    <= IDX_FIFO_WORDS
            else:
                self.data_fifo.append(value)
                self.inflight_data -= 1
                assert len(self.data_fifo) <= DATA_FIFO_DEPTH
        if self.port.take_grant():
            kind = self._req_kind
            self._req_kind = None
            if self._req_contested:
                self.rr_data_next = kind != "data"
                self._req_contested = False
            if kind == "data":
                self.stats.emissions += 1
                if self.job.direction is Direction.WRITE:
                    self.data_fifo.popleft()
                self.emitted += 1
                if self.emitted == self.job.count \
                        and self.job.direction is Direction.WRITE \
                        and not self.data_fifo:
                    self._finish_job(cycle)
            else:
                self.stats.index_fetches += 1

    def step(self, cycle):
        """Request phase: activate pending jobs and place one port request."""
        if self.job is None:
            if self.shadow is not None and cycle > self._start_after:
                self._activate()
            if self.job is None:
                return
        if self._req_kind is not None:
            return  # previous request not yet granted (bank conflict)
        job = self.job
        if job.mode is Mode.AFFINE:
            if self._data_possible(job):
                self._emit_affine(job)
            return
        self._refill_serializer(job)
        data_ok = self.cur_word is not None and self._data_possible(job)
        idx_ok = (self.idx_words_fetched < self.idx_words_needed
                  and len(self.idx_fifo) + self.idx_outstanding
                  < IDX_FIFO_WORDS)
        if data_ok and idx_ok:
            self._req_contested = True
            if self.rr_data_next:
                self._emit_indirect(job)
            else:
                self._fetch_index_word(job)
        elif data_ok:
            self._emit_indirect(job)
        elif idx_ok:
            self._fetch_index_word(job)
        elif self._data_possible(job) is False and self.cur_word is not None:
            self.stats.stall_fifo_full += 1

    def _data_possible(self, job):
        if self.emitted >= job.count:
            return False
        if job.direction is Direction.READ:
            return (len(self.data_fifo) + self.inflight_data
                    < DATA_FIFO_DEPTH)
        # Writes need a buffered datum beyond those already being written.
        return len(self.data_fifo) > 0

    def _refill_serializer(self, job):
        if self.cur_word is None and self.idx_fifo:
            self.cur_word = self.idx_fifo.popleft()
            # Short-offset counter: non-zero only for the first word of an
            # unaligned index array.
            self.lane = self.short_offset if self._first_word else 0
            self._first_word = False

    def _emit_affine(self, job):
        addr = self.pointer
        self._check_addr(addr)
        self._place_data_request(job, addr)
        for level in range(4):
            self.counters[level] += 1
            if self.counters[level] < job.bounds[level]:
                self.pointer += job.strides[level]
                break
            self.counters[level] = 0

    def _emit_indirect(self, job):
        lanes = 64 // job.width
        mask = (1 << job.width) - 1
        index = (self.cur_word >> (self.lane * job.width)) & mask
        self.lane += 1
        if self.lane >= lanes:
            self.cur_word = None
            self.lane = 0
        addr = job.data_base + (index << (3 + job.shift))
        self._check_addr(addr)
        self._place_data_request(job, addr)

    def _place_data_request(self, job, addr):
        if job.direction is Direction.READ:
            self.port.request(addr, 8, tag="data")
            self.inflight_data += 1
        else:
            self.port.request(addr, 8, is_write=True,
                              wdata=self.data_fifo[0], tag="data")
        self._req_kind = "data"

    def _fetch_index_word(self, job):
        addr = (job.idx_base & ~7) + 8 * self.idx_words_fetched
        self.port.request(addr, 8, tag="idx")
        self.idx_words_fetched += 1
        self.idx_outstanding += 1
        self._req_kind = "idx"

    def _check_addr(self, addr):
        if addr < 0 or addr + 8 > 1 << self.addr_bits:
            raise SimFault(
                f"{self.name}: stream fault, data address {addr:#x} exceeds "
                f"{self.addr_bits}-bit address width")
