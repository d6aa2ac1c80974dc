"""Memory models: ideal single-cycle memory, the 32-bank scratchpad with
conflict arbitration, and the block-transfer (DMA) engine.

Timing protocol shared by all memories:

  * A requester places a request on its port and leaves it there until the
    memory grants it (possibly the same cycle it was placed).
  * Grants are decided in the memory's step() at the end of the global cycle;
    the requester observes `port.granted` at the start of its next cycle.
  * Read data is delivered on the cycle after the grant via `port.resp`.

All stores are little-endian.  Accesses must be naturally aligned.
"""

from __future__ import annotations


class SimFault(Exception):
    """Simulation fault with diagnostic (bad access, stream fault, ...)."""


class MemPort:
    """One request/response channel into a memory."""

    __slots__ = ("name", "req", "granted", "grant_cycle", "resp", "resp_tag",
                 "req_count", "priority")

    def __init__(self, name=""):
        self.name = name
        self.priority = 0        # higher wins contested banks
        self.req = None          # (addr, width, is_write, wdata, tag)
        self.granted = False
        self.grant_cycle = -1
        self.resp = None         # read data (int), valid for one cycle
        self.resp_tag = None
        self.req_count = 0

    def request(self, addr, width, is_write=False, wdata=0, tag=None):
        self.req = (addr, width, is_write, wdata, tag)

    def take_grant(self):
        """Consume the grant flag; returns True once per granted request."""
        if self.granted:
            self.granted = False
            return True
        return False

    def take_resp(self):
        r, t = self.resp, self.resp_tag
        self.resp = None
        self.resp_tag = None
        return r, t


class _MemoryBase:
    def __init__(self, size, base=0):
        self.size = size
        self.base = base
        self.data = bytearray(size)
        self.ports = []
        self._resp_queue = []  # responses to deliver next cycle

    def new_port(self, name=""):
        p = MemPort(name)
        self.ports.append(p)
        return p

    def contains(self, addr):
        return self.base <= addr < self.base + self.size

    # -- untimed access (setup, result extraction, DMA far side) -------------

    def read_raw(self, addr, width):
        off = self._check(addr, width)
        return int.from_bytes(self.data[off:off + width], "little")

    def write_raw(self, addr, width, value):
        off = self._check(addr, width)
        self.data[off:off + width] = (value & ((1 << (8 * width)) - 1)) \
            .to_bytes(width, "little")

    def load_image(self, addr, blob):
        off = self._bounds(addr, len(blob)) if blob else 0
        self.data[off:off + len(blob)] = blob

    def dump_image(self, addr, nbytes):
        off = self._bounds(addr, nbytes)
        return bytes(self.data[off:off + nbytes])

    def _bounds(self, addr, nbytes):
        off = addr - self.base
        if off < 0 or off + nbytes > self.size:
            raise SimFault(f"address {addr:#x} (+{nbytes}) out of bounds "
                           f"[{self.base:#x}, {self.base + self.size:#x})")
        return off

    def _check(self, addr, width):
        off = self._bounds(addr, width)
        if width in (2, 4, 8) and addr % width:
            raise SimFault(f"misaligned {width}-byte access at {addr:#x}")
        return off

    # -- timed access ---------------------------------------------------------

    def deliver(self):
        """Move read data granted last cycle onto the ports."""
        for port, value, tag in self._resp_queue:
            port.resp = value
            port.resp_tag = tag
        self._resp_queue.clear()

    def _do_access(self, port, cycle):
        addr, width, is_write, wdata, tag = port.req
        if is_write:
            self.write_raw(addr, width, wdata)
        else:
            self._resp_queue.append((port, self.read_raw(addr, width), tag))
        port.req = None
        port.granted = True
        port.grant_cycle = cycle
        port.req_count += 1


class IdealMemory(_MemoryBase):
    """Byte-addressable store with fixed 1-cycle latency and no back-pressure.
    Port count is fixed by whoever constructs the system; every pending
    request is granted each cycle."""

    def step(self, cycle):
        for port in self.ports:
            if port.req is not None:
                self._do_access(port, cycle)


class TcdmModel(_MemoryBase):
    """Word-interleaved banked scratchpad.

    bank = (address >> 3) mod n_banks; one access per bank per cycle.  On a
    contested bank only the highest priority level present competes; within
    a level the per-bank arbiter rotates its pointer one position past the
    winner after every granted conflict cycle, so no requester inside a
    level can be starved.  Worker-core ports run at elevated priority
    because a denied cycle there lands directly on the compute critical
    path (a stream can never recover lost issue slots, and row-pointer
    loads serialize the row loop), whereas the block-transfer engine
    retries denied chunks on spare ports and has bandwidth slack.
    """

    def __init__(self, n_banks=32, bank_bytes=8 * 1024, base=0, log=None):
        super().__init__(n_banks * bank_bytes, base)
        self.n_banks = n_banks
        self._rr = [0] * n_banks
        self.conflict_cycles = 0
        self.conflict_denied = 0
        self.log = log  # optional list of granted accesses

    def step(self, cycle):
        pending = [p for p in self.ports if p.req is not None]
        if not pending:
            return
        if len(pending) == 1:
            p = pending[0]
            self._log_grant(p, cycle)
            self._do_access(p, cycle)
            return
        by_bank = {}
        for idx, p in enumerate(self.ports):
            if p.req is not None:
                bank = ((p.req[0] - self.base) >> 3) % self.n_banks
                by_bank.setdefault(bank, []).append((idx, p))
        for bank, reqs in by_bank.items():
            if len(reqs) == 1:
                p = reqs[0][1]
                self._log_grant(p, cycle)
                self._do_access(p, cycle)
                continue
            # Contested: highest priority level present competes; pick the
            # first of it at or after the bank's rotating pointer.
            top = max(p.priority for _, p in reqs)
            live = [ip for ip in reqs if ip[1].priority == top]
            ptr = self._rr[bank]
            live.sort(key=lambda ip: ((ip[0] - ptr) % len(self.ports)))
            widx, winner = live[0]
            self._log_grant(winner, cycle)
            self._do_access(winner, cycle)
            self._rr[bank] = (widx + 1) % len(self.ports)
            self.conflict_cycles += 1
            self.conflict_denied += len(reqs) - 1

    def _log_grant(self, port, cycle):
        if self.log is not None:
            addr, width, is_write, wdata, _ = port.req
            self.log.append((cycle, port.name, addr, width, is_write, wdata))


def replay_log(log, size, base=0, init=None):
    """Replay a granted-request log sequentially into a fresh image.

    Used to check that the post-simulation memory image equals the image
    produced by the request stream alone.
    """
    mem = IdealMemory(size, base)
    if init is not None:
        mem.load_image(base, init)
    for _cycle, _port, addr, width, is_write, wdata in log:
        if is_write:
            mem.write_raw(addr, width, wdata)
    return bytes(mem.data)


DMA_STARTUP_CYCLES = 4
DMA_BYTES_PER_CYCLE = 64


class DmaTransfer:
    __slots__ = ("src", "dst", "inner_bytes", "reps", "src_stride",
                 "dst_stride", "tid")

    def __init__(self, src, dst, inner_bytes, reps=1, src_stride=0,
                 dst_stride=0, tid=0):
        self.src = src
        self.dst = dst
        self.inner_bytes = inner_bytes
        self.reps = reps
        self.src_stride = src_stride if reps > 1 else inner_bytes
        self.dst_stride = dst_stride if reps > 1 else inner_bytes
        self.tid = tid

    @property
    def total_bytes(self):
        return self.inner_bytes * self.reps


class DmaEngine:
    """512-bit block transfer engine between main memory and the scratchpad.

    Issues up to 64 bytes of new chunk traffic per cycle; the main-memory
    side is ideal duplex and never stalls.  Transfers are processed in FIFO
    order with a fixed per-descriptor startup cost.

    Chunks denied bank arbitration retry on their port while fresh chunks
    keep issuing on free ports, so a scratchpad conflict delays only the
    chunk it hit instead of stalling the whole 64-byte front.  The port set
    is wider than the per-cycle issue front to hold those retries.
    """

    def __init__(self, tcdm, main, n_ports=16):
        self.tcdm = tcdm
        self.main = main
        self.ports = [tcdm.new_port(f"dma{i}") for i in range(n_ports)]
        self.queue = []
        self.current = None
        self.startup = 0
        self._chunks = None        # per-transfer remaining (tcdm, main, width, is_tcdm_write)
        self._inflight = {}        # port -> (main_addr, width) for tcdm reads
        self._outstanding = 0
        self.completed = {}        # tid -> completion cycle
        self._next_tid = 0
        self._pending_tid = None
        self.busy_cycles = 0

    def enqueue(self, src, dst, inner_bytes, reps=1, src_stride=0,
                dst_stride=0):
        if inner_bytes % 2 or src % 2 or dst % 2:
            raise SimFault("DMA transfers must be 2-byte aligned")
        tid = self._next_tid
        self._next_tid += 1
        t = DmaTransfer(src, dst, inner_bytes, reps, src_stride, dst_stride,
                        tid)
        lo_s, hi_s = src, src + (t.reps - 1) * t.src_stride + inner_bytes
        lo_d, hi_d = dst, dst + (t.reps - 1) * t.dst_stride + inner_bytes
        if max(lo_s, lo_d) < min(hi_s, hi_d):
            raise SimFault("DMA transfer with overlapping src/dst")
        self.queue.append(t)
        return tid

    def done(self, tid):
        return tid in self.completed

    @property
    def idle(self):
        return self.current is None and not self.queue and not self._inflight

    def _expand(self, t):
        """Break a transfer into word-sized chunk moves."""
        chunks = []
        for rep in range(t.reps):
            s = t.src + rep * t.src_stride
            d = t.dst + rep * t.dst_stride
            left = t.inner_bytes
            while left:
                w = 8
                while w > 2 and (s % w or d % w or left < w):
                    w //= 2
                if s % w or left < w:
                    raise SimFault("DMA transfer alignment not representable")
                if self.main.contains(s):
                    chunks.append((d, s, w, True))    # write into tcdm
                elif self.main.contains(d):
                    chunks.append((s, d, w, False))   # read from tcdm
                else:
                    raise SimFault("DMA endpoints must span tcdm and main")
                s += w
                d += w
                left -= w
        return chunks

    def step(self, cycle):
        # Retire tcdm reads whose data arrived: write the far side.
        for port in self.ports:
            if port.resp is not None and port in self._inflight:
                main_addr, width = self._inflight.pop(port)
                value, _ = port.take_resp()
                self.main.write_raw(main_addr, width, value)
                self._outstanding -= 1
            port.take_grant()

        if self.current is None:
            if not self.queue:
                if self._outstanding == 0 and self._pending_tid is not None:
                    self.completed[self._pending_tid] = cycle
                    self._pending_tid = None
                return
            self.current = self.queue.pop(0)
            self.startup = DMA_STARTUP_CYCLES
            self._chunks = self._expand(self.current)
        if self.startup:
            self.startup -= 1
            self.busy_cycles += 1
            return

        self.busy_cycles += 1
        budget = DMA_BYTES_PER_CYCLE
        free_ports = [p for p in self.ports
                      if p.req is None and p not in self._inflight]
        for port in free_ports:
            if not self._chunks or budget <= 0:
                break
            tcdm_addr, far_addr, width, is_write = self._chunks[0]
            if width > budget:
                break
            self._chunks.pop(0)
            budget -= width
            if is_write:
                value = self.main.read_raw(far_addr, width)
                port.request(tcdm_addr, width, is_write=True, wdata=value)
            else:
                port.request(tcdm_addr, width, is_write=False)
                self._inflight[port] = (far_addr, width)
                self._outstanding += 1

        if not self._chunks and all(p.req is None for p in self.ports):
            # All chunk accesses granted; reads may still be in flight.
            if self._outstanding == 0:
                self.completed[self.current.tid] = cycle
                self._pending_tid = None
            else:
                self._pending_tid = self.current.tid
            self.current = None
