"""Single-issue in-order core timing model with FPU subsystem, hardware-loop
sequencer with register staggering, pseudo-dual-issue and stream-register
integration.

Timing contract (global per simulation, recorded in every stats output):

  * integer ops, taken and not-taken branches: 1 cycle
  * loads: the value is available to the instruction issued two cycles after
    the load's memory grant (one load-use slot, fillable with other work)
  * FP instructions issue into the FPU queue in 1 core cycle; the core moves
    on while the FPU subsystem drains (pseudo-dual-issue)
  * FMADD/FADD/FMUL latency L cycles, throughput 1 per cycle
  * an FP op reading a stream-mapped register stalls in the FPU, not the
    core, until the stream FIFO has data
  * stream config writes occupy the core for 2 cycles each

Per-cycle phase order inside a core complex: memory responses are delivered
first, stream units collect grants/data, the FPU issues, the core issues,
stream units place new requests, and finally the shared-port mux forwards
one of them to memory.  Memory arbitration happens after all cores stepped.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .isa import (Opcode, RegisterFile, FPU_QUEUE_OPS, ST_RD, ST_RS1, ST_RS2,
                  ST_RS3)
from .mem import IdealMemory, SimFault
from .stream import StreamUnit, Direction
from .util import fma, double_to_bits, bits_to_double

_NOT_READY = 1 << 60  # load destination blocked until the grant arrives


@dataclass(frozen=True)
class TimingContract:
    fpu_latency: int = 4       # FMADD/FADD/FMUL result latency, cycles
    fpu_queue_depth: int = 8
    fmv_zero_latency: int = 1
    load_use_cycles: int = 2   # grant-to-consumer distance
    scfgw_cycles: int = 2
    addr_bits: int = 18


@dataclass
class CycleStats:
    """Per-run cycle and utilization counters."""

    cycles: int = 0
    fmadds: int = 0            # FMADD_D issues
    mac_ops: int = 0           # FMADD/FADD/FMUL at weight 1
    last_fmadd_retire: int = 0
    fpu_busy_cycles: int = 0
    stalls: dict = field(default_factory=dict)   # reason -> cycles
    core_issue_cycles: int = 0
    mem_requests: dict = field(default_factory=dict)  # port name -> count
    tcdm_conflict_stalls: int = 0
    contract: TimingContract = field(default_factory=TimingContract)

    @property
    def utilization(self):
        return self.mac_ops / self.cycles if self.cycles else 0.0

    @property
    def utilization_reduction_free(self):
        """FMADD throughput with the clock stopped at the last multiply-add,
        before accumulator-reduction teardown."""
        if not self.fmadds:
            return 0.0
        return self.fmadds / self.last_fmadd_retire

    def add_stall(self, reason):
        self.stalls[reason] = self.stalls.get(reason, 0) + 1


class SharedSubPort:
    """Requester-side view of one slot of a shared memory port.  Mirrors the
    MemPort handshake so stream units work unchanged behind the mux."""

    __slots__ = ("owner", "name", "req", "granted", "resp", "resp_tag",
                 "_tag", "last_is_write", "req_count")

    def __init__(self, owner, name):
        self.owner = owner
        self.name = name
        self.req = None
        self.granted = False
        self.resp = None
        self.resp_tag = None
        self._tag = None
        self.last_is_write = False
        self.req_count = 0

    def request(self, addr, width, is_write=False, wdata=0, tag=None):
        self.req = (addr, width, is_write, wdata)
        self._tag = tag
        self.req_count += 1

    def take_grant(self):
        if self.granted:
            self.granted = False
            return True
        return False

    def take_resp(self):
        r, t = self.resp, self.resp_tag
        self.resp = None
        self.resp_tag = None
        return r, t


class SharedPortMux:
    """Multiplexer combining core, FPU and affine-stream requests onto one
    memory port (the indirection stream keeps its own).

    Fixed priority core > FPU > stream: the stream prefetches into a deep
    FIFO and tolerates added latency, while a core or FPU load sits on the
    critical path.
    """

    def __init__(self, port, names=("core", "fpu", "ssr")):
        self.port = port
        self.subs = [SharedSubPort(i, n) for i, n in enumerate(names)]
        self.current = None      # owner whose request sits on the real port
        self.resp_owner = None

    def deliver(self):
        # Grant first: the response for the same access arrives alongside it.
        if self.port.take_grant():
            sub = self.subs[self.current]
            sub.granted = True
            if not sub.last_is_write:
                self.resp_owner = self.current
            self.current = None
        if self.port.resp is not None:
            data, _ = self.port.take_resp()
            sub = self.subs[self.resp_owner]
            sub.resp = data
            sub.resp_tag = sub._tag
            self.resp_owner = None

    def arbitrate(self):
        if self.current is not None or self.port.req is not None:
            return
        for i, sub in enumerate(self.subs):
            if sub.req is not None:
                addr, width, is_write, wdata = sub.req
                sub.req = None
                sub.last_is_write = is_write
                self.port.request(addr, width, is_write, wdata)
                self.current = i
                return


class _Frep:
    """Hardware-loop marker sitting in the FPU queue until its body has been
    routed in by the core."""

    __slots__ = ("count", "body_len", "stagger", "mask", "body")

    def __init__(self, count, body_len, stagger, mask):
        self.count = count
        self.body_len = body_len
        self.stagger = stagger
        self.mask = mask
        self.body = []

    @property
    def filled(self):
        return len(self.body) == self.body_len


class FpuSubsystem:
    """In-order FPU instruction queue with hardware-loop sequencer,
    register staggering and stream-register operand redirection."""

    def __init__(self, contract, regfile, units, mem_sub, stats):
        self.contract = contract
        self.regs = regfile.f
        self.units = units
        self.mem = mem_sub
        self.stats = stats
        self.queue = deque()     # (entry, addr): Instruction or _Frep marker
        self.occupancy = 0
        self.enabled = False
        self.inflight = {}       # fp reg -> cycle the value becomes readable
        self.seq = None          # active _Frep
        self.seq_iter = 0
        self.seq_pos = 0
        self.seq_left = 0
        self.pending_loads = deque()  # FLD destinations awaiting read data
        self.mem_busy = False    # head FLD/FSD has an ungranted request
        self.max_retire = 0

    @property
    def queue_full(self):
        return self.occupancy >= self.contract.fpu_queue_depth

    @property
    def idle(self):
        return (self.occupancy == 0 and self.seq is None
                and not self.mem_busy and not self.pending_loads)

    def quiesced(self, cycle):
        return self.idle and cycle >= self.max_retire

    def enqueue(self, ins, addr=None):
        self.queue.append((ins, addr))
        self.occupancy += 1

    def enqueue_frep(self, count, body_len, stagger, mask):
        self.queue.append((_Frep(count, body_len, stagger, mask), None))
        self.occupancy += 1

    def feed_frep_body(self, ins):
        """Route a body instruction into the youngest still-filling marker."""
        for ent, _ in reversed(self.queue):
            if isinstance(ent, _Frep) and not ent.filled:
                ent.body.append(ins)
                self.occupancy += 1
                return
        if self.seq is not None and not self.seq.filled:
            self.seq.body.append(ins)
            self.occupancy += 1
            return
        raise SimFault("FREP body instruction with no marker to fill")

    # ------------------------------------------------------------------

    def step(self, cycle):
        # A granted memory op leaves the queue head without consuming this
        # cycle's issue slot.
        if self.mem_busy and self.mem.take_grant():
            self.mem_busy = False
            ins, _ = self.queue.popleft()
            self.occupancy -= 1
            if ins.op == Opcode.FLD:
                # Usable by the op issued next cycle (one load-use slot).
                self.inflight[ins.rd] = cycle + 1
        if self.mem.resp is not None and self.pending_loads:
            value, _ = self.mem.take_resp()
            self.regs[self.pending_loads.popleft()] = bits_to_double(value)
        self._advance(cycle)

    def _advance(self, cycle):
        if self.seq is not None:
            self._seq_issue(cycle)
            return
        if not self.queue:
            return
        ent, addr = self.queue[0]
        if isinstance(ent, _Frep):
            if not ent.filled:
                self.stats.add_stall("frep_fill")
                return
            self.queue.popleft()
            self.occupancy -= 1
            if ent.count == 0:
                self.occupancy -= ent.body_len
                self._advance(cycle)
                return
            self.seq = ent
            self.seq_iter = 0
            self.seq_pos = 0
            self.seq_left = ent.count
            self._seq_issue(cycle)
            return
        if ent.op in (Opcode.FLD, Opcode.FSD):
            if not self.mem_busy:
                self._start_mem(ent, addr, cycle)
            return
        if self._issue(ent, cycle, 0, 0):
            self.queue.popleft()
            self.occupancy -= 1

    def _seq_issue(self, cycle):
        frep = self.seq
        if not frep.filled:
            self.stats.add_stall("frep_fill")
            return
        off = self.seq_iter % (frep.stagger + 1)
        ins = frep.body[self.seq_pos]
        if self._issue(ins, cycle, off, frep.mask):
            self.seq_pos += 1
            if self.seq_pos == frep.body_len:
                self.seq_pos = 0
                self.seq_iter += 1
                self.seq_left -= 1
                if self.seq_left == 0:
                    self.occupancy -= frep.body_len
                    self.seq = None

    def _start_mem(self, ins, addr, cycle):
        if ins.op == Opcode.FLD:
            self.mem.request(addr, 8)
            self.mem_busy = True
            self.pending_loads.append(ins.rd)
            self.inflight[ins.rd] = _NOT_READY
            return
        # FSD: the stored value must be readable before the write can start.
        ok = self._src_ready(ins.rd, cycle)
        if ok is not True:
            self.stats.add_stall(ok)
            return
        value = self._read_source(ins.rd, cycle)
        self.mem.request(addr, 8, is_write=True, wdata=double_to_bits(value))
        self.mem_busy = True

    def _issue(self, ins, cycle, stagger_off, stagger_mask):
        op = ins.op
        rd = ins.rd + (stagger_off if stagger_mask & ST_RD else 0)
        rs1 = ins.rs1 + (stagger_off if stagger_mask & ST_RS1 else 0)
        rs2 = ins.rs2 + (stagger_off if stagger_mask & ST_RS2 else 0)
        rs3 = ins.rs3 + (stagger_off if stagger_mask & ST_RS3 else 0)
        if op == Opcode.FMV_ZERO:
            sources = ()
        elif op == Opcode.FMADD_D:
            sources = (rs1, rs2, rs3)
        else:
            sources = (rs1, rs2)
        for s in sources:
            ok = self._src_ready(s, cycle)
            if ok is not True:
                self.stats.add_stall(ok)
                return False
        if self._stream_reg(rd):
            unit = self.units[rd]
            if unit.job is None or unit.job.direction is not Direction.WRITE:
                self.stats.add_stall("stream_not_ready")
                return False
            if not unit.can_push():
                self.stats.add_stall("stream_full")
                return False
        elif cycle < self.inflight.get(rd, 0):
            self.stats.add_stall("waw")
            return False
        values = [self._read_source(s, cycle) for s in sources]
        if op == Opcode.FMADD_D:
            result = fma(values[0], values[1], values[2])
            latency = self.contract.fpu_latency
            self.stats.fmadds += 1
            self.stats.mac_ops += 1
            self.stats.last_fmadd_retire = cycle + latency
        elif op == Opcode.FADD_D:
            result = values[0] + values[1]
            latency = self.contract.fpu_latency
            self.stats.mac_ops += 1
        elif op == Opcode.FMUL_D:
            result = values[0] * values[1]
            latency = self.contract.fpu_latency
            self.stats.mac_ops += 1
        else:  # FMV_ZERO
            result = 0.0
            latency = self.contract.fmv_zero_latency
        self.stats.fpu_busy_cycles += 1
        if self._stream_reg(rd):
            self.units[rd].push(double_to_bits(result), cycle)
        else:
            self.regs[rd] = result
            self.inflight[rd] = cycle + latency
            if cycle + latency > self.max_retire:
                self.max_retire = cycle + latency
        return True

    def _stream_reg(self, reg):
        return self.enabled and reg < len(self.units)

    def _src_ready(self, reg, cycle):
        if self._stream_reg(reg):
            unit = self.units[reg]
            if unit.job is not None and unit.job.direction is Direction.READ:
                return True if unit.can_pop() else "stream_empty"
            return "stream_not_ready"
        if cycle < self.inflight.get(reg, 0):
            return "raw"
        return True

    def _read_source(self, reg, cycle):
        if self._stream_reg(reg):
            return bits_to_double(self.units[reg].pop(cycle))
        return self.regs[reg]


class Core:
    """Single-issue integer pipeline driving the FPU subsystem."""

    def __init__(self, program, contract, regfile, fpu, units, mem_sub,
                 stats):
        self.program = program
        self.contract = contract
        self.rf = regfile
        self.fpu = fpu
        self.units = units
        self.mem = mem_sub
        self.stats = stats
        self.pc = program.entry
        self.halted = False
        self.busy_until = 0
        self.wait_grant = False
        self.pending_load = None   # destination register of an LW/LH
        self.int_ready = {}        # reg -> cycle the loaded value is usable
        self.frep_fill = 0         # body instructions still to route

    def step(self, cycle):
        if self.wait_grant and self.mem.take_grant():
            self.wait_grant = False
            if self.pending_load is not None:
                # Value usable by the instruction issued next cycle.
                self.int_ready[self.pending_load] = cycle + 1
        if (self.mem.resp is not None and self.pending_load is not None
                and not self.wait_grant):
            value, _ = self.mem.take_resp()
            self.rf.write_x(self.pending_load, value)
            self.pending_load = None
        if self.halted:
            return
        if self.wait_grant:
            self.stats.add_stall("core_mem_wait")
            return
        if cycle < self.busy_until:
            return
        self._execute(cycle)

    def _hazard(self, cycle, *regs):
        for r in regs:
            if cycle < self.int_ready.get(r, 0):
                return True
        return False

    def _execute(self, cycle):
        ins = self.program[self.pc]
        op = ins.op
        rf = self.rf
        self.stats.core_issue_cycles += 1

        if op == Opcode.ADD:
            if self._hazard(cycle, ins.rs1, ins.rs2):
                return self._stall()
            rf.write_x(ins.rd, rf.read_x(ins.rs1) + rf.read_x(ins.rs2))
        elif op == Opcode.SUB:
            if self._hazard(cycle, ins.rs1, ins.rs2):
                return self._stall()
            rf.write_x(ins.rd, rf.read_x(ins.rs1) - rf.read_x(ins.rs2))
        elif op == Opcode.ADDI:
            if self._hazard(cycle, ins.rs1):
                return self._stall()
            rf.write_x(ins.rd, rf.read_x(ins.rs1) + ins.imm)
        elif op == Opcode.SLLI:
            if self._hazard(cycle, ins.rs1):
                return self._stall()
            rf.write_x(ins.rd, rf.read_x(ins.rs1) << ins.imm)
        elif op in (Opcode.LW, Opcode.LH):
            if self._hazard(cycle, ins.rs1):
                return self._stall()
            if self.pending_load is not None:
                return self._stall("core_load_pending")
            addr = rf.read_x(ins.rs1) + ins.imm
            self.mem.request(addr, 4 if op == Opcode.LW else 2)
            self.pending_load = ins.rd
            self.int_ready[ins.rd] = _NOT_READY
            self.wait_grant = True
        elif op == Opcode.SW:
            if self._hazard(cycle, ins.rs1, ins.rs2):
                return self._stall()
            addr = rf.read_x(ins.rs1) + ins.imm
            self.mem.request(addr, 4, is_write=True,
                             wdata=rf.read_x(ins.rs2) & 0xFFFF_FFFF)
            self.wait_grant = True
        elif op == Opcode.BNE:
            if self._hazard(cycle, ins.rs1, ins.rs2):
                return self._stall()
            if rf.read_x(ins.rs1) != rf.read_x(ins.rs2):
                self.pc = ins.imm
                return
        elif op == Opcode.BLT:
            if self._hazard(cycle, ins.rs1, ins.rs2):
                return self._stall()
            if rf.read_x(ins.rs1) < rf.read_x(ins.rs2):
                self.pc = ins.imm
                return
        elif op == Opcode.JUMP:
            self.pc = ins.imm
            return
        elif op in FPU_QUEUE_OPS:
            return self._issue_fp(ins, cycle)
        elif op == Opcode.FREP:
            if self._hazard(cycle, ins.rs1):
                return self._stall()
            if self.fpu.queue_full:
                return self._stall("fpu_queue_full")
            count = rf.read_x(ins.rs1)
            if count < 0:
                raise SimFault(f"FREP with negative count at pc={self.pc}")
            self.fpu.enqueue_frep(count, ins.imm, ins.stagger,
                                  ins.stagger_mask)
            self.frep_fill = ins.imm
        elif op == Opcode.SCFGW:
            if self._hazard(cycle, ins.rs1):
                return self._stall()
            unit = self.units[ins.rd]
            if not unit.write_cfg(ins.imm, rf.read_x(ins.rs1), cycle):
                return self._stall("stream_launch_full")
            self.busy_until = cycle + self.contract.scfgw_cycles
        elif op == Opcode.SSR_ENABLE:
            self.fpu.enabled = True
        elif op == Opcode.SSR_DISABLE:
            if not self.fpu.idle:
                return self._stall("fp_sync")
            self.fpu.enabled = False
        elif op == Opcode.FP_SYNC:
            if not self.fpu.idle:
                return self._stall("fp_sync")
        elif op == Opcode.HALT:
            self.halted = True
            return
        else:  # pragma: no cover
            raise SimFault(f"unimplemented opcode {op}")
        self.pc += 1

    def _issue_fp(self, ins, cycle):
        if self.frep_fill == 0 and self.fpu.queue_full:
            return self._stall("fpu_queue_full")
        addr = None
        if ins.op in (Opcode.FLD, Opcode.FSD):
            if self._hazard(cycle, ins.rs1):
                return self._stall()
            addr = self.rf.read_x(ins.rs1) + ins.imm
        if self.frep_fill:
            self.fpu.feed_frep_body(ins)
            self.frep_fill -= 1
        else:
            self.fpu.enqueue(ins, addr)
        self.pc += 1

    def _stall(self, reason="core_hazard"):
        self.stats.core_issue_cycles -= 1
        self.stats.add_stall(reason)


class CoreComplex:
    """One core with FPU subsystem, two stream units and its two memory
    ports: a shared core/FPU/affine-stream port plus an exclusive
    indirection-stream port.

    FP register f0 maps to stream unit 0 (shared port), f1 to unit 1 (the
    exclusive port).  Either unit can run affine or indirect jobs; the
    split only fixes port ownership.
    """

    def __init__(self, program, contract, shared_port, issr_port, name="cc"):
        self.name = name
        self.contract = contract
        self.rf = RegisterFile()
        self.stats = CycleStats(contract=contract)
        self.mux = SharedPortMux(shared_port,
                                 names=(f"{name}.core", f"{name}.fpu",
                                        f"{name}.ssr"))
        core_sub, fpu_sub, ssr_sub = self.mux.subs
        self.units = [
            StreamUnit(ssr_sub, contract.addr_bits, f"{name}.ssr0"),
            StreamUnit(issr_port, contract.addr_bits, f"{name}.issr1"),
        ]
        self.fpu = FpuSubsystem(contract, self.rf, self.units, fpu_sub,
                                self.stats)
        self.core = Core(program, contract, self.rf, self.fpu, self.units,
                         core_sub, self.stats)

    def step(self, cycle):
        self.mux.deliver()
        for u in self.units:
            u.accept(cycle)
        self.fpu.step(cycle)
        self.core.step(cycle)
        for u in self.units:
            u.step(cycle)
        self.mux.arbitrate()

    def quiesced(self, cycle):
        if not self.core.halted:
            return False
        if not self.fpu.quiesced(cycle):
            return False
        if self.core.wait_grant or self.core.pending_load is not None:
            return False
        for u in self.units:
            if u.busy:
                if u.job is not None and u.job.direction is Direction.READ:
                    raise SimFault(
                        f"{u.name}: core halted with unconsumed read stream "
                        f"({u.consumed}/{u.job.count} consumed)")
                return False
        return True

    def finalize_stats(self, cycle, memory=None):
        st = self.stats
        st.cycles = cycle
        for sub in self.mux.subs:
            st.mem_requests[sub.name] = sub.req_count
        st.mem_requests[f"{self.name}.issr1"] = self.units[1].port.req_count
        if memory is not None and hasattr(memory, "conflict_denied"):
            st.tcdm_conflict_stalls = memory.conflict_denied
        return st


class Machine:
    """Single core complex coupled to an ideal two-port data memory."""

    def __init__(self, program, contract=None, mem_size=None):
        self.contract = contract or TimingContract()
        size = mem_size or (1 << self.contract.addr_bits)
        if size < (1 << self.contract.addr_bits):
            raise SimFault("memory smaller than the configured address space")
        self.memory = IdealMemory(size)
        shared = self.memory.new_port("shared")
        issr = self.memory.new_port("issr")
        self.cc = CoreComplex(program, self.contract, shared, issr)
        self.cycle = 0

    def run(self, max_cycles=50_000_000):
        cc = self.cc
        mem = self.memory
        while True:
            self.cycle += 1
            cycle = self.cycle
            mem.deliver()
            cc.step(cycle)
            mem.step(cycle)
            if cc.core.halted and cc.quiesced(cycle):
                break
            if cycle >= max_cycles:
                raise SimFault(f"simulation exceeded {max_cycles} cycles "
                               f"(pc={cc.core.pc}, halted={cc.core.halted})")
        return cc.finalize_stats(self.cycle, self.memory)


def simulate(program, contract=None, mem_image=(), mem_size=None,
             max_cycles=50_000_000):
    """Run a program to HALT; returns (machine, CycleStats).

    mem_image is an iterable of (address, bytes) pairs loaded before start.
    """
    m = Machine(program, contract, mem_size)
    for addr, blob in mem_image:
        m.memory.load_image(addr, blob)
    stats = m.run(max_cycles)
    return m, stats


def speedup(baseline_stats, variant_stats):
    """Cycle ratio of a baseline run to a variant run."""
    return baseline_stats.cycles / variant_stats.cycles
