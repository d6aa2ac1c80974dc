"""Minimal instruction set, program container and program builder.

The ISA is a project-defined subset named after RISC-V mnemonics; only the
opcodes listed in `Opcode` exist.  Programs are immutable after construction
and safe to share between simulator instances.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

NUM_INT_REGS = 32
NUM_FP_REGS = 32

# Stagger mask bits (which register fields FREP offsets per iteration).
ST_RD = 1
ST_RS1 = 2
ST_RS2 = 4
ST_RS3 = 8

_IMM_MIN = -(1 << 31)
_IMM_MAX = (1 << 31) - 1


class Opcode(enum.IntEnum):
    ADD = 0
    SUB = 1
    ADDI = 2
    SLLI = 3
    LW = 4
    LH = 5
    SW = 6
    BNE = 7
    BLT = 8
    JUMP = 9
    FLD = 10
    FSD = 11
    FMADD_D = 12
    FADD_D = 13
    FMUL_D = 14
    FMV_ZERO = 15
    SCFGW = 16
    SSR_ENABLE = 17
    SSR_DISABLE = 18
    FREP = 19
    FP_SYNC = 20
    HALT = 21


# Opcodes whose rd/rs fields refer to the FP register file.
FP_OPS = frozenset({
    Opcode.FLD, Opcode.FSD, Opcode.FMADD_D, Opcode.FADD_D, Opcode.FMUL_D,
    Opcode.FMV_ZERO,
})

# Opcodes dispatched to the FPU subsystem queue.
FPU_QUEUE_OPS = frozenset({
    Opcode.FLD, Opcode.FSD, Opcode.FMADD_D, Opcode.FADD_D, Opcode.FMUL_D,
    Opcode.FMV_ZERO,
})

BRANCH_OPS = frozenset({Opcode.BNE, Opcode.BLT, Opcode.JUMP})


class IsaError(Exception):
    """Malformed instruction or program."""


class AsmError(IsaError):
    """Assembly source error, carries a line number."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    Register fields are indices into the integer or FP file depending on the
    opcode.  For FREP, rs1 is the iteration-count source (integer) register,
    imm is the body length in instructions, and stagger/stagger_mask control
    register staggering.  For SCFGW, rd is the stream-unit id, imm is the
    config-register id and rs1 holds the value.
    """

    op: Opcode
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    rs3: int = 0
    imm: int = 0
    stagger: int = 0
    stagger_mask: int = 0

    def validate(self):
        for r in (self.rd, self.rs1, self.rs2, self.rs3):
            if not 0 <= r < 32:
                raise IsaError(f"register out of range in {self}")
        if not _IMM_MIN <= self.imm <= _IMM_MAX:
            raise IsaError(f"immediate out of range in {self}")
        if self.op == Opcode.FREP:
            if self.imm < 1:
                raise IsaError("FREP body length must be >= 1")
            if self.stagger < 0:
                raise IsaError("FREP stagger count must be >= 0")
        if self.op == Opcode.SCFGW:
            if not 0 <= self.imm <= 12:
                raise IsaError(f"SCFGW config register id {self.imm} invalid")

    def check_stagger_bounds(self):
        """Staggered register fields must stay inside the FP register file."""
        for bit, reg in ((ST_RD, self.rd), (ST_RS1, self.rs1),
                         (ST_RS2, self.rs2), (ST_RS3, self.rs3)):
            if self.stagger_mask & bit and reg + self.stagger >= NUM_FP_REGS:
                raise IsaError(
                    f"stagger pushes register f{reg}+{self.stagger} past "
                    f"f{NUM_FP_REGS - 1}")


@dataclass(frozen=True)
class Program:
    """Ordered instruction list with resolved labels."""

    instructions: tuple
    labels: dict = field(default_factory=dict)
    entry: int = 0

    def __len__(self):
        return len(self.instructions)

    def __getitem__(self, i):
        return self.instructions[i]

    def validate(self):
        n = len(self.instructions)
        halts = 0
        for idx, ins in enumerate(self.instructions):
            ins.validate()
            if ins.op in (Opcode.BNE, Opcode.BLT, Opcode.JUMP):
                if not 0 <= ins.imm < n:
                    raise IsaError(f"branch target {ins.imm} out of range "
                                   f"at instruction {idx}")
            if ins.op == Opcode.FREP:
                if idx + ins.imm >= n:
                    raise IsaError(f"FREP body runs past program end at {idx}")
                for body in self.instructions[idx + 1:idx + 1 + ins.imm]:
                    if body.op not in FPU_QUEUE_OPS:
                        raise IsaError(
                            f"FREP body may only contain FPU instructions, "
                            f"got {body.op.name} at {idx}")
                    b = replace(body, stagger=ins.stagger,
                                stagger_mask=ins.stagger_mask)
                    b.check_stagger_bounds()
            if ins.op == Opcode.HALT:
                halts += 1
        if halts == 0:
            raise IsaError("program has no HALT")
        if not self._halt_reachable():
            raise IsaError("no HALT reachable from entry")
        return self

    def _halt_reachable(self):
        seen = set()
        work = [self.entry]
        while work:
            pc = work.pop()
            if pc in seen or pc >= len(self.instructions):
                continue
            seen.add(pc)
            ins = self.instructions[pc]
            if ins.op == Opcode.HALT:
                return True
            if ins.op == Opcode.JUMP:
                work.append(ins.imm)
            elif ins.op in (Opcode.BNE, Opcode.BLT):
                work.append(ins.imm)
                work.append(pc + 1)
            else:
                work.append(pc + 1)
        return False

    def listing(self):
        """Debug listing with label annotations."""
        by_index = {}
        for name, idx in self.labels.items():
            by_index.setdefault(idx, []).append(name)
        lines = []
        for i, ins in enumerate(self.instructions):
            for name in sorted(by_index.get(i, [])):
                lines.append(f"{name}:")
            lines.append("    " + format_instruction(ins, self))
        return "\n".join(lines) + "\n"


class RegisterFile:
    """32 64-bit integer registers plus 32 FP doubles; x0 reads as zero."""

    __slots__ = ("x", "f")

    def __init__(self):
        self.x = [0] * NUM_INT_REGS
        self.f = [0.0] * NUM_FP_REGS

    def read_x(self, i):
        return 0 if i == 0 else self.x[i]

    def write_x(self, i, value):
        if i != 0:
            # Keep 64-bit two's-complement wrapping semantics.
            value &= (1 << 64) - 1
            if value >= 1 << 63:
                value -= 1 << 64
            self.x[i] = value


class ProgramBuilder:
    """Programmatic program construction with eager validation.

    Branch targets may name labels defined before or after the branch; they
    are resolved in build().
    """

    def __init__(self):
        self._instrs = []
        self._labels = {}
        self._fixups = []  # (index, label)

    def __len__(self):
        return len(self._instrs)

    def label(self, name):
        if name in self._labels:
            raise IsaError(f"duplicate label {name!r}")
        self._labels[name] = len(self._instrs)
        return self

    def emit(self, op, rd=0, rs1=0, rs2=0, rs3=0, imm=0, stagger=0,
             stagger_mask=0):
        ins = Instruction(op, rd, rs1, rs2, rs3, imm, stagger, stagger_mask)
        ins.validate()
        self._instrs.append(ins)
        return self

    # -- convenience emitters -------------------------------------------------

    def add(self, rd, rs1, rs2):
        return self.emit(Opcode.ADD, rd=rd, rs1=rs1, rs2=rs2)

    def sub(self, rd, rs1, rs2):
        return self.emit(Opcode.SUB, rd=rd, rs1=rs1, rs2=rs2)

    def addi(self, rd, rs1, imm):
        return self.emit(Opcode.ADDI, rd=rd, rs1=rs1, imm=imm)

    def li(self, rd, value):
        return self.addi(rd, 0, value)

    def mv(self, rd, rs1):
        return self.add(rd, rs1, 0)

    def slli(self, rd, rs1, imm):
        return self.emit(Opcode.SLLI, rd=rd, rs1=rs1, imm=imm)

    def lw(self, rd, rs1, imm=0):
        return self.emit(Opcode.LW, rd=rd, rs1=rs1, imm=imm)

    def lh(self, rd, rs1, imm=0):
        return self.emit(Opcode.LH, rd=rd, rs1=rs1, imm=imm)

    def sw(self, rs2, rs1, imm=0):
        return self.emit(Opcode.SW, rs1=rs1, rs2=rs2, imm=imm)

    def bne(self, rs1, rs2, target):
        return self._branch(Opcode.BNE, rs1, rs2, target)

    def blt(self, rs1, rs2, target):
        return self._branch(Opcode.BLT, rs1, rs2, target)

    def jump(self, target):
        return self._branch(Opcode.JUMP, 0, 0, target)

    def fld(self, rd, rs1, imm=0):
        return self.emit(Opcode.FLD, rd=rd, rs1=rs1, imm=imm)

    def fsd(self, rd, rs1, imm=0):
        # rd is the FP source being stored; rs1 the integer address base.
        return self.emit(Opcode.FSD, rd=rd, rs1=rs1, imm=imm)

    def fmadd(self, rd, rs1, rs2, rs3):
        return self.emit(Opcode.FMADD_D, rd=rd, rs1=rs1, rs2=rs2, rs3=rs3)

    def fadd(self, rd, rs1, rs2):
        return self.emit(Opcode.FADD_D, rd=rd, rs1=rs1, rs2=rs2)

    def fmul(self, rd, rs1, rs2):
        return self.emit(Opcode.FMUL_D, rd=rd, rs1=rs1, rs2=rs2)

    def fmv_zero(self, rd):
        return self.emit(Opcode.FMV_ZERO, rd=rd)

    def scfgw(self, unit, cfg_reg, rs1):
        return self.emit(Opcode.SCFGW, rd=unit, rs1=rs1, imm=cfg_reg)

    def ssr_enable(self):
        return self.emit(Opcode.SSR_ENABLE)

    def ssr_disable(self):
        return self.emit(Opcode.SSR_DISABLE)

    def frep(self, count_reg, body_len, stagger=0, stagger_mask=0):
        ins = Instruction(Opcode.FREP, rs1=count_reg, imm=body_len,
                          stagger=stagger, stagger_mask=stagger_mask)
        ins.validate()
        self._instrs.append(ins)
        return self

    def fp_sync(self):
        return self.emit(Opcode.FP_SYNC)

    def halt(self):
        return self.emit(Opcode.HALT)

    def _branch(self, op, rs1, rs2, target):
        idx = len(self._instrs)
        if isinstance(target, str):
            self._instrs.append(Instruction(op, rs1=rs1, rs2=rs2, imm=0))
            self._fixups.append((idx, target))
        else:
            self._instrs.append(Instruction(op, rs1=rs1, rs2=rs2, imm=target))
        return self

    def build(self):
        instrs = list(self._instrs)
        for idx, name in self._fixups:
            if name not in self._labels:
                raise IsaError(f"unresolved label {name!r}")
            instrs[idx] = replace(instrs[idx], imm=self._labels[name])
        prog = Program(tuple(instrs), dict(self._labels))
        return prog.validate()


# ---------------------------------------------------------------------------
# Assembler / disassembler
# ---------------------------------------------------------------------------

_MNEMONICS = {
    "add": Opcode.ADD, "sub": Opcode.SUB, "addi": Opcode.ADDI,
    "slli": Opcode.SLLI, "lw": Opcode.LW, "lh": Opcode.LH, "sw": Opcode.SW,
    "bne": Opcode.BNE, "blt": Opcode.BLT, "jump": Opcode.JUMP,
    "fld": Opcode.FLD, "fsd": Opcode.FSD, "fmadd.d": Opcode.FMADD_D,
    "fadd.d": Opcode.FADD_D, "fmul.d": Opcode.FMUL_D,
    "fmv.zero": Opcode.FMV_ZERO, "scfgw": Opcode.SCFGW,
    "ssr_enable": Opcode.SSR_ENABLE, "ssr_disable": Opcode.SSR_DISABLE,
    "frep": Opcode.FREP, "fp_sync": Opcode.FP_SYNC, "halt": Opcode.HALT,
}

_STAGGER_BITS = {"rd": ST_RD, "rs1": ST_RS1, "rs2": ST_RS2, "rs3": ST_RS3}


def _parse_int(tok, lineno):
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(lineno, f"bad integer {tok!r}") from None


def _parse_reg(tok, kind, lineno):
    tok = tok.strip()
    if len(tok) < 2 or tok[0] != kind or not tok[1:].isdigit():
        raise AsmError(lineno, f"expected {kind}-register, got {tok!r}")
    n = int(tok[1:])
    if n >= 32:
        raise AsmError(lineno, f"register out of range: {tok}")
    return n


def _parse_mem_operand(tok, lineno):
    # "imm(xN)" addressing.
    tok = tok.strip()
    if not tok.endswith(")") or "(" not in tok:
        raise AsmError(lineno, f"expected imm(xN) operand, got {tok!r}")
    imm_s, reg_s = tok[:-1].split("(", 1)
    imm = _parse_int(imm_s, lineno) if imm_s else 0
    return imm, _parse_reg(reg_s, "x", lineno)


def assemble(text):
    """Assemble source text into a validated Program.

    Grammar: one instruction per line; `name:` defines a label; `#` starts a
    comment.  Branch targets are labels or absolute instruction indices.
    """
    builder = ProgramBuilder()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        # Allow "label: instr" on one line.
        while ":" in line and not line.startswith(":"):
            head, _, rest = line.partition(":")
            if " " in head.strip() or "," in head:
                break
            try:
                builder.label(head.strip())
            except IsaError as e:
                raise AsmError(lineno, str(e)) from None
            line = rest.strip()
        if not line:
            continue
        parts = line.split(None, 1)
        mnem = parts[0].lower()
        if mnem not in _MNEMONICS:
            raise AsmError(lineno, f"unknown mnemonic {mnem!r}")
        op = _MNEMONICS[mnem]
        args = [a.strip() for a in parts[1].split(",")] if len(parts) > 1 else []
        try:
            _assemble_one(builder, op, args, lineno)
        except IsaError as e:
            if isinstance(e, AsmError):
                raise
            raise AsmError(lineno, str(e)) from None
    try:
        return builder.build()
    except IsaError as e:
        raise AsmError(0, str(e)) from None


def _assemble_one(b, op, args, ln):
    def need(n):
        if len(args) != n:
            raise AsmError(ln, f"{op.name} expects {n} operands, got {len(args)}")

    if op in (Opcode.ADD, Opcode.SUB):
        need(3)
        b.emit(op, rd=_parse_reg(args[0], "x", ln),
               rs1=_parse_reg(args[1], "x", ln), rs2=_parse_reg(args[2], "x", ln))
    elif op in (Opcode.ADDI, Opcode.SLLI):
        need(3)
        b.emit(op, rd=_parse_reg(args[0], "x", ln),
               rs1=_parse_reg(args[1], "x", ln), imm=_parse_int(args[2], ln))
    elif op in (Opcode.LW, Opcode.LH):
        need(2)
        imm, rs1 = _parse_mem_operand(args[1], ln)
        b.emit(op, rd=_parse_reg(args[0], "x", ln), rs1=rs1, imm=imm)
    elif op == Opcode.SW:
        need(2)
        imm, rs1 = _parse_mem_operand(args[1], ln)
        b.emit(op, rs2=_parse_reg(args[0], "x", ln), rs1=rs1, imm=imm)
    elif op in (Opcode.BNE, Opcode.BLT):
        need(3)
        b._branch(op, _parse_reg(args[0], "x", ln),
                  _parse_reg(args[1], "x", ln), _target(args[2]))
    elif op == Opcode.JUMP:
        need(1)
        b._branch(op, 0, 0, _target(args[0]))
    elif op in (Opcode.FLD, Opcode.FSD):
        need(2)
        imm, rs1 = _parse_mem_operand(args[1], ln)
        b.emit(op, rd=_parse_reg(args[0], "f", ln), rs1=rs1, imm=imm)
    elif op == Opcode.FMADD_D:
        need(4)
        b.emit(op, rd=_parse_reg(args[0], "f", ln),
               rs1=_parse_reg(args[1], "f", ln), rs2=_parse_reg(args[2], "f", ln),
               rs3=_parse_reg(args[3], "f", ln))
    elif op in (Opcode.FADD_D, Opcode.FMUL_D):
        need(3)
        b.emit(op, rd=_parse_reg(args[0], "f", ln),
               rs1=_parse_reg(args[1], "f", ln), rs2=_parse_reg(args[2], "f", ln))
    elif op == Opcode.FMV_ZERO:
        need(1)
        b.emit(op, rd=_parse_reg(args[0], "f", ln))
    elif op == Opcode.SCFGW:
        need(3)
        b.emit(op, rd=_parse_int(args[0], ln), imm=_parse_int(args[1], ln),
               rs1=_parse_reg(args[2], "x", ln))
    elif op == Opcode.FREP:
        if len(args) not in (3, 4):
            raise AsmError(ln, "FREP expects count-reg, body-len, stagger[, mask]")
        mask = 0
        if len(args) == 4:
            for part in args[3].split("|"):
                part = part.strip().lower()
                if part not in _STAGGER_BITS:
                    raise AsmError(ln, f"bad stagger field {part!r}")
                mask |= _STAGGER_BITS[part]
        b.frep(_parse_reg(args[0], "x", ln), _parse_int(args[1], ln),
               _parse_int(args[2], ln), mask)
    else:
        need(0)
        b.emit(op)


def _target(tok):
    tok = tok.strip()
    try:
        return int(tok, 0)
    except ValueError:
        return tok


def format_instruction(ins, program=None):
    """Render one instruction in assembler syntax."""
    op = ins.op
    name = {v: k for k, v in _MNEMONICS.items()}[op]

    def tgt():
        if program is not None:
            for lbl, idx in program.labels.items():
                if idx == ins.imm:
                    return lbl
        return str(ins.imm)

    if op in (Opcode.ADD, Opcode.SUB):
        return f"{name} x{ins.rd}, x{ins.rs1}, x{ins.rs2}"
    if op in (Opcode.ADDI, Opcode.SLLI):
        return f"{name} x{ins.rd}, x{ins.rs1}, {ins.imm}"
    if op in (Opcode.LW, Opcode.LH):
        return f"{name} x{ins.rd}, {ins.imm}(x{ins.rs1})"
    if op == Opcode.SW:
        return f"{name} x{ins.rs2}, {ins.imm}(x{ins.rs1})"
    if op in (Opcode.BNE, Opcode.BLT):
        return f"{name} x{ins.rs1}, x{ins.rs2}, {tgt()}"
    if op == Opcode.JUMP:
        return f"{name} {tgt()}"
    if op in (Opcode.FLD, Opcode.FSD):
        return f"{name} f{ins.rd}, {ins.imm}(x{ins.rs1})"
    if op == Opcode.FMADD_D:
        return f"{name} f{ins.rd}, f{ins.rs1}, f{ins.rs2}, f{ins.rs3}"
    if op in (Opcode.FADD_D, Opcode.FMUL_D):
        return f"{name} f{ins.rd}, f{ins.rs1}, f{ins.rs2}"
    if op == Opcode.FMV_ZERO:
        return f"{name} f{ins.rd}"
    if op == Opcode.SCFGW:
        return f"{name} {ins.rd}, {ins.imm}, x{ins.rs1}"
    if op == Opcode.FREP:
        mask = "|".join(n for n, bit in _STAGGER_BITS.items()
                        if ins.stagger_mask & bit)
        s = f"{name} x{ins.rs1}, {ins.imm}, {ins.stagger}"
        return s + (f", {mask}" if mask else "")
    return name


def disassemble(program):
    """Inverse of assemble() up to label names: assemble(disassemble(p))
    yields a program with identical instructions."""
    return program.listing()
