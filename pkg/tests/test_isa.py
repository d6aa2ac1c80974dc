"""Instruction container, builder, assembler and disassembler tests."""

import pytest
from hypothesis import given, strategies as st

from streamsim.isa import (Opcode, Instruction, Program, ProgramBuilder,
                           RegisterFile, IsaError, AsmError, assemble,
                           disassemble, ST_RD, ST_RS3)


def _sample_program():
    b = ProgramBuilder()
    b.li(1, 0x100)
    b.addi(2, 1, -8)
    b.slli(3, 2, 3)
    b.add(4, 3, 1)
    b.sub(5, 4, 1)
    b.lw(6, 1, 4)
    b.lh(7, 1, 2)
    b.sw(6, 1, 8)
    b.label("loop")
    b.fld(3, 1, 0)
    b.fmadd(2, 3, 4, 2)
    b.fadd(2, 2, 3)
    b.fmul(4, 2, 3)
    b.fmv_zero(5)
    b.fsd(2, 1, 0)
    b.scfgw(0, 2, 5)
    b.ssr_enable()
    b.li(9, 10)
    b.frep(9, 1, 3, ST_RD | ST_RS3)
    b.fmadd(2, 10, 11, 2)
    b.fp_sync()
    b.ssr_disable()
    b.bne(1, 2, "loop")
    b.blt(1, 2, "loop")
    b.jump("end")
    b.label("end")
    b.halt()
    return b.build()


def test_builder_produces_valid_program():
    prog = _sample_program()
    assert len(prog) > 0
    assert prog.labels["end"] == len(prog) - 1
    assert prog[len(prog) - 1].op == Opcode.HALT


def test_assemble_disassemble_round_trip():
    prog = _sample_program()
    again = assemble(disassemble(prog))
    assert again.instructions == prog.instructions


def test_assemble_basic_syntax():
    prog = assemble("""
        # comment line
        start: addi x1, x0, 5
        lw x2, 8(x1)
        fmadd.d f2, f3, f4, f2
        frep x1, 1, 3, rd|rs3
        fmadd.d f2, f10, f11, f2
        bne x1, x0, start
        halt
    """)
    assert prog.labels["start"] == 0
    assert prog[0].op == Opcode.ADDI and prog[0].imm == 5
    assert prog[1].op == Opcode.LW and prog[1].imm == 8
    assert prog[3].stagger == 3 and prog[3].stagger_mask == (ST_RD | ST_RS3)
    assert prog[5].imm == 0   # branch resolved to label index


@pytest.mark.parametrize("source,fragment", [
    ("frobnicate x1\nhalt", "unknown mnemonic"),
    ("addi x1, x40, 0\nhalt", "register out of range"),
    ("addi x1, f2, 0\nhalt", "expected x-register"),
    ("a: addi x1, x0, 0\na: halt", "duplicate label"),
    ("bne x1, x0, nowhere\nhalt", "unresolved label"),
    ("lw x1, x2\nhalt", "expected imm(xN)"),
])
def test_assemble_errors(source, fragment):
    with pytest.raises(AsmError, match=None) as exc:
        assemble(source)
    assert fragment in str(exc.value)


def test_program_without_halt_rejected():
    with pytest.raises(IsaError, match="HALT"):
        Program((Instruction(Opcode.ADDI, rd=1),)).validate()


def test_unreachable_halt_rejected():
    # jump 0 spins forever; the HALT below is dead code.
    prog = Program((Instruction(Opcode.JUMP, imm=0),
                    Instruction(Opcode.HALT)))
    with pytest.raises(IsaError, match="reachable"):
        prog.validate()


def test_branch_target_out_of_range_rejected():
    prog = Program((Instruction(Opcode.BNE, rs1=1, imm=7),
                    Instruction(Opcode.HALT)))
    with pytest.raises(IsaError, match="branch target"):
        prog.validate()


def test_frep_body_must_be_fpu_ops():
    b = ProgramBuilder()
    b.li(9, 4)
    b.frep(9, 1, 0, 0)
    b.addi(1, 0, 1)   # integer op inside a hardware-loop body
    b.halt()
    with pytest.raises(IsaError, match="FPU instructions"):
        b.build()


def test_frep_stagger_past_register_file_rejected():
    b = ProgramBuilder()
    b.li(9, 4)
    b.frep(9, 1, 3, ST_RD)
    b.fmadd(30, 1, 2, 3)   # f30 + stagger 3 exceeds f31
    b.halt()
    with pytest.raises(IsaError, match="stagger"):
        b.build()


def test_instruction_validation():
    with pytest.raises(IsaError):
        Instruction(Opcode.ADD, rd=32).validate()
    with pytest.raises(IsaError):
        Instruction(Opcode.ADDI, imm=1 << 40).validate()
    with pytest.raises(IsaError):
        Instruction(Opcode.FREP, imm=0).validate()
    with pytest.raises(IsaError):
        Instruction(Opcode.SCFGW, imm=13).validate()


def test_register_file_x0_and_wrapping():
    rf = RegisterFile()
    rf.write_x(0, 1234)
    assert rf.read_x(0) == 0
    rf.write_x(5, (1 << 63))          # wraps to the negative boundary
    assert rf.read_x(5) == -(1 << 63)
    rf.write_x(5, -1)
    assert rf.read_x(5) == -1


@given(st.lists(st.sampled_from([
    ("addi", lambda b, r: b.addi(r % 31 + 1, r % 7, r - 16)),
    ("add", lambda b, r: b.add(r % 31 + 1, r % 9, r % 5)),
    ("fmadd", lambda b, r: b.fmadd(r % 28 + 2, r % 8, r % 8, r % 28 + 2)),
    ("lw", lambda b, r: b.lw(r % 31 + 1, r % 7, 4 * (r % 8))),
    ("sw", lambda b, r: b.sw(r % 9, r % 7, 4 * (r % 8))),
]), min_size=0, max_size=12), st.integers(0, 1000))
def test_listing_round_trip_property(ops, salt):
    b = ProgramBuilder()
    for i, (_, emit) in enumerate(ops):
        emit(b, i + salt)
    b.halt()
    prog = b.build()
    assert assemble(prog.listing()).instructions == prog.instructions
