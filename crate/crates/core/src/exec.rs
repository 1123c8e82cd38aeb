//! Single-step concolic execution of µVM-32 instructions.

use std::fmt;

use crate::expr::{BinOp, Expr};
use crate::isa::{AluOp, Cond, DecodeError, Instruction, Reg, Width, EXC_RETURN, INSN_LEN};
use crate::memory::RegionKind;
use crate::state::{ExecState, Frame, Mode, TaggedWord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    /// Access to an address outside every region.
    Unmapped,
    /// Store to read-only memory.
    RomWrite,
    /// Fetch from an address that is not executable ROM.
    NotExecutable,
    Decode(DecodeError),
    /// Word access not aligned to 4 bytes.
    Unaligned,
    /// Exception return outside handler mode.
    BadReturn,
    /// Exception frame push or pop outside RAM.
    StackFault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fault {
    pub kind: FaultKind,
    pub addr: u32,
    pub pc: u32,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {:#010x} (pc {:#x})", self.kind, self.addr, self.pc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue { block_end: bool },
    Halted,
    /// A conditional branch whose outcome depends on symbols. The pc is left
    /// at the branch.
    BranchOnSymbol { cond: Expr, true_target: u32, false_target: u32 },
    Fault(Fault),
}

/// Peripheral access callbacks. Reads return the value placed in the
/// destination register; writes receive concrete values only.
pub trait EngineHooks {
    fn mmio_read(&mut self, st: &mut ExecState, addr: u32, width: Width) -> TaggedWord;
    fn mmio_write(&mut self, st: &mut ExecState, addr: u32, width: Width, value: u32);
}

/// Hooks for code without peripherals: reads return zero.
pub struct NullHooks;

impl EngineHooks for NullHooks {
    fn mmio_read(&mut self, _: &mut ExecState, _: u32, _: Width) -> TaggedWord {
        TaggedWord::Concrete(0)
    }
    fn mmio_write(&mut self, _: &mut ExecState, _: u32, _: Width, _: u32) {}
}

fn to_binop(op: AluOp) -> BinOp {
    match op {
        AluOp::Add => BinOp::Add,
        AluOp::Sub => BinOp::Sub,
        AluOp::And => BinOp::And,
        AluOp::Or => BinOp::Or,
        AluOp::Xor => BinOp::Xor,
        AluOp::Shl => BinOp::Shl,
        AluOp::Shr => BinOp::LShr,
    }
}

pub fn alu(op: AluOp, a: &TaggedWord, b: &TaggedWord) -> TaggedWord {
    match (a, b) {
        (TaggedWord::Concrete(x), TaggedWord::Concrete(y)) => TaggedWord::Concrete(op.apply(*x, *y)),
        _ => TaggedWord::from_expr(Expr::binop(to_binop(op), &a.to_expr(), &b.to_expr())),
    }
}

fn cond_op(c: Cond) -> BinOp {
    match c {
        Cond::Eq => BinOp::Eq,
        Cond::Ne => BinOp::Ne,
        Cond::Ltu => BinOp::Ult,
        Cond::Geu => BinOp::Uge,
    }
}

/// Register write; the pc is not a data destination, so writes to it are
/// dropped.
fn set_reg(st: &mut ExecState, r: Reg, v: TaggedWord) {
    if r != Reg::PC {
        st.cpu.regs[r.index()] = v;
    }
}

fn get_reg(st: &ExecState, r: Reg) -> TaggedWord {
    st.cpu.regs[r.index()].clone()
}

/// Concrete value of a word that must be concrete, pinning symbolic data.
fn concrete_of(st: &mut ExecState, w: &TaggedWord) -> u32 {
    match w {
        TaggedWord::Concrete(v) => *v,
        TaggedWord::Symbolic(e) => {
            let v = st.pin(e);
            log::debug!("concretized {e} to {v:#x} at pc {:#x}", st.pc());
            v
        }
    }
}

fn fault(kind: FaultKind, addr: u32, pc: u32) -> Fault {
    Fault { kind, addr, pc }
}

pub fn load(st: &mut ExecState, addr: u32, width: Width, hooks: &mut dyn EngineHooks) -> Result<TaggedWord, Fault> {
    let pc = st.pc();
    let n = width.bytes();
    if width == Width::Word && addr % 4 != 0 {
        return Err(fault(FaultKind::Unaligned, addr, pc));
    }
    let region = match st.fw.map.find(addr) {
        Some(r) if r.contains_range(addr, n) => *r,
        _ => return Err(fault(FaultKind::Unmapped, addr, pc)),
    };
    Ok(match region.kind {
        RegionKind::Rom => {
            let v = match width {
                Width::Word => st.fw.rom_word(addr).unwrap_or(0),
                Width::Byte => st.fw.rom_byte(addr).unwrap_or(0) as u32,
            };
            TaggedWord::Concrete(v)
        }
        RegionKind::Ram => match width {
            Width::Word => st.ram.read_word(addr),
            Width::Byte => st.ram.read_byte(addr),
        },
        RegionKind::Mmio => hooks.mmio_read(st, addr, width),
        RegionKind::System => {
            let word = st.irq.read(&region, addr & !3).unwrap_or(0);
            TaggedWord::Concrete(match width {
                Width::Word => word,
                Width::Byte => (word >> (8 * (addr & 3))) & 0xFF,
            })
        }
    })
}

pub fn store(
    st: &mut ExecState,
    addr: u32,
    width: Width,
    value: &TaggedWord,
    hooks: &mut dyn EngineHooks,
) -> Result<(), Fault> {
    let pc = st.pc();
    let n = width.bytes();
    if width == Width::Word && addr % 4 != 0 {
        return Err(fault(FaultKind::Unaligned, addr, pc));
    }
    let region = match st.fw.map.find(addr) {
        Some(r) if r.contains_range(addr, n) => *r,
        _ => return Err(fault(FaultKind::Unmapped, addr, pc)),
    };
    match region.kind {
        RegionKind::Rom => return Err(fault(FaultKind::RomWrite, addr, pc)),
        RegionKind::Ram => match width {
            Width::Word => st.ram.write_word(addr, value),
            Width::Byte => st.ram.write_byte(addr, value),
        },
        RegionKind::Mmio => {
            let v = concrete_of(st, value);
            let v = if width == Width::Byte { v & 0xFF } else { v };
            st.mmio_write_log.insert(addr, v);
            hooks.mmio_write(st, addr, width, v);
        }
        RegionKind::System => {
            let v = concrete_of(st, value);
            if width == Width::Word {
                st.irq.write(&region, addr, v);
            }
        }
    }
    Ok(())
}

/// Executes the instruction at the pc.
pub fn step(st: &mut ExecState, hooks: &mut dyn EngineHooks) -> StepOutcome {
    let pc = st.pc();
    if pc % 2 != 0 {
        return StepOutcome::Fault(fault(FaultKind::Unaligned, pc, pc));
    }
    let insn = match st.fw.fetch(pc) {
        None => return StepOutcome::Fault(fault(FaultKind::NotExecutable, pc, pc)),
        Some(Err(e)) => return StepOutcome::Fault(fault(FaultKind::Decode(e), pc, pc)),
        Some(Ok(i)) => i,
    };
    match exec(st, insn, pc, hooks) {
        Ok(o) => o,
        Err(f) => StepOutcome::Fault(f),
    }
}

fn exec(st: &mut ExecState, insn: Instruction, pc: u32, hooks: &mut dyn EngineHooks) -> Result<StepOutcome, Fault> {
    let next = pc.wrapping_add(INSN_LEN);
    let cont = StepOutcome::Continue { block_end: false };
    let read_op = |st: &ExecState, r: Reg| if r == Reg::PC { TaggedWord::Concrete(pc) } else { get_reg(st, r) };
    match insn {
        Instruction::Nop => {}
        Instruction::Halt => return Ok(StepOutcome::Halted),
        Instruction::Movi { rd, imm } => set_reg(st, rd, TaggedWord::Concrete(imm)),
        Instruction::Mov { rd, rs } => {
            let v = read_op(st, rs);
            set_reg(st, rd, v)
        }
        Instruction::Alu { op, rd, rs, rt } => {
            let v = alu(op, &read_op(st, rs), &read_op(st, rt));
            set_reg(st, rd, v)
        }
        Instruction::AluImm { op, rd, rs, imm } => {
            let v = alu(op, &read_op(st, rs), &TaggedWord::Concrete(imm));
            set_reg(st, rd, v)
        }
        Instruction::Load { width, rd, base, offset } => {
            let b = read_op(st, base);
            let addr = concrete_of(st, &b).wrapping_add(offset);
            let v = load(st, addr, width, hooks)?;
            set_reg(st, rd, v)
        }
        Instruction::Store { width, rt, base, offset } => {
            let b = read_op(st, base);
            let addr = concrete_of(st, &b).wrapping_add(offset);
            let v = read_op(st, rt);
            store(st, addr, width, &v, hooks)?
        }
        Instruction::Branch { cond, ra, rb, target } => {
            let a = read_op(st, ra);
            let b = read_op(st, rb);
            let taken = match (&a, &b) {
                (TaggedWord::Concrete(x), TaggedWord::Concrete(y)) => cond.holds(*x, *y),
                _ => {
                    let c = Expr::binop(cond_op(cond), &a.to_expr(), &b.to_expr());
                    match c.as_const() {
                        Some(v) => v == 1,
                        None => {
                            return Ok(StepOutcome::BranchOnSymbol { cond: c, true_target: target, false_target: next })
                        }
                    }
                }
            };
            st.cpu.set_pc(if taken { target } else { next });
            return Ok(StepOutcome::Continue { block_end: true });
        }
        Instruction::Jmp { target } => {
            st.cpu.set_pc(target);
            return Ok(StepOutcome::Continue { block_end: true });
        }
        Instruction::Call { target } => {
            st.cpu.regs[Reg::LR.index()] = TaggedWord::Concrete(next);
            st.push_frame(Frame::Call(pc));
            st.cpu.set_pc(target);
            return Ok(StepOutcome::Continue { block_end: true });
        }
        Instruction::Ret => {
            let lr = get_reg(st, Reg::LR);
            let to = concrete_of(st, &lr);
            if to == EXC_RETURN && st.in_handler() {
                exception_return(st)?;
            } else {
                if matches!(st.call_stack.last(), Some(Frame::Call(_))) {
                    st.call_stack.pop();
                }
                st.cpu.set_pc(to);
            }
            return Ok(StepOutcome::Continue { block_end: true });
        }
        Instruction::Iret => {
            if !st.in_handler() {
                return Err(fault(FaultKind::BadReturn, pc, pc));
            }
            exception_return(st)?;
            return Ok(StepOutcome::Continue { block_end: true });
        }
    }
    st.cpu.set_pc(next);
    Ok(cont)
}

const FRAME_BYTES: u32 = 24;

fn stack_ok(st: &ExecState, sp: u32) -> bool {
    sp % 4 == 0 && st.fw.map.ram().contains_range(sp, FRAME_BYTES)
}

/// Enters the handler for `irq`: pushes r0-r3, lr and the return pc, then
/// jumps through the vector table.
pub fn enter_interrupt(st: &mut ExecState, irq: u8) -> Result<(), Fault> {
    let pc = st.pc();
    if st.in_handler() {
        return Err(fault(FaultKind::BadReturn, pc, pc));
    }
    let vector = st.fw.irq_vector(irq).ok_or(fault(FaultKind::NotExecutable, 0, pc))?;
    let sp_word = get_reg(st, Reg::SP);
    let sp = concrete_of(st, &sp_word).wrapping_sub(FRAME_BYTES);
    if !stack_ok(st, sp) {
        return Err(fault(FaultKind::StackFault, sp, pc));
    }
    let mut frame: Vec<TaggedWord> = (0..4).map(|i| st.cpu.regs[i].clone()).collect();
    frame.push(get_reg(st, Reg::LR));
    frame.push(TaggedWord::Concrete(pc));
    for (k, w) in frame.iter().enumerate() {
        st.ram.write_word(sp + 4 * k as u32, w);
    }
    st.cpu.regs[Reg::SP.index()] = TaggedWord::Concrete(sp);
    st.cpu.regs[Reg::LR.index()] = TaggedWord::Concrete(EXC_RETURN);
    st.cpu.mode = Mode::Handler(irq);
    st.push_frame(Frame::Irq(irq));
    st.cpu.set_pc(vector);
    Ok(())
}

fn exception_return(st: &mut ExecState) -> Result<(), Fault> {
    let pc = st.pc();
    let sp_word = get_reg(st, Reg::SP);
    let sp = concrete_of(st, &sp_word);
    if !stack_ok(st, sp) {
        return Err(fault(FaultKind::StackFault, sp, pc));
    }
    let words: Vec<TaggedWord> = (0..6).map(|k| st.ram.read_word(sp + 4 * k)).collect();
    for (i, w) in words.iter().take(4).enumerate() {
        st.cpu.regs[i] = w.clone();
    }
    st.cpu.regs[Reg::LR.index()] = words[4].clone();
    let ret = concrete_of(st, &words[5]);
    st.cpu.regs[Reg::SP.index()] = TaggedWord::Concrete(sp + FRAME_BYTES);
    st.cpu.mode = Mode::Thread;
    while let Some(f) = st.call_stack.pop() {
        if matches!(f, Frame::Irq(_)) {
            break;
        }
    }
    st.cpu.set_pc(ret);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::Firmware;
    use crate::irq::Intervals;
    use crate::memory::MemoryMap;
    use std::sync::Arc;

    fn machine(code: &[Instruction], handler: Option<&[Instruction]>) -> ExecState {
        let mut img = vec![0u8; 0x40];
        img[0..4].copy_from_slice(&0x2001_0000u32.to_le_bytes());
        img[4..8].copy_from_slice(&0x40u32.to_le_bytes());
        for i in code {
            img.extend_from_slice(&i.encode());
        }
        if let Some(h) = handler {
            let at = img.len() as u32;
            img[8..12].copy_from_slice(&at.to_le_bytes());
            for i in h {
                img.extend_from_slice(&i.encode());
            }
        }
        let fw = Firmware::new(&img, MemoryMap::default()).unwrap();
        ExecState::new(Arc::new(fw), Intervals::default(), 64)
    }

    fn r(n: u8) -> Reg {
        Reg::new(n).unwrap()
    }

    struct SymHooks;
    impl EngineHooks for SymHooks {
        fn mmio_read(&mut self, st: &mut ExecState, addr: u32, width: Width) -> TaggedWord {
            let w = if width == Width::Byte { 8 } else { 32 };
            let pc = st.pc();
            TaggedWord::from_expr(st.new_symbol(addr, pc, w, 0, None).zext(32))
        }
        fn mmio_write(&mut self, _: &mut ExecState, _: u32, _: Width, _: u32) {}
    }

    #[test]
    fn movi_sets_register() {
        let mut st = machine(&[Instruction::Movi { rd: r(0), imm: 0x22 }], None);
        assert_eq!(step(&mut st, &mut NullHooks), StepOutcome::Continue { block_end: false });
        assert_eq!(st.cpu.regs[0], TaggedWord::Concrete(0x22));
        assert_eq!(st.pc(), 0x48);
    }

    #[test]
    fn mmio_load_and_symbolic_branch() {
        let code = [
            Instruction::Movi { rd: r(2), imm: 0x4002_3800 },
            Instruction::Load { width: Width::Word, rd: r(1), base: r(2), offset: 0 },
            Instruction::AluImm { op: AluOp::And, rd: r(1), rs: r(1), imm: 0x20000 },
            Instruction::Movi { rd: r(0), imm: 0 },
            Instruction::Branch { cond: Cond::Ne, ra: r(1), rb: r(0), target: 0x100 },
        ];
        let mut st = machine(&code, None);
        for _ in 0..4 {
            assert!(matches!(step(&mut st, &mut SymHooks), StepOutcome::Continue { .. }));
        }
        assert!(st.cpu.regs[1].is_symbolic());
        match step(&mut st, &mut SymHooks) {
            StepOutcome::BranchOnSymbol { cond, true_target, false_target } => {
                assert_eq!(cond.to_string(), "(distinct (bvand s0 #x00020000) #x00000000)");
                assert_eq!((true_target, false_target), (0x100, 0x68));
            }
            o => panic!("unexpected {o:?}"),
        }
        assert_eq!(st.pc(), 0x60);
    }

    #[test]
    fn unmapped_load_faults() {
        let code = [
            Instruction::Movi { rd: r(2), imm: 0x1234_5678 },
            Instruction::Load { width: Width::Word, rd: r(1), base: r(2), offset: 0 },
        ];
        let mut st = machine(&code, None);
        step(&mut st, &mut NullHooks);
        match step(&mut st, &mut NullHooks) {
            StepOutcome::Fault(f) => assert_eq!((f.kind, f.addr), (FaultKind::Unmapped, 0x1234_5678)),
            o => panic!("unexpected {o:?}"),
        }
    }

    #[test]
    fn rom_write_and_decode_faults() {
        let code = [Instruction::Store { width: Width::Word, rt: r(1), base: r(2), offset: 0x40 }];
        let mut st = machine(&code, None);
        assert!(matches!(step(&mut st, &mut NullHooks), StepOutcome::Fault(Fault { kind: FaultKind::RomWrite, .. })));
        let mut st = machine(&[], None);
        st.cpu.set_pc(0x0);
        // bytes 00 00 01 20 of the initial sp: rt = 0x20 is not a register
        assert!(matches!(
            step(&mut st, &mut NullHooks),
            StepOutcome::Fault(Fault { kind: FaultKind::Decode(DecodeError::BadRegister(0x20)), .. })
        ));
    }

    #[test]
    fn interrupt_entry_and_return_is_identity() {
        let code = [Instruction::Nop];
        let mut st = machine(&code, Some(&[Instruction::Movi { rd: r(0), imm: 9 }, Instruction::Iret]));
        for i in 0..4 {
            st.cpu.regs[i] = TaggedWord::Concrete(0x100 + i as u32);
        }
        st.cpu.regs[14] = TaggedWord::Concrete(0x1234);
        let before = st.cpu.clone();
        enter_interrupt(&mut st, 0).unwrap();
        assert_eq!(st.cpu.mode, Mode::Handler(0));
        assert_eq!(st.cpu.regs[14], TaggedWord::Concrete(EXC_RETURN));
        assert_eq!(st.cpu.regs[13], TaggedWord::Concrete(0x2001_0000 - 24));
        assert!(enter_interrupt(&mut st, 0).is_err());
        step(&mut st, &mut NullHooks);
        step(&mut st, &mut NullHooks);
        assert_eq!(st.cpu, before);
        assert!(st.call_stack.is_empty());
    }

    #[test]
    fn iret_in_thread_mode_faults() {
        let mut st = machine(&[Instruction::Iret], None);
        assert!(matches!(step(&mut st, &mut NullHooks), StepOutcome::Fault(Fault { kind: FaultKind::BadReturn, .. })));
    }

    #[test]
    fn call_and_ret_track_frames() {
        let code = [
            Instruction::Call { target: 0x50 },
            Instruction::Halt,
            Instruction::Ret,
        ];
        let mut st = machine(&code, None);
        step(&mut st, &mut NullHooks);
        assert_eq!(st.call_stack, vec![Frame::Call(0x40)]);
        assert_eq!(st.pc(), 0x50);
        step(&mut st, &mut NullHooks);
        assert!(st.call_stack.is_empty());
        assert_eq!(step(&mut st, &mut NullHooks), StepOutcome::Halted);
    }
}
