//! Instruction set of the 32-bit toy MCU.
//!
//! Every instruction is exactly eight bytes:
//! `[opcode:1][rd:1][rs:1][rt:1][imm:4 little-endian]`.
//! Branch and jump immediates are absolute target addresses.

use std::fmt;

use thiserror::Error;

pub const INSN_LEN: u32 = 8;

/// Value placed in `lr` on interrupt entry. Returning to it from handler mode
/// performs an exception return, the same as `iret`.
pub const EXC_RETURN: u32 = 0xFFFF_FFF9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Opcode {
    Nop = 0x00,
    Halt = 0x01,
    Movi = 0x02,
    Mov = 0x03,
    Add = 0x04,
    Sub = 0x05,
    And = 0x06,
    Or = 0x07,
    Xor = 0x08,
    Shl = 0x09,
    Shr = 0x0A,
    Addi = 0x0B,
    Andi = 0x0C,
    Ori = 0x0D,
    Ldw = 0x0E,
    Ldb = 0x0F,
    Stw = 0x10,
    Stb = 0x11,
    Beq = 0x12,
    Bne = 0x13,
    Bltu = 0x14,
    Bgeu = 0x15,
    Jmp = 0x16,
    Call = 0x17,
    Ret = 0x18,
    Iret = 0x19,
}

impl Opcode {
    pub const ALL: [Opcode; 26] = [
        Opcode::Nop,
        Opcode::Halt,
        Opcode::Movi,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::Addi,
        Opcode::Andi,
        Opcode::Ori,
        Opcode::Ldw,
        Opcode::Ldb,
        Opcode::Stw,
        Opcode::Stb,
        Opcode::Beq,
        Opcode::Bne,
        Opcode::Bltu,
        Opcode::Bgeu,
        Opcode::Jmp,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Iret,
    ];

    pub fn from_byte(b: u8) -> Option<Opcode> {
        Self::ALL.get(b as usize).copied()
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Nop => "nop",
            Opcode::Halt => "halt",
            Opcode::Movi => "movi",
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Xor => "xor",
            Opcode::Shl => "shl",
            Opcode::Shr => "shr",
            Opcode::Addi => "addi",
            Opcode::Andi => "andi",
            Opcode::Ori => "ori",
            Opcode::Ldw => "ldw",
            Opcode::Ldb => "ldb",
            Opcode::Stw => "stw",
            Opcode::Stb => "stb",
            Opcode::Beq => "beq",
            Opcode::Bne => "bne",
            Opcode::Bltu => "bltu",
            Opcode::Bgeu => "bgeu",
            Opcode::Jmp => "jmp",
            Opcode::Call => "call",
            Opcode::Ret => "ret",
            Opcode::Iret => "iret",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Self::ALL.iter().copied().find(|op| op.mnemonic() == s)
    }
}

/// Register index, always in `0..16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub const SP: Reg = Reg(13);
    pub const LR: Reg = Reg(14);
    pub const PC: Reg = Reg(15);

    pub fn new(idx: u8) -> Option<Reg> {
        (idx < 16).then_some(Reg(idx))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            13 => write!(f, "sp"),
            14 => write!(f, "lr"),
            15 => write!(f, "pc"),
            n => write!(f, "r{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl AluOp {
    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Shl => a.checked_shl(b).unwrap_or(0),
            AluOp::Shr => a.checked_shr(b).unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Ltu,
    Geu,
}

impl Cond {
    pub fn holds(self, a: u32, b: u32) -> bool {
        match self {
            Cond::Eq => a == b,
            Cond::Ne => a != b,
            Cond::Ltu => a < b,
            Cond::Geu => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    Byte,
    Word,
}

impl Width {
    pub fn bytes(self) -> u32 {
        match self {
            Width::Byte => 1,
            Width::Word => 4,
        }
    }
}

/// A decoded instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    Nop,
    Halt,
    Movi { rd: Reg, imm: u32 },
    Mov { rd: Reg, rs: Reg },
    Alu { op: AluOp, rd: Reg, rs: Reg, rt: Reg },
    AluImm { op: AluOp, rd: Reg, rs: Reg, imm: u32 },
    Load { width: Width, rd: Reg, base: Reg, offset: u32 },
    Store { width: Width, rt: Reg, base: Reg, offset: u32 },
    Branch { cond: Cond, ra: Reg, rb: Reg, target: u32 },
    Jmp { target: u32 },
    Call { target: u32 },
    Ret,
    Iret,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum DecodeError {
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("register index {0} out of range")]
    BadRegister(u8),
    #[error("instruction must be 8 bytes, got {0}")]
    Length(usize),
}

impl Instruction {
    /// True for instructions that terminate a basic block.
    pub fn ends_block(&self) -> bool {
        matches!(
            self,
            Instruction::Branch { .. }
                | Instruction::Jmp { .. }
                | Instruction::Call { .. }
                | Instruction::Ret
                | Instruction::Iret
                | Instruction::Halt
        )
    }

    pub fn opcode(&self) -> Opcode {
        match *self {
            Instruction::Nop => Opcode::Nop,
            Instruction::Halt => Opcode::Halt,
            Instruction::Movi { .. } => Opcode::Movi,
            Instruction::Mov { .. } => Opcode::Mov,
            Instruction::Alu { op, .. } => match op {
                AluOp::Add => Opcode::Add,
                AluOp::Sub => Opcode::Sub,
                AluOp::And => Opcode::And,
                AluOp::Or => Opcode::Or,
                AluOp::Xor => Opcode::Xor,
                AluOp::Shl => Opcode::Shl,
                AluOp::Shr => Opcode::Shr,
            },
            Instruction::AluImm { op, .. } => match op {
                AluOp::Add => Opcode::Addi,
                AluOp::And => Opcode::Andi,
                AluOp::Or => Opcode::Ori,
                _ => unreachable!("no immediate form for {op:?}"),
            },
            Instruction::Load { width: Width::Word, .. } => Opcode::Ldw,
            Instruction::Load { width: Width::Byte, .. } => Opcode::Ldb,
            Instruction::Store { width: Width::Word, .. } => Opcode::Stw,
            Instruction::Store { width: Width::Byte, .. } => Opcode::Stb,
            Instruction::Branch { cond, .. } => match cond {
                Cond::Eq => Opcode::Beq,
                Cond::Ne => Opcode::Bne,
                Cond::Ltu => Opcode::Bltu,
                Cond::Geu => Opcode::Bgeu,
            },
            Instruction::Jmp { .. } => Opcode::Jmp,
            Instruction::Call { .. } => Opcode::Call,
            Instruction::Ret => Opcode::Ret,
            Instruction::Iret => Opcode::Iret,
        }
    }

    pub fn encode(&self) -> [u8; 8] {
        let (rd, rs, rt, imm) = match *self {
            Instruction::Nop | Instruction::Halt | Instruction::Ret | Instruction::Iret => {
                (0, 0, 0, 0)
            }
            Instruction::Movi { rd, imm } => (rd.0, 0, 0, imm),
            Instruction::Mov { rd, rs } => (rd.0, rs.0, 0, 0),
            Instruction::Alu { rd, rs, rt, .. } => (rd.0, rs.0, rt.0, 0),
            Instruction::AluImm { rd, rs, imm, .. } => (rd.0, rs.0, 0, imm),
            Instruction::Load { rd, base, offset, .. } => (rd.0, base.0, 0, offset),
            Instruction::Store { rt, base, offset, .. } => (0, base.0, rt.0, offset),
            Instruction::Branch { ra, rb, target, .. } => (ra.0, rb.0, 0, target),
            Instruction::Jmp { target } | Instruction::Call { target } => (0, 0, 0, target),
        };
        let imm = imm.to_le_bytes();
        [self.opcode() as u8, rd, rs, rt, imm[0], imm[1], imm[2], imm[3]]
    }
}

/// Decodes one instruction from exactly eight bytes.
pub fn decode(bytes: &[u8]) -> Result<Instruction, DecodeError> {
    if bytes.len() != 8 {
        return Err(DecodeError::Length(bytes.len()));
    }
    let op = Opcode::from_byte(bytes[0]).ok_or(DecodeError::UnknownOpcode(bytes[0]))?;
    let reg = |b: u8| Reg::new(b).ok_or(DecodeError::BadRegister(b));
    let rd = reg(bytes[1])?;
    let rs = reg(bytes[2])?;
    let rt = reg(bytes[3])?;
    let imm = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let alu = |op| Instruction::Alu { op, rd, rs, rt };
    let alu_imm = |op| Instruction::AluImm { op, rd, rs, imm };
    let branch = |cond| Instruction::Branch { cond, ra: rd, rb: rs, target: imm };
    Ok(match op {
        Opcode::Nop => Instruction::Nop,
        Opcode::Halt => Instruction::Halt,
        Opcode::Movi => Instruction::Movi { rd, imm },
        Opcode::Mov => Instruction::Mov { rd, rs },
        Opcode::Add => alu(AluOp::Add),
        Opcode::Sub => alu(AluOp::Sub),
        Opcode::And => alu(AluOp::And),
        Opcode::Or => alu(AluOp::Or),
        Opcode::Xor => alu(AluOp::Xor),
        Opcode::Shl => alu(AluOp::Shl),
        Opcode::Shr => alu(AluOp::Shr),
        Opcode::Addi => alu_imm(AluOp::Add),
        Opcode::Andi => alu_imm(AluOp::And),
        Opcode::Ori => alu_imm(AluOp::Or),
        Opcode::Ldw => Instruction::Load { width: Width::Word, rd, base: rs, offset: imm },
        Opcode::Ldb => Instruction::Load { width: Width::Byte, rd, base: rs, offset: imm },
        Opcode::Stw => Instruction::Store { width: Width::Word, rt, base: rs, offset: imm },
        Opcode::Stb => Instruction::Store { width: Width::Byte, rt, base: rs, offset: imm },
        Opcode::Beq => branch(Cond::Eq),
        Opcode::Bne => branch(Cond::Ne),
        Opcode::Bltu => branch(Cond::Ltu),
        Opcode::Bgeu => branch(Cond::Geu),
        Opcode::Jmp => Instruction::Jmp { target: imm },
        Opcode::Call => Instruction::Call { target: imm },
        Opcode::Ret => Instruction::Ret,
        Opcode::Iret => Instruction::Iret,
    })
}

fn signed_offset(off: u32) -> String {
    let s = off as i32;
    if s < 0 {
        format!("-{:#x}", s.unsigned_abs())
    } else {
        format!("+{:#x}", s)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode().mnemonic();
        match *self {
            Instruction::Nop | Instruction::Halt | Instruction::Ret | Instruction::Iret => {
                write!(f, "{m}")
            }
            Instruction::Movi { rd, imm } => write!(f, "{m} {rd}, {imm:#x}"),
            Instruction::Mov { rd, rs } => write!(f, "{m} {rd}, {rs}"),
            Instruction::Alu { rd, rs, rt, .. } => write!(f, "{m} {rd}, {rs}, {rt}"),
            Instruction::AluImm { rd, rs, imm, .. } => write!(f, "{m} {rd}, {rs}, {imm:#x}"),
            Instruction::Load { rd, base, offset, .. } => {
                write!(f, "{m} {rd}, [{base}{}]", signed_offset(offset))
            }
            Instruction::Store { rt, base, offset, .. } => {
                write!(f, "{m} {rt}, [{base}{}]", signed_offset(offset))
            }
            Instruction::Branch { ra, rb, target, .. } => write!(f, "{m} {ra}, {rb}, {target:#x}"),
            Instruction::Jmp { target } | Instruction::Call { target } => {
                write!(f, "{m} {target:#x}")
            }
        }
    }
}
