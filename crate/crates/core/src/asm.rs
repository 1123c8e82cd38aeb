//! Two-pass assembler and a disassembler for µVM-32.
//!
//! Syntax: one statement per line, `label:` prefixes, `;` comments.
//! Directives are `.org`, `.word`, `.byte`, `.ascii`, `.space`, `.align`
//! and `.equ NAME, value`. Operands are registers (`r0`..`r15`, `sp`, `lr`,
//! `pc`), memory references `[rN+imm]`, or expressions built from numbers,
//! character literals and symbols joined with `+` and `-`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{decode, AluOp, Cond, Instruction, Opcode, Reg, Width, INSN_LEN};
use crate::memory::DEFAULT_ROM;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("{0}")]
    Syntax(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("undefined symbol `{0}`")]
    Undefined(String),
    #[error("target {0:#x} lies outside ROM")]
    OutsideRom(u32),
    #[error(".org {0:#x} moves backwards")]
    OrgBackwards(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub col: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembled {
    pub image: Vec<u8>,
    /// Label addresses.
    pub symbols: BTreeMap<String, u32>,
}

#[derive(Debug, Clone)]
enum Stmt {
    Insn(Opcode, Vec<Operand>),
    Org(Expr),
    Words(Vec<Expr>),
    Bytes(Vec<Expr>),
    Ascii(Vec<u8>),
    Space(Expr),
    Align(Expr),
}

#[derive(Debug, Clone)]
enum Operand {
    Reg(Reg),
    Mem(Reg, Expr),
    Imm(Expr),
}

/// Sum of signed terms.
#[derive(Debug, Clone)]
struct Expr {
    terms: Vec<(bool, Term)>,
    col: usize,
}

#[derive(Debug, Clone)]
enum Term {
    Num(u32),
    Sym(String),
}

struct Line {
    no: usize,
    col: usize,
    stmt: Stmt,
}

fn err(line: usize, col: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, col, kind }
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> AsmError {
    err(line, col, AsmErrorKind::Syntax(msg.into()))
}

fn parse_reg(s: &str) -> Option<Reg> {
    match s.to_ascii_lowercase().as_str() {
        "sp" => Some(Reg::SP),
        "lr" => Some(Reg::LR),
        "pc" => Some(Reg::PC),
        r => r.strip_prefix('r')?.parse::<u8>().ok().and_then(Reg::new),
    }
}

fn unescape(s: &str, line: usize, col: usize) -> Result<Vec<u8>, AsmError> {
    let mut out = Vec::new();
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        match it.next() {
            Some('n') => out.push(b'\n'),
            Some('r') => out.push(b'\r'),
            Some('t') => out.push(b'\t'),
            Some('0') => out.push(0),
            Some('\\') => out.push(b'\\'),
            Some('"') => out.push(b'"'),
            Some('\'') => out.push(b'\''),
            Some('x') => {
                let h: String = it.by_ref().take(2).collect();
                let v = u8::from_str_radix(&h, 16).map_err(|_| syntax(line, col, format!("bad escape `\\x{h}`")))?;
                out.push(v);
            }
            other => return Err(syntax(line, col, format!("bad escape `\\{}`", other.unwrap_or(' ')))),
        }
    }
    Ok(out)
}

fn parse_number(s: &str) -> Option<u32> {
    let s = s.replace('_', "");
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u32::from_str_radix(h, 16).ok()
    } else if let Some(b) = s.strip_prefix("0b") {
        u32::from_str_radix(b, 2).ok()
    } else {
        s.parse::<u32>().ok()
    }
}

fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_' || ch == '.')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '.')
}

fn parse_expr(s: &str, line: usize, col: usize) -> Result<Expr, AsmError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(syntax(line, col, "missing operand"));
    }
    let mut terms = Vec::new();
    let mut neg = false;
    let mut cur = String::new();
    let mut in_char = false;
    let mut chars = s.chars().peekable();
    let flush = |cur: &mut String, neg: bool, terms: &mut Vec<(bool, Term)>| -> Result<(), AsmError> {
        let t = cur.trim();
        if t.is_empty() {
            return Err(syntax(line, col, format!("malformed expression `{s}`")));
        }
        let term = if let Some(inner) = t.strip_prefix('\'').and_then(|r| r.strip_suffix('\'')) {
            let b = unescape(inner, line, col)?;
            if b.len() != 1 {
                return Err(syntax(line, col, format!("bad character literal {t}")));
            }
            Term::Num(b[0] as u32)
        } else if let Some(n) = parse_number(t) {
            Term::Num(n)
        } else if is_ident(t) {
            Term::Sym(t.to_string())
        } else {
            return Err(syntax(line, col, format!("bad operand `{t}`")));
        };
        terms.push((neg, term));
        cur.clear();
        Ok(())
    };
    while let Some(c) = chars.next() {
        if c == '\'' {
            in_char = !in_char;
            cur.push(c);
            if in_char && chars.peek() == Some(&'\\') {
                cur.push(chars.next().unwrap_or('\\'));
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            continue;
        }
        if !in_char && (c == '+' || c == '-') {
            if cur.trim().is_empty() && terms.is_empty() {
                neg ^= c == '-';
                continue;
            }
            flush(&mut cur, neg, &mut terms)?;
            neg = c == '-';
            continue;
        }
        cur.push(c);
    }
    flush(&mut cur, neg, &mut terms)?;
    Ok(Expr { terms, col })
}

/// Splits on commas outside quotes and brackets, keeping columns.
fn split_operands(s: &str, base_col: usize) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    let mut quote: Option<char> = None;
    let mut depth = 0;
    for (i, c) in s.char_indices() {
        match c {
            '"' | '\'' if quote.is_none() => quote = Some(c),
            q if Some(q) == quote => quote = None,
            '[' if quote.is_none() => depth += 1,
            ']' if quote.is_none() => depth -= 1,
            ',' if quote.is_none() && depth == 0 => {
                out.push((cur.trim().to_string(), base_col + start));
                cur.clear();
                start = i + 1;
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push((cur.trim().to_string(), base_col + start));
    }
    out
}

fn strip_comment(s: &str) -> &str {
    let mut quote: Option<char> = None;
    let mut prev = ' ';
    for (i, c) in s.char_indices() {
        match c {
            '"' | '\'' if quote.is_none() => quote = Some(c),
            q if Some(q) == quote && prev != '\\' => quote = None,
            ';' if quote.is_none() => return &s[..i],
            _ => {}
        }
        prev = c;
    }
    s
}

fn parse_operand(s: &str, line: usize, col: usize) -> Result<Operand, AsmError> {
    if let Some(r) = parse_reg(s) {
        return Ok(Operand::Reg(r));
    }
    if let Some(inner) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let inner = inner.trim();
        let split = inner.find(['+', '-']);
        let (reg, off) = match split {
            Some(i) => (&inner[..i], &inner[i..]),
            None => (inner, "0"),
        };
        let r = parse_reg(reg.trim()).ok_or_else(|| syntax(line, col, format!("bad base register `{}`", reg.trim())))?;
        return Ok(Operand::Mem(r, parse_expr(off, line, col)?));
    }
    Ok(Operand::Imm(parse_expr(s, line, col)?))
}

fn parse(src: &str) -> Result<(Vec<Line>, Vec<(String, usize, usize, usize)>, Vec<(String, Expr, usize)>), AsmError> {
    // labels are recorded as (name, statement index, line, col)
    let mut lines = Vec::new();
    let mut labels = Vec::new();
    let mut equs = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let no = idx + 1;
        let mut text = strip_comment(raw);
        let mut col = 1;
        loop {
            let trimmed = text.trim_start();
            col += text.len() - trimmed.len();
            text = trimmed;
            let Some(colon) = text.find(':') else { break };
            let name = &text[..colon];
            if !is_ident(name) {
                break;
            }
            labels.push((name.to_string(), lines.len(), no, col));
            col += colon + 1;
            text = &text[colon + 1..];
        }
        let text = text.trim_end();
        if text.is_empty() {
            continue;
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(i) => (&text[..i], &text[i..]),
            None => (text, ""),
        };
        let rest_col = col + head.len() + (rest.len() - rest.trim_start().len());
        let rest = rest.trim();
        let ops = split_operands(rest, rest_col);
        let lower = head.to_ascii_lowercase();
        let stmt = match lower.as_str() {
            ".org" => Stmt::Org(parse_expr(rest, no, rest_col)?),
            ".word" => Stmt::Words(ops.iter().map(|(o, c)| parse_expr(o, no, *c)).collect::<Result<_, _>>()?),
            ".byte" => Stmt::Bytes(ops.iter().map(|(o, c)| parse_expr(o, no, *c)).collect::<Result<_, _>>()?),
            ".space" => Stmt::Space(parse_expr(rest, no, rest_col)?),
            ".align" => Stmt::Align(parse_expr(rest, no, rest_col)?),
            ".ascii" => {
                let inner = rest
                    .strip_prefix('"')
                    .and_then(|r| r.strip_suffix('"'))
                    .ok_or_else(|| syntax(no, rest_col, "expected a quoted string"))?;
                Stmt::Ascii(unescape(inner, no, rest_col)?)
            }
            ".equ" => {
                if ops.len() != 2 || !is_ident(&ops[0].0) {
                    return Err(syntax(no, rest_col, "expected `.equ NAME, value`"));
                }
                equs.push((ops[0].0.clone(), parse_expr(&ops[1].0, no, ops[1].1)?, no));
                continue;
            }
            m => {
                let op = Opcode::from_mnemonic(m).ok_or_else(|| syntax(no, col, format!("unknown mnemonic `{head}`")))?;
                let operands = ops.iter().map(|(o, c)| parse_operand(o, no, *c)).collect::<Result<_, _>>()?;
                Stmt::Insn(op, operands)
            }
        };
        lines.push(Line { no, col, stmt });
    }
    Ok((lines, labels, equs))
}

struct Ctx<'a> {
    symbols: &'a BTreeMap<String, u32>,
    line: usize,
}

impl Ctx<'_> {
    fn eval(&self, e: &Expr) -> Result<u32, AsmError> {
        let mut acc = 0u32;
        for (neg, t) in &e.terms {
            let v = match t {
                Term::Num(n) => *n,
                Term::Sym(s) => *self
                    .symbols
                    .get(s)
                    .ok_or_else(|| err(self.line, e.col, AsmErrorKind::Undefined(s.clone())))?,
            };
            acc = if *neg { acc.wrapping_sub(v) } else { acc.wrapping_add(v) };
        }
        Ok(acc)
    }
}

fn stmt_size(stmt: &Stmt, addr: u32, ctx: &Ctx<'_>) -> Result<u32, AsmError> {
    Ok(match stmt {
        Stmt::Insn(..) => INSN_LEN,
        Stmt::Words(w) => 4 * w.len() as u32,
        Stmt::Bytes(b) => b.len() as u32,
        Stmt::Ascii(s) => s.len() as u32,
        Stmt::Space(e) => ctx.eval(e)?,
        Stmt::Align(e) => {
            let a = ctx.eval(e)?.max(1);
            (a - addr % a) % a
        }
        Stmt::Org(e) => {
            let to = ctx.eval(e)?;
            if to < addr {
                return Err(err(ctx.line, e.col, AsmErrorKind::OrgBackwards(to)));
            }
            to - addr
        }
    })
}

fn encode(op: Opcode, ops: &[Operand], ctx: &Ctx<'_>, col: usize, rom: (u32, u32)) -> Result<Instruction, AsmError> {
    let line = ctx.line;
    let want = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(syntax(line, col, format!("`{}` takes {n} operand(s), got {}", op.mnemonic(), ops.len())))
        }
    };
    let reg = |i: usize| match &ops[i] {
        Operand::Reg(r) => Ok(*r),
        _ => Err(syntax(line, col, format!("operand {} of `{}` must be a register", i + 1, op.mnemonic()))),
    };
    let imm = |i: usize| match &ops[i] {
        Operand::Imm(e) => ctx.eval(e),
        _ => Err(syntax(line, col, format!("operand {} of `{}` must be an immediate", i + 1, op.mnemonic()))),
    };
    let mem = |i: usize| match &ops[i] {
        Operand::Mem(r, e) => Ok((*r, ctx.eval(e)?)),
        _ => Err(syntax(line, col, format!("operand {} of `{}` must be a memory reference", i + 1, op.mnemonic()))),
    };
    let target = |i: usize| -> Result<u32, AsmError> {
        let t = imm(i)?;
        if t < rom.0 || (t as u64) >= rom.0 as u64 + rom.1 as u64 {
            return Err(err(line, col, AsmErrorKind::OutsideRom(t)));
        }
        Ok(t)
    };
    let alu = |o: AluOp| -> Result<Instruction, AsmError> {
        want(3)?;
        Ok(Instruction::Alu { op: o, rd: reg(0)?, rs: reg(1)?, rt: reg(2)? })
    };
    let alu_imm = |o: AluOp| -> Result<Instruction, AsmError> {
        want(3)?;
        Ok(Instruction::AluImm { op: o, rd: reg(0)?, rs: reg(1)?, imm: imm(2)? })
    };
    let branch = |c: Cond| -> Result<Instruction, AsmError> {
        want(3)?;
        Ok(Instruction::Branch { cond: c, ra: reg(0)?, rb: reg(1)?, target: target(2)? })
    };
    let load = |w: Width| -> Result<Instruction, AsmError> {
        want(2)?;
        let (base, offset) = mem(1)?;
        Ok(Instruction::Load { width: w, rd: reg(0)?, base, offset })
    };
    let store = |w: Width| -> Result<Instruction, AsmError> {
        want(2)?;
        let (base, offset) = mem(1)?;
        Ok(Instruction::Store { width: w, rt: reg(0)?, base, offset })
    };
    Ok(match op {
        Opcode::Nop => want(0).map(|_| Instruction::Nop)?,
        Opcode::Halt => want(0).map(|_| Instruction::Halt)?,
        Opcode::Ret => want(0).map(|_| Instruction::Ret)?,
        Opcode::Iret => want(0).map(|_| Instruction::Iret)?,
        Opcode::Movi => {
            want(2)?;
            Instruction::Movi { rd: reg(0)?, imm: imm(1)? }
        }
        Opcode::Mov => {
            want(2)?;
            Instruction::Mov { rd: reg(0)?, rs: reg(1)? }
        }
        Opcode::Add => alu(AluOp::Add)?,
        Opcode::Sub => alu(AluOp::Sub)?,
        Opcode::And => alu(AluOp::And)?,
        Opcode::Or => alu(AluOp::Or)?,
        Opcode::Xor => alu(AluOp::Xor)?,
        Opcode::Shl => alu(AluOp::Shl)?,
        Opcode::Shr => alu(AluOp::Shr)?,
        Opcode::Addi => alu_imm(AluOp::Add)?,
        Opcode::Andi => alu_imm(AluOp::And)?,
        Opcode::Ori => alu_imm(AluOp::Or)?,
        Opcode::Ldw => load(Width::Word)?,
        Opcode::Ldb => load(Width::Byte)?,
        Opcode::Stw => store(Width::Word)?,
        Opcode::Stb => store(Width::Byte)?,
        Opcode::Beq => branch(Cond::Eq)?,
        Opcode::Bne => branch(Cond::Ne)?,
        Opcode::Bltu => branch(Cond::Ltu)?,
        Opcode::Bgeu => branch(Cond::Geu)?,
        Opcode::Jmp => {
            want(1)?;
            Instruction::Jmp { target: target(0)? }
        }
        Opcode::Call => {
            want(1)?;
            Instruction::Call { target: target(0)? }
        }
    })
}

/// Assembles `src` for the default ROM at address 0.
pub fn assemble(src: &str) -> Result<Assembled, AsmError> {
    assemble_for(src, DEFAULT_ROM)
}

/// Assembles `src` with the image starting at `rom.0`; branch targets must
/// lie inside `rom`.
pub fn assemble_for(src: &str, rom: (u32, u32)) -> Result<Assembled, AsmError> {
    let (lines, labels, equs) = parse(src)?;
    let mut symbols: BTreeMap<String, u32> = BTreeMap::new();
    // constants may only refer to earlier constants
    for (name, e, no) in &equs {
        let v = Ctx { symbols: &symbols, line: *no }.eval(e)?;
        if symbols.insert(name.clone(), v).is_some() {
            return Err(err(*no, 1, AsmErrorKind::DuplicateLabel(name.clone())));
        }
    }
    let consts = symbols.clone();
    let mut addrs = Vec::with_capacity(lines.len() + 1);
    let mut addr = rom.0;
    for l in &lines {
        addrs.push(addr);
        addr = addr.wrapping_add(stmt_size(&l.stmt, addr, &Ctx { symbols: &consts, line: l.no })?);
    }
    addrs.push(addr);
    let mut label_map = BTreeMap::new();
    for (name, idx, no, col) in labels {
        if symbols.contains_key(&name) {
            return Err(err(no, col, AsmErrorKind::DuplicateLabel(name)));
        }
        symbols.insert(name.clone(), addrs[idx]);
        label_map.insert(name, addrs[idx]);
    }
    let mut image = Vec::new();
    for (l, &at) in lines.iter().zip(&addrs) {
        let ctx = Ctx { symbols: &symbols, line: l.no };
        debug_assert_eq!(image.len() as u32, at - rom.0);
        match &l.stmt {
            Stmt::Insn(op, ops) => image.extend_from_slice(&encode(*op, ops, &ctx, l.col, rom)?.encode()),
            Stmt::Words(ws) => {
                for w in ws {
                    image.extend_from_slice(&ctx.eval(w)?.to_le_bytes());
                }
            }
            Stmt::Bytes(bs) => {
                for b in bs {
                    let v = ctx.eval(b)?;
                    if v > 0xFF {
                        return Err(syntax(l.no, b.col, format!("byte value {v:#x} out of range")));
                    }
                    image.push(v as u8);
                }
            }
            Stmt::Ascii(s) => image.extend_from_slice(s),
            Stmt::Space(_) | Stmt::Align(_) | Stmt::Org(_) => {
                let n = stmt_size(&l.stmt, at, &ctx)?;
                image.resize(image.len() + n as usize, 0);
            }
        }
    }
    Ok(Assembled { image, symbols: label_map })
}

fn reg_name(r: Reg) -> String {
    format!("r{}", r.index())
}

fn offset(o: u32) -> String {
    if o == 0 {
        String::new()
    } else if (o as i32) < 0 && (o as i32) > -0x1000 {
        format!("-{:#x}", (o as i32).unsigned_abs())
    } else {
        format!("+{o:#x}")
    }
}

/// Assembly text of one instruction.
pub fn format_insn(i: &Instruction) -> String {
    let m = i.opcode().mnemonic();
    match *i {
        Instruction::Nop | Instruction::Halt | Instruction::Ret | Instruction::Iret => m.to_string(),
        Instruction::Movi { rd, imm } => format!("{m} {}, {imm:#x}", reg_name(rd)),
        Instruction::Mov { rd, rs } => format!("{m} {}, {}", reg_name(rd), reg_name(rs)),
        Instruction::Alu { rd, rs, rt, .. } => format!("{m} {}, {}, {}", reg_name(rd), reg_name(rs), reg_name(rt)),
        Instruction::AluImm { rd, rs, imm, .. } => format!("{m} {}, {}, {imm:#x}", reg_name(rd), reg_name(rs)),
        Instruction::Load { rd, base, offset: o, .. } => format!("{m} {}, [{}{}]", reg_name(rd), reg_name(base), offset(o)),
        Instruction::Store { rt, base, offset: o, .. } => format!("{m} {}, [{}{}]", reg_name(rt), reg_name(base), offset(o)),
        Instruction::Branch { ra, rb, target, .. } => format!("{m} {}, {}, {target:#x}", reg_name(ra), reg_name(rb)),
        Instruction::Jmp { target } | Instruction::Call { target } => format!("{m} {target:#x}"),
    }
}

/// Renders an image as source that assembles back to the same bytes. Chunks
/// that are not canonical instruction encodings become `.word` data.
pub fn disassemble(image: &[u8]) -> String {
    disassemble_at(image, 0)
}

pub fn disassemble_at(image: &[u8], base: u32) -> String {
    let mut out = String::new();
    let mut chunks = image.chunks(INSN_LEN as usize);
    let mut addr = base;
    if base != 0 {
        let _ = writeln!(out, ".org {base:#x}");
    }
    for c in chunks.by_ref() {
        let text = match (c.len(), decode(c)) {
            (8, Ok(i)) if i.encode() == c => format_insn(&i),
            (8, _) => {
                let a = u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let b = u32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                format!(".word {a:#010x}, {b:#010x}")
            }
            _ => {
                let bs: Vec<String> = c.iter().map(|b| format!("{b:#04x}")).collect();
                format!(".byte {}", bs.join(", "))
            }
        };
        let _ = writeln!(out, "    {text:<40} ; {addr:#06x}");
        addr = addr.wrapping_add(c.len() as u32);
    }
    out
}
