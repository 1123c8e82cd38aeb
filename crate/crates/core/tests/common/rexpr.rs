//! Random constraint sets over two 8-bit symbols with their own evaluator,
//! for checking the solver against exhaustive enumeration.

use kbemu::expr::{BinOp, Expr, SymOrigin};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Ult,
    Uge,
}

#[derive(Debug, Clone)]
pub enum Term {
    Const(u8, u32),
    Sym(u32),
    Not(Box<Term>),
    Zext(Box<Term>),
    Low8(Box<Term>, u8),
    Bin(Op, Box<Term>, Box<Term>),
}

#[derive(Debug, Clone)]
pub struct Pred {
    pub cmp: Cmp,
    pub lhs: Term,
    pub rhs: Term,
    pub negated: bool,
}

fn mask(w: u8) -> u32 {
    if w == 32 {
        u32::MAX
    } else {
        (1 << w) - 1
    }
}

impl Term {
    pub fn width(&self) -> u8 {
        match self {
            Term::Const(w, _) => *w,
            Term::Sym(_) => 8,
            Term::Not(t) => t.width(),
            Term::Zext(_) => 32,
            Term::Low8(..) => 8,
            Term::Bin(_, l, _) => l.width(),
        }
    }

    pub fn value(&self, vals: &[u32; 2]) -> u32 {
        let w = self.width();
        match self {
            Term::Const(_, v) => *v & mask(w),
            Term::Sym(i) => vals[*i as usize] & 0xFF,
            Term::Not(t) => !t.value(vals) & mask(w),
            Term::Zext(t) => t.value(vals),
            Term::Low8(t, lo) => (t.value(vals) >> lo) & 0xFF,
            Term::Bin(op, l, r) => {
                let (x, y) = (l.value(vals), r.value(vals));
                let v = match op {
                    Op::Add => x.wrapping_add(y),
                    Op::Sub => x.wrapping_sub(y),
                    Op::And => x & y,
                    Op::Or => x | y,
                    Op::Xor => x ^ y,
                    Op::Shl => {
                        if y >= w as u32 {
                            0
                        } else {
                            x << y
                        }
                    }
                    Op::Shr => {
                        if y >= w as u32 {
                            0
                        } else {
                            x >> y
                        }
                    }
                };
                v & mask(w)
            }
        }
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            Term::Const(w, v) => Expr::constant(*w, *v & mask(*w)),
            Term::Sym(i) => Expr::sym(*i, 8, SymOrigin { addr: 0x4000_0000 + 4 * i, pc: 0, seq: *i }),
            Term::Not(t) => t.to_expr().not(),
            Term::Zext(t) => t.to_expr().zext(32),
            Term::Low8(t, lo) => t.to_expr().extract(lo + 7, *lo),
            Term::Bin(op, l, r) => {
                let op = match op {
                    Op::Add => BinOp::Add,
                    Op::Sub => BinOp::Sub,
                    Op::And => BinOp::And,
                    Op::Or => BinOp::Or,
                    Op::Xor => BinOp::Xor,
                    Op::Shl => BinOp::Shl,
                    Op::Shr => BinOp::LShr,
                };
                Expr::binop(op, &l.to_expr(), &r.to_expr())
            }
        }
    }

    fn syms(&self, out: &mut [bool; 2]) {
        match self {
            Term::Const(..) => {}
            Term::Sym(i) => out[*i as usize] = true,
            Term::Not(t) | Term::Zext(t) | Term::Low8(t, _) => t.syms(out),
            Term::Bin(_, l, r) => {
                l.syms(out);
                r.syms(out);
            }
        }
    }
}

impl Pred {
    pub fn holds(&self, vals: &[u32; 2]) -> bool {
        let (x, y) = (self.lhs.value(vals), self.rhs.value(vals));
        let v = match self.cmp {
            Cmp::Eq => x == y,
            Cmp::Ne => x != y,
            Cmp::Ult => x < y,
            Cmp::Uge => x >= y,
        };
        v != self.negated
    }

    pub fn to_expr(&self) -> Expr {
        let op = match self.cmp {
            Cmp::Eq => BinOp::Eq,
            Cmp::Ne => BinOp::Ne,
            Cmp::Ult => BinOp::Ult,
            Cmp::Uge => BinOp::Uge,
        };
        let e = Expr::binop(op, &self.lhs.to_expr(), &self.rhs.to_expr());
        if self.negated {
            e.not()
        } else {
            e
        }
    }
}

fn constant(rng: &mut impl Rng, w: u8) -> u32 {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..8),
        1 => mask(w),
        _ => rng.gen::<u32>() & mask(w),
    }
}

pub fn term(rng: &mut impl Rng, w: u8, depth: u32) -> Term {
    if depth == 0 || rng.gen_bool(0.3) {
        return match (w, rng.gen_range(0..3)) {
            (8, 0) => Term::Const(8, constant(rng, 8)),
            (8, _) => Term::Sym(rng.gen_range(0..2)),
            (_, 0) => Term::Const(32, constant(rng, 32)),
            _ => Term::Zext(Box::new(term(rng, 8, depth.saturating_sub(1)))),
        };
    }
    match rng.gen_range(0..10) {
        0 => Term::Not(Box::new(term(rng, w, depth - 1))),
        1 if w == 8 => Term::Low8(Box::new(term(rng, 32, depth - 1)), rng.gen_range(0..=24)),
        1 => Term::Zext(Box::new(term(rng, 8, depth - 1))),
        _ => {
            let op = [Op::Add, Op::Sub, Op::And, Op::Or, Op::Xor, Op::Shl, Op::Shr][rng.gen_range(0..7)];
            let rhs = if matches!(op, Op::Shl | Op::Shr) && rng.gen_bool(0.5) {
                Term::Const(w, rng.gen_range(0..w as u32 + 2))
            } else {
                term(rng, w, depth - 1)
            };
            Term::Bin(op, Box::new(term(rng, w, depth - 1)), Box::new(rhs))
        }
    }
}

pub fn pred(rng: &mut impl Rng) -> Pred {
    let w = if rng.gen_bool(0.7) { 8 } else { 32 };
    let cmp = [Cmp::Eq, Cmp::Ne, Cmp::Ult, Cmp::Uge][rng.gen_range(0..4)];
    Pred { cmp, lhs: term(rng, w, 3), rhs: term(rng, w, 2), negated: rng.gen_bool(0.2) }
}

pub fn constraint_set(rng: &mut impl Rng) -> Vec<Pred> {
    (0..rng.gen_range(1..=4)).map(|_| pred(rng)).collect()
}

/// A satisfying valuation found by enumerating every value of the symbols
/// that occur, or `None` when there is none.
pub fn enumerate(preds: &[Pred]) -> Option<[u32; 2]> {
    let mut used = [false; 2];
    for p in preds {
        p.lhs.syms(&mut used);
        p.rhs.syms(&mut used);
    }
    let range = |u: bool| if u { 0..256u32 } else { 0..1 };
    for a in range(used[0]) {
        for b in range(used[1]) {
            let v = [a, b];
            if preds.iter().all(|p| p.holds(&v)) {
                return Some(v);
            }
        }
    }
    None
}
