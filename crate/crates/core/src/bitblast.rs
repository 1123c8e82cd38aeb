//! Lowering of bitvector expressions to CNF via Tseitin encoding.
//!
//! Gates are structurally hashed and constant-folded, so repeated
//! subexpressions and the many constant bits of mask-compare patterns cost
//! nothing.

use std::collections::HashMap;

use crate::expr::{BinOp, Expr, Node, SymId, UnOp};
use crate::sat::{Lit, SatSolver};

pub struct Blaster<'s> {
    pub sat: &'s mut SatSolver,
    t: Lit,
    ands: HashMap<(Lit, Lit), Lit>,
    xors: HashMap<(Lit, Lit), Lit>,
    syms: HashMap<SymId, Vec<Lit>>,
    memo: HashMap<usize, Vec<Lit>>,
}

impl<'s> Blaster<'s> {
    /// `sat` must be empty; variable 0 becomes the constant true.
    pub fn new(sat: &'s mut SatSolver) -> Blaster<'s> {
        assert_eq!(sat.num_vars(), 0);
        let v = sat.new_var();
        let t = Lit::new(v, false);
        sat.add_clause(&[t]);
        Blaster {
            sat,
            t,
            ands: HashMap::new(),
            xors: HashMap::new(),
            syms: HashMap::new(),
            memo: HashMap::new(),
        }
    }

    pub fn tru(&self) -> Lit {
        self.t
    }

    pub fn fls(&self) -> Lit {
        !self.t
    }

    /// Pre-allocates the bits of a symbol, most significant first, so the
    /// decision order visits symbol bits before auxiliaries.
    pub fn declare_symbol(&mut self, id: SymId, width: u8, hint: Option<u32>) -> &[Lit] {
        if !self.syms.contains_key(&id) {
            let mut bits = vec![self.t; width as usize];
            for i in (0..width as usize).rev() {
                let v = self.sat.new_var();
                if let Some(h) = hint {
                    self.sat.set_polarity(v, h >> i & 1 == 1);
                }
                bits[i] = Lit::new(v, false);
            }
            self.syms.insert(id, bits);
        }
        &self.syms[&id]
    }

    pub fn symbol_bits(&self, id: SymId) -> Option<&[Lit]> {
        self.syms.get(&id).map(|v| v.as_slice())
    }

    fn fresh(&mut self) -> Lit {
        Lit::new(self.sat.new_var(), false)
    }

    pub fn and(&mut self, a: Lit, b: Lit) -> Lit {
        let (f, t) = (self.fls(), self.t);
        if a == f || b == f || a == !b {
            return f;
        }
        if a == t || a == b {
            return b;
        }
        if b == t {
            return a;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        if let Some(&g) = self.ands.get(&key) {
            return g;
        }
        let g = self.fresh();
        self.sat.add_clause(&[!g, a]);
        self.sat.add_clause(&[!g, b]);
        self.sat.add_clause(&[g, !a, !b]);
        self.ands.insert(key, g);
        g
    }

    pub fn or(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and(!a, !b)
    }

    pub fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        let (f, t) = (self.fls(), self.t);
        if a == f {
            return b;
        }
        if b == f {
            return a;
        }
        if a == t {
            return !b;
        }
        if b == t {
            return !a;
        }
        if a == b {
            return f;
        }
        if a == !b {
            return t;
        }
        // normalise polarity so x^y, !x^y, ... share one gate
        let neg = a.is_neg() ^ b.is_neg();
        let (a, b) = (Lit::new(a.var(), false), Lit::new(b.var(), false));
        let key = if a < b { (a, b) } else { (b, a) };
        let g = if let Some(&g) = self.xors.get(&key) {
            g
        } else {
            let g = self.fresh();
            self.sat.add_clause(&[!g, a, b]);
            self.sat.add_clause(&[!g, !a, !b]);
            self.sat.add_clause(&[g, !a, b]);
            self.sat.add_clause(&[g, a, !b]);
            self.xors.insert(key, g);
            g
        };
        if neg {
            !g
        } else {
            g
        }
    }

    pub fn mux(&mut self, sel: Lit, then: Lit, els: Lit) -> Lit {
        if then == els {
            return then;
        }
        let a = self.and(sel, then);
        let b = self.and(!sel, els);
        self.or(a, b)
    }

    fn add_bits(&mut self, a: &[Lit], b: &[Lit], carry_in: Lit) -> Vec<Lit> {
        let mut carry = carry_in;
        let mut out = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let axb = self.xor(a[i], b[i]);
            out.push(self.xor(axb, carry));
            let g = self.and(a[i], b[i]);
            let p = self.and(axb, carry);
            carry = self.or(g, p);
        }
        out
    }

    /// a < b unsigned, as the borrow out of a - b.
    fn ult_bits(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let mut lt = self.fls();
        for i in 0..a.len() {
            // lt_i = (!a & b) | (!(a ^ b) & lt_{i-1})
            let nb = self.and(!a[i], b[i]);
            let eq = self.xor(a[i], b[i]);
            let keep = self.and(!eq, lt);
            lt = self.or(nb, keep);
        }
        lt
    }

    fn eq_bits(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let mut acc = self.t;
        for i in 0..a.len() {
            let d = self.xor(a[i], b[i]);
            acc = self.and(acc, !d);
        }
        acc
    }

    fn shift(&mut self, a: &[Lit], amt: &[Lit], left: bool) -> Vec<Lit> {
        let w = a.len();
        let f = self.fls();
        let mut cur = a.to_vec();
        let stages = (usize::BITS - (w - 1).leading_zeros()) as usize;
        for (k, &sel) in amt.iter().enumerate().take(stages) {
            let dist = 1usize << k;
            let mut next = Vec::with_capacity(w);
            for i in 0..w {
                let moved = if left {
                    if i >= dist {
                        cur[i - dist]
                    } else {
                        f
                    }
                } else if i + dist < w {
                    cur[i + dist]
                } else {
                    f
                };
                next.push(self.mux(sel, moved, cur[i]));
            }
            cur = next;
        }
        // any amount >= width clears the result
        let mut big = f;
        for &bit in amt.iter().skip(stages) {
            big = self.or(big, bit);
        }
        if big != f {
            for bit in cur.iter_mut() {
                *bit = self.and(!big, *bit);
            }
        }
        cur
    }

    /// Returns the bits of `e`, least significant first.
    pub fn blast(&mut self, e: &Expr) -> Vec<Lit> {
        if let Some(bits) = self.memo.get(&e.ptr_id()) {
            return bits.clone();
        }
        let w = e.width() as usize;
        let bits = match e.node() {
            Node::Const { value } => {
                (0..w).map(|i| if value >> i & 1 == 1 { self.t } else { self.fls() }).collect()
            }
            Node::Sym { id, .. } => self.declare_symbol(*id, w as u8, None).to_vec(),
            Node::Un { op, arg } => {
                let a = self.blast(arg);
                match op {
                    UnOp::Not => a.iter().map(|&l| !l).collect(),
                    UnOp::ZeroExtend(_) => {
                        let mut v = a;
                        v.resize(w, self.fls());
                        v
                    }
                    UnOp::Extract(hi, lo) => a[*lo as usize..=*hi as usize].to_vec(),
                }
            }
            Node::Bin { op, lhs, rhs } => {
                let a = self.blast(lhs);
                let b = self.blast(rhs);
                match op {
                    BinOp::Add => {
                        let f = self.fls();
                        self.add_bits(&a, &b, f)
                    }
                    BinOp::Sub => {
                        let nb: Vec<Lit> = b.iter().map(|&l| !l).collect();
                        let t = self.t;
                        self.add_bits(&a, &nb, t)
                    }
                    BinOp::And => (0..a.len()).map(|i| self.and(a[i], b[i])).collect(),
                    BinOp::Or => (0..a.len()).map(|i| self.or(a[i], b[i])).collect(),
                    BinOp::Xor => (0..a.len()).map(|i| self.xor(a[i], b[i])).collect(),
                    BinOp::Shl => self.shift(&a, &b, true),
                    BinOp::LShr => self.shift(&a, &b, false),
                    BinOp::Eq => vec![self.eq_bits(&a, &b)],
                    BinOp::Ne => vec![!self.eq_bits(&a, &b)],
                    BinOp::Ult => vec![self.ult_bits(&a, &b)],
                    BinOp::Uge => vec![!self.ult_bits(&a, &b)],
                }
            }
        };
        self.memo.insert(e.ptr_id(), bits.clone());
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval_binop, SymOrigin};
    use crate::sat::SatResult;
    use proptest::prelude::*;

    const OPS: [BinOp; 11] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::LShr,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Ult,
        BinOp::Uge,
    ];

    /// Value of `op(x, y)` as computed by the circuit with both operands
    /// pinned through unit clauses.
    fn circuit_value(op: BinOp, width: u8, x: u32, y: u32) -> u32 {
        let mut sat = SatSolver::new();
        let mut bl = Blaster::new(&mut sat);
        let sym = |id| Expr::sym(id, width, SymOrigin { addr: 0, pc: 0, seq: id });
        let (a, b) = (sym(0), sym(1));
        let out = bl.blast(&Expr::binop(op, &a, &b));
        for (id, v) in [(0, x), (1, y)] {
            let bits = bl.symbol_bits(id).unwrap().to_vec();
            for (i, l) in bits.iter().enumerate() {
                let lit = if v >> i & 1 == 1 { *l } else { !*l };
                bl.sat.add_clause(&[lit]);
            }
        }
        match sat.solve(10_000) {
            SatResult::Sat(m) => out.iter().enumerate().fold(0, |acc, (i, l)| acc | ((m[l.var() as usize] ^ l.is_neg()) as u32) << i),
            r => panic!("pinned circuit is not satisfiable: {r:?}"),
        }
    }

    #[test]
    fn unary_operators() {
        let s = Expr::sym(0, 32, SymOrigin { addr: 0, pc: 0, seq: 0 });
        let e = Expr::binop(BinOp::Eq, &s.not().extract(15, 8).zext(32), &Expr::constant(32, 0x5A));
        let mut sat = SatSolver::new();
        let mut bl = Blaster::new(&mut sat);
        let out = bl.blast(&e)[0];
        let bits = bl.symbol_bits(0).unwrap().to_vec();
        bl.sat.add_clause(&[out]);
        let SatResult::Sat(m) = sat.solve(10_000) else { panic!("unsat") };
        let v = bits.iter().enumerate().fold(0u32, |acc, (i, l)| acc | ((m[l.var() as usize] ^ l.is_neg()) as u32) << i);
        assert_eq!((!v >> 8) & 0xFF, 0x5A);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn circuits_match_eval(op in 0..OPS.len(), x in any::<u32>(), y in any::<u32>(), narrow in any::<bool>()) {
            let op = OPS[op];
            let (w, x, y) = if narrow { (8, x & 0xFF, y & 0x0F) } else { (32, x, y % 40) };
            prop_assert_eq!(circuit_value(op, w, x, y), eval_binop(op, w, x, y));
        }
    }
}
