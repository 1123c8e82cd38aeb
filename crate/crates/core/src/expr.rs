//! Fixed-width bitvector expressions over peripheral-read symbols.
//!
//! Expressions are immutable DAGs behind an `Arc`. Constructors fold constants
//! and apply a handful of identities, so structurally equal inputs produce
//! structurally equal outputs and compare equal.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use thiserror::Error;

pub type SymId = u32;

/// Where a symbol came from: the peripheral address, the PC of the load, and
/// a per-state sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymOrigin {
    pub addr: u32,
    pub pc: u32,
    pub seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Not,
    ZeroExtend(u8),
    Extract(u8, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    Eq,
    Ne,
    Ult,
    Uge,
}

impl BinOp {
    pub fn is_predicate(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Ult | BinOp::Uge)
    }

    fn is_commutative(self) -> bool {
        matches!(self, BinOp::Add | BinOp::And | BinOp::Or | BinOp::Xor | BinOp::Eq | BinOp::Ne)
    }

    fn smt_name(self) -> &'static str {
        match self {
            BinOp::Add => "bvadd",
            BinOp::Sub => "bvsub",
            BinOp::And => "bvand",
            BinOp::Or => "bvor",
            BinOp::Xor => "bvxor",
            BinOp::Shl => "bvshl",
            BinOp::LShr => "bvlshr",
            BinOp::Eq => "=",
            BinOp::Ne => "distinct",
            BinOp::Ult => "bvult",
            BinOp::Uge => "bvuge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Node {
    Const { value: u32 },
    Sym { id: SymId, origin: SymOrigin },
    Un { op: UnOp, arg: Expr },
    Bin { op: BinOp, lhs: Expr, rhs: Expr },
}

#[derive(Debug)]
struct Inner {
    node: Node,
    width: u8,
    hash: u64,
    syms: Box<[SymId]>,
}

#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.hash == other.0.hash
                && self.0.width == other.0.width
                && self.0.node == other.0.node)
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

pub fn mask(width: u8) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

fn check_width(w: u8) {
    assert!(matches!(w, 1 | 8 | 32), "unsupported bitvector width {w}");
}

fn merge_syms(a: &[SymId], b: &[SymId]) -> Box<[SymId]> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out.into_boxed_slice()
}

impl Expr {
    fn make(node: Node, width: u8) -> Expr {
        check_width(width);
        let mut h = DefaultHasher::new();
        width.hash(&mut h);
        let syms: Box<[SymId]> = match &node {
            Node::Const { value } => {
                0u8.hash(&mut h);
                value.hash(&mut h);
                Box::new([])
            }
            Node::Sym { id, origin } => {
                1u8.hash(&mut h);
                id.hash(&mut h);
                origin.hash(&mut h);
                Box::new([*id])
            }
            Node::Un { op, arg } => {
                2u8.hash(&mut h);
                op.hash(&mut h);
                h.write_u64(arg.0.hash);
                arg.0.syms.clone()
            }
            Node::Bin { op, lhs, rhs } => {
                3u8.hash(&mut h);
                op.hash(&mut h);
                h.write_u64(lhs.0.hash);
                h.write_u64(rhs.0.hash);
                merge_syms(&lhs.0.syms, &rhs.0.syms)
            }
        };
        Expr(Arc::new(Inner { node, width, hash: h.finish(), syms }))
    }

    pub fn constant(width: u8, value: u32) -> Expr {
        Expr::make(Node::Const { value: value & mask(width) }, width)
    }

    pub fn bool_const(b: bool) -> Expr {
        Expr::constant(1, b as u32)
    }

    pub fn sym(id: SymId, width: u8, origin: SymOrigin) -> Expr {
        Expr::make(Node::Sym { id, origin }, width)
    }

    pub fn width(&self) -> u8 {
        self.0.width
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    /// Sorted, de-duplicated ids of every symbol in the expression.
    pub fn symbols(&self) -> &[SymId] {
        &self.0.syms
    }

    pub fn is_symbolic(&self) -> bool {
        !self.0.syms.is_empty()
    }

    pub fn as_const(&self) -> Option<u32> {
        match self.0.node {
            Node::Const { value } => Some(value),
            _ => None,
        }
    }

    /// Identity of the shared node, for memo tables.
    pub fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn not(&self) -> Expr {
        if let Some(v) = self.as_const() {
            return Expr::constant(self.width(), !v);
        }
        if let Node::Un { op: UnOp::Not, arg } = self.node() {
            return arg.clone();
        }
        Expr::make(Node::Un { op: UnOp::Not, arg: self.clone() }, self.width())
    }

    /// Logical negation of a width-1 condition, flipping comparisons where
    /// possible so the result stays readable.
    pub fn negate(&self) -> Expr {
        assert_eq!(self.width(), 1, "negate expects a boolean");
        if let Node::Bin { op, lhs, rhs } = self.node() {
            let flipped = match op {
                BinOp::Eq => Some(BinOp::Ne),
                BinOp::Ne => Some(BinOp::Eq),
                BinOp::Ult => Some(BinOp::Uge),
                BinOp::Uge => Some(BinOp::Ult),
                _ => None,
            };
            if let Some(op) = flipped {
                return Expr::binop(op, lhs, rhs);
            }
        }
        self.not()
    }

    pub fn zext(&self, width: u8) -> Expr {
        assert!(width >= self.width());
        if width == self.width() {
            return self.clone();
        }
        if let Some(v) = self.as_const() {
            return Expr::constant(width, v);
        }
        Expr::make(Node::Un { op: UnOp::ZeroExtend(width), arg: self.clone() }, width)
    }

    pub fn extract(&self, hi: u8, lo: u8) -> Expr {
        assert!(hi >= lo && hi < self.width());
        let width = hi - lo + 1;
        if lo == 0 && width == self.width() {
            return self.clone();
        }
        if let Some(v) = self.as_const() {
            return Expr::constant(width, v >> lo);
        }
        if let Node::Un { op: UnOp::ZeroExtend(_), arg } = self.node() {
            if hi < arg.width() {
                return arg.extract(hi, lo);
            }
            if lo >= arg.width() {
                return Expr::constant(width, 0);
            }
        }
        Expr::make(Node::Un { op: UnOp::Extract(hi, lo), arg: self.clone() }, width)
    }

    pub fn binop(op: BinOp, lhs: &Expr, rhs: &Expr) -> Expr {
        assert_eq!(lhs.width(), rhs.width(), "operand widths differ for {op:?}");
        let w = lhs.width();
        let out_w = if op.is_predicate() { 1 } else { w };
        if let (Some(a), Some(b)) = (lhs.as_const(), rhs.as_const()) {
            return Expr::constant(out_w, eval_binop(op, w, a, b));
        }
        let (lhs, rhs) = if op.is_commutative() && lhs.as_const().is_some() {
            (rhs, lhs)
        } else {
            (lhs, rhs)
        };
        if let Some(c) = rhs.as_const() {
            let all = mask(w);
            match op {
                BinOp::Add | BinOp::Sub | BinOp::Or | BinOp::Xor | BinOp::Shl | BinOp::LShr
                    if c == 0 =>
                {
                    return lhs.clone()
                }
                BinOp::And if c == 0 => return Expr::constant(w, 0),
                BinOp::And if c == all => return lhs.clone(),
                BinOp::Or if c == all => return Expr::constant(w, all),
                BinOp::Shl | BinOp::LShr if c >= w as u32 => return Expr::constant(w, 0),
                BinOp::Ult if c == 0 => return Expr::bool_const(false),
                BinOp::Uge if c == 0 => return Expr::bool_const(true),
                _ => {}
            }
        }
        if lhs == rhs {
            match op {
                BinOp::Eq | BinOp::Uge => return Expr::bool_const(true),
                BinOp::Ne | BinOp::Ult => return Expr::bool_const(false),
                BinOp::Sub | BinOp::Xor => return Expr::constant(w, 0),
                BinOp::And | BinOp::Or => return lhs.clone(),
                _ => {}
            }
        }
        Expr::make(Node::Bin { op, lhs: lhs.clone(), rhs: rhs.clone() }, out_w)
    }

    /// Evaluates under `a`; every symbol must be assigned.
    pub fn eval(&self, a: &Assignment) -> Result<u32, EvalError> {
        let mut memo = HashMap::new();
        self.eval_memo(a, &mut memo)
    }

    fn eval_memo(&self, a: &Assignment, memo: &mut HashMap<usize, u32>) -> Result<u32, EvalError> {
        if self.0.syms.is_empty() {
            if let Some(v) = self.as_const() {
                return Ok(v);
            }
        }
        if let Some(v) = memo.get(&self.ptr_id()) {
            return Ok(*v);
        }
        let w = self.width();
        let v = match self.node() {
            Node::Const { value } => *value,
            Node::Sym { id, .. } => a.get(*id).ok_or(EvalError::MissingSymbol(*id))? & mask(w),
            Node::Un { op, arg } => {
                let x = arg.eval_memo(a, memo)?;
                match op {
                    UnOp::Not => !x & mask(w),
                    UnOp::ZeroExtend(_) => x,
                    UnOp::Extract(_, lo) => (x >> lo) & mask(w),
                }
            }
            Node::Bin { op, lhs, rhs } => {
                let x = lhs.eval_memo(a, memo)?;
                let y = rhs.eval_memo(a, memo)?;
                eval_binop(*op, lhs.width(), x, y)
            }
        };
        memo.insert(self.ptr_id(), v);
        Ok(v)
    }

    /// Replaces the given symbols by constants and re-simplifies.
    pub fn substitute(&self, values: &BTreeMap<SymId, u32>) -> Expr {
        let mut memo = HashMap::new();
        self.subst_memo(values, &mut memo)
    }

    fn subst_memo(&self, values: &BTreeMap<SymId, u32>, memo: &mut HashMap<usize, Expr>) -> Expr {
        if !self.0.syms.iter().any(|s| values.contains_key(s)) {
            return self.clone();
        }
        if let Some(e) = memo.get(&self.ptr_id()) {
            return e.clone();
        }
        let out = match self.node() {
            Node::Const { .. } => self.clone(),
            Node::Sym { id, .. } => Expr::constant(self.width(), values[id]),
            Node::Un { op, arg } => {
                let a = arg.subst_memo(values, memo);
                match op {
                    UnOp::Not => a.not(),
                    UnOp::ZeroExtend(w) => a.zext(*w),
                    UnOp::Extract(hi, lo) => a.extract(*hi, *lo),
                }
            }
            Node::Bin { op, lhs, rhs } => {
                let l = lhs.subst_memo(values, memo);
                let r = rhs.subst_memo(values, memo);
                Expr::binop(*op, &l, &r)
            }
        };
        memo.insert(self.ptr_id(), out.clone());
        out
    }

    /// Origins of all symbols in the expression, keyed by id.
    pub fn origins(&self) -> BTreeMap<SymId, SymOrigin> {
        let mut out = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(e) = stack.pop() {
            if e.0.syms.is_empty() || !seen.insert(e.ptr_id()) {
                continue;
            }
            match e.node() {
                Node::Const { .. } => {}
                Node::Sym { id, origin } => {
                    out.insert(*id, *origin);
                }
                Node::Un { arg, .. } => stack.push(arg.clone()),
                Node::Bin { lhs, rhs, .. } => {
                    stack.push(lhs.clone());
                    stack.push(rhs.clone());
                }
            }
        }
        out
    }
}

pub fn eval_binop(op: BinOp, width: u8, x: u32, y: u32) -> u32 {
    let m = mask(width);
    let (x, y) = (x & m, y & m);
    match op {
        BinOp::Add => x.wrapping_add(y) & m,
        BinOp::Sub => x.wrapping_sub(y) & m,
        BinOp::And => x & y,
        BinOp::Or => x | y,
        BinOp::Xor => x ^ y,
        BinOp::Shl => {
            if y >= width as u32 {
                0
            } else {
                (x << y) & m
            }
        }
        BinOp::LShr => {
            if y >= width as u32 {
                0
            } else {
                x >> y
            }
        }
        BinOp::Eq => (x == y) as u32,
        BinOp::Ne => (x != y) as u32,
        BinOp::Ult => (x < y) as u32,
        BinOp::Uge => (x >= y) as u32,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const { value } => match self.width() {
                1 => write!(f, "#b{value}"),
                8 => write!(f, "#x{value:02x}"),
                _ => write!(f, "#x{value:08x}"),
            },
            Node::Sym { id, .. } => write!(f, "s{id}"),
            Node::Un { op, arg } => match op {
                UnOp::Not => write!(f, "(bvnot {arg})"),
                UnOp::ZeroExtend(w) => {
                    write!(f, "((_ zero_extend {}) {arg})", w - arg.width())
                }
                UnOp::Extract(hi, lo) => write!(f, "((_ extract {hi} {lo}) {arg})"),
            },
            Node::Bin { op, lhs, rhs } => write!(f, "({} {lhs} {rhs})", op.smt_name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("symbol s{0} has no value in the assignment")]
    MissingSymbol(SymId),
}

/// A concrete value for each symbol.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment(BTreeMap<SymId, u32>);

impl Assignment {
    pub fn new() -> Assignment {
        Assignment::default()
    }

    pub fn get(&self, id: SymId) -> Option<u32> {
        self.0.get(&id).copied()
    }

    pub fn insert(&mut self, id: SymId, value: u32) {
        self.0.insert(id, value);
    }

    pub fn remove(&mut self, id: SymId) {
        self.0.remove(&id);
    }

    pub fn contains(&self, id: SymId) -> bool {
        self.0.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SymId, u32)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn retain(&mut self, mut keep: impl FnMut(SymId) -> bool) {
        self.0.retain(|k, _| keep(*k));
    }
}

impl FromIterator<(SymId, u32)> for Assignment {
    fn from_iter<T: IntoIterator<Item = (SymId, u32)>>(iter: T) -> Self {
        Assignment(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: SymId, w: u8) -> Expr {
        Expr::sym(id, w, SymOrigin { addr: 0x4000_0000, pc: 0, seq: id })
    }

    #[test]
    fn const_eval() {
        assert_eq!(Expr::constant(32, 7).eval(&Assignment::new()), Ok(7));
    }

    #[test]
    fn mask_compare_eval() {
        let x = s(0, 32);
        let c = Expr::binop(
            BinOp::Ne,
            &Expr::binop(BinOp::And, &x, &Expr::constant(32, 0x20000)),
            &Expr::constant(32, 0),
        );
        let a: Assignment = [(0, 0x20000)].into_iter().collect();
        assert_eq!(c.eval(&a), Ok(1));
        assert_eq!(c.eval(&Assignment::new()), Err(EvalError::MissingSymbol(0)));
        assert_eq!(c.to_string(), "(distinct (bvand s0 #x00020000) #x00000000)");
    }

    #[test]
    fn structural_equality_and_folding() {
        let a = Expr::binop(BinOp::Add, &s(1, 32), &Expr::constant(32, 3));
        let b = Expr::binop(BinOp::Add, &Expr::constant(32, 3), &s(1, 32));
        assert_eq!(a, b);
        assert_eq!(Expr::binop(BinOp::Xor, &a, &b), Expr::constant(32, 0));
        assert_eq!(Expr::binop(BinOp::And, &a, &Expr::constant(32, 0)).as_const(), Some(0));
        let e = Expr::binop(BinOp::Eq, &s(2, 8), &Expr::constant(8, 4));
        assert_eq!(e.negate().negate(), e);
        assert_eq!(s(3, 8).zext(32).extract(7, 0), s(3, 8));
        assert_eq!(s(3, 8).zext(32).extract(15, 8).as_const(), Some(0));
    }

    #[test]
    fn symbols_are_collected() {
        let e = Expr::binop(BinOp::Sub, &s(5, 32), &Expr::binop(BinOp::Or, &s(2, 32), &s(5, 32)));
        assert_eq!(e.symbols(), &[2, 5]);
        assert_eq!(e.origins().len(), 2);
    }

    #[test]
    fn substitute_folds() {
        let e = Expr::binop(BinOp::Ult, &s(1, 32), &s(2, 32));
        let m: BTreeMap<_, _> = [(1, 3), (2, 9)].into_iter().collect();
        assert_eq!(e.substitute(&m), Expr::bool_const(true));
        let half: BTreeMap<_, _> = [(1, 3)].into_iter().collect();
        assert_eq!(e.substitute(&half).symbols(), &[2]);
    }
}
