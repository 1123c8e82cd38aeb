//! Satisfiability of path constraints over peripheral symbols.

use std::cell::Cell;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::bitblast::Blaster;
use crate::expr::{Assignment, Expr, Node, SymId};
use crate::sat::{SatResult, SatSolver};

pub const DEFAULT_CONFLICT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveResult {
    Sat(Assignment),
    Unsat,
}

impl SolveResult {
    pub fn model(self) -> Option<Assignment> {
        match self {
            SolveResult::Sat(a) => Some(a),
            SolveResult::Unsat => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("solver gave up after {0} conflicts")]
    ResourceLimit(u64),
}

thread_local! {
    static CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of solver invocations made on this thread so far.
pub fn invocation_count() -> u64 {
    CALLS.with(|c| c.get())
}

/// Collects every symbol and its width.
pub fn symbol_widths(constraints: &[Expr]) -> BTreeMap<SymId, u8> {
    let mut out = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    let mut stack: Vec<Expr> = constraints.to_vec();
    while let Some(e) = stack.pop() {
        if !e.is_symbolic() || !seen.insert(e.ptr_id()) {
            continue;
        }
        match e.node() {
            Node::Const { .. } => {}
            Node::Sym { id, .. } => {
                out.insert(*id, e.width());
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

pub fn solve(constraints: &[Expr]) -> Result<SolveResult, SolveError> {
    solve_with_hints(constraints, &Assignment::new(), DEFAULT_CONFLICT_BUDGET)
}

/// Like [`solve`], but symbol bits are tried at their hinted value first, so
/// a hint that already satisfies the constraints is returned unchanged.
pub fn solve_with_hints(
    constraints: &[Expr],
    hints: &Assignment,
    conflict_budget: u64,
) -> Result<SolveResult, SolveError> {
    CALLS.with(|c| c.set(c.get() + 1));
    let mut pending = Vec::new();
    for c in constraints {
        assert_eq!(c.width(), 1, "constraints must be boolean");
        match c.as_const() {
            Some(0) => return Ok(SolveResult::Unsat),
            Some(_) => {}
            None => pending.push(c.clone()),
        }
    }
    let widths = symbol_widths(&pending);
    let mut sat = SatSolver::new();
    let mut bl = Blaster::new(&mut sat);
    for (&id, &w) in &widths {
        bl.declare_symbol(id, w, hints.get(id));
    }
    for c in &pending {
        let bit = bl.blast(c)[0];
        bl.sat.add_clause(&[bit]);
    }
    let bits: Vec<(SymId, Vec<crate::sat::Lit>)> = widths
        .keys()
        .map(|&id| (id, bl.symbol_bits(id).unwrap().to_vec()))
        .collect();
    match sat.solve(conflict_budget) {
        SatResult::Unsat => Ok(SolveResult::Unsat),
        SatResult::Budget => Err(SolveError::ResourceLimit(conflict_budget)),
        SatResult::Sat(model) => {
            let a: Assignment = bits
                .iter()
                .map(|(id, lits)| {
                    let v = lits.iter().enumerate().fold(0u32, |acc, (i, l)| {
                        let b = model[l.var() as usize] ^ l.is_neg();
                        acc | (b as u32) << i
                    });
                    (*id, v)
                })
                .collect();
            debug_assert!(pending.iter().all(|c| c.eval(&a) == Ok(1)), "unsound witness");
            Ok(SolveResult::Sat(a))
        }
    }
}
