//! A small CDCL SAT solver: two watched literals, first-UIP learning,
//! fixed decision order and caller-chosen polarity. No restarts and no phase
//! saving, so the model found for a given formula is reproducible.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit(u32);

impl Lit {
    pub fn new(var: u32, negated: bool) -> Lit {
        Lit(var << 1 | negated as u32)
    }

    pub fn var(self) -> u32 {
        self.0 >> 1
    }

    pub fn is_neg(self) -> bool {
        self.0 & 1 == 1
    }

    fn idx(self) -> usize {
        self.0 as usize
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    Sat(Vec<bool>),
    Unsat,
    Budget,
}

const UNDEF: u8 = 2;

#[derive(Debug, Default)]
pub struct SatSolver {
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<usize>>,
    value: Vec<u8>,
    level: Vec<u32>,
    reason: Vec<Option<usize>>,
    polarity: Vec<bool>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    inconsistent: bool,
    seen: Vec<bool>,
    pub conflicts: u64,
}

impl SatSolver {
    pub fn new() -> SatSolver {
        SatSolver::default()
    }

    pub fn num_vars(&self) -> u32 {
        self.value.len() as u32
    }

    /// Allocates a variable. Decisions visit variables in allocation order.
    pub fn new_var(&mut self) -> u32 {
        let v = self.value.len() as u32;
        self.value.push(UNDEF);
        self.level.push(0);
        self.reason.push(None);
        self.polarity.push(false);
        self.seen.push(false);
        self.watches.push(Vec::new());
        self.watches.push(Vec::new());
        v
    }

    /// Value tried first when deciding `var`.
    pub fn set_polarity(&mut self, var: u32, value: bool) {
        self.polarity[var as usize] = value;
    }

    fn lit_value(&self, l: Lit) -> u8 {
        let v = self.value[l.var() as usize];
        if v == UNDEF {
            UNDEF
        } else {
            v ^ l.is_neg() as u8
        }
    }

    fn decision_level(&self) -> u32 {
        self.trail_lim.len() as u32
    }

    fn enqueue(&mut self, l: Lit, reason: Option<usize>) {
        let v = l.var() as usize;
        self.value[v] = !l.is_neg() as u8;
        self.level[v] = self.decision_level();
        self.reason[v] = reason;
        self.trail.push(l);
    }

    pub fn add_clause(&mut self, lits: &[Lit]) {
        if self.inconsistent {
            return;
        }
        debug_assert_eq!(self.decision_level(), 0);
        let mut c: Vec<Lit> = Vec::with_capacity(lits.len());
        for &l in lits {
            match self.lit_value(l) {
                1 => return,
                0 => continue,
                _ => {}
            }
            if c.contains(&!l) {
                return;
            }
            if !c.contains(&l) {
                c.push(l);
            }
        }
        match c.len() {
            0 => self.inconsistent = true,
            1 => {
                self.enqueue(c[0], None);
                if self.propagate().is_some() {
                    self.inconsistent = true;
                }
            }
            _ => {
                let ci = self.clauses.len();
                self.watches[(!c[0]).idx()].push(ci);
                self.watches[(!c[1]).idx()].push(ci);
                self.clauses.push(c);
            }
        }
    }

    /// Unit propagation; returns the index of a conflicting clause.
    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            let mut ws = std::mem::take(&mut self.watches[p.idx()]);
            let mut i = 0;
            let mut conflict = None;
            while i < ws.len() {
                let ci = ws[i];
                let false_lit = !p;
                {
                    let c = &mut self.clauses[ci];
                    if c[0] == false_lit {
                        c.swap(0, 1);
                    }
                }
                let first = self.clauses[ci][0];
                if self.lit_value(first) == 1 {
                    i += 1;
                    continue;
                }
                let len = self.clauses[ci].len();
                let mut moved = false;
                for k in 2..len {
                    let l = self.clauses[ci][k];
                    if self.lit_value(l) != 0 {
                        self.clauses[ci].swap(1, k);
                        self.watches[(!l).idx()].push(ci);
                        ws.swap_remove(i);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                if self.lit_value(first) == 0 {
                    conflict = Some(ci);
                    break;
                }
                self.enqueue(first, Some(ci));
                i += 1;
            }
            let slot = &mut self.watches[p.idx()];
            ws.append(slot);
            *slot = ws;
            if conflict.is_some() {
                self.qhead = self.trail.len();
                return conflict;
            }
        }
        None
    }

    fn analyze(&mut self, mut confl: usize) -> (Vec<Lit>, u32) {
        let mut learnt = vec![Lit(0)];
        let mut pending = 0;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        let cur = self.decision_level();
        loop {
            let start = if p.is_some() { 1 } else { 0 };
            let clause = self.clauses[confl].clone();
            for &q in &clause[start..] {
                let v = q.var() as usize;
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    if self.level[v] >= cur {
                        pending += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[self.trail[idx].var() as usize] {
                    break;
                }
            }
            let lit = self.trail[idx];
            p = Some(lit);
            self.seen[lit.var() as usize] = false;
            pending -= 1;
            if pending == 0 {
                break;
            }
            confl = self.reason[lit.var() as usize].expect("implied literal has a reason");
        }
        learnt[0] = !p.unwrap();
        for l in &learnt[1..] {
            self.seen[l.var() as usize] = false;
        }
        let mut bt = 0;
        if learnt.len() > 1 {
            let mut max_i = 1;
            for i in 2..learnt.len() {
                if self.level[learnt[i].var() as usize] > self.level[learnt[max_i].var() as usize] {
                    max_i = i;
                }
            }
            learnt.swap(1, max_i);
            bt = self.level[learnt[1].var() as usize];
        }
        (learnt, bt)
    }

    fn backtrack(&mut self, level: u32) {
        if self.decision_level() <= level {
            return;
        }
        let lim = self.trail_lim[level as usize];
        for l in self.trail.drain(lim..) {
            let v = l.var() as usize;
            self.value[v] = UNDEF;
            self.reason[v] = None;
        }
        self.trail_lim.truncate(level as usize);
        self.qhead = self.trail.len();
    }

    /// Runs the search, giving up after `conflict_budget` conflicts.
    pub fn solve(&mut self, conflict_budget: u64) -> SatResult {
        if self.inconsistent {
            return SatResult::Unsat;
        }
        if self.propagate().is_some() {
            self.inconsistent = true;
            return SatResult::Unsat;
        }
        let mut next = 0usize;
        let mut conflicts = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                if self.decision_level() == 0 {
                    self.inconsistent = true;
                    return SatResult::Unsat;
                }
                conflicts += 1;
                self.conflicts += 1;
                if conflicts > conflict_budget {
                    self.backtrack(0);
                    return SatResult::Budget;
                }
                let (learnt, bt) = self.analyze(confl);
                self.backtrack(bt);
                next = 0;
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let ci = self.clauses.len();
                    self.watches[(!learnt[0]).idx()].push(ci);
                    self.watches[(!learnt[1]).idx()].push(ci);
                    let first = learnt[0];
                    self.clauses.push(learnt);
                    self.enqueue(first, Some(ci));
                }
                continue;
            }
            while next < self.value.len() && self.value[next] != UNDEF {
                next += 1;
            }
            if next == self.value.len() {
                let model = self.value.iter().map(|&v| v == 1).collect();
                self.backtrack(0);
                return SatResult::Sat(model);
            }
            self.trail_lim.push(self.trail.len());
            let pol = self.polarity[next];
            self.enqueue(Lit::new(next as u32, !pol), None);
        }
    }
}
