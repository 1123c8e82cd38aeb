//! Invalid-state detection: infinite loops, long loops over symbolic data,
//! invalid memory accesses and user-flagged program points.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use crate::exec::Fault;
use crate::state::{ExecState, Mode, TaggedWord};

pub const DEFAULT_BB_INV1: usize = 30;
pub const DEFAULT_BB_INV2: u64 = 2000;
pub const DEFAULT_BB_TERM: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectorConfig {
    pub bb_inv1: usize,
    pub bb_inv2: u64,
    pub bb_term: u64,
    pub user_points: BTreeSet<u32>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            bb_inv1: DEFAULT_BB_INV1,
            bb_inv2: DEFAULT_BB_INV2,
            bb_term: DEFAULT_BB_TERM,
            user_points: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvalidKind {
    InfiniteLoop,
    LongLoop,
    InvalidMemory(u32),
    UserPoint(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidityReport {
    pub kind: InvalidKind,
    /// Block start addresses of the offending cycle, or the faulting access.
    pub evidence: Vec<u32>,
    pub fault: Option<Fault>,
    pub state_id: u64,
    pub block: u64,
    /// Block index from which the offending cycle (with one extra period of
    /// slack) was repeating; equals `block` for other kinds.
    pub since: u64,
}

impl fmt::Display for InvalidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            InvalidKind::InfiniteLoop => write!(f, "infinite loop")?,
            InvalidKind::LongLoop => write!(f, "long loop")?,
            InvalidKind::InvalidMemory(a) => write!(f, "invalid memory access at {a:#010x}")?,
            InvalidKind::UserPoint(a) => write!(f, "user point {a:#x}")?,
        }
        if let Some(fl) = &self.fault {
            write!(f, " ({fl})")?;
        }
        if !self.evidence.is_empty() && matches!(self.kind, InvalidKind::InfiniteLoop | InvalidKind::LongLoop) {
            let cyc: Vec<String> = self.evidence.iter().map(|a| format!("{a:#x}")).collect();
            write!(f, " cycle [{}]", cyc.join(" "))?;
        }
        write!(f, " in state {} at block {}", self.state_id, self.block)
    }
}

/// Register file as compared between loop iterations.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Snapshot {
    regs: [TaggedWord; 15],
    mode: Mode,
}

/// Incremental cycle tracker over the block history.
#[derive(Debug, Clone, Default)]
pub struct LoopTracker {
    period: usize,
    /// Consecutive blocks equal to the block one period earlier.
    run: u64,
    snaps: VecDeque<Snapshot>,
}

impl LoopTracker {
    pub fn period(&self) -> usize {
        self.period
    }

    /// Completed repetitions of the current cycle beyond the first.
    pub fn iterations(&self) -> u64 {
        if self.period == 0 {
            0
        } else {
            self.run / self.period as u64
        }
    }

    pub fn reset(&mut self) {
        self.period = 0;
        self.run = 0;
        self.snaps.clear();
    }

    fn observe(&mut self, hist: &VecDeque<u32>, window: usize) {
        let n = hist.len();
        if self.period > 0 && n > self.period && hist[n - 1] == hist[n - 1 - self.period] {
            self.run += 1;
            return;
        }
        self.period = 0;
        self.run = 0;
        for p in 1..=window / 2 {
            if 2 * p > n {
                break;
            }
            if (0..p).all(|i| hist[n - 1 - i] == hist[n - 1 - i - p]) {
                self.period = p;
                self.run = p as u64;
                break;
            }
        }
    }
}

fn snapshot(st: &ExecState) -> Snapshot {
    Snapshot { regs: std::array::from_fn(|i| st.cpu.regs[i].clone()), mode: st.cpu.mode }
}

fn same_registers(st: &ExecState, a: &Snapshot, b: &Snapshot) -> bool {
    if a.mode != b.mode {
        return false;
    }
    a.regs.iter().zip(&b.regs).all(|(x, y)| match (x, y) {
        (TaggedWord::Concrete(p), TaggedWord::Concrete(q)) => p == q,
        _ if x == y => true,
        _ => match (eval(st, x), eval(st, y)) {
            (Some(p), Some(q)) => p == q,
            _ => false,
        },
    })
}

fn eval(st: &ExecState, w: &TaggedWord) -> Option<u32> {
    match w {
        TaggedWord::Concrete(v) => Some(*v),
        TaggedWord::Symbolic(e) => e.eval(&st.model).ok(),
    }
}

/// Runs the loop and user-point detectors after a completed block. The
/// state's history must already include the block.
pub fn check_after_block(st: &mut ExecState, cfg: &DetectorConfig) -> Option<InvalidityReport> {
    let block = *st.cf_history.back()?;
    if cfg.user_points.contains(&block) {
        return Some(report(st, InvalidKind::UserPoint(block), vec![block]));
    }
    let window = cfg.bb_inv1;
    let mut tracker = std::mem::take(&mut st.loops);
    tracker.observe(&st.cf_history, window);
    let snap = snapshot(st);
    if tracker.snaps.len() > window {
        tracker.snaps.pop_front();
    }
    let mut found = None;
    let p = tracker.period;
    if p > 0 && st.cpu.any_symbolic() {
        let cycle: Vec<u32> = st.cf_history.iter().rev().take(p).rev().copied().collect();
        let since = st.blocks.saturating_sub(tracker.run + 2 * p as u64);
        if tracker.iterations() > cfg.bb_inv2 {
            found = Some(InvalidityReport { since, ..report(st, InvalidKind::LongLoop, cycle) });
        } else if tracker.run >= p as u64 && tracker.snaps.len() >= p {
            let earlier = &tracker.snaps[tracker.snaps.len() - p];
            if same_registers(st, earlier, &snap) {
                found = Some(InvalidityReport { since, ..report(st, InvalidKind::InfiniteLoop, cycle) });
            }
        }
    }
    tracker.snaps.push_back(snap);
    st.loops = tracker;
    found
}

pub fn memory_report(st: &ExecState, fault: Fault) -> InvalidityReport {
    let mut r = report(st, InvalidKind::InvalidMemory(fault.addr), vec![fault.addr]);
    r.fault = Some(fault);
    r
}

fn report(st: &ExecState, kind: InvalidKind, evidence: Vec<u32>) -> InvalidityReport {
    InvalidityReport { kind, evidence, fault: None, state_id: st.id, block: st.blocks, since: st.blocks }
}
