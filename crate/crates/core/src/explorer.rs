//! Knowledge extraction: depth-first concolic exploration guided by the
//! knowledge base, with rollback on invalid states.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use thiserror::Error;

use crate::context::current_context;
use crate::exec::{enter_interrupt, step, EngineHooks, StepOutcome};
use crate::expr::{mask, Assignment, Expr, SymId};
use crate::firmware::Firmware;
use crate::invalidity::{check_after_block, memory_report, DetectorConfig, InvalidKind, InvalidityReport};
use crate::irq::{Intervals, Phase};
use crate::isa::Width;
use crate::kb::{KbError, KnowledgeBase, Lookup, Query, Tier, UpdateResult};
use crate::solver::{invocation_count, DEFAULT_CONFLICT_BUDGET};
use crate::state::{ExecState, ReadRecord, TaggedWord};

pub const DEFAULT_BLOCK_CAP: u64 = 5_000_000;
pub const DEFAULT_HANDLER_BUDGET: usize = 64;
const GC_PERIOD: u64 = 64;

#[derive(Debug, Clone)]
pub struct ExploreConfig {
    pub detector: DetectorConfig,
    pub intervals: Intervals,
    /// Let cached values pick the side of symbolic branches.
    pub use_cache: bool,
    pub block_cap: u64,
    /// Maximum states spawned by one breadth-first handler exploration.
    pub handler_budget: usize,
    pub markers: BTreeSet<u32>,
    pub conflict_budget: u64,
    /// IRQs that may be delivered; `None` allows every IRQ with a vector.
    pub irqs: Option<u32>,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            detector: DetectorConfig::default(),
            intervals: Intervals::default(),
            use_cache: true,
            block_cap: DEFAULT_BLOCK_CAP,
            handler_budget: DEFAULT_HANDLER_BUDGET,
            markers: BTreeSet::new(),
            conflict_budget: DEFAULT_CONFLICT_BUDGET,
            irqs: None,
        }
    }
}

impl ExploreConfig {
    pub fn history_cap(&self) -> usize {
        (2 * self.detector.bb_inv1).max(64)
    }

    /// Fresh state at the reset vector carrying `kb`.
    pub fn initial_state(&self, fw: Arc<Firmware>, kb: KnowledgeBase) -> ExecState {
        let mut st = ExecState::new(fw, self.intervals, self.history_cap());
        if let Some(m) = self.irqs {
            st.irq.allowed &= m;
        }
        st.kb = kb;
        st.conflict_budget = self.conflict_budget;
        st
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    TrueSide,
    FalseSide,
    NoPreference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    NoNewBlocks,
    FirmwareHalted,
    BlockCapReached,
    FrontierExhausted,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::NoNewBlocks => "no-new-blocks",
            Termination::FirmwareHalted => "firmware-halted",
            Termination::BlockCapReached => "block-cap-reached",
            Termination::FrontierExhausted => "frontier-exhausted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: u32,
    pub wall: Duration,
    pub paths: u64,
    pub solver_calls: u64,
    pub blocks: u64,
    pub entries_before: usize,
    pub entries_after: usize,
    pub upgrades: u64,
    pub termination: Termination,
    pub invalid: Vec<InvalidityReport>,
    pub irq_log: Vec<(u64, u8)>,
    pub markers: BTreeSet<u32>,
    /// Registers whose replay array could not absorb a conflict.
    pub tier_overflows: BTreeSet<u32>,
}

impl fmt::Display for RoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "round: {}", self.round)?;
        writeln!(f, "termination: {}", self.termination)?;
        writeln!(f, "wall_ms: {}", self.wall.as_millis())?;
        writeln!(f, "paths: {}", self.paths)?;
        writeln!(f, "solver_calls: {}", self.solver_calls)?;
        writeln!(f, "blocks: {}", self.blocks)?;
        writeln!(f, "kb_entries: {} -> {}", self.entries_before, self.entries_after)?;
        writeln!(f, "kb_upgrades: {}", self.upgrades)?;
        writeln!(f, "invalid_states: {}", self.invalid.len())?;
        for r in &self.invalid {
            writeln!(f, "  {r}")?;
        }
        let irqs: Vec<String> = self.irq_log.iter().map(|(b, n)| format!("{n}@{b}")).collect();
        writeln!(f, "irqs: [{}]", irqs.join(" "))?;
        let m: Vec<String> = self.markers.iter().map(|a| format!("{a:#x}")).collect();
        writeln!(f, "markers: [{}]", m.join(" "))?;
        let o: Vec<String> = self.tier_overflows.iter().map(|a| format!("{a:#010x}")).collect();
        write!(f, "tier_overflows: [{}]", o.join(" "))
    }
}

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("every explored path was invalid ({} reports)", .0.invalid.len())]
    FrontierExhausted(Box<RoundReport>),
}

/// Result of one extraction round.
#[derive(Debug, Clone)]
pub struct Round {
    pub kb: KnowledgeBase,
    pub report: RoundReport,
    pub final_state: ExecState,
}

/// Peripheral hooks for extraction: every read is a fresh symbol whose model
/// value starts at the cached response.
pub struct ExtractHooks;

impl EngineHooks for ExtractHooks {
    fn mmio_read(&mut self, st: &mut ExecState, addr: u32, width: Width) -> TaggedWord {
        let pc = st.pc();
        let ctx = current_context(st);
        let pos = st.read_counts.get(&(addr, pc)).copied().unwrap_or(0);
        let in_irq = st.in_handler();
        let q = Query { addr, pc, ctx, pos, in_irq };
        let last = st.mmio_write_log.get(&addr).copied();
        let hint = match st.kb.lookup(&q, last, &mut |_| 0) {
            Lookup::Hit(v) => {
                st.kb.stats.hits += 1;
                Some(v)
            }
            _ => {
                st.kb.stats.misses += 1;
                None
            }
        };
        st.kb.note_read(addr, in_irq);
        let w = match width {
            Width::Byte => 8,
            Width::Word => 32,
        };
        let s = st.new_symbol(addr, pc, w, ctx, hint);
        TaggedWord::from_expr(s.zext(32))
    }

    fn mmio_write(&mut self, _: &mut ExecState, _: u32, _: Width, _: u32) {}
}

/// Picks the side of a symbolic branch from cached knowledge. The returned
/// hints are the cached values of the branch's symbols.
pub fn favorable_target(st: &ExecState, cond: &Expr, use_cache: bool) -> (Preference, Vec<(SymId, u32)>) {
    if !use_cache {
        return (Preference::NoPreference, Vec::new());
    }
    let side = |v: u32| if v == 1 { Preference::TrueSide } else { Preference::FalseSide };
    if st.in_handler() {
        // registers serving their last write decide on their own
        let mut t0 = BTreeMap::new();
        for &s in cond.symbols() {
            if let Some(r) = st.read_of(s) {
                if let Some(&w) = st.mmio_write_log.get(&r.addr) {
                    if st.kb.tier(r.addr, true) == Tier::T0 {
                        t0.insert(s, w & mask(r.width));
                    }
                }
            }
        }
        if !t0.is_empty() {
            if let Some(v) = cond.substitute(&t0).as_const() {
                return (side(v), t0.into_iter().collect());
            }
        }
        // every other handler path is explored
        return (Preference::NoPreference, t0.into_iter().collect());
    }
    let mut hints = Vec::new();
    for &s in cond.symbols() {
        let Some(r) = st.read_of(s) else {
            return (Preference::NoPreference, Vec::new());
        };
        let last = st.mmio_write_log.get(&r.addr).copied();
        match st.kb.lookup(&Query::from(r), last, &mut |_| 0) {
            Lookup::Hit(v) => hints.push((s, v & mask(r.width))),
            _ => return (Preference::NoPreference, Vec::new()),
        }
    }
    let a: Assignment = hints.iter().copied().collect();
    match cond.eval(&a) {
        Ok(v) => (side(v), hints),
        Err(_) => (Preference::NoPreference, Vec::new()),
    }
}

#[derive(Debug)]
enum Event {
    Fork { cond: Expr, t: u32, f: u32 },
    Invalid(InvalidityReport),
    Halted,
    NoNewBlocks,
    BlockCap,
    LeftHandler,
}

/// A not-taken fork child; its last constraint is checked when popped.
struct Pending {
    state: ExecState,
    cond: Expr,
    /// Path that pushed it and the block count at the fork.
    lineage: u64,
    forked_at: u64,
}

pub struct Explorer {
    cfg: ExploreConfig,
    frontier: Vec<Pending>,
    invalid: Vec<InvalidityReport>,
    overflows: BTreeSet<u32>,
    paths: u64,
    blocks: u64,
    lineage: u64,
}

impl Explorer {
    pub fn new(cfg: ExploreConfig) -> Explorer {
        Explorer {
            cfg,
            frontier: Vec::new(),
            invalid: Vec::new(),
            overflows: BTreeSet::new(),
            paths: 0,
            blocks: 0,
            lineage: 0,
        }
    }

    /// Runs one round from `st` until termination and returns the knowledge
    /// base of the state alive at the end.
    pub fn run(mut self, round: u32, st: ExecState) -> Result<Round, ExploreError> {
        let t0 = Instant::now();
        let calls0 = invocation_count();
        let entries_before = st.kb.entries().len();
        let upgrades0 = st.kb.stats.upgrades;
        self.paths = 1;
        let mut cur = Some(st);
        let mut termination = Termination::FrontierExhausted;
        while let Some(mut st) = cur.take().or_else(|| self.pop()) {
            match self.advance(&mut st, false) {
                Event::Fork { cond, t, f } => cur = self.branch(st, cond, t, f),
                Event::Invalid(r) => {
                    debug!("abandoning state {}: {r}", st.id);
                    if matches!(r.kind, InvalidKind::InfiniteLoop | InvalidKind::LongLoop) {
                        self.prune_loop(r.since);
                    }
                    self.invalid.push(r);
                }
                Event::LeftHandler => unreachable!("only reported inside handler exploration"),
                ev => {
                    termination = match ev {
                        Event::Halted => Termination::FirmwareHalted,
                        Event::NoNewBlocks => Termination::NoNewBlocks,
                        _ => Termination::BlockCapReached,
                    };
                    let report = self.report(round, t0, calls0, entries_before, upgrades0, &st, termination);
                    info!("round {round} finished: {termination}, {} paths", report.paths);
                    return Ok(Round { kb: st.kb.clone(), report, final_state: st });
                }
            }
        }
        let report = self.report_parts(round, t0, calls0, entries_before, 0, termination);
        Err(ExploreError::FrontierExhausted(Box::new(report)))
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        round: u32,
        t0: Instant,
        calls0: u64,
        entries_before: usize,
        upgrades0: u64,
        st: &ExecState,
        termination: Termination,
    ) -> RoundReport {
        let mut r = self.report_parts(round, t0, calls0, entries_before, st.kb.entries().len(), termination);
        r.upgrades = st.kb.stats.upgrades.saturating_sub(upgrades0);
        r.irq_log = st.irq_log.clone();
        r.markers = st.markers.clone();
        r
    }

    fn report_parts(
        &self,
        round: u32,
        t0: Instant,
        calls0: u64,
        entries_before: usize,
        entries_after: usize,
        termination: Termination,
    ) -> RoundReport {
        RoundReport {
            round,
            wall: t0.elapsed(),
            paths: self.paths,
            solver_calls: invocation_count() - calls0,
            blocks: self.blocks,
            entries_before,
            entries_after,
            upgrades: 0,
            termination,
            invalid: self.invalid.clone(),
            irq_log: Vec::new(),
            markers: BTreeSet::new(),
            tier_overflows: self.overflows.clone(),
        }
    }

    /// Siblings forked while the current path spun in a detected loop are
    /// all alternatives to the same loop; only the one from its first
    /// iteration is kept, so knowledge learned while spinning is not
    /// inherited by the exit.
    fn prune_loop(&mut self, since: u64) {
        let lin = self.lineage;
        let inside = |p: &Pending| p.lineage == lin && p.forked_at >= since;
        let Some(first) = self.frontier.iter().position(inside) else {
            return;
        };
        let before = self.frontier.len();
        let mut i = 0;
        self.frontier.retain(|p| {
            let keep = i <= first || !inside(p);
            i += 1;
            keep
        });
        debug!("dropped {} loop siblings", before - self.frontier.len());
    }

    fn pop(&mut self) -> Option<ExecState> {
        while let Some(Pending { mut state, cond, .. }) = self.frontier.pop() {
            self.lineage += 1;
            match state.check_last() {
                Ok(true) => {
                    self.learn(&mut state, &cond);
                    self.paths += 1;
                    return Some(state);
                }
                Ok(false) => {}
                Err(e) => warn!("dropping state {}: {e}", state.id),
            }
        }
        None
    }

    /// Steps `st` until something needs the explorer's attention.
    fn advance(&mut self, st: &mut ExecState, in_bfs: bool) -> Event {
        if st.pending_block_end {
            st.pending_block_end = false;
            if let Some(ev) = self.end_block(st, in_bfs) {
                return ev;
            }
        }
        let mut hooks = ExtractHooks;
        loop {
            let pc = st.pc();
            if self.cfg.markers.contains(&pc) {
                st.markers.insert(pc);
            }
            match step(st, &mut hooks) {
                StepOutcome::Continue { block_end: false } => {}
                StepOutcome::Continue { block_end: true } => {
                    if let Some(ev) = self.end_block(st, in_bfs) {
                        return ev;
                    }
                }
                StepOutcome::Halted => {
                    // A halting block still gets its user-point check.
                    return match self.end_block(st, in_bfs) {
                        Some(ev @ Event::Invalid(_)) => ev,
                        _ => Event::Halted,
                    };
                }
                StepOutcome::BranchOnSymbol { cond, true_target, false_target } => {
                    return Event::Fork { cond, t: true_target, f: false_target }
                }
                StepOutcome::Fault(f) => return Event::Invalid(memory_report(st, f)),
            }
        }
    }

    fn end_block(&mut self, st: &mut ExecState, in_bfs: bool) -> Option<Event> {
        st.finish_block();
        self.blocks += 1;
        if let Some(r) = check_after_block(st, &self.cfg.detector) {
            return Some(Event::Invalid(r));
        }
        if in_bfs && !st.in_handler() {
            return Some(Event::LeftHandler);
        }
        if !in_bfs && st.blocks - st.last_new_block >= self.cfg.detector.bb_term {
            return Some(Event::NoNewBlocks);
        }
        if self.blocks >= self.cfg.block_cap {
            return Some(Event::BlockCap);
        }
        if st.blocks % GC_PERIOD == 0 {
            st.gc();
        }
        if let Some(n) = st.irq.tick(Phase::Extraction, st.in_handler()) {
            if let Err(f) = enter_interrupt(st, n) {
                return Some(Event::Invalid(memory_report(st, f)));
            }
            debug!("state {}: irq {n} at block {}", st.id, st.blocks);
            st.irq_log.push((st.blocks, n));
            st.block_start = st.pc();
        }
        None
    }

    /// Handles a symbolic branch in the main exploration; returns the state
    /// to continue with.
    fn branch(&mut self, st: ExecState, cond: Expr, t: u32, f: u32) -> Option<ExecState> {
        let (pref, hints) = favorable_target(&st, &cond, self.cfg.use_cache);
        if pref == Preference::NoPreference && st.in_handler() {
            return self.explore_handler(st, cond, t, f, &hints);
        }
        let (taken_cond, tt, ft) = match pref {
            Preference::FalseSide => (cond.negate(), f, t),
            _ => (cond, t, f),
        };
        let forked_at = st.blocks;
        let (mut taken, mut other) = st.fork(&taken_cond, tt, ft);
        taken.pending_block_end = true;
        other.pending_block_end = true;
        let other_cond = taken_cond.negate();
        match taken.check_last_hinted(&hints) {
            Ok(true) => {
                self.learn(&mut taken, &taken_cond);
                let lineage = self.lineage;
                self.frontier.push(Pending { state: other, cond: other_cond, lineage, forked_at });
                Some(taken)
            }
            r => {
                if let Err(e) = r {
                    warn!("treating branch at {:#x} as infeasible: {e}", st.pc());
                }
                self.take_only(other, &other_cond)
            }
        }
    }

    fn take_only(&mut self, mut st: ExecState, cond: &Expr) -> Option<ExecState> {
        match st.check_last() {
            Ok(true) => {
                self.learn(&mut st, cond);
                Some(st)
            }
            Ok(false) => None,
            Err(e) => {
                warn!("dropping state {}: {e}", st.id);
                None
            }
        }
    }

    /// Follows one side of a branch without keeping the sibling.
    fn follow(&mut self, st: ExecState, cond: Expr, t: u32, f: u32, pref: Preference, hints: &[(SymId, u32)]) -> Option<ExecState> {
        let (c, tt, ft) = match pref {
            Preference::FalseSide => (cond.negate(), f, t),
            _ => (cond, t, f),
        };
        let (mut taken, mut other) = st.fork(&c, tt, ft);
        taken.pending_block_end = true;
        other.pending_block_end = true;
        match taken.check_last_hinted(hints) {
            Ok(true) => {
                self.learn(&mut taken, &c);
                Some(taken)
            }
            _ => self.take_only(other, &c.negate()),
        }
    }

    /// Explores every path of an interrupt handler breadth-first and merges
    /// what the valid ones learned.
    fn explore_handler(&mut self, st: ExecState, cond: Expr, t: u32, f: u32, hints: &[(SymId, u32)]) -> Option<ExecState> {
        let mut queue = VecDeque::new();
        let mut spawned = 0usize;
        self.split(st, cond, t, f, hints, &mut queue, &mut spawned);
        let mut done: Vec<ExecState> = Vec::new();
        while let Some(mut s) = queue.pop_front() {
            loop {
                match self.advance(&mut s, true) {
                    Event::Fork { cond, t, f } => {
                        let (pref, hints) = favorable_target(&s, &cond, self.cfg.use_cache);
                        if pref == Preference::NoPreference && spawned < self.cfg.handler_budget {
                            self.split(s, cond, t, f, &hints, &mut queue, &mut spawned);
                            break;
                        }
                        match self.follow(s, cond, t, f, pref, &hints) {
                            Some(n) => s = n,
                            None => break,
                        }
                    }
                    Event::Invalid(r) => {
                        debug!("abandoning handler state {}: {r}", s.id);
                        self.invalid.push(r);
                        break;
                    }
                    Event::LeftHandler | Event::Halted | Event::BlockCap | Event::NoNewBlocks => {
                        done.push(s);
                        break;
                    }
                }
            }
        }
        let mut it = done.into_iter();
        let mut first = it.next()?;
        for other in it {
            first.kb.merge_from(&other.kb);
        }
        Some(first)
    }

    fn split(
        &mut self,
        st: ExecState,
        cond: Expr,
        t: u32,
        f: u32,
        hints: &[(SymId, u32)],
        queue: &mut VecDeque<ExecState>,
        spawned: &mut usize,
    ) {
        // registers serving their last write stay out of the split
        let cond = if hints.is_empty() { cond } else { cond.substitute(&hints.iter().copied().collect()) };
        let neg = cond.negate();
        let (a, b) = st.fork(&cond, t, f);
        let mut n = 0;
        for (mut s, c) in [(a, cond), (b, neg)] {
            s.pending_block_end = true;
            match s.check_last_hinted(hints) {
                Ok(true) => {
                    self.learn(&mut s, &c);
                    queue.push_back(s);
                    n += 1;
                }
                Ok(false) => {}
                Err(e) => warn!("dropping handler state {}: {e}", s.id),
            }
        }
        *spawned += n;
        self.paths += (n as u64).saturating_sub(1);
    }

    /// Records the values the path condition requires for every read the
    /// branch depends on.
    fn learn(&mut self, st: &mut ExecState, cond: &Expr) {
        for &s in cond.symbols() {
            let (Some(rec), Some(value)) = (st.read_of(s).cloned(), st.model.get(s)) else {
                continue;
            };
            let history: Vec<(ReadRecord, u32)> = st
                .reads
                .iter()
                .filter(|r| r.addr == rec.addr)
                .filter_map(|r| st.read_value(r).map(|v| (r.clone(), v)))
                .collect();
            if rec.in_irq && !st.in_handler() {
                st.kb.note_irq_consumed(rec.addr);
            }
            let last = st.mmio_write_log.get(&rec.addr).copied();
            match st.kb.update(&rec, value, &history, last) {
                Ok(UpdateResult::Upgraded(from, to)) => {
                    debug!("register {:#010x} upgraded {from} -> {to} at pc {:#x}", rec.addr, rec.pc)
                }
                Ok(_) => {}
                Err(KbError::TierOverflow { addr, pc, pos }) => {
                    warn!("replay conflict for {addr:#010x} at pc {pc:#x} position {pos}; treating as data register");
                    self.overflows.insert(addr);
                }
                Err(e) => warn!("knowledge base update failed: {e}"),
            }
        }
    }
}

/// One extraction round from the reset vector.
pub fn kb_learn(fw: Arc<Firmware>, kb: KnowledgeBase, cfg: &ExploreConfig) -> Result<Round, ExploreError> {
    let st = cfg.initial_state(fw, kb);
    Explorer::new(cfg.clone()).run(1, st)
}

/// Resumes extraction from `snapshot` with `kb`, extending it.
pub fn reinforced_learn(
    kb: KnowledgeBase,
    mut snapshot: ExecState,
    round: u32,
    cfg: &ExploreConfig,
) -> Result<Round, ExploreError> {
    snapshot.kb = kb;
    snapshot.record_reads = true;
    snapshot.renumber();
    Explorer::new(cfg.clone()).run(round, snapshot)
}

impl ExploreError {
    pub fn report(&self) -> &RoundReport {
        match self {
            ExploreError::FrontierExhausted(r) => r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::project::Project;

    const CHAIN: &str = "
        .word 0x20010000, reset
reset:
        movi r5, 0x40000000
        movi r0, 0
        ldw r1, [r5]
        bne r1, r0, s2
        jmp fa
s2:
        ldw r1, [r5+4]
        bne r1, r0, s3
        jmp fb
s3:
        ldw r1, [r5+8]
        bne r1, r0, dead
        jmp fc
dead:
        halt
fa:
        halt
fb:
        halt
fc:
        halt
";

    fn project(src: &str, cfg: &str) -> Project {
        Project::from_source(src, cfg).unwrap()
    }

    #[test]
    fn siblings_are_explored_last_in_first_out() {
        let p = project(CHAIN, "[detector]\nuser_points = [\"dead\", \"fa\", \"fb\", \"fc\"]\n");
        let mut cfg = p.config.explore_config();
        cfg.use_cache = false;
        let err = kb_learn(p.firmware.clone(), KnowledgeBase::new(), &cfg).unwrap_err();
        let r = err.report();
        let order: Vec<u32> = r.invalid.iter().map(|i| i.evidence[0]).collect();
        let want: Vec<u32> = ["dead", "fc", "fb", "fa"].iter().map(|n| p.symbol(n).unwrap()).collect();
        assert_eq!(order, want);
        assert_eq!(r.paths, 4);
        let ids: BTreeSet<u64> = r.invalid.iter().map(|i| i.state_id).collect();
        assert_eq!(ids.len(), r.invalid.len(), "a state was reported twice");
    }

    #[test]
    fn valid_sibling_ends_the_round() {
        let p = project(CHAIN, "[detector]\nuser_points = [\"dead\", \"fc\"]\n");
        let round = kb_learn(p.firmware.clone(), KnowledgeBase::new(), &p.config.explore_config()).unwrap();
        assert_eq!(round.report.termination, Termination::FirmwareHalted);
        assert_eq!(round.final_state.pc(), p.symbol("fb").unwrap());
        assert_eq!(round.report.invalid.len(), 2);
    }

    #[test]
    fn block_cap_stops_a_round() {
        let src = "
        .word 0x20010000, reset
reset:
        movi r5, 0x40000000
        ldw r1, [r5]
        movi r2, 0
spin:
        addi r2, r2, 1
        jmp spin
";
        let p = project(src, "[detector]\nblock_cap = 1000\n");
        let round = kb_learn(p.firmware.clone(), KnowledgeBase::new(), &p.config.explore_config()).unwrap();
        assert_eq!(round.report.termination, Termination::BlockCapReached);
        assert!(round.report.blocks <= 1000);
    }

    #[test]
    fn default_cap_is_five_million() {
        assert_eq!(ExploreConfig::default().block_cap, 5_000_000);
    }
}
