//! KB-driven emulation for the analysis phase.
//!
//! Peripheral reads are answered from a knowledge base. Reads of data
//! registers consume bytes of a test case instead, in read order across all
//! data registers; once the input is used up they return zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::FirmwareConfig;
use crate::context::current_context;
use crate::exec::{enter_interrupt, step, EngineHooks, Fault, FaultKind, StepOutcome};
use crate::firmware::Firmware;
use crate::irq::Phase;
use crate::isa::{Instruction, Width};
use crate::memory::RegionKind;
use crate::kb::{KnowledgeBase, Lookup, Query, Tier};
use crate::state::{ExecState, Frame, TaggedWord};

/// Zero bytes served after the input is exhausted before a run is cut off.
pub const PAD_CAP: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CrashKind {
    RomWrite,
    UnmappedAccess,
    ExecOutsideRom,
    HardFaultAnalog,
}

impl CrashKind {
    pub fn from_fault(kind: FaultKind) -> CrashKind {
        match kind {
            FaultKind::Unmapped => CrashKind::UnmappedAccess,
            FaultKind::RomWrite => CrashKind::RomWrite,
            FaultKind::NotExecutable => CrashKind::ExecOutsideRom,
            FaultKind::Decode(_) | FaultKind::Unaligned | FaultKind::BadReturn | FaultKind::StackFault => {
                CrashKind::HardFaultAnalog
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CrashKind::RomWrite => "rom-write",
            CrashKind::UnmappedAccess => "unmapped-access",
            CrashKind::ExecOutsideRom => "exec-outside-rom",
            CrashKind::HardFaultAnalog => "hard-fault",
        }
    }
}

impl fmt::Display for CrashKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Ok,
    Crash { kind: CrashKind, pc: u32, addr: u32 },
    Hang,
}

impl Verdict {
    pub fn from_fault(f: Fault) -> Verdict {
        Verdict::Crash { kind: CrashKind::from_fault(f.kind), pc: f.pc, addr: f.addr }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Ok => f.write_str("ok"),
            Verdict::Hang => f.write_str("hang"),
            Verdict::Crash { kind, pc, addr } => write!(f, "crash {kind} pc={pc:#x} addr={addr:#010x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Attribution {
    T3Origin,
    /// Read by an interrupt handler and used outside it.
    IrqRead,
    HighFrequency,
    Manual,
}

impl fmt::Display for Attribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attribution::T3Origin => "t3",
            Attribution::IrqRead => "irq",
            Attribution::HighFrequency => "frequent",
            Attribution::Manual => "manual",
        })
    }
}

/// Registers whose reads deliver test-case bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataRegisters {
    pub regs: BTreeMap<u32, BTreeSet<Attribution>>,
    pub access_counts: BTreeMap<u32, u64>,
}

impl DataRegisters {
    pub fn identify(kb: &KnowledgeBase, threshold: u64, manual: &BTreeSet<u32>) -> DataRegisters {
        let mut d = DataRegisters::default();
        for (&a, &t) in kb.tiers() {
            if t == Tier::T3 {
                d.add(a, Attribution::T3Origin);
            }
        }
        for (&a, s) in &kb.stats.regs {
            d.access_counts.insert(a, s.reads);
            if s.irq_reads > 0 && s.irq_consumed > 0 {
                d.add(a, Attribution::IrqRead);
            }
            if s.reads > threshold {
                d.add(a, Attribution::HighFrequency);
            }
        }
        for &a in manual {
            d.add(a, Attribution::Manual);
        }
        d
    }

    fn add(&mut self, addr: u32, why: Attribution) {
        self.regs.entry(addr).or_default().insert(why);
    }

    pub fn contains(&self, addr: u32) -> bool {
        self.regs.contains_key(&addr)
    }

    pub fn is_empty(&self) -> bool {
        self.regs.is_empty()
    }

    pub fn addrs(&self) -> BTreeSet<u32> {
        self.regs.keys().copied().collect()
    }
}

impl fmt::Display for DataRegisters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .regs
            .iter()
            .map(|(a, w)| {
                let w: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                format!("{a:#010x}({})", w.join(","))
            })
            .collect();
        f.write_str(&parts.join(" "))
    }
}

/// Counters of one replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub hits: u64,
    pub misses: u64,
    /// Reads of registers the knowledge base has never seen.
    pub unknown: u64,
    pub data_reads: u64,
    /// Zero bytes served after the input ran out.
    pub pads: u64,
    pub consumed: usize,
}

impl ReplayStats {
    pub fn hit_rate(&self) -> f64 {
        let n = self.hits + self.misses;
        if n == 0 {
            1.0
        } else {
            self.hits as f64 / n as f64
        }
    }
}

/// A read the knowledge base could not answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MissPoint {
    pub addr: u32,
    pub pc: u32,
    /// Number of peripheral reads before this one.
    pub index: u64,
}

struct ReplayHooks<'a> {
    /// `None` answers every read with zero.
    kb: Option<&'a KnowledgeBase>,
    data: &'a BTreeSet<u32>,
    input: Option<&'a [u8]>,
    rng: ChaCha8Rng,
    reads: u64,
    stats: ReplayStats,
    first_miss: Option<MissPoint>,
    /// Bytes the knowledge base served to data registers, when no input is
    /// given.
    captured: Vec<u8>,
}

impl ReplayHooks<'_> {
    fn exhausted(&self) -> bool {
        self.input.is_some_and(|i| self.stats.consumed >= i.len())
    }

    fn take(&mut self, n: usize) -> u32 {
        let input = self.input.unwrap_or(&[]);
        let mut v = 0u32;
        for i in 0..n {
            match input.get(self.stats.consumed) {
                Some(&b) => {
                    v |= (b as u32) << (8 * i);
                    self.stats.consumed += 1;
                }
                None => {
                    self.stats.pads += 1;
                    break;
                }
            }
        }
        v
    }
}

impl EngineHooks for ReplayHooks<'_> {
    fn mmio_read(&mut self, st: &mut ExecState, addr: u32, width: Width) -> TaggedWord {
        let index = self.reads;
        self.reads += 1;
        if self.input.is_some() && self.data.contains(&addr) {
            self.stats.data_reads += 1;
            return TaggedWord::Concrete(self.take(width.bytes() as usize));
        }
        let Some(kb) = self.kb else {
            return TaggedWord::Concrete(0);
        };
        let pc = st.pc();
        let pos = {
            let c = st.read_counts.entry((addr, pc)).or_insert(0);
            *c += 1;
            *c - 1
        };
        let q = Query { addr, pc, ctx: current_context(st), pos, in_irq: st.in_handler() };
        let last = st.mmio_write_log.get(&addr).copied();
        let known = kb.recorded_tier(addr).is_some() || last.is_some();
        let rng = &mut self.rng;
        let v = match kb.lookup(&q, last, &mut |n| rng.gen_range(0..n)) {
            Lookup::Hit(v) => {
                if known {
                    self.stats.hits += 1;
                }
                v
            }
            Lookup::Miss | Lookup::Exhausted => {
                if known {
                    self.stats.misses += 1;
                } else {
                    self.stats.unknown += 1;
                }
                if self.first_miss.is_none() {
                    self.first_miss = Some(MissPoint { addr, pc, index });
                }
                0
            }
        };
        let v = match width {
            Width::Byte => v & 0xFF,
            Width::Word => v,
        };
        if self.data.contains(&addr) {
            self.captured.extend_from_slice(&v.to_le_bytes()[..width.bytes() as usize]);
        }
        TaggedWord::Concrete(v)
    }

    fn mmio_write(&mut self, _: &mut ExecState, _: u32, _: Width, _: u32) {}
}

/// Why a drive loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Halted,
    Fault(Fault),
    /// Input consumed and the firmware is back where it first read it.
    Quiescent,
    PadCap,
    BlockLimit,
    /// No new block for the idle window.
    Idle,
    /// A block that jumps to itself forever.
    SelfLoop,
    /// About to perform the read with the requested index.
    AtRead,
    /// About to read a data register.
    AtDataRead,
}

struct Control<'a> {
    markers: &'a BTreeSet<u32>,
    max_blocks: u64,
    idle_blocks: Option<u64>,
    fork: Option<(u32, &'a [Frame])>,
    stop_before_data_read: bool,
    stop_at_read: Option<u64>,
}

/// Address of the load at the pc, if the base register is concrete.
fn pending_load(st: &ExecState) -> Option<u32> {
    match st.fw.fetch(st.pc()) {
        Some(Ok(Instruction::Load { base, offset, .. })) => st.cpu.reg(base).concrete().map(|b| b.wrapping_add(offset)),
        _ => None,
    }
}

/// Call frames from the innermost interrupt entry, or the whole stack in
/// thread mode.
pub fn stack_signature(st: &ExecState) -> &[Frame] {
    let from = st.call_stack.iter().rposition(|f| matches!(f, Frame::Irq(_))).unwrap_or(0);
    &st.call_stack[from..]
}

fn is_self_loop(fw: &Firmware, start: u32) -> bool {
    matches!(fw.fetch(start), Some(Ok(Instruction::Jmp { target })) if target == start)
}

fn drive(st: &mut ExecState, hooks: &mut ReplayHooks, ctl: &Control, visit: &mut dyn FnMut(u32)) -> Stop {
    let mmio = |a: u32, st: &ExecState| st.fw.map.find(a).is_some_and(|r| r.kind == RegionKind::Mmio);
    let mut prev = st.pc();
    loop {
        let pc = st.pc();
        if ctl.markers.contains(&pc) {
            st.markers.insert(pc);
        }
        if ctl.stop_before_data_read || ctl.stop_at_read.is_some() || ctl.fork.is_some_and(|(p, _)| p == pc) {
            if let Some(a) = pending_load(st) {
                if ctl.stop_before_data_read && hooks.data.contains(&a) {
                    return Stop::AtDataRead;
                }
                if ctl.stop_at_read == Some(hooks.reads) && mmio(a, st) {
                    return Stop::AtRead;
                }
                if let Some((fpc, sig)) = ctl.fork {
                    if fpc == pc
                        && hooks.exhausted()
                        && hooks.stats.pads > 0
                        && hooks.data.contains(&a)
                        && stack_signature(st) == sig
                    {
                        return Stop::Quiescent;
                    }
                }
            }
        }
        if hooks.stats.pads > PAD_CAP {
            return Stop::PadCap;
        }
        match step(st, hooks) {
            StepOutcome::Continue { block_end: false } => {}
            StepOutcome::Continue { block_end: true } => {
                let start = st.block_start;
                visit(start);
                if st.pc() == start && is_self_loop(&st.fw, start) {
                    return Stop::SelfLoop;
                }
                st.finish_block();
                if st.blocks >= ctl.max_blocks {
                    return Stop::BlockLimit;
                }
                if ctl.idle_blocks.is_some_and(|n| st.blocks - st.last_new_block >= n) {
                    return Stop::Idle;
                }
                if let Some(n) = st.irq.tick(Phase::Analysis, st.in_handler()) {
                    if let Err(f) = enter_interrupt(st, n) {
                        return Stop::Fault(f);
                    }
                    st.irq_log.push((st.blocks, n));
                    st.block_start = st.pc();
                }
            }
            StepOutcome::Halted => return Stop::Halted,
            // Every value is concrete during replay.
            StepOutcome::BranchOnSymbol { .. } => unreachable!("symbolic branch during replay"),
            // a bad fetch is charged to the instruction that branched there
            StepOutcome::Fault(mut f) => {
                if f.pc == pc && f.addr == pc && matches!(f.kind, FaultKind::NotExecutable | FaultKind::Decode(_) | FaultKind::Unaligned) {
                    f.pc = prev;
                }
                return Stop::Fault(f);
            }
        }
        prev = pc;
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no data register is read before the firmware stops ({0:?})")]
    SnapshotUnavailable(Stop),
}

/// Outcome of a plain replay from reset.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub stop: Stop,
    pub verdict: Verdict,
    pub blocks: u64,
    pub markers: BTreeSet<u32>,
    pub stats: ReplayStats,
    pub irq_log: Vec<(u64, u8)>,
    pub first_miss: Option<MissPoint>,
    /// Bytes served to the registers in `data`, in read order.
    pub data_bytes: Vec<u8>,
}

fn verdict_of(stop: Stop) -> Verdict {
    match stop {
        Stop::Fault(f) => Verdict::from_fault(f),
        Stop::BlockLimit | Stop::SelfLoop => Verdict::Hang,
        _ => Verdict::Ok,
    }
}

fn input_seed(seed: u64, input: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in input {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    seed ^ h
}

fn analysis_state(fw: Arc<Firmware>, cfg: &FirmwareConfig) -> ExecState {
    let mut st = cfg.explore_config().initial_state(fw, KnowledgeBase::new());
    st.record_reads = false;
    st
}

/// Runs the firmware from reset answering every read from `kb`. Stops on
/// halt, fault, `max_blocks`, or when no new block was seen for the
/// configured termination window. Values served to `data` are collected.
/// Without a knowledge base every read returns zero.
pub fn replay(
    fw: Arc<Firmware>,
    kb: Option<&KnowledgeBase>,
    cfg: &FirmwareConfig,
    data: &BTreeSet<u32>,
    max_blocks: u64,
    seed: u64,
    visit: &mut dyn FnMut(u32),
) -> RunReport {
    let mut st = analysis_state(fw, cfg);
    let mut hooks = ReplayHooks {
        kb,
        data,
        input: None,
        rng: ChaCha8Rng::seed_from_u64(seed),
        reads: 0,
        stats: ReplayStats::default(),
        first_miss: None,
        captured: Vec::new(),
    };
    let ctl = Control {
        markers: &cfg.markers,
        max_blocks,
        idle_blocks: Some(cfg.detector.bb_term),
        fork: None,
        stop_before_data_read: false,
        stop_at_read: None,
    };
    let stop = drive(&mut st, &mut hooks, &ctl, visit);
    RunReport {
        stop,
        verdict: verdict_of(stop),
        blocks: st.blocks,
        markers: st.markers.clone(),
        stats: hooks.stats,
        irq_log: st.irq_log.clone(),
        first_miss: hooks.first_miss,
        data_bytes: hooks.captured,
    }
}

/// Result of one test case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestOutcome {
    pub verdict: Verdict,
    pub stop: Stop,
    pub stats: ReplayStats,
    pub blocks: u64,
    /// Where execution stopped.
    pub pc: u32,
    pub first_miss: Option<MissPoint>,
}

/// A fork-point snapshot with everything needed to run test cases.
#[derive(Debug, Clone)]
pub struct Session {
    pub cfg: FirmwareConfig,
    pub data: DataRegisters,
    data_set: BTreeSet<u32>,
    snapshot: ExecState,
    fork_pc: u32,
    fork_sig: Vec<Frame>,
    /// Blocks executed before the fork point, in order.
    pub prefix: Vec<u32>,
    pub seed: u64,
}

impl Session {
    /// Replays from reset up to the first data-register read.
    pub fn new(
        fw: Arc<Firmware>,
        kb: &KnowledgeBase,
        cfg: &FirmwareConfig,
        data: DataRegisters,
        seed: u64,
    ) -> Result<Session, AnalysisError> {
        let mut st = analysis_state(fw, cfg);
        let data_set = data.addrs();
        let mut hooks = ReplayHooks {
            kb: Some(kb),
            data: &data_set,
            input: Some(&[]),
            rng: ChaCha8Rng::seed_from_u64(seed),
            reads: 0,
            stats: ReplayStats::default(),
            first_miss: None,
            captured: Vec::new(),
        };
        let ctl = Control {
            markers: &cfg.markers,
            max_blocks: cfg.hang_blocks,
            idle_blocks: Some(cfg.detector.bb_term),
            fork: None,
            stop_before_data_read: true,
            stop_at_read: None,
        };
        let mut prefix = Vec::new();
        let stop = drive(&mut st, &mut hooks, &ctl, &mut |b| prefix.push(b));
        if stop != Stop::AtDataRead {
            return Err(AnalysisError::SnapshotUnavailable(stop));
        }
        st.read_counts.clear();
        st.block_counters.clear();
        st.irq_log.clear();
        st.markers.clear();
        let fork_pc = st.pc();
        let fork_sig = stack_signature(&st).to_vec();
        Ok(Session { cfg: cfg.clone(), data, data_set, snapshot: st, fork_pc, fork_sig, prefix, seed })
    }

    pub fn fork_pc(&self) -> u32 {
        self.fork_pc
    }

    pub fn snapshot(&self) -> &ExecState {
        &self.snapshot
    }

    fn hooks<'a>(&'a self, kb: &'a KnowledgeBase, input: &'a [u8]) -> ReplayHooks<'a> {
        ReplayHooks {
            kb: Some(kb),
            data: &self.data_set,
            input: Some(input),
            rng: ChaCha8Rng::seed_from_u64(input_seed(self.seed, input)),
            reads: 0,
            stats: ReplayStats::default(),
            first_miss: None,
            captured: Vec::new(),
        }
    }

    fn control(&self, stop_at_read: Option<u64>) -> Control<'_> {
        Control {
            markers: &self.cfg.markers,
            max_blocks: self.snapshot.blocks + self.cfg.hang_blocks,
            idle_blocks: None,
            fork: Some((self.fork_pc, &self.fork_sig)),
            stop_before_data_read: false,
            stop_at_read,
        }
    }

    /// Runs `input` from the fork point; `visit` sees the start address of
    /// every executed block.
    pub fn run_testcase(&self, kb: &KnowledgeBase, input: &[u8], visit: &mut dyn FnMut(u32)) -> TestOutcome {
        let mut st = self.snapshot.clone();
        let mut hooks = self.hooks(kb, input);
        let stop = drive(&mut st, &mut hooks, &self.control(None), visit);
        TestOutcome {
            verdict: verdict_of(stop),
            stop,
            stats: hooks.stats,
            blocks: st.blocks - self.snapshot.blocks,
            pc: st.pc(),
            first_miss: hooks.first_miss,
        }
    }

    /// Re-executes `input` up to the read `miss` and returns the state just
    /// before it, for reinforced learning.
    pub fn state_before(&self, kb: &KnowledgeBase, input: &[u8], miss: MissPoint) -> Option<ExecState> {
        let mut st = self.snapshot.clone();
        let mut hooks = self.hooks(kb, input);
        match drive(&mut st, &mut hooks, &self.control(Some(miss.index)), &mut |_| {}) {
            Stop::AtRead => Some(st),
            _ => None,
        }
    }
}
