//! Mutational fuzzing on top of KB-driven emulation.

pub mod coverage;
pub mod mutator;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{replay, CrashKind, DataRegisters, Session, TestOutcome, Verdict};
use crate::config::FirmwareConfig;
use crate::explorer::reinforced_learn;
use crate::firmware::Firmware;
use crate::kb::KnowledgeBase;
use coverage::{NewBits, TraceMap, VirginMap};

pub const DEFAULT_MAX_LEN: usize = 2048;
const DEFAULT_SEED_LEN: usize = 64;
const BITFLIP_BYTES: usize = 64;
const HAVOC_ROUNDS: usize = 256;

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub budget_execs: Option<u64>,
    pub budget_seconds: Option<u64>,
    pub rng_seed: u64,
    pub max_len: usize,
    /// Re-enter extraction when a read misses the knowledge base.
    pub reinforce: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig { budget_execs: None, budget_seconds: None, rng_seed: 0, max_len: DEFAULT_MAX_LEN, reinforce: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub input: Vec<u8>,
    pub found_at: u64,
    flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashRecord {
    pub input: Vec<u8>,
    pub kind: CrashKind,
    pub pc: u32,
    pub addr: u32,
    pub found_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HangRecord {
    pub input: Vec<u8>,
    pub pc: u32,
    pub found_at: u64,
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub execs: u64,
    pub elapsed: Duration,
    pub rng_seed: u64,
    pub fork_pc: Option<u32>,
    pub data_registers: DataRegisters,
    pub edges: usize,
    /// (execs, edges) each time the edge count grew.
    pub edge_history: Vec<(u64, usize)>,
    pub queue: Vec<QueueEntry>,
    pub crashes: Vec<CrashRecord>,
    pub hangs: Vec<HangRecord>,
    pub reinforced_rounds: u32,
    pub kb: KnowledgeBase,
}

impl Campaign {
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "execs: {}", self.execs);
        let _ = writeln!(s, "elapsed_ms: {}", self.elapsed.as_millis());
        let _ = writeln!(s, "rng_seed: {}", self.rng_seed);
        match self.fork_pc {
            Some(pc) => {
                let _ = writeln!(s, "fork_pc: {pc:#x}");
            }
            None => s.push_str("fork_pc: none\n"),
        }
        let _ = writeln!(s, "data_registers: {}", self.data_registers);
        let _ = writeln!(s, "edges: {}", self.edges);
        let _ = writeln!(s, "queue: {}", self.queue.len());
        let _ = writeln!(s, "unique_crashes: {}", self.crashes.len());
        let _ = writeln!(s, "unique_hangs: {}", self.hangs.len());
        let _ = writeln!(s, "reinforced_rounds: {}", self.reinforced_rounds);
        let _ = writeln!(s, "kb_entries: {}", self.kb.entries().len());
        for (i, c) in self.crashes.iter().enumerate() {
            let _ = writeln!(s, "crash {i}: {} pc={:#x} addr={:#010x} exec={}", c.kind, c.pc, c.addr, c.found_at);
        }
        for (i, h) in self.hangs.iter().enumerate() {
            let _ = writeln!(s, "hang {i}: pc={:#x} exec={}", h.pc, h.found_at);
        }
        let hist: Vec<String> = self.edge_history.iter().map(|(e, n)| format!("{e}:{n}")).collect();
        let _ = writeln!(s, "edge_history: {}", hist.join(" "));
        s
    }

    /// Writes `queue/`, `crashes/`, `hangs/` and `report.txt` under `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        for sub in ["queue", "crashes", "hangs"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        for (i, q) in self.queue.iter().enumerate() {
            fs::write(dir.join("queue").join(format!("id_{i:06}")), &q.input)?;
        }
        for (i, c) in self.crashes.iter().enumerate() {
            let name = format!("id_{i:06}_{}_pc{:x}", c.kind, c.pc);
            fs::write(dir.join("crashes").join(name), &c.input)?;
        }
        for (i, h) in self.hangs.iter().enumerate() {
            fs::write(dir.join("hangs").join(format!("id_{i:06}_pc{:x}", h.pc)), &h.input)?;
        }
        fs::write(dir.join("report.txt"), self.report())
    }
}

/// Reads every regular file in `dir` as a seed, in name order.
pub fn load_seeds(dir: &Path) -> std::io::Result<Vec<Vec<u8>>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths.iter().map(fs::read).collect()
}

/// Counts edges of a single all-zero-response run from reset.
pub fn stub_edges(fw: Arc<Firmware>, cfg: &FirmwareConfig) -> usize {
    let mut trace = TraceMap::new();
    replay(fw, None, cfg, &BTreeSet::new(), cfg.hang_blocks, 0, &mut |b| trace.visit(b));
    trace.edges()
}

struct Fuzzer<'a> {
    session: Session,
    kb: KnowledgeBase,
    cfg: &'a FirmwareConfig,
    fc: &'a FuzzConfig,
    trace: TraceMap,
    virgin: VirginMap,
    execs: u64,
    queue: Vec<QueueEntry>,
    crashes: Vec<CrashRecord>,
    crash_keys: HashSet<(u32, CrashKind)>,
    hangs: Vec<HangRecord>,
    hang_keys: HashSet<u32>,
    edge_history: Vec<(u64, usize)>,
    reinforced: BTreeSet<(u32, u32)>,
    rounds: u32,
    start: Instant,
}

impl Fuzzer<'_> {
    fn out_of_budget(&self) -> bool {
        if self.fc.budget_execs.is_some_and(|n| self.execs >= n) {
            return true;
        }
        self.fc.budget_seconds.is_some_and(|s| self.start.elapsed() >= Duration::from_secs(s))
    }

    fn run_once(&mut self, input: &[u8]) -> TestOutcome {
        self.trace.clear();
        for &b in &self.session.prefix {
            self.trace.visit(b);
        }
        let trace = &mut self.trace;
        self.session.run_testcase(&self.kb, input, &mut |b| trace.visit(b))
    }

    /// Runs `input` once, with one retry after reinforced learning on a
    /// knowledge-base miss.
    fn exec(&mut self, input: &[u8]) -> (TestOutcome, NewBits) {
        self.execs += 1;
        let mut out = self.run_once(input);
        if let Some(m) = out.first_miss.filter(|_| self.fc.reinforce) {
            if self.reinforced.insert((m.addr, m.pc)) {
                if let Some(st) = self.session.state_before(&self.kb, input, m) {
                    self.rounds += 1;
                    let ecfg = self.cfg.explore_config();
                    match reinforced_learn(self.kb.clone(), st, self.rounds + 1, &ecfg) {
                        Ok(r) => {
                            info!("reinforced learning at {:#010x} pc {:#x}: {} entries", m.addr, m.pc, r.kb.entries().len());
                            self.kb = r.kb;
                            out = self.run_once(input);
                        }
                        Err(e) => warn!("reinforced learning at pc {:#x} failed: {e}", m.pc),
                    }
                }
            }
        }
        self.trace.classify();
        let nb = self.virgin.merge(&self.trace);
        if nb == NewBits::Edges {
            self.edge_history.push((self.execs, self.virgin.edges()));
        }
        match out.verdict {
            Verdict::Crash { kind, pc, addr } => {
                if self.crash_keys.insert((pc, kind)) {
                    info!("crash {kind} at pc {pc:#x} after {} execs", self.execs);
                    self.crashes.push(CrashRecord { input: input.to_vec(), kind, pc, addr, found_at: self.execs });
                }
            }
            Verdict::Hang => {
                if self.hang_keys.insert(out.pc) {
                    debug!("hang at pc {:#x} after {} execs", out.pc, self.execs);
                    self.hangs.push(HangRecord { input: input.to_vec(), pc: out.pc, found_at: self.execs });
                }
            }
            Verdict::Ok => {
                if nb != NewBits::None {
                    self.queue.push(QueueEntry { input: input.to_vec(), found_at: self.execs, flipped: false });
                }
            }
        }
        (out, nb)
    }

    fn run(&mut self, seeds: Vec<Vec<u8>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.fc.rng_seed);
        for s in seeds {
            if self.out_of_budget() {
                return;
            }
            let s: Vec<u8> = s.into_iter().take(self.fc.max_len).collect();
            let (out, nb) = self.exec(&s);
            if out.verdict == Verdict::Ok && nb == NewBits::None {
                self.queue.push(QueueEntry { input: s, found_at: self.execs, flipped: false });
            }
        }
        if self.queue.is_empty() {
            self.queue.push(QueueEntry { input: vec![0; 4], found_at: 0, flipped: false });
        }
        let mut cur = 0;
        while !self.out_of_budget() {
            let entry = self.queue[cur].clone();
            if !entry.flipped {
                self.queue[cur].flipped = true;
                for v in mutator::bitflips(&entry.input, BITFLIP_BYTES) {
                    if self.out_of_budget() {
                        return;
                    }
                    self.exec(&v);
                }
            }
            for _ in 0..HAVOC_ROUNDS {
                if self.out_of_budget() {
                    return;
                }
                let v = mutator::havoc(&entry.input, &mut rng, self.fc.max_len);
                self.exec(&v);
            }
            cur = (cur + 1) % self.queue.len();
            if cur == 0 && rng.gen_bool(0.5) {
                // favour recent discoveries between cycles
                cur = rng.gen_range(0..self.queue.len());
            }
        }
    }
}

/// Seeds used when none are given: the bytes the knowledge base itself
/// serves to the data registers on a replay from reset, and four zeros.
pub fn default_seeds(fw: Arc<Firmware>, kb: &KnowledgeBase, cfg: &FirmwareConfig, data: &DataRegisters) -> Vec<Vec<u8>> {
    let r = replay(fw, Some(kb), cfg, &data.addrs(), cfg.hang_blocks, 0, &mut |_| {});
    let mut seeds = Vec::new();
    if !r.data_bytes.is_empty() {
        seeds.push(r.data_bytes.into_iter().take(DEFAULT_SEED_LEN).collect());
    }
    seeds.push(vec![0; 4]);
    seeds
}

/// Runs a campaign. Without any data register there is nothing to feed
/// test cases into and the campaign is a single replay.
pub fn fuzz_loop(
    fw: Arc<Firmware>,
    kb: KnowledgeBase,
    cfg: &FirmwareConfig,
    seeds: Vec<Vec<u8>>,
    fc: &FuzzConfig,
) -> Campaign {
    let start = Instant::now();
    let data = DataRegisters::identify(&kb, cfg.data_threshold, &cfg.extra_data_registers);
    info!("data registers: {data}");
    let session = match Session::new(fw.clone(), &kb, cfg, data.clone(), fc.rng_seed) {
        Ok(s) => s,
        Err(e) => {
            warn!("{e}; replaying once");
            return single_replay(fw, kb, cfg, data, fc, start);
        }
    };
    info!("fork point at pc {:#x}", session.fork_pc());
    let seeds = if seeds.is_empty() { default_seeds(fw, &kb, cfg, &data) } else { seeds };
    let mut f = Fuzzer {
        session,
        kb,
        cfg,
        fc,
        trace: TraceMap::new(),
        virgin: VirginMap::new(),
        execs: 0,
        queue: Vec::new(),
        crashes: Vec::new(),
        crash_keys: HashSet::new(),
        hangs: Vec::new(),
        hang_keys: HashSet::new(),
        edge_history: Vec::new(),
        reinforced: BTreeSet::new(),
        rounds: 0,
        start,
    };
    f.run(seeds);
    Campaign {
        execs: f.execs,
        elapsed: start.elapsed(),
        rng_seed: fc.rng_seed,
        fork_pc: Some(f.session.fork_pc()),
        data_registers: data,
        edges: f.virgin.edges(),
        edge_history: f.edge_history,
        queue: f.queue,
        crashes: f.crashes,
        hangs: f.hangs,
        reinforced_rounds: f.rounds,
        kb: f.kb,
    }
}

fn single_replay(
    fw: Arc<Firmware>,
    kb: KnowledgeBase,
    cfg: &FirmwareConfig,
    data: DataRegisters,
    fc: &FuzzConfig,
    start: Instant,
) -> Campaign {
    let mut trace = TraceMap::new();
    let r = replay(fw, Some(&kb), cfg, &BTreeSet::new(), cfg.hang_blocks, fc.rng_seed, &mut |b| trace.visit(b));
    trace.classify();
    let mut virgin = VirginMap::new();
    virgin.merge(&trace);
    let mut crashes = Vec::new();
    let mut hangs = Vec::new();
    match r.verdict {
        Verdict::Crash { kind, pc, addr } => crashes.push(CrashRecord { input: Vec::new(), kind, pc, addr, found_at: 1 }),
        Verdict::Hang => hangs.push(HangRecord { input: Vec::new(), pc: 0, found_at: 1 }),
        Verdict::Ok => {}
    }
    Campaign {
        execs: 1,
        elapsed: start.elapsed(),
        rng_seed: fc.rng_seed,
        fork_pc: None,
        data_registers: data,
        edges: virgin.edges(),
        edge_history: vec![(1, virgin.edges())],
        queue: Vec::new(),
        crashes,
        hangs,
        reinforced_rounds: 0,
        kb,
    }
}
