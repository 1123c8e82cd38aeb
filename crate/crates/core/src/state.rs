//! Concolic machine state: tagged registers, RAM with a symbolic byte shadow,
//! path constraints with an incrementally maintained model, and the
//! per-path bookkeeping the explorer and detectors need.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::expr::{Assignment, BinOp, Expr, Node, SymId, SymOrigin, UnOp};
use crate::firmware::Firmware;
use crate::invalidity::LoopTracker;
use crate::irq::{Intervals, IrqController};
use crate::isa::Reg;
use crate::kb::KnowledgeBase;
use crate::solver::{solve_with_hints, SolveError, SolveResult, DEFAULT_CONFLICT_BUDGET};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaggedWord {
    Concrete(u32),
    Symbolic(Expr),
}

impl TaggedWord {
    /// Wraps an expression, unwrapping constants.
    pub fn from_expr(e: Expr) -> TaggedWord {
        debug_assert_eq!(e.width(), 32);
        match e.as_const() {
            Some(v) => TaggedWord::Concrete(v),
            None => TaggedWord::Symbolic(e),
        }
    }

    pub fn to_expr(&self) -> Expr {
        match self {
            TaggedWord::Concrete(v) => Expr::constant(32, *v),
            TaggedWord::Symbolic(e) => e.clone(),
        }
    }

    pub fn concrete(&self) -> Option<u32> {
        match self {
            TaggedWord::Concrete(v) => Some(*v),
            TaggedWord::Symbolic(_) => None,
        }
    }

    pub fn is_symbolic(&self) -> bool {
        matches!(self, TaggedWord::Symbolic(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Thread,
    Handler(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpuState {
    pub regs: [TaggedWord; 16],
    pub mode: Mode,
}

impl CpuState {
    pub fn new(sp: u32, pc: u32) -> CpuState {
        let mut regs: [TaggedWord; 16] = std::array::from_fn(|_| TaggedWord::Concrete(0));
        regs[Reg::SP.index()] = TaggedWord::Concrete(sp);
        regs[Reg::PC.index()] = TaggedWord::Concrete(pc);
        CpuState { regs, mode: Mode::Thread }
    }

    pub fn pc(&self) -> u32 {
        self.regs[15].concrete().expect("pc is always concrete")
    }

    pub fn set_pc(&mut self, pc: u32) {
        self.regs[15] = TaggedWord::Concrete(pc);
    }

    pub fn reg(&self, r: Reg) -> &TaggedWord {
        &self.regs[r.index()]
    }

    pub fn any_symbolic(&self) -> bool {
        self.regs[..15].iter().any(TaggedWord::is_symbolic)
    }
}

/// One entry of the shadow call stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    Call(u32),
    Irq(u8),
}

const MAX_FRAMES: usize = 256;
const PAGE: usize = 1024;

/// RAM contents, paged and shared between forked states until written.
/// Bytes holding symbolic data live in `shadow`; the concrete array holds
/// zero at those positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ram {
    pub base: u32,
    size: usize,
    pages: Vec<Arc<[u8; PAGE]>>,
    shadow: BTreeMap<u32, Expr>,
}

impl Ram {
    pub fn new(base: u32, size: u32) -> Ram {
        let size = size as usize;
        let zero = Arc::new([0u8; PAGE]);
        Ram { base, size, pages: vec![zero; size.div_ceil(PAGE)], shadow: BTreeMap::new() }
    }

    pub fn bytes(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.pages.iter().flat_map(|p| p.iter().copied()).collect();
        v.truncate(self.size);
        v
    }

    fn get(&self, o: usize) -> u8 {
        self.pages[o / PAGE][o % PAGE]
    }

    fn set(&mut self, o: usize, v: u8) {
        let p = &mut self.pages[o / PAGE];
        if p[o % PAGE] != v {
            Arc::make_mut(p)[o % PAGE] = v;
        }
    }

    pub fn has_shadow(&self) -> bool {
        !self.shadow.is_empty()
    }

    fn off(&self, addr: u32) -> usize {
        (addr - self.base) as usize
    }

    pub fn read_byte(&self, addr: u32) -> TaggedWord {
        if let Some(e) = self.shadow.get(&addr) {
            return TaggedWord::Symbolic(e.zext(32));
        }
        TaggedWord::Concrete(self.get(self.off(addr)) as u32)
    }

    pub fn read_word(&self, addr: u32) -> TaggedWord {
        let o = self.off(addr);
        if self.shadow.is_empty() || self.shadow.range(addr..addr + 4).next().is_none() {
            let b = [self.get(o), self.get(o + 1), self.get(o + 2), self.get(o + 3)];
            return TaggedWord::Concrete(u32::from_le_bytes(b));
        }
        let bytes: Vec<Expr> = (0..4)
            .map(|k| match self.shadow.get(&(addr + k)) {
                Some(e) => e.clone(),
                None => Expr::constant(8, self.get(o + k as usize) as u32),
            })
            .collect();
        TaggedWord::from_expr(assemble_word(&bytes))
    }

    pub fn write_byte(&mut self, addr: u32, v: &TaggedWord) {
        let o = self.off(addr);
        match v {
            TaggedWord::Concrete(c) => {
                self.set(o, *c as u8);
                if !self.shadow.is_empty() {
                    self.shadow.remove(&addr);
                }
            }
            TaggedWord::Symbolic(e) => {
                let b = e.extract(7, 0);
                match b.as_const() {
                    Some(c) => {
                        self.set(o, c as u8);
                        self.shadow.remove(&addr);
                    }
                    None => {
                        self.set(o, 0);
                        self.shadow.insert(addr, b);
                    }
                }
            }
        }
    }

    pub fn write_word(&mut self, addr: u32, v: &TaggedWord) {
        match v {
            TaggedWord::Concrete(c) => {
                let o = self.off(addr);
                for (k, b) in c.to_le_bytes().into_iter().enumerate() {
                    self.set(o + k, b);
                }
                if !self.shadow.is_empty() {
                    for k in 0..4 {
                        self.shadow.remove(&(addr + k));
                    }
                }
            }
            TaggedWord::Symbolic(e) => {
                for k in 0..4u32 {
                    let b = e.extract((8 * k + 7) as u8, (8 * k) as u8);
                    self.write_byte(addr + k, &TaggedWord::from_expr(b.zext(32)));
                }
            }
        }
    }

    /// Symbols referenced by shadow bytes.
    pub fn symbols(&self) -> BTreeSet<SymId> {
        self.shadow.values().flat_map(|e| e.symbols().iter().copied()).collect()
    }

    /// Replaces every shadow byte with its value under `a` where `a` covers
    /// all of the byte's symbols.
    pub fn concretize_with(&mut self, a: &Assignment) {
        let keys: Vec<u32> = self.shadow.keys().copied().collect();
        for k in keys {
            if let Ok(v) = self.shadow[&k].eval(a) {
                let o = self.off(k);
                self.set(o, v as u8);
                self.shadow.remove(&k);
            }
        }
    }
}

/// Rebuilds a little-endian word from four byte expressions, recognising
/// bytes that were split off the same word.
fn assemble_word(bytes: &[Expr]) -> Expr {
    let mut whole: Option<Expr> = None;
    let mut matches = true;
    for (k, b) in bytes.iter().enumerate() {
        let ok = match b.node() {
            Node::Un { op: UnOp::Extract(hi, lo), arg }
                if *lo as usize == 8 * k && *hi as usize == 8 * k + 7 && arg.width() == 32 =>
            {
                match &whole {
                    None => {
                        whole = Some(arg.clone());
                        true
                    }
                    Some(w) => w == arg,
                }
            }
            _ => false,
        };
        if !ok {
            matches = false;
            break;
        }
    }
    if matches {
        if let Some(w) = whole {
            return w;
        }
    }
    let mut acc = bytes[0].zext(32);
    for (k, b) in bytes.iter().enumerate().skip(1) {
        let part = Expr::binop(BinOp::Shl, &b.zext(32), &Expr::constant(32, 8 * k as u32));
        acc = Expr::binop(BinOp::Or, &acc, &part);
    }
    acc
}

/// One peripheral read observed during extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadRecord {
    pub addr: u32,
    pub pc: u32,
    pub ctx: u64,
    /// Ordinal of this read among reads of the same (addr, pc) on this path.
    pub pos: u32,
    pub in_irq: bool,
    pub width: u8,
    pub sym: Option<SymId>,
    /// Concrete value if the read was served concretely, or the model value
    /// frozen when its symbol was garbage collected.
    pub value: Option<u32>,
    /// Cached value suggested by the knowledge base at read time.
    pub hint: Option<u32>,
}

const LOG_CHUNK: usize = 256;

/// Append-only read log whose full chunks are shared between forks.
#[derive(Debug, Clone, Default)]
pub struct ReadLog {
    chunks: Vec<Arc<Vec<ReadRecord>>>,
    len: usize,
}

impl ReadLog {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, r: ReadRecord) {
        if self.len % LOG_CHUNK == 0 {
            self.chunks.push(Arc::new(Vec::with_capacity(LOG_CHUNK)));
        }
        Arc::make_mut(self.chunks.last_mut().expect("chunk")).push(r);
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> Option<&ReadRecord> {
        self.chunks.get(i / LOG_CHUNK).and_then(|c| c.get(i % LOG_CHUNK))
    }

    fn get_mut(&mut self, i: usize) -> &mut ReadRecord {
        &mut Arc::make_mut(&mut self.chunks[i / LOG_CHUNK])[i % LOG_CHUNK]
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &ReadRecord> {
        self.chunks.iter().flat_map(|c| c.iter())
    }
}

impl std::ops::Index<usize> for ReadLog {
    type Output = ReadRecord;
    fn index(&self, i: usize) -> &ReadRecord {
        self.get(i).expect("read index in range")
    }
}

static NEXT_STATE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_state_id() -> u64 {
    NEXT_STATE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct ExecState {
    pub id: u64,
    pub parent: Option<u64>,
    pub fw: Arc<Firmware>,
    pub cpu: CpuState,
    pub ram: Ram,
    pub mmio_write_log: BTreeMap<u32, u32>,
    pub constraints: Vec<Expr>,
    pub model: Assignment,
    pub kb: KnowledgeBase,
    pub cf_history: VecDeque<u32>,
    history_cap: usize,
    pub block_counters: HashMap<u32, u64>,
    pub block_start: u32,
    pub blocks: u64,
    pub last_new_block: u64,
    pub irq: IrqController,
    pub call_stack: Vec<Frame>,
    pub reads: ReadLog,
    sym_reads: HashMap<SymId, usize>,
    /// Reads so far per (addr, pc); doubles as the replay cursor.
    pub read_counts: HashMap<(u32, u32), u32>,
    pub record_reads: bool,
    next_sym: SymId,
    pub loops: LoopTracker,
    pub conflict_budget: u64,
    pub solver_calls: u64,
    /// Set when the last instruction ended a block whose bookkeeping has
    /// not run yet, e.g. on a freshly forked child.
    pub pending_block_end: bool,
    pub markers: BTreeSet<u32>,
    /// (block index, irq) for every delivered interrupt.
    pub irq_log: Vec<(u64, u8)>,
}

impl ExecState {
    pub fn new(fw: Arc<Firmware>, intervals: Intervals, history_cap: usize) -> ExecState {
        let ram_region = *fw.map.ram();
        let entry = fw.reset_vector();
        let cpu = CpuState::new(fw.initial_sp(), entry);
        let allowed = (0..32u8).filter(|&n| fw.irq_vector(n).is_some()).fold(0u32, |m, n| m | 1 << n);
        ExecState {
            id: fresh_state_id(),
            parent: None,
            cpu,
            ram: Ram::new(ram_region.base, ram_region.size),
            mmio_write_log: BTreeMap::new(),
            constraints: Vec::new(),
            model: Assignment::new(),
            kb: KnowledgeBase::default(),
            cf_history: VecDeque::with_capacity(history_cap),
            history_cap: history_cap.max(4),
            block_counters: HashMap::new(),
            block_start: entry,
            blocks: 0,
            last_new_block: 0,
            irq: IrqController::new(intervals, allowed),
            call_stack: Vec::new(),
            reads: ReadLog::default(),
            sym_reads: HashMap::new(),
            read_counts: HashMap::new(),
            record_reads: true,
            next_sym: 0,
            loops: LoopTracker::default(),
            conflict_budget: DEFAULT_CONFLICT_BUDGET,
            solver_calls: 0,
            pending_block_end: false,
            markers: BTreeSet::new(),
            irq_log: Vec::new(),
            fw,
        }
    }

    pub fn pc(&self) -> u32 {
        self.cpu.pc()
    }

    pub fn in_handler(&self) -> bool {
        matches!(self.cpu.mode, Mode::Handler(_))
    }

    pub fn push_frame(&mut self, f: Frame) {
        if self.call_stack.len() >= MAX_FRAMES {
            self.call_stack.remove(0);
        }
        self.call_stack.push(f);
    }

    /// Allocates a fresh symbol for a peripheral read and logs the read.
    pub fn new_symbol(&mut self, addr: u32, pc: u32, width: u8, ctx: u64, hint: Option<u32>) -> Expr {
        let id = self.next_sym;
        self.next_sym += 1;
        let e = Expr::sym(id, width, SymOrigin { addr, pc, seq: id });
        self.model.insert(id, hint.unwrap_or(0) & crate::expr::mask(width));
        self.log_read(addr, pc, width, ctx, Some(id), None, hint);
        e
    }

    /// Logs a read served concretely.
    pub fn log_concrete_read(&mut self, addr: u32, pc: u32, width: u8, ctx: u64, value: u32) {
        self.log_read(addr, pc, width, ctx, None, Some(value), Some(value));
    }

    #[allow(clippy::too_many_arguments)]
    fn log_read(
        &mut self,
        addr: u32,
        pc: u32,
        width: u8,
        ctx: u64,
        sym: Option<SymId>,
        value: Option<u32>,
        hint: Option<u32>,
    ) {
        let pos = {
            let c = self.read_counts.entry((addr, pc)).or_insert(0);
            *c += 1;
            *c - 1
        };
        if !self.record_reads {
            return;
        }
        let rec = ReadRecord { addr, pc, ctx, pos, in_irq: self.in_handler(), width, sym, value, hint };
        if let Some(id) = sym {
            self.sym_reads.insert(id, self.reads.len());
        }
        self.reads.push(rec);
    }

    pub fn read_of(&self, sym: SymId) -> Option<&ReadRecord> {
        self.sym_reads.get(&sym).map(|&i| &self.reads[i])
    }

    /// Value of a logged read under the current model.
    pub fn read_value(&self, r: &ReadRecord) -> Option<u32> {
        r.value.or_else(|| r.sym.and_then(|s| self.model.get(s)))
    }

    pub fn concretize(&self, e: &Expr) -> u32 {
        e.eval(&self.model).expect("model covers every live symbol")
    }

    /// Concretizes `e` and pins it to that value.
    pub fn pin(&mut self, e: &Expr) -> u32 {
        let v = self.concretize(e);
        if e.is_symbolic() {
            let c = Expr::binop(BinOp::Eq, e, &Expr::constant(e.width(), v));
            self.constraints.push(c);
        }
        v
    }

    /// Adds `c` to the path condition if the result stays satisfiable,
    /// repairing the model by re-solving the constraints connected to `c`.
    pub fn assume(&mut self, c: &Expr) -> Result<bool, SolveError> {
        self.assume_hinted(c, &[])
    }

    /// Like [`ExecState::assume`], preferring a model in which the given
    /// symbols take the hinted values.
    pub fn assume_hinted(&mut self, c: &Expr, hints: &[(SymId, u32)]) -> Result<bool, SolveError> {
        if let Some(v) = c.as_const() {
            return Ok(v == 1);
        }
        if hints.is_empty() && c.eval(&self.model) == Ok(1) {
            self.constraints.push(c.clone());
            return Ok(true);
        }
        let mut cand = self.model.clone();
        for &(id, v) in hints {
            if cand.contains(id) {
                cand.insert(id, v);
            }
        }
        let slice = self.connected(c);
        if slice.iter().all(|k| k.eval(&cand) == Ok(1)) {
            self.model = cand;
            self.constraints.push(c.clone());
            return Ok(true);
        }
        self.solver_calls += 1;
        match solve_with_hints(&slice, &cand, self.conflict_budget)? {
            SolveResult::Unsat => Ok(false),
            SolveResult::Sat(a) => {
                for (id, v) in a.iter() {
                    cand.insert(id, v);
                }
                self.model = cand;
                self.constraints.push(c.clone());
                Ok(true)
            }
        }
    }

    /// Validates the most recent constraint, repairing the model; false when
    /// the path is infeasible.
    pub fn check_last(&mut self) -> Result<bool, SolveError> {
        self.check_last_hinted(&[])
    }

    pub fn check_last_hinted(&mut self, hints: &[(SymId, u32)]) -> Result<bool, SolveError> {
        let c = self.constraints.pop().expect("a pending constraint");
        self.assume_hinted(&c, hints)
    }

    /// `c` together with every constraint transitively sharing a symbol.
    fn connected(&self, c: &Expr) -> Vec<Expr> {
        let mut syms: BTreeSet<SymId> = c.symbols().iter().copied().collect();
        let mut taken = vec![false; self.constraints.len()];
        loop {
            let mut grew = false;
            for (i, k) in self.constraints.iter().enumerate() {
                if !taken[i] && k.symbols().iter().any(|s| syms.contains(s)) {
                    taken[i] = true;
                    grew = true;
                    syms.extend(k.symbols().iter().copied());
                }
            }
            if !grew {
                break;
            }
        }
        let mut out: Vec<Expr> = self
            .constraints
            .iter()
            .zip(&taken)
            .filter(|(_, t)| **t)
            .map(|(k, _)| k.clone())
            .collect();
        out.push(c.clone());
        out
    }

    /// Materializes both sides of a symbolic branch. The children carry the
    /// new constraint unchecked as their last element; call
    /// [`ExecState::check_last`] before stepping them.
    pub fn fork(&self, cond: &Expr, true_target: u32, false_target: u32) -> (ExecState, ExecState) {
        let mut taken = self.clone();
        let mut other = self.clone();
        taken.id = fresh_state_id();
        other.id = fresh_state_id();
        taken.parent = Some(self.id);
        other.parent = Some(self.id);
        taken.constraints.push(cond.clone());
        other.constraints.push(cond.negate());
        taken.cpu.set_pc(true_target);
        other.cpu.set_pc(false_target);
        (taken, other)
    }

    /// Symbols still reachable from registers or RAM.
    pub fn live_symbols(&self) -> BTreeSet<SymId> {
        let mut live = self.ram.symbols();
        for r in &self.cpu.regs {
            if let TaggedWord::Symbolic(e) = r {
                live.extend(e.symbols().iter().copied());
            }
        }
        live
    }

    /// Drops constraints not connected to any live symbol and freezes the
    /// values of symbols that are no longer referenced.
    pub fn gc(&mut self) {
        if self.model.is_empty() {
            return;
        }
        let live = self.live_symbols();
        let mut keep_syms = live.clone();
        let mut keep = vec![false; self.constraints.len()];
        loop {
            let mut grew = false;
            for (i, c) in self.constraints.iter().enumerate() {
                if !keep[i] && c.symbols().iter().any(|s| keep_syms.contains(s)) {
                    keep[i] = true;
                    grew = true;
                    keep_syms.extend(c.symbols().iter().copied());
                }
            }
            if !grew {
                break;
            }
        }
        let mut i = 0;
        self.constraints.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        let dead: Vec<SymId> = self.model.iter().map(|(k, _)| k).filter(|k| !keep_syms.contains(k)).collect();
        for id in dead {
            let v = self.model.get(id);
            if let Some(&idx) = self.sym_reads.get(&id) {
                self.reads.get_mut(idx).value = v;
            }
            self.model.remove(id);
        }
    }

    /// Records the end of a block that started at `self.block_start`;
    /// returns true if it was the first visit.
    pub fn finish_block(&mut self) -> bool {
        let start = self.block_start;
        if self.cf_history.len() == self.history_cap {
            self.cf_history.pop_front();
        }
        self.cf_history.push_back(start);
        self.blocks += 1;
        let c = self.block_counters.entry(start).or_insert(0);
        *c += 1;
        let first = *c == 1;
        if first {
            self.last_new_block = self.blocks;
        }
        self.block_start = self.pc();
        first
    }

    /// Fresh identity for a state derived by means other than `fork`.
    pub fn renumber(&mut self) {
        self.parent = Some(self.id);
        self.id = fresh_state_id();
    }
}
