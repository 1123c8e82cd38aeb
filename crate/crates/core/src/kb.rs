//! Tiered knowledge base of peripheral responses.
//!
//! Each register has one active tier. T0 answers with the last value the
//! firmware wrote, T1 keys on the read PC, T2 additionally on the calling
//! context and T3 replays an ordered array per PC.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::state::ReadRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    T0,
    T1,
    T2,
    T3,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            Tier::T0 => 0,
            Tier::T1 => 1,
            Tier::T2 => 2,
            Tier::T3 => 3,
        };
        write!(f, "T{n}")
    }
}

impl FromStr for Tier {
    type Err = ();
    fn from_str(s: &str) -> Result<Tier, ()> {
        match s {
            "T0" => Ok(Tier::T0),
            "T1" => Ok(Tier::T1),
            "T2" => Ok(Tier::T2),
            "T3" => Ok(Tier::T3),
            _ => Err(()),
        }
    }
}

/// Calling context of a T2 entry. `Any` is used for entries whose original
/// context could not be recovered; it matches only when no entry for the
/// specific context exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ctx {
    Hash(u64),
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub tier: Tier,
    pub addr: u32,
    pub pc: u32,
    pub ctx: Option<Ctx>,
    pub values: Vec<u32>,
    /// Learned in interrupt context; may hold several values.
    pub irq: bool,
}

impl fmt::Display for CacheEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_0x{:08x}_0x{:x}_", self.tier, self.addr, self.pc)?;
        match (self.tier, self.ctx) {
            (Tier::T2, Some(Ctx::Hash(h))) => write!(f, "0x{h:016x}_")?,
            (Tier::T2, _) => write!(f, "*_")?,
            (Tier::T3, _) => write!(f, "null_")?,
            _ => write!(f, "NULL_")?,
        }
        let list = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            write!(f, "{{")?;
            for (i, v) in self.values.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "0x{v:02x}")?;
            }
            write!(f, "}}")
        };
        if self.tier == Tier::T3 || self.irq {
            list(f)
        } else {
            write!(f, "0x{:02x}", self.values[0])
        }
    }
}

fn parse_hex(s: &str) -> Option<u64> {
    let h = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X"))?;
    if h.is_empty() {
        return None;
    }
    u64::from_str_radix(h, 16).ok()
}

fn parse_u32(s: &str) -> Option<u32> {
    parse_hex(s).and_then(|v| u32::try_from(v).ok())
}

impl FromStr for CacheEntry {
    type Err = String;

    fn from_str(s: &str) -> Result<CacheEntry, String> {
        let parts: Vec<&str> = s.splitn(5, '_').collect();
        if parts.len() != 5 {
            return Err(format!("expected 5 fields, found {}", parts.len()));
        }
        let tier: Tier = parts[0].parse().map_err(|_| format!("bad tier `{}`", parts[0]))?;
        if tier == Tier::T0 {
            return Err("T0 responses are not stored".into());
        }
        let addr = parse_u32(parts[1]).ok_or_else(|| format!("bad address `{}`", parts[1]))?;
        let pc = parse_u32(parts[2]).ok_or_else(|| format!("bad pc `{}`", parts[2]))?;
        let ctx = match (tier, parts[3]) {
            (Tier::T2, "*") => Some(Ctx::Any),
            (Tier::T2, c) => Some(Ctx::Hash(parse_hex(c).ok_or_else(|| format!("bad context `{c}`"))?)),
            (Tier::T1, "NULL") | (Tier::T3, "null") => None,
            (_, c) => return Err(format!("unexpected context field `{c}`")),
        };
        let v = parts[4];
        let (values, braced) = match v.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(inner) => {
                let vals: Option<Vec<u32>> = inner.split(',').map(|x| parse_u32(x.trim())).collect();
                (vals.ok_or_else(|| format!("bad value list `{v}`"))?, true)
            }
            None => (vec![parse_u32(v).ok_or_else(|| format!("bad value `{v}`"))?], false),
        };
        if values.is_empty() {
            return Err("empty value list".into());
        }
        if tier == Tier::T3 && !braced {
            return Err("T3 values must be a braced list".into());
        }
        let irq = braced && tier != Tier::T3;
        Ok(CacheEntry { tier, addr, pc, ctx, values, irq })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Slot {
    values: Vec<u32>,
    irq: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegStats {
    pub reads: u64,
    pub irq_reads: u64,
    /// Handler-mode reads whose value later steered a thread-mode branch.
    pub irq_consumed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KbStats {
    pub hits: u64,
    pub misses: u64,
    pub upgrades: u64,
    pub regs: BTreeMap<u32, RegStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit(u32),
    Miss,
    /// A replay array ran out of values.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateResult {
    Inserted,
    Confirmed,
    /// An interrupt-context entry gained another value.
    Appended,
    /// A replay position was rewritten.
    Replaced,
    Upgraded(Tier, Tier),
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("knowledge base was built for firmware {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("conflicting replay value for {addr:#010x} at pc {pc:#x}, position {pos}")]
    TierOverflow { addr: u32, pc: u32, pos: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a read happened, for lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub addr: u32,
    pub pc: u32,
    pub ctx: u64,
    pub pos: u32,
    pub in_irq: bool,
}

impl From<&ReadRecord> for Query {
    fn from(r: &ReadRecord) -> Query {
        Query { addr: r.addr, pc: r.pc, ctx: r.ctx, pos: r.pos, in_irq: r.in_irq }
    }
}

type Key = (u32, u32, Option<Ctx>);

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    tiers: BTreeMap<u32, Tier>,
    entries: BTreeMap<Key, Slot>,
    pub stats: KbStats,
    pub digest: Option<String>,
    confirmed: BTreeSet<(u32, u32, u32)>,
}

impl PartialEq for KnowledgeBase {
    fn eq(&self, other: &Self) -> bool {
        self.tiers == other.tiers
            && self.entries == other.entries
            && self.stats == other.stats
            && self.digest == other.digest
    }
}

impl Eq for KnowledgeBase {}

pub const FILE_MAGIC: &str = "# kbfile v1";

/// Digest identifying a firmware image together with its configuration.
pub fn firmware_digest(image: &[u8], config: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update((image.len() as u64).to_le_bytes());
    h.update(image);
    h.update(config);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl KnowledgeBase {
    pub fn new() -> KnowledgeBase {
        KnowledgeBase::default()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.tiers.is_empty()
    }

    /// Tier in force for `addr`; unseen registers start at T0 when the
    /// firmware has written them and at T1 otherwise.
    pub fn tier(&self, addr: u32, written: bool) -> Tier {
        match self.tiers.get(&addr) {
            Some(t) => *t,
            None if written => Tier::T0,
            None => Tier::T1,
        }
    }

    pub fn recorded_tier(&self, addr: u32) -> Option<Tier> {
        self.tiers.get(&addr).copied()
    }

    pub fn tiers(&self) -> &BTreeMap<u32, Tier> {
        &self.tiers
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.entries
            .iter()
            .map(|(&(addr, pc, ctx), s)| CacheEntry {
                tier: self.tiers.get(&addr).copied().unwrap_or(Tier::T1),
                addr,
                pc,
                ctx,
                values: s.values.clone(),
                irq: s.irq,
            })
            .collect()
    }

    pub fn entries_for(&self, addr: u32) -> Vec<CacheEntry> {
        self.entries().into_iter().filter(|e| e.addr == addr).collect()
    }

    pub fn insert_entry(&mut self, e: CacheEntry) {
        self.tiers.insert(e.addr, e.tier);
        self.entries.insert((e.addr, e.pc, e.ctx), Slot { values: e.values, irq: e.irq });
    }

    pub fn set_tier(&mut self, addr: u32, tier: Tier) {
        self.tiers.insert(addr, tier);
    }

    /// Records one read in the access statistics.
    pub fn note_irq_consumed(&mut self, addr: u32) {
        self.stats.regs.entry(addr).or_default().irq_consumed += 1;
    }

    pub fn note_read(&mut self, addr: u32, in_irq: bool) {
        let r = self.stats.regs.entry(addr).or_default();
        r.reads += 1;
        if in_irq {
            r.irq_reads += 1;
        }
    }

    /// Finds the cached response for a read. `pick` chooses among the
    /// members of a multi-value entry.
    pub fn lookup(&self, q: &Query, last_write: Option<u32>, pick: &mut dyn FnMut(usize) -> usize) -> Lookup {
        let slot = match self.tier(q.addr, last_write.is_some()) {
            Tier::T0 => {
                return match last_write {
                    Some(v) => Lookup::Hit(v),
                    None => Lookup::Miss,
                }
            }
            Tier::T1 => self.entries.get(&(q.addr, q.pc, None)),
            Tier::T2 => self
                .entries
                .get(&(q.addr, q.pc, Some(Ctx::Hash(q.ctx))))
                .or_else(|| self.entries.get(&(q.addr, q.pc, Some(Ctx::Any)))),
            Tier::T3 => {
                return match self.entries.get(&(q.addr, q.pc, None)) {
                    Some(s) => match s.values.get(q.pos as usize) {
                        Some(v) => Lookup::Hit(*v),
                        None => Lookup::Exhausted,
                    },
                    None => Lookup::Miss,
                }
            }
        };
        match slot {
            None => Lookup::Miss,
            Some(s) if s.values.len() == 1 => Lookup::Hit(s.values[0]),
            Some(s) => {
                let i = pick(s.values.len()).min(s.values.len() - 1);
                Lookup::Hit(s.values[i])
            }
        }
    }

    /// Incorporates the value a valid path requires for the read `rec`.
    ///
    /// `history` lists the reads of the same register on the current path
    /// with their values; it is used to re-key knowledge on upgrade.
    pub fn update(
        &mut self,
        rec: &ReadRecord,
        value: u32,
        history: &[(ReadRecord, u32)],
        last_write: Option<u32>,
    ) -> Result<UpdateResult, KbError> {
        let addr = rec.addr;
        let tier = self.tier(addr, last_write.is_some());
        match tier {
            Tier::T0 => match last_write {
                Some(w) if w == value => {
                    self.tiers.insert(addr, Tier::T0);
                    Ok(UpdateResult::Confirmed)
                }
                _ => {
                    self.tiers.insert(addr, Tier::T1);
                    self.stats.upgrades += 1;
                    self.entries.insert((addr, rec.pc, None), Slot { values: vec![value], irq: rec.in_irq });
                    Ok(UpdateResult::Upgraded(Tier::T0, Tier::T1))
                }
            },
            Tier::T1 => {
                self.tiers.insert(addr, Tier::T1);
                let key = (addr, rec.pc, None);
                match self.entries.get_mut(&key) {
                    None => {
                        self.entries.insert(key, Slot { values: vec![value], irq: rec.in_irq });
                        Ok(UpdateResult::Inserted)
                    }
                    Some(s) if s.values.contains(&value) => Ok(UpdateResult::Confirmed),
                    Some(s) if rec.in_irq => {
                        s.values.push(value);
                        s.irq = true;
                        Ok(UpdateResult::Appended)
                    }
                    Some(_) => {
                        self.upgrade_to_t2(addr, history);
                        let r = self.update(rec, value, history, last_write)?;
                        Ok(UpdateResult::Upgraded(Tier::T1, final_tier(r, Tier::T2)))
                    }
                }
            }
            Tier::T2 => {
                let key = (addr, rec.pc, Some(Ctx::Hash(rec.ctx)));
                match self.entries.get_mut(&key) {
                    Some(s) if s.values.contains(&value) => Ok(UpdateResult::Confirmed),
                    Some(s) if rec.in_irq => {
                        s.values.push(value);
                        s.irq = true;
                        Ok(UpdateResult::Appended)
                    }
                    Some(_) => {
                        self.upgrade_to_t3(addr, history);
                        self.update(rec, value, history, last_write)?;
                        Ok(UpdateResult::Upgraded(Tier::T2, Tier::T3))
                    }
                    None => {
                        let wild = self.entries.get(&(addr, rec.pc, Some(Ctx::Any)));
                        if wild.is_some_and(|w| w.values.contains(&value)) {
                            return Ok(UpdateResult::Confirmed);
                        }
                        self.entries.insert(key, Slot { values: vec![value], irq: rec.in_irq });
                        Ok(UpdateResult::Inserted)
                    }
                }
            }
            Tier::T3 => {
                let key = (addr, rec.pc, None);
                let pos = rec.pos as usize;
                let prior = replay_values(history, rec.pc);
                let slot = self.entries.entry(key).or_insert_with(|| Slot { values: Vec::new(), irq: false });
                if pos < slot.values.len() {
                    if slot.values[pos] == value {
                        self.confirmed.insert((addr, rec.pc, rec.pos));
                        return Ok(UpdateResult::Confirmed);
                    }
                    if self.confirmed.contains(&(addr, rec.pc, rec.pos)) {
                        return Err(KbError::TierOverflow { addr, pc: rec.pc, pos: rec.pos });
                    }
                    slot.values[pos] = value;
                    self.confirmed.insert((addr, rec.pc, rec.pos));
                    return Ok(UpdateResult::Replaced);
                }
                while slot.values.len() < pos {
                    let i = slot.values.len();
                    slot.values.push(prior.get(&(i as u32)).copied().unwrap_or(0));
                }
                slot.values.push(value);
                self.confirmed.insert((addr, rec.pc, rec.pos));
                Ok(UpdateResult::Inserted)
            }
        }
    }

    /// T1 to T2: every entry of the register is re-keyed by the context of an
    /// earlier read on this path that observed the same value, or by the
    /// wildcard context when no such read exists.
    fn upgrade_to_t2(&mut self, addr: u32, history: &[(ReadRecord, u32)]) {
        self.stats.upgrades += 1;
        self.tiers.insert(addr, Tier::T2);
        let old: Vec<(Key, Slot)> = self.take_entries(addr);
        for ((_, pc, _), slot) in old {
            let mut unmatched = Vec::new();
            for &v in &slot.values {
                let ctxs: BTreeSet<u64> =
                    history.iter().filter(|(r, val)| r.pc == pc && *val == v).map(|(r, _)| r.ctx).collect();
                if ctxs.is_empty() {
                    unmatched.push(v);
                }
                for c in ctxs {
                    let s = self
                        .entries
                        .entry((addr, pc, Some(Ctx::Hash(c))))
                        .or_insert_with(|| Slot { values: Vec::new(), irq: slot.irq });
                    if !s.values.contains(&v) {
                        s.values.push(v);
                    }
                }
            }
            if !unmatched.is_empty() {
                self.entries.insert((addr, pc, Some(Ctx::Any)), Slot { values: unmatched, irq: slot.irq });
            }
        }
    }

    /// T2 to T3: each PC of the register gets a replay array built from the
    /// reads at that PC on this path, in order.
    fn upgrade_to_t3(&mut self, addr: u32, history: &[(ReadRecord, u32)]) {
        self.stats.upgrades += 1;
        self.tiers.insert(addr, Tier::T3);
        let old = self.take_entries(addr);
        let mut pcs: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for ((_, pc, _), slot) in old {
            pcs.entry(pc).or_default().extend(slot.values);
        }
        for (r, _) in history {
            pcs.entry(r.pc).or_default();
        }
        for (pc, fallback) in pcs {
            let prior = replay_values(history, pc);
            let values: Vec<u32> = if prior.is_empty() { fallback } else { prior.into_values().collect() };
            if !values.is_empty() {
                self.entries.insert((addr, pc, None), Slot { values, irq: false });
            }
        }
    }

    fn take_entries(&mut self, addr: u32) -> Vec<(Key, Slot)> {
        let keys: Vec<Key> = self.entries.range((addr, 0, None)..).take_while(|(k, _)| k.0 == addr).map(|(k, _)| *k).collect();
        keys.into_iter().map(|k| (k, self.entries.remove(&k).unwrap())).collect()
    }

    /// Folds another knowledge base derived from the same ancestor into this
    /// one; values of shared keys are unioned in order.
    pub fn merge_from(&mut self, other: &KnowledgeBase) {
        for (&addr, &t) in &other.tiers {
            match self.tiers.get(&addr).copied() {
                Some(c) if c >= t => {}
                Some(_) => {
                    // re-keyed on the other side; take its entries wholesale
                    self.take_entries(addr);
                    self.tiers.insert(addr, t);
                }
                None => {
                    self.tiers.insert(addr, t);
                }
            }
        }
        for (k, s) in &other.entries {
            if self.tiers.get(&k.0) != other.tiers.get(&k.0) {
                continue;
            }
            match self.entries.get_mut(k) {
                None => {
                    self.entries.insert(*k, s.clone());
                }
                Some(mine) => {
                    for v in &s.values {
                        if !mine.values.contains(v) {
                            mine.values.push(*v);
                            mine.irq |= s.irq;
                        }
                    }
                }
            }
        }
        self.stats.hits = self.stats.hits.max(other.stats.hits);
        self.stats.misses = self.stats.misses.max(other.stats.misses);
        self.stats.upgrades = self.stats.upgrades.max(other.stats.upgrades);
        for (a, r) in &other.stats.regs {
            let mine = self.stats.regs.entry(*a).or_default();
            mine.reads = mine.reads.max(r.reads);
            mine.irq_reads = mine.irq_reads.max(r.irq_reads);
            mine.irq_consumed = mine.irq_consumed.max(r.irq_consumed);
        }
    }

    pub fn check_digest(&self, expected: &str) -> Result<(), KbError> {
        match &self.digest {
            Some(d) if d != expected => {
                Err(KbError::DigestMismatch { expected: expected.to_string(), found: d.clone() })
            }
            _ => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(FILE_MAGIC);
        out.push('\n');
        if let Some(d) = &self.digest {
            out.push_str(&format!("# firmware {d}\n"));
        }
        out.push_str(&format!(
            "# stats hits={} misses={} upgrades={}\n",
            self.stats.hits, self.stats.misses, self.stats.upgrades
        ));
        for (a, r) in &self.stats.regs {
            out.push_str(&format!("# reads 0x{a:08x} {} {} {}\n", r.reads, r.irq_reads, r.irq_consumed));
        }
        for (a, t) in &self.tiers {
            out.push_str(&format!("TIER 0x{a:08x} {t}\n"));
        }
        for e in self.entries() {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<KnowledgeBase, KbError> {
        let mut kb = KnowledgeBase::new();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == FILE_MAGIC => {}
            _ => return Err(KbError::Format { line: 1, msg: "missing `# kbfile v1` header".into() }),
        }
        let mut pending: Vec<CacheEntry> = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let bad = |msg: String| KbError::Format { line, msg };
            let l = raw.trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix('#') {
                let f: Vec<&str> = rest.split_whitespace().collect();
                match f.first().copied() {
                    Some("firmware") if f.len() == 2 => kb.digest = Some(f[1].to_string()),
                    Some("stats") => {
                        for kv in &f[1..] {
                            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad stat `{kv}`")))?;
                            let v: u64 = v.parse().map_err(|_| bad(format!("bad stat `{kv}`")))?;
                            match k {
                                "hits" => kb.stats.hits = v,
                                "misses" => kb.stats.misses = v,
                                "upgrades" => kb.stats.upgrades = v,
                                _ => return Err(bad(format!("unknown stat `{k}`"))),
                            }
                        }
                    }
                    Some("reads") if f.len() == 5 => {
                        let a = parse_u32(f[1]).ok_or_else(|| bad(format!("bad address `{}`", f[1])))?;
                        let count = |s: &str| s.parse().map_err(|_| bad("bad read count".into()));
                        let (reads, irq_reads, irq_consumed) = (count(f[2])?, count(f[3])?, count(f[4])?);
                        kb.stats.regs.insert(a, RegStats { reads, irq_reads, irq_consumed });
                    }
                    Some("firmware") | Some("reads") => {
                        return Err(bad("malformed header line".into()))
                    }
                    _ => {}
                }
                continue;
            }
            if let Some(rest) = l.strip_prefix("TIER ") {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 2 {
                    return Err(bad("expected `TIER <addr> <tier>`".into()));
                }
                let a = parse_u32(f[0]).ok_or_else(|| bad(format!("bad address `{}`", f[0])))?;
                let t: Tier = f[1].parse().map_err(|_| bad(format!("bad tier `{}`", f[1])))?;
                kb.tiers.insert(a, t);
                continue;
            }
            let e: CacheEntry = l.parse().map_err(bad)?;
            if let Some(t) = kb.tiers.get(&e.addr) {
                if *t != e.tier {
                    return Err(bad(format!("entry tier {} disagrees with register tier {t}", e.tier)));
                }
            }
            pending.push(e);
        }
        for e in pending {
            let addr = e.addr;
            let tier = e.tier;
            if kb.tiers.get(&addr).is_some_and(|t| *t != tier) {
                return Err(KbError::Format { line: 0, msg: format!("mixed tiers for {addr:#x}") });
            }
            kb.insert_entry(e);
        }
        Ok(kb)
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<KnowledgeBase, KbError> {
        KnowledgeBase::parse(&std::fs::read_to_string(path)?)
    }
}

fn final_tier(r: UpdateResult, at_least: Tier) -> Tier {
    match r {
        UpdateResult::Upgraded(_, t) => t.max(at_least),
        _ => at_least,
    }
}

/// Values observed at `pc` on this path, keyed by read position.
fn replay_values(history: &[(ReadRecord, u32)], pc: u32) -> BTreeMap<u32, u32> {
    history.iter().filter(|(r, _)| r.pc == pc).map(|(r, v)| (r.pos, *v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(addr: u32, pc: u32, ctx: u64, pos: u32) -> ReadRecord {
        ReadRecord { addr, pc, ctx, pos, in_irq: false, width: 32, sym: None, value: None, hint: None }
    }

    fn q(addr: u32, pc: u32, ctx: u64, pos: u32) -> Query {
        Query { addr, pc, ctx, pos, in_irq: false }
    }

    fn first(_: usize) -> usize {
        0
    }

    #[test]
    fn t1_entry_text() {
        let e: CacheEntry = "T1_0x40023800_0x10000_NULL_0x00".parse().unwrap();
        assert_eq!(
            e,
            CacheEntry { tier: Tier::T1, addr: 0x4002_3800, pc: 0x10000, ctx: None, values: vec![0], irq: false }
        );
        assert_eq!(e.to_string(), "T1_0x40023800_0x10000_NULL_0x00");
        let mut kb = KnowledgeBase::new();
        kb.insert_entry(e);
        assert_eq!(kb.lookup(&q(0x4002_3800, 0x10000, 99, 0), None, &mut first), Lookup::Hit(0));
        assert_eq!(kb.lookup(&q(0x4002_3804, 0x10000, 99, 0), None, &mut first), Lookup::Miss);
    }

    #[test]
    fn other_encodings_round_trip() {
        for s in [
            "T2_0x40064006_0x1a9a_0x00000000deadbeef_0x20",
            "T2_0x40064006_0x1a9a_*_0x00",
            "T3_0x40011004_0x2a0_null_{0x4f,0x4b,0x0d,0x0a}",
            "T1_0x40011000_0x300_NULL_{0x20,0x00,0x80}",
            "T1_0x40011000_0x300_NULL_{0x20}",
        ] {
            let e: CacheEntry = s.parse().unwrap();
            assert_eq!(e.to_string(), s);
        }
        assert!("T1_0x40023800_0x10000_NULL".parse::<CacheEntry>().is_err());
        assert!("T3_0x1_0x2_null_0x5".parse::<CacheEntry>().is_err());
    }

    #[test]
    fn t3_replays_in_order() {
        let mut kb = KnowledgeBase::new();
        kb.insert_entry("T3_0x40011004_0x2a0_null_{0x4f,0x4b,0x0d,0x0a}".parse().unwrap());
        let got: Vec<Lookup> = (0..5).map(|p| kb.lookup(&q(0x4001_1004, 0x2a0, 0, p), None, &mut first)).collect();
        assert_eq!(
            got,
            vec![Lookup::Hit(0x4f), Lookup::Hit(0x4b), Lookup::Hit(0x0d), Lookup::Hit(0x0a), Lookup::Exhausted]
        );
    }

    #[test]
    fn t0_serves_last_write_then_upgrades() {
        let mut kb = KnowledgeBase::new();
        let a = 0x4000_1000;
        assert_eq!(kb.lookup(&q(a, 0x40, 0, 0), Some(5), &mut first), Lookup::Hit(5));
        let r = rec(a, 0x40, 0, 0);
        assert_eq!(kb.update(&r, 5, &[(r.clone(), 5)], Some(5)).unwrap(), UpdateResult::Confirmed);
        assert!(kb.entries().is_empty());
        assert_eq!(kb.recorded_tier(a), Some(Tier::T0));
        assert_eq!(kb.update(&r, 7, &[(r.clone(), 7)], Some(5)).unwrap(), UpdateResult::Upgraded(Tier::T0, Tier::T1));
        assert_eq!(kb.lookup(&q(a, 0x40, 0, 0), Some(5), &mut first), Lookup::Hit(7));
    }

    #[test]
    fn t1_conflict_rekeys_by_context() {
        let mut kb = KnowledgeBase::new();
        let a = 0x4006_4006;
        let ra = rec(a, 0x1a9a, 0xA, 0);
        let rb = rec(a, 0x1a9a, 0xB, 1);
        assert_eq!(kb.update(&ra, 0, &[(ra.clone(), 0)], None).unwrap(), UpdateResult::Inserted);
        let hist = [(ra.clone(), 0), (rb.clone(), 0x20)];
        assert_eq!(kb.update(&rb, 0x20, &hist, None).unwrap(), UpdateResult::Upgraded(Tier::T1, Tier::T2));
        assert_eq!(kb.lookup(&q(a, 0x1a9a, 0xA, 5), None, &mut first), Lookup::Hit(0));
        assert_eq!(kb.lookup(&q(a, 0x1a9a, 0xB, 5), None, &mut first), Lookup::Hit(0x20));
        assert_eq!(kb.lookup(&q(a, 0x1a9a, 0xC, 5), None, &mut first), Lookup::Miss);
    }

    #[test]
    fn t1_conflict_without_history_uses_wildcard() {
        let mut kb = KnowledgeBase::new();
        let a = 0x4000_0010;
        kb.insert_entry("T1_0x40000010_0x100_NULL_0x01".parse().unwrap());
        let r = rec(a, 0x100, 0xC, 0);
        kb.update(&r, 2, &[(r.clone(), 2)], None).unwrap();
        assert_eq!(kb.lookup(&q(a, 0x100, 0xC, 0), None, &mut first), Lookup::Hit(2));
        assert_eq!(kb.lookup(&q(a, 0x100, 0xD, 0), None, &mut first), Lookup::Hit(1));
    }

    #[test]
    fn same_context_conflict_goes_to_t3() {
        let mut kb = KnowledgeBase::new();
        let a = 0x4001_1004;
        let r0 = rec(a, 0x2a0, 7, 0);
        let r1 = rec(a, 0x2a0, 7, 1);
        kb.update(&r0, 0x4f, &[(r0.clone(), 0x4f)], None).unwrap();
        let hist = [(r0.clone(), 0x4f), (r1.clone(), 0x4b)];
        assert_eq!(kb.update(&r1, 0x4b, &hist, None).unwrap(), UpdateResult::Upgraded(Tier::T1, Tier::T3));
        assert_eq!(kb.entries_for(a)[0].to_string(), "T3_0x40011004_0x2a0_null_{0x4f,0x4b}");
        let r2 = rec(a, 0x2a0, 7, 2);
        assert_eq!(kb.update(&r2, 0x0d, &hist, None).unwrap(), UpdateResult::Inserted);
    }

    #[test]
    fn t3_conflict_replaces_then_overflows() {
        let mut kb = KnowledgeBase::new();
        kb.insert_entry("T3_0x40011004_0x2a0_null_{0x00,0x4b}".parse().unwrap());
        let r0 = rec(0x4001_1004, 0x2a0, 7, 0);
        assert_eq!(kb.update(&r0, 0x4f, &[], None).unwrap(), UpdateResult::Replaced);
        assert!(matches!(kb.update(&r0, 0x50, &[], None), Err(KbError::TierOverflow { pos: 0, .. })));
    }

    #[test]
    fn irq_conflict_appends() {
        let mut kb = KnowledgeBase::new();
        let mut r = rec(0x4001_1000, 0x300, 1, 0);
        r.in_irq = true;
        kb.update(&r, 0x20, &[], None).unwrap();
        assert_eq!(kb.update(&r, 0x80, &[], None).unwrap(), UpdateResult::Appended);
        assert_eq!(kb.entries()[0].to_string(), "T1_0x40011000_0x300_NULL_{0x20,0x80}");
        let mut pick_last = |n: usize| n - 1;
        assert_eq!(
            kb.lookup(&Query { addr: 0x4001_1000, pc: 0x300, ctx: 1, pos: 0, in_irq: true }, None, &mut pick_last),
            Lookup::Hit(0x80)
        );
    }

    #[test]
    fn file_round_trip_and_errors() {
        let mut kb = KnowledgeBase::new();
        kb.digest = Some("abc123".into());
        kb.insert_entry("T2_0x40064006_0x1a9a_0x00000000000000aa_0x00".parse().unwrap());
        kb.insert_entry("T2_0x40064006_0x1a9a_0x00000000000000bb_0x20".parse().unwrap());
        kb.insert_entry("T3_0x40011004_0x2a0_null_{0x4f,0x4b,0x0d,0x0a}".parse().unwrap());
        kb.set_tier(0x4000_2000, Tier::T0);
        kb.stats.hits = 3;
        kb.note_read(0x4001_1004, true);
        let text = kb.to_text();
        assert_eq!(KnowledgeBase::parse(&text).unwrap(), kb);
        let truncated = "# kbfile v1\nT1_0x40023800_0x10000_NULL\n";
        assert!(matches!(KnowledgeBase::parse(truncated), Err(KbError::Format { line: 2, .. })));
        assert!(kb.check_digest("abc123").is_ok());
        assert!(matches!(kb.check_digest("zzz"), Err(KbError::DigestMismatch { .. })));
    }

    #[test]
    fn merge_unions_values() {
        let mut a = KnowledgeBase::new();
        a.insert_entry("T1_0x40011000_0x300_NULL_{0x20}".parse().unwrap());
        let mut b = KnowledgeBase::new();
        b.insert_entry("T1_0x40011000_0x300_NULL_{0x00,0x80}".parse().unwrap());
        a.merge_from(&b);
        assert_eq!(a.entries()[0].values, vec![0x20, 0x00, 0x80]);
    }
}
