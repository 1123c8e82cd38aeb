use proptest::prelude::*;

use kbemu::kb::{CacheEntry, Ctx, KnowledgeBase, Lookup, Query, Tier};
use kbemu::state::ReadRecord;

const ADDRS: [u32; 3] = [0x4000_0000, 0x4000_0004, 0x4001_1000];

fn record(addr: u32, pc: u32, ctx: u64, pos: u32, in_irq: bool) -> ReadRecord {
    ReadRecord { addr, pc, ctx, pos, in_irq, width: 32, sym: None, value: None, hint: None }
}

#[derive(Debug, Clone)]
struct Read {
    addr: u32,
    pc: u32,
    ctx: u64,
    in_irq: bool,
    value: u32,
    written: Option<u32>,
}

fn read() -> impl Strategy<Value = Read> {
    (0..3usize, 0..3u32, 0..2u64, prop::bool::weighted(0.2), 0..4u32, prop::option::weighted(0.15, 0..4u32)).prop_map(
        |(a, pc, ctx, in_irq, value, written)| Read {
            addr: ADDRS[a],
            pc: 0x100 + 8 * pc,
            ctx,
            in_irq,
            value,
            written,
        },
    )
}

fn tier_of(kb: &KnowledgeBase, addr: u32) -> Option<Tier> {
    kb.recorded_tier(addr)
}

fn entry() -> impl Strategy<Value = CacheEntry> {
    (0..3usize, 0..8u32, 0..4u64, prop::bool::weighted(0.3), prop::collection::vec(any::<u32>(), 1..5)).prop_map(
        |(a, pc, h, irq, mut values)| {
            // Each register keeps one tier; only interrupt entries and
            // replay arrays hold several values.
            let tier = [Tier::T1, Tier::T2, Tier::T3][a];
            let ctx = match (tier, h) {
                (Tier::T2, 3) => Some(Ctx::Any),
                (Tier::T2, h) => Some(Ctx::Hash(h)),
                _ => None,
            };
            let irq = irq && tier != Tier::T3;
            if tier != Tier::T3 && !irq {
                values.truncate(1);
            }
            CacheEntry { tier, addr: ADDRS[a], pc: 0x100 + 8 * pc, ctx, values, irq }
        },
    )
}

proptest! {
    #[test]
    fn tiers_never_decrease(reads in prop::collection::vec(read(), 1..60)) {
        let mut kb = KnowledgeBase::new();
        let mut path: Vec<(ReadRecord, u32)> = Vec::new();
        let mut counts = std::collections::HashMap::new();
        for r in reads {
            let pos = counts.entry((r.addr, r.pc)).or_insert(0u32);
            let rec = record(r.addr, r.pc, r.ctx, *pos, r.in_irq);
            *pos += 1;
            let before: Vec<Option<Tier>> = ADDRS.iter().map(|a| tier_of(&kb, *a)).collect();
            let history: Vec<(ReadRecord, u32)> = path.iter().filter(|(p, _)| p.addr == r.addr).cloned().collect();
            let _ = kb.update(&rec, r.value, &history, r.written);
            for (a, b) in ADDRS.iter().zip(before) {
                let now = tier_of(&kb, *a);
                prop_assert!(b.is_none() || now >= b, "{:#x}: {:?} -> {:?}", a, b, now);
            }
            path.push((rec, r.value));
        }
    }

    #[test]
    fn lookup_is_deterministic(reads in prop::collection::vec(read(), 1..40), probe in read(), pos in 0..4u32) {
        let mut kb = KnowledgeBase::new();
        for (i, r) in reads.iter().enumerate() {
            let _ = kb.update(&record(r.addr, r.pc, r.ctx, i as u32 % 3, r.in_irq), r.value, &[], r.written);
        }
        let q = Query { addr: probe.addr, pc: probe.pc, ctx: probe.ctx, pos, in_irq: probe.in_irq };
        let a = kb.lookup(&q, probe.written, &mut |_| 0);
        let b = kb.clone().lookup(&q, probe.written, &mut |_| 0);
        prop_assert_eq!(a, b);
        if let Lookup::Hit(v) = a {
            prop_assert!(v < 4);
        }
    }

    #[test]
    fn text_round_trip(entries in prop::collection::vec(entry(), 0..20)) {
        let mut kb = KnowledgeBase::new();
        for e in entries {
            kb.set_tier(e.addr, e.tier);
            kb.insert_entry(e);
        }
        let text = kb.to_text();
        let back = KnowledgeBase::parse(&text).unwrap();
        prop_assert_eq!(back.entries(), kb.entries());
        prop_assert_eq!(back.tiers(), kb.tiers());
        prop_assert_eq!(back.to_text(), text);
    }
}

#[test]
fn replay_array_is_served_in_order() {
    let mut kb = KnowledgeBase::new();
    kb.set_tier(0x4001_1004, Tier::T3);
    let ok: Vec<u32> = b"OK\r\n".iter().map(|&b| b as u32).collect();
    kb.insert_entry(CacheEntry { tier: Tier::T3, addr: 0x4001_1004, pc: 0x160, ctx: None, values: ok.clone(), irq: false });
    let served: Vec<Lookup> = (0..5)
        .map(|pos| kb.lookup(&Query { addr: 0x4001_1004, pc: 0x160, ctx: 0, pos, in_irq: false }, None, &mut |_| 0))
        .collect();
    let want: Vec<Lookup> = ok.iter().map(|&v| Lookup::Hit(v)).chain([Lookup::Exhausted]).collect();
    assert_eq!(served, want);
}
