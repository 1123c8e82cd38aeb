use std::collections::BTreeMap;
use std::fs;

use kbemu::analysis::{CrashKind, DataRegisters, Session, Verdict};
use kbemu::corpus::sample;
use kbemu::explorer::kb_learn;
use kbemu::fuzz::{fuzz_loop, Campaign, FuzzConfig};
use kbemu::kb::KnowledgeBase;
use kbemu::project::Project;

fn campaign(name: &str, execs: u64, seed: u64) -> (Project, Campaign) {
    let p = sample(name).unwrap().build().unwrap();
    let kb = kb_learn(p.firmware.clone(), KnowledgeBase::new(), &p.config.explore_config()).unwrap().kb;
    let fc = FuzzConfig { budget_execs: Some(execs), rng_seed: seed, reinforce: false, ..FuzzConfig::default() };
    let c = fuzz_loop(p.firmware.clone(), kb, &p.config, Vec::new(), &fc);
    (p, c)
}

fn session(p: &Project, c: &Campaign) -> Session {
    let data = DataRegisters::identify(&c.kb, p.config.data_threshold, &p.config.extra_data_registers);
    Session::new(p.firmware.clone(), &c.kb, &p.config, data, c.rng_seed).unwrap()
}

fn trace(s: &Session, kb: &KnowledgeBase, input: &[u8]) -> (Verdict, BTreeMap<(u32, u32), u32>) {
    let mut edges = BTreeMap::new();
    let mut prev = 0;
    let out = s.run_testcase(kb, input, &mut |b| {
        *edges.entry((prev, b)).or_insert(0) += 1;
        prev = b;
    });
    (out.verdict, edges)
}

#[test]
fn queued_inputs_replay_identically() {
    let (p, c) = campaign("rf_handshake", 3000, 3);
    assert!(!c.queue.is_empty());
    let s = session(&p, &c);
    for q in &c.queue {
        let a = trace(&s, &c.kb, &q.input);
        let b = trace(&s, &c.kb, &q.input);
        assert_eq!(a, b);
        assert_eq!(a.0, Verdict::Ok);
    }
}

#[test]
fn crash_inputs_reproduce_their_crash() {
    let (p, c) = campaign("double_free_analog", 2000, 1);
    assert!(!c.crashes.is_empty());
    let s = session(&p, &c);
    for cr in &c.crashes {
        let (v, _) = trace(&s, &c.kb, &cr.input);
        assert_eq!(v, Verdict::Crash { kind: cr.kind, pc: cr.pc, addr: cr.addr });
    }
}

#[test]
fn campaigns_are_reproducible_from_their_seed() {
    let (_, a) = campaign("rf_handshake", 1500, 11);
    let (_, b) = campaign("rf_handshake", 1500, 11);
    assert_eq!(a.queue, b.queue);
    assert_eq!(a.crashes, b.crashes);
    assert_eq!(a.edge_history, b.edge_history);
    assert_eq!(a.execs, 1500);
}

#[test]
fn edge_history_grows_strictly() {
    let (_, c) = campaign("uart_irq", 2000, 5);
    for w in c.edge_history.windows(2) {
        assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1, "{w:?}");
    }
    assert_eq!(c.edge_history.last().map(|e| e.1), Some(c.edges));
}

#[test]
fn output_directory_holds_raw_inputs() {
    let (_, c) = campaign("stack_smash", 1000, 2);
    let dir = tempfile::tempdir().unwrap();
    c.write_to(dir.path()).unwrap();
    let names = |sub: &str| {
        let mut v: Vec<_> = fs::read_dir(dir.path().join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v
    };
    let crashes = names("crashes");
    assert_eq!(crashes.len(), c.crashes.len());
    for (path, cr) in crashes.iter().zip(&c.crashes) {
        assert_eq!(fs::read(path).unwrap(), cr.input);
    }
    assert_eq!(names("queue").len(), c.queue.len());
    assert_eq!(names("hangs").len(), c.hangs.len());
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.starts_with("execs: 1000\n"));
    assert!(report.contains(&format!("unique_crashes: {}\n", c.crashes.len())));
}

#[test]
fn long_line_smashes_the_return_address() {
    let p = sample("stack_smash").unwrap().build().unwrap();
    let kb = kb_learn(p.firmware.clone(), KnowledgeBase::new(), &p.config.explore_config()).unwrap().kb;
    let data = DataRegisters::identify(&kb, p.config.data_threshold, &p.config.extra_data_registers);
    let s = Session::new(p.firmware.clone(), &kb, &p.config, data, 0).unwrap();
    // Bytes 16..19 land on the saved return address. A zero byte ends the
    // line, so the address must not contain one.
    let mut line = vec![b'A'; 16];
    line.extend_from_slice(&0x3132_3334u32.to_le_bytes());
    line.push(0);
    match trace(&s, &kb, &line).0 {
        Verdict::Crash { kind, addr, .. } => {
            assert_eq!(kind, CrashKind::ExecOutsideRom);
            assert_eq!(addr, 0x3132_3334);
        }
        v => panic!("{v:?}"),
    }
    let (v, _) = trace(&s, &kb, b"short\0");
    assert_eq!(v, Verdict::Ok);
}
