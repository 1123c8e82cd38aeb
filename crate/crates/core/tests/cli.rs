use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kbemu::corpus::sample;

fn kbemu(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_kbemu")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn assemble_extract_run_and_fuzz() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = sample("double_free_analog").unwrap();
    fs::write(d.join("fw.s"), s.source).unwrap();
    fs::write(d.join("fw.toml"), s.config).unwrap();

    kbemu(d, &["asm", "fw.s", "-o", "fw.bin"]);
    assert!(d.join("fw.sym").exists());

    kbemu(d, &["extract", "fw.bin", "-o", "fw.kb"]);
    let kb = fs::read_to_string(d.join("fw.kb")).unwrap();
    let shown = stdout(&kbemu(d, &["kb", "show", "fw.kb"]));
    assert!(shown.lines().any(|l| l.starts_with("# 0x")));
    assert!(!kb.is_empty());

    let run = stdout(&kbemu(d, &["run", "fw.bin", "--kb", "fw.kb"]));
    assert!(run.contains("solver_calls: 0\n"), "{run}");
    assert!(run.contains("kb_misses: 0\n"), "{run}");

    fs::create_dir(d.join("seeds")).unwrap();
    fs::write(d.join("seeds/a"), b"hello").unwrap();
    let args = ["fuzz", "fw.bin", "--kb", "fw.kb", "--seeds", "seeds", "--budget-execs", "400", "--rng-seed", "9", "--out", "out"];
    kbemu(d, &args);
    let report = fs::read_to_string(d.join("out/report.txt")).unwrap();
    assert!(report.starts_with("execs: 400\n"), "{report}");
    assert!(report.contains("rng_seed: 9\n"));
    for sub in ["queue", "crashes", "hangs"] {
        assert!(d.join("out").join(sub).is_dir());
    }
    let crashes = fs::read_dir(d.join("out/crashes")).unwrap().count();
    assert!(crashes > 0, "{report}");
}

#[test]
fn source_and_image_extract_alike() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = sample("clock_wait").unwrap();
    fs::write(d.join("fw.s"), s.source).unwrap();
    fs::write(d.join("fw.toml"), s.config).unwrap();
    kbemu(d, &["asm", "fw.s", "-o", "fw.bin"]);
    kbemu(d, &["extract", "fw.s", "-o", "a.kb"]);
    kbemu(d, &["extract", "fw.bin", "-o", "b.kb"]);
    assert_eq!(fs::read(d.join("a.kb")).unwrap(), fs::read(d.join("b.kb")).unwrap());
}

#[test]
fn bad_kb_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.kb"), "not a knowledge base\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kbemu")).current_dir(dir.path()).args(["kb", "show", "bad.kb"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}
