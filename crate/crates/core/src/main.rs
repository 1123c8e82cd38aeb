use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use kbemu::analysis::replay;
use kbemu::asm::{assemble_for, AsmError};
use kbemu::config::{ConfigError, FirmwareConfig};
use kbemu::explorer::{kb_learn, ExploreError};
use kbemu::fuzz::{fuzz_loop, load_seeds, FuzzConfig};
use kbemu::memory::DEFAULT_ROM;
use kbemu::kb::{firmware_digest, KbError, KnowledgeBase};
use kbemu::project::{Project, ProjectError};
use kbemu::solver::invocation_count;

#[derive(Parser)]
#[command(name = "kbemu", version, about = "Knowledge-base driven firmware emulation and fuzzing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble a source file into an image and a symbol file.
    Asm {
        source: PathBuf,
        /// Output image; the symbol file is written next to it with a .sym extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Config whose ROM region sets the origin.
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Learn a knowledge base by symbolic exploration.
    Extract {
        #[command(flatten)]
        fw: FwArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Start from an existing knowledge base.
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Ignore cached knowledge when choosing branch sides.
        #[arg(long)]
        no_cache: bool,
    },
    /// Emulate with a knowledge base answering peripheral reads.
    Run {
        #[command(flatten)]
        fw: FwArgs,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value_t = 2_000_000)]
        max_blocks: u64,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Fuzz from the first data-register read.
    Fuzz {
        #[command(flatten)]
        fw: FwArgs,
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, value_name = "DIR")]
        seeds: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        budget_execs: Option<u64>,
        #[arg(long, value_name = "N")]
        budget_seconds: Option<u64>,
        #[arg(long, value_name = "N", default_value_t = 0)]
        rng_seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Knowledge-base file utilities.
    Kb {
        #[command(subcommand)]
        cmd: KbCmd,
    },
}

#[derive(Subcommand)]
enum KbCmd {
    /// Print the entries of a knowledge base.
    Show { kb: PathBuf },
}

#[derive(Args)]
struct FwArgs {
    /// Firmware image (.bin with an optional sibling .sym) or assembly source (.s).
    firmware: PathBuf,
    /// Config file; defaults to a sibling .toml if one exists.
    #[arg(short, long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}: {1}")]
    Asm(PathBuf, AsmError),
    #[error("{0}:{1}: bad symbol line")]
    Sym(PathBuf, usize),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}: {1}")]
    Kb(PathBuf, KbError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, data).map_err(|source| CliError::Io { path: path.into(), source })
}

fn parse_sym(path: &Path, text: &str) -> Result<BTreeMap<String, u32>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(name), Some(addr), None) = (it.next(), it.next(), it.next()) else {
            return Err(CliError::Sym(path.into(), i + 1));
        };
        let addr = addr.strip_prefix("0x").and_then(|h| u32::from_str_radix(h, 16).ok());
        out.insert(name.to_string(), addr.ok_or_else(|| CliError::Sym(path.into(), i + 1))?);
    }
    Ok(out)
}

fn format_sym(symbols: &BTreeMap<String, u32>) -> String {
    let mut v: Vec<(&String, &u32)> = symbols.iter().collect();
    v.sort_by_key(|(n, a)| (**a, (*n).clone()));
    v.iter().map(|(n, a)| format!("{n} 0x{a:08x}\n")).collect()
}

/// Loaded firmware with the bytes that identify it.
struct Loaded {
    project: Project,
    digest: String,
}

fn load(args: &FwArgs) -> Result<Loaded, CliError> {
    let cfg_path = args.config.clone().or_else(|| {
        let p = args.firmware.with_extension("toml");
        p.exists().then_some(p)
    });
    let cfg_text = match &cfg_path {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let project = if args.firmware.extension().is_some_and(|e| e == "s") {
        Project::from_source(&read_text(&args.firmware)?, &cfg_text)?
    } else {
        let image = read(&args.firmware)?;
        let sym_path = args.firmware.with_extension("sym");
        let symbols = if sym_path.exists() { parse_sym(&sym_path, &read_text(&sym_path)?)? } else { BTreeMap::new() };
        Project::from_image(&image, symbols, &cfg_text)?
    };
    let digest = firmware_digest(project.firmware.image(), cfg_text.as_bytes());
    Ok(Loaded { project, digest })
}

fn load_kb(path: &Path, digest: &str) -> Result<KnowledgeBase, CliError> {
    let kb = KnowledgeBase::load(path).map_err(|e| CliError::Kb(path.into(), e))?;
    kb.check_digest(digest).map_err(|e| CliError::Kb(path.into(), e))?;
    Ok(kb)
}

fn marker_names(p: &Project, markers: impl IntoIterator<Item = u32>) -> String {
    let names: Vec<String> = markers
        .into_iter()
        .map(|a| match p.firmware.symbols.iter().find(|(_, v)| **v == a) {
            Some((n, _)) => format!("{n}@{a:#x}"),
            None => format!("{a:#x}"),
        })
        .collect();
    format!("[{}]", names.join(" "))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Asm { source, output, config } => {
            let text = read_text(&source)?;
            let rom = match &config {
                Some(c) => FirmwareConfig::rom_region(&read_text(c)?)?,
                None => DEFAULT_ROM,
            };
            let a = assemble_for(&text, rom).map_err(|e| CliError::Asm(source.clone(), e))?;
            let out = output.unwrap_or_else(|| source.with_extension("bin"));
            write(&out, &a.image)?;
            write(&out.with_extension("sym"), format_sym(&a.symbols))?;
            println!("{}: {} bytes, {} symbols", out.display(), a.image.len(), a.symbols.len());
        }
        Cmd::Extract { fw, output, kb, no_cache } => {
            let l = load(&fw)?;
            let start = match &kb {
                Some(p) => load_kb(p, &l.digest)?,
                None => KnowledgeBase::new(),
            };
            let mut cfg = l.project.config.explore_config();
            cfg.use_cache = !no_cache;
            let round = match kb_learn(l.project.firmware.clone(), start, &cfg) {
                Ok(r) => r,
                Err(e) => {
                    println!("{}", e.report());
                    return Err(e.into());
                }
            };
            println!("{}", round.report);
            let mut kb = round.kb;
            kb.digest = Some(l.digest);
            kb.save(&output).map_err(|e| CliError::Kb(output.clone(), e))?;
        }
        Cmd::Run { fw, kb, max_blocks, rng_seed } => {
            let l = load(&fw)?;
            let kb = load_kb(&kb, &l.digest)?;
            let calls = invocation_count();
            let r = replay(
                l.project.firmware.clone(),
                Some(&kb),
                &l.project.config,
                &Default::default(),
                max_blocks,
                rng_seed,
                &mut |_| {},
            );
            let s = r.stats;
            println!("stop: {:?}", r.stop);
            println!("verdict: {}", r.verdict);
            println!("blocks: {}", r.blocks);
            println!("markers: {}", marker_names(&l.project, r.markers.iter().copied()));
            let missing: Vec<u32> = l.project.config.markers.difference(&r.markers).copied().collect();
            println!("markers_missed: {}", marker_names(&l.project, missing));
            println!("kb_hits: {}", s.hits);
            println!("kb_misses: {}", s.misses);
            println!("kb_unknown: {}", s.unknown);
            println!("kb_hit_rate: {:.2}%", s.hit_rate() * 100.0);
            println!("solver_calls: {}", invocation_count() - calls);
            println!("irqs: {}", r.irq_log.len());
        }
        Cmd::Fuzz { fw, kb, seeds, budget_execs, budget_seconds, rng_seed, out } => {
            let l = load(&fw)?;
            let kb = load_kb(&kb, &l.digest)?;
            let seeds = match &seeds {
                Some(d) => load_seeds(d).map_err(|source| CliError::Io { path: d.clone(), source })?,
                None => Vec::new(),
            };
            let budget_execs = match (budget_execs, budget_seconds) {
                (None, None) => Some(100_000),
                (e, _) => e,
            };
            let fc = FuzzConfig { budget_execs, budget_seconds, rng_seed, ..FuzzConfig::default() };
            let c = fuzz_loop(l.project.firmware.clone(), kb, &l.project.config, seeds, &fc);
            c.write_to(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
            print!("{}", c.report());
        }
        Cmd::Kb { cmd: KbCmd::Show { kb } } => {
            let k = KnowledgeBase::load(&kb).map_err(|e| CliError::Kb(kb.clone(), e))?;
            for e in k.entries() {
                println!("{e}");
            }
            for (a, t) in k.tiers() {
                let r = k.stats.regs.get(a).map(|r| r.reads).unwrap_or(0);
                println!("# 0x{a:08x} {t} reads={r}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
