//! Firmware configuration files.
//!
//! A config is a TOML document with the sections `[memory]`, `[firmware]`,
//! `[detector]`, `[interrupts]`, `[fuzz]` and `[markers]`. Every key is
//! optional and unknown keys are rejected. Addresses may be given as
//! integers or as label names from the firmware's symbol map.
//!
//! ```toml
//! [detector]
//! bb_inv1 = 30
//! user_points = ["i2c_err"]
//!
//! [interrupts]
//! enabled = [0]
//! interval_extract = 500
//!
//! [fuzz]
//! extra_data_registers = [0x48000010]
//!
//! [markers]
//! valid = ["done"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::explorer::{ExploreConfig, DEFAULT_BLOCK_CAP, DEFAULT_HANDLER_BUDGET};
use crate::invalidity::{DetectorConfig, DEFAULT_BB_INV1, DEFAULT_BB_INV2, DEFAULT_BB_TERM};
use crate::irq::{Intervals, DEFAULT_INTERVAL_ANALYSIS, DEFAULT_INTERVAL_EXTRACT};
use crate::memory::{MapError, MemoryMap, Region, RegionKind, DEFAULT_MMIO, DEFAULT_RAM, DEFAULT_ROM, DEFAULT_SYSTEM};
use crate::solver::DEFAULT_CONFLICT_BUDGET;

pub const DEFAULT_DATA_THRESHOLD: u64 = 100;
pub const DEFAULT_HANG_BLOCKS: u64 = 2_000_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum Addr {
    Num(u32),
    Name(String),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    base: u32,
    size: u32,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMemory {
    rom: Option<RawRegion>,
    ram: Option<RawRegion>,
    mmio: Option<Vec<RawRegion>>,
    system: Option<Vec<RawRegion>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFirmware {
    entry: Option<Addr>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    bb_inv1: Option<usize>,
    bb_inv2: Option<u64>,
    bb_term: Option<u64>,
    user_points: Option<Vec<Addr>>,
    block_cap: Option<u64>,
    handler_budget: Option<usize>,
    conflict_budget: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterrupts {
    enabled: Option<Vec<u8>>,
    interval_extract: Option<u64>,
    interval_analysis: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFuzz {
    extra_data_registers: Option<Vec<u32>>,
    data_threshold: Option<u64>,
    hang_blocks: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarkers {
    valid: Option<Vec<Addr>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    #[serde(default)]
    memory: RawMemory,
    #[serde(default)]
    firmware: RawFirmware,
    #[serde(default)]
    detector: RawDetector,
    #[serde(default)]
    interrupts: RawInterrupts,
    #[serde(default)]
    fuzz: RawFuzz,
    #[serde(default)]
    markers: RawMarkers,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwareConfig {
    pub map: MemoryMap,
    pub entry: Option<u32>,
    pub detector: DetectorConfig,
    pub block_cap: u64,
    pub handler_budget: usize,
    pub conflict_budget: u64,
    /// Mask of IRQs that may be delivered; `None` means all with a vector.
    pub irqs: Option<u32>,
    pub intervals: Intervals,
    pub extra_data_registers: BTreeSet<u32>,
    pub data_threshold: u64,
    pub hang_blocks: u64,
    pub markers: BTreeSet<u32>,
    /// Source text, part of the knowledge-base digest.
    pub text: String,
}

impl Default for FirmwareConfig {
    fn default() -> Self {
        FirmwareConfig {
            map: MemoryMap::default(),
            entry: None,
            detector: DetectorConfig::default(),
            block_cap: DEFAULT_BLOCK_CAP,
            handler_budget: DEFAULT_HANDLER_BUDGET,
            conflict_budget: DEFAULT_CONFLICT_BUDGET,
            irqs: None,
            intervals: Intervals::default(),
            extra_data_registers: BTreeSet::new(),
            data_threshold: DEFAULT_DATA_THRESHOLD,
            hang_blocks: DEFAULT_HANG_BLOCKS,
            markers: BTreeSet::new(),
            text: String::new(),
        }
    }
}

fn resolve(a: &Addr, symbols: &BTreeMap<String, u32>) -> Result<u32, ConfigError> {
    match a {
        Addr::Num(n) => Ok(*n),
        Addr::Name(s) => symbols.get(s).copied().ok_or_else(|| ConfigError::UnknownSymbol(s.clone())),
    }
}

impl FirmwareConfig {
    /// Parses `text`, resolving label names through `symbols`.
    pub fn parse(text: &str, symbols: &BTreeMap<String, u32>) -> Result<FirmwareConfig, ConfigError> {
        let raw: Raw = toml::from_str(text)?;
        let d = FirmwareConfig::default();

        let m = raw.memory;
        let region = |kind, r: Option<RawRegion>, def: (u32, u32)| {
            let r = r.unwrap_or(RawRegion { base: def.0, size: def.1 });
            Region::new(kind, r.base, r.size)
        };
        let mut regions = vec![region(RegionKind::Rom, m.rom, DEFAULT_ROM), region(RegionKind::Ram, m.ram, DEFAULT_RAM)];
        let many = |kind, rs: Option<Vec<RawRegion>>, def: (u32, u32)| -> Vec<Region> {
            match rs {
                Some(v) => v.into_iter().map(|r| Region::new(kind, r.base, r.size)).collect(),
                None => vec![Region::new(kind, def.0, def.1)],
            }
        };
        regions.extend(many(RegionKind::Mmio, m.mmio, DEFAULT_MMIO));
        regions.extend(many(RegionKind::System, m.system, DEFAULT_SYSTEM));
        let map = MemoryMap::new(regions)?;

        let entry = raw.firmware.entry.as_ref().map(|a| resolve(a, symbols)).transpose()?;

        let det = raw.detector;
        let user_points = det
            .user_points
            .unwrap_or_default()
            .iter()
            .map(|a| resolve(a, symbols))
            .collect::<Result<BTreeSet<u32>, _>>()?;
        if let Some(p) = user_points.iter().find(|p| !map.rom().contains(**p)) {
            return Err(ConfigError::Invalid(format!("user point {p:#x} is outside ROM")));
        }
        let detector = DetectorConfig {
            bb_inv1: det.bb_inv1.unwrap_or(DEFAULT_BB_INV1),
            bb_inv2: det.bb_inv2.unwrap_or(DEFAULT_BB_INV2),
            bb_term: det.bb_term.unwrap_or(DEFAULT_BB_TERM),
            user_points,
        };
        if detector.bb_inv1 < 2 || detector.bb_inv2 < 2 {
            return Err(ConfigError::Invalid("bb_inv1 and bb_inv2 must be at least 2".into()));
        }

        let irq = raw.interrupts;
        let irqs = match irq.enabled {
            None => None,
            Some(v) => {
                let mut mask = 0u32;
                for n in v {
                    if n >= 32 {
                        return Err(ConfigError::Invalid(format!("irq {n} out of range")));
                    }
                    mask |= 1 << n;
                }
                Some(mask)
            }
        };
        let intervals = Intervals {
            extract: irq.interval_extract.unwrap_or(DEFAULT_INTERVAL_EXTRACT),
            analysis: irq.interval_analysis.unwrap_or(DEFAULT_INTERVAL_ANALYSIS),
        };

        let markers = raw
            .markers
            .valid
            .unwrap_or_default()
            .iter()
            .map(|a| resolve(a, symbols))
            .collect::<Result<BTreeSet<u32>, _>>()?;

        Ok(FirmwareConfig {
            map,
            entry,
            detector,
            block_cap: det.block_cap.unwrap_or(d.block_cap),
            handler_budget: det.handler_budget.unwrap_or(d.handler_budget),
            conflict_budget: det.conflict_budget.unwrap_or(d.conflict_budget),
            irqs,
            intervals,
            extra_data_registers: raw.fuzz.extra_data_registers.unwrap_or_default().into_iter().collect(),
            data_threshold: raw.fuzz.data_threshold.unwrap_or(d.data_threshold),
            hang_blocks: raw.fuzz.hang_blocks.unwrap_or(d.hang_blocks),
            markers,
            text: text.to_string(),
        })
    }

    /// ROM region named by `text`, needed before labels can be resolved.
    pub fn rom_region(text: &str) -> Result<(u32, u32), ConfigError> {
        let raw: Raw = toml::from_str(text)?;
        Ok(raw.memory.rom.map(|r| (r.base, r.size)).unwrap_or(DEFAULT_ROM))
    }

    pub fn load(path: &Path, symbols: &BTreeMap<String, u32>) -> Result<FirmwareConfig, ConfigError> {
        FirmwareConfig::parse(&std::fs::read_to_string(path)?, symbols)
    }

    pub fn explore_config(&self) -> ExploreConfig {
        ExploreConfig {
            detector: self.detector.clone(),
            intervals: self.intervals,
            use_cache: true,
            block_cap: self.block_cap,
            handler_budget: self.handler_budget,
            markers: self.markers.clone(),
            conflict_budget: self.conflict_budget,
            irqs: self.irqs,
        }
    }
}
