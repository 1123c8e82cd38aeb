//! A firmware image together with its configuration.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::asm::{assemble_for, AsmError};
use crate::config::{ConfigError, FirmwareConfig};
use crate::firmware::{Firmware, FirmwareError};

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("assembly failed: {0}")]
    Asm(#[from] AsmError),
    #[error("bad config: {0}")]
    Config(#[from] ConfigError),
    #[error("bad image: {0}")]
    Firmware(#[from] FirmwareError),
}

#[derive(Debug, Clone)]
pub struct Project {
    pub firmware: Arc<Firmware>,
    pub config: FirmwareConfig,
}

impl Project {
    pub fn from_source(src: &str, config: &str) -> Result<Project, ProjectError> {
        let rom = FirmwareConfig::rom_region(config)?;
        let a = assemble_for(src, rom)?;
        Project::from_image(&a.image, a.symbols, config)
    }

    pub fn from_image(image: &[u8], symbols: BTreeMap<String, u32>, config: &str) -> Result<Project, ProjectError> {
        let config = FirmwareConfig::parse(config, &symbols)?;
        let mut fw = Firmware::new(image, config.map.clone())?.with_symbols(symbols);
        if let Some(e) = config.entry {
            fw = fw.with_entry(e)?;
        }
        Ok(Project { firmware: Arc::new(fw), config })
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.firmware.symbol(name)
    }
}
