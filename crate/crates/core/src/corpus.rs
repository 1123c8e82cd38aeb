//! Bundled firmware samples and detector fixtures.
//!
//! Every sample ends by calling the shared `app_main` workload from
//! `corpus/app.s`, which is appended to its source.

use crate::kb::Tier;
use crate::project::{Project, ProjectError};

macro_rules! with_app {
    ($file:literal) => {
        concat!(include_str!(concat!("../corpus/", $file)), "\n", include_str!("../corpus/app.s"))
    };
}

#[derive(Debug, Clone, Copy)]
pub struct Sample {
    pub name: &'static str,
    pub source: &'static str,
    pub config: &'static str,
    /// Label that only a valid path reaches.
    pub marker: &'static str,
    /// Tiers the extracted knowledge base should assign.
    pub tiers: &'static [(u32, Tier)],
    pub planted_bug: bool,
}

impl Sample {
    pub fn build(&self) -> Result<Project, ProjectError> {
        Project::from_source(self.source, self.config)
    }
}

const SAMPLES: &[Sample] = &[
    Sample {
        name: "clock_wait",
        source: with_app!("clock_wait.s"),
        config: include_str!("../corpus/clock_wait.toml"),
        marker: "clock_ok",
        tiers: &[(0x4002_3800, Tier::T1)],
        planted_bug: false,
    },
    Sample {
        name: "uart_tx",
        source: with_app!("uart_tx.s"),
        config: include_str!("../corpus/uart_tx.toml"),
        marker: "tx_done",
        tiers: &[(0x4000_4400, Tier::T2)],
        planted_bug: false,
    },
    Sample {
        name: "ticker_wait",
        source: with_app!("ticker_wait.s"),
        config: include_str!("../corpus/ticker_wait.toml"),
        marker: "ticker_ok",
        tiers: &[(0x4000_0024, Tier::T2)],
        planted_bug: false,
    },
    Sample {
        name: "rf_handshake",
        source: with_app!("rf_handshake.s"),
        config: include_str!("../corpus/rf_handshake.toml"),
        marker: "rf_ok",
        tiers: &[(0x4001_1000, Tier::T1), (0x4001_1004, Tier::T3), (0x4000_4400, Tier::T1), (0x4000_4404, Tier::T1)],
        planted_bug: false,
    },
    Sample {
        name: "i2c_unchecked",
        source: with_app!("i2c_unchecked.s"),
        config: include_str!("../corpus/i2c_unchecked.toml"),
        marker: "i2c_data",
        tiers: &[(0x4000_5414, Tier::T1)],
        planted_bug: false,
    },
    Sample {
        name: "uart_irq",
        source: with_app!("uart_irq.s"),
        config: include_str!("../corpus/uart_irq.toml"),
        marker: "rx_seen",
        tiers: &[(0x4001_1000, Tier::T1), (0x4001_100c, Tier::T0)],
        planted_bug: false,
    },
    Sample {
        name: "stack_smash",
        source: with_app!("stack_smash.s"),
        config: include_str!("../corpus/stack_smash.toml"),
        marker: "line_ok",
        tiers: &[(0x4001_1000, Tier::T1), (0x4001_1004, Tier::T1)],
        planted_bug: true,
    },
    Sample {
        name: "oob_write_512",
        source: with_app!("oob_write_512.s"),
        config: include_str!("../corpus/oob_write_512.toml"),
        marker: "pkt_ok",
        tiers: &[(0x4001_1000, Tier::T1), (0x4001_1004, Tier::T1)],
        planted_bug: true,
    },
    Sample {
        name: "double_free_analog",
        source: with_app!("double_free_analog.s"),
        config: include_str!("../corpus/double_free_analog.toml"),
        marker: "req_ok",
        tiers: &[(0x4001_1000, Tier::T1), (0x4001_1004, Tier::T1)],
        planted_bug: true,
    },
    Sample {
        name: "t0_config",
        source: with_app!("t0_config.s"),
        config: include_str!("../corpus/t0_config.toml"),
        marker: "spi_ok",
        tiers: &[(0x4001_3000, Tier::T0), (0x4001_3004, Tier::T0)],
        planted_bug: false,
    },
    Sample {
        name: "fig1",
        source: with_app!("fig1.s"),
        config: include_str!("../corpus/fig1.toml"),
        marker: "both_ok",
        tiers: &[(0x4006_4006, Tier::T2)],
        planted_bug: false,
    },
];

pub fn samples() -> &'static [Sample] {
    SAMPLES
}

pub fn sample(name: &str) -> Option<&'static Sample> {
    SAMPLES.iter().find(|s| s.name == name)
}

/// Small programs exercising one detector each.
#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub source: &'static str,
}

impl Fixture {
    pub fn build(&self) -> Result<Project, ProjectError> {
        Project::from_source(self.source, "")
    }
}

const FIXTURES: &[Fixture] = &[
    Fixture { name: "halt_loop", source: include_str!("../corpus/halt_loop.s") },
    Fixture { name: "timeout", source: include_str!("../corpus/timeout.s") },
    Fixture { name: "memset", source: include_str!("../corpus/memset.s") },
    Fixture { name: "limitation", source: include_str!("../corpus/limitation.s") },
];

pub fn fixtures() -> &'static [Fixture] {
    FIXTURES
}

pub fn fixture(name: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name)
}
