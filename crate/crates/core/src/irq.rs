//! Interrupt controller model: enable and pending masks plus round-robin
//! injection at a fixed block interval.

use crate::memory::Region;

pub const ISER_OFFSET: u32 = 0x100;
pub const ISPR_OFFSET: u32 = 0x200;
pub const DEFAULT_INTERVAL_EXTRACT: u64 = 2000;
pub const DEFAULT_INTERVAL_ANALYSIS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Extraction,
    Analysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Intervals {
    pub extract: u64,
    pub analysis: u64,
}

impl Default for Intervals {
    fn default() -> Self {
        Intervals { extract: DEFAULT_INTERVAL_EXTRACT, analysis: DEFAULT_INTERVAL_ANALYSIS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrqController {
    pub iser: u32,
    pub ispr: u32,
    pub rr_cursor: u8,
    pub intervals: Intervals,
    pub blocks_since_injection: u64,
    /// IRQs the firmware may not enable, e.g. ones without a handler.
    pub allowed: u32,
    pub injected: u64,
}

impl IrqController {
    pub fn new(intervals: Intervals, allowed: u32) -> IrqController {
        IrqController {
            iser: 0,
            ispr: 0,
            rr_cursor: 0,
            intervals,
            blocks_since_injection: 0,
            allowed,
            injected: 0,
        }
    }

    fn enabled(&self) -> u32 {
        self.iser & self.allowed
    }

    /// Called once per completed block. `in_handler` defers any injection
    /// until the handler returns.
    pub fn tick(&mut self, phase: Phase, in_handler: bool) -> Option<u8> {
        let interval = match phase {
            Phase::Extraction => self.intervals.extract,
            Phase::Analysis => self.intervals.analysis,
        };
        self.blocks_since_injection += 1;
        if in_handler {
            return None;
        }
        let pending = self.ispr & self.enabled();
        if pending != 0 {
            let n = pending.trailing_zeros() as u8;
            return Some(self.deliver(n));
        }
        if interval == 0 || self.blocks_since_injection < interval {
            return None;
        }
        self.blocks_since_injection = 0;
        let en = self.enabled();
        if en == 0 {
            return None;
        }
        let n = (0..32)
            .map(|k| (self.rr_cursor as u32 + k) % 32)
            .find(|&i| en >> i & 1 == 1)
            .expect("nonzero mask") as u8;
        self.rr_cursor = (n + 1) % 32;
        self.ispr |= 1 << n;
        Some(self.deliver(n))
    }

    fn deliver(&mut self, n: u8) -> u8 {
        self.ispr &= !(1 << n);
        self.blocks_since_injection = 0;
        self.injected += 1;
        n
    }

    /// Word read from the system region; `None` if `addr` is not a
    /// controller register.
    pub fn read(&self, system: &Region, addr: u32) -> Option<u32> {
        match addr.wrapping_sub(system.base) {
            ISER_OFFSET => Some(self.iser),
            ISPR_OFFSET => Some(self.ispr),
            _ => None,
        }
    }

    pub fn write(&mut self, system: &Region, addr: u32, value: u32) -> bool {
        match addr.wrapping_sub(system.base) {
            ISER_OFFSET => self.iser = value,
            ISPR_OFFSET => self.ispr |= value,
            _ => return false,
        }
        true
    }
}
