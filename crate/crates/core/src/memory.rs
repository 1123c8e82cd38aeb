//! Memory map: region layout and permission checks.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionKind {
    Rom,
    Ram,
    Mmio,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Perms {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
}

impl Perms {
    pub const RX: Perms = Perms { read: true, write: false, execute: true };
    pub const RW: Perms = Perms { read: true, write: true, execute: false };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub base: u32,
    pub size: u32,
    pub kind: RegionKind,
    pub perms: Perms,
}

impl Region {
    pub fn new(kind: RegionKind, base: u32, size: u32) -> Region {
        let perms = match kind {
            RegionKind::Rom => Perms::RX,
            _ => Perms::RW,
        };
        Region { base, size, kind, perms }
    }

    /// Exclusive end as u64 so regions touching 4 GiB do not overflow.
    pub fn end(&self) -> u64 {
        self.base as u64 + self.size as u64
    }

    pub fn contains(&self, addr: u32) -> bool {
        addr >= self.base && (addr as u64) < self.end()
    }

    pub fn contains_range(&self, addr: u32, len: u32) -> bool {
        self.contains(addr) && addr as u64 + len as u64 <= self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("regions {0:#x} and {1:#x} overlap")]
    Overlap(u32, u32),
    #[error("region at {0:#x} is not 4-byte aligned")]
    Misaligned(u32),
    #[error("expected exactly one {0:?} region, found {1}")]
    Count(RegionKind, usize),
    #[error("region at {0:#x} is empty")]
    Empty(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryMap {
    regions: Vec<Region>,
}

pub const DEFAULT_ROM: (u32, u32) = (0x0000_0000, 0x1_0000);
pub const DEFAULT_RAM: (u32, u32) = (0x2000_0000, 0x1_0000);
pub const DEFAULT_MMIO: (u32, u32) = (0x4000_0000, 0x2000_0000);
pub const DEFAULT_SYSTEM: (u32, u32) = (0xE000_E000, 0x1000);

impl Default for MemoryMap {
    fn default() -> Self {
        MemoryMap::new(vec![
            Region::new(RegionKind::Rom, DEFAULT_ROM.0, DEFAULT_ROM.1),
            Region::new(RegionKind::Ram, DEFAULT_RAM.0, DEFAULT_RAM.1),
            Region::new(RegionKind::Mmio, DEFAULT_MMIO.0, DEFAULT_MMIO.1),
            Region::new(RegionKind::System, DEFAULT_SYSTEM.0, DEFAULT_SYSTEM.1),
        ])
        .expect("default map is valid")
    }
}

impl MemoryMap {
    pub fn new(mut regions: Vec<Region>) -> Result<MemoryMap, MapError> {
        regions.sort_by_key(|r| r.base);
        for r in &regions {
            if r.size == 0 {
                return Err(MapError::Empty(r.base));
            }
            if r.base % 4 != 0 || r.size % 4 != 0 {
                return Err(MapError::Misaligned(r.base));
            }
        }
        for w in regions.windows(2) {
            if w[0].end() > w[1].base as u64 {
                return Err(MapError::Overlap(w[0].base, w[1].base));
            }
        }
        for kind in [RegionKind::Rom, RegionKind::Ram] {
            let n = regions.iter().filter(|r| r.kind == kind).count();
            if n != 1 {
                return Err(MapError::Count(kind, n));
            }
        }
        Ok(MemoryMap { regions })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn find(&self, addr: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.contains(addr))
    }

    pub fn rom(&self) -> &Region {
        self.only(RegionKind::Rom)
    }

    pub fn ram(&self) -> &Region {
        self.only(RegionKind::Ram)
    }

    fn only(&self, kind: RegionKind) -> &Region {
        self.regions.iter().find(|r| r.kind == kind).expect("validated at construction")
    }

    pub fn system_regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.kind == RegionKind::System)
    }

    pub fn is_mmio(&self, addr: u32) -> bool {
        self.find(addr).is_some_and(|r| r.kind == RegionKind::Mmio)
    }
}
