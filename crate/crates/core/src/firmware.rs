//! A loaded firmware image: ROM bytes, memory map and pre-decoded code.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::isa::{decode, DecodeError, Instruction, INSN_LEN};
use crate::memory::MemoryMap;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FirmwareError {
    #[error("image of {len} bytes does not fit the {rom} byte ROM")]
    TooLarge { len: usize, rom: u32 },
    #[error("image is shorter than the 8-byte vector table header")]
    NoVectorTable,
    #[error("vector {index} points to {addr:#x}, outside ROM")]
    VectorOutsideRom { index: u32, addr: u32 },
}

#[derive(Debug, Clone)]
pub struct Firmware {
    pub map: MemoryMap,
    rom: Vec<u8>,
    image_len: usize,
    decoded: Vec<Result<Instruction, DecodeError>>,
    pub symbols: BTreeMap<String, u32>,
    entry: Option<u32>,
}

impl Firmware {
    pub fn new(image: &[u8], map: MemoryMap) -> Result<Firmware, FirmwareError> {
        let r = *map.rom();
        if image.len() > r.size as usize {
            return Err(FirmwareError::TooLarge { len: image.len(), rom: r.size });
        }
        if image.len() < 8 {
            return Err(FirmwareError::NoVectorTable);
        }
        let mut rom = image.to_vec();
        rom.resize(r.size as usize, 0);
        let decoded = rom.chunks_exact(INSN_LEN as usize).map(decode).collect();
        let fw = Firmware { map, rom, image_len: image.len(), decoded, symbols: BTreeMap::new(), entry: None };
        let reset = fw.reset_vector();
        if !r.contains(reset) {
            return Err(FirmwareError::VectorOutsideRom { index: 1, addr: reset });
        }
        Ok(fw)
    }

    pub fn with_symbols(mut self, symbols: BTreeMap<String, u32>) -> Firmware {
        self.symbols = symbols;
        self
    }

    /// Overrides the reset vector.
    pub fn with_entry(mut self, entry: u32) -> Result<Firmware, FirmwareError> {
        if !self.map.rom().contains(entry) {
            return Err(FirmwareError::VectorOutsideRom { index: 1, addr: entry });
        }
        self.entry = Some(entry);
        Ok(self)
    }

    pub fn image(&self) -> &[u8] {
        &self.rom[..self.image_len]
    }

    pub fn rom_base(&self) -> u32 {
        self.map.rom().base
    }

    /// Reads a ROM word; `None` outside the image's ROM region.
    pub fn rom_word(&self, addr: u32) -> Option<u32> {
        let off = addr.checked_sub(self.rom_base())? as usize;
        let b = self.rom.get(off..off + 4)?;
        Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn rom_byte(&self, addr: u32) -> Option<u8> {
        let off = addr.checked_sub(self.rom_base())? as usize;
        self.rom.get(off).copied()
    }

    pub fn initial_sp(&self) -> u32 {
        self.rom_word(self.rom_base()).unwrap_or(0)
    }

    pub fn reset_vector(&self) -> u32 {
        if let Some(e) = self.entry {
            return e;
        }
        self.rom_word(self.rom_base() + 4).unwrap_or(0)
    }

    /// Handler address for `irq`, if the vector table holds one inside ROM.
    pub fn irq_vector(&self, irq: u8) -> Option<u32> {
        let addr = self.rom_word(self.rom_base() + 4 * (2 + irq as u32))?;
        (addr != 0 && self.map.rom().contains(addr)).then_some(addr)
    }

    /// Instruction at `pc`, or `None` if `pc` is not inside executable ROM.
    pub fn fetch(&self, pc: u32) -> Option<Result<Instruction, DecodeError>> {
        let r = self.map.rom();
        if !r.contains_range(pc, INSN_LEN) {
            return None;
        }
        let off = (pc - r.base) as usize;
        if off % INSN_LEN as usize == 0 {
            Some(self.decoded[off / INSN_LEN as usize])
        } else {
            Some(decode(&self.rom[off..off + INSN_LEN as usize]))
        }
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }
}
