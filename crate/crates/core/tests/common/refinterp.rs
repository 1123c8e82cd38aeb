//! Plain concrete interpreter working directly on instruction bytes, plus a
//! generator of random concrete programs. Shares nothing with the library
//! beyond the byte layout of the image.

use rand::Rng;

pub const ROM_BASE: u32 = 0;
pub const ROM_SIZE: u32 = 0x1_0000;
pub const RAM_BASE: u32 = 0x2000_0000;
pub const RAM_SIZE: u32 = 0x1_0000;
pub const MMIO_BASE: u32 = 0x4000_0000;
pub const MMIO_SIZE: u32 = 0x2000_0000;
pub const SYS_BASE: u32 = 0xE000_E000;
pub const SYS_SIZE: u32 = 0x1000;
pub const INITIAL_SP: u32 = RAM_BASE + RAM_SIZE;
pub const CODE_BASE: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefStop {
    Halted,
    Fault,
}

#[derive(Clone)]
pub struct RefMachine {
    pub regs: [u32; 16],
    pub ram: Vec<u8>,
    rom: Vec<u8>,
}

fn within(addr: u32, n: u32, base: u32, size: u32) -> bool {
    addr >= base && addr as u64 + n as u64 <= base as u64 + size as u64
}

#[derive(PartialEq)]
enum Space {
    Rom,
    Ram,
    Mmio,
}

fn space(addr: u32, n: u32) -> Option<Space> {
    if within(addr, n, ROM_BASE, ROM_SIZE) {
        Some(Space::Rom)
    } else if within(addr, n, RAM_BASE, RAM_SIZE) {
        Some(Space::Ram)
    } else if within(addr, n, MMIO_BASE, MMIO_SIZE) {
        Some(Space::Mmio)
    } else if within(addr, 1, SYS_BASE, SYS_SIZE) {
        panic!("reference interpreter does not model the system region ({addr:#x})");
    } else {
        None
    }
}

impl RefMachine {
    pub fn new(image: &[u8]) -> RefMachine {
        let mut rom = image.to_vec();
        rom.resize(ROM_SIZE as usize, 0);
        let word = |o: usize| u32::from_le_bytes(rom[o..o + 4].try_into().unwrap());
        let mut regs = [0u32; 16];
        regs[13] = word(0);
        regs[15] = word(4);
        RefMachine { regs, ram: vec![0; RAM_SIZE as usize], rom }
    }

    pub fn pc(&self) -> u32 {
        self.regs[15]
    }

    fn set(&mut self, r: u8, v: u32) {
        if r != 15 {
            self.regs[r as usize] = v;
        }
    }

    fn get(&self, r: u8) -> u32 {
        self.regs[r as usize]
    }

    fn load(&self, addr: u32, word: bool) -> Result<u32, RefStop> {
        if word && addr % 4 != 0 {
            return Err(RefStop::Fault);
        }
        let n = if word { 4 } else { 1 };
        let bytes: Vec<u8> = match space(addr, n).ok_or(RefStop::Fault)? {
            Space::Rom => self.rom[(addr - ROM_BASE) as usize..][..n as usize].to_vec(),
            Space::Ram => self.ram[(addr - RAM_BASE) as usize..][..n as usize].to_vec(),
            Space::Mmio => vec![0; n as usize],
        };
        Ok(bytes.iter().rev().fold(0u32, |acc, b| acc << 8 | *b as u32))
    }

    fn store(&mut self, addr: u32, word: bool, v: u32) -> Result<(), RefStop> {
        if word && addr % 4 != 0 {
            return Err(RefStop::Fault);
        }
        let n = if word { 4 } else { 1 };
        match space(addr, n).ok_or(RefStop::Fault)? {
            Space::Rom => Err(RefStop::Fault),
            Space::Ram => {
                let o = (addr - RAM_BASE) as usize;
                for k in 0..n as usize {
                    self.ram[o + k] = (v >> (8 * k)) as u8;
                }
                Ok(())
            }
            Space::Mmio => Ok(()),
        }
    }

    /// Executes one instruction. `Some` means the machine stopped and the
    /// state is unchanged by the stopping instruction.
    pub fn step(&mut self) -> Option<RefStop> {
        match self.exec() {
            Ok(None) => None,
            Ok(Some(s)) | Err(s) => Some(s),
        }
    }

    fn exec(&mut self) -> Result<Option<RefStop>, RefStop> {
        let pc = self.pc();
        if pc % 2 != 0 || !within(pc, 8, ROM_BASE, ROM_SIZE) {
            return Err(RefStop::Fault);
        }
        let b = &self.rom[(pc - ROM_BASE) as usize..][..8];
        let (op, rd, rs, rt) = (b[0], b[1], b[2], b[3]);
        let imm = u32::from_le_bytes([b[4], b[5], b[6], b[7]]);
        if op > 0x19 || rd > 15 || rs > 15 || rt > 15 {
            return Err(RefStop::Fault);
        }
        let rv = |m: &RefMachine, r: u8| if r == 15 { pc } else { m.get(r) };
        let shl = |a: u32, n: u32| if n >= 32 { 0 } else { a << n };
        let shr = |a: u32, n: u32| if n >= 32 { 0 } else { a >> n };
        let mut next = pc.wrapping_add(8);
        match op {
            0x00 => {}
            0x01 => return Ok(Some(RefStop::Halted)),
            0x02 => self.set(rd, imm),
            0x03 => self.set(rd, rv(self, rs)),
            0x04..=0x0A => {
                let (a, c) = (rv(self, rs), rv(self, rt));
                let v = match op {
                    0x04 => a.wrapping_add(c),
                    0x05 => a.wrapping_sub(c),
                    0x06 => a & c,
                    0x07 => a | c,
                    0x08 => a ^ c,
                    0x09 => shl(a, c),
                    _ => shr(a, c),
                };
                self.set(rd, v);
            }
            0x0B => self.set(rd, rv(self, rs).wrapping_add(imm)),
            0x0C => self.set(rd, rv(self, rs) & imm),
            0x0D => self.set(rd, rv(self, rs) | imm),
            0x0E | 0x0F => {
                let v = self.load(rv(self, rs).wrapping_add(imm), op == 0x0E)?;
                self.set(rd, v);
            }
            0x10 | 0x11 => {
                let v = rv(self, rt);
                self.store(rv(self, rs).wrapping_add(imm), op == 0x10, v)?;
            }
            0x12..=0x15 => {
                let (a, c) = (rv(self, rd), rv(self, rs));
                let taken = match op {
                    0x12 => a == c,
                    0x13 => a != c,
                    0x14 => a < c,
                    _ => a >= c,
                };
                if taken {
                    next = imm;
                }
            }
            0x16 => next = imm,
            0x17 => {
                self.regs[14] = next;
                next = imm;
            }
            0x18 => next = self.regs[14],
            _ => return Err(RefStop::Fault),
        }
        self.regs[15] = next;
        Ok(None)
    }

    /// Runs until a stop or `max_steps` instructions.
    pub fn run(&mut self, max_steps: usize) -> Option<RefStop> {
        for _ in 0..max_steps {
            if let Some(s) = self.step() {
                return Some(s);
            }
        }
        None
    }
}

fn insn(op: u8, rd: u8, rs: u8, rt: u8, imm: u32) -> [u8; 8] {
    let i = imm.to_le_bytes();
    [op, rd, rs, rt, i[0], i[1], i[2], i[3]]
}

fn pick_imm(rng: &mut impl Rng, starts: &[u32]) -> u32 {
    match rng.gen_range(0..6) {
        0 => rng.gen_range(0..64),
        1 => RAM_BASE + rng.gen_range(0..RAM_SIZE),
        2 => starts[rng.gen_range(0..starts.len())],
        3 => 0xFFFF_FFFF - rng.gen_range(0..16),
        _ => rng.gen(),
    }
}

fn mem_addr(rng: &mut impl Rng) -> u32 {
    match rng.gen_range(0..8) {
        0 => RAM_BASE + rng.gen_range(0..RAM_SIZE),
        1 => RAM_BASE + RAM_SIZE - rng.gen_range(1..6),
        2 => rng.gen_range(0..ROM_SIZE),
        3 => MMIO_BASE + rng.gen_range(0..0x1000),
        4 => 0x1000_0000 + rng.gen_range(0..0x1000),
        _ => RAM_BASE + 4 * rng.gen_range(0..64),
    }
}

/// Image of `len` random instructions behind a two-word vector table and
/// terminated by `halt`. Memory accesses are preceded by a `movi` of their
/// base register, and control transfers land only on such group starts.
pub fn random_program(rng: &mut impl Rng, len: usize) -> Vec<u8> {
    let mut groups: Vec<usize> = Vec::new();
    let mut n = 0;
    while n < len {
        let g = if len - n >= 2 && rng.gen_bool(0.25) { 2 } else { 1 };
        groups.push(g);
        n += g;
    }
    let mut starts = Vec::with_capacity(groups.len() + 1);
    let mut at = CODE_BASE;
    for g in &groups {
        starts.push(at);
        at += 8 * *g as u32;
    }
    let end = at;
    starts.push(end);

    let mut code: Vec<[u8; 8]> = Vec::new();
    let reg = |rng: &mut _| -> u8 { Rng::gen_range(rng, 0..16) };
    for (gi, g) in groups.iter().enumerate() {
        if *g == 2 {
            let base = reg(rng);
            let op = [0x0E, 0x0F, 0x10, 0x11][rng.gen_range(0..4)];
            code.push(insn(0x02, base, 0, 0, mem_addr(rng)));
            let off = if rng.gen_bool(0.8) { 0 } else { rng.gen_range(0..8) };
            code.push(insn(op, reg(rng), base, reg(rng), off));
            continue;
        }
        let forward = |rng: &mut _| starts[Rng::gen_range(rng, gi + 1..starts.len())];
        let anywhere = |rng: &mut _| starts[Rng::gen_range(rng, 0..starts.len())];
        let w = match rng.gen_range(0..100) {
            0..=17 => insn(0x02, reg(rng), 0, 0, pick_imm(rng, &starts)),
            18..=25 => insn(0x03, reg(rng), reg(rng), 0, 0),
            26..=55 => insn(rng.gen_range(0x04..=0x0A), reg(rng), reg(rng), reg(rng), 0),
            56..=69 => insn(rng.gen_range(0x0B..=0x0D), reg(rng), reg(rng), 0, pick_imm(rng, &starts)),
            70..=81 => {
                let t = if rng.gen_bool(0.8) { forward(rng) } else { anywhere(rng) };
                insn(rng.gen_range(0x12..=0x15), reg(rng), reg(rng), 0, t)
            }
            82..=85 => insn(0x16, 0, 0, 0, forward(rng)),
            86..=90 => insn(0x17, 0, 0, 0, forward(rng)),
            91..=94 => insn(0x18, 0, 0, 0, 0),
            95 => insn(0x19, 0, 0, 0, 0),
            96 => insn(0x01, 0, 0, 0, 0),
            _ => insn(0x00, 0, 0, 0, 0),
        };
        code.push(w);
    }
    let mut image = Vec::with_capacity(8 + 8 * (code.len() + 1));
    image.extend_from_slice(&INITIAL_SP.to_le_bytes());
    image.extend_from_slice(&CODE_BASE.to_le_bytes());
    for w in &code {
        image.extend_from_slice(w);
    }
    image.extend_from_slice(&insn(0x01, 0, 0, 0, 0));
    image
}
