//! Edge coverage over block transitions.

pub const MAP_SIZE: usize = 1 << 16;

/// Map index of a block start address.
pub fn block_id(addr: u32) -> u16 {
    let h = (addr ^ (addr >> 15)).wrapping_mul(0x9E37_79B1);
    (h >> 16) as u16
}

/// Hit counts of a single execution.
#[derive(Debug, Clone)]
pub struct TraceMap {
    hits: Vec<u8>,
    touched: Vec<u16>,
    prev: u16,
}

impl Default for TraceMap {
    fn default() -> Self {
        TraceMap::new()
    }
}

impl TraceMap {
    pub fn new() -> TraceMap {
        TraceMap { hits: vec![0; MAP_SIZE], touched: Vec::new(), prev: 0 }
    }

    pub fn clear(&mut self) {
        for &i in &self.touched {
            self.hits[i as usize] = 0;
        }
        self.touched.clear();
        self.prev = 0;
    }

    pub fn visit(&mut self, block: u32) {
        let cur = block_id(block);
        let i = cur ^ self.prev;
        let h = &mut self.hits[i as usize];
        if *h == 0 {
            self.touched.push(i);
        }
        *h = h.saturating_add(1);
        self.prev = cur >> 1;
    }

    /// Replaces raw counts by their power-of-two bucket.
    pub fn classify(&mut self) {
        for &i in &self.touched {
            let h = &mut self.hits[i as usize];
            *h = bucket(*h);
        }
    }

    pub fn get(&self, i: u16) -> u8 {
        self.hits[i as usize]
    }

    pub fn edges(&self) -> usize {
        self.touched.len()
    }

    /// Indices with a non-zero count, in first-hit order.
    pub fn touched(&self) -> &[u16] {
        &self.touched
    }
}

pub fn bucket(n: u8) -> u8 {
    match n {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        16..=31 => 32,
        32..=127 => 64,
        _ => 128,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NewBits {
    None,
    /// A known edge in a new count bucket.
    Counts,
    Edges,
}

/// Bits not yet seen by any execution; starts all ones.
#[derive(Debug, Clone)]
pub struct VirginMap {
    bits: Vec<u8>,
    edges: usize,
}

impl Default for VirginMap {
    fn default() -> Self {
        VirginMap::new()
    }
}

impl VirginMap {
    pub fn new() -> VirginMap {
        VirginMap { bits: vec![0xFF; MAP_SIZE], edges: 0 }
    }

    /// Folds a classified trace in.
    pub fn merge(&mut self, trace: &TraceMap) -> NewBits {
        let mut ret = NewBits::None;
        for &i in trace.touched() {
            let t = trace.get(i);
            let v = &mut self.bits[i as usize];
            if t & *v != 0 {
                if *v == 0xFF {
                    self.edges += 1;
                    ret = NewBits::Edges;
                } else if ret == NewBits::None {
                    ret = NewBits::Counts;
                }
                *v &= !t;
            }
        }
        ret
    }

    /// Number of edges seen so far.
    pub fn edges(&self) -> usize {
        self.edges
    }
}
