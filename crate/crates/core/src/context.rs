//! Calling-context hash used to key second-tier knowledge-base entries.

use crate::state::{ExecState, Frame};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const CALLER_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy)]
struct Fnv(u64);

impl Fnv {
    fn word(&mut self, w: u32) {
        for b in w.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }
}

/// FNV-1a over the innermost call sites followed by the four argument
/// registers.
pub fn context_hash(frames: &[Frame], args: [u32; 4]) -> u64 {
    let mut h = Fnv(FNV_OFFSET);
    for f in frames.iter().rev().take(CALLER_DEPTH) {
        match *f {
            Frame::Call(site) => h.word(site),
            Frame::Irq(n) => h.word(0xFFFF_FF00 | n as u32),
        }
    }
    h.word(0xFFFF_FFFF);
    for a in args {
        h.word(a);
    }
    h.0
}

/// Context of the current read; symbolic argument registers are
/// concretized under the state's model.
pub fn current_context(st: &ExecState) -> u64 {
    let args = std::array::from_fn(|i| match st.cpu.regs[i].concrete() {
        Some(v) => v,
        None => st.concretize(&st.cpu.regs[i].to_expr()),
    });
    context_hash(&st.call_stack, args)
}
