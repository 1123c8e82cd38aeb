#![allow(dead_code)]

pub mod refinterp;
pub mod rexpr;

use std::sync::Arc;

use kbemu::exec::{step, NullHooks, StepOutcome};
use kbemu::firmware::Firmware;
use kbemu::irq::Intervals;
use kbemu::memory::MemoryMap;
use kbemu::state::ExecState;

use refinterp::RefStop;

/// Final registers, RAM and stop reason after running `image` on the
/// library stepper with reads from peripherals returning zero.
pub fn run_stepper(image: &[u8], max_steps: usize) -> (Option<RefStop>, [u32; 16], Vec<u8>) {
    let fw = Arc::new(Firmware::new(image, MemoryMap::default()).expect("valid image"));
    let mut st = ExecState::new(fw, Intervals::default(), 64);
    let mut stop = None;
    for _ in 0..max_steps {
        match step(&mut st, &mut NullHooks) {
            StepOutcome::Continue { .. } => {}
            StepOutcome::Halted => {
                stop = Some(RefStop::Halted);
                break;
            }
            StepOutcome::Fault(_) => {
                stop = Some(RefStop::Fault);
                break;
            }
            StepOutcome::BranchOnSymbol { .. } => panic!("symbolic branch in a concrete program"),
        }
    }
    let regs = std::array::from_fn(|i| st.cpu.regs[i].concrete().expect("concrete register"));
    (stop, regs, st.ram.bytes())
}
