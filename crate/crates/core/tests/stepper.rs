mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kbemu::asm::assemble;
use kbemu::exec::{enter_interrupt, step, EngineHooks, NullHooks, StepOutcome};
use kbemu::firmware::Firmware;
use kbemu::invalidity::{check_after_block, DetectorConfig, InvalidKind};
use kbemu::irq::Intervals;
use kbemu::isa::{Reg, Width};
use kbemu::memory::MemoryMap;
use kbemu::state::{ExecState, Mode, TaggedWord};

use common::refinterp::{random_program, RefMachine};

fn machine(image: &[u8]) -> ExecState {
    let fw = Arc::new(Firmware::new(image, MemoryMap::default()).unwrap());
    ExecState::new(fw, Intervals::default(), 64)
}

/// Peripheral reads become fresh symbols.
struct Symbolic;

impl EngineHooks for Symbolic {
    fn mmio_read(&mut self, st: &mut ExecState, addr: u32, width: Width) -> TaggedWord {
        let pc = st.pc();
        let w = if width == Width::Byte { 8 } else { 32 };
        let e = st.new_symbol(addr, pc, w, 0, None);
        TaggedWord::from_expr(if w == 8 { e.zext(32) } else { e })
    }
    fn mmio_write(&mut self, _: &mut ExecState, _: u32, _: Width, _: u32) {}
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn concrete_programs_match_reference(seed in any::<u64>()) {
        let image = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 50);
        let mut m = RefMachine::new(&image);
        let want = m.run(2000);
        let (got, regs, ram) = common::run_stepper(&image, 2000);
        prop_assert_eq!(got, want);
        prop_assert_eq!(regs, m.regs);
        prop_assert!(ram == m.ram);
    }

    #[test]
    fn stepping_is_deterministic(seed in any::<u64>()) {
        let image = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 50);
        let a = common::run_stepper(&image, 2000);
        let b = common::run_stepper(&image, 2000);
        prop_assert!(a == b);
    }

    #[test]
    fn pc_is_never_symbolic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = random_program(&mut rng, 50);
        let mut st = machine(&image);
        for _ in 0..2000 {
            match step(&mut st, &mut Symbolic) {
                StepOutcome::Continue { .. } => {}
                StepOutcome::BranchOnSymbol { cond, true_target, false_target } => {
                    let (t, f) = st.fork(&cond, true_target, false_target);
                    st = if rng.gen_bool(0.5) { t } else { f };
                }
                StepOutcome::Halted | StepOutcome::Fault(_) => break,
            }
            prop_assert!(st.cpu.regs[Reg::PC.index()].concrete().is_some());
        }
    }

    #[test]
    fn interrupt_entry_then_iret_restores_context(
        low in prop::array::uniform4(any::<u32>()),
        lr in any::<u32>(),
        sp_slot in 6u32..0x4000,
    ) {
        let a = assemble(".word 0x20010000, reset, handler\nreset:\n nop\n halt\nhandler:\n movi r0, 7\n movi r3, 9\n iret\n").unwrap();
        let mut st = machine(&a.image);
        for (i, v) in low.iter().enumerate() {
            st.cpu.regs[i] = TaggedWord::Concrete(*v);
        }
        st.cpu.regs[Reg::LR.index()] = TaggedWord::Concrete(lr);
        st.cpu.regs[Reg::SP.index()] = TaggedWord::Concrete(0x2000_0000 + 4 * sp_slot);
        let before = st.cpu.clone();
        enter_interrupt(&mut st, 0).unwrap();
        prop_assert_eq!(st.cpu.mode, Mode::Handler(0));
        for _ in 0..3 {
            let out = step(&mut st, &mut NullHooks);
            prop_assert!(matches!(out, StepOutcome::Continue { .. }), "{:?}", out);
        }
        for r in [0, 1, 2, 3, Reg::LR.index(), Reg::PC.index(), Reg::SP.index()] {
            prop_assert_eq!(&st.cpu.regs[r], &before.regs[r]);
        }
        prop_assert_eq!(st.cpu.mode, before.mode);
    }

    #[test]
    fn loop_detectors_need_symbols(seed in any::<u64>()) {
        let image = random_program(&mut ChaCha8Rng::seed_from_u64(seed), 50);
        let mut st = machine(&image);
        let cfg = DetectorConfig { bb_inv1: 4, bb_inv2: 2, ..DetectorConfig::default() };
        for _ in 0..3000 {
            match step(&mut st, &mut NullHooks) {
                StepOutcome::Continue { block_end: false } => continue,
                StepOutcome::Continue { block_end: true } => {}
                _ => break,
            }
            st.finish_block();
            if let Some(r) = check_after_block(&mut st, &cfg) {
                prop_assert!(!matches!(r.kind, InvalidKind::InfiniteLoop | InvalidKind::LongLoop), "{}", r);
            }
        }
    }
}

#[test]
fn symbolic_spin_is_an_infinite_loop() {
    let a = assemble(".word 0x20010000, reset\nreset:\n movi r5, 0x40000000\n ldw r1, [r5]\nspin:\n jmp spin\n").unwrap();
    let mut st = machine(&a.image);
    let cfg = DetectorConfig::default();
    let mut fired = None;
    for _ in 0..100 {
        if let StepOutcome::Continue { block_end: true } = step(&mut st, &mut Symbolic) {
            st.finish_block();
            if let Some(r) = check_after_block(&mut st, &cfg) {
                fired = Some(r);
                break;
            }
        }
    }
    assert_eq!(fired.map(|r| r.kind), Some(InvalidKind::InfiniteLoop));
}
