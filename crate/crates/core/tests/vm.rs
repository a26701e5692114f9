mod common;

use common::program;
use common::reference::{reference_run, RefOutcome};
use portvm_core::vm::progen::{corpus, generate};
use portvm_core::vm::{
    instantiate, restore, CheckpointPolicy, ExecutionState, Fuel, Instance, Instr, Position,
    RunOutcome, StablePoints, VmError,
};
use proptest::prelude::*;

/// SUM10 assembled by hand.
fn sum10_listing() -> Vec<Instr> {
    use Instr::*;
    vec![
        Const(0),
        LocalSet(0),
        Const(1),
        LocalSet(1),
        LocalGet(0),
        LocalGet(1),
        Add,
        LocalSet(0),
        LocalGet(1),
        Const(1),
        Add,
        LocalSet(1),
        LocalGet(1),
        Const(11),
        LtS,
        BrIf(4),
        LocalGet(0),
        Halt,
    ]
}

fn finish(inst: &mut Instance) -> RunOutcome {
    inst.run(Fuel::Unlimited).unwrap()
}

#[test]
fn sum10_matches_golden_listing() {
    let m = program("sum10");
    assert_eq!(m.functions().len(), 1);
    assert_eq!(m.functions()[0].code, sum10_listing());
    let loop_points: Vec<Position> = StablePoints::compute(&m, CheckpointPolicy::Loop).positions().collect();
    assert_eq!(loop_points, vec![Position::new(0, 0), Position::new(0, 4)]);
}

#[test]
fn fixtures_agree_with_reference_interpreter() {
    for (name, want) in [("sum10", 55), ("fib", 610), ("memfill", 328350)] {
        let m = program(name);
        let (ref_outcome, ref_mem) = reference_run(&m);
        assert_eq!(ref_outcome, RefOutcome::Halted(want), "{name}");
        let mut inst = instantiate(&m, CheckpointPolicy::Loop);
        assert_eq!(finish(&mut inst), RunOutcome::Halted(want), "{name}");
        assert_eq!(inst.memory(), &ref_mem[..], "{name}");
    }
}

/// Positions visited, found by stepping one instruction at a time.
fn single_step_hits(m: &portvm_core::vm::Module, at: Position) -> Vec<(u64, Vec<i64>)> {
    let mut inst = instantiate(m, CheckpointPolicy::Loop);
    let mut hits = Vec::new();
    loop {
        match inst.run(Fuel::Limited(1)).unwrap() {
            RunOutcome::FuelExhausted => {
                if inst.position() == at {
                    hits.push((inst.steps_executed(), inst.frames()[0].locals.clone()));
                }
            }
            _ => return hits,
        }
    }
}

#[test]
fn sum10_loop_policy_stops_at_back_edge() {
    let m = program("sum10");
    let hits = single_step_hits(&m, Position::new(0, 4));
    assert_eq!(hits.len(), 10);

    let mut inst = instantiate(&m, CheckpointPolicy::Loop);
    let first = inst.run_until_stable(Fuel::Unlimited).unwrap();
    assert_eq!(first, RunOutcome::CheckpointReached(Position::new(0, 4)));
    assert_eq!(inst.steps_executed(), hits[0].0);

    let mut stops = 1;
    loop {
        match inst.run_until_stable(Fuel::Unlimited).unwrap() {
            RunOutcome::CheckpointReached(p) => {
                assert_eq!(p, Position::new(0, 4));
                assert_eq!(inst.steps_executed(), hits[stops].0);
                stops += 1;
            }
            RunOutcome::Halted(v) => {
                assert_eq!(v, 55);
                break;
            }
            other => panic!("{other:?}"),
        }
    }
    assert_eq!(stops, 10);
}

#[test]
fn sum10_capture_after_five_iterations() {
    let m = program("sum10");
    let hits = single_step_hits(&m, Position::new(0, 4));
    // hit 0 is the loop entry, hit k follows iteration k
    assert_eq!(hits[5].1, vec![15, 6]);

    let mut inst = instantiate(&m, CheckpointPolicy::Loop);
    for _ in 0..6 {
        assert!(matches!(
            inst.run_until_stable(Fuel::Unlimited).unwrap(),
            RunOutcome::CheckpointReached(_)
        ));
    }
    let state = inst.capture().unwrap();
    assert_eq!(state.frames[0].locals, vec![15, 6]);
    assert_eq!(state.steps_executed, hits[5].0);

    let mut resumed = restore(&m, &state, CheckpointPolicy::Loop).unwrap();
    assert_eq!(finish(&mut resumed), RunOutcome::Halted(55));
    // the capturing instance is still runnable and agrees
    assert_eq!(finish(&mut inst), RunOutcome::Halted(55));
    assert_eq!(resumed.steps_executed(), inst.steps_executed());
}

#[test]
fn capture_mid_instruction_is_rejected() {
    let m = program("sum10");
    let mut inst = instantiate(&m, CheckpointPolicy::Loop);
    inst.run_until_stable(Fuel::Unlimited).unwrap();
    inst.force_mid_instruction();
    assert_eq!(inst.capture(), Err(VmError::NotAtStablePoint));
}

#[test]
fn edited_constant_changes_measurement() {
    let m = program("sum10");
    let src = std::fs::read_to_string(common::fixture_path("programs/sum10.pasm")).unwrap();
    let edited = portvm_core::vm::assemble(&src.replace("const.i64 11", "const.i64 12")).unwrap();
    let mut inst = instantiate(&m, CheckpointPolicy::Loop);
    inst.run_until_stable(Fuel::Unlimited).unwrap();
    let state = inst.capture().unwrap();
    assert!(matches!(
        restore(&edited, &state, CheckpointPolicy::Loop),
        Err(VmError::MeasurementMismatch { .. })
    ));
}

#[test]
fn function_points_subset_of_loop_points() {
    for p in corpus(500, 30) {
        let f: Vec<_> = StablePoints::compute(&p.module, CheckpointPolicy::Function).positions().collect();
        let l = StablePoints::compute(&p.module, CheckpointPolicy::Loop);
        assert!(f.iter().all(|pos| l.contains(*pos)), "seed {}", p.seed);
    }
}

#[test]
fn generated_programs_agree_with_reference() {
    for p in corpus(0, 40) {
        let (want, want_mem) = reference_run(&p.module);
        let mut inst = instantiate(&p.module, CheckpointPolicy::Function);
        let got = finish(&mut inst);
        match want {
            RefOutcome::Halted(v) => assert_eq!(got, RunOutcome::Halted(v), "seed {}", p.seed),
            RefOutcome::Trapped => assert!(matches!(got, RunOutcome::Trap(_)), "seed {}", p.seed),
        }
        assert_eq!(inst.memory(), &want_mem[..], "seed {}", p.seed);
    }
}

#[test]
fn identical_instances_produce_identical_traces() {
    for p in corpus(77, 10) {
        for policy in CheckpointPolicy::ALL {
            let trace = |mut i: Instance| {
                let mut t = Vec::new();
                while let RunOutcome::FuelExhausted = i.run(Fuel::Limited(1)).unwrap() {
                    t.push((i.position(), i.frames().last().map(|f| f.operands.clone())));
                }
                t.push((i.position(), None));
                t
            };
            assert_eq!(
                trace(instantiate(&p.module, policy)),
                trace(instantiate(&p.module, policy))
            );
        }
    }
}

/// Run to completion, capturing and restoring at the stable points selected by `interrupts`.
fn run_with_interruptions(
    m: &portvm_core::vm::Module,
    policy: CheckpointPolicy,
    interrupts: &[bool],
) -> (RunOutcome, Vec<u8>) {
    let mut inst = instantiate(m, policy);
    let mut k = 0;
    loop {
        match inst.run_until_stable(Fuel::Unlimited).unwrap() {
            RunOutcome::CheckpointReached(_) => {
                if interrupts.get(k).copied().unwrap_or(false) {
                    let bytes = inst.capture().unwrap().to_bytes();
                    let state = ExecutionState::from_bytes(&bytes).unwrap();
                    inst = restore(m, &state, policy).unwrap();
                }
                k += 1;
            }
            terminal => return (terminal, inst.memory().to_vec()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn capture_restore_is_transparent(seed in 0u64..10_000, mask in proptest::collection::vec(any::<bool>(), 64)) {
        let p = generate(seed);
        for policy in CheckpointPolicy::ALL {
            let mut plain = instantiate(&p.module, policy);
            let want = finish(&mut plain);
            let got = run_with_interruptions(&p.module, policy, &mask);
            prop_assert_eq!(got.0, want);
            prop_assert_eq!(&got.1[..], plain.memory());
        }
    }

    #[test]
    fn capture_of_restore_is_idempotent(seed in 0u64..10_000, stops in 0usize..12) {
        let p = generate(seed);
        let mut inst = instantiate(&p.module, CheckpointPolicy::Loop);
        for _ in 0..stops {
            if !matches!(inst.run_until_stable(Fuel::Unlimited).unwrap(), RunOutcome::CheckpointReached(_)) {
                return Ok(());
            }
        }
        let s = inst.capture().unwrap();
        let again = restore(&p.module, &s, CheckpointPolicy::Loop).unwrap().capture().unwrap();
        prop_assert_eq!(again.to_bytes(), s.to_bytes());
    }
}
