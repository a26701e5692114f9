#![allow(dead_code)]

pub mod net;
pub mod quotes;
pub mod reference;
pub mod rules_oracle;

use std::path::PathBuf;

use portvm_core::vm::{assemble, Module};

pub fn fixture_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn program(name: &str) -> Module {
    let src = std::fs::read_to_string(fixture_path(&format!("programs/{name}.pasm")))
        .unwrap_or_else(|e| panic!("{name}: {e}"));
    assemble(&src).unwrap()
}

/// State captured at the `stops`-th stable point (or the last one reached).
pub fn state_at(
    m: &Module,
    policy: portvm_core::vm::CheckpointPolicy,
    stops: usize,
) -> portvm_core::vm::ExecutionState {
    use portvm_core::vm::{instantiate, Fuel, RunOutcome};
    let mut inst = instantiate(m, policy);
    let mut last = inst.capture().unwrap();
    for _ in 0..stops {
        match inst.run_until_stable(Fuel::Unlimited).unwrap() {
            RunOutcome::CheckpointReached(_) => last = inst.capture().unwrap(),
            _ => break,
        }
    }
    last
}
