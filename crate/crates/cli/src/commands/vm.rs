use std::path::PathBuf;

use clap::Args;
use portvm_core::snapshot::{decode_bytes, encode, Codec};
use portvm_core::vm::{instantiate, restore, CheckpointPolicy, Fuel, Instance, RunOutcome};

use crate::error::CliError;
use crate::inputs;

#[derive(Args, Debug)]
pub struct KeyArgs {
    /// Snapshot key as 64 hex digits.
    #[arg(long)]
    pub key: Option<String>,
    /// File holding the snapshot key in hex.
    #[arg(long, value_name = "FILE")]
    pub key_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Module file: assembly text or binary module.
    pub module: PathBuf,
    #[arg(long, default_value = "loop")]
    pub policy: CheckpointPolicy,
    /// Instruction budget; unlimited when omitted.
    #[arg(long)]
    pub fuel: Option<u64>,
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    pub module: PathBuf,
    #[arg(long, default_value = "loop")]
    pub policy: CheckpointPolicy,
    /// Snapshot file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Stable points to pass before capturing; 1 is the first one after start.
    #[arg(long, default_value_t = 1)]
    pub stops: usize,
    #[arg(long, default_value = "deflate")]
    pub codec: Codec,
    #[command(flatten)]
    pub key: KeyArgs,
}

#[derive(Args, Debug)]
pub struct RestoreArgs {
    /// Snapshot file.
    pub snapshot: PathBuf,
    #[arg(long)]
    pub module: PathBuf,
    #[arg(long, default_value = "loop")]
    pub policy: CheckpointPolicy,
    #[arg(long)]
    pub fuel: Option<u64>,
    #[command(flatten)]
    pub key: KeyArgs,
}

fn fuel(n: Option<u64>) -> Fuel {
    n.map_or(Fuel::Unlimited, Fuel::Limited)
}

/// Run to completion and return the halt value.
pub fn finish(inst: &mut Instance, budget: Fuel) -> Result<i64, CliError> {
    match inst.run(budget)? {
        RunOutcome::Halted(v) => Ok(v),
        RunOutcome::Trap(t) => Err(CliError::Trap(t)),
        RunOutcome::FuelExhausted => Err(CliError::FuelExhausted),
        RunOutcome::CheckpointReached(_) => Err(CliError::Internal("run stopped at a stable point".into())),
    }
}

/// Advance through `stops` stable points.
pub fn advance(inst: &mut Instance, stops: usize) -> Result<(), CliError> {
    for i in 0..stops {
        match inst.run_until_stable(Fuel::Unlimited)? {
            RunOutcome::CheckpointReached(p) => log::debug!("stable point {} at {}:{}", i + 1, p.function, p.offset),
            RunOutcome::Halted(v) => {
                return Err(CliError::Usage(format!(
                    "program halted with {v} after {i} stable points, before stop {stops}"
                )))
            }
            RunOutcome::Trap(t) => return Err(CliError::Trap(t)),
            RunOutcome::FuelExhausted => return Err(CliError::FuelExhausted),
        }
    }
    Ok(())
}

pub fn run(a: RunArgs) -> Result<(), CliError> {
    let module = inputs::load_module(&a.module)?;
    let mut inst = instantiate(&module, a.policy);
    let v = finish(&mut inst, fuel(a.fuel))?;
    println!("{v}");
    Ok(())
}

pub fn checkpoint(a: CheckpointArgs) -> Result<(), CliError> {
    let key = inputs::snapshot_key(a.key.key.as_deref(), a.key.key_file.as_deref())?;
    let module = inputs::load_module(&a.module)?;
    let mut inst = instantiate(&module, a.policy);
    advance(&mut inst, a.stops)?;
    let state = inst.capture()?;
    let blob = encode(&state, &key, a.codec);
    inputs::write(&a.out, &blob.to_bytes())?;
    println!(
        "captured at {}:{} after {} steps, {} bytes ({:.2}x)",
        state.position.function,
        state.position.offset,
        state.steps_executed,
        blob.encoded_len(),
        blob.compression_ratio()
    );
    Ok(())
}

pub fn restore_cmd(a: RestoreArgs) -> Result<(), CliError> {
    let key = inputs::snapshot_key(a.key.key.as_deref(), a.key.key_file.as_deref())?;
    let module = inputs::load_module(&a.module)?;
    let state = decode_bytes(&inputs::read(&a.snapshot)?, &key)?;
    let mut inst = restore(&module, &state, a.policy)?;
    let v = finish(&mut inst, fuel(a.fuel))?;
    println!("{v}");
    Ok(())
}
