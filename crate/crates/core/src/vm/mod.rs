//! Portable stack-machine VM with checkpointing at stable points.
//!
//! A [`Module`] is a validated program over 64-bit integers with a linear
//! memory of 64 KiB pages. An [`Instance`] executes it and can be stopped at
//! stable points chosen by a [`CheckpointPolicy`]; at those points the whole
//! machine state is captured as an [`ExecutionState`] that [`restore`] turns
//! back into a runnable instance, possibly on another node.

pub mod asm;
pub mod interp;
pub mod isa;
pub mod module;
pub mod progen;
pub mod state;
mod workspace;

pub use asm::{assemble, disassemble, AsmError};
pub use interp::{
    instantiate, restore, CheckpointPolicy, Fuel, Instance, RunOutcome, StablePoints, Status, Trap,
    VmError,
};
pub use isa::Instr;
pub use module::{Function, Module, ValidationError, PAGE_SIZE};
pub use state::{ExecutionState, Frame, Position};
pub use workspace::workspace_instance;
