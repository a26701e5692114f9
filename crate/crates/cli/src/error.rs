use std::path::PathBuf;

use portvm_core::migration::{AbortReason, MigrationError};
use portvm_core::replication::ReplicationError;
use portvm_core::scheduler::SchedulerError;
use portvm_core::snapshot::SnapshotError;
use portvm_core::speculation::SpeculationError;
use portvm_core::validation::ValidationError;
use portvm_core::vm::{Trap, VmError};

/// Process exit codes. The table is mirrored in `docs/exit-codes.md`.
pub mod code {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const PARSE: u8 = 4;
    pub const TRAP: u8 = 5;
    pub const FUEL_EXHAUSTED: u8 = 6;
    pub const MEASUREMENT_MISMATCH: u8 = 7;
    pub const VM_STATE: u8 = 8;
    pub const SNAPSHOT_AUTH: u8 = 9;
    pub const SNAPSHOT_FORMAT: u8 = 10;
    pub const VERIFICATION_FAILED: u8 = 11;
    pub const CAPABILITY_MISMATCH: u8 = 12;
    pub const STALE_QUOTE: u8 = 13;
    pub const KEY_CONFIRM_FAILED: u8 = 14;
    pub const TRANSPORT: u8 = 15;
    pub const TRANSFER_INTEGRITY: u8 = 16;
    pub const PROTOCOL: u8 = 17;
    pub const REMOTE_RESTORE: u8 = 18;
    pub const IN_DOUBT: u8 = 19;
    pub const REFRESH_FAILED: u8 = 20;
    pub const SCHEDULER: u8 = 21;
    pub const REPLICATION: u8 = 22;
    pub const SPECULATION: u8 = 23;
    pub const VALIDATION: u8 = 24;
    pub const ASSERTION_FAILED: u8 = 25;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("trap: {0}")]
    Trap(Trap),
    #[error("fuel exhausted")]
    FuelExhausted,
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("migration: {0}")]
    Migration(#[from] MigrationError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("replication: {0}")]
    Replication(#[from] ReplicationError),
    #[error("speculation: {0}")]
    Speculation(#[from] SpeculationError),
    #[error("validation: {0}")]
    Validation(#[from] ValidationError),
    #[error("{} assertion(s) failed", .0.len())]
    AssertionFailed(Vec<String>),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => code::USAGE,
            CliError::Io { .. } => code::IO,
            CliError::Parse(_) => code::PARSE,
            CliError::Trap(_) => code::TRAP,
            CliError::FuelExhausted => code::FUEL_EXHAUSTED,
            CliError::Vm(e) => vm_code(e),
            CliError::Snapshot(e) => snapshot_code(e),
            CliError::Migration(e) => migration_code(e),
            CliError::Scheduler(e) => match e {
                SchedulerError::Parse(_) | SchedulerError::InvalidProfile(_) => code::PARSE,
                SchedulerError::Io(_) => code::IO,
                SchedulerError::UnknownLabel(_) => code::SCHEDULER,
            },
            CliError::Replication(e) => match e {
                ReplicationError::Scenario(_) => code::PARSE,
                _ => code::REPLICATION,
            },
            CliError::Speculation(e) => match e {
                SpeculationError::Config(_) => code::PARSE,
                _ => code::SPECULATION,
            },
            CliError::Validation(e) => match e {
                ValidationError::Rules(_) | ValidationError::Corpus { .. } => code::PARSE,
                ValidationError::Io(_) => code::IO,
                ValidationError::EmptyCorpus => code::VALIDATION,
            },
            CliError::AssertionFailed(_) => code::ASSERTION_FAILED,
            CliError::Internal(_) => code::INTERNAL,
        }
    }
}

fn vm_code(e: &VmError) -> u8 {
    match e {
        VmError::MeasurementMismatch { .. } => code::MEASUREMENT_MISMATCH,
        VmError::NotAtStablePoint | VmError::MalformedState(_) | VmError::NotRunnable(_) => code::VM_STATE,
    }
}

fn snapshot_code(e: &SnapshotError) -> u8 {
    match e {
        SnapshotError::MeasurementMismatch => code::MEASUREMENT_MISMATCH,
        SnapshotError::AuthenticationFailure => code::SNAPSHOT_AUTH,
        _ => code::SNAPSHOT_FORMAT,
    }
}

fn migration_code(e: &MigrationError) -> u8 {
    use MigrationError as M;
    match e {
        M::VerificationFailed(_) => code::VERIFICATION_FAILED,
        M::CapabilityMismatch { .. } => code::CAPABILITY_MISMATCH,
        M::StaleQuote { .. } => code::STALE_QUOTE,
        M::KeyConfirmFailed(_) => code::KEY_CONFIRM_FAILED,
        M::TransportClosed | M::Transport(_) => code::TRANSPORT,
        M::ChunkIntegrityFailure { .. } | M::ChannelIntegrity(_) | M::DigestMismatch => code::TRANSFER_INTEGRITY,
        M::Protocol(_) => code::PROTOCOL,
        M::RemoteRestoreFailed(_) => code::REMOTE_RESTORE,
        M::InDoubt(_) => code::IN_DOUBT,
        M::RefreshFailed(_) => code::REFRESH_FAILED,
        M::Vm(e) => vm_code(e),
        M::Snapshot(e) => snapshot_code(e),
        M::PeerAbort { reason, .. } => match reason {
            AbortReason::VerificationFailed => code::VERIFICATION_FAILED,
            AbortReason::CapabilityMismatch => code::CAPABILITY_MISMATCH,
            AbortReason::StaleQuote => code::STALE_QUOTE,
            AbortReason::KeyConfirmFailed => code::KEY_CONFIRM_FAILED,
            AbortReason::ChunkIntegrity | AbortReason::DigestMismatch => code::TRANSFER_INTEGRITY,
            AbortReason::Protocol => code::PROTOCOL,
            AbortReason::RefreshFailed => code::REFRESH_FAILED,
            AbortReason::RestoreFailed | AbortReason::Other => code::REMOTE_RESTORE,
        },
    }
}
