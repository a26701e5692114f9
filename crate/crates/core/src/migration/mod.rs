//! Attested snapshot migration.
//!
//! A mutual handshake exchanges nonces, ephemeral P-256 key-agreement values,
//! and quotes that bind those values to each node's measurement. Session keys
//! come from HKDF over the shared secret, both measurements, and the
//! transcript digest. After the handshake every frame is sealed with
//! ChaCha20-Poly1305. Snapshot transfer streams 1 MiB chunks, refreshes
//! attestation once the freshness window elapses, and lets the destination
//! decide the outcome at COMMIT. Wire layout is in `docs/wire-protocol.md`.

mod handshake;
mod loopback;
mod pipeline;
mod server;
mod transfer;
pub mod transport;
pub mod wire;

pub use handshake::{handshake, EventLog, HandshakeEvent, HandshakeHooks, Role, Session};
pub use loopback::Loopback;
pub use pipeline::{migrate, query_status, resolve_in_doubt, MigrationOutcome, RECOVERY_ATTEMPTS};
pub use server::{MigrationRecord, MigrationServer, RecordStatus, ServedOutcome};
pub use transfer::{receive_snapshot, send_snapshot, Incoming, Offer, StageTimings, TransferReport};
pub use transport::{pipe, Connector, PipeEnd, TcpConnector, Transport};
pub use wire::{read_frame, write_frame, Frame, FrameType};

use std::collections::BTreeSet;
use std::io;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::attestation::{AttestationError, EntryId, GlobalId, NodeIdentity, VerificationPolicy, Verifier};
use crate::clock::{Clock, SystemClock};
use crate::snapshot::{Codec, SnapshotError};
use crate::vm::VmError;

/// 16-byte migration identifier chosen by the source.
pub type MigrationId = [u8; 16];

/// Why a peer aborted. Carried as one byte in ABORT frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AbortReason {
    VerificationFailed = 1,
    CapabilityMismatch = 2,
    StaleQuote = 3,
    KeyConfirmFailed = 4,
    ChunkIntegrity = 5,
    DigestMismatch = 6,
    RestoreFailed = 7,
    Protocol = 8,
    RefreshFailed = 9,
    Other = 255,
}

impl AbortReason {
    pub fn from_u8(b: u8) -> Self {
        use AbortReason::*;
        [
            VerificationFailed,
            CapabilityMismatch,
            StaleQuote,
            KeyConfirmFailed,
            ChunkIntegrity,
            DigestMismatch,
            RestoreFailed,
            Protocol,
            RefreshFailed,
        ]
        .into_iter()
        .find(|r| *r as u8 == b)
        .unwrap_or(Other)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MigrationError {
    #[error("peer quote rejected: {0}")]
    VerificationFailed(AttestationError),
    #[error("peer lacks required capabilities {missing:?}")]
    CapabilityMismatch { missing: Vec<EntryId> },
    #[error("peer quote is stale (age {age_secs}s)")]
    StaleQuote { age_secs: i64 },
    #[error("key confirmation failed: {0}")]
    KeyConfirmFailed(String),
    #[error("transport closed")]
    TransportClosed,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer aborted ({reason:?}): {message}")]
    PeerAbort { reason: AbortReason, message: String },
    #[error("chunk {chunk} failed authentication")]
    ChunkIntegrityFailure { chunk: u32 },
    #[error("frame {0} failed authentication")]
    ChannelIntegrity(FrameType),
    #[error("snapshot digest does not match COMMIT")]
    DigestMismatch,
    #[error("attestation refresh failed: {0}")]
    RefreshFailed(String),
    #[error("remote restore failed: {0}")]
    RemoteRestoreFailed(String),
    #[error("outcome unknown for migration {}", hex::encode(.0))]
    InDoubt(MigrationId),
    #[error(transparent)]
    Vm(#[from] VmError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

impl From<io::Error> for MigrationError {
    fn from(e: io::Error) -> Self {
        use io::ErrorKind::*;
        match e.kind() {
            UnexpectedEof | BrokenPipe | ConnectionReset | ConnectionAborted | NotConnected => {
                MigrationError::TransportClosed
            }
            InvalidData => MigrationError::Protocol(e.to_string()),
            _ => MigrationError::Transport(e.to_string()),
        }
    }
}

impl MigrationError {
    pub(crate) fn from_attestation(e: AttestationError) -> Self {
        match e {
            AttestationError::CapabilityMismatch { missing } => MigrationError::CapabilityMismatch { missing },
            AttestationError::StaleQuote { age_secs, .. } => MigrationError::StaleQuote { age_secs },
            other => MigrationError::VerificationFailed(other),
        }
    }

    /// Reason code sent to the peer when this error ends a session locally.
    pub fn abort_reason(&self) -> AbortReason {
        match self {
            MigrationError::VerificationFailed(_) => AbortReason::VerificationFailed,
            MigrationError::CapabilityMismatch { .. } => AbortReason::CapabilityMismatch,
            MigrationError::StaleQuote { .. } => AbortReason::StaleQuote,
            MigrationError::KeyConfirmFailed(_) => AbortReason::KeyConfirmFailed,
            MigrationError::ChunkIntegrityFailure { .. } | MigrationError::ChannelIntegrity(_) => {
                AbortReason::ChunkIntegrity
            }
            MigrationError::DigestMismatch => AbortReason::DigestMismatch,
            MigrationError::RemoteRestoreFailed(_) | MigrationError::Vm(_) | MigrationError::Snapshot(_) => {
                AbortReason::RestoreFailed
            }
            MigrationError::RefreshFailed(_) => AbortReason::RefreshFailed,
            MigrationError::Protocol(_) => AbortReason::Protocol,
            _ => AbortReason::Other,
        }
    }
}

/// Everything a node needs to take part in migrations.
pub struct NodeContext {
    pub identity: Arc<NodeIdentity>,
    /// Measurement this node quotes for itself.
    pub global_id: GlobalId,
    pub entry_ids: BTreeSet<EntryId>,
    /// Policy applied to peers.
    pub policy: VerificationPolicy,
    pub verifier: Arc<Verifier>,
    pub clock: Arc<dyn Clock>,
    /// Attestation refresh interval during transfers.
    pub refresh_interval: Duration,
    pub codec: Codec,
    pub hooks: Option<Arc<dyn HandshakeHooks>>,
    rng: Mutex<ChaCha20Rng>,
}

impl NodeContext {
    pub fn new(identity: Arc<NodeIdentity>, global_id: GlobalId, policy: VerificationPolicy) -> Self {
        NodeContext {
            identity,
            global_id,
            entry_ids: BTreeSet::new(),
            refresh_interval: Duration::from_secs(policy.freshness_window),
            policy,
            verifier: Arc::new(Verifier::new()),
            clock: Arc::new(SystemClock),
            codec: Codec::Deflate,
            hooks: None,
            rng: Mutex::new(ChaCha20Rng::from_entropy()),
        }
    }

    pub fn with_entry_ids(mut self, ids: impl IntoIterator<Item = EntryId>) -> Self {
        self.entry_ids = ids.into_iter().collect();
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Deterministic nonces, ephemeral keys, and migration ids.
    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().unwrap() = ChaCha20Rng::seed_from_u64(seed);
        self
    }

    pub fn with_hooks(mut self, hooks: Arc<dyn HandshakeHooks>) -> Self {
        self.hooks = Some(hooks);
        self
    }

    pub fn with_refresh_interval(mut self, every: Duration) -> Self {
        self.refresh_interval = every;
        self
    }

    pub fn with_verifier(mut self, verifier: Arc<Verifier>) -> Self {
        self.verifier = verifier;
        self
    }

    pub fn with_codec(mut self, codec: Codec) -> Self {
        self.codec = codec;
        self
    }

    pub(crate) fn random<const N: usize>(&self) -> [u8; N] {
        let mut out = [0u8; N];
        self.rng.lock().unwrap().fill_bytes(&mut out);
        out
    }

    pub(crate) fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha20Rng) -> R) -> R {
        f(&mut self.rng.lock().unwrap())
    }
}
