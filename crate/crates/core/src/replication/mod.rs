//! Multi-tier replicas of one workspace.
//!
//! Replicas sit on three tiers (Cloud, Edge, Local). The manager tracks each
//! replica's state, vector clock, and link health. It picks the best usable
//! replica for the latency budget and propagates page deltas between
//! replicas until their digests agree. Scenario files drive a simulated
//! network through fault schedules and record every decision.

mod clock;
mod manager;
mod scenario;

pub use clock::{merge_clocks, VectorClock};
pub use manager::{resolve_conflict, select_active, sync, Replica, ReplicaManager, SyncReport};
pub use scenario::{
    check_assertions, run_failover_monitor, ActiveAt, Assertions, FaultKind, FaultSpec, LogRecord, ReplicaSpec, RunSummary,
    Scenario, WriteSpec, PROBE_INTERVAL_MS, SCENARIO_SCHEMA,
};

use serde::{Deserialize, Serialize};

use crate::snapshot::SnapshotError;

pub type ReplicaId = String;

/// Loss above this makes a link unusable for serving.
pub const MAX_LOSS: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Local,
    Edge,
    Cloud,
}

impl Tier {
    pub fn quality(self) -> f64 {
        match self {
            Tier::Cloud => 1.0,
            Tier::Edge => 0.6,
            Tier::Local => 0.35,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Cloud => "cloud",
            Tier::Edge => "edge",
            Tier::Local => "local",
        }
    }
}

impl std::str::FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cloud" => Ok(Tier::Cloud),
            "edge" => Ok(Tier::Edge),
            "local" => Ok(Tier::Local),
            other => Err(format!("unknown tier `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Health {
    Reachable { latency_ms: f64, loss: f64, bandwidth_bps: f64 },
    Unreachable,
}

impl Health {
    pub fn local() -> Self {
        Health::Reachable { latency_ms: 0.0, loss: 0.0, bandwidth_bps: 1e10 }
    }

    pub fn is_reachable(&self) -> bool {
        matches!(self, Health::Reachable { .. })
    }

    /// Reachable within `budget_ms` and with loss at most [`MAX_LOSS`].
    pub fn usable(&self, budget_ms: f64) -> bool {
        matches!(*self, Health::Reachable { latency_ms, loss, .. } if latency_ms <= budget_ms && loss <= MAX_LOSS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaDescriptor {
    pub id: ReplicaId,
    pub tier: Tier,
    pub clock: VectorClock,
    pub state_digest: crate::digest::Digest,
    pub health: Health,
    /// Time of the last write that produced this replica's state, in seconds.
    pub updated_at: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplicationError {
    #[error("state belongs to a different module")]
    MeasurementMismatch,
    #[error("replica id `{0}` already registered")]
    DuplicateId(ReplicaId),
    #[error("unknown replica `{0}`")]
    UnknownReplica(ReplicaId),
    #[error("no replica available")]
    NoReplicaAvailable,
    #[error("source clock {source_clock} is behind target clock {target_clock}")]
    SourceBehind { source_clock: String, target_clock: String },
    #[error(transparent)]
    Delta(#[from] SnapshotError),
    #[error("scenario: {0}")]
    Scenario(String),
}
