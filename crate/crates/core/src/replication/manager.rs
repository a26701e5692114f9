use std::cmp::Ordering;
use std::time::Instant;

use serde::Serialize;

use crate::digest::Digest;
use crate::snapshot::{apply_delta, delta, SnapshotKey};
use crate::vm::ExecutionState;

use super::{Health, ReplicaDescriptor, ReplicaId, ReplicationError, Tier, VectorClock};

/// A replica's descriptor plus the state it holds.
#[derive(Debug, Clone)]
pub struct Replica {
    pub desc: ReplicaDescriptor,
    pub state: ExecutionState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncReport {
    pub source: ReplicaId,
    pub target: ReplicaId,
    pub pages_transferred: usize,
    pub total_pages: usize,
    /// pages_transferred / total_pages.
    pub fraction: f64,
    /// Modeled transfer time over the target's link, in milliseconds.
    pub duration_ms: f64,
    /// Clocks were concurrent and the tie-break decided.
    pub conflict: bool,
    /// The source's state was applied to the target.
    pub applied: bool,
    pub resulting_clock: VectorClock,
}

/// Which of two concurrent replicas wins: higher tier, then newer write, then lower id.
pub fn resolve_conflict<'a>(a: &'a ReplicaDescriptor, b: &'a ReplicaDescriptor) -> &'a ReplicaDescriptor {
    let key = |d: &ReplicaDescriptor| (d.tier, d.updated_at);
    match key(a).partial_cmp(&key(b)) {
        Some(Ordering::Greater) => a,
        Some(Ordering::Less) => b,
        _ => {
            if a.id <= b.id {
                a
            } else {
                b
            }
        }
    }
}

/// Highest-quality replica that is reachable within the budget with acceptable
/// loss; otherwise a Local replica; otherwise the best merely reachable one.
/// Ties go to the lower id.
pub fn select_active(descriptors: &[ReplicaDescriptor], budget_ms: f64) -> Result<ReplicaId, ReplicationError> {
    let best = |pred: &dyn Fn(&ReplicaDescriptor) -> bool| {
        descriptors
            .iter()
            .filter(|d| pred(d))
            .max_by(|a, b| a.tier.cmp(&b.tier).then_with(|| b.id.cmp(&a.id)))
            .map(|d| d.id.clone())
    };
    best(&|d| d.health.usable(budget_ms))
        .or_else(|| best(&|d| d.tier == Tier::Local && d.health.is_reachable()))
        .or_else(|| best(&|d| d.health.is_reachable()))
        .ok_or(ReplicationError::NoReplicaAvailable)
}

/// Bring `target` up to `source`.
///
/// If the source's clock dominates, the page delta is applied. If the clocks
/// are concurrent, the tie-break decides whether the source state replaces
/// the target's. Either way the target's clock becomes the merge of both.
/// A target whose clock strictly dominates the source is an error.
pub fn sync(source: &Replica, target: &mut Replica, key: &SnapshotKey) -> Result<SyncReport, ReplicationError> {
    let (sc, tc) = (&source.desc.clock, &target.desc.clock);
    if tc.dominates(sc) && tc != sc {
        return Err(ReplicationError::SourceBehind { source_clock: sc.to_string(), target_clock: tc.to_string() });
    }
    let conflict = sc.concurrent(tc);
    let apply = !conflict || resolve_conflict(&source.desc, &target.desc).id == source.desc.id;
    let total_pages = target.state.page_count();
    let mut pages = 0;
    let mut bytes = 0usize;
    if apply {
        // identical states need no delta; skips hashing both images
        if source.state != target.state {
            let d = delta(&target.state, &source.state, key)?;
            pages = d.page_count();
            bytes = d.to_bytes().len();
            target.state = apply_delta(&target.state, &d, key)?;
            // apply_delta checked the result against this
            target.desc.state_digest = d.target_digest;
        } else {
            target.desc.state_digest = target.state.digest();
        }
        target.desc.updated_at = source.desc.updated_at;
    }
    target.desc.clock = tc.merge(sc);
    let duration_ms = match target.desc.health {
        Health::Reachable { latency_ms, bandwidth_bps, .. } if pages > 0 => {
            latency_ms + bytes as f64 * 8.0 / bandwidth_bps * 1e3
        }
        _ => 0.0,
    };
    Ok(SyncReport {
        source: source.desc.id.clone(),
        target: target.desc.id.clone(),
        pages_transferred: pages,
        total_pages,
        fraction: if total_pages == 0 { 0.0 } else { pages as f64 / total_pages as f64 },
        duration_ms,
        conflict,
        applied: apply,
        resulting_clock: target.desc.clock.clone(),
    })
}

/// All replicas of one workspace.
pub struct ReplicaManager {
    measurement: Digest,
    key: SnapshotKey,
    replicas: Vec<Replica>,
}

impl ReplicaManager {
    /// `measurement` identifies the workspace's module; `key` authenticates deltas.
    pub fn new(measurement: Digest, key: SnapshotKey) -> Self {
        ReplicaManager { measurement, key, replicas: Vec::new() }
    }

    /// Add a replica holding `state`. Without a name, ids are `r0`, `r1`, ...
    pub fn register(
        &mut self,
        tier: Tier,
        state: ExecutionState,
        name: Option<&str>,
    ) -> Result<ReplicaId, ReplicationError> {
        if state.module_measurement != self.measurement {
            return Err(ReplicationError::MeasurementMismatch);
        }
        let id = match name {
            Some(n) => n.to_string(),
            None => format!("r{}", self.replicas.len()),
        };
        if self.replicas.iter().any(|r| r.desc.id == id) {
            return Err(ReplicationError::DuplicateId(id));
        }
        let health = if tier == Tier::Local { Health::local() } else { Health::Unreachable };
        self.replicas.push(Replica {
            desc: ReplicaDescriptor {
                id: id.clone(),
                tier,
                clock: VectorClock::new(),
                state_digest: state.digest(),
                health,
                updated_at: 0.0,
            },
            state,
        });
        Ok(id)
    }

    pub fn descriptors(&self) -> Vec<ReplicaDescriptor> {
        self.replicas.iter().map(|r| r.desc.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn replica(&self, id: &str) -> Option<&Replica> {
        self.replicas.iter().find(|r| r.desc.id == id)
    }

    fn index(&self, id: &str) -> Result<usize, ReplicationError> {
        self.replicas
            .iter()
            .position(|r| r.desc.id == id)
            .ok_or_else(|| ReplicationError::UnknownReplica(id.to_string()))
    }

    pub fn set_health(&mut self, id: &str, health: Health) -> Result<(), ReplicationError> {
        let i = self.index(id)?;
        self.replicas[i].desc.health = health;
        Ok(())
    }

    /// Local write on replica `id` at time `now`; stamps its own clock entry.
    pub fn write(&mut self, id: &str, now: f64, f: impl FnOnce(&mut [u8])) -> Result<(), ReplicationError> {
        let i = self.index(id)?;
        let r = &mut self.replicas[i];
        f(&mut r.state.memory);
        r.desc.clock.increment(&r.desc.id);
        r.desc.state_digest = r.state.digest();
        r.desc.updated_at = now;
        Ok(())
    }

    pub fn select_active(&self, budget_ms: f64) -> Result<ReplicaId, ReplicationError> {
        select_active(&self.descriptors(), budget_ms)
    }

    /// Time the selection, for failover latency reporting.
    pub fn timed_select(&self, budget_ms: f64) -> (Result<ReplicaId, ReplicationError>, std::time::Duration) {
        let t = Instant::now();
        let r = self.select_active(budget_ms);
        (r, t.elapsed())
    }

    pub fn sync_pair(&mut self, from: &str, to: &str) -> Result<SyncReport, ReplicationError> {
        let (i, j) = (self.index(from)?, self.index(to)?);
        if i == j {
            return Err(ReplicationError::Scenario("cannot sync a replica with itself".into()));
        }
        let source = self.replicas[i].clone();
        sync(&source, &mut self.replicas[j], &self.key)
    }

    /// Reachable replica whose clock no other reachable replica exceeds,
    /// with the tie-break deciding among concurrent maxima.
    pub fn leader(&self) -> Option<ReplicaId> {
        let live: Vec<&ReplicaDescriptor> =
            self.replicas.iter().map(|r| &r.desc).filter(|d| d.health.is_reachable()).collect();
        live.iter()
            .filter(|d| !live.iter().any(|o| o.clock.dominates(&d.clock) && o.clock != d.clock))
            .copied()
            .reduce(|a, b| resolve_conflict(a, b))
            .map(|d| d.id.clone())
    }

    /// One round: the leader pushes to every other reachable replica.
    pub fn sync_round(&mut self) -> Result<Vec<SyncReport>, ReplicationError> {
        let Some(leader) = self.leader() else { return Ok(Vec::new()) };
        let targets: Vec<ReplicaId> = self
            .replicas
            .iter()
            .filter(|r| r.desc.id != leader && r.desc.health.is_reachable())
            .map(|r| r.desc.id.clone())
            .collect();
        targets.iter().map(|t| self.sync_pair(&leader, t)).collect()
    }

    pub fn converged(&self) -> bool {
        self.replicas.windows(2).all(|w| w[0].desc.state_digest == w[1].desc.state_digest)
    }
}
