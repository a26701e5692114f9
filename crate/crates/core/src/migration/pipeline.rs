use serde::Serialize;

use crate::attestation::VerifiedIdentity;
use crate::digest::Digest;
use crate::snapshot::{encode, CHUNK_SIZE};
use crate::vm::{Instance, VmError};

use super::handshake::{handshake, Role};
use super::transfer::{await_ack, send_snapshot_tracked, send_status_query, Offer, TransferReport};
use super::{Connector, MigrationError, MigrationId, NodeContext};


/// Attempts at reaching the destination when settling an in-doubt migration.
pub const RECOVERY_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Serialize)]
pub struct MigrationOutcome {
    #[serde(serialize_with = "hex_id")]
    pub migration_id: MigrationId,
    pub peer: VerifiedIdentity,
    pub report: TransferReport,
    pub blob_len: u64,
    pub plaintext_len: u64,
    pub compression_ratio: f64,
    /// Digest of the state the destination restored, when it acknowledged directly.
    pub remote_state_digest: Option<Digest>,
    /// The acknowledgement was lost and the outcome came from a status query.
    pub recovered: bool,
}

fn hex_id<S: serde::Serializer>(id: &MigrationId, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(id))
}

/// Move `instance` to the node behind `connector`.
///
/// Pipeline: capture, attested handshake, encode under the session storage
/// key, stream, remote restore, acknowledgement. On success the local
/// instance is marked migrated-away. On failure it stays runnable, except
/// when the outcome cannot be learned at all, in which case it stays in
/// doubt and the error is [`MigrationError::InDoubt`].
pub fn migrate(
    instance: &mut Instance,
    connector: &dyn Connector,
    ctx: &NodeContext,
) -> Result<MigrationOutcome, MigrationError> {
    if !instance.is_runnable() {
        return Err(VmError::NotRunnable(instance.status()).into());
    }
    let clock = &ctx.clock;
    let t0 = clock.now();
    let state = instance.capture()?;
    let t1 = clock.now();

    let mut session = handshake(connector.connect()?, ctx, Role::Initiator)?;
    let t2 = clock.now();
    log::debug!("session with {} established", session.peer.node_id.short());

    let blob = encode(&state, session.storage_key(), ctx.codec);
    let bytes = blob.to_bytes();
    let t3 = clock.now();

    let offer = Offer {
        migration_id: ctx.random(),
        policy: instance.policy(),
        module: instance.module().to_bytes(),
        blob_len: bytes.len() as u64,
        chunk_count: bytes.len().div_ceil(CHUNK_SIZE) as u32,
    };
    let id = offer.migration_id;
    let peer = session.peer.clone();
    let mut outcome = MigrationOutcome {
        migration_id: id,
        peer,
        report: TransferReport::default(),
        blob_len: bytes.len() as u64,
        plaintext_len: blob.header.plaintext_len,
        compression_ratio: blob.compression_ratio(),
        remote_state_digest: None,
        recovered: false,
    };

    let mut commit_attempted = false;
    match send_snapshot_tracked(&mut session, ctx, &offer, &bytes, &mut commit_attempted) {
        Ok(r) => outcome.report = r,
        Err(e) if !commit_attempted || matches!(e, MigrationError::PeerAbort { .. }) => {
            session.close();
            return Err(e);
        }
        Err(e) => {
            session.close();
            return settle(instance, connector, ctx, outcome, e);
        }
    }
    let t4 = clock.now();

    match await_ack(&mut session) {
        Ok(d) => {
            session.close();
            instance.mark_migrated_away();
            let t5 = clock.now();
            outcome.remote_state_digest = Some(d);
            let st = &mut outcome.report.stages;
            st.checkpoint = t1 - t0;
            st.handshake = t2 - t1;
            st.compress = t3 - t2;
            st.restore_ack = t5 - t4;
            st.total = t5 - t0;
            Ok(outcome)
        }
        Err(e @ (MigrationError::PeerAbort { .. } | MigrationError::RemoteRestoreFailed(_))) => {
            session.close();
            Err(e)
        }
        Err(e) => {
            session.close();
            settle(instance, connector, ctx, outcome, e)
        }
    }
}

fn settle(
    instance: &mut Instance,
    connector: &dyn Connector,
    ctx: &NodeContext,
    mut outcome: MigrationOutcome,
    cause: MigrationError,
) -> Result<MigrationOutcome, MigrationError> {
    let id = outcome.migration_id;
    log::warn!("migration {} in doubt after: {cause}", hex::encode(id));
    instance.mark_in_doubt();
    match resolve_in_doubt(instance, connector, ctx, &id) {
        Ok(true) => {
            outcome.recovered = true;
            Ok(outcome)
        }
        Ok(false) => Err(cause),
        Err(_) => Err(MigrationError::InDoubt(id)),
    }
}

/// Ask the destination whether it committed `id`. A destination that has not
/// committed records the migration as aborted before answering.
pub fn query_status(connector: &dyn Connector, ctx: &NodeContext, id: &MigrationId) -> Result<bool, MigrationError> {
    let mut session = handshake(connector.connect()?, ctx, Role::Initiator)?;
    let r = send_status_query(&mut session, id);
    session.close();
    r
}

/// Settle an in-doubt instance by querying the destination. Returns whether the destination committed.
pub fn resolve_in_doubt(
    instance: &mut Instance,
    connector: &dyn Connector,
    ctx: &NodeContext,
    id: &MigrationId,
) -> Result<bool, MigrationError> {
    let mut last = MigrationError::InDoubt(*id);
    for attempt in 0..RECOVERY_ATTEMPTS {
        match query_status(connector, ctx, id) {
            Ok(committed) => {
                instance.resolve_in_doubt(committed);
                return Ok(committed);
            }
            Err(e) => {
                log::warn!("status query attempt {} failed: {e}", attempt + 1);
                last = e;
            }
        }
    }
    Err(last)
}
