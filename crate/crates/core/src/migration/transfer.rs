use std::time::Duration;

use serde::Serialize;

use crate::bytes::Reader;
use crate::digest::Digest;
use crate::snapshot::{SnapshotBlob, CHUNK_SIZE};
use crate::vm::CheckpointPolicy;

use super::wire::FrameType;
use super::{AbortReason, MigrationError, MigrationId, NodeContext, Session};

const NEGOTIATE_TRANSFER: u8 = 1;
const NEGOTIATE_STATUS_QUERY: u8 = 2;
const NEGOTIATE_STATUS_REPLY: u8 = 3;

/// Largest snapshot a receiver accepts.
pub const MAX_BLOB: u64 = 8 << 30;

/// Per-stage wall (or simulated) time of one migration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    #[serde(serialize_with = "secs")]
    pub checkpoint: Duration,
    #[serde(serialize_with = "secs")]
    pub handshake: Duration,
    #[serde(serialize_with = "secs")]
    pub compress: Duration,
    #[serde(serialize_with = "secs")]
    pub transfer: Duration,
    #[serde(serialize_with = "secs")]
    pub restore_ack: Duration,
    #[serde(serialize_with = "secs")]
    pub total: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl StageTimings {
    pub fn sum_of_stages(&self) -> Duration {
        self.checkpoint + self.handshake + self.compress + self.transfer + self.restore_ack
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TransferReport {
    pub chunks_sent: u32,
    pub bytes_on_wire: u64,
    /// Clock readings at which attestation refreshes completed, in seconds.
    pub refresh_events: Vec<f64>,
    pub stages: StageTimings,
}

/// What the source offers before streaming chunks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Offer {
    pub migration_id: MigrationId,
    pub policy: CheckpointPolicy,
    pub module: Vec<u8>,
    pub blob_len: u64,
    pub chunk_count: u32,
}

/// A fully received and verified snapshot.
#[derive(Debug, Clone)]
pub struct Incoming {
    pub offer: Offer,
    pub blob: SnapshotBlob,
    pub blob_digest: Digest,
}

/// First sealed request on a server session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Transfer(Offer),
    Status(MigrationId),
}

fn policy_id(p: CheckpointPolicy) -> u8 {
    match p {
        CheckpointPolicy::Function => 0,
        CheckpointPolicy::Loop => 1,
        CheckpointPolicy::Explicit => 2,
    }
}

fn policy_from(b: u8) -> Option<CheckpointPolicy> {
    CheckpointPolicy::ALL.into_iter().find(|p| policy_id(*p) == b)
}

impl Offer {
    fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![NEGOTIATE_TRANSFER];
        out.extend_from_slice(&self.migration_id);
        out.push(policy_id(self.policy));
        out.extend_from_slice(&(self.module.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.module);
        out.extend_from_slice(&self.blob_len.to_le_bytes());
        out.extend_from_slice(&self.chunk_count.to_le_bytes());
        out
    }
}

pub(crate) fn read_request(session: &mut Session) -> Result<Request, MigrationError> {
    let (ty, p) = session.recv()?;
    if ty != FrameType::Negotiate {
        return Err(MigrationError::Protocol(format!("expected NEGOTIATE, got {ty}")));
    }
    let bad = |_| MigrationError::Protocol("malformed NEGOTIATE".into());
    let mut r = Reader::new(&p);
    match r.u8().map_err(bad)? {
        NEGOTIATE_TRANSFER => {
            let migration_id = r.array().map_err(bad)?;
            let policy = policy_from(r.u8().map_err(bad)?).ok_or_else(|| MigrationError::Protocol("unknown policy".into()))?;
            let mlen = r.u32().map_err(bad)? as usize;
            let module = r.take(mlen).map_err(bad)?.to_vec();
            let blob_len = r.u64().map_err(bad)?;
            let chunk_count = r.u32().map_err(bad)?;
            if blob_len > MAX_BLOB || chunk_count as u64 != blob_len.div_ceil(CHUNK_SIZE as u64) {
                return Err(MigrationError::Protocol("inconsistent snapshot size".into()));
            }
            Ok(Request::Transfer(Offer { migration_id, policy, module, blob_len, chunk_count }))
        }
        NEGOTIATE_STATUS_QUERY => Ok(Request::Status(r.array().map_err(bad)?)),
        k => Err(MigrationError::Protocol(format!("unknown NEGOTIATE kind {k}"))),
    }
}

/// Status query used for in-doubt recovery. `Some(true)` means committed.
pub(crate) fn send_status_query(session: &mut Session, id: &MigrationId) -> Result<bool, MigrationError> {
    let mut q = vec![NEGOTIATE_STATUS_QUERY];
    q.extend_from_slice(id);
    session.send(FrameType::Negotiate, &q)?;
    let (ty, p) = session.recv()?;
    if ty != FrameType::Negotiate || p.len() != 18 || p[0] != NEGOTIATE_STATUS_REPLY || p[1..17] != id[..] {
        return Err(MigrationError::Protocol("malformed status reply".into()));
    }
    Ok(p[17] == 1)
}

pub(crate) fn send_status_reply(session: &mut Session, id: &MigrationId, committed: bool) -> Result<(), MigrationError> {
    let mut r = vec![NEGOTIATE_STATUS_REPLY];
    r.extend_from_slice(id);
    r.push(committed as u8);
    session.send(FrameType::Negotiate, &r)?;
    Ok(())
}

/// Stream `blob` to the peer: NEGOTIATE, chunks, COMMIT. Refreshes attestation
/// before a chunk whenever the refresh interval has elapsed. Does not wait for
/// the acknowledgement.
pub fn send_snapshot(
    session: &mut Session,
    ctx: &NodeContext,
    offer: &Offer,
    blob: &[u8],
) -> Result<TransferReport, MigrationError> {
    let mut commit_attempted = false;
    send_snapshot_tracked(session, ctx, offer, blob, &mut commit_attempted)
}

pub(crate) fn send_snapshot_tracked(
    session: &mut Session,
    ctx: &NodeContext,
    offer: &Offer,
    blob: &[u8],
    commit_attempted: &mut bool,
) -> Result<TransferReport, MigrationError> {
    let start = ctx.clock.now();
    let mut report = TransferReport::default();
    let r = stream(session, ctx, offer, blob, &mut report, commit_attempted);
    if let Err(MigrationError::TransportClosed) = r {
        // the peer may have left an ABORT explaining why it hung up
        if let Err(e @ MigrationError::PeerAbort { .. }) = session.recv() {
            return Err(e);
        }
    }
    r?;
    report.refresh_events = session.refreshes.iter().map(Duration::as_secs_f64).collect();
    report.stages.transfer = ctx.clock.now().saturating_sub(start);
    Ok(report)
}

fn stream(
    session: &mut Session,
    ctx: &NodeContext,
    offer: &Offer,
    blob: &[u8],
    report: &mut TransferReport,
    commit_attempted: &mut bool,
) -> Result<(), MigrationError> {
    report.bytes_on_wire += session.send(FrameType::Negotiate, &offer.to_bytes())? as u64;
    for (i, chunk) in blob.chunks(CHUNK_SIZE).enumerate() {
        if ctx.clock.now().saturating_sub(session.last_refresh) > ctx.refresh_interval {
            session.refresh(ctx)?;
        }
        let mut p = Vec::with_capacity(4 + chunk.len());
        p.extend_from_slice(&(i as u32).to_le_bytes());
        p.extend_from_slice(chunk);
        report.bytes_on_wire += session.send(FrameType::Chunk, &p)? as u64;
        report.chunks_sent += 1;
    }
    *commit_attempted = true;
    report.bytes_on_wire += session.send(FrameType::Commit, &Digest::of(blob).0)? as u64;
    Ok(())
}

/// Receive one offered snapshot. Returns only after every chunk opened and the COMMIT digest matched.
pub fn receive_snapshot(session: &mut Session, ctx: &NodeContext) -> Result<Incoming, MigrationError> {
    match read_request(session)? {
        Request::Transfer(offer) => receive_offered(session, ctx, offer),
        Request::Status(_) => Err(MigrationError::Protocol("expected a transfer offer".into())),
    }
}

pub(crate) fn receive_offered(session: &mut Session, ctx: &NodeContext, offer: Offer) -> Result<Incoming, MigrationError> {
    let r = receive_chunks(session, ctx, offer);
    if let Err(e) = &r {
        if !matches!(e, MigrationError::PeerAbort { .. } | MigrationError::TransportClosed) {
            session.abort(e.abort_reason(), &e.to_string());
        }
    }
    r
}

fn receive_chunks(session: &mut Session, ctx: &NodeContext, offer: Offer) -> Result<Incoming, MigrationError> {
    let mut data = Vec::with_capacity(offer.blob_len.min(1 << 28) as usize);
    let mut next = 0u32;
    loop {
        let (ty, p) = match session.recv() {
            Err(MigrationError::ChannelIntegrity(FrameType::Chunk)) => {
                return Err(MigrationError::ChunkIntegrityFailure { chunk: next })
            }
            other => other?,
        };
        match ty {
            FrameType::Chunk => {
                if p.len() < 4 || u32::from_le_bytes(p[..4].try_into().unwrap()) != next {
                    return Err(MigrationError::Protocol(format!("chunk {next} out of order")));
                }
                if data.len() as u64 + (p.len() - 4) as u64 > offer.blob_len {
                    return Err(MigrationError::Protocol("more data than offered".into()));
                }
                data.extend_from_slice(&p[4..]);
                next += 1;
            }
            FrameType::Refresh => session.refresh_respond(ctx, &p)?,
            FrameType::Commit => {
                if next != offer.chunk_count || data.len() as u64 != offer.blob_len {
                    return Err(MigrationError::Protocol("COMMIT before all chunks".into()));
                }
                let digest = Digest::of(&data);
                if p != digest.0 {
                    return Err(MigrationError::DigestMismatch);
                }
                let blob = SnapshotBlob::from_bytes(&data)?;
                return Ok(Incoming { offer, blob, blob_digest: digest });
            }
            other => return Err(MigrationError::Protocol(format!("unexpected {other} during transfer"))),
        }
    }
}

/// Positive acknowledgement sent by the destination after a successful restore.
pub(crate) fn send_ack(session: &mut Session, state_digest: &Digest) -> Result<(), MigrationError> {
    let mut p = vec![1u8];
    p.extend_from_slice(&state_digest.0);
    session.send(FrameType::Commit, &p)?;
    Ok(())
}

/// Wait for the destination's verdict on COMMIT.
pub(crate) fn await_ack(session: &mut Session) -> Result<Digest, MigrationError> {
    match session.recv() {
        Ok((FrameType::Commit, p)) if p.len() == 33 && p[0] == 1 => Ok(Digest(p[1..].try_into().unwrap())),
        Ok((ty, _)) => Err(MigrationError::Protocol(format!("expected COMMIT acknowledgement, got {ty}"))),
        Err(MigrationError::PeerAbort { reason: AbortReason::RestoreFailed, message }) => {
            Err(MigrationError::RemoteRestoreFailed(message))
        }
        Err(e) => Err(e),
    }
}
