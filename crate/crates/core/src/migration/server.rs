use std::collections::HashMap;
use std::net::TcpListener;
use std::sync::Mutex;

use crate::digest::Digest;
use crate::snapshot::decode;
use crate::vm::{restore, Instance, Module};

use super::handshake::{handshake, Role};
use super::transfer::{read_request, receive_offered, send_ack, send_status_reply, Request};
use super::{MigrationError, MigrationId, NodeContext, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordStatus {
    /// Offer accepted, COMMIT not yet decided.
    Pending,
    Committed,
    Aborted,
}

#[derive(Debug)]
pub struct MigrationRecord {
    pub status: RecordStatus,
    pub instance: Option<Instance>,
    pub state_digest: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServedOutcome {
    Committed { id: MigrationId, state_digest: Digest },
    StatusAnswered { id: MigrationId, committed: bool },
}

/// Destination side. The ledger of migration ids is the single place where a
/// migration is decided.
pub struct MigrationServer {
    ctx: NodeContext,
    records: Mutex<HashMap<MigrationId, MigrationRecord>>,
}

impl MigrationServer {
    pub fn new(ctx: NodeContext) -> Self {
        MigrationServer { ctx, records: Mutex::new(HashMap::new()) }
    }

    pub fn ctx(&self) -> &NodeContext {
        &self.ctx
    }

    pub fn status(&self, id: &MigrationId) -> Option<RecordStatus> {
        self.records.lock().unwrap().get(id).map(|r| r.status)
    }

    /// Committed migrations whose restored instance is still held here and runnable.
    pub fn runnable(&self) -> Vec<MigrationId> {
        self.records
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, r)| r.status == RecordStatus::Committed && r.instance.as_ref().is_some_and(Instance::is_runnable))
            .map(|(id, _)| *id)
            .collect()
    }

    /// Hand a restored instance to the caller.
    pub fn take_instance(&self, id: &MigrationId) -> Option<Instance> {
        self.records.lock().unwrap().get_mut(id).and_then(|r| r.instance.take())
    }

    fn set(&self, id: &MigrationId, status: RecordStatus) {
        if let Some(r) = self.records.lock().unwrap().get_mut(id) {
            if r.status == RecordStatus::Pending {
                r.status = status;
            }
        }
    }

    /// Handle one connection: handshake, then either a transfer or a status query.
    pub fn serve(&self, transport: Box<dyn Transport>) -> Result<ServedOutcome, MigrationError> {
        let mut session = handshake(transport, &self.ctx, Role::Responder)?;
        let request = read_request(&mut session);
        let offer = match request {
            Ok(Request::Status(id)) => {
                let committed = {
                    let mut recs = self.records.lock().unwrap();
                    let rec = recs.entry(id).or_insert(MigrationRecord {
                        status: RecordStatus::Aborted,
                        instance: None,
                        state_digest: None,
                    });
                    if rec.status == RecordStatus::Pending {
                        rec.status = RecordStatus::Aborted;
                    }
                    rec.status == RecordStatus::Committed
                };
                let r = send_status_reply(&mut session, &id, committed);
                session.close();
                r?;
                return Ok(ServedOutcome::StatusAnswered { id, committed });
            }
            Ok(Request::Transfer(offer)) => offer,
            Err(e) => {
                session.abort(e.abort_reason(), &e.to_string());
                session.close();
                return Err(e);
            }
        };
        let id = offer.migration_id;
        {
            let mut recs = self.records.lock().unwrap();
            if recs.contains_key(&id) {
                drop(recs);
                let e = MigrationError::Protocol("migration id already used".into());
                session.abort(e.abort_reason(), &e.to_string());
                session.close();
                return Err(e);
            }
            recs.insert(id, MigrationRecord { status: RecordStatus::Pending, instance: None, state_digest: None });
        }

        let incoming = match receive_offered(&mut session, &self.ctx, offer) {
            Ok(i) => i,
            Err(e) => {
                self.set(&id, RecordStatus::Aborted);
                session.close();
                return Err(e);
            }
        };
        let restored = Module::from_bytes(&incoming.offer.module)
            .map_err(|e| MigrationError::RemoteRestoreFailed(e.to_string()))
            .and_then(|m| {
                let state = decode(&incoming.blob, session.storage_key())?;
                let inst = restore(&m, &state, incoming.offer.policy)?;
                Ok((inst, state.digest()))
            });
        let (instance, state_digest) = match restored {
            Ok(x) => x,
            Err(e) => {
                self.set(&id, RecordStatus::Aborted);
                let e = match e {
                    MigrationError::RemoteRestoreFailed(_) => e,
                    other => MigrationError::RemoteRestoreFailed(other.to_string()),
                };
                session.abort(e.abort_reason(), &e.to_string());
                session.close();
                return Err(e);
            }
        };
        {
            let mut recs = self.records.lock().unwrap();
            let rec = recs.get_mut(&id).expect("record inserted above");
            if rec.status != RecordStatus::Pending {
                drop(recs);
                let e = MigrationError::Protocol("migration already settled as aborted".into());
                session.abort(e.abort_reason(), &e.to_string());
                session.close();
                return Err(e);
            }
            rec.status = RecordStatus::Committed;
            rec.instance = Some(instance);
            rec.state_digest = Some(state_digest);
        }
        log::info!("committed migration {}", hex::encode(id));
        if let Err(e) = send_ack(&mut session, &state_digest) {
            // decided already; the source learns the outcome by status query
            log::warn!("acknowledgement for {} not delivered: {e}", hex::encode(id));
        }
        session.close();
        Ok(ServedOutcome::Committed { id, state_digest })
    }

    /// Accept TCP connections, one session at a time. With `once`, return after the first committed migration.
    pub fn listen(&self, listener: &TcpListener, once: bool) -> std::io::Result<Option<MigrationId>> {
        for conn in listener.incoming() {
            let stream = conn?;
            let _ = stream.set_nodelay(true);
            let peer = stream.peer_addr().ok();
            match self.serve(Box::new(stream)) {
                Ok(ServedOutcome::Committed { id, .. }) => {
                    if once {
                        return Ok(Some(id));
                    }
                }
                Ok(ServedOutcome::StatusAnswered { .. }) => {}
                Err(e) => log::warn!("session from {peer:?} failed: {e}"),
            }
        }
        Ok(None)
    }
}
