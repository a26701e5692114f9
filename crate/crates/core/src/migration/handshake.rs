use std::sync::Mutex;
use std::time::Duration;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce as AeadNonce};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use p256::ecdh::EphemeralSecret;
use p256::elliptic_curve::sec1::ToEncodedPoint;
use p256::PublicKey;
use sha2::{Digest as _, Sha256};

use crate::attestation::{generate_quote, AttestationQuote, NodeId, Nonce, VerifiedIdentity};
use crate::bytes::Reader;
use crate::digest::Digest;
use crate::snapshot::SnapshotKey;

use super::wire::{read_frame, write_frame, Frame, FrameType};
use super::{AbortReason, MigrationError, NodeContext, Transport};

const HELLO_VERSION: u8 = 1;
const KDF_LABEL: &[u8] = b"portvm/session/v1";
const REKEY_LABEL: &[u8] = b"portvm/rekey/v1";

const REFRESH_REQUEST: u8 = 1;
const REFRESH_REPLY: u8 = 2;
const REFRESH_QUOTE: u8 = 3;
const REFRESH_DONE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Initiator,
    Responder,
}

/// Observable handshake steps, for instrumentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeEvent {
    FrameSent(FrameType),
    FrameReceived(FrameType),
    QuoteVerified(NodeId),
    KdfInvoked,
    Established,
}

pub trait HandshakeHooks: Send + Sync {
    fn event(&self, role: Role, event: &HandshakeEvent);
}

/// Hooks that record every event.
#[derive(Debug, Default)]
pub struct EventLog(Mutex<Vec<(Role, HandshakeEvent)>>);

impl EventLog {
    pub fn events(&self) -> Vec<(Role, HandshakeEvent)> {
        self.0.lock().unwrap().clone()
    }

    pub fn count(&self, role: Role, pred: impl Fn(&HandshakeEvent) -> bool) -> usize {
        self.0.lock().unwrap().iter().filter(|(r, e)| *r == role && pred(e)).count()
    }
}

impl HandshakeHooks for EventLog {
    fn event(&self, role: Role, event: &HandshakeEvent) {
        self.0.lock().unwrap().push((role, event.clone()));
    }
}

/// Per-direction AEAD state.
struct Channel {
    send_key: [u8; 32],
    recv_key: [u8; 32],
    epoch: u32,
    send_seq: u64,
    recv_seq: u64,
}

fn aead_nonce(epoch: u32, seq: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&epoch.to_le_bytes());
    n[4..].copy_from_slice(&seq.to_le_bytes());
    n
}

fn aad(ty: FrameType, epoch: u32, seq: u64) -> [u8; 13] {
    let mut a = [0u8; 13];
    a[0] = ty as u8;
    a[1..5].copy_from_slice(&epoch.to_le_bytes());
    a[5..].copy_from_slice(&seq.to_le_bytes());
    a
}

impl Channel {
    fn seal(&mut self, ty: FrameType, plaintext: &[u8]) -> Frame {
        let seq = self.send_seq;
        self.send_seq += 1;
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.send_key));
        let nonce = aead_nonce(self.epoch, seq);
        let ct = cipher
            .encrypt(AeadNonce::from_slice(&nonce), Payload { msg: plaintext, aad: &aad(ty, self.epoch, seq) })
            .expect("in-memory encryption");
        let mut payload = Vec::with_capacity(8 + ct.len());
        payload.extend_from_slice(&seq.to_le_bytes());
        payload.extend_from_slice(&ct);
        Frame::new(ty, payload)
    }

    fn open(&mut self, frame: &Frame) -> Result<Vec<u8>, MigrationError> {
        if frame.payload.len() < 8 {
            return Err(MigrationError::ChannelIntegrity(frame.ty));
        }
        let seq = u64::from_le_bytes(frame.payload[..8].try_into().unwrap());
        if seq != self.recv_seq {
            return Err(MigrationError::ChannelIntegrity(frame.ty));
        }
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.recv_key));
        let nonce = aead_nonce(self.epoch, seq);
        let pt = cipher
            .decrypt(
                AeadNonce::from_slice(&nonce),
                Payload { msg: &frame.payload[8..], aad: &aad(frame.ty, self.epoch, seq) },
            )
            .map_err(|_| MigrationError::ChannelIntegrity(frame.ty))?;
        self.recv_seq += 1;
        Ok(pt)
    }
}

/// An established, mutually attested channel.
pub struct Session {
    pub role: Role,
    pub peer: VerifiedIdentity,
    /// Digest over every handshake message in order.
    pub transcript_digest: Digest,
    pub established_at: Duration,
    pub last_refresh: Duration,
    /// Clock readings at each completed attestation refresh.
    pub refreshes: Vec<Duration>,
    storage_key: SnapshotKey,
    chan: Channel,
    transport: Box<dyn Transport>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("role", &self.role)
            .field("peer", &self.peer.node_id.short())
            .field("transcript", &self.transcript_digest.short())
            .field("epoch", &self.chan.epoch)
            .finish()
    }
}

impl Session {
    /// Key for snapshot blobs exchanged in this session.
    pub fn storage_key(&self) -> &SnapshotKey {
        &self.storage_key
    }

    pub fn epoch(&self) -> u32 {
        self.chan.epoch
    }

    /// Seal and send one frame; returns the bytes written.
    pub fn send(&mut self, ty: FrameType, plaintext: &[u8]) -> Result<usize, MigrationError> {
        let frame = self.chan.seal(ty, plaintext);
        write_frame(&mut self.transport, &frame)?;
        Ok(5 + frame.payload.len())
    }

    /// Receive and open one frame. A sealed ABORT becomes `PeerAbort`.
    pub fn recv(&mut self) -> Result<(FrameType, Vec<u8>), MigrationError> {
        let frame = read_frame(&mut self.transport)?;
        let pt = self.chan.open(&frame)?;
        if frame.ty == FrameType::Abort {
            return Err(decode_abort(&pt));
        }
        Ok((frame.ty, pt))
    }

    /// Best-effort sealed ABORT.
    pub fn abort(&mut self, reason: AbortReason, message: &str) {
        let _ = self.send(FrameType::Abort, &encode_abort(reason, message));
    }

    pub fn close(mut self) {
        self.transport.close();
    }

    /// Re-attest both sides with fresh nonces and ephemeral keys, then rekey.
    /// Called by the side that is sending data.
    pub fn refresh(&mut self, ctx: &NodeContext) -> Result<(), MigrationError> {
        let r = self.refresh_initiate(ctx);
        if let Err(e) = &r {
            if !matches!(e, MigrationError::PeerAbort { .. } | MigrationError::TransportClosed) {
                self.abort(AbortReason::RefreshFailed, &e.to_string());
            }
        }
        r.map_err(refresh_error)
    }

    fn refresh_initiate(&mut self, ctx: &NodeContext) -> Result<(), MigrationError> {
        let nonce_a: Nonce = ctx.random();
        let (eph, eph_pub) = ephemeral(ctx);
        let mut req = vec![REFRESH_REQUEST];
        req.extend_from_slice(&nonce_a);
        req.extend_from_slice(&eph_pub);
        self.send(FrameType::Refresh, &req)?;
        let mut transcript = Transcript::default();
        transcript.push(&req);

        let reply = self.expect(FrameType::Refresh)?;
        transcript.push(&reply);
        let mut r = Reader::new(&reply);
        let bad = |_| MigrationError::Protocol("malformed refresh reply".into());
        if r.u8().map_err(bad)? != REFRESH_REPLY {
            return Err(MigrationError::Protocol("unexpected refresh step".into()));
        }
        let nonce_b: Nonce = r.array().map_err(bad)?;
        let peer_pub: [u8; 33] = r.array().map_err(bad)?;
        let quote_b = AttestationQuote::from_bytes(r.rest()).map_err(|e| MigrationError::Protocol(e.to_string()))?;
        check_peer_quote(ctx, self.role, &quote_b, &nonce_a, &peer_pub, Some(self.peer.node_id))?;

        let quote_a = generate_quote(&ctx.identity, ctx.global_id, &ctx.entry_ids, nonce_b, Digest::of(&eph_pub), &*ctx.clock);
        let mut msg = vec![REFRESH_QUOTE];
        msg.extend_from_slice(&quote_a.to_bytes());
        self.send(FrameType::Refresh, &msg)?;
        transcript.push(&msg);

        let done = self.expect(FrameType::Refresh)?;
        if done != [REFRESH_DONE] {
            return Err(MigrationError::Protocol("unexpected refresh step".into()));
        }
        self.rekey(ctx, eph, &peer_pub, &transcript.digest())
    }

    /// Answer a REFRESH request already received as `request`.
    pub fn refresh_respond(&mut self, ctx: &NodeContext, request: &[u8]) -> Result<(), MigrationError> {
        let r = self.refresh_respond_inner(ctx, request);
        if let Err(e) = &r {
            if !matches!(e, MigrationError::PeerAbort { .. } | MigrationError::TransportClosed) {
                self.abort(AbortReason::RefreshFailed, &e.to_string());
            }
        }
        r.map_err(refresh_error)
    }

    fn refresh_respond_inner(&mut self, ctx: &NodeContext, request: &[u8]) -> Result<(), MigrationError> {
        let mut transcript = Transcript::default();
        transcript.push(request);
        let mut r = Reader::new(request);
        let bad = |_| MigrationError::Protocol("malformed refresh request".into());
        if r.u8().map_err(bad)? != REFRESH_REQUEST {
            return Err(MigrationError::Protocol("unexpected refresh step".into()));
        }
        let nonce_a: Nonce = r.array().map_err(bad)?;
        let peer_pub: [u8; 33] = r.array().map_err(bad)?;

        let nonce_b: Nonce = ctx.random();
        let (eph, eph_pub) = ephemeral(ctx);
        let quote_b = generate_quote(&ctx.identity, ctx.global_id, &ctx.entry_ids, nonce_a, Digest::of(&eph_pub), &*ctx.clock);
        let mut reply = vec![REFRESH_REPLY];
        reply.extend_from_slice(&nonce_b);
        reply.extend_from_slice(&eph_pub);
        reply.extend_from_slice(&quote_b.to_bytes());
        self.send(FrameType::Refresh, &reply)?;
        transcript.push(&reply);

        let msg = self.expect(FrameType::Refresh)?;
        transcript.push(&msg);
        if msg.first() != Some(&REFRESH_QUOTE) {
            return Err(MigrationError::Protocol("unexpected refresh step".into()));
        }
        let quote_a = AttestationQuote::from_bytes(&msg[1..]).map_err(|e| MigrationError::Protocol(e.to_string()))?;
        check_peer_quote(ctx, self.role, &quote_a, &nonce_b, &peer_pub, Some(self.peer.node_id))?;
        self.send(FrameType::Refresh, &[REFRESH_DONE])?;
        self.rekey(ctx, eph, &peer_pub, &transcript.digest())
    }

    fn expect(&mut self, ty: FrameType) -> Result<Vec<u8>, MigrationError> {
        let (got, pt) = self.recv()?;
        if got != ty {
            return Err(MigrationError::Protocol(format!("expected {ty}, got {got}")));
        }
        Ok(pt)
    }

    fn rekey(
        &mut self,
        ctx: &NodeContext,
        eph: EphemeralSecret,
        peer_pub: &[u8; 33],
        refresh_transcript: &Digest,
    ) -> Result<(), MigrationError> {
        let shared = agree(&eph, peer_pub)?;
        emit(ctx, self.role, HandshakeEvent::KdfInvoked);
        let (i2r, r2i) = match self.role {
            Role::Initiator => (self.chan.send_key, self.chan.recv_key),
            Role::Responder => (self.chan.recv_key, self.chan.send_key),
        };
        let salt = Digest::of_parts([REKEY_LABEL, &i2r[..], &r2i[..], &refresh_transcript.0[..]]);
        let hk = Hkdf::<Sha256>::new(Some(&salt.0), &shared);
        let mut okm = [0u8; 64];
        hk.expand(REKEY_LABEL, &mut okm).expect("64 bytes is a valid HKDF length");
        let (new_i2r, new_r2i): ([u8; 32], [u8; 32]) = (okm[..32].try_into().unwrap(), okm[32..].try_into().unwrap());
        let (send, recv) = match self.role {
            Role::Initiator => (new_i2r, new_r2i),
            Role::Responder => (new_r2i, new_i2r),
        };
        self.chan = Channel { send_key: send, recv_key: recv, epoch: self.chan.epoch + 1, send_seq: 0, recv_seq: 0 };
        let now = ctx.clock.now();
        self.last_refresh = now;
        self.refreshes.push(now);
        Ok(())
    }
}

fn refresh_error(e: MigrationError) -> MigrationError {
    match e {
        MigrationError::TransportClosed | MigrationError::PeerAbort { .. } | MigrationError::RefreshFailed(_) => e,
        other => MigrationError::RefreshFailed(other.to_string()),
    }
}

pub(crate) fn encode_abort(reason: AbortReason, message: &str) -> Vec<u8> {
    let mut out = vec![reason as u8];
    out.extend_from_slice(message.as_bytes());
    out
}

pub(crate) fn decode_abort(payload: &[u8]) -> MigrationError {
    let reason = AbortReason::from_u8(payload.first().copied().unwrap_or(255));
    let message = String::from_utf8_lossy(payload.get(1..).unwrap_or_default()).into_owned();
    MigrationError::PeerAbort { reason, message }
}

#[derive(Default)]
struct Transcript(Sha256);

impl Transcript {
    fn push(&mut self, body: &[u8]) {
        self.0.update((body.len() as u32).to_le_bytes());
        self.0.update(body);
    }

    fn digest(&self) -> Digest {
        Digest(self.0.clone().finalize().into())
    }
}

fn emit(ctx: &NodeContext, role: Role, e: HandshakeEvent) {
    if let Some(h) = &ctx.hooks {
        h.event(role, &e);
    }
}

fn ephemeral(ctx: &NodeContext) -> (EphemeralSecret, [u8; 33]) {
    let secret = ctx.with_rng(EphemeralSecret::random);
    let public: [u8; 33] = secret
        .public_key()
        .to_encoded_point(true)
        .as_bytes()
        .try_into()
        .expect("compressed point is 33 bytes");
    (secret, public)
}

fn agree(eph: &EphemeralSecret, peer: &[u8; 33]) -> Result<[u8; 32], MigrationError> {
    let pk = PublicKey::from_sec1_bytes(peer)
        .map_err(|_| MigrationError::Protocol("invalid key-agreement value".into()))?;
    Ok((*eph.diffie_hellman(&pk).raw_secret_bytes()).into())
}

/// Verify a peer quote and its key binding. During refresh, the signer must be the established peer.
fn check_peer_quote(
    ctx: &NodeContext,
    role: Role,
    quote: &AttestationQuote,
    nonce: &Nonce,
    peer_pub: &[u8; 33],
    expected_peer: Option<NodeId>,
) -> Result<VerifiedIdentity, MigrationError> {
    let v = ctx
        .verifier
        .verify_quote(quote, &ctx.policy, ctx.clock.now_secs(), nonce)
        .map_err(MigrationError::from_attestation)?;
    if quote.binding != Digest::of(peer_pub) {
        return Err(MigrationError::KeyConfirmFailed("quote binds a different key-agreement value".into()));
    }
    if expected_peer.is_some_and(|p| p != v.node_id) {
        return Err(MigrationError::KeyConfirmFailed("refresh quote from a different node".into()));
    }
    emit(ctx, role, HandshakeEvent::QuoteVerified(v.node_id));
    Ok(v)
}

struct Keys {
    i2r: [u8; 32],
    r2i: [u8; 32],
    confirm_i: [u8; 32],
    confirm_r: [u8; 32],
    storage: [u8; 32],
}

fn derive(shared: &[u8; 32], transcript: &Digest, gid_i: &Digest, gid_r: &Digest) -> Keys {
    let hk = Hkdf::<Sha256>::new(Some(&transcript.0), shared);
    let mut info = KDF_LABEL.to_vec();
    info.extend_from_slice(&gid_i.0);
    info.extend_from_slice(&gid_r.0);
    let mut okm = [0u8; 160];
    hk.expand(&info, &mut okm).expect("160 bytes is a valid HKDF length");
    let k = |i: usize| -> [u8; 32] { okm[i * 32..(i + 1) * 32].try_into().unwrap() };
    Keys { i2r: k(0), r2i: k(1), confirm_i: k(2), confirm_r: k(3), storage: k(4) }
}

fn mac(key: &[u8; 32], parts: &[&[u8]]) -> [u8; 32] {
    let mut m = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("any key length");
    for p in parts {
        m.update(p);
    }
    m.finalize().into_bytes().into()
}

fn mac_ok(key: &[u8; 32], parts: &[&[u8]], tag: &[u8]) -> bool {
    let mut m = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("any key length");
    for p in parts {
        m.update(p);
    }
    m.verify_slice(tag).is_ok()
}

struct Raw<'a> {
    t: &'a mut dyn Transport,
    ctx: &'a NodeContext,
    role: Role,
    transcript: Transcript,
}

impl Raw<'_> {
    fn send(&mut self, ty: FrameType, payload: Vec<u8>, hash: bool) -> Result<(), MigrationError> {
        let f = Frame::new(ty, payload);
        if hash {
            self.transcript.push(&f.body());
        }
        write_frame(self.t, &f)?;
        emit(self.ctx, self.role, HandshakeEvent::FrameSent(ty));
        Ok(())
    }

    fn recv(&mut self, want: FrameType, hash: bool) -> Result<Vec<u8>, MigrationError> {
        let f = read_frame(self.t)?;
        emit(self.ctx, self.role, HandshakeEvent::FrameReceived(f.ty));
        if f.ty == FrameType::Abort {
            return Err(decode_abort(&f.payload));
        }
        if f.ty != want {
            return Err(MigrationError::Protocol(format!("expected {want}, got {}", f.ty)));
        }
        if hash {
            self.transcript.push(&f.body());
        }
        Ok(f.payload)
    }

    fn abort(&mut self, e: &MigrationError) {
        if !matches!(e, MigrationError::PeerAbort { .. } | MigrationError::TransportClosed) {
            let _ = write_frame(self.t, &Frame::new(FrameType::Abort, encode_abort(e.abort_reason(), &e.to_string())));
        }
    }
}

fn hello(nonce: &Nonce, eph_pub: &[u8; 33]) -> Vec<u8> {
    let mut out = vec![HELLO_VERSION];
    out.extend_from_slice(nonce);
    out.extend_from_slice(eph_pub);
    out
}

fn parse_hello(p: &[u8]) -> Result<(Nonce, [u8; 33]), MigrationError> {
    let bad = |_| MigrationError::Protocol("malformed HELLO".into());
    let mut r = Reader::new(p);
    let v = r.u8().map_err(bad)?;
    if v != HELLO_VERSION {
        return Err(MigrationError::Protocol(format!("unsupported HELLO version {v}")));
    }
    let nonce = r.array().map_err(bad)?;
    let key = r.array().map_err(bad)?;
    if !r.is_empty() {
        return Err(MigrationError::Protocol("malformed HELLO".into()));
    }
    Ok((nonce, key))
}

fn parse_quote(p: &[u8]) -> Result<AttestationQuote, MigrationError> {
    AttestationQuote::from_bytes(p).map_err(|e| MigrationError::Protocol(format!("malformed quote: {e}")))
}

/// Run the attested handshake. On any failure the transport is closed and no key exists.
pub fn handshake(
    mut transport: Box<dyn Transport>,
    ctx: &NodeContext,
    role: Role,
) -> Result<Session, MigrationError> {
    let mut raw = Raw { t: &mut *transport, ctx, role, transcript: Transcript::default() };
    let result = match role {
        Role::Initiator => initiate(&mut raw),
        Role::Responder => respond(&mut raw),
    };
    match result {
        Ok((peer, keys, transcript_digest)) => {
            emit(ctx, role, HandshakeEvent::Established);
            let (send_key, recv_key) = match role {
                Role::Initiator => (keys.i2r, keys.r2i),
                Role::Responder => (keys.r2i, keys.i2r),
            };
            let now = ctx.clock.now();
            Ok(Session {
                role,
                peer,
                transcript_digest,
                established_at: now,
                last_refresh: now,
                refreshes: Vec::new(),
                storage_key: SnapshotKey::new(keys.storage),
                chan: Channel { send_key, recv_key, epoch: 0, send_seq: 0, recv_seq: 0 },
                transport,
            })
        }
        Err(e) => {
            raw.abort(&e);
            transport.close();
            Err(e)
        }
    }
}

type Established = (VerifiedIdentity, Keys, Digest);

fn initiate(raw: &mut Raw<'_>) -> Result<Established, MigrationError> {
    let ctx = raw.ctx;
    let nonce_i: Nonce = ctx.random();
    let (eph, eph_pub) = ephemeral(ctx);
    raw.send(FrameType::Hello, hello(&nonce_i, &eph_pub), true)?;
    let (nonce_r, peer_pub) = parse_hello(&raw.recv(FrameType::Hello, true)?)?;

    let q_i = generate_quote(&ctx.identity, ctx.global_id, &ctx.entry_ids, nonce_r, Digest::of(&eph_pub), &*ctx.clock);
    raw.send(FrameType::Quote, q_i.to_bytes(), true)?;
    let q_r = parse_quote(&raw.recv(FrameType::Quote, true)?)?;
    let peer = check_peer_quote(ctx, raw.role, &q_r, &nonce_i, &peer_pub, None)?;

    let shared = agree(&eph, &peer_pub)?;
    emit(ctx, raw.role, HandshakeEvent::KdfInvoked);
    let th = raw.transcript.digest();
    let keys = derive(&shared, &th, &ctx.global_id, &q_r.global_id);
    let kc_i = mac(&keys.confirm_i, &[b"I", &th.0]);
    raw.send(FrameType::KeyConfirm, kc_i.to_vec(), false)?;
    let kc_r = raw.recv(FrameType::KeyConfirm, false)?;
    if !mac_ok(&keys.confirm_r, &[b"R", &th.0, &kc_i], &kc_r) {
        return Err(MigrationError::KeyConfirmFailed("responder confirmation does not verify".into()));
    }
    let full = Digest::of_parts([&th.0[..], &kc_i[..], &kc_r[..]]);
    Ok((peer, keys, full))
}

fn respond(raw: &mut Raw<'_>) -> Result<Established, MigrationError> {
    let ctx = raw.ctx;
    let (nonce_i, peer_pub) = parse_hello(&raw.recv(FrameType::Hello, true)?)?;
    let nonce_r: Nonce = ctx.random();
    let (eph, eph_pub) = ephemeral(ctx);
    raw.send(FrameType::Hello, hello(&nonce_r, &eph_pub), true)?;

    let q_i = parse_quote(&raw.recv(FrameType::Quote, true)?)?;
    let peer = check_peer_quote(ctx, raw.role, &q_i, &nonce_r, &peer_pub, None)?;
    let q_r = generate_quote(&ctx.identity, ctx.global_id, &ctx.entry_ids, nonce_i, Digest::of(&eph_pub), &*ctx.clock);
    raw.send(FrameType::Quote, q_r.to_bytes(), true)?;

    let kc_i = raw.recv(FrameType::KeyConfirm, false)?;
    let shared = agree(&eph, &peer_pub)?;
    emit(ctx, raw.role, HandshakeEvent::KdfInvoked);
    let th = raw.transcript.digest();
    let keys = derive(&shared, &th, &q_i.global_id, &ctx.global_id);
    if !mac_ok(&keys.confirm_i, &[b"I", &th.0], &kc_i) {
        return Err(MigrationError::KeyConfirmFailed("initiator confirmation does not verify".into()));
    }
    let kc_r = mac(&keys.confirm_r, &[b"R", &th.0, &kc_i]);
    raw.send(FrameType::KeyConfirm, kc_r.to_vec(), false)?;
    let full = Digest::of_parts([&th.0[..], &kc_i[..], &kc_r[..]]);
    Ok((peer, keys, full))
}
