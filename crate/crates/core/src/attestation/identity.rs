use std::sync::Mutex;

use p256::ecdsa::signature::Signer;
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};

use crate::digest::Digest;

/// Digest of a node's compressed public key.
pub type NodeId = Digest;

/// Signing keypair plus the monotonic quote counter.
pub struct NodeIdentity {
    signing: SigningKey,
    public: [u8; 33],
    counter: Mutex<u64>,
}

impl NodeIdentity {
    pub fn generate() -> Self {
        Self::from_signing_key(SigningKey::random(&mut rand::rngs::OsRng))
    }

    /// Deterministic identity for tests and reproducible scenarios.
    pub fn from_seed(seed: u64) -> Self {
        let mut material = Digest::of_parts([&b"portvm/identity-seed"[..], &seed.to_le_bytes()[..]]).0;
        loop {
            if let Ok(k) = SigningKey::from_slice(&material) {
                return Self::from_signing_key(k);
            }
            material = Digest::of(&material).0;
        }
    }

    pub fn from_secret_bytes(bytes: &[u8]) -> Result<Self, String> {
        SigningKey::from_slice(bytes)
            .map(Self::from_signing_key)
            .map_err(|e| format!("invalid P-256 secret key: {e}"))
    }

    pub fn from_secret_hex(s: &str) -> Result<Self, String> {
        let raw = hex::decode(s.trim()).map_err(|e| e.to_string())?;
        Self::from_secret_bytes(&raw)
    }

    pub fn secret_hex(&self) -> String {
        hex::encode(self.signing.to_bytes())
    }

    fn from_signing_key(signing: SigningKey) -> Self {
        let point = VerifyingKey::from(&signing).to_encoded_point(true);
        let public: [u8; 33] = point.as_bytes().try_into().expect("compressed point is 33 bytes");
        NodeIdentity {
            signing,
            public,
            counter: Mutex::new(0),
        }
    }

    /// Compressed SEC1 public key.
    pub fn public_key(&self) -> [u8; 33] {
        self.public
    }

    pub fn node_id(&self) -> NodeId {
        Digest::of(&self.public)
    }

    /// Last counter value issued.
    pub fn counter(&self) -> u64 {
        *self.counter.lock().unwrap()
    }

    /// Resume counting after `value`, e.g. after a restart.
    pub fn set_counter_floor(&self, value: u64) {
        let mut c = self.counter.lock().unwrap();
        *c = (*c).max(value);
    }

    /// Bump the counter and sign `build(counter)` in one critical section, so
    /// signatures are issued in counter order.
    pub(crate) fn sign_next(&self, build: impl FnOnce(u64) -> Vec<u8>) -> (u64, Vec<u8>, [u8; 64]) {
        let mut c = self.counter.lock().unwrap();
        *c += 1;
        let body = build(*c);
        let sig: Signature = self.signing.sign(&body);
        (*c, body, sig.to_bytes().into())
    }
}

impl std::fmt::Debug for NodeIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeIdentity").field("node_id", &self.node_id().short()).finish()
    }
}
