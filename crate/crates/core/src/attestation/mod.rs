//! Software-rooted attestation.
//!
//! Node keypairs (ECDSA P-256) stand in for hardware vendor keys. A quote
//! binds a binary measurement, a capability set, a verifier nonce, freshness
//! evidence (counter and timestamp), and the digest of the holder's ephemeral
//! key-agreement value. Wire layout is in `docs/quote-format.md`.

mod chain;
mod computation;
mod identity;
mod merkle;
mod quote;
mod registry;
mod verify;

pub use chain::{issue_chain, verify_chain, ChainError, ChainResult, HopSpec};
pub use computation::{
    attest_computation, canonical_inputs, AttestationVerdict, ComputationError, ReferenceKernel,
    DEFAULT_EPSILON, KERNEL_DIM,
};
pub use identity::{NodeId, NodeIdentity};
pub use merkle::{ComponentTree, MerkleError, MerkleProof};
pub use quote::{generate_quote, generate_quote_with, AttestationQuote, QuoteDecodeError, QuoteExtras, QUOTE_VERSION};
pub use registry::{CapabilityRegistry, RegistryError};
pub use verify::{
    AttestationError, KeyTrust, VerificationPolicy, VerifiedIdentity, Verifier,
    DEFAULT_FRESHNESS_WINDOW, MAX_CLOCK_SKEW,
};

use crate::digest::Digest;

/// Digest identifying an exact binary.
pub type GlobalId = Digest;

/// Registered runtime capability id.
pub type EntryId = u32;

/// Neural-network acceleration interface.
pub const WASI_NN: EntryId = 1003;

/// SHA-256 over the exact bytes being attested.
pub fn measure(binary: &[u8]) -> GlobalId {
    Digest::of(binary)
}

/// 32-byte verifier challenge.
pub type Nonce = [u8; 32];

/// Fresh random challenge.
pub fn fresh_nonce() -> Nonce {
    rand::random()
}
