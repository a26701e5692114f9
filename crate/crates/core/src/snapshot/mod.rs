//! Snapshot container (`.psnp`) and page-level deltas.
//!
//! A snapshot carries one encoded [`ExecutionState`](crate::vm::ExecutionState).
//! The plaintext is split into 1 MiB chunks; each chunk is compressed on its
//! own and sealed with ChaCha20-Poly1305, with the file header and the chunk
//! sequence number bound into the associated data. A SHA-256 digest of the
//! whole plaintext trails the chunks. The byte layout is in
//! `docs/snapshot-format.md`.

mod blob;
mod delta;

pub use blob::{decode, decode_bytes, encode, Chunk, SnapshotBlob, SnapshotHeader, HEADER_LEN};
pub use delta::{apply_delta, delta, DeltaBlob};

use hmac::{Hmac, Mac};
use sha2::Sha256;

pub const MAGIC: &[u8; 4] = b"PSNP";
pub const FORMAT_VERSION: u16 = 1;
/// Plaintext bytes per chunk.
pub const CHUNK_SIZE: usize = 1 << 20;

pub(crate) type HmacSha256 = Hmac<Sha256>;

/// Compression codec, recorded by id in the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Codec {
    Stored = 0,
    Deflate = 1,
}

impl Codec {
    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Codec::Stored),
            1 => Some(Codec::Deflate),
            _ => None,
        }
    }
}

impl std::str::FromStr for Codec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stored" | "none" => Ok(Codec::Stored),
            "deflate" => Ok(Codec::Deflate),
            other => Err(format!("unknown codec `{other}`")),
        }
    }
}

/// AEAD, recorded by id in the header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Cipher {
    ChaCha20Poly1305 = 1,
}

impl Cipher {
    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Cipher::ChaCha20Poly1305),
            _ => None,
        }
    }
}

/// 32-byte symmetric key scoped to a session or to storage.
#[derive(Clone, PartialEq, Eq)]
pub struct SnapshotKey([u8; 32]);

impl SnapshotKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        SnapshotKey(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, String> {
        let v = hex::decode(s.trim()).map_err(|e| e.to_string())?;
        let arr: [u8; 32] = v.try_into().map_err(|_| "key must be 32 bytes".to_string())?;
        Ok(SnapshotKey(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Purpose-specific subkey.
    pub(crate) fn derive(&self, label: &[u8]) -> [u8; 32] {
        let mut mac = <HmacSha256 as Mac>::new_from_slice(&self.0).expect("any key length");
        mac.update(label);
        mac.finalize().into_bytes().into()
    }
}

impl std::fmt::Debug for SnapshotKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SnapshotKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("not a snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported codec id {0}")]
    UnsupportedCodec(u8),
    #[error("unsupported cipher id {0}")]
    UnsupportedCipher(u8),
    #[error("snapshot is truncated")]
    TruncatedBlob,
    #[error("{0} unexpected bytes after snapshot")]
    TrailingData(usize),
    #[error("authentication failed (wrong key or altered header)")]
    AuthenticationFailure,
    #[error("integrity check failed{}", match .chunk { Some(c) => format!(" in chunk {c}"), None => " on the whole-snapshot digest".to_string() })]
    IntegrityFailure { chunk: Option<u32> },
    #[error("states belong to different modules")]
    MeasurementMismatch,
    #[error("delta was built against a different base state")]
    BaseMismatch,
    #[error("malformed content: {0}")]
    Malformed(String),
}

pub(crate) fn hmac(key: &[u8; 32], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

pub(crate) fn hmac_verify(key: &[u8; 32], parts: &[&[u8]], tag: &[u8]) -> bool {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("any key length");
    for p in parts {
        mac.update(p);
    }
    mac.verify_slice(tag).is_ok()
}
