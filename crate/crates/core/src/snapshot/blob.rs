use std::io::{Read, Write};

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::bytes::Reader;
use crate::digest::Digest;
use crate::vm::ExecutionState;

use super::{
    hmac, hmac_verify, Cipher, Codec, SnapshotError, SnapshotKey, CHUNK_SIZE, FORMAT_VERSION,
    MAGIC,
};

/// Encoded header length in bytes.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 32 + 4 + 8 + 32;
const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;

const LABEL_AEAD: &[u8] = b"PSNP/aead";
const LABEL_MAC: &[u8] = b"PSNP/mac";
const LABEL_KEY_CHECK: &[u8] = b"PSNP/key-check";
const LABEL_NONCE: &[u8] = b"PSNP/nonce";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotHeader {
    pub version: u16,
    pub codec: Codec,
    pub cipher: Cipher,
    pub module_measurement: Digest,
    pub chunk_count: u32,
    pub plaintext_len: u64,
    /// Keyed commitment to the key and the preceding header fields.
    pub key_check: [u8; 32],
}

impl SnapshotHeader {
    /// Header bytes without the key check; covered by the key check and by every chunk's AAD.
    fn prefix_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.push(self.codec as u8);
        out.push(self.cipher as u8);
        out.extend_from_slice(self.module_measurement.as_bytes());
        out.extend_from_slice(&self.chunk_count.to_le_bytes());
        out.extend_from_slice(&self.plaintext_len.to_le_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.prefix_bytes();
        out.extend_from_slice(&self.key_check);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub seq: u32,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

/// An encoded snapshot: header, sealed chunks, and the plaintext digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotBlob {
    pub header: SnapshotHeader,
    pub chunks: Vec<Chunk>,
    /// SHA-256 over the whole plaintext.
    pub digest: Digest,
}

impl SnapshotBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self.chunks.iter().map(|c| 4 + NONCE_LEN + 4 + c.ciphertext.len() + TAG_LEN).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + body + 32);
        out.extend_from_slice(&self.header.to_bytes());
        for c in &self.chunks {
            out.extend_from_slice(&c.seq.to_le_bytes());
            out.extend_from_slice(&c.nonce);
            out.extend_from_slice(&(c.ciphertext.len() as u32).to_le_bytes());
            out.extend_from_slice(&c.ciphertext);
            out.extend_from_slice(&c.tag);
        }
        out.extend_from_slice(self.digest.as_bytes());
        out
    }

    /// Parse the container. Cryptographic checks happen in [`decode`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let trunc = |_| SnapshotError::TruncatedBlob;
        let mut r = Reader::new(bytes);
        if &r.array::<4>().map_err(trunc)? != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = r.u16().map_err(trunc)?;
        if version != FORMAT_VERSION {
            return Err(SnapshotError::UnsupportedVersion(version));
        }
        let codec_id = r.u8().map_err(trunc)?;
        let codec = Codec::from_id(codec_id).ok_or(SnapshotError::UnsupportedCodec(codec_id))?;
        let cipher_id = r.u8().map_err(trunc)?;
        let cipher = Cipher::from_id(cipher_id).ok_or(SnapshotError::UnsupportedCipher(cipher_id))?;
        let header = SnapshotHeader {
            version,
            codec,
            cipher,
            module_measurement: Digest(r.array().map_err(trunc)?),
            chunk_count: r.u32().map_err(trunc)?,
            plaintext_len: r.u64().map_err(trunc)?,
            key_check: r.array().map_err(trunc)?,
        };
        let mut chunks = Vec::new();
        for _ in 0..header.chunk_count {
            let seq = r.u32().map_err(trunc)?;
            let nonce = r.array().map_err(trunc)?;
            let len = r.u32().map_err(trunc)? as usize;
            let ciphertext = r.take(len).map_err(trunc)?.to_vec();
            let tag = r.array().map_err(trunc)?;
            chunks.push(Chunk {
                seq,
                nonce,
                ciphertext,
                tag,
            });
        }
        let digest = Digest(r.array().map_err(trunc)?);
        if !r.is_empty() {
            return Err(SnapshotError::TrailingData(r.remaining()));
        }
        Ok(SnapshotBlob {
            header,
            chunks,
            digest,
        })
    }

    /// Size of the serialized blob in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN
            + self
                .chunks
                .iter()
                .map(|c| 4 + NONCE_LEN + 4 + c.ciphertext.len() + TAG_LEN)
                .sum::<usize>()
            + 32
    }

    /// Plaintext size over serialized size; above 1 means the blob is smaller than the state.
    pub fn compression_ratio(&self) -> f64 {
        self.header.plaintext_len as f64 / self.encoded_len() as f64
    }
}

fn chunk_aad(header_prefix: &[u8], seq: u32) -> Vec<u8> {
    let mut aad = header_prefix.to_vec();
    aad.extend_from_slice(&seq.to_le_bytes());
    aad
}

fn compress(codec: Codec, data: &[u8]) -> Vec<u8> {
    match codec {
        Codec::Stored => data.to_vec(),
        Codec::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::with_capacity(data.len() / 2), Compression::default());
            enc.write_all(data).expect("writing to a Vec cannot fail");
            enc.finish().expect("writing to a Vec cannot fail")
        }
    }
}

fn decompress(codec: Codec, data: Vec<u8>) -> Option<Vec<u8>> {
    match codec {
        Codec::Stored => Some(data),
        Codec::Deflate => {
            let mut out = Vec::with_capacity(CHUNK_SIZE);
            DeflateDecoder::new(&data[..])
                .take(CHUNK_SIZE as u64 + 1)
                .read_to_end(&mut out)
                .ok()?;
            Some(out)
        }
    }
}

/// Encode a state. Deterministic: the same state, key, and codec always give the same bytes.
pub fn encode(state: &ExecutionState, key: &SnapshotKey, codec: Codec) -> SnapshotBlob {
    let plaintext = state.to_bytes();
    let aead_key = key.derive(LABEL_AEAD);
    let mac_key = key.derive(LABEL_MAC);
    let aead = ChaCha20Poly1305::new(Key::from_slice(&aead_key));

    let mut header = SnapshotHeader {
        version: FORMAT_VERSION,
        codec,
        cipher: Cipher::ChaCha20Poly1305,
        module_measurement: state.module_measurement,
        chunk_count: plaintext.len().div_ceil(CHUNK_SIZE) as u32,
        plaintext_len: plaintext.len() as u64,
        key_check: [0; 32],
    };
    let prefix = header.prefix_bytes();
    header.key_check = hmac(&mac_key, &[LABEL_KEY_CHECK, &prefix]);

    let chunks = plaintext
        .chunks(CHUNK_SIZE)
        .enumerate()
        .map(|(i, piece)| {
            let seq = i as u32;
            // Synthetic nonce: a function of the key, position, and content, so
            // equal nonces imply equal plaintexts and encoding stays deterministic.
            let content = Digest::of(piece);
            let n = hmac(&mac_key, &[LABEL_NONCE, &seq.to_le_bytes(), content.as_bytes()]);
            let nonce: [u8; NONCE_LEN] = n[..NONCE_LEN].try_into().expect("12 bytes");
            let aad = chunk_aad(&prefix, seq);
            let packed = compress(codec, piece);
            let mut sealed = aead
                .encrypt(Nonce::from_slice(&nonce), Payload { msg: &packed, aad: &aad })
                .expect("encryption of in-memory data cannot fail");
            let tag: [u8; TAG_LEN] = sealed.split_off(sealed.len() - TAG_LEN).try_into().expect("16 bytes");
            Chunk {
                seq,
                nonce,
                ciphertext: sealed,
                tag,
            }
        })
        .collect();

    SnapshotBlob {
        header,
        chunks,
        digest: Digest::of(&plaintext),
    }
}

/// Verify and decode a blob. Nothing is returned unless every check passes.
pub fn decode(blob: &SnapshotBlob, key: &SnapshotKey) -> Result<ExecutionState, SnapshotError> {
    let h = &blob.header;
    if h.version != FORMAT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(h.version));
    }
    let aead_key = key.derive(LABEL_AEAD);
    let mac_key = key.derive(LABEL_MAC);
    let prefix = h.prefix_bytes();
    if !hmac_verify(&mac_key, &[LABEL_KEY_CHECK, &prefix], &h.key_check) {
        return Err(SnapshotError::AuthenticationFailure);
    }
    if blob.chunks.len() != h.chunk_count as usize {
        return Err(SnapshotError::TruncatedBlob);
    }
    let expected_chunks = (h.plaintext_len as usize).div_ceil(CHUNK_SIZE);
    if expected_chunks != blob.chunks.len() {
        return Err(SnapshotError::IntegrityFailure { chunk: None });
    }

    let aead = ChaCha20Poly1305::new(Key::from_slice(&aead_key));
    let mut plaintext = Vec::with_capacity(h.plaintext_len as usize);
    for (i, c) in blob.chunks.iter().enumerate() {
        let fail = SnapshotError::IntegrityFailure { chunk: Some(i as u32) };
        if c.seq != i as u32 {
            return Err(fail);
        }
        let aad = chunk_aad(&prefix, c.seq);
        let mut sealed = Vec::with_capacity(c.ciphertext.len() + TAG_LEN);
        sealed.extend_from_slice(&c.ciphertext);
        sealed.extend_from_slice(&c.tag);
        let packed = aead
            .decrypt(Nonce::from_slice(&c.nonce), Payload { msg: &sealed, aad: &aad })
            .map_err(|_| fail.clone())?;
        let piece = decompress(h.codec, packed).ok_or_else(|| fail.clone())?;
        let want = CHUNK_SIZE.min(h.plaintext_len as usize - plaintext.len());
        if piece.len() != want {
            return Err(fail);
        }
        plaintext.extend_from_slice(&piece);
    }
    if plaintext.len() as u64 != h.plaintext_len || Digest::of(&plaintext) != blob.digest {
        return Err(SnapshotError::IntegrityFailure { chunk: None });
    }
    let state =
        ExecutionState::from_bytes(&plaintext).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
    if state.module_measurement != h.module_measurement {
        return Err(SnapshotError::Malformed("header measurement differs from state".into()));
    }
    Ok(state)
}

/// Parse and decode a serialized blob.
pub fn decode_bytes(bytes: &[u8], key: &SnapshotKey) -> Result<ExecutionState, SnapshotError> {
    decode(&SnapshotBlob::from_bytes(bytes)?, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::{Frame, Position, PAGE_SIZE};

    fn state(pages: usize, fill: impl Fn(usize) -> u8) -> ExecutionState {
        ExecutionState {
            module_measurement: Digest::of(b"module"),
            frames: vec![Frame {
                function: 0,
                return_position: None,
                locals: vec![3, 4],
                operands: vec![],
            }],
            memory: (0..pages * PAGE_SIZE).map(fill).collect(),
            position: Position::new(0, 2),
            steps_executed: 12345,
        }
    }

    fn key(b: u8) -> SnapshotKey {
        SnapshotKey::new([b; 32])
    }

    #[test]
    fn round_trip_both_codecs() {
        let s = state(3, |i| (i / 1000) as u8);
        for codec in [Codec::Stored, Codec::Deflate] {
            let blob = encode(&s, &key(1), codec);
            let back = decode_bytes(&blob.to_bytes(), &key(1)).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.steps_executed, 12345);
            assert_eq!(SnapshotBlob::from_bytes(&blob.to_bytes()).unwrap(), blob);
            assert_eq!(blob.encoded_len(), blob.to_bytes().len());
        }
        let deflated = encode(&s, &key(1), Codec::Deflate);
        assert!(deflated.compression_ratio() > 10.0);
    }

    #[test]
    fn wrong_key_is_authentication_failure() {
        let blob = encode(&state(1, |_| 0), &key(1), Codec::Deflate);
        assert_eq!(decode(&blob, &key(2)), Err(SnapshotError::AuthenticationFailure));
    }

    #[test]
    fn flipped_ciphertext_names_the_chunk() {
        let mut blob = encode(&state(40, |i| (i % 251) as u8), &key(1), Codec::Stored);
        assert_eq!(blob.chunks.len(), 3);
        blob.chunks[1].ciphertext[10] ^= 0x40;
        assert_eq!(decode(&blob, &key(1)), Err(SnapshotError::IntegrityFailure { chunk: Some(1) }));
    }

    #[test]
    fn version_999_is_unsupported() {
        let mut bytes = encode(&state(1, |_| 0), &key(1), Codec::Stored).to_bytes();
        bytes[4..6].copy_from_slice(&999u16.to_le_bytes());
        assert_eq!(decode_bytes(&bytes, &key(1)), Err(SnapshotError::UnsupportedVersion(999)));
    }

    #[test]
    fn removed_chunk_is_detected() {
        // 5 chunks; cut chunk 3 out of the byte stream
        let s = state(70, |i| (i * 7 % 256) as u8);
        let blob = encode(&s, &key(9), Codec::Stored);
        assert_eq!(blob.chunks.len(), 5);
        let mut cut = blob.clone();
        cut.chunks.remove(3);
        let err = decode_bytes(&cut.to_bytes(), &key(9)).unwrap_err();
        assert!(
            matches!(err, SnapshotError::TruncatedBlob | SnapshotError::IntegrityFailure { .. }),
            "{err:?}"
        );
        // and with the count patched to match, the sequence gap is reported
        cut.header.chunk_count = 4;
        assert!(decode(&cut, &key(9)).is_err());
    }

    #[test]
    fn encoding_is_deterministic() {
        let s = state(2, |i| (i % 13) as u8);
        assert_eq!(
            encode(&s, &key(4), Codec::Deflate).to_bytes(),
            encode(&s, &key(4), Codec::Deflate).to_bytes()
        );
    }
}
