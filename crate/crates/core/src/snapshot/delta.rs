use crate::bytes::Reader;
use crate::digest::Digest;
use crate::vm::{ExecutionState, PAGE_SIZE};

use super::{hmac, hmac_verify, SnapshotError, SnapshotKey};

const DELTA_MAGIC: &[u8; 4] = b"PDLT";
const DELTA_VERSION: u16 = 1;
const LABEL_DELTA: &[u8] = b"PSNP/delta";

/// Dirty pages plus a full replacement of the non-memory state, tagged with HMAC-SHA256.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaBlob {
    pub module_measurement: Digest,
    pub base_digest: Digest,
    pub target_digest: Digest,
    pub memory_len: u64,
    /// `(page index, page bytes)`, strictly increasing by index.
    pub pages: Vec<(u32, Vec<u8>)>,
    /// Frames, position, and step count of the target.
    pub control: Vec<u8>,
    pub tag: [u8; 32],
}

impl DeltaBlob {
    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + 96 + 8 + 4 + self.pages.len() * (4 + PAGE_SIZE) + 4 + self.control.len());
        out.extend_from_slice(DELTA_MAGIC);
        out.extend_from_slice(&DELTA_VERSION.to_le_bytes());
        out.extend_from_slice(self.module_measurement.as_bytes());
        out.extend_from_slice(self.base_digest.as_bytes());
        out.extend_from_slice(self.target_digest.as_bytes());
        out.extend_from_slice(&self.memory_len.to_le_bytes());
        out.extend_from_slice(&(self.pages.len() as u32).to_le_bytes());
        for (idx, page) in &self.pages {
            out.extend_from_slice(&idx.to_le_bytes());
            out.extend_from_slice(page);
        }
        out.extend_from_slice(&(self.control.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.control);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let trunc = |_| SnapshotError::TruncatedBlob;
        let mut r = Reader::new(bytes);
        if &r.array::<4>().map_err(trunc)? != DELTA_MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = r.u16().map_err(trunc)?;
        if version != DELTA_VERSION {
            return Err(SnapshotError::UnsupportedVersion(version));
        }
        let module_measurement = Digest(r.array().map_err(trunc)?);
        let base_digest = Digest(r.array().map_err(trunc)?);
        let target_digest = Digest(r.array().map_err(trunc)?);
        let memory_len = r.u64().map_err(trunc)?;
        let count = r.u32().map_err(trunc)? as usize;
        let mut pages = Vec::with_capacity(count.min(r.remaining() / PAGE_SIZE));
        for _ in 0..count {
            let idx = r.u32().map_err(trunc)?;
            pages.push((idx, r.take(PAGE_SIZE).map_err(trunc)?.to_vec()));
        }
        let clen = r.u32().map_err(trunc)? as usize;
        let control = r.take(clen).map_err(trunc)?.to_vec();
        let tag = r.array().map_err(trunc)?;
        if !r.is_empty() {
            return Err(SnapshotError::TrailingData(r.remaining()));
        }
        Ok(DeltaBlob {
            module_measurement,
            base_digest,
            target_digest,
            memory_len,
            pages,
            control,
            tag,
        })
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    /// Fraction of the memory pages carried by this delta.
    pub fn page_fraction(&self) -> f64 {
        let total = self.memory_len as usize / PAGE_SIZE;
        if total == 0 {
            0.0
        } else {
            self.pages.len() as f64 / total as f64
        }
    }
}

/// Delta that turns `base` into `new`: exactly the pages whose bytes differ, plus the frames.
pub fn delta(
    base: &ExecutionState,
    new: &ExecutionState,
    key: &SnapshotKey,
) -> Result<DeltaBlob, SnapshotError> {
    if base.module_measurement != new.module_measurement {
        return Err(SnapshotError::MeasurementMismatch);
    }
    if base.memory.len() != new.memory.len() {
        return Err(SnapshotError::Malformed("memory sizes differ".into()));
    }
    let pages = base
        .memory
        .chunks(PAGE_SIZE)
        .zip(new.memory.chunks(PAGE_SIZE))
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (_, b))| (i as u32, b.to_vec()))
        .collect();
    let mut d = DeltaBlob {
        module_measurement: new.module_measurement,
        base_digest: base.digest(),
        target_digest: new.digest(),
        memory_len: new.memory.len() as u64,
        pages,
        control: new.control_bytes(),
        tag: [0; 32],
    };
    d.tag = hmac(&key.derive(LABEL_DELTA), &[&d.body_bytes()]);
    Ok(d)
}

/// Apply a delta produced by [`delta`]. The result equals the delta's target byte for byte.
pub fn apply_delta(
    base: &ExecutionState,
    d: &DeltaBlob,
    key: &SnapshotKey,
) -> Result<ExecutionState, SnapshotError> {
    if !hmac_verify(&key.derive(LABEL_DELTA), &[&d.body_bytes()], &d.tag) {
        return Err(SnapshotError::IntegrityFailure { chunk: None });
    }
    if base.digest() != d.base_digest {
        return Err(SnapshotError::BaseMismatch);
    }
    if d.memory_len != base.memory.len() as u64 {
        return Err(SnapshotError::Malformed("memory length differs from base".into()));
    }
    let total_pages = base.memory.len() / PAGE_SIZE;
    let mut memory = base.memory.clone();
    let mut prev: Option<u32> = None;
    for (idx, page) in &d.pages {
        if prev.is_some_and(|p| *idx <= p) || *idx as usize >= total_pages || page.len() != PAGE_SIZE {
            return Err(SnapshotError::Malformed(format!("bad page entry {idx}")));
        }
        prev = Some(*idx);
        let at = *idx as usize * PAGE_SIZE;
        memory[at..at + PAGE_SIZE].copy_from_slice(page);
    }
    let (steps_executed, position, frames) =
        ExecutionState::parse_control(&d.control).map_err(|e| SnapshotError::Malformed(e.to_string()))?;
    let out = ExecutionState {
        module_measurement: d.module_measurement,
        frames,
        memory,
        position,
        steps_executed,
    };
    if out.digest() != d.target_digest {
        return Err(SnapshotError::IntegrityFailure { chunk: None });
    }
    Ok(out)
}
