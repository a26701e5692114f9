use std::collections::BTreeSet;

use crate::bytes::Reader;
use crate::clock::Clock;
use crate::digest::Digest;

use super::{EntryId, GlobalId, NodeIdentity, Nonce};

pub const QUOTE_VERSION: u8 = 1;

/// Signed attestation claim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationQuote {
    pub version: u8,
    /// Compressed SEC1 public key of the signer.
    pub signer: [u8; 33],
    pub global_id: GlobalId,
    pub entry_ids: BTreeSet<EntryId>,
    pub nonce: Nonce,
    pub counter: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Digest of the holder's ephemeral key-agreement public value.
    pub binding: Digest,
    /// Digest of the next hop's quote in a multi-hop chain.
    pub next_hop: Option<Digest>,
    /// Digest of application data vouched for by the signer (e.g. a computation verdict).
    pub report_data: Option<Digest>,
    pub signature: [u8; 64],
}

/// Optional fields of a quote.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuoteExtras {
    pub next_hop: Option<Digest>,
    pub report_data: Option<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuoteDecodeError {
    #[error("quote is truncated")]
    Truncated,
    #[error("unsupported quote version {0}")]
    UnsupportedVersion(u8),
    #[error("entry ids are not strictly increasing")]
    UnsortedEntryIds,
    #[error("invalid optional-field flag {0}")]
    BadFlag(u8),
    #[error("{0} trailing bytes")]
    TrailingData(usize),
}

/// Issue a quote answering `nonce`. Increments the identity's counter.
pub fn generate_quote(
    identity: &NodeIdentity,
    global_id: GlobalId,
    entry_ids: &BTreeSet<EntryId>,
    nonce: Nonce,
    key_binding: Digest,
    clock: &dyn Clock,
) -> AttestationQuote {
    generate_quote_with(identity, global_id, entry_ids, nonce, key_binding, QuoteExtras::default(), clock)
}

pub fn generate_quote_with(
    identity: &NodeIdentity,
    global_id: GlobalId,
    entry_ids: &BTreeSet<EntryId>,
    nonce: Nonce,
    key_binding: Digest,
    extras: QuoteExtras,
    clock: &dyn Clock,
) -> AttestationQuote {
    let timestamp = clock.now_secs();
    let mut quote = AttestationQuote {
        version: QUOTE_VERSION,
        signer: identity.public_key(),
        global_id,
        entry_ids: entry_ids.clone(),
        nonce,
        counter: 0,
        timestamp,
        binding: key_binding,
        next_hop: extras.next_hop,
        report_data: extras.report_data,
        signature: [0; 64],
    };
    let (counter, _, sig) = identity.sign_next(|c| {
        quote.counter = c;
        quote.signed_bytes()
    });
    quote.counter = counter;
    quote.signature = sig;
    quote
}

fn put_opt(out: &mut Vec<u8>, d: &Option<Digest>) {
    match d {
        Some(d) => {
            out.push(1);
            out.extend_from_slice(d.as_bytes());
        }
        None => out.push(0),
    }
}

impl AttestationQuote {
    /// Every field before the signature, in wire order.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256);
        out.push(self.version);
        out.extend_from_slice(&self.signer);
        out.extend_from_slice(self.global_id.as_bytes());
        out.extend_from_slice(&(self.entry_ids.len() as u16).to_le_bytes());
        for id in &self.entry_ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.counter.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(self.binding.as_bytes());
        put_opt(&mut out, &self.next_hop);
        put_opt(&mut out, &self.report_data);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signed_bytes();
        out.extend_from_slice(&self.signature);
        out
    }

    /// SHA-256 of the full encoding; what a previous hop signs as `next_hop`.
    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }

    pub fn signer_id(&self) -> Digest {
        Digest::of(&self.signer)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QuoteDecodeError> {
        let mut r = Reader::new(bytes);
        let q = Self::read(&mut r)?;
        if !r.is_empty() {
            return Err(QuoteDecodeError::TrailingData(r.remaining()));
        }
        Ok(q)
    }

    /// Parse one quote from the front of `r`.
    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self, QuoteDecodeError> {
        let t = |_| QuoteDecodeError::Truncated;
        let version = r.u8().map_err(t)?;
        if version != QUOTE_VERSION {
            return Err(QuoteDecodeError::UnsupportedVersion(version));
        }
        let signer = r.array().map_err(t)?;
        let global_id = Digest(r.array().map_err(t)?);
        let n = r.u16().map_err(t)?;
        let mut entry_ids = BTreeSet::new();
        let mut prev = None;
        for _ in 0..n {
            let id = r.u32().map_err(t)?;
            if prev.is_some_and(|p| id <= p) {
                return Err(QuoteDecodeError::UnsortedEntryIds);
            }
            prev = Some(id);
            entry_ids.insert(id);
        }
        let nonce = r.array().map_err(t)?;
        let counter = r.u64().map_err(t)?;
        let timestamp = r.u64().map_err(t)?;
        let binding = Digest(r.array().map_err(t)?);
        let opt = |r: &mut Reader<'_>| -> Result<Option<Digest>, QuoteDecodeError> {
            match r.u8().map_err(t)? {
                0 => Ok(None),
                1 => Ok(Some(Digest(r.array().map_err(t)?))),
                f => Err(QuoteDecodeError::BadFlag(f)),
            }
        };
        let next_hop = opt(r)?;
        let report_data = opt(r)?;
        let signature = r.array().map_err(t)?;
        Ok(AttestationQuote {
            version,
            signer,
            global_id,
            entry_ids,
            nonce,
            counter,
            timestamp,
            binding,
            next_hop,
            report_data,
            signature,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    #[test]
    fn wire_round_trip_and_counter_monotone() {
        let id = NodeIdentity::from_seed(5);
        let clock = ManualClock::at_secs(1_000);
        let ids: BTreeSet<EntryId> = [1003, 7].into();
        let a = generate_quote(&id, Digest::of(b"bin"), &ids, [1; 32], Digest::of(b"k"), &clock);
        let b = generate_quote(&id, Digest::of(b"bin"), &ids, [2; 32], Digest::of(b"k"), &clock);
        assert!(b.counter > a.counter);
        assert_eq!(a.timestamp, 1_000);
        let bytes = a.to_bytes();
        assert_eq!(bytes.len(), 1 + 33 + 32 + 2 + 8 + 32 + 8 + 8 + 32 + 1 + 1 + 64);
        assert_eq!(AttestationQuote::from_bytes(&bytes).unwrap(), a);
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(AttestationQuote::from_bytes(&long), Err(QuoteDecodeError::TrailingData(1)));
    }
}
