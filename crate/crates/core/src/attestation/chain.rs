use std::collections::BTreeSet;

use crate::clock::Clock;
use crate::digest::Digest;

use super::quote::generate_quote_with;
use super::verify::check_quote;
use super::{
    AttestationError, AttestationQuote, EntryId, GlobalId, NodeIdentity, Nonce, QuoteExtras,
    VerificationPolicy, VerifiedIdentity, Verifier,
};

/// Verified path, source first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainResult {
    pub path: Vec<VerifiedIdentity>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("empty chain")]
    Empty,
    #[error("hop {hop}: {error}")]
    Hop { hop: usize, error: AttestationError },
    #[error("hop {0} does not commit to the next hop's quote")]
    BrokenLink(usize),
}

/// Every hop answers `nonce`. Hop i must carry the digest of quote i+1 and the
/// last hop must carry none. Counters are recorded only if the whole chain verifies.
pub fn verify_chain(
    verifier: &Verifier,
    quotes: &[AttestationQuote],
    policy: &VerificationPolicy,
    now: u64,
    nonce: &Nonce,
) -> Result<ChainResult, ChainError> {
    if quotes.is_empty() {
        return Err(ChainError::Empty);
    }
    verifier.with_table(|table| {
        let mut scratch = table.clone();
        let mut path = Vec::with_capacity(quotes.len());
        for (hop, q) in quotes.iter().enumerate() {
            let v = check_quote(q, policy, now, nonce, &scratch).map_err(|error| ChainError::Hop { hop, error })?;
            let want = quotes.get(hop + 1).map(AttestationQuote::digest);
            if q.next_hop != want {
                return Err(ChainError::BrokenLink(hop));
            }
            scratch.insert(v.node_id, v.counter);
            path.push(v);
        }
        *table = scratch;
        Ok(ChainResult { path })
    })
}

/// One hop's contribution to a chain.
pub struct HopSpec<'a> {
    pub identity: &'a NodeIdentity,
    pub global_id: GlobalId,
    pub entry_ids: BTreeSet<EntryId>,
    pub binding: Digest,
}

/// Issue a chain of quotes answering `nonce`, signing from the destination backwards.
pub fn issue_chain(hops: &[HopSpec<'_>], nonce: Nonce, clock: &dyn Clock) -> Vec<AttestationQuote> {
    let mut out: Vec<AttestationQuote> = Vec::with_capacity(hops.len());
    for h in hops.iter().rev() {
        let extras = QuoteExtras {
            next_hop: out.last().map(AttestationQuote::digest),
            report_data: None,
        };
        out.push(generate_quote_with(h.identity, h.global_id, &h.entry_ids, nonce, h.binding, extras, clock));
    }
    out.reverse();
    out
}
