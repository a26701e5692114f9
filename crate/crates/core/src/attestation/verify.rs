use std::collections::{BTreeSet, HashMap};
use std::sync::Mutex;

use p256::ecdsa::signature::Verifier as _;
use p256::ecdsa::{Signature, VerifyingKey};
use serde::{Deserialize, Serialize};

use super::{AttestationQuote, EntryId, GlobalId, NodeId, Nonce};

/// Default freshness window in seconds.
pub const DEFAULT_FRESHNESS_WINDOW: u64 = 300;
/// Tolerated lead of a quote timestamp over the verifier's clock, in seconds.
pub const MAX_CLOCK_SKEW: u64 = 5;

/// Which signer keys are acceptable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyTrust {
    /// Any well-formed key; trust rests on the measurement whitelist alone.
    Any,
    /// Only these compressed SEC1 public keys (hex).
    Keys(BTreeSet<String>),
}

impl KeyTrust {
    pub fn only(keys: impl IntoIterator<Item = [u8; 33]>) -> Self {
        KeyTrust::Keys(keys.into_iter().map(hex::encode).collect())
    }

    fn allows(&self, key: &[u8; 33]) -> bool {
        match self {
            KeyTrust::Any => true,
            KeyTrust::Keys(set) => set.contains(&hex::encode(key)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    pub trusted_measurements: BTreeSet<GlobalId>,
    pub trusted_keys: KeyTrust,
    /// Maximum quote age in seconds; must be positive.
    pub freshness_window: u64,
    pub required_entry_ids: BTreeSet<EntryId>,
}

impl VerificationPolicy {
    pub fn new(trusted_measurements: impl IntoIterator<Item = GlobalId>) -> Self {
        VerificationPolicy {
            trusted_measurements: trusted_measurements.into_iter().collect(),
            trusted_keys: KeyTrust::Any,
            freshness_window: DEFAULT_FRESHNESS_WINDOW,
            required_entry_ids: BTreeSet::new(),
        }
    }

    pub fn require(mut self, ids: impl IntoIterator<Item = EntryId>) -> Self {
        self.required_entry_ids.extend(ids);
        self
    }

    pub fn with_keys(mut self, keys: KeyTrust) -> Self {
        self.trusted_keys = keys;
        self
    }

    pub fn with_window(mut self, secs: u64) -> Self {
        self.freshness_window = secs;
        self
    }
}

/// Summary of a quote that passed every check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifiedIdentity {
    pub node_id: NodeId,
    pub global_id: GlobalId,
    pub entry_ids: BTreeSet<EntryId>,
    pub counter: u64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttestationError {
    #[error("quote signature does not verify")]
    BadSignature,
    #[error("signer key is not trusted")]
    UnknownSigner,
    #[error("measurement {0} is not whitelisted")]
    UnknownMeasurement(GlobalId),
    #[error("quote answers a different nonce")]
    NonceMismatch,
    #[error("quote age {age_secs}s is outside the {window}s window")]
    StaleQuote { age_secs: i64, window: u64 },
    #[error("counter {got} does not exceed last seen {last}")]
    CounterReplay { last: u64, got: u64 },
    #[error("missing required capabilities {missing:?}")]
    CapabilityMismatch { missing: Vec<EntryId> },
    #[error("policy freshness window must be positive")]
    InvalidPolicy,
    #[error("malformed quote: {0}")]
    Malformed(String),
}

/// Quote verifier holding the per-node last-seen counter table.
#[derive(Debug, Default)]
pub struct Verifier {
    last_seen: Mutex<HashMap<NodeId, u64>>,
}

impl Verifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// Check a quote and, on success, record its counter.
    pub fn verify_quote(
        &self,
        quote: &AttestationQuote,
        policy: &VerificationPolicy,
        now: u64,
        expected_nonce: &Nonce,
    ) -> Result<VerifiedIdentity, AttestationError> {
        let mut table = self.last_seen.lock().unwrap();
        let v = check_quote(quote, policy, now, expected_nonce, &table)?;
        table.insert(v.node_id, v.counter);
        Ok(v)
    }

    pub fn last_seen(&self, node: &NodeId) -> Option<u64> {
        self.last_seen.lock().unwrap().get(node).copied()
    }

    /// Pretend `counter` was already seen from `node`.
    pub fn record(&self, node: NodeId, counter: u64) {
        let mut t = self.last_seen.lock().unwrap();
        let e = t.entry(node).or_insert(0);
        *e = (*e).max(counter);
    }

    pub(crate) fn with_table<R>(&self, f: impl FnOnce(&mut HashMap<NodeId, u64>) -> R) -> R {
        f(&mut self.last_seen.lock().unwrap())
    }
}

/// All checks, in order: signature, signer trust, measurement, nonce,
/// freshness, counter, capabilities. Does not mutate the table.
pub(crate) fn check_quote(
    quote: &AttestationQuote,
    policy: &VerificationPolicy,
    now: u64,
    expected_nonce: &Nonce,
    last_seen: &HashMap<NodeId, u64>,
) -> Result<VerifiedIdentity, AttestationError> {
    if policy.freshness_window == 0 {
        return Err(AttestationError::InvalidPolicy);
    }
    let key = VerifyingKey::from_sec1_bytes(&quote.signer).map_err(|_| AttestationError::BadSignature)?;
    let sig = Signature::from_slice(&quote.signature).map_err(|_| AttestationError::BadSignature)?;
    key.verify(&quote.signed_bytes(), &sig).map_err(|_| AttestationError::BadSignature)?;
    if !policy.trusted_keys.allows(&quote.signer) {
        return Err(AttestationError::UnknownSigner);
    }
    if !policy.trusted_measurements.contains(&quote.global_id) {
        return Err(AttestationError::UnknownMeasurement(quote.global_id));
    }
    if &quote.nonce != expected_nonce {
        return Err(AttestationError::NonceMismatch);
    }
    let age = now as i64 - quote.timestamp as i64;
    if age > policy.freshness_window as i64 || age < -(MAX_CLOCK_SKEW as i64) {
        return Err(AttestationError::StaleQuote {
            age_secs: age,
            window: policy.freshness_window,
        });
    }
    let node_id = quote.signer_id();
    if let Some(&last) = last_seen.get(&node_id) {
        if quote.counter <= last {
            return Err(AttestationError::CounterReplay {
                last,
                got: quote.counter,
            });
        }
    }
    let missing: Vec<EntryId> = policy.required_entry_ids.difference(&quote.entry_ids).copied().collect();
    if !missing.is_empty() {
        return Err(AttestationError::CapabilityMismatch { missing });
    }
    Ok(VerifiedIdentity {
        node_id,
        global_id: quote.global_id,
        entry_ids: quote.entry_ids.clone(),
        counter: quote.counter,
        timestamp: quote.timestamp,
    })
}
