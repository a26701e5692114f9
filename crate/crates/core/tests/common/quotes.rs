//! Quotes, mutations, and chains shared by the attestation tests.

use std::collections::BTreeSet;

use portvm_core::attestation::{
    generate_quote, generate_quote_with, measure, AttestationQuote, GlobalId, KeyTrust, NodeIdentity, QuoteExtras,
    VerificationPolicy, Verifier, WASI_NN,
};
use portvm_core::clock::ManualClock;
use portvm_core::Digest;

pub const NOW: u64 = 1_700_000_000;
pub const NONCE: [u8; 32] = [0xab; 32];

pub fn gid() -> GlobalId {
    measure(b"portvm-runtime-build")
}

pub fn policy(trusted: &NodeIdentity) -> VerificationPolicy {
    VerificationPolicy::new([gid()])
        .require([WASI_NN])
        .with_keys(KeyTrust::only([trusted.public_key()]))
}

pub fn valid_quote(id: &NodeIdentity) -> AttestationQuote {
    generate_quote(id, gid(), &[WASI_NN, 1001].into(), NONCE, Digest::of(b"ephemeral"), &ManualClock::at_secs(NOW))
}

/// Every way of altering one field of a signed quote without re-signing.
pub fn field_mutations(q: &AttestationQuote, pick: u64) -> Vec<(&'static str, AttestationQuote)> {
    let other = NodeIdentity::from_seed(999);
    let b = (pick % 255 + 1) as u8;
    let mut out = Vec::new();
    let mut m = |name, f: &dyn Fn(&mut AttestationQuote)| {
        let mut c = q.clone();
        f(&mut c);
        assert_ne!(&c, q, "{name} mutation is a no-op");
        out.push((name, c));
    };
    m("signer", &|c| c.signer = other.public_key());
    m("global_id", &|c| c.global_id.0[(pick % 32) as usize] ^= b);
    m("entry_ids+", &|c| {
        c.entry_ids.insert(5000 + pick as u32 % 1000);
    });
    m("entry_ids-", &|c| {
        c.entry_ids.remove(&1001);
    });
    m("nonce", &|c| c.nonce[(pick % 32) as usize] ^= b);
    m("counter", &|c| c.counter = c.counter.wrapping_add(1 + pick % 1000));
    m("timestamp", &|c| c.timestamp = c.timestamp.wrapping_sub(1 + pick % 1000));
    m("binding", &|c| c.binding.0[(pick % 32) as usize] ^= b);
    m("next_hop", &|c| c.next_hop = Some(Digest::of(&pick.to_le_bytes())));
    m("report_data", &|c| c.report_data = Some(Digest::of(&pick.to_le_bytes())));
    m("signature", &|c| c.signature[(pick % 64) as usize] ^= b);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Tamper,
    Measurement,
    Nonce,
    Stale,
    Replay,
    Capability,
    Link,
}

pub const FAULTS: [Fault; 7] = [
    Fault::Tamper,
    Fault::Measurement,
    Fault::Nonce,
    Fault::Stale,
    Fault::Replay,
    Fault::Capability,
    Fault::Link,
];

/// Build a chain of `len` hops, injecting `fault` at `hop` (if any). Returns the quotes and a verifier.
pub fn chain_with(len: usize, fault: Option<(usize, Fault)>) -> (Vec<AttestationQuote>, Verifier) {
    let ids: Vec<NodeIdentity> = (0..len as u64).map(|i| NodeIdentity::from_seed(100 + i)).collect();
    let verifier = Verifier::new();
    let mut out: Vec<AttestationQuote> = Vec::new();
    for i in (0..len).rev() {
        let f = fault.filter(|(h, _)| *h == i).map(|(_, f)| f);
        let mut caps: BTreeSet<u32> = [WASI_NN].into();
        let mut g = gid();
        let mut nonce = NONCE;
        let mut t = NOW;
        let mut next = out.last().map(AttestationQuote::digest);
        match f {
            Some(Fault::Measurement) => g = measure(b"rogue"),
            Some(Fault::Nonce) => nonce = [1; 32],
            Some(Fault::Stale) => t = NOW - 10_000,
            Some(Fault::Capability) => caps.clear(),
            Some(Fault::Link) => next = Some(Digest::of(b"somewhere else")),
            _ => {}
        }
        let extras = QuoteExtras { next_hop: next, report_data: None };
        let mut q = generate_quote_with(&ids[i], g, &caps, nonce, Digest::of(b"e"), extras, &ManualClock::at_secs(t));
        if f == Some(Fault::Tamper) {
            q.timestamp += 1;
        }
        if f == Some(Fault::Replay) {
            verifier.record(ids[i].node_id(), q.counter);
        }
        out.push(q);
    }
    out.reverse();
    (out, verifier)
}

/// Recursive rebuild used as the oracle for incremental updates.
pub fn oracle_root(leaves: &[Digest]) -> Digest {
    if leaves.len() == 1 {
        return leaves[0];
    }
    let mut next = Vec::new();
    let mut i = 0;
    while i < leaves.len() {
        let l = leaves[i];
        let r = if i + 1 < leaves.len() { leaves[i + 1] } else { l };
        let mut cat = l.0.to_vec();
        cat.extend_from_slice(&r.0);
        next.push(Digest::of(&cat));
        i += 2;
    }
    oracle_root(&next)
}
