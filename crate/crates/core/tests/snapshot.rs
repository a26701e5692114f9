mod common;

use common::{fixture_path, program, state_at};
use portvm_core::snapshot::{
    apply_delta, decode, decode_bytes, delta, encode, Codec, SnapshotBlob, SnapshotError,
    SnapshotKey, HEADER_LEN,
};
use portvm_core::vm::progen::generate;
use portvm_core::vm::{CheckpointPolicy, ExecutionState, Frame, Position, PAGE_SIZE};
use portvm_core::Digest;
use proptest::prelude::*;

const GOLDEN_KEY: [u8; 32] = [0x42; 32];

fn golden_state() -> ExecutionState {
    state_at(&program("sum10"), CheckpointPolicy::Loop, 6)
}

#[test]
fn every_single_bit_flip_is_detected() {
    let key = SnapshotKey::new(GOLDEN_KEY);
    for (name, codec) in [("sum10", Codec::Deflate), ("fib", Codec::Deflate), ("memfill", Codec::Deflate)] {
        let state = state_at(&program(name), CheckpointPolicy::Loop, 3);
        let bytes = encode(&state, &key, codec).to_bytes();
        assert!(bytes.len() < 64 * 1024, "{name}: {} bytes", bytes.len());
        assert_eq!(decode_bytes(&bytes, &key).unwrap(), state);
        let mut flipped = bytes.clone();
        for bit in 0..bytes.len() * 8 {
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert!(decode_bytes(&flipped, &key).is_err(), "{name}: bit {bit} undetected");
            flipped[bit / 8] ^= 1 << (bit % 8);
        }
    }
}

#[test]
fn decode_preserves_steps_executed() {
    let state = golden_state();
    let key = SnapshotKey::new(GOLDEN_KEY);
    let back = decode(&encode(&state, &key, Codec::Deflate), &key).unwrap();
    assert_eq!(back.steps_executed, state.steps_executed);
    assert_eq!(back, state);
}

/// Set `PORTVM_BLESS=1` to rewrite the golden file after an intentional format change.
#[test]
fn golden_blob_is_byte_identical() {
    let path = fixture_path("snapshots/sum10-loop6.psnp");
    let key = SnapshotKey::new(GOLDEN_KEY);
    let bytes = encode(&golden_state(), &key, Codec::Deflate).to_bytes();
    if std::env::var_os("PORTVM_BLESS").is_some() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden snapshot present");
    assert_eq!(bytes, golden);
    assert_eq!(&golden[..4], b"PSNP");
    assert_eq!(u16::from_le_bytes([golden[4], golden[5]]), 1);
    assert_eq!(golden[6], 1, "codec id");
    assert_eq!(golden[7], 1, "cipher id");
    assert_eq!(&golden[8..40], program("sum10").measure().as_bytes());
    assert_eq!(u32::from_le_bytes(golden[40..44].try_into().unwrap()), 1);
    let decoded = decode_bytes(&golden, &key).unwrap();
    assert_eq!(decoded.frames[0].locals, vec![15, 6]);
    assert_eq!(
        u64::from_le_bytes(golden[44..52].try_into().unwrap()),
        decoded.to_bytes().len() as u64
    );
    assert!(golden.len() > HEADER_LEN);
}

#[test]
fn version_999_is_rejected() {
    let key = SnapshotKey::new(GOLDEN_KEY);
    let mut bytes = encode(&golden_state(), &key, Codec::Stored).to_bytes();
    bytes[4..6].copy_from_slice(&999u16.to_le_bytes());
    assert_eq!(decode_bytes(&bytes, &key), Err(SnapshotError::UnsupportedVersion(999)));
}

fn big_state(pages: usize) -> ExecutionState {
    ExecutionState {
        module_measurement: Digest::of(b"synthetic"),
        frames: vec![Frame {
            function: 0,
            return_position: None,
            locals: vec![7, 8],
            operands: vec![],
        }],
        memory: vec![0; pages * PAGE_SIZE],
        position: Position::new(0, 0),
        steps_executed: 1,
    }
}

/// Independent dirty-page oracle: byte-by-byte scan.
fn dirty_pages(a: &[u8], b: &[u8]) -> Vec<u32> {
    let mut out = Vec::new();
    for i in 0..a.len() {
        let page = (i / PAGE_SIZE) as u32;
        if a[i] != b[i] && out.last() != Some(&page) {
            out.push(page);
        }
    }
    out
}

#[test]
fn delta_of_one_byte_in_page_seven() {
    let key = SnapshotKey::new([1; 32]);
    let base = big_state(16);
    let mut new = base.clone();
    new.memory[7 * PAGE_SIZE + 4000] ^= 0x80;
    let d = delta(&base, &new, &key).unwrap();
    let got: Vec<u32> = d.pages.iter().map(|p| p.0).collect();
    assert_eq!(got, dirty_pages(&base.memory, &new.memory));
    assert_eq!(got, vec![7]);
    assert_eq!(apply_delta(&base, &d, &key).unwrap(), new);
}

#[test]
fn delta_of_120_touched_pages_in_1000() {
    let key = SnapshotKey::new([1; 32]);
    let base = big_state(1000);
    let mut new = base.clone();
    // every 8th page from 40 touched once, 120 pages in total
    for k in 0..120 {
        let page = 40 + k * 8;
        new.memory[page * PAGE_SIZE + (k * 37) % PAGE_SIZE] = 1;
    }
    new.steps_executed = 2;
    let d = delta(&base, &new, &key).unwrap();
    assert_eq!(d.page_count(), 120);
    assert_eq!(d.pages.iter().map(|p| p.0).collect::<Vec<_>>(), dirty_pages(&base.memory, &new.memory));
    assert!((d.page_fraction() - 0.12).abs() < 1e-12);
    assert_eq!(apply_delta(&base, &d, &key).unwrap(), new);
}

#[test]
fn blob_parse_is_inverse_of_serialize() {
    let key = SnapshotKey::new([9; 32]);
    let blob = encode(&state_at(&program("memfill"), CheckpointPolicy::Explicit, 5), &key, Codec::Deflate);
    assert_eq!(SnapshotBlob::from_bytes(&blob.to_bytes()).unwrap(), blob);
    assert!(blob.compression_ratio() > 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn encode_decode_round_trips(seed in 0u64..5_000, stops in 0usize..20, deflate in any::<bool>()) {
        let p = generate(seed);
        let state = state_at(&p.module, CheckpointPolicy::Loop, stops);
        let key = SnapshotKey::new([seed as u8; 32]);
        let codec = if deflate { Codec::Deflate } else { Codec::Stored };
        let bytes = encode(&state, &key, codec).to_bytes();
        prop_assert_eq!(decode_bytes(&bytes, &key).unwrap(), state);
    }

    #[test]
    fn delta_apply_round_trips(seed in 0u64..5_000, a in 0usize..10, b in 0usize..10) {
        let p = generate(seed);
        let s1 = state_at(&p.module, CheckpointPolicy::Loop, a);
        let s2 = state_at(&p.module, CheckpointPolicy::Loop, b);
        let key = SnapshotKey::new([3; 32]);
        let d = delta(&s1, &s2, &key).unwrap();
        prop_assert_eq!(d.pages.iter().map(|p| p.0).collect::<Vec<_>>(), dirty_pages(&s1.memory, &s2.memory));
        prop_assert_eq!(apply_delta(&s1, &d, &key).unwrap(), s2);
    }
}
