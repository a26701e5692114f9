use std::sync::Arc;

use crate::attestation::{measure, NodeIdentity, VerificationPolicy};
use crate::migration::{migrate, Loopback, MigrationError, NodeContext, StageTimings};
use crate::vm::{workspace_instance, PAGE_SIZE};

use super::Calibration;

/// One measured loopback migration.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSample {
    pub plaintext_bytes: u64,
    pub blob_bytes: u64,
    pub stages: StageTimings,
}

fn loopback_nodes(seed: u64) -> (NodeContext, Loopback) {
    let gid = measure(b"portvm calibration node");
    let policy = VerificationPolicy::new([gid]);
    let ctx = |s: u64| NodeContext::new(Arc::new(NodeIdentity::from_seed(s)), gid, policy.clone()).with_seed(s);
    (ctx(seed), Loopback::new(ctx(seed + 1)))
}

/// Migrate a fresh workspace of `bytes` over an in-memory link and report the stage timings.
pub fn loopback_sample(bytes: usize, seed: u64) -> Result<CalibrationSample, MigrationError> {
    let mut inst = workspace_instance(bytes, seed);
    let (ctx, target) = loopback_nodes(seed);
    let out = migrate(&mut inst, &target, &ctx);
    target.join();
    let out = out?;
    Ok(CalibrationSample {
        plaintext_bytes: out.plaintext_len,
        blob_bytes: out.blob_len,
        stages: out.report.stages,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn median_sample(bytes: usize, repeats: usize, seed: u64) -> Result<(f64, f64, [f64; 6]), MigrationError> {
    let mut samples = Vec::new();
    for r in 0..repeats.max(1) {
        samples.push(loopback_sample(bytes, seed + 2 * r as u64)?);
    }
    let stage = |f: fn(&StageTimings) -> std::time::Duration| median(samples.iter().map(|s| f(&s.stages).as_secs_f64()).collect());
    Ok((
        median(samples.iter().map(|s| s.plaintext_bytes as f64).collect()),
        median(samples.iter().map(|s| s.blob_bytes as f64).collect()),
        [
            stage(|s| s.checkpoint),
            stage(|s| s.handshake),
            stage(|s| s.compress),
            stage(|s| s.transfer),
            stage(|s| s.restore_ack),
            stage(|s| s.total),
        ],
    ))
}

/// Measure migrations of a one-page workspace and of a `bytes` workspace on
/// the loopback link and fit per-byte rates between the two. The fixed
/// overhead is whatever the small migration costs beyond its per-byte share.
pub fn calibrate(bytes: usize, repeats: usize, seed: u64) -> Result<Calibration, MigrationError> {
    let (ps, bs, small) = median_sample(PAGE_SIZE, repeats, seed)?;
    let (pl, bl, large) = median_sample(bytes.max(2 * PAGE_SIZE), repeats, seed + 1000)?;
    let dp = (pl - ps).max(1.0);
    let rate = |i: usize| ((large[i] - small[i]) / dp).max(0.0);
    let (ck, cmp, rst) = (rate(0), rate(2), rate(4));
    let bandwidth = 8.0 * (bl - bs).max(1.0) / (large[3] - small[3]).max(1e-9);
    let per_byte_small = ps * (ck + cmp + rst) + bs * 8.0 / bandwidth;
    Ok(Calibration {
        checkpoint_secs_per_byte: ck,
        compress_secs_per_byte: cmp,
        restore_secs_per_byte: rst,
        fixed_overhead_secs: (small[5] - per_byte_small).max(0.0),
        compression_ratio: pl / bl,
        measured_bandwidth_bps: Some(bandwidth),
    })
}
