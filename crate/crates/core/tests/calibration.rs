//! Timing-sensitive; kept in its own test binary so no sibling tests compete for the CPU.

use portvm_core::scheduler::{calibrate, estimate_migration_time, loopback_sample, WorkloadProfile};

const STATE: usize = 64 << 20;

#[test]
fn loopback_calibration_predicts_64_mib_migration() {
    let cal = calibrate(STATE, 3, 11).unwrap();
    let mut measured: Vec<_> = (0..3).map(|i| loopback_sample(STATE, 500 + i).unwrap()).collect();
    measured.sort_by(|a, b| a.stages.total.cmp(&b.stages.total));
    let m = measured[1];
    let mut p = WorkloadProfile::new(0.0, 0.0);
    p.snapshot_bytes = m.plaintext_bytes;
    p.bandwidth_bps = cal.measured_bandwidth_bps.unwrap();
    let predicted = estimate_migration_time(&p, &cal).total;
    let actual = m.stages.total.as_secs_f64();
    eprintln!("calibration {cal:?}\npredicted {predicted:.3} s, measured {actual:.3} s");
    assert!((predicted - actual).abs() <= 0.1 * actual, "predicted {predicted} s vs measured {actual} s");
    assert!(cal.compression_ratio > 1.5 && cal.compression_ratio < 2.5);
}
