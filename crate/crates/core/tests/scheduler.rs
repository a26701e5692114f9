use portvm_core::scheduler::{
    decide, estimate_migration_time, Calibration, LabelRegistry, Placement, SchedulerError, SensitivityClass,
    StayReason, TargetTrust, WorkloadProfile,
};
use proptest::prelude::*;

use SensitivityClass::*;

fn cal() -> Calibration {
    Calibration::reference()
}

fn stay(reason: StayReason) -> Placement {
    Placement::Stay { reason }
}

#[test]
fn classify_examples() {
    let r = LabelRegistry::builtin();
    assert_eq!(r.classify([]).unwrap(), Public);
    assert_eq!(r.classify(["telemetry", "personal-note"]).unwrap(), Confidential);
    assert_eq!(r.classify(["medical-record"]).unwrap(), Restricted);
    assert_eq!(r.classify(["public-doc", "public-doc"]).unwrap(), Public);
    assert_eq!(r.classify(["telemetry", "nope"]), Err(SchedulerError::UnknownLabel("nope".into())));
}

#[test]
fn classify_is_max_over_table() {
    let r = LabelRegistry::builtin();
    let all: Vec<(&str, SensitivityClass)> = r.iter().collect();
    // every pair against the table
    for (a, ca) in &all {
        for (b, cb) in &all {
            assert_eq!(r.classify([*a, *b]).unwrap(), (*ca).max(*cb));
        }
    }
}

#[test]
fn openblas_profile_migrates() {
    let p = WorkloadProfile::new(45.0, 15.5).with_migration_secs(9.0).with_sensitivity(Internal, TargetTrust::Untrusted);
    let d = decide(&p, &cal());
    assert!((d.ratio - 2.9).abs() < 0.01, "{}", d.ratio);
    match d.placement {
        Placement::Migrate { expected_net_speedup, .. } => {
            assert!((expected_net_speedup - 45.0 / 24.5).abs() < 1e-12);
        }
        other => panic!("{other:?}"),
    }
    assert!(d.conjuncts.iter().all(|c| c.holds));
}

#[test]
fn low_ratio_and_restricted_stay() {
    let p = WorkloadProfile::new(10.0, 8.0).with_migration_secs(0.1);
    assert_eq!(decide(&p, &cal()).placement, stay(StayReason::SpeedupThreshold));
    let p = WorkloadProfile::new(100.0, 10.0).with_migration_secs(1.0).with_sensitivity(Restricted, TargetTrust::Untrusted);
    assert_eq!(decide(&p, &cal()).placement, stay(StayReason::Sensitivity));
    let p = p.with_sensitivity(Restricted, TargetTrust::TrustedEnclave);
    assert!(decide(&p, &cal()).placement.is_migrate());
}

#[test]
fn thresholds_flip_exactly() {
    let eps = 1e-9;
    // ratio boundary: T_remote = 10, M tiny
    let at = |local: f64| decide(&WorkloadProfile::new(local, 10.0).with_migration_secs(0.5), &cal()).placement;
    assert!(at(15.0).is_migrate());
    assert!(at(15.0 + eps).is_migrate());
    assert_eq!(at(15.0 - eps), stay(StayReason::SpeedupThreshold));
    // amortization boundary: M = 10, ratio large
    let at = |local: f64| decide(&WorkloadProfile::new(local, 1.0).with_migration_secs(10.0), &cal()).placement;
    assert_eq!(at(20.0), stay(StayReason::Amortization));
    assert_eq!(at(20.0 - eps), stay(StayReason::Amortization));
    assert!(at(20.0 + eps).is_migrate());
}

#[test]
fn estimate_examples() {
    // 4 GB compressed to 900 MB over 1 Gbps
    let mut p = WorkloadProfile::new(0.0, 0.0);
    p.snapshot_bytes = 4_000_000_000;
    let e = estimate_migration_time(&p, &cal());
    assert!((e.compressed_bytes - 900e6).abs() < 1.0);
    assert!((e.transfer - 7.2).abs() < 1e-9);
    assert!((e.checkpoint - 2.1).abs() < 1e-9);
    assert!((e.restore - 1.8).abs() < 1e-9);
    assert!((e.total - 11.1).abs() < 1e-9);

    p.snapshot_bytes = 0;
    let c = Calibration { fixed_overhead_secs: 0.25, ..cal() };
    let e = estimate_migration_time(&p, &c);
    assert_eq!(e.total, 0.25);
    assert_eq!(e.transfer + e.checkpoint + e.compress + e.restore, 0.0);
}

#[test]
fn estimate_feeds_decision() {
    let mut p = WorkloadProfile::new(45.0, 15.5);
    p.snapshot_bytes = 4_000_000_000;
    let d = decide(&p, &cal());
    assert!((d.migration_secs - 11.1).abs() < 1e-9);
    assert!(d.placement.is_migrate());
    p.local_secs = 22.0; // ratio 1.42
    assert_eq!(decide(&p, &cal()).placement, stay(StayReason::SpeedupThreshold));
}

#[test]
fn calibration_round_trips_through_toml() {
    let c = Calibration { measured_bandwidth_bps: Some(3.5e9), ..cal() };
    assert_eq!(Calibration::from_toml_str(&c.to_toml()).unwrap(), c);
    assert!(Calibration::from_toml_str("checkpoint_secs_per_byte = -1.0\ncompress_secs_per_byte = 0.0\nrestore_secs_per_byte = 0.0\nfixed_overhead_secs = 0.0\ncompression_ratio = 1.0\n").is_err());
}

fn class() -> impl Strategy<Value = SensitivityClass> {
    prop_oneof![Just(Public), Just(Internal), Just(Confidential), Just(Restricted)]
}

fn trust() -> impl Strategy<Value = TargetTrust> {
    prop_oneof![Just(TargetTrust::TrustedEnclave), Just(TargetTrust::Untrusted)]
}

fn profile() -> impl Strategy<Value = WorkloadProfile> {
    (0.0f64..1e4, 0.001f64..1e4, 0.0f64..1e3, class(), trust()).prop_map(|(l, r, m, s, t)| {
        WorkloadProfile::new(l, r).with_migration_secs(m).with_sensitivity(s, t)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn larger_migration_time_never_enables_migration(p in profile(), extra in 0.0f64..1e3) {
        let before = decide(&p, &cal()).placement.is_migrate();
        let slower = p.clone().with_migration_secs(p.migration_secs.unwrap() + extra);
        prop_assert!(!(decide(&slower, &cal()).placement.is_migrate() && !before));
    }

    #[test]
    fn larger_speedup_never_disables_migration(p in profile(), factor in 1.0f64..100.0) {
        let before = decide(&p, &cal()).placement.is_migrate();
        let mut faster = p.clone();
        faster.remote_secs /= factor;
        prop_assert!(!(before && !decide(&faster, &cal()).placement.is_migrate()));
    }

    #[test]
    fn restricted_never_leaves_for_untrusted(p in profile()) {
        let p = p.with_sensitivity(Restricted, TargetTrust::Untrusted);
        prop_assert_eq!(decide(&p, &cal()).placement, stay(StayReason::Sensitivity));
    }

    #[test]
    fn decide_is_pure(p in profile(), bytes in 0u64..1 << 40) {
        let mut q = p.clone();
        q.migration_secs = None;
        q.snapshot_bytes = bytes;
        prop_assert_eq!(decide(&p, &cal()), decide(&p.clone(), &cal()));
        prop_assert_eq!(decide(&q, &cal()), decide(&q.clone(), &cal()));
    }
}
