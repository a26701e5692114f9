//! Placement decisions: whether a workload should migrate or stay.
//!
//! A workload migrates only if its sensitivity allows the target, the
//! remote node is at least 1.5x faster, and the remaining local time exceeds
//! twice the predicted migration time.

mod calibrate;
mod estimate;
mod labels;

pub use calibrate::{calibrate, loopback_sample, CalibrationSample};
pub use estimate::{estimate_migration_time, Calibration, MigrationEstimate};
pub use labels::LabelRegistry;

use serde::{Deserialize, Serialize};

/// Minimum T_local / T_remote for a migration to pay off.
pub const SPEEDUP_THRESHOLD: f64 = 1.5;
/// Remaining local time must exceed this multiple of the migration time.
pub const AMORTIZATION_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedulerError {
    #[error("unknown data label `{0}`")]
    UnknownLabel(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityClass {
    Public,
    Internal,
    Confidential,
    Restricted,
}

impl std::str::FromStr for SensitivityClass {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "public" => Ok(Self::Public),
            "internal" => Ok(Self::Internal),
            "confidential" => Ok(Self::Confidential),
            "restricted" => Ok(Self::Restricted),
            other => Err(SchedulerError::Parse(format!("unknown sensitivity class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetTrust {
    TrustedEnclave,
    Untrusted,
}

impl std::str::FromStr for TargetTrust {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trusted-enclave" | "trusted" => Ok(Self::TrustedEnclave),
            "untrusted" => Ok(Self::Untrusted),
            other => Err(SchedulerError::Parse(format!("unknown target trust `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    /// Remaining run time if the workload stays, in seconds.
    pub local_secs: f64,
    /// Remaining run time on the target, in seconds.
    pub remote_secs: f64,
    /// Uncompressed snapshot size.
    #[serde(default)]
    pub snapshot_bytes: u64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bps: f64,
    #[serde(default = "default_sensitivity")]
    pub sensitivity: SensitivityClass,
    #[serde(default = "default_trust")]
    pub target_trust: TargetTrust,
    #[serde(default = "default_target")]
    pub target: String,
    /// Known migration time; replaces the calibrated estimate when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub migration_secs: Option<f64>,
}

fn default_bandwidth() -> f64 {
    1e9
}

fn default_sensitivity() -> SensitivityClass {
    SensitivityClass::Public
}

fn default_trust() -> TargetTrust {
    TargetTrust::Untrusted
}

fn default_target() -> String {
    "remote".into()
}

impl WorkloadProfile {
    pub fn new(local_secs: f64, remote_secs: f64) -> Self {
        WorkloadProfile {
            local_secs,
            remote_secs,
            snapshot_bytes: 0,
            bandwidth_bps: default_bandwidth(),
            sensitivity: default_sensitivity(),
            target_trust: default_trust(),
            target: default_target(),
            migration_secs: None,
        }
    }

    pub fn with_migration_secs(mut self, m: f64) -> Self {
        self.migration_secs = Some(m);
        self
    }

    pub fn with_sensitivity(mut self, s: SensitivityClass, trust: TargetTrust) -> Self {
        self.sensitivity = s;
        self.target_trust = trust;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SchedulerError> {
        let p: WorkloadProfile = toml::from_str(s).map_err(|e| SchedulerError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(SchedulerError::InvalidProfile(format!("{name} must be finite and nonnegative, got {v}")))
            }
        };
        nonneg("local_secs", self.local_secs)?;
        nonneg("remote_secs", self.remote_secs)?;
        if let Some(m) = self.migration_secs {
            nonneg("migration_secs", m)?;
        }
        if !(self.bandwidth_bps.is_finite() && self.bandwidth_bps > 0.0) {
            return Err(SchedulerError::InvalidProfile(format!("bandwidth_bps must be positive, got {}", self.bandwidth_bps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StayReason {
    Sensitivity,
    SpeedupThreshold,
    Amortization,
}

impl StayReason {
    pub fn name(self) -> &'static str {
        match self {
            StayReason::Sensitivity => "sensitivity",
            StayReason::SpeedupThreshold => "speedup-threshold",
            StayReason::Amortization => "amortization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "placement", rename_all = "lowercase")]
pub enum Placement {
    Stay { reason: StayReason },
    Migrate { target: String, expected_net_speedup: f64 },
}

impl Placement {
    pub fn is_migrate(&self) -> bool {
        matches!(self, Placement::Migrate { .. })
    }
}

/// One conjunct of the decision rule and how it evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conjunct {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub placement: Placement,
    /// T_local / T_remote.
    pub ratio: f64,
    pub migration_secs: f64,
    pub estimate: Option<MigrationEstimate>,
    pub conjuncts: Vec<Conjunct>,
}

/// Apply the decision rule. Every conjunct is evaluated for reporting; the
/// first failing one becomes the stay reason.
pub fn decide(profile: &WorkloadProfile, cal: &Calibration) -> Decision {
    let (m, estimate) = match profile.migration_secs {
        Some(m) => (m, None),
        None => {
            let e = estimate_migration_time(profile, cal);
            (e.total, Some(e))
        }
    };
    let ratio = profile.local_secs / profile.remote_secs;
    let sensitivity_ok =
        profile.sensitivity < SensitivityClass::Restricted || profile.target_trust == TargetTrust::TrustedEnclave;
    let speedup_ok = ratio >= SPEEDUP_THRESHOLD;
    let amortized = profile.local_secs > AMORTIZATION_FACTOR * m;
    let conjuncts = vec![
        Conjunct {
            name: StayReason::Sensitivity.name(),
            holds: sensitivity_ok,
            detail: format!("{:?} data, {:?} target", profile.sensitivity, profile.target_trust),
        },
        Conjunct {
            name: StayReason::SpeedupThreshold.name(),
            holds: speedup_ok,
            detail: format!("T_local/T_remote = {ratio:.3} (need >= {SPEEDUP_THRESHOLD})"),
        },
        Conjunct {
            name: StayReason::Amortization.name(),
            holds: amortized,
            detail: format!(
                "T_local = {:.3} s vs {AMORTIZATION_FACTOR} x M = {:.3} s (need >)",
                profile.local_secs,
                AMORTIZATION_FACTOR * m
            ),
        },
    ];
    let placement = match (sensitivity_ok, speedup_ok, amortized) {
        (false, _, _) => Placement::Stay { reason: StayReason::Sensitivity },
        (_, false, _) => Placement::Stay { reason: StayReason::SpeedupThreshold },
        (_, _, false) => Placement::Stay { reason: StayReason::Amortization },
        _ => Placement::Migrate {
            target: profile.target.clone(),
            expected_net_speedup: profile.local_secs / (profile.remote_secs + m),
        },
    };
    Decision { placement, ratio, migration_secs: m, estimate, conjuncts }
}
