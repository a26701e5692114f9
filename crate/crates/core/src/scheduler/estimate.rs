use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SchedulerError, WorkloadProfile};

const REFERENCE: &str = include_str!("../../data/calibration.toml");

/// Per-byte stage costs and the compression ratio used to predict migration time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub checkpoint_secs_per_byte: f64,
    pub compress_secs_per_byte: f64,
    pub restore_secs_per_byte: f64,
    /// Size-independent cost: handshake, setup, acknowledgement.
    pub fixed_overhead_secs: f64,
    /// Plaintext bytes per compressed byte.
    pub compression_ratio: f64,
    /// Effective throughput of the link the table was measured on, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_bandwidth_bps: Option<f64>,
}

impl Calibration {
    /// Table derived from the 4 GB reference migration.
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE).expect("shipped calibration parses")
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SchedulerError> {
        let c: Calibration = toml::from_str(s).map_err(|e| SchedulerError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, SchedulerError> {
        let s = std::fs::read_to_string(path).map_err(|e| SchedulerError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("calibration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SchedulerError> {
        std::fs::write(path, self.to_toml()).map_err(|e| SchedulerError::Io(format!("{}: {e}", path.display())))
    }

    fn validate(&self) -> Result<(), SchedulerError> {
        let rates = [
            self.checkpoint_secs_per_byte,
            self.compress_secs_per_byte,
            self.restore_secs_per_byte,
            self.fixed_overhead_secs,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(SchedulerError::Parse("calibration rates must be finite and nonnegative".into()));
        }
        if !(self.compression_ratio.is_finite() && self.compression_ratio > 0.0) {
            return Err(SchedulerError::Parse("compression_ratio must be positive".into()));
        }
        if self.measured_bandwidth_bps.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
            return Err(SchedulerError::Parse("measured_bandwidth_bps must be positive".into()));
        }
        Ok(())
    }
}

/// Predicted migration time, by stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MigrationEstimate {
    pub compressed_bytes: f64,
    pub checkpoint: f64,
    pub compress: f64,
    pub transfer: f64,
    pub restore: f64,
    pub fixed: f64,
    pub total: f64,
}

/// M = checkpoint + compress + compressed size / bandwidth + restore + fixed overhead.
pub fn estimate_migration_time(profile: &WorkloadProfile, cal: &Calibration) -> MigrationEstimate {
    let size = profile.snapshot_bytes as f64;
    let compressed_bytes = size / cal.compression_ratio;
    let checkpoint = size * cal.checkpoint_secs_per_byte;
    let compress = size * cal.compress_secs_per_byte;
    let transfer = compressed_bytes * 8.0 / profile.bandwidth_bps;
    let restore = size * cal.restore_secs_per_byte;
    let fixed = cal.fixed_overhead_secs;
    MigrationEstimate {
        compressed_bytes,
        checkpoint,
        compress,
        transfer,
        restore,
        fixed,
        total: checkpoint + compress + transfer + restore + fixed,
    }
}
