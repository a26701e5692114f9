//! Benchmark suite: many speculative mean tasks per workload, some built to
//! be inconsistent, reporting serial vs speculative latency.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{mean_task, Dataset, MeanTaskConfig};
use super::{speculate, PathCtx, SpeculationError, Status};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "workload")]
    pub workloads: Vec<WorkloadConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    pub name: String,
    /// Fast-path duration in milliseconds.
    pub fast_ms: f64,
    /// Slow/fast duration ratio.
    pub ratio: f64,
    #[serde(default = "default_tasks")]
    pub tasks: usize,
    /// Fraction of tasks whose data is built so the fast path misses.
    #[serde(default)]
    pub inconsistent_fraction: f64,
    #[serde(default = "default_values")]
    pub values: usize,
    #[serde(default = "default_sample")]
    pub sample_fraction: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_partials")]
    pub partials: usize,
}

fn default_tasks() -> usize {
    20
}
fn default_values() -> usize {
    20_000
}
fn default_sample() -> f64 {
    0.01
}
fn default_tolerance() -> f64 {
    0.01
}
fn default_partials() -> usize {
    3
}

impl WorkloadConfig {
    pub fn new(name: &str, fast_ms: f64, ratio: f64, tasks: usize, inconsistent_fraction: f64) -> Self {
        WorkloadConfig {
            name: name.into(),
            fast_ms,
            ratio,
            tasks,
            inconsistent_fraction,
            values: default_values(),
            sample_fraction: default_sample(),
            tolerance: default_tolerance(),
            partials: default_partials(),
        }
    }

    fn validate(&self) -> Result<(), SpeculationError> {
        let bad = |m: &str| Err(SpeculationError::Config(format!("{}: {m}", self.name)));
        if !(self.fast_ms > 0.0) || !(self.ratio >= 1.0) {
            return bad("fast_ms must be positive and ratio at least 1");
        }
        if self.tasks == 0 || self.values == 0 {
            return bad("tasks and values must be positive");
        }
        if !(0.0..=1.0).contains(&self.inconsistent_fraction) {
            return bad("inconsistent_fraction must lie in [0, 1]");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad("sample_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    fn task_config(&self) -> MeanTaskConfig {
        MeanTaskConfig {
            fast: Duration::from_secs_f64(self.fast_ms / 1e3),
            slow: Duration::from_secs_f64(self.fast_ms * self.ratio / 1e3),
            tolerance: self.tolerance,
            partials: self.partials,
        }
    }
}

impl SuiteConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SpeculationError> {
        let c: SuiteConfig = toml::from_str(s).map_err(|e| SpeculationError::Config(e.to_string()))?;
        for w in &c.workloads {
            w.validate()?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, SpeculationError> {
        let s = std::fs::read_to_string(path).map_err(|e| SpeculationError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub workload: String,
    pub tasks: usize,
    /// Measured latency of the slow path run alone, seconds.
    pub serial_secs: f64,
    /// Mean perceived latency with speculation, seconds.
    pub speculative_secs: f64,
    pub speedup: f64,
    pub corrected: usize,
    pub correction_rate: f64,
}

/// Spread of the synthetic data around its center, relative.
const SPREAD: f64 = 0.02;
/// How far inconsistent data moves the values the fast path skips.
const SHIFT: f64 = 0.05;

/// Run every workload; rows come back in suite order.
pub fn run_benchmark(suite: &SuiteConfig) -> Result<Vec<BenchRow>, SpeculationError> {
    suite.workloads.iter().enumerate().map(|(i, w)| run_workload(w, suite.seed.wrapping_add(i as u64 * 7919))).collect()
}

fn run_workload(w: &WorkloadConfig, seed: u64) -> Result<BenchRow, SpeculationError> {
    w.validate()?;
    let cfg = w.task_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bad = (w.inconsistent_fraction * w.tasks as f64).round() as usize;
    let mut flags: Vec<bool> = (0..w.tasks).map(|i| i < bad).collect();
    flags.shuffle(&mut rng);

    let baseline = Dataset::consistent(w.values, w.sample_fraction, SPREAD, seed);
    let serial = mean_task(&w.name, &baseline, cfg);
    let start = Instant::now();
    (serial.slow)(&PathCtx::detached()).map_err(|e| SpeculationError::SlowPathTrap {
        message: e.0,
        provisional_emitted: false,
    })?;
    let serial_secs = start.elapsed().as_secs_f64();

    let mut perceived = 0.0;
    let mut corrected = 0;
    for (j, &inconsistent) in flags.iter().enumerate() {
        let s = seed.wrapping_add(1 + j as u64);
        let data = if inconsistent {
            Dataset::adversarial(w.values, w.sample_fraction, SPREAD, SHIFT, s)
        } else {
            Dataset::consistent(w.values, w.sample_fraction, SPREAD, s)
        };
        let o = speculate(mean_task(format!("{}#{j}", w.name), &data, cfg), serial_secs)?;
        perceived += o.perceived_secs;
        if o.status == Status::Corrected {
            corrected += 1;
        }
    }
    let speculative_secs = perceived / w.tasks as f64;
    Ok(BenchRow {
        workload: w.name.clone(),
        tasks: w.tasks,
        serial_secs,
        speculative_secs,
        speedup: serial_secs / speculative_secs,
        corrected,
        correction_rate: corrected as f64 / w.tasks as f64,
    })
}

/// Aligned text table.
pub fn render_table(rows: &[BenchRow]) -> String {
    let width = rows.iter().map(|r| r.workload.len()).max().unwrap_or(0).max(8);
    let mut out = format!(
        "{:<width$}  {:>10}  {:>12}  {:>8}  {:>10}\n",
        "workload", "serial", "speculative", "speedup", "corrected"
    );
    for r in rows {
        out += &format!(
            "{:<width$}  {:>9.3}s  {:>11.3}s  {:>7.2}x  {:>9.1}%\n",
            r.workload,
            r.serial_secs,
            r.speculative_secs,
            r.speedup,
            r.correction_rate * 100.0
        );
    }
    out
}
