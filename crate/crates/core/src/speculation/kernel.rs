//! Synthetic numeric kernels: a sampled mean as the fast path and the exact
//! mean as the slow path, each padded to a configured duration.

use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PathCtx, PathTrap, Predicate, SpeculativeTask};

/// Input shared by both paths.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub values: Arc<Vec<f64>>,
    /// The fast path reads every `stride`-th value starting at `offset`.
    pub stride: usize,
    pub offset: usize,
}

impl Dataset {
    /// Values uniform in `center * (1 ± spread)`.
    pub fn consistent(n: usize, sample_fraction: f64, spread: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = (1.0 / sample_fraction).round().max(1.0) as usize;
        let offset = rng.gen_range(0..stride);
        let center = 100.0;
        let values = (0..n).map(|_| center * (1.0 + rng.gen_range(-spread..=spread))).collect();
        Dataset { values: Arc::new(values), stride, offset }
    }

    /// Like [`consistent`](Self::consistent), but every value the fast path
    /// does not read is scaled by `1 + shift`, so the sample mean misses the
    /// exact mean by about `shift`.
    pub fn adversarial(n: usize, sample_fraction: f64, spread: f64, shift: f64, seed: u64) -> Self {
        let mut d = Self::consistent(n, sample_fraction, spread, seed);
        let values = Arc::make_mut(&mut d.values);
        for (i, v) in values.iter_mut().enumerate() {
            if i % d.stride != d.offset {
                *v *= 1.0 + shift;
            }
        }
        d
    }

    pub fn sample_mean(&self) -> f64 {
        let s: Vec<f64> = self.values.iter().skip(self.offset).step_by(self.stride).copied().collect();
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }

    pub fn exact_mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanTaskConfig {
    pub fast: Duration,
    pub slow: Duration,
    pub tolerance: f64,
    /// Partial results the slow path publishes before its final one.
    pub partials: usize,
}

fn pad_until(start: Instant, deadline: Duration) {
    if let Some(rest) = deadline.checked_sub(start.elapsed()) {
        thread::sleep(rest);
    }
}

/// Fast path: sampled mean. Slow path: exact mean, publishing the running
/// prefix mean at evenly spaced points.
pub fn mean_task(name: impl Into<String>, data: &Dataset, cfg: MeanTaskConfig) -> SpeculativeTask<f64> {
    let fd = data.clone();
    let sd = data.clone();
    let fast = move |_: &PathCtx<f64>| {
        let start = Instant::now();
        let m = fd.sample_mean();
        pad_until(start, cfg.fast);
        Ok(m)
    };
    let slow = move |ctx: &PathCtx<f64>| {
        let start = Instant::now();
        let v = &sd.values;
        if v.is_empty() {
            return Err(PathTrap("empty dataset".into()));
        }
        let pieces = cfg.partials + 1;
        let mut sum = 0.0;
        let mut done = 0;
        for k in 1..=pieces {
            let end = v.len() * k / pieces;
            sum += v[done..end].iter().sum::<f64>();
            done = end;
            pad_until(start, cfg.slow.mul_f64(k as f64 / pieces as f64));
            if k < pieces && done > 0 {
                ctx.publish(sum / done as f64);
            }
        }
        Ok(sum / v.len() as f64)
    };
    SpeculativeTask::new(name, fast, slow, Predicate::relative(cfg.tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_data_splits_sample_from_exact() {
        let c = Dataset::consistent(100_000, 0.01, 0.02, 1);
        assert!((c.sample_mean() - c.exact_mean()).abs() / c.exact_mean() < 0.002);
        let a = Dataset::adversarial(100_000, 0.01, 0.02, 0.05, 1);
        assert!((a.sample_mean() - a.exact_mean()).abs() / a.exact_mean() > 0.04);
    }
}
