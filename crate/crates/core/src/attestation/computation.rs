use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::digest::Digest;

pub const KERNEL_DIM: usize = 8;
/// Relative tolerance used when none is given.
pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Seed of the canonical weights and inputs.
pub const CANONICAL_SEED: u64 = 0x5eed_1003;
const CANONICAL_INPUTS: usize = 4;

/// Trusted 8×8 double-precision matrix-vector product.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceKernel {
    pub weights: [[f64; KERNEL_DIM]; KERNEL_DIM],
}

impl ReferenceKernel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = [[0.0; KERNEL_DIM]; KERNEL_DIM];
        for row in weights.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.gen_range(-1.0..1.0);
            }
        }
        ReferenceKernel { weights }
    }

    pub fn canonical() -> Self {
        Self::new(CANONICAL_SEED)
    }

    /// Ascending-index summation.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(x).fold(0.0, |acc, (w, v)| acc + w * v))
            .collect()
    }
}

/// Fixed input vectors fed to a backend under test.
pub fn canonical_inputs() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(CANONICAL_SEED ^ 0xffff);
    (0..CANONICAL_INPUTS)
        .map(|_| (0..KERNEL_DIM).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ComputationError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttestationVerdict {
    pub pass: bool,
    pub epsilon: f64,
    /// Largest `|y - ref| / max(1, |ref|)` observed.
    pub max_relative_error: f64,
    /// `(input, element)` of the worst element.
    pub worst: (usize, usize),
    /// SHA-256 over the backend outputs in order, as little-endian f64 bits.
    pub outputs_digest: Digest,
}

impl AttestationVerdict {
    /// Value to carry in a quote's report-data field.
    pub fn digest(&self) -> Digest {
        Digest::of_parts([
            &b"portvm/computation-verdict"[..],
            &[self.pass as u8][..],
            &self.epsilon.to_bits().to_le_bytes()[..],
            &self.max_relative_error.to_bits().to_le_bytes()[..],
            &self.outputs_digest.0[..],
        ])
    }
}

/// Run `backend` over `inputs` and compare against `reference` element-wise.
pub fn attest_computation(
    backend: &dyn Fn(&[f64]) -> Vec<f64>,
    inputs: &[Vec<f64>],
    reference: &[Vec<f64>],
    epsilon: f64,
) -> Result<AttestationVerdict, ComputationError> {
    if inputs.len() != reference.len() {
        return Err(ComputationError::ShapeMismatch(format!(
            "{} inputs but {} reference outputs",
            inputs.len(),
            reference.len()
        )));
    }
    let mut pass = true;
    let mut max_rel = 0.0f64;
    let mut worst = (0, 0);
    let mut bits = Vec::new();
    for (i, (x, want)) in inputs.iter().zip(reference).enumerate() {
        let y = backend(x);
        if y.len() != want.len() {
            return Err(ComputationError::ShapeMismatch(format!(
                "input {i}: backend produced {} values, reference has {}",
                y.len(),
                want.len()
            )));
        }
        for (j, (a, b)) in y.iter().zip(want).enumerate() {
            bits.extend_from_slice(&a.to_bits().to_le_bytes());
            let rel = (a - b).abs() / b.abs().max(1.0);
            // NaN never passes
            if !((a - b).abs() <= epsilon * b.abs().max(1.0)) {
                pass = false;
            }
            if rel > max_rel || rel.is_nan() {
                max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
                worst = (i, j);
            }
        }
    }
    Ok(AttestationVerdict {
        pass,
        epsilon,
        max_relative_error: max_rel,
        worst,
        outputs_digest: Digest::of(&bits),
    })
}
