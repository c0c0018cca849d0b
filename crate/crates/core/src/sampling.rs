//! Deterministic low-discrepancy sample points (Halton sequence) and pairwise summation.

use serde::{Deserialize, Serialize};

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Axis-aligned cube of quasi-random sample points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n_samples: usize,
    pub center: Vec<f64>,
    pub side: f64,
    /// Number of leading Halton indices to skip.
    #[serde(default)]
    pub skip: u64,
}

impl SampleSpec {
    pub fn cube(dim: usize, side: f64, n_samples: usize) -> Self {
        SampleSpec {
            n_samples,
            center: vec![0.0; dim],
            side,
            skip: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Produces `n_samples` points that satisfy `accept`, walking the Halton sequence.
    pub fn points<F>(&self, accept: F) -> Vec<Vec<f64>>
    where
        F: Fn(&[f64]) -> bool,
    {
        let d = self.dim();
        assert!(d <= PRIMES.len(), "Halton sampling supports up to {} dimensions", PRIMES.len());
        let mut out = Vec::with_capacity(self.n_samples);
        let mut idx = self.skip + 1;
        // cap the walk so a rejecting predicate cannot loop forever
        let limit = self.skip + 1 + 1000 * self.n_samples as u64 + 1000;
        while out.len() < self.n_samples && idx < limit {
            let p: Vec<f64> = (0..d)
                .map(|k| self.center[k] + self.side * (radical_inverse(idx, PRIMES[k]) - 0.5))
                .collect();
            if accept(&p) {
                out.push(p);
            }
            idx += 1;
        }
        out
    }
}

/// Pairwise (cascade) summation; deterministic for a fixed input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}
