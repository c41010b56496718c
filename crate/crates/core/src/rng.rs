//! Seeded sampling for evaluation points and random test fields.
//!
//! The generator is SplitMix64: the state advances by `0x9E3779B97F4A7C15`
//! and each output is the state passed through the finalizer
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! with wrapping multiplication. Uniform doubles in `[0, 1)` are
//! `(next >> 11) * 2^-53`. Two implementations following this description
//! produce the same point sets for the same seed.

use crate::measure::Domain;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[a, b)`.
    pub fn uniform(&mut self, a: f64, b: f64) -> f64 {
        a + (b - a) * self.next_f64()
    }

    /// Uniform integer in `0..n` (`n > 0`), by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let r = self.next_u64();
            if r < zone {
                return r % n;
            }
        }
    }
}

/// Sample `count` points strictly inside `domain`, uniformly in chart
/// coordinates, by rejection from its bounding box. Points closer than
/// `margin` (relative to the box size) to the bounding box are avoided.
///
/// Returns `None` if rejection fails to find enough points, which only
/// happens for domains occupying a vanishing fraction of their box.
pub fn sample_interior(domain: &Domain, count: usize, seed: u64) -> Option<Vec<Vec<f64>>> {
    let (lower, upper) = domain.bounding_box();
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let margin = 1e-3;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * (count + 1) {
            return None;
        }
        let x: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(&a, &b)| {
                let pad = margin * (b - a);
                rng.uniform(a + pad, b - pad)
            })
            .collect();
        if domain.contains(&x) {
            out.push(x);
        }
    }
    Some(out)
}

/// `count` points uniform in the ball `|x − c| < r` of dimension `c.len()`.
pub fn sample_ball(center: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::new(seed);
    let n = center.len();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let r2: f64 = y.iter().map(|t| t * t).sum();
        if r2 < 1.0 {
            out.push(y.iter().zip(center).map(|(t, c)| c + radius * t).collect());
        }
    }
    out
}
