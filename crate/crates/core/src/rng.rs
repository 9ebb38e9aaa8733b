//! Counter-based random streams.
//!
//! Every sample of a batch owns its own stream, keyed by `(seed, domain,
//! stream_id)`. The underlying generator is ChaCha8 with the stream id placed
//! in the ChaCha nonce, so two streams never overlap and a draw depends only on
//! its key and position, never on batch size or thread count.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// Key-space separation between independent uses of the same seed.
pub mod domain {
    /// Brownian increments consumed by the solvers.
    pub const SOLVER: u64 = 0;
    /// Initial draws from the terminal prior.
    pub const PRIOR: u64 = 1;
    /// Synthetic data models (random means / variances).
    pub const DATA: u64 = 2;
    /// Exact reference draws and metric projections.
    pub const METRICS: u64 = 3;
    /// Stability / weak-order experiments.
    pub const LAB: u64 = 4;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible stream of random variates.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    domain: u64,
    stream_id: u64,
    draws: u64,
    inner: ChaCha8Rng,
}

/// Solver-domain stream for `(seed, stream_id)`.
pub fn make_rng(seed: u64, stream_id: u64) -> RngStream {
    RngStream::new(seed, stream_id)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::in_domain(seed, domain::SOLVER, stream_id)
    }

    pub fn in_domain(seed: u64, domain: u64, stream_id: u64) -> Self {
        let key = splitmix64(seed ^ splitmix64(domain.wrapping_add(0xD1B5_4A32_D192_ED03)));
        let mut inner = ChaCha8Rng::seed_from_u64(key);
        inner.set_stream(stream_id);
        Self {
            seed,
            domain,
            stream_id,
            draws: 0,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of variates drawn so far (normals, signs and uniforms alike).
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Standard normal variate.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.draws += 1;
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// Uniform variate in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Rademacher variate, `-1.0` or `+1.0` with equal probability.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        self.draws += 1;
        if self.inner.next_u32() & 1 == 0 {
            -1.0
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn same_key_same_draws() {
        let mut a = make_rng(7, 0);
        let mut b = make_rng(7, 0);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(a.draws(), 100);
    }

    #[test]
    fn streams_and_domains_differ() {
        let a: Vec<f64> = (0..8).map({
            let mut r = make_rng(7, 0);
            move |_| r.normal()
        }).collect();
        let b: Vec<f64> = (0..8).map({
            let mut r = make_rng(7, 1);
            move |_| r.normal()
        }).collect();
        let c: Vec<f64> = (0..8).map({
            let mut r = RngStream::in_domain(7, domain::PRIOR, 0);
            move |_| r.normal()
        }).collect();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn normal_moments_within_clt_bound() {
        let n = 1_000_000;
        let mut r = make_rng(7, 0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn replaying_the_counter_reproduces_a_draw() {
        let mut a = make_rng(11, 5);
        let mut skipped = Vec::new();
        for _ in 0..37 {
            skipped.push(a.normal());
        }
        let next = a.normal();

        let mut b = make_rng(11, 5);
        for _ in 0..37 {
            b.normal();
        }
        assert_eq!(b.draws(), 37);
        assert_eq!(next.to_bits(), b.normal().to_bits());
    }

    #[test]
    fn signs_are_balanced() {
        let mut r = make_rng(3, 9);
        let n = 100_000;
        let s: f64 = (0..n).map(|_| r.sign()).sum();
        assert!(s.abs() < 4.0 * (n as f64).sqrt());
    }
}
