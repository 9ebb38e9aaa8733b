//! Sample-quality metrics: closed-form Wasserstein-2 between diagonal
//! Gaussians and sliced Wasserstein-2 between sample sets.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::{domain, RngStream};

/// Diagonal Gaussian `N(mean, diag(var_diag))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub var_diag: Vec<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..self.dim() {
            let v = self.var_diag[i];
            let r = x[i] - self.mean[i];
            lp -= 0.5 * (r * r / v + libm::log(2.0 * PI * v));
        }
        lp
    }

    /// `n` draws, sample `i` from metrics stream `(seed, i)`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let d = self.dim();
        let std: Vec<f64> = self.var_diag.iter().map(|v| libm::sqrt(*v)).collect();
        let mut out = alloc::vec![0.0; n * d];
        for (i, row) in out.chunks_mut(d.max(1)).enumerate().take(n) {
            let mut rng = RngStream::in_domain(seed, domain::METRICS, i as u64);
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.mean[j] + std[j] * rng.normal();
            }
        }
        out
    }
}

/// `sqrt(|mu_a - mu_b|^2 + sum_i (sqrt(v_a,i) - sqrt(v_b,i))^2)`.
pub fn w2_gaussian_diag(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() || a.var_diag.len() != a.dim() || b.var_diag.len() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let mut acc = 0.0;
    for i in 0..a.dim() {
        let dm = a.mean[i] - b.mean[i];
        let ds = libm::sqrt(a.var_diag[i]) - libm::sqrt(b.var_diag[i]);
        acc += dm * dm + ds * ds;
    }
    Ok(libm::sqrt(acc))
}

/// Per-component sample mean and unbiased variance of sample-major data.
pub fn empirical_gaussian_summary(samples: &[f64], dim: usize) -> Result<GaussianSummary> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: samples.len(),
        });
    }
    let n = samples.len() / dim;
    if n < 2 {
        return Err(Error::InsufficientData("need at least two samples"));
    }
    let mut mean = alloc::vec![0.0; dim];
    for row in samples.chunks(dim) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = alloc::vec![0.0; dim];
    for row in samples.chunks(dim) {
        for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    Ok(GaussianSummary {
        mean,
        var_diag: var,
    })
}

/// Exact W2 between two uniform empirical measures on the line.
///
/// Sorts both inputs in place. Masses are tracked in integer units of
/// `1 / (n_a n_b)` so unequal sample counts are matched exactly by quantile.
pub fn w2_1d(a: &mut [f64], b: &mut [f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("empty sample set"));
    }
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as u64, b.len() as u64);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (nb, na);
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        let d = a[i] - b[j];
        acc += m as f64 * d * d;
        ra -= m;
        rb -= m;
        if ra == 0 {
            i += 1;
            ra = nb;
        }
        if rb == 0 {
            j += 1;
            rb = na;
        }
    }
    Ok(libm::sqrt(acc / (na * nb) as f64))
}

/// Sliced W2: mean over random unit directions of the 1-D W2 between the
/// projected sample sets. In one dimension this is the plain 1-D W2.
pub fn sliced_w2(a: &[f64], b: &[f64], dim: usize, n_projections: usize, seed: u64) -> Result<f64> {
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: a.len() % dim.max(1),
        });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("empty sample set"));
    }
    if n_projections == 0 {
        return Err(crate::error::invalid("n_projections", "must be >= 1"));
    }
    let project = |data: &[f64], dir: &[f64]| -> Vec<f64> {
        data.chunks(dim)
            .map(|row| row.iter().zip(dir).map(|(x, u)| x * u).sum())
            .collect()
    };
    if dim == 1 {
        return w2_1d(&mut a.to_vec(), &mut b.to_vec());
    }
    let mut total = 0.0;
    let mut dir = alloc::vec![0.0; dim];
    for p in 0..n_projections {
        let mut rng = RngStream::in_domain(seed, domain::METRICS, u64::MAX - p as u64);
        loop {
            rng.fill_normal(&mut dir);
            let norm = libm::sqrt(dir.iter().map(|u| u * u).sum::<f64>());
            if norm > 1e-12 {
                dir.iter_mut().for_each(|u| *u /= norm);
                break;
            }
        }
        let mut pa = project(a, &dir);
        let mut pb = project(b, &dir);
        total += w2_1d(&mut pa, &mut pb)?;
    }
    Ok(total / n_projections as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g(mean: &[f64], var: &[f64]) -> GaussianSummary {
        GaussianSummary {
            mean: mean.to_vec(),
            var_diag: var.to_vec(),
        }
    }

    #[test]
    fn w2_examples() {
        let a = g(&[0.0, 1.0], &[1.0, 2.0]);
        assert_eq!(w2_gaussian_diag(&a, &a).unwrap(), 0.0);
        assert_relative_eq!(w2_gaussian_diag(&g(&[0.0], &[1.0]), &g(&[3.0], &[1.0])).unwrap(), 3.0);
        assert_relative_eq!(w2_gaussian_diag(&g(&[0.0], &[1.0]), &g(&[0.0], &[4.0])).unwrap(), 1.0);
        assert!(w2_gaussian_diag(&g(&[0.0], &[1.0]), &a).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = empirical_gaussian_summary(&[0.0, 2.0], 1).unwrap();
        assert_eq!(s.mean, alloc::vec![1.0]);
        assert_eq!(s.var_diag, alloc::vec![2.0]);
        let c = empirical_gaussian_summary(&[3.0; 10], 2).unwrap();
        assert_eq!(c.var_diag, alloc::vec![0.0, 0.0]);
        assert!(empirical_gaussian_summary(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn exact_draws_have_small_w2() {
        let target = g(&[0.0; 10], &[1.0; 10]);
        let x = target.sample(100_000, 9);
        let s = empirical_gaussian_summary(&x, 10).unwrap();
        assert!(w2_gaussian_diag(&s, &target).unwrap() < 0.05);
    }

    #[test]
    fn sliced_examples() {
        let a = [0.0, 1.0, 2.0, 5.0, -1.0, 0.5];
        assert_eq!(sliced_w2(&a, &a, 2, 16, 0).unwrap(), 0.0);
        let mut a1 = alloc::vec![0.0, 3.0, 1.0];
        let mut b1 = alloc::vec![2.0, 1.0, 4.0];
        let w = w2_1d(&mut a1.clone(), &mut b1.clone()).unwrap();
        assert_eq!(sliced_w2(&a1, &b1, 1, 1, 0).unwrap(), w);
        assert_eq!(sliced_w2(&a1, &b1, 1, 50, 3).unwrap(), w);
        assert_relative_eq!(w, 1.0);
        assert_eq!(w2_1d(&mut [0.0; 4], &mut [5.0; 7]).unwrap(), 5.0);
        assert!(sliced_w2(&[], &[1.0], 1, 1, 0).is_err());
        a1.clear();
        b1.clear();
    }

    #[test]
    fn unequal_counts_quantile_match() {
        // {0, 1} vs {0, 0.5, 1}: masses 1/2 vs 1/3 -> transport cost
        // 1/3*0 + 1/6*(0-0.5)^2 + 1/6*(1-0.5)^2 + 1/3*0 = 1/12.
        let w = w2_1d(&mut [0.0, 1.0], &mut [0.0, 0.5, 1.0]).unwrap();
        assert_relative_eq!(w * w, 1.0 / 12.0, max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn w2_is_a_metric(
            m in proptest::collection::vec(-5.0..5.0f64, 9),
            v in proptest::collection::vec(0.01..4.0f64, 9),
        ) {
            let a = g(&m[0..3], &v[0..3]);
            let b = g(&m[3..6], &v[3..6]);
            let c = g(&m[6..9], &v[6..9]);
            let ab = w2_gaussian_diag(&a, &b).unwrap();
            let ba = w2_gaussian_diag(&b, &a).unwrap();
            let bc = w2_gaussian_diag(&b, &c).unwrap();
            let ac = w2_gaussian_diag(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(w2_gaussian_diag(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn sliced_w2_permutation_invariant(
            pts in proptest::collection::vec(-3.0..3.0f64, 12),
            shift in 0usize..6,
        ) {
            let a = &pts[..6];
            let b = &pts[6..];
            let rot = |v: &[f64]| -> Vec<f64> {
                let rows: Vec<&[f64]> = v.chunks(2).collect();
                let k = shift % rows.len();
                rows[k..].iter().chain(rows[..k].iter()).flat_map(|r| r.iter().copied()).collect()
            };
            let w = sliced_w2(a, b, 2, 8, 1).unwrap();
            let wp = sliced_w2(&rot(a), &rot(b), 2, 8, 1).unwrap();
            prop_assert!((w - wp).abs() < 1e-12);
        }
    }
}
