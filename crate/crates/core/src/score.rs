//! Score fields `s(x, t) = grad_x log p_t(x)`.
//!
//! Trained networks are replaced by closed-form oracles: Gaussian data and
//! Gaussian mixtures with diagonal covariances stay Gaussian (mixtures) under
//! both processes, so their marginal scores are exact.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{invalid, Error, Result};
use crate::metrics::GaussianSummary;
use crate::process::{Process, VeParams, VpParams};
use crate::rng::{domain, RngStream};

/// An evaluatable score function.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;

    /// Writes `s(x, t)` into `out`; `x` and `out` have length [`Self::dim`].
    fn score(&self, x: &[f64], t: f64, out: &mut [f64]);
}

impl<S: ScoreField + ?Sized> ScoreField for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).score(x, t, out)
    }
}

/// `s = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore {
    dim: usize,
}

impl ZeroScore {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl ScoreField for ZeroScore {
    fn dim(&self) -> usize {
        self.dim
    }
    fn score(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// Closure-backed score.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64, &mut [f64]) + Sync> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64, &mut [f64]) + Sync> ScoreField for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.f)(x, t, out)
    }
}

/// Wraps a score and counts calls. One call is one per-sample evaluation,
/// which is the NFE unit used throughout.
#[derive(Debug)]
pub struct CountingScore<S> {
    inner: S,
    count: AtomicU64,
}

/// Counting wrapper around `score`.
pub fn counting_wrapper<S: ScoreField>(score: S) -> CountingScore<S> {
    CountingScore::new(score)
}

impl<S: ScoreField> CountingScore<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: ScoreField> ScoreField for CountingScore<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.score(x, t, out)
    }
}

fn uniform_in(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Gaussian data distribution `N(mu0, diag(var0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDataModel {
    pub mu0: Vec<f64>,
    pub var0: Vec<f64>,
}

impl GaussianDataModel {
    pub fn new(mu0: Vec<f64>, var0: Vec<f64>) -> Result<Self> {
        if mu0.is_empty() {
            return Err(invalid("mu0", "must be non-empty"));
        }
        if mu0.len() != var0.len() {
            return Err(Error::DimensionMismatch {
                expected: mu0.len(),
                got: var0.len(),
            });
        }
        if var0.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("var0", "components must be > 0"));
        }
        if mu0.iter().any(|m| !m.is_finite()) {
            return Err(invalid("mu0", "components must be finite"));
        }
        Ok(Self { mu0, var0 })
    }

    /// Means uniform in `mean_range`, variances uniform in `var_range`.
    pub fn random(dim: usize, mean_range: (f64, f64), var_range: (f64, f64), seed: u64) -> Result<Self> {
        let mut rng = RngStream::in_domain(seed, domain::DATA, 0);
        let mu0 = (0..dim).map(|_| uniform_in(&mut rng, mean_range.0, mean_range.1)).collect();
        let var0 = (0..dim).map(|_| uniform_in(&mut rng, var_range.0, var_range.1)).collect();
        Self::new(mu0, var0)
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    /// `p_t = N(m mu0, m^2 var0 + v)` under the process kernel `(m, v)`.
    pub fn marginal(&self, process: &Process, t: f64) -> GaussianSummary {
        let k = process.kernel(t);
        let m = k.mean_factor;
        GaussianSummary {
            mean: self.mu0.iter().map(|mu| m * mu).collect(),
            var_diag: self.var0.iter().map(|v| m * m * v + k.variance).collect(),
        }
    }
}

/// `-(x - mu0) / (var0 + sigma^2(t))`.
pub fn gaussian_score_ve(x: &[f64], t: f64, model: &GaussianDataModel, ve: &VeParams, out: &mut [f64]) {
    let s2 = ve.sigma(t) * ve.sigma(t);
    for i in 0..out.len() {
        out[i] = -(x[i] - model.mu0[i]) / (model.var0[i] + s2);
    }
}

/// `-(x - m mu0) / (m^2 var0 + 1 - m^2)`.
pub fn gaussian_score_vp(x: &[f64], t: f64, model: &GaussianDataModel, vp: &VpParams, out: &mut [f64]) {
    let m = vp.mean_factor(t);
    let v = vp.kernel_variance(t);
    for i in 0..out.len() {
        out[i] = -(x[i] - m * model.mu0[i]) / (m * m * model.var0[i] + v);
    }
}

/// Exact score of Gaussian data diffused by `process`.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    pub model: GaussianDataModel,
    pub process: Process,
}

impl GaussianScore {
    pub fn new(model: GaussianDataModel, process: Process) -> Self {
        Self { model, process }
    }

    pub fn log_density(&self, x: &[f64], t: f64) -> f64 {
        self.model.marginal(&self.process, t).log_density(x)
    }

    /// `n` exact draws from `p_t`, sample `i` from metrics stream `(seed, i)`.
    pub fn sample_marginal(&self, t: f64, n: usize, seed: u64) -> Vec<f64> {
        self.model.marginal(&self.process, t).sample(n, seed)
    }
}

impl ScoreField for GaussianScore {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match &self.process {
            Process::Ve(p) => gaussian_score_ve(x, t, &self.model, p, out),
            Process::Vp(p) => gaussian_score_vp(x, t, &self.model, p, out),
        }
    }
}

/// Mixture component: weight, mean and diagonal variance.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Gaussian mixture with diagonal covariances; weights are normalized on
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDataModel {
    dim: usize,
    components: Vec<MixtureComponent>,
}

impl MixtureDataModel {
    pub fn new(mut components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or(invalid("components", "need at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(invalid("components", "mean must be non-empty"));
        }
        let mut total = 0.0;
        for c in &components {
            if c.mean.len() != dim || c.var.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: if c.mean.len() != dim { c.mean.len() } else { c.var.len() },
                });
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(invalid("weight", "must be > 0"));
            }
            if c.var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(invalid("var", "components must be > 0"));
            }
            total += c.weight;
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { dim, components })
    }

    /// `k` equally weighted components with means uniform in `mean_range` and
    /// variances uniform in `var_range`.
    pub fn random(
        k: usize,
        dim: usize,
        mean_range: (f64, f64),
        var_range: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        let mut rng = RngStream::in_domain(seed, domain::DATA, 1);
        let comps = (0..k)
            .map(|_| MixtureComponent {
                weight: 1.0,
                mean: (0..dim).map(|_| uniform_in(&mut rng, mean_range.0, mean_range.1)).collect(),
                var: (0..dim).map(|_| uniform_in(&mut rng, var_range.0, var_range.1)).collect(),
            })
            .collect();
        Self::new(comps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    /// Per-component log weight plus log density at `x` under `p_t`.
    fn component_log_terms(&self, x: &[f64], t: f64, process: &Process, out: &mut Vec<f64>) {
        let k = process.kernel(t);
        let m = k.mean_factor;
        out.clear();
        for c in &self.components {
            let mut lp = libm::log(c.weight);
            for i in 0..self.dim {
                let v = m * m * c.var[i] + k.variance;
                let r = x[i] - m * c.mean[i];
                lp -= 0.5 * (r * r / v + libm::log(2.0 * PI * v));
            }
            out.push(lp);
        }
    }

    pub fn log_density(&self, x: &[f64], t: f64, process: &Process) -> f64 {
        let mut terms = Vec::with_capacity(self.components.len());
        self.component_log_terms(x, t, process, &mut terms);
        log_sum_exp(&terms)
    }

    /// Analytic per-component mean and variance of `p_t`.
    pub fn marginal_moments(&self, process: &Process, t: f64) -> GaussianSummary {
        let k = process.kernel(t);
        let m = k.mean_factor;
        let mut mean = alloc::vec![0.0; self.dim];
        let mut second = alloc::vec![0.0; self.dim];
        for c in &self.components {
            for i in 0..self.dim {
                let mu = m * c.mean[i];
                let v = m * m * c.var[i] + k.variance;
                mean[i] += c.weight * mu;
                second[i] += c.weight * (v + mu * mu);
            }
        }
        let var_diag = second.iter().zip(&mean).map(|(s, mu)| s - mu * mu).collect();
        GaussianSummary { mean, var_diag }
    }

    /// `n` exact draws from `p_t`, sample `i` from metrics stream `(seed, i)`.
    pub fn sample_marginal(&self, process: &Process, t: f64, n: usize, seed: u64) -> Vec<f64> {
        let k = process.kernel(t);
        let m = k.mean_factor;
        let mut out = alloc::vec![0.0; n * self.dim];
        for (i, row) in out.chunks_mut(self.dim).enumerate() {
            let mut rng = RngStream::in_domain(seed, domain::METRICS, i as u64);
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (j, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = j;
                    break;
                }
            }
            let c = &self.components[pick];
            for (d, v) in row.iter_mut().enumerate() {
                let var = m * m * c.var[d] + k.variance;
                *v = m * c.mean[d] + libm::sqrt(var) * rng.normal();
            }
        }
        out
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + libm::log(terms.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

/// Score of a diagonal Gaussian mixture under `process`, with responsibilities
/// computed by log-sum-exp.
pub fn mixture_score(x: &[f64], t: f64, model: &MixtureDataModel, process: &Process, out: &mut [f64]) {
    let mut terms = Vec::with_capacity(model.components.len());
    model.component_log_terms(x, t, process, &mut terms);
    let lse = log_sum_exp(&terms);
    let k = process.kernel(t);
    let m = k.mean_factor;
    out.iter_mut().for_each(|o| *o = 0.0);
    for (c, lt) in model.components.iter().zip(&terms) {
        let resp = libm::exp(lt - lse);
        if resp == 0.0 {
            continue;
        }
        for i in 0..model.dim {
            let v = m * m * c.var[i] + k.variance;
            out[i] -= resp * (x[i] - m * c.mean[i]) / v;
        }
    }
}

/// Exact score of mixture data diffused by `process`.
#[derive(Debug, Clone)]
pub struct MixtureScore {
    pub model: MixtureDataModel,
    pub process: Process,
}

impl MixtureScore {
    pub fn new(model: MixtureDataModel, process: Process) -> Self {
        Self { model, process }
    }

    pub fn log_density(&self, x: &[f64], t: f64) -> f64 {
        self.model.log_density(x, t, &self.process)
    }
}

impl ScoreField for MixtureScore {
    fn dim(&self) -> usize {
        self.model.dim()
    }
    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        mixture_score(x, t, &self.model, &self.process, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{VeParams, VpParams};
    use approx::assert_relative_eq;

    fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = xp[i];
                xp[i] = orig + step;
                let up = f(&xp);
                xp[i] = orig - step;
                let down = f(&xp);
                xp[i] = orig;
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn ve_score_examples() {
        let model = GaussianDataModel::new(alloc::vec![0.0], alloc::vec![1.0]).unwrap();
        // sigma^2(t) = 3 at t = ln(sqrt 3 / 0.01) / ln(5000).
        let ve = VeParams::default();
        let t = (3f64.sqrt() / 0.01).ln() / 5000f64.ln();
        let mut out = [0.0];
        gaussian_score_ve(&[2.0], t, &model, &ve, &mut out);
        assert_relative_eq!(out[0], -0.5, max_relative = 1e-12);
        gaussian_score_ve(&[0.0], t, &model, &ve, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn vp_score_examples() {
        let model = GaussianDataModel::new(alloc::vec![1.5, -0.5], alloc::vec![0.5, 2.0]).unwrap();
        let vp = VpParams::default();
        let mut out = [0.0; 2];
        gaussian_score_vp(&[0.0, 0.0], 0.0, &model, &vp, &mut out);
        assert_relative_eq!(out[0], 1.5 / 0.5, max_relative = 1e-14);
        assert_relative_eq!(out[1], -0.5 / 2.0, max_relative = 1e-14);
        let m1 = vp.mean_factor(1.0);
        gaussian_score_vp(&[0.3, 0.3], 1.0, &model, &vp, &mut out);
        let denom = m1 * m1 * 0.5 + 1.0 - m1 * m1;
        assert_relative_eq!(out[0], -(0.3 - m1 * 1.5) / denom, max_relative = 1e-14);
        assert!((denom - 1.0).abs() < 1e-4);
    }

    #[test]
    fn scores_match_finite_differences() {
        let mut rng = RngStream::new(5, 0);
        let dim = 3;
        for process in [Process::Ve(VeParams::default()), Process::Vp(VpParams::default())] {
            let g = GaussianScore::new(
                GaussianDataModel::random(dim, (-1.0, 1.0), (0.5, 2.0), 1).unwrap(),
                process,
            );
            for _ in 0..20 {
                let t = 1e-3 + 0.999 * rng.uniform();
                let x: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let mut s = alloc::vec![0.0; dim];
                g.score(&x, t, &mut s);
                let fd = fd_gradient(|y| g.log_density(y, t), &x, 1e-5);
                for i in 0..dim {
                    assert!((s[i] - fd[i]).abs() <= 1e-6 * s[i].abs().max(1.0), "{process:?} {s:?} {fd:?}");
                }
            }
        }
    }

    #[test]
    fn single_component_mixture_equals_gaussian() {
        let g = GaussianDataModel::new(alloc::vec![0.3, -1.0], alloc::vec![0.7, 1.3]).unwrap();
        let mix = MixtureDataModel::new(alloc::vec![MixtureComponent {
            weight: 2.0,
            mean: g.mu0.clone(),
            var: g.var0.clone(),
        }])
        .unwrap();
        for process in [Process::Ve(VeParams::default()), Process::Vp(VpParams::default())] {
            let gs = GaussianScore::new(g.clone(), process);
            let ms = MixtureScore::new(mix.clone(), process);
            let mut a = [0.0; 2];
            let mut b = [0.0; 2];
            for &t in &[1e-3, 0.2, 0.9] {
                gs.score(&[0.1, 0.4], t, &mut a);
                ms.score(&[0.1, 0.4], t, &mut b);
                assert_relative_eq!(a[0], b[0], max_relative = 1e-12);
                assert_relative_eq!(a[1], b[1], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_mixture_midpoint() {
        let mix = MixtureDataModel::new(alloc::vec![
            MixtureComponent { weight: 0.5, mean: alloc::vec![-2.0, 0.0], var: alloc::vec![0.3, 0.3] },
            MixtureComponent { weight: 0.5, mean: alloc::vec![2.0, 0.0], var: alloc::vec![0.3, 0.3] },
        ])
        .unwrap();
        let mut out = [1.0; 2];
        mixture_score(&[0.0, 0.7], 0.1, &mix, &Process::Vp(VpParams::default()), &mut out);
        assert!(out[0].abs() < 1e-14);
    }

    #[test]
    fn counting_wrapper_counts_calls() {
        let c = counting_wrapper(ZeroScore::new(2));
        let mut out = [0.0; 2];
        for _ in 0..3 {
            c.score(&[1.0, 1.0], 0.5, &mut out);
        }
        assert_eq!(c.count(), 3);
        c.reset();
        assert_eq!(c.count(), 0);
    }

    #[test]
    fn model_validation() {
        assert!(GaussianDataModel::new(alloc::vec![0.0], alloc::vec![0.0]).is_err());
        assert!(GaussianDataModel::new(alloc::vec![0.0, 1.0], alloc::vec![1.0]).is_err());
        assert!(MixtureDataModel::new(Vec::new()).is_err());
        let m = MixtureDataModel::new(alloc::vec![
            MixtureComponent { weight: 1.0, mean: alloc::vec![0.0], var: alloc::vec![1.0] },
            MixtureComponent { weight: 3.0, mean: alloc::vec![1.0], var: alloc::vec![1.0] },
        ])
        .unwrap();
        assert_relative_eq!(m.components()[1].weight, 0.75);
    }
}
