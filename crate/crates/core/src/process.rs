//! Variance-exploding (VE) and variance-preserving (VP) forward processes,
//! their reverse-time and probability-flow forms, transition kernels, the
//! baseline time grid and Tweedie denoising.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::rng::{domain, RngStream};
use crate::score::ScoreField;
use crate::sde::{DiffusionSpec, Direction, ReverseProblem};

#[inline]
fn clamp_unit(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

/// `sigma(t) = sigma_min (sigma_max / sigma_min)^t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VeParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for VeParams {
    fn default() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 50.0,
        }
    }
}

impl VeParams {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let p = Self {
            sigma_min,
            sigma_max,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(invalid("sigma_min", "must be > 0"));
        }
        if !(self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(invalid("sigma_max", "must be > sigma_min"));
        }
        Ok(())
    }

    fn log_ratio(&self) -> f64 {
        libm::log(self.sigma_max / self.sigma_min)
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma_min * libm::exp(clamp_unit(t) * self.log_ratio())
    }

    /// `sqrt(d sigma^2 / dt) = sigma(t) sqrt(2 ln(sigma_max / sigma_min))`.
    pub fn diffusion(&self, t: f64) -> f64 {
        self.sigma(t) * libm::sqrt(2.0 * self.log_ratio())
    }
}

/// `beta(t) = beta_min + t (beta_max - beta_min)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpParams {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for VpParams {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

impl VpParams {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        let p = Self { beta_min, beta_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min >= 0.0 && self.beta_min.is_finite()) {
            return Err(invalid("beta_min", "must be >= 0"));
        }
        if !(self.beta_max > self.beta_min && self.beta_max.is_finite()) {
            return Err(invalid("beta_max", "must be > beta_min"));
        }
        Ok(())
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + clamp_unit(t) * (self.beta_max - self.beta_min)
    }

    /// `int_0^t beta(s) ds`.
    pub fn beta_integral(&self, t: f64) -> f64 {
        let t = clamp_unit(t);
        self.beta_min * t + 0.5 * t * t * (self.beta_max - self.beta_min)
    }

    /// `m(t) = exp(-1/2 int_0^t beta)`.
    pub fn mean_factor(&self, t: f64) -> f64 {
        libm::exp(-0.5 * self.beta_integral(t))
    }

    /// `1 - m(t)^2`.
    pub fn kernel_variance(&self, t: f64) -> f64 {
        -libm::expm1(-self.beta_integral(t))
    }
}

/// `x(t) | x(0) ~ N(mean_factor * x(0), variance * I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionKernel {
    pub mean_factor: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Process {
    Ve(VeParams),
    Vp(VpParams),
}

impl Process {
    pub fn validate(&self) -> Result<()> {
        match self {
            Process::Ve(p) => p.validate(),
            Process::Vp(p) => p.validate(),
        }
    }

    /// Forward drift `f(x, t)`.
    pub fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            Process::Ve(_) => out.iter_mut().for_each(|o| *o = 0.0),
            Process::Vp(p) => {
                let c = -0.5 * p.beta(t);
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = c * xi;
                }
            }
        }
    }

    /// Linear drift coefficient `a(t)` with `f(x, t) = a(t) x`.
    pub fn drift_coefficient(&self, t: f64) -> f64 {
        match self {
            Process::Ve(_) => 0.0,
            Process::Vp(p) => -0.5 * p.beta(t),
        }
    }

    /// Forward diffusion `g(t)`.
    pub fn diffusion(&self, t: f64) -> f64 {
        match self {
            Process::Ve(p) => p.diffusion(t),
            Process::Vp(p) => libm::sqrt(p.beta(t)),
        }
    }

    /// Transition kernel. VE uses `sigma^2(t)` as the added variance, the
    /// usual approximation that drops `sigma^2(0)`.
    pub fn kernel(&self, t: f64) -> TransitionKernel {
        match self {
            Process::Ve(p) => TransitionKernel {
                mean_factor: 1.0,
                variance: p.sigma(t) * p.sigma(t),
            },
            Process::Vp(p) => TransitionKernel {
                mean_factor: p.mean_factor(t),
                variance: p.kernel_variance(t),
            },
        }
    }

    /// Transition kernel without approximation: VE variance is
    /// `sigma^2(t) - sigma^2(0)`.
    pub fn kernel_exact(&self, t: f64) -> TransitionKernel {
        match self {
            Process::Ve(p) => {
                let s = p.sigma(t);
                TransitionKernel {
                    mean_factor: 1.0,
                    variance: s * s - p.sigma_min * p.sigma_min,
                }
            }
            Process::Vp(_) => self.kernel(t),
        }
    }

    /// Standard deviation of the terminal prior at `t = 1`.
    pub fn prior_std(&self) -> f64 {
        match self {
            Process::Ve(p) => p.sigma_max,
            Process::Vp(_) => 1.0,
        }
    }

    /// Terminal time conventionally used with the process.
    pub fn default_t_end(&self) -> f64 {
        match self {
            Process::Ve(_) => 1e-5,
            Process::Vp(_) => 1e-3,
        }
    }

    /// Absolute tolerance for image data: `[0, 1]` for VE, `[-1, 1]` for VP.
    pub fn default_abs_tolerance(&self) -> f64 {
        match self {
            Process::Ve(_) => 1.0 / 256.0,
            Process::Vp(_) => 2.0 / 256.0,
        }
    }
}

/// `sigma(t)` of a VE process.
pub fn ve_sigma(t: f64, p: &VeParams) -> f64 {
    p.sigma(t)
}

pub fn ve_diffusion(t: f64, p: &VeParams) -> f64 {
    p.diffusion(t)
}

pub fn vp_beta(t: f64, p: &VpParams) -> f64 {
    p.beta(t)
}

pub fn vp_mean_factor(t: f64, p: &VpParams) -> f64 {
    p.mean_factor(t)
}

/// `n` i.i.d. draws from the terminal prior, sample `i` taken from prior
/// stream `(seed, i)`.
pub fn sample_terminal_prior(process: &Process, n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let std = process.prior_std();
    let mut out = alloc::vec![0.0; n * dim];
    for (i, chunk) in out.chunks_mut(dim.max(1)).enumerate().take(n) {
        let mut rng = RngStream::in_domain(seed, domain::PRIOR, i as u64);
        for v in chunk.iter_mut() {
            *v = std * rng.normal();
        }
    }
    out
}

/// Uniform grid `t_0 = 1, t_i = t_{i-1} - (1 - eps)/N` with `N + 1` points; the
/// last point is exactly `eps`.
pub fn baseline_time_grid(n: usize, eps: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("steps", "must be >= 1"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("eps", "must lie in (0, 1)"));
    }
    let dt = (1.0 - eps) / n as f64;
    let mut grid: Vec<f64> = (0..=n).map(|i| 1.0 - i as f64 * dt).collect();
    grid[n] = eps;
    // Rounding can push an interior point below eps when N is huge.
    for v in grid.iter_mut() {
        if *v < eps {
            *v = eps;
        }
    }
    Ok(grid)
}

/// Largest Euclidean distance between two rows of a sample-major point set,
/// the usual choice of `sigma_max`.
pub fn max_pairwise_distance(points: &[f64], dim: usize) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let n = points.len() / dim;
    let mut best = 0.0f64;
    for i in 0..n {
        let a = &points[i * dim..(i + 1) * dim];
        for j in (i + 1)..n {
            let b = &points[j * dim..(j + 1) * dim];
            let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
            best = best.max(d2);
        }
    }
    libm::sqrt(best)
}

/// Variance used by the Tweedie step `x <- x + v * score(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TweedieConvention {
    /// Transition-kernel variance at the denoising time: `sigma^2(t)` for VE,
    /// `1 - m(t)^2` for VP.
    Kernel,
    /// Fixed constants of the reference implementation: `sigma_min^2` for VE
    /// and `1` for VP.
    Literal,
    /// Literal VE constant without squaring: `sigma_min`.
    LiteralSigmaMin,
}

pub fn tweedie_variance(process: &Process, t: f64, convention: TweedieConvention) -> f64 {
    match (convention, process) {
        (TweedieConvention::Kernel, _) => process.kernel(t).variance,
        (TweedieConvention::Literal, Process::Ve(p)) => p.sigma_min * p.sigma_min,
        (TweedieConvention::LiteralSigmaMin, Process::Ve(p)) => p.sigma_min,
        (TweedieConvention::Literal | TweedieConvention::LiteralSigmaMin, Process::Vp(_)) => 1.0,
    }
}

/// Tweedie denoising in place at time `t`. Uses one score evaluation.
pub fn denoise_tweedie<S: ScoreField + ?Sized>(
    x: &mut [f64],
    t: f64,
    score: &S,
    process: &Process,
    convention: TweedieConvention,
) {
    let v = tweedie_variance(process, t, convention);
    let mut s = alloc::vec![0.0; x.len()];
    score.score(x, t, &mut s);
    for (xi, si) in x.iter_mut().zip(&s) {
        *xi += v * si;
    }
}

/// Forward diffusion process of a given dimension, run in forward time.
#[derive(Debug, Clone, Copy)]
pub struct ForwardSpec {
    pub process: Process,
    pub dim: usize,
}

impl DiffusionSpec for ForwardSpec {
    fn dim(&self) -> usize {
        self.dim
    }
    fn direction(&self) -> Direction {
        Direction::ForwardTime
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.process.drift(x, t, out)
    }
    fn diffusion(&self, _x: &[f64], t: f64) -> f64 {
        self.process.diffusion(t)
    }
}

/// Reverse diffusion `dx = [f - g^2 s] dt + g dw_bar`.
#[derive(Debug, Clone, Copy)]
pub struct ReverseSpec<'a, S: ?Sized> {
    pub process: Process,
    pub score: &'a S,
    /// Terminal denoising; `None` disables it.
    pub tweedie: Option<TweedieConvention>,
}

/// Reverse-time spec for `process` driven by `score`, with kernel-variance
/// Tweedie denoising.
pub fn reverse_spec<'a, S: ScoreField + ?Sized>(
    process: Process,
    score: &'a S,
    dim: usize,
) -> Result<ReverseSpec<'a, S>> {
    ReverseSpec::new(process, score, dim)
}

impl<'a, S: ScoreField + ?Sized> ReverseSpec<'a, S> {
    pub fn new(process: Process, score: &'a S, dim: usize) -> Result<Self> {
        process.validate()?;
        if score.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: score.dim(),
            });
        }
        Ok(Self {
            process,
            score,
            tweedie: Some(TweedieConvention::Kernel),
        })
    }

    pub fn with_tweedie(mut self, tweedie: Option<TweedieConvention>) -> Self {
        self.tweedie = tweedie;
        self
    }

    /// Probability-flow ODE sharing this SDE's marginals.
    pub fn probability_flow(&self) -> ProbabilityFlow<'_, 'a, S> {
        ProbabilityFlow { spec: self }
    }

    fn drift_with_factor(&self, x: &[f64], t: f64, score_factor: f64, out: &mut [f64]) {
        let t = clamp_unit(t);
        self.score.score(x, t, out);
        let g = self.process.diffusion(t);
        let a = self.process.drift_coefficient(t);
        let c = -score_factor * g * g;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = a * xi + c * *o;
        }
    }
}

impl<S: ScoreField + ?Sized> DiffusionSpec for ReverseSpec<'_, S> {
    fn dim(&self) -> usize {
        self.score.dim()
    }
    fn direction(&self) -> Direction {
        Direction::ReverseTime
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.drift_with_factor(x, t, 1.0, out)
    }
    fn diffusion(&self, _x: &[f64], t: f64) -> f64 {
        self.process.diffusion(clamp_unit(t))
    }
    fn evals_per_drift(&self) -> u64 {
        1
    }
}

impl<S: ScoreField + ?Sized> ReverseProblem for ReverseSpec<'_, S> {
    fn denoise(&self, x: &mut [f64], t: f64) -> u64 {
        match self.tweedie {
            Some(conv) => {
                denoise_tweedie(x, t, self.score, &self.process, conv);
                1
            }
            None => 0,
        }
    }
}

/// `dx/dt = f - 1/2 g^2 s`, integrated in reverse time with zero diffusion.
#[derive(Debug, Clone, Copy)]
pub struct ProbabilityFlow<'r, 'a, S: ?Sized> {
    spec: &'r ReverseSpec<'a, S>,
}

impl<S: ScoreField + ?Sized> DiffusionSpec for ProbabilityFlow<'_, '_, S> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }
    fn direction(&self) -> Direction {
        Direction::ReverseTime
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.spec.drift_with_factor(x, t, 0.5, out)
    }
    fn diffusion(&self, _x: &[f64], _t: f64) -> f64 {
        0.0
    }
    fn evals_per_drift(&self) -> u64 {
        1
    }
}

impl<S: ScoreField + ?Sized> ReverseProblem for ProbabilityFlow<'_, '_, S> {
    fn denoise(&self, x: &mut [f64], t: f64) -> u64 {
        self.spec.denoise(x, t)
    }
}
