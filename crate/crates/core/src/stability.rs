//! Linear test SDE `dx = lam x dt + sigma dw`: the Euler-Maruyama recursion
//! `y_{n+1} = (1 + h lam) y_n + z_n`, its stationary moments, Monte-Carlo
//! checks, and a coupled weak-order sweep.
//!
//! The mean-square recursion is `E[y_{n+1}^2] = (1 + h lam)^2 E[y_n^2] +
//! sigma^2 h`, started from the squared initial moment.

use alloc::vec::Vec;

use crate::adaptive::Stepper;
use crate::error::{invalid, Error, Result};
use crate::rng::{domain, RngStream};
use crate::sde::{DiffusionSpec, Direction, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTestSpec {
    pub lambda: f64,
    pub sigma: f64,
    pub h: f64,
}

impl LinearTestSpec {
    pub fn new(lambda: f64, sigma: f64, h: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(invalid("lambda", "must be finite"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid("sigma", "must be finite and >= 0"));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid("h", "must be finite and > 0"));
        }
        Ok(Self { lambda, sigma, h })
    }

    /// `1 + lam h`.
    pub fn factor(&self) -> f64 {
        1.0 + self.lambda * self.h
    }

    pub fn is_stable(&self) -> bool {
        self.factor().abs() < 1.0
    }

    fn noise_std(&self) -> f64 {
        self.sigma * libm::sqrt(self.h)
    }
}

/// `(1 + h lam) y + z`, with `z ~ N(0, sigma^2 h)` supplied by the caller.
pub fn em_scheme_step(y: f64, spec: &LinearTestSpec, z: f64) -> f64 {
    spec.factor() * y + z
}

/// Factor of the reversed recursion `1 + lam (t - h)`.
pub fn reversed_scheme_factor(lambda: f64, t: f64, h: f64) -> f64 {
    1.0 + lambda * (t - h)
}

/// Stationary `(mean, second moment) = (0, -sigma^2 / (2 lam + lam^2 h))`.
pub fn stationary_moments_analytic(spec: &LinearTestSpec) -> Result<(f64, f64)> {
    if !spec.is_stable() {
        return Err(Error::OutsideStabilityRegion { factor: spec.factor() });
    }
    let l = spec.lambda;
    Ok((0.0, -spec.sigma * spec.sigma / (2.0 * l + l * l * spec.h)))
}

/// Mean and second moment after `n` steps from a deterministic `y0`.
pub fn mean_square_recursion(spec: &LinearTestSpec, y0: f64, n: usize) -> (f64, f64) {
    let f = spec.factor();
    let q = spec.sigma * spec.sigma * spec.h;
    let (mut m, mut v) = (y0, y0 * y0);
    for _ in 0..n {
        m *= f;
        v = f * f * v + q;
    }
    (m, v)
}

/// Monte-Carlo moments with 3-standard-error half widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub second_moment: f64,
    pub mean_ci: f64,
    pub second_moment_ci: f64,
}

#[derive(Default)]
struct Accum {
    n: u64,
    s1: f64,
    s2: f64,
    s4: f64,
}

impl Accum {
    fn push(&mut self, y: f64) {
        let y2 = y * y;
        self.n += 1;
        self.s1 += y;
        self.s2 += y2;
        self.s4 += y2 * y2;
    }

    /// Treats each pushed value as one independent observation of `y`.
    fn finish(&self) -> MomentEstimate {
        let n = self.n as f64;
        let m1 = self.s1 / n;
        let m2 = self.s2 / n;
        let m4 = self.s4 / n;
        let var1 = (m2 - m1 * m1).max(0.0);
        let var2 = (m4 - m2 * m2).max(0.0);
        let k = if self.n > 1 { n / (n - 1.0) } else { 0.0 };
        MomentEstimate {
            mean: m1,
            second_moment: m2,
            mean_ci: 3.0 * libm::sqrt(k * var1 / n),
            second_moment_ci: 3.0 * libm::sqrt(k * var2 / n),
        }
    }
}

/// Moments of `y_n` after `n_steps` steps from `y0`, over `n_paths`
/// independent paths (path `p` uses lab stream `(seed, offset + p)`).
fn ensemble(factor: f64, noise_std: f64, y0: f64, n_paths: usize, n_steps: usize, seed: u64, offset: u64) -> MomentEstimate {
    let mut acc = Accum::default();
    for p in 0..n_paths {
        let mut rng = RngStream::in_domain(seed, domain::LAB, offset + p as u64);
        let mut y = y0;
        for _ in 0..n_steps {
            y = factor * y + noise_std * rng.normal();
        }
        acc.push(y);
    }
    acc.finish()
}

/// Ensemble moments of `y_{n_steps}` from `y0 = 0`.
pub fn empirical_moments(spec: &LinearTestSpec, n_paths: usize, n_steps: usize, seed: u64) -> MomentEstimate {
    empirical_moments_from(spec, 0.0, n_paths, n_steps, seed)
}

pub fn empirical_moments_from(spec: &LinearTestSpec, y0: f64, n_paths: usize, n_steps: usize, seed: u64) -> MomentEstimate {
    ensemble(spec.factor(), spec.noise_std(), y0, n_paths, n_steps, seed, 0)
}

const FB_OFFSET: u64 = 1 << 40;

/// Moments of the reversed recursion `y~_{n+1} = (1 + lam (t - h)) y~_n + z~_n`
/// with consecutive forward and backward steps, `t = 2h`. Uses streams
/// disjoint from [`empirical_moments`].
pub fn forward_backward_scheme_moments(spec: &LinearTestSpec, n_paths: usize, n_steps: usize, seed: u64) -> Result<MomentEstimate> {
    let f = reversed_scheme_factor(spec.lambda, 2.0 * spec.h, spec.h);
    if !(f.abs() < 1.0) {
        return Err(Error::OutsideStabilityRegion { factor: f });
    }
    Ok(ensemble(f, spec.noise_std(), 0.0, n_paths, n_steps, seed, FB_OFFSET))
}

/// Stationary moments from time averages: each path runs `burn_in +
/// n_steps` steps from 0 and averages `y`, `y^2` over the last `n_steps`.
/// The half widths come from the spread of the per-path averages, which are
/// independent.
pub fn stationary_moments_time_average(spec: &LinearTestSpec, n_paths: usize, n_steps: usize, seed: u64) -> Result<MomentEstimate> {
    if !spec.is_stable() {
        return Err(Error::OutsideStabilityRegion { factor: spec.factor() });
    }
    if n_paths < 2 || n_steps == 0 {
        return Err(Error::InsufficientData("need >= 2 paths and >= 1 step"));
    }
    let f = spec.factor();
    let q = spec.noise_std();
    // Transient of the second moment decays like f^(2n).
    let burn_in = if f == 0.0 { 1 } else { libm::ceil(libm::log(1e-8) / (2.0 * libm::log(f.abs()))) as usize + 1 };
    let (mut a1, mut a1s) = (0.0, 0.0);
    let (mut a2, mut a2s) = (0.0, 0.0);
    for p in 0..n_paths {
        let mut rng = RngStream::in_domain(seed, domain::LAB, FB_OFFSET * 2 + p as u64);
        let mut y = 0.0;
        for _ in 0..burn_in {
            y = f * y + q * rng.normal();
        }
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n_steps {
            y = f * y + q * rng.normal();
            s1 += y;
            s2 += y * y;
        }
        let (m1, m2) = (s1 / n_steps as f64, s2 / n_steps as f64);
        a1 += m1;
        a1s += m1 * m1;
        a2 += m2;
        a2s += m2 * m2;
    }
    let n = n_paths as f64;
    let (mean, second) = (a1 / n, a2 / n);
    let v1 = ((a1s / n - mean * mean) * n / (n - 1.0)).max(0.0);
    let v2 = ((a2s / n - second * second) * n / (n - 1.0)).max(0.0);
    Ok(MomentEstimate {
        mean,
        second_moment: second,
        mean_ci: 3.0 * libm::sqrt(v1 / n),
        second_moment_ci: 3.0 * libm::sqrt(v2 / n),
    })
}

/// Least-squares line through `(h_i, m_i)`; returns its value at `h = 0`.
pub fn h_limit_extrapolation(hs: &[f64], m2: &[f64]) -> Result<f64> {
    if hs.len() != m2.len() {
        return Err(Error::DimensionMismatch { expected: hs.len(), got: m2.len() });
    }
    if hs.len() < 2 {
        return Err(Error::InsufficientData("need at least two step sizes"));
    }
    let (_, intercept) = linear_fit(hs, m2)?;
    Ok(intercept)
}

/// Least-squares `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData("abscissae must not all coincide"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// One `(lam, h)` cell of the stability grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCell {
    pub lambda: f64,
    pub h: f64,
    pub factor: f64,
    /// `|1 + lam h| < 1`.
    pub stable: bool,
    /// `None` outside the stability region.
    pub analytic_m2: Option<f64>,
    pub empirical: MomentEstimate,
    /// Empirical verdict: non-finite, or `|mean| > 10 |y0|`.
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityGrid {
    pub lambdas: Vec<f64>,
    pub hs: Vec<f64>,
    pub sigma: f64,
    pub y0: f64,
    pub n_paths: usize,
    pub n_steps: usize,
}

impl Default for StabilityGrid {
    fn default() -> Self {
        Self {
            lambdas: alloc::vec![-0.5, -1.0, -2.5, -3.5, -6.0, -9.0, -13.0, -17.0, -23.0, -30.0],
            hs: alloc::vec![0.025, 0.05, 0.07, 0.1, 0.13, 0.2, 0.3, 0.45, 0.65, 0.9],
            sigma: 1.0,
            y0: 1.0,
            n_paths: 1000,
            n_steps: 1000,
        }
    }
}

/// Runs every cell from `y0` and classifies it. Cell `k` (row-major over
/// `lambdas` x `hs`) uses seed `seed + k`.
pub fn stability_grid(grid: &StabilityGrid, seed: u64) -> Result<Vec<StabilityCell>> {
    let mut cells = Vec::with_capacity(grid.lambdas.len() * grid.hs.len());
    for (i, &lambda) in grid.lambdas.iter().enumerate() {
        for (j, &h) in grid.hs.iter().enumerate() {
            let spec = LinearTestSpec::new(lambda, grid.sigma, h)?;
            let k = (i * grid.hs.len() + j) as u64;
            let est = empirical_moments_from(&spec, grid.y0, grid.n_paths, grid.n_steps, seed.wrapping_add(k));
            let diverged = !est.mean.is_finite() || !est.second_moment.is_finite() || est.mean.abs() > 10.0 * grid.y0.abs();
            cells.push(StabilityCell {
                lambda,
                h,
                factor: spec.factor(),
                stable: spec.is_stable(),
                analytic_m2: stationary_moments_analytic(&spec).ok().map(|m| m.1),
                empirical: est,
                diverged,
            });
        }
    }
    Ok(cells)
}

/// `dx = lam x dt + sigma dw` in forward time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTestSde {
    pub lambda: f64,
    pub sigma: f64,
}

impl DiffusionSpec for LinearTestSde {
    fn dim(&self) -> usize {
        1
    }
    fn direction(&self) -> Direction {
        Direction::ForwardTime
    }
    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = self.lambda * x[0];
    }
    fn diffusion(&self, _x: &[f64], _t: f64) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakOrderConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub x0: f64,
    pub horizon: f64,
    /// Coarsest step first; each must be a multiple of the fine step.
    pub hs: [f64; 4],
    /// Fine sub-steps per smallest scheme step.
    pub fine_per_step: usize,
    pub n_paths: usize,
}

impl Default for WeakOrderConfig {
    fn default() -> Self {
        Self {
            lambda: -1.0,
            sigma: 1.0,
            x0: 1.0,
            horizon: 1.0,
            hs: [0.2, 0.1, 0.05, 0.025],
            fine_per_step: 16,
            n_paths: 1_000_000,
        }
    }
}

/// Weak errors in `E[X_T^2]` per step size, with 3-standard-error half
/// widths, and least-squares slopes of `log |error|` against `log h`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakOrderResult {
    pub hs: Vec<f64>,
    pub em_error: Vec<f64>,
    pub em_ci: Vec<f64>,
    pub extrapolated_error: Vec<f64>,
    pub extrapolated_ci: Vec<f64>,
    pub em_slope: f64,
    pub extrapolated_slope: f64,
}

/// Coupled step-size sweep. Each path draws one fine Gaussian sequence; the
/// reference is the exact Ornstein-Uhlenbeck transition on the fine grid and
/// every scheme consumes the summed fine increments on its own grid, so the
/// per-path differences `X_h^2 - X_exact^2` have small variance. The
/// extrapolated scheme is the `x''` proposal of the adaptive solver.
pub fn weak_order_sweep(cfg: &WeakOrderConfig, seed: u64) -> Result<WeakOrderResult> {
    let h_min = cfg.hs.iter().copied().fold(f64::INFINITY, f64::min);
    if cfg.fine_per_step == 0 || cfg.n_paths < 2 || !(h_min > 0.0) {
        return Err(invalid("weak_order", "need positive steps, fine_per_step >= 1, n_paths >= 2"));
    }
    let fine = h_min / cfg.fine_per_step as f64;
    let n_fine = libm::round(cfg.horizon / fine) as usize;
    let ratios: Vec<usize> = cfg.hs.iter().map(|h| libm::round(h / fine) as usize).collect();
    for (h, &r) in cfg.hs.iter().zip(&ratios) {
        if r == 0 || !n_fine.is_multiple_of(r) || (r as f64 * fine - h).abs() > 1e-12 {
            return Err(invalid("hs", "steps must divide the horizon on the fine grid"));
        }
    }
    let l = cfg.lambda;
    let decay = libm::exp(l * fine);
    let ou_std = if l == 0.0 {
        cfg.sigma * libm::sqrt(fine)
    } else {
        cfg.sigma * libm::sqrt(libm::expm1(2.0 * l * fine) / (2.0 * l))
    };
    let sq_fine = libm::sqrt(fine);
    let sde = LinearTestSde { lambda: l, sigma: cfg.sigma };
    let scfg = SolverConfig::default();
    let mut stepper = Stepper::new(1);
    let k = cfg.hs.len();
    let mut em = [0.0f64; 4];
    let mut ex = [0.0f64; 4];
    let mut w = [0.0f64; 4];
    let mut em_acc: [Accum; 4] = Default::default();
    let mut ex_acc: [Accum; 4] = Default::default();

    for p in 0..cfg.n_paths {
        let mut rng = RngStream::in_domain(seed, domain::LAB, p as u64);
        let mut x_ref = cfg.x0;
        em.fill(cfg.x0);
        ex.fill(cfg.x0);
        w.fill(0.0);
        for step in 1..=n_fine {
            let xi = rng.normal();
            x_ref = decay * x_ref + ou_std * xi;
            for j in 0..k {
                w[j] += sq_fine * xi;
                if step % ratios[j] == 0 {
                    let h = cfg.hs[j];
                    em[j] += h * l * em[j] + cfg.sigma * w[j];
                    stepper.z_mut()[0] = w[j] / libm::sqrt(h);
                    let t = (step - ratios[j]) as f64 * fine;
                    let x = [ex[j]];
                    stepper.attempt(&sde, &scfg, &x, &x, t, t + h, h, 0.0);
                    ex[j] = stepper.x_heun()[0];
                    w[j] = 0.0;
                }
            }
        }
        let r2 = x_ref * x_ref;
        for j in 0..k {
            em_acc[j].push(em[j] * em[j] - r2);
            ex_acc[j].push(ex[j] * ex[j] - r2);
        }
    }

    let mut res = WeakOrderResult {
        hs: cfg.hs.to_vec(),
        em_error: Vec::new(),
        em_ci: Vec::new(),
        extrapolated_error: Vec::new(),
        extrapolated_ci: Vec::new(),
        em_slope: 0.0,
        extrapolated_slope: 0.0,
    };
    for j in 0..k {
        let a = em_acc[j].finish();
        let b = ex_acc[j].finish();
        res.em_error.push(a.mean);
        res.em_ci.push(a.mean_ci);
        res.extrapolated_error.push(b.mean);
        res.extrapolated_ci.push(b.mean_ci);
    }
    let lh: Vec<f64> = res.hs.iter().map(|h| libm::log(*h)).collect();
    let le: Vec<f64> = res.em_error.iter().map(|e| libm::log(e.abs())).collect();
    let lx: Vec<f64> = res.extrapolated_error.iter().map(|e| libm::log(e.abs())).collect();
    res.em_slope = linear_fit(&lh, &le)?.0;
    res.extrapolated_slope = linear_fit(&lh, &lx)?.0;
    Ok(res)
}
