//! Shared types: diffusion specs, solver configuration, batch state and run
//! reports.

use alloc::vec::Vec;
use core::time::Duration;

use crate::error::{invalid, Error, Result};

/// Which way the solver clock runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Clock decreases from 1 towards `t_end` (reverse diffusion).
    ReverseTime,
    /// Clock increases from `t_begin` to `t_end`.
    ForwardTime,
}

impl Direction {
    /// `-1.0` for reverse time, `+1.0` for forward time.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Direction::ReverseTime => -1.0,
            Direction::ForwardTime => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseType {
    Ito,
    Stratonovich,
}

/// A drift/diffusion pair `dx = f(x,t) dt + g(x,t) dw` with a time direction.
///
/// For [`Direction::ReverseTime`] the drift is the reverse-time drift, so one
/// Euler-Maruyama step reads `x - h f(x,t) + sqrt(h) g(x,t) z`.
pub trait DiffusionSpec: Sync {
    fn dim(&self) -> usize;

    fn direction(&self) -> Direction;

    fn noise_type(&self) -> NoiseType {
        NoiseType::Ito
    }

    /// Whether `g` depends on the state. Scalar diffusions that depend only on
    /// time keep the default.
    fn diffusion_depends_on_state(&self) -> bool {
        false
    }

    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Isotropic diffusion coefficient; finite and non-negative.
    fn diffusion(&self, x: &[f64], t: f64) -> f64;

    /// Score evaluations performed by one call to [`DiffusionSpec::drift`].
    fn evals_per_drift(&self) -> u64 {
        0
    }
}

impl<D: DiffusionSpec + ?Sized> DiffusionSpec for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn direction(&self) -> Direction {
        (**self).direction()
    }
    fn noise_type(&self) -> NoiseType {
        (**self).noise_type()
    }
    fn diffusion_depends_on_state(&self) -> bool {
        (**self).diffusion_depends_on_state()
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (**self).drift(x, t, out)
    }
    fn diffusion(&self, x: &[f64], t: f64) -> f64 {
        (**self).diffusion(x, t)
    }
    fn evals_per_drift(&self) -> u64 {
        (**self).evals_per_drift()
    }
}

/// A reverse-time problem that knows how to denoise its terminal state.
pub trait ReverseProblem: DiffusionSpec {
    /// Applies the terminal correction in place and returns the number of
    /// score evaluations it used (0 when denoising is disabled).
    fn denoise(&self, x: &mut [f64], t: f64) -> u64;
}

impl<P: ReverseProblem + ?Sized> ReverseProblem for &P {
    fn denoise(&self, x: &mut [f64], t: f64) -> u64 {
        (**self).denoise(x, t)
    }
}

/// Closure-backed [`DiffusionSpec`], handy for test problems.
pub struct FnSpec<F, G> {
    pub dim: usize,
    pub direction: Direction,
    pub noise_type: NoiseType,
    pub state_dependent: bool,
    pub drift: F,
    pub diffusion: G,
}

impl<F, G> FnSpec<F, G>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
    G: Fn(&[f64], f64) -> f64 + Sync,
{
    pub fn new(dim: usize, direction: Direction, drift: F, diffusion: G) -> Self {
        Self {
            dim,
            direction,
            noise_type: NoiseType::Ito,
            state_dependent: false,
            drift,
            diffusion,
        }
    }

    pub fn state_dependent(mut self, yes: bool) -> Self {
        self.state_dependent = yes;
        self
    }

    pub fn with_noise_type(mut self, noise_type: NoiseType) -> Self {
        self.noise_type = noise_type;
        self
    }
}

impl<F, G> DiffusionSpec for FnSpec<F, G>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
    G: Fn(&[f64], f64) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn direction(&self) -> Direction {
        self.direction
    }
    fn noise_type(&self) -> NoiseType {
        self.noise_type
    }
    fn diffusion_depends_on_state(&self) -> bool {
        self.state_dependent
    }
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.drift)(x, t, out)
    }
    fn diffusion(&self, x: &[f64], t: f64) -> f64 {
        (self.diffusion)(x, t)
    }
}

impl<F, G> ReverseProblem for FnSpec<F, G>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
    G: Fn(&[f64], f64) -> f64 + Sync,
{
    fn denoise(&self, _x: &mut [f64], _t: f64) -> u64 {
        0
    }
}

/// Norm used to reduce the scaled local error to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    /// Root-mean-square of the scaled residuals.
    L2Scaled,
    /// Largest absolute scaled residual.
    LInf,
}

/// Which proposals enter the relative part of the mixed tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceVariant {
    /// `max(eps_abs, eps_rel |x'|)`.
    CurrentOnly,
    /// `max(eps_abs, eps_rel max(|x'|, |x'_prev|))`.
    CurrentAndPrevious,
}

/// Higher-order partner of the Euler-Maruyama proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// Stochastic Improved Euler sharing the Brownian increment.
    StochasticImprovedEuler,
    /// Deterministic Improved Euler on the drift only, noise from the EM step
    /// (after Lamba's adaptive EM). Experimental.
    Lamba,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepControl {
    Adaptive,
    /// Constant step, every attempt accepted; the last step is clamped to the
    /// remaining time.
    Fixed(f64),
}

/// Tunables of the adaptive solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub r: f64,
    pub theta: f64,
    pub h_init: f64,
    pub norm_order: NormOrder,
    pub tolerance_variant: ToleranceVariant,
    pub extrapolate: bool,
    pub t_end: f64,
    pub integrator: Integrator,
    /// Keep the Gaussian draw of a rejected attempt for the retry.
    pub retain_noise_on_reject: bool,
    pub max_attempts: u64,
    pub step_control: StepControl,
    pub record_steps: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_abs: 0.0078125,
            eps_rel: 0.01,
            r: 0.9,
            theta: 0.9,
            h_init: 0.01,
            norm_order: NormOrder::L2Scaled,
            tolerance_variant: ToleranceVariant::CurrentAndPrevious,
            extrapolate: true,
            t_end: 1e-3,
            integrator: Integrator::StochasticImprovedEuler,
            retain_noise_on_reject: false,
            max_attempts: 1_000_000,
            step_control: StepControl::Adaptive,
            record_steps: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0) {
            return Err(invalid("eps_abs", "must be > 0"));
        }
        if !(self.eps_rel >= 0.0) {
            return Err(invalid("eps_rel", "must be >= 0"));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(invalid("theta", "must lie in (0, 1]"));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid("r", "must be > 0"));
        }
        if !(self.h_init > 0.0 && self.h_init <= 1.0) {
            return Err(invalid("h_init", "must lie in (0, 1]"));
        }
        if !(self.t_end > 0.0 && self.t_end < 1.0) {
            return Err(invalid("t_end", "must lie in (0, 1)"));
        }
        if self.max_attempts == 0 {
            return Err(invalid("max_attempts", "must be >= 1"));
        }
        if let StepControl::Fixed(h) = self.step_control {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("step_control", "fixed step must be > 0"));
            }
        }
        Ok(())
    }
}

/// Absolute tolerance of one quantisation level of an 8-bit image whose
/// floating-point range is `[y_min, y_max]`.
pub fn image_abs_tolerance(y_min: f64, y_max: f64) -> Result<f64> {
    if !(y_max > y_min) || !y_min.is_finite() || !y_max.is_finite() {
        return Err(invalid("y_max", "range must satisfy y_max > y_min"));
    }
    Ok((y_max - y_min) / 256.0)
}

/// Per-sample solver state, stored sample-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    dim: usize,
    pub x: Vec<f64>,
    /// Euler-Maruyama proposal of the last accepted step.
    pub x_prev_proposal: Vec<f64>,
    pub t: Vec<f64>,
    pub h: Vec<f64>,
    pub active: Vec<bool>,
    /// Gaussian draw kept across a rejection when noise retention is on.
    pub noise_cache: Vec<f64>,
    pub noise_valid: Vec<bool>,
    pub stream_ids: Vec<u64>,
}

impl BatchState {
    /// Batch with clocks at `t_start`, step sizes `h_init` and stream ids
    /// `0..n`.
    pub fn new(x: Vec<f64>, dim: usize, t_start: f64, h_init: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be >= 1"));
        }
        if !x.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len() % dim,
            });
        }
        let n = x.len() / dim;
        Ok(Self {
            dim,
            x_prev_proposal: x.clone(),
            noise_cache: alloc::vec![0.0; x.len()],
            x,
            t: alloc::vec![t_start; n],
            h: alloc::vec![h_init; n],
            active: alloc::vec![true; n],
            noise_valid: alloc::vec![false; n],
            stream_ids: (0..n as u64).collect(),
        })
    }

    pub fn with_stream_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: ids.len(),
            });
        }
        self.stream_ids = ids;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Disjoint mutable views, one per sample, in index order.
    pub fn views_mut(&mut self) -> Vec<SampleMut<'_>> {
        let d = self.dim;
        self.x
            .chunks_mut(d)
            .zip(self.x_prev_proposal.chunks_mut(d))
            .zip(self.noise_cache.chunks_mut(d))
            .zip(self.t.iter_mut())
            .zip(self.h.iter_mut())
            .zip(self.active.iter_mut())
            .zip(self.noise_valid.iter_mut())
            .zip(self.stream_ids.iter())
            .enumerate()
            .map(
                |(index, (((((((x, x_prev), noise), t), h), active), noise_valid), stream_id))| {
                    SampleMut {
                        index,
                        stream_id: *stream_id,
                        x,
                        x_prev,
                        noise,
                        noise_valid,
                        t,
                        h,
                        active,
                    }
                },
            )
            .collect()
    }
}

/// Mutable view of one sample of a [`BatchState`].
#[derive(Debug)]
pub struct SampleMut<'a> {
    pub index: usize,
    pub stream_id: u64,
    pub x: &'a mut [f64],
    pub x_prev: &'a mut [f64],
    pub noise: &'a mut [f64],
    pub noise_valid: &'a mut bool,
    pub t: &'a mut f64,
    pub h: &'a mut f64,
    pub active: &'a mut bool,
}

/// One attempted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub sample_id: u64,
    /// Clock at the start of the attempt.
    pub t: f64,
    pub h: f64,
    pub error: f64,
    pub accepted: bool,
    /// Index of the Gaussian draw used by the attempt within its stream.
    pub noise_id: u64,
}

/// What solving one sample produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleOutcome {
    pub nfe: u64,
    pub denoise_nfe: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub steps: Vec<StepRecord>,
}

/// Summary of a batch solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dim: usize,
    /// Terminal states (after denoising), sample-major.
    pub samples: Vec<f64>,
    /// Score evaluations of the integration loop, summed over samples.
    pub nfe: u64,
    /// Score evaluations spent on terminal denoising, summed over samples.
    pub denoise_nfe: u64,
    pub per_sample_nfe: Vec<u64>,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub steps: Vec<StepRecord>,
    pub wall_time: Option<Duration>,
}

impl RunReport {
    /// Merges per-sample outcomes given in sample order.
    pub fn assemble(batch: &BatchState, outcomes: Vec<SampleOutcome>) -> Self {
        let mut report = RunReport {
            dim: batch.dim(),
            samples: batch.x.clone(),
            nfe: 0,
            denoise_nfe: 0,
            per_sample_nfe: Vec::with_capacity(outcomes.len()),
            steps_accepted: 0,
            steps_rejected: 0,
            steps: Vec::new(),
            wall_time: None,
        };
        for o in outcomes {
            report.nfe += o.nfe;
            report.denoise_nfe += o.denoise_nfe;
            report.per_sample_nfe.push(o.nfe);
            report.steps_accepted += o.accepted;
            report.steps_rejected += o.rejected;
            report.steps.extend(o.steps);
        }
        report
    }

    pub fn n_samples(&self) -> usize {
        self.per_sample_nfe.len()
    }

    /// Mean loop NFE per sample, excluding denoising.
    pub fn mean_nfe(&self) -> f64 {
        if self.per_sample_nfe.is_empty() {
            0.0
        } else {
            self.nfe as f64 / self.per_sample_nfe.len() as f64
        }
    }

    pub fn attempts(&self) -> u64 {
        self.steps_accepted + self.steps_rejected
    }
}

/// A solver that advances one sample independently of all others.
pub trait SampleSolver: Sync {
    fn dim(&self) -> usize;

    fn solve_sample(&self, sample: SampleMut<'_>) -> Result<SampleOutcome>;
}

/// Solves every active sample in order on the current thread.
///
/// On failure the error of the lowest-indexed failing sample is returned.
pub fn run_sequential<S: SampleSolver + ?Sized>(
    batch: &mut BatchState,
    solver: &S,
) -> Result<RunReport> {
    if batch.dim() != solver.dim() {
        return Err(Error::DimensionMismatch {
            expected: solver.dim(),
            got: batch.dim(),
        });
    }
    let mut outcomes = Vec::with_capacity(batch.len());
    for view in batch.views_mut() {
        outcomes.push(solver.solve_sample(view)?);
    }
    Ok(RunReport::assemble(batch, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_tolerances() {
        assert_eq!(image_abs_tolerance(-1.0, 1.0).unwrap(), 0.0078125);
        assert_eq!(image_abs_tolerance(0.0, 1.0).unwrap(), 0.00390625);
        assert_eq!(image_abs_tolerance(0.0, 256.0).unwrap(), 1.0);
        assert!(image_abs_tolerance(1.0, 1.0).is_err());
        assert!(image_abs_tolerance(2.0, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = [
            SolverConfig { eps_abs: 0.0, ..Default::default() },
            SolverConfig { eps_rel: -1.0, ..Default::default() },
            SolverConfig { theta: 0.0, ..Default::default() },
            SolverConfig { theta: 1.5, ..Default::default() },
            SolverConfig { r: 0.0, ..Default::default() },
            SolverConfig { h_init: 2.0, ..Default::default() },
            SolverConfig { t_end: 1.0, ..Default::default() },
            SolverConfig { t_end: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn batch_views_are_sample_major() {
        let mut b = BatchState::new((0..6).map(f64::from).collect(), 2, 1.0, 0.01).unwrap();
        assert_eq!(b.len(), 3);
        let views = b.views_mut();
        assert_eq!(views[1].x, &[2.0, 3.0]);
        assert_eq!(views[2].stream_id, 2);
        assert!(BatchState::new(alloc::vec![0.0; 5], 2, 1.0, 0.01).is_err());
    }
}
