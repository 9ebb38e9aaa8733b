//! Dynamic step-size extrapolation.
//!
//! Each attempt builds an Euler-Maruyama proposal `x'` and a stochastic
//! Improved Euler partner `x~` that reuses the same Gaussian draw. Their mean
//! `x'' = (x' + x~)/2` is the higher-order proposal; `x' - x''` divided by the
//! mixed tolerance gives the scaled local error `E`. The step is accepted when
//! `E <= 1` (taking `x''` when extrapolating) and the next step size is
//! `min(h_max, theta h E^-r)` whatever the outcome. Every sample of a batch
//! has its own clock, step size and random stream.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;
use crate::sde::{
    run_sequential, BatchState, DiffusionSpec, Direction, Integrator, NoiseType, NormOrder,
    ReverseProblem, RunReport, SampleMut, SampleOutcome, SampleSolver, SolverConfig, StepControl,
    StepRecord, ToleranceVariant,
};

/// The pieces of one attempted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProposal {
    /// Euler-Maruyama proposal `x'`.
    pub x_em: Vec<f64>,
    pub x_tilde: Vec<f64>,
    /// `x'' = (x' + x~) / 2`.
    pub x_heun: Vec<f64>,
    /// Scaled error `E`.
    pub error: f64,
    pub z: Vec<f64>,
}

/// `base + dir*h*f(at, t_at) + sqrt(h) g(at, t_at) (z + shift)`.
#[allow(clippy::too_many_arguments)]
fn stage<D: DiffusionSpec + ?Sized>(
    spec: &D,
    base: &[f64],
    at: &[f64],
    t_at: f64,
    h: f64,
    z: &[f64],
    shift: f64,
    drift: &mut [f64],
    out: &mut [f64],
) {
    spec.drift(at, t_at, drift);
    let g = spec.diffusion(at, t_at);
    let a = spec.direction().sign() * h;
    let b = libm::sqrt(h) * g;
    for i in 0..out.len() {
        out[i] = base[i] + a * drift[i] + b * (z[i] + shift);
    }
}

/// Euler-Maruyama proposal `x' = x - h f(x,t) + sqrt(h) g(t) z` (reverse time;
/// `+h f` in forward time). Evaluates the drift once.
pub fn em_proposal<D: DiffusionSpec + ?Sized>(spec: &D, x: &[f64], t: f64, h: f64, z: &[f64], out: &mut [f64]) {
    let mut drift = alloc::vec![0.0; x.len()];
    stage(spec, x, x, t, h, z, 0.0, &mut drift, out);
}

/// Stochastic Improved Euler partner `x~ = x - h f(x', t-h) + sqrt(h) g(t-h) z`
/// and the extrapolated proposal `x'' = (x' + x~)/2`. `z` must be the draw
/// used for `x_em`.
#[allow(clippy::too_many_arguments)]
pub fn heun_proposal<D: DiffusionSpec + ?Sized>(
    spec: &D,
    x: &[f64],
    x_em: &[f64],
    t: f64,
    h: f64,
    z: &[f64],
    x_tilde: &mut [f64],
    x_heun: &mut [f64],
) {
    let mut drift = alloc::vec![0.0; x.len()];
    let t_next = t + spec.direction().sign() * h;
    stage(spec, x, x_em, t_next, h, z, 0.0, &mut drift, x_tilde);
    for i in 0..x_heun.len() {
        x_heun[i] = 0.5 * (x_em[i] + x_tilde[i]);
    }
}

/// Element-wise `max(eps_abs, eps_rel max(|x'|, |x'_prev|))`; the
/// [`ToleranceVariant::CurrentOnly`] form ignores `x_prev`.
pub fn mixed_tolerance(
    x_em: &[f64],
    x_prev: &[f64],
    eps_abs: f64,
    eps_rel: f64,
    variant: ToleranceVariant,
    out: &mut [f64],
) {
    match variant {
        ToleranceVariant::CurrentOnly => {
            for (o, a) in out.iter_mut().zip(x_em) {
                *o = eps_abs.max(eps_rel * a.abs());
            }
        }
        ToleranceVariant::CurrentAndPrevious => {
            for ((o, a), b) in out.iter_mut().zip(x_em).zip(x_prev) {
                *o = eps_abs.max(eps_rel * a.abs().max(b.abs()));
            }
        }
    }
}

/// `||(x' - x'') / delta||` as an RMS over the components (L2Scaled) or a max
/// (LInf).
pub fn scaled_error(x_em: &[f64], x_heun: &[f64], delta: &[f64], norm: NormOrder) -> f64 {
    let n = x_em.len();
    if n == 0 {
        return 0.0;
    }
    let residuals = x_em.iter().zip(x_heun).zip(delta).map(|((a, b), d)| (a - b) / d);
    match norm {
        NormOrder::L2Scaled => libm::sqrt(residuals.map(|r| r * r).sum::<f64>() / n as f64),
        NormOrder::LInf => residuals.fold(0.0, |m, r| m.max(r.abs())),
    }
}

/// `min(h_max, theta h E^-r)`; an exact match (`E = 0`) jumps to `h_max`.
pub fn step_update(h: f64, error: f64, h_max: f64, theta: f64, r: f64) -> f64 {
    if error <= 0.0 {
        return h_max;
    }
    h_max.min(theta * h * libm::pow(error, -r))
}

/// Reusable buffers for attempted steps of one sample.
#[derive(Debug, Clone)]
pub struct Stepper {
    z: Vec<f64>,
    drift0: Vec<f64>,
    drift1: Vec<f64>,
    predictor: Vec<f64>,
    x_em: Vec<f64>,
    x_tilde: Vec<f64>,
    x_heun: Vec<f64>,
    delta: Vec<f64>,
}

impl Stepper {
    pub fn new(dim: usize) -> Self {
        let v = alloc::vec![0.0; dim];
        Self {
            z: v.clone(),
            drift0: v.clone(),
            drift1: v.clone(),
            predictor: v.clone(),
            x_em: v.clone(),
            x_tilde: v.clone(),
            x_heun: v.clone(),
            delta: v,
        }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    pub fn x_em(&self) -> &[f64] {
        &self.x_em
    }

    pub fn x_tilde(&self) -> &[f64] {
        &self.x_tilde
    }

    pub fn x_heun(&self) -> &[f64] {
        &self.x_heun
    }

    /// The proposal kept on acceptance.
    pub fn accepted_state(&self, extrapolate: bool) -> &[f64] {
        if extrapolate {
            &self.x_heun
        } else {
            &self.x_em
        }
    }

    /// Builds both proposals for a step from `t` to `t_next` (`|t_next - t| =
    /// h`) with the stored draw `z` and Rademacher shift `s` (0 for additive
    /// or Stratonovich noise), and returns the scaled error. Evaluates the
    /// drift twice.
    #[allow(clippy::too_many_arguments)]
    pub fn attempt<D: DiffusionSpec + ?Sized>(
        &mut self,
        spec: &D,
        cfg: &SolverConfig,
        x: &[f64],
        x_prev: &[f64],
        t: f64,
        t_next: f64,
        h: f64,
        s: f64,
    ) -> f64 {
        stage(spec, x, x, t, h, &self.z, -s, &mut self.drift0, &mut self.x_em);
        match cfg.integrator {
            Integrator::StochasticImprovedEuler => {
                stage(spec, x, &self.x_em, t_next, h, &self.z, s, &mut self.drift1, &mut self.x_tilde);
            }
            Integrator::Lamba => {
                // Deterministic Improved Euler on the drift; noise as in x'.
                let a = spec.direction().sign() * h;
                for i in 0..x.len() {
                    self.predictor[i] = x[i] + a * self.drift0[i];
                }
                spec.drift(&self.predictor, t_next, &mut self.drift1);
                for i in 0..x.len() {
                    self.x_tilde[i] = self.x_em[i] + a * (self.drift1[i] - self.drift0[i]);
                }
            }
        }
        for i in 0..x.len() {
            self.x_heun[i] = 0.5 * (self.x_em[i] + self.x_tilde[i]);
        }
        mixed_tolerance(&self.x_em, x_prev, cfg.eps_abs, cfg.eps_rel, cfg.tolerance_variant, &mut self.delta);
        scaled_error(&self.x_em, &self.x_heun, &self.delta, cfg.norm_order)
    }
}

/// One attempted step from `t` with step `h`, drawing nothing: the caller
/// supplies `z`.
#[allow(clippy::too_many_arguments)]
pub fn propose_step<D: DiffusionSpec + ?Sized>(
    spec: &D,
    cfg: &SolverConfig,
    x: &[f64],
    x_prev: &[f64],
    t: f64,
    h: f64,
    z: &[f64],
) -> StepProposal {
    let mut st = Stepper::new(x.len());
    st.z.copy_from_slice(z);
    let t_next = t + spec.direction().sign() * h;
    let error = st.attempt(spec, cfg, x, x_prev, t, t_next, h, 0.0);
    StepProposal {
        x_em: st.x_em,
        x_tilde: st.x_tilde,
        x_heun: st.x_heun,
        error,
        z: st.z,
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Reverse-time adaptive solver for one problem, configuration and seed.
pub struct AdaptiveSolver<'a, P: ?Sized> {
    spec: &'a P,
    cfg: SolverConfig,
    seed: u64,
}

impl<'a, P: ReverseProblem + ?Sized> AdaptiveSolver<'a, P> {
    pub fn new(spec: &'a P, cfg: SolverConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if spec.direction() != Direction::ReverseTime {
            return Err(invalid("direction", "reverse solver needs a reverse-time spec"));
        }
        Ok(Self { spec, cfg, seed })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }
}

impl<P: ReverseProblem + ?Sized> SampleSolver for AdaptiveSolver<'_, P> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn solve_sample(&self, s: SampleMut<'_>) -> Result<SampleOutcome> {
        let mut out = SampleOutcome::default();
        if !*s.active {
            return Ok(out);
        }
        let cfg = &self.cfg;
        let spec = self.spec;
        let t_end = cfg.t_end;
        let evals = 2 * spec.evals_per_drift();
        let mut rng = RngStream::new(self.seed, s.stream_id);
        let mut st = Stepper::new(s.x.len());
        let mut t = *s.t;
        let mut h = *s.h;
        let mut z_valid = *s.noise_valid;
        if z_valid {
            st.z.copy_from_slice(s.noise);
        }
        // Index of the draw currently held in `st.z`.
        let mut z_index = 0u64;
        let mut draws = 0u64;
        let mut attempts = 0u64;

        while t > t_end {
            if attempts >= cfg.max_attempts {
                return Err(Error::StepSizeCollapse { sample: s.stream_id, t, h, attempts });
            }
            let remaining = t - t_end;
            let (h_step, t_next) = if h >= remaining { (remaining, t_end) } else { (h, t - h) };
            if !(h_step > 0.0) || !(t_next < t) {
                return Err(Error::StepSizeCollapse { sample: s.stream_id, t, h, attempts });
            }
            if !z_valid {
                rng.fill_normal(&mut st.z);
                z_index = draws;
                draws += 1;
                z_valid = true;
            }
            let e = st.attempt(spec, cfg, s.x, s.x_prev, t, t_next, h_step, 0.0);
            attempts += 1;
            out.nfe += evals;
            if !all_finite(&st.x_em) || !all_finite(&st.x_heun) || e.is_nan() {
                return Err(Error::NonFinite { sample: s.stream_id, t });
            }
            let accepted = match cfg.step_control {
                StepControl::Adaptive => e <= 1.0,
                StepControl::Fixed(_) => true,
            };
            if cfg.record_steps {
                out.steps.push(StepRecord {
                    sample_id: s.stream_id,
                    t,
                    h: h_step,
                    error: e,
                    accepted,
                    noise_id: z_index,
                });
            }
            if accepted {
                s.x.copy_from_slice(st.accepted_state(cfg.extrapolate));
                s.x_prev.copy_from_slice(&st.x_em);
                t = t_next;
                z_valid = false;
                out.accepted += 1;
            } else {
                out.rejected += 1;
                if !cfg.retain_noise_on_reject {
                    z_valid = false;
                }
            }
            h = match cfg.step_control {
                StepControl::Adaptive => step_update(h_step, e, t - t_end, cfg.theta, cfg.r),
                StepControl::Fixed(hf) => hf,
            };
        }

        *s.t = t;
        *s.h = h;
        *s.noise_valid = false;
        out.denoise_nfe = spec.denoise(s.x, t_end);
        if !all_finite(s.x) {
            return Err(Error::NonFinite { sample: s.stream_id, t });
        }
        *s.active = false;
        Ok(out)
    }
}

/// Solves a reverse diffusion from each sample's clock down to `cfg.t_end`,
/// then denoises. Sample `i` draws its noise from stream `(seed,
/// batch.stream_ids[i])`.
pub fn solve_reverse<P: ReverseProblem + ?Sized>(
    batch: &mut BatchState,
    spec: &P,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<RunReport> {
    let solver = AdaptiveSolver::new(spec, cfg.clone(), seed)?;
    run_sequential(batch, &solver)
}

/// Accepted states of a forward-time solve, including the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    /// One row per entry of `times`.
    pub states: Vec<f64>,
    pub outcome: SampleOutcome,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        &self.states[self.states.len() - self.dim..]
    }
}

/// General forward-time solver for `dx = f(x,t) dt + g(x,t) dw` on
/// `[t_begin, t_end]`.
///
/// Itô problems with state-dependent `g` use a fresh Rademacher `s` each
/// attempt, shifting the EM noise to `z - s` and the partner noise to `z + s`.
/// The Gaussian draw is kept across rejections and renewed only after an
/// accepted step. `cfg.t_end` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn solve_forward_general<D: DiffusionSpec + ?Sized>(
    x0: &[f64],
    t_begin: f64,
    t_end: f64,
    spec: &D,
    cfg: &SolverConfig,
    seed: u64,
    stream_id: u64,
) -> Result<Trajectory> {
    SolverConfig { t_end: 0.5, ..cfg.clone() }.validate()?;
    if spec.direction() != Direction::ForwardTime {
        return Err(invalid("direction", "forward solver needs a forward-time spec"));
    }
    if !(t_begin < t_end) || !t_begin.is_finite() || !t_end.is_finite() {
        return Err(invalid("t_end", "must satisfy t_begin < t_end"));
    }
    if x0.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: x0.len() });
    }
    let d = x0.len();
    let use_shift = spec.noise_type() == NoiseType::Ito && spec.diffusion_depends_on_state();
    let evals = 2 * spec.evals_per_drift();
    let mut rng = RngStream::new(seed, stream_id);
    let mut st = Stepper::new(d);
    let mut x = x0.to_vec();
    let mut x_prev = x0.to_vec();
    let mut t = t_begin;
    let mut h = cfg.h_init;
    let mut traj = Trajectory {
        dim: d,
        times: alloc::vec![t_begin],
        states: x0.to_vec(),
        outcome: SampleOutcome::default(),
    };
    let out = &mut traj.outcome;

    let mut draws = 0u64;
    rng.fill_normal(&mut st.z);
    let mut z_index = draws;
    draws += 1;
    let mut attempts = 0u64;

    while t < t_end {
        if attempts >= cfg.max_attempts {
            return Err(Error::StepSizeCollapse { sample: stream_id, t, h, attempts });
        }
        let s = if use_shift { rng.sign() } else { 0.0 };
        let remaining = t_end - t;
        let (h_step, t_next) = if h >= remaining { (remaining, t_end) } else { (h, t + h) };
        if !(h_step > 0.0) || !(t_next > t) {
            return Err(Error::StepSizeCollapse { sample: stream_id, t, h, attempts });
        }
        let e = st.attempt(spec, cfg, &x, &x_prev, t, t_next, h_step, s);
        attempts += 1;
        out.nfe += evals;
        if !all_finite(&st.x_em) || !all_finite(&st.x_heun) || e.is_nan() {
            return Err(Error::NonFinite { sample: stream_id, t });
        }
        let accepted = match cfg.step_control {
            StepControl::Adaptive => e <= 1.0,
            StepControl::Fixed(_) => true,
        };
        if cfg.record_steps {
            out.steps.push(StepRecord {
                sample_id: stream_id,
                t,
                h: h_step,
                error: e,
                accepted,
                noise_id: z_index,
            });
        }
        if accepted {
            t = t_next;
            x.copy_from_slice(st.accepted_state(cfg.extrapolate));
            x_prev.copy_from_slice(&st.x_em);
            traj.times.push(t);
            traj.states.extend_from_slice(&x);
            rng.fill_normal(&mut st.z);
            z_index = draws;
            draws += 1;
            out.accepted += 1;
        } else {
            out.rejected += 1;
        }
        h = match cfg.step_control {
            StepControl::Adaptive => step_update(h_step, e, t_end - t, cfg.theta, cfg.r),
            StepControl::Fixed(hf) => hf,
        };
    }
    Ok(traj)
}
