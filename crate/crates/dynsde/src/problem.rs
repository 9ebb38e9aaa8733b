//! A configured sampling problem: process, data model and its exact score.

use dynsde_core::metrics::GaussianSummary;
use dynsde_core::process::reverse_spec;
use dynsde_core::rng::{domain, RngStream};
use dynsde_core::score::{GaussianDataModel, GaussianScore, MixtureDataModel, MixtureScore};
use dynsde_core::{Process, ReverseSpec, ScoreField, TweedieConvention};

use crate::config::{DataConfig, ExperimentConfig};
use crate::error::CliError;

pub enum Target {
    Gaussian(GaussianScore),
    Mixture(MixtureScore),
}

pub struct Problem {
    pub process: Process,
    pub dim: usize,
    pub t_end: f64,
    pub tweedie: Option<TweedieConvention>,
    pub target: Target,
}

fn range(r: [f64; 2], name: &str) -> Result<(f64, f64), CliError> {
    if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
        return Err(CliError::Config(format!("data.{name} must be a finite [lo, hi] with lo <= hi")));
    }
    Ok((r[0], r[1]))
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let process = cfg.process.build()?;
        let dim = cfg.dim;
        let target = match &cfg.data {
            DataConfig::Gaussian {
                mean,
                var,
                mean_range,
                var_range,
                seed,
            } => {
                let random = GaussianDataModel::random(dim, range(*mean_range, "mean_range")?, range(*var_range, "var_range")?, *seed)?;
                let model = match (mean, var) {
                    (None, None) => random,
                    (m, v) => {
                        let mu0 = m.clone().unwrap_or_else(|| random.mu0.clone());
                        let var0 = v.clone().unwrap_or_else(|| random.var0.clone());
                        if mu0.len() != dim || var0.len() != dim {
                            return Err(CliError::Config(format!("data.mean and data.var must have length dim = {dim}")));
                        }
                        GaussianDataModel::new(mu0, var0)?
                    }
                };
                Target::Gaussian(GaussianScore::new(model, process))
            }
            DataConfig::Mixture {
                components,
                mean_range,
                var_range,
                seed,
            } => {
                if *components == 0 {
                    return Err(CliError::Config("data.components must be >= 1".into()));
                }
                let model = MixtureDataModel::random(*components, dim, range(*mean_range, "mean_range")?, range(*var_range, "var_range")?, *seed)?;
                Target::Mixture(MixtureScore::new(model, process))
            }
        };
        Ok(Self {
            process,
            dim,
            t_end: cfg.t_end(&process),
            tweedie: cfg.tweedie.convention(),
            target,
        })
    }

    pub fn score(&self) -> &(dyn ScoreField + '_) {
        match &self.target {
            Target::Gaussian(s) => s,
            Target::Mixture(s) => s,
        }
    }

    pub fn spec(&self) -> Result<ReverseSpec<'_, dyn ScoreField + '_>, CliError> {
        Ok(reverse_spec(self.process, self.score(), self.dim)?.with_tweedie(self.tweedie))
    }

    /// Mean and per-coordinate variance of the analytic `p_{t_end}`.
    pub fn reference(&self) -> GaussianSummary {
        match &self.target {
            Target::Gaussian(s) => s.model.marginal(&self.process, self.t_end),
            Target::Mixture(s) => s.model.marginal_moments(&self.process, self.t_end),
        }
    }

    /// Exact draws from `p_{t_end}`.
    pub fn reference_samples(&self, n: usize, seed: u64) -> Vec<f64> {
        match &self.target {
            Target::Gaussian(s) => s.sample_marginal(self.t_end, n, seed),
            Target::Mixture(s) => s.model.sample_marginal(&self.process, self.t_end, n, seed),
        }
    }

    /// Terminal-prior draws, row `k` from prior stream `(seed, ids[k])`.
    pub fn prior_for_streams(&self, ids: &[u64], seed: u64) -> Vec<f64> {
        let std = self.process.prior_std();
        let mut out = vec![0.0; ids.len() * self.dim];
        for (row, id) in out.chunks_mut(self.dim).zip(ids) {
            let mut rng = RngStream::in_domain(seed, domain::PRIOR, *id);
            for v in row {
                *v = std * rng.normal();
            }
        }
        out
    }
}
