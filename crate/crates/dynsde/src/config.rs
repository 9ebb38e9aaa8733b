//! Experiment configuration, stored as TOML.
//!
//! Every section is optional; missing keys take the defaults below. Unknown
//! keys are rejected.

use serde::{Deserialize, Serialize};

use dynsde_core::baseline::{EmConfig, OdeConfig, PcConfig};
use dynsde_core::sde::{Integrator, NormOrder, StepControl, ToleranceVariant};
use dynsde_core::stability::{StabilityGrid, WeakOrderConfig};
use dynsde_core::{Process, SolverConfig, TweedieConvention, VeParams, VpParams};

use crate::error::CliError;

pub const METHODS: [&str; 4] = ["adaptive", "em", "pc", "ode"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adaptive,
    Em,
    Pc,
    Ode,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        match name {
            "adaptive" => Ok(Method::Adaptive),
            "em" => Ok(Method::Em),
            "pc" => Ok(Method::Pc),
            "ode" => Ok(Method::Ode),
            other => Err(CliError::Config(format!(
                "unknown method '{other}'; valid methods: {}",
                METHODS.join(", ")
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Adaptive => "adaptive",
            Method::Em => "em",
            Method::Pc => "pc",
            Method::Ode => "ode",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub dim: usize,
    /// One of [`METHODS`]; checked by [`ExperimentConfig::validate`].
    pub method: String,
    /// Denoising time; the process default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub tweedie: TweedieChoice,
    pub process: ProcessConfig,
    pub data: DataConfig,
    pub solver: AdaptiveSection,
    pub em: EmSection,
    pub pc: PcSection,
    pub ode: OdeSection,
    pub benchmark: BenchmarkSection,
    pub ablate: AblateSection,
    pub stability: StabilitySection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 1024,
            dim: 64,
            method: "adaptive".into(),
            t_end: None,
            tweedie: TweedieChoice::Kernel,
            process: ProcessConfig::default(),
            data: DataConfig::default(),
            solver: AdaptiveSection::default(),
            em: EmSection::default(),
            pc: PcSection::default(),
            ode: OdeSection::default(),
            benchmark: BenchmarkSection::default(),
            ablate: AblateSection::default(),
            stability: StabilitySection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TweedieChoice {
    Kernel,
    Literal,
    LiteralSigmaMin,
    None,
}

impl TweedieChoice {
    pub fn convention(self) -> Option<TweedieConvention> {
        match self {
            TweedieChoice::Kernel => Some(TweedieConvention::Kernel),
            TweedieChoice::Literal => Some(TweedieConvention::Literal),
            TweedieChoice::LiteralSigmaMin => Some(TweedieConvention::LiteralSigmaMin),
            TweedieChoice::None => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessConfig {
    Ve { sigma_min: f64, sigma_max: f64 },
    Vp { beta_min: f64, beta_max: f64 },
}

impl Default for ProcessConfig {
    fn default() -> Self {
        let p = VpParams::default();
        ProcessConfig::Vp {
            beta_min: p.beta_min,
            beta_max: p.beta_max,
        }
    }
}

impl ProcessConfig {
    pub fn build(&self) -> Result<Process, CliError> {
        let p = match *self {
            ProcessConfig::Ve { sigma_min, sigma_max } => Process::Ve(VeParams::new(sigma_min, sigma_max)?),
            ProcessConfig::Vp { beta_min, beta_max } => Process::Vp(VpParams::new(beta_min, beta_max)?),
        };
        Ok(p)
    }
}

/// Data distribution. Explicit `mean`/`var` vectors override the random
/// draw (Gaussian only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        var: Option<Vec<f64>>,
        #[serde(default = "default_mean_range")]
        mean_range: [f64; 2],
        #[serde(default = "default_var_range")]
        var_range: [f64; 2],
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    Mixture {
        components: usize,
        #[serde(default = "default_mean_range")]
        mean_range: [f64; 2],
        #[serde(default = "default_mixture_var_range")]
        var_range: [f64; 2],
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
}

fn default_mean_range() -> [f64; 2] {
    [-1.0, 1.0]
}

fn default_var_range() -> [f64; 2] {
    [0.5, 2.0]
}

fn default_mixture_var_range() -> [f64; 2] {
    [0.05, 0.2]
}

fn default_data_seed() -> u64 {
    11
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Gaussian {
            mean: None,
            var: None,
            mean_range: default_mean_range(),
            var_range: default_var_range(),
            seed: default_data_seed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormChoice {
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceChoice {
    CurrentAndPrevious,
    CurrentOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorChoice {
    ImprovedEuler,
    Lamba,
}

/// `[solver]`: the adaptive solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveSection {
    pub eps_rel: f64,
    /// The process default (`2/256` VP, `1/256` VE) when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_abs: Option<f64>,
    pub r: f64,
    pub theta: f64,
    pub h_init: f64,
    pub norm: NormChoice,
    pub tolerance: ToleranceChoice,
    pub extrapolate: bool,
    pub integrator: IntegratorChoice,
    pub retain_noise_on_reject: bool,
    pub max_attempts: u64,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            eps_rel: d.eps_rel,
            eps_abs: None,
            r: d.r,
            theta: d.theta,
            h_init: d.h_init,
            norm: NormChoice::L2,
            tolerance: ToleranceChoice::CurrentAndPrevious,
            extrapolate: true,
            integrator: IntegratorChoice::ImprovedEuler,
            retain_noise_on_reject: false,
            max_attempts: d.max_attempts,
        }
    }
}

impl AdaptiveSection {
    pub fn build(&self, process: &Process, t_end: f64, record_steps: bool) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            eps_abs: self.eps_abs.unwrap_or(process.default_abs_tolerance()),
            eps_rel: self.eps_rel,
            r: self.r,
            theta: self.theta,
            h_init: self.h_init,
            norm_order: match self.norm {
                NormChoice::L2 => NormOrder::L2Scaled,
                NormChoice::Linf => NormOrder::LInf,
            },
            tolerance_variant: match self.tolerance {
                ToleranceChoice::CurrentAndPrevious => ToleranceVariant::CurrentAndPrevious,
                ToleranceChoice::CurrentOnly => ToleranceVariant::CurrentOnly,
            },
            extrapolate: self.extrapolate,
            t_end,
            integrator: match self.integrator {
                IntegratorChoice::ImprovedEuler => Integrator::StochasticImprovedEuler,
                IntegratorChoice::Lamba => Integrator::Lamba,
            },
            retain_noise_on_reject: self.retain_noise_on_reject,
            max_attempts: self.max_attempts,
            step_control: StepControl::Adaptive,
            record_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmSection {
    pub steps: usize,
}

impl Default for EmSection {
    fn default() -> Self {
        Self { steps: 1000 }
    }
}

impl EmSection {
    pub fn build(&self, t_end: f64, record_steps: bool) -> Result<EmConfig, CliError> {
        if self.steps == 0 {
            return Err(CliError::Config("em.steps must be >= 1".into()));
        }
        Ok(EmConfig {
            n_steps: self.steps,
            t_end,
            record_steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcSection {
    pub steps: usize,
    pub corrector_steps: usize,
    pub snr: f64,
}

impl Default for PcSection {
    fn default() -> Self {
        let d = PcConfig::default();
        Self {
            steps: d.n_steps,
            corrector_steps: d.corrector_steps,
            snr: d.snr,
        }
    }
}

impl PcSection {
    pub fn build(&self, t_end: f64, record_steps: bool) -> Result<PcConfig, CliError> {
        let cfg = PcConfig {
            n_steps: self.steps,
            corrector_steps: self.corrector_steps,
            snr: self.snr,
            t_end,
            record_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeSection {
    pub eps_rel: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_abs: Option<f64>,
    pub h_init: f64,
    pub norm: NormChoice,
    pub max_attempts: u64,
}

impl Default for OdeSection {
    fn default() -> Self {
        let d = OdeConfig::default();
        Self {
            eps_rel: d.eps_rel,
            eps_abs: None,
            h_init: d.h_init,
            norm: NormChoice::L2,
            max_attempts: d.max_attempts,
        }
    }
}

impl OdeSection {
    pub fn build(&self, process: &Process, t_end: f64, record_steps: bool) -> Result<OdeConfig, CliError> {
        let cfg = OdeConfig {
            eps_abs: self.eps_abs.unwrap_or(process.default_abs_tolerance()),
            eps_rel: self.eps_rel,
            h_init: self.h_init,
            t_end,
            norm_order: match self.norm {
                NormChoice::L2 => NormOrder::L2Scaled,
                NormChoice::Linf => NormOrder::LInf,
            },
            max_attempts: self.max_attempts,
            record_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub eps_rel: Vec<f64>,
    pub n_projections: usize,
    /// Also run the fixed-budget EM, PC and ODE baselines.
    pub baselines: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            eps_rel: vec![0.01, 0.02, 0.05, 0.1, 0.5],
            n_projections: 64,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub eps_rel: f64,
    pub n_projections: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            eps_rel: 0.02,
            n_projections: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub lambdas: Vec<f64>,
    pub hs: Vec<f64>,
    pub sigma: f64,
    pub y0: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Step sizes of the `h -> 0` extrapolation at `limit_lambda`.
    pub limit_lambda: f64,
    pub limit_hs: Vec<f64>,
    pub limit_paths: usize,
    pub limit_steps: usize,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let g = StabilityGrid::default();
        let w = WeakOrderConfig::default();
        Self {
            lambdas: g.lambdas,
            hs: g.hs,
            sigma: g.sigma,
            y0: g.y0,
            n_paths: g.n_paths,
            n_steps: g.n_steps,
            limit_lambda: w.lambda,
            limit_hs: w.hs.to_vec(),
            limit_paths: 1000,
            limit_steps: 2000,
        }
    }
}

impl StabilitySection {
    pub fn grid(&self) -> Result<StabilityGrid, CliError> {
        if self.lambdas.is_empty() || self.hs.is_empty() {
            return Err(CliError::Config("stability.lambdas and stability.hs must be non-empty".into()));
        }
        if self.n_paths < 2 || self.n_steps == 0 {
            return Err(CliError::Config("stability.n_paths must be >= 2 and n_steps >= 1".into()));
        }
        if self.limit_hs.len() < 2 || self.limit_paths < 2 || self.limit_steps == 0 {
            return Err(CliError::Config("stability.limit_hs needs >= 2 entries, limit_paths >= 2, limit_steps >= 1".into()));
        }
        Ok(StabilityGrid {
            lambdas: self.lambdas.clone(),
            hs: self.hs.clone(),
            sigma: self.sigma,
            y0: self.y0,
            n_paths: self.n_paths,
            n_steps: self.n_steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    /// Write the per-step NDJSON trace (`solve` only).
    pub trace: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            trace: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn method(&self) -> Result<Method, CliError> {
        Method::parse(&self.method)
    }

    pub fn t_end(&self, process: &Process) -> f64 {
        self.t_end.unwrap_or(process.default_t_end())
    }

    /// Checks every parameter that can be checked before computing.
    pub fn validate(&self) -> Result<(), CliError> {
        self.method()?;
        if self.n_samples == 0 {
            return Err(CliError::Config("n_samples must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(CliError::Config("dim must be >= 1".into()));
        }
        let process = self.process.build()?;
        let t_end = self.t_end(&process);
        self.solver.build(&process, t_end, false)?;
        self.em.build(t_end, false)?;
        self.pc.build(t_end, false)?;
        self.ode.build(&process, t_end, false)?;
        crate::problem::Problem::build(self)?;
        if self.benchmark.eps_rel.iter().any(|e| !(*e >= 0.0)) {
            return Err(CliError::Config("benchmark.eps_rel entries must be >= 0".into()));
        }
        if self.benchmark.n_projections == 0 || self.ablate.n_projections == 0 {
            return Err(CliError::Config("n_projections must be >= 1".into()));
        }
        self.stability.grid()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        c.validate().unwrap();
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[solver]\neps = 0.1").is_err());
        assert!(ExperimentConfig::from_toml("[process]\nkind = \"ve\"\nsigma_min = 0.01\nsigma_max = 50\nbeta_min = 1").is_err());
    }

    #[test]
    fn bad_method_names_valid_ones() {
        let c = ExperimentConfig {
            method: "rk4".into(),
            ..Default::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        for m in METHODS {
            assert!(msg.contains(m), "{msg}");
        }
    }
}
