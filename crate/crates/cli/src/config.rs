//! Config file schema, CLI overrides, and the reproducibility metadata that
//! heads every output file.
//!
//! Configs are TOML (or JSON with the same shape). Every section except
//! `[model]` has defaults, so a minimal file is just the mixture. The
//! fully-resolved config is embedded in each output's metadata and can be fed
//! back through `--config` to reproduce the run byte for byte.

use nem_core::diagnostics::Conditioning;
use nem_core::harness::{NoiseTemplate, SweepConfig};
use nem_core::runner::InitStrategy;
use nem_core::{GmmParams, InjectionMode, NoisePolicy, NoiseSpec, RunConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::AppError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub diag: DiagSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl ModelSection {
    pub fn to_params(&self) -> Result<GmmParams, AppError> {
        GmmParams::new(
            self.weights.clone(),
            self.means.clone(),
            self.variances.clone(),
        )
        .map_err(|e| AppError::Config(format!("model: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_mode")]
    pub mode: InjectionMode,
    #[serde(default = "default_policy")]
    pub policy: NoisePolicy,
    #[serde(default = "default_sigma")]
    pub sigma_n: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_mode() -> InjectionMode {
    InjectionMode::Additive
}
fn default_policy() -> NoisePolicy {
    NoisePolicy::NemConstrained
}
fn default_sigma() -> f64 {
    0.8
}
fn default_tau() -> f64 {
    2.0
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            mode: default_mode(),
            policy: default_policy(),
            sigma_n: default_sigma(),
            tau: default_tau(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_tol")]
    pub tol_exponent: u32,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_init")]
    pub init: InitStrategy,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_tol() -> u32 {
    1
}
fn default_max_iterations() -> usize {
    500
}
fn default_init() -> InitStrategy {
    InitStrategy::FixedOverdispersed
}
fn default_sample_size() -> usize {
    200
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            tol_exponent: default_tol(),
            max_iterations: default_max_iterations(),
            init: default_init(),
            sample_size: default_sample_size(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_trials")]
    pub trials_per_point: usize,
    /// Defaults to the mode's standard 22-point grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub fixed_dataset: bool,
}

fn default_trials() -> usize {
    500
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            trials_per_point: default_trials(),
            sigma_grid: None,
            fixed_dataset: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagSection {
    #[serde(default = "default_diag_draws")]
    pub num_draws: usize,
    #[serde(default = "default_q_draws")]
    pub q_num_draws: usize,
    #[serde(default = "default_iteration")]
    pub iteration: usize,
    #[serde(default = "default_conditioning")]
    pub conditioning: Conditioning,
    /// Parameter iterate the diagnostics evaluate; defaults to the
    /// initialization computed from a dataset drawn from the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<ModelSection>,
}

fn default_diag_draws() -> usize {
    100_000
}
fn default_q_draws() -> usize {
    1_000
}
fn default_iteration() -> usize {
    1
}
fn default_conditioning() -> Conditioning {
    Conditioning::Truth
}

impl Default for DiagSection {
    fn default() -> Self {
        Self {
            num_draws: default_diag_draws(),
            q_num_draws: default_q_draws(),
            iteration: default_iteration(),
            conditioning: default_conditioning(),
            current: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(default = "default_resamples")]
    pub num_resamples: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_resamples() -> usize {
    10_000
}
fn default_level() -> f64 {
    0.95
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            num_resamples: default_resamples(),
            level: default_level(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub a: CompareArm,
    pub b: CompareArm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArm {
    pub mode: InjectionMode,
    #[serde(default = "default_policy")]
    pub policy: NoisePolicy,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_grid: Option<Vec<f64>>,
}

/// Overrides collected from flags / environment.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub policy: Option<NoisePolicy>,
    pub mode: Option<InjectionMode>,
    pub tau: Option<f64>,
}

/// The mode's standard 22-point intensity grid (0 is always the first point).
pub fn default_grid(mode: InjectionMode) -> Vec<f64> {
    match mode {
        InjectionMode::Additive => (0..22u32).map(|i| f64::from(4 * i) / 10.0).collect(),
        InjectionMode::Multiplicative => (0..22u32).map(|i| f64::from(i) / 10.0).collect(),
    }
}

pub const PRESET_FIG1: &str = include_str!("../presets/fig1.toml");
pub const PRESET_FIG2: &str = include_str!("../presets/fig2.toml");

/// Load a config from a preset name (`fig1`, `fig2`) or a TOML/JSON path.
pub fn load(source: &str) -> Result<Config, AppError> {
    let (text, is_json) = match source {
        "fig1" => (PRESET_FIG1.to_string(), false),
        "fig2" => (PRESET_FIG2.to_string(), false),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| AppError::Config(format!("cannot read config {path}: {e}")))?;
            (text, path.ends_with(".json"))
        }
    };
    if is_json {
        serde_json::from_str(&text).map_err(|e| AppError::Config(format!("{source}: {e}")))
    } else {
        toml::from_str(&text).map_err(|e| AppError::Config(format!("{source}: {e}")))
    }
}

impl Config {
    /// Apply flag overrides and fill every derived default, yielding the
    /// canonical config that is hashed and embedded in output metadata.
    pub fn resolve(mut self, ov: &Overrides) -> Result<Config, AppError> {
        if let Some(seed) = ov.seed {
            self.run.seed = seed;
        }
        if let Some(mode) = ov.mode {
            self.noise.mode = mode;
        }
        if let Some(policy) = ov.policy {
            self.noise.policy = policy;
        }
        if let Some(sigma) = ov.sigma {
            self.noise.sigma_n = sigma;
        }
        if let Some(tau) = ov.tau {
            self.noise.tau = tau;
        }
        // Canonicalize the noise spec (zero intensity <-> policy off).
        let spec = self.noise_spec()?;
        self.noise.policy = spec.policy;
        self.noise.sigma_n = spec.sigma_n;
        if self.sweep.sigma_grid.is_none() {
            self.sweep.sigma_grid = Some(default_grid(self.noise.mode));
        }
        if let Some(compare) = &mut self.compare {
            for arm in [&mut compare.a, &mut compare.b] {
                if arm.sigma_grid.is_none() {
                    arm.sigma_grid = Some(default_grid(arm.mode));
                }
            }
        }
        // Validate everything up front; computation starts only on success.
        self.model.to_params()?;
        self.run_config()?;
        if let Some(current) = &self.diag.current {
            current.to_params()?;
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return Err(AppError::Config(format!(
                "bootstrap.level {} must lie in (0, 1)",
                self.bootstrap.level
            )));
        }
        Ok(self)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec, AppError> {
        NoiseSpec::new(
            self.noise.mode,
            self.noise.policy,
            self.noise.sigma_n,
            self.noise.tau,
        )
        .map_err(|e| AppError::Config(format!("noise: {e}")))
    }

    pub fn run_config(&self) -> Result<RunConfig, AppError> {
        RunConfig::new(
            self.run.tol_exponent,
            self.run.max_iterations,
            self.run.init,
            self.run.seed,
        )
        .map_err(|e| AppError::Config(format!("run: {e}")))
    }

    /// Sweep built from the `[noise]` and `[sweep]` sections.
    pub fn sweep_config(&self) -> Result<SweepConfig, AppError> {
        let config = SweepConfig {
            model: self.model.to_params()?,
            sample_size: self.run.sample_size,
            trials_per_point: self.sweep.trials_per_point,
            sigma_grid: self
                .sweep
                .sigma_grid
                .clone()
                .unwrap_or_else(|| default_grid(self.noise.mode)),
            template: NoiseTemplate {
                mode: self.noise.mode,
                policy: self.noise.policy,
                tau: self.noise.tau,
            },
            run: self.run_config()?,
            base_seed: self.run.seed,
            fixed_dataset: self.sweep.fixed_dataset,
        };
        config
            .validate()
            .map_err(|e| AppError::Config(format!("sweep: {e}")))?;
        Ok(config)
    }

    /// Sweep for one arm of a comparison.
    pub fn arm_sweep_config(&self, arm: &CompareArm) -> Result<SweepConfig, AppError> {
        let config = SweepConfig {
            model: self.model.to_params()?,
            sample_size: self.run.sample_size,
            trials_per_point: self.sweep.trials_per_point,
            sigma_grid: arm
                .sigma_grid
                .clone()
                .unwrap_or_else(|| default_grid(arm.mode)),
            template: NoiseTemplate {
                mode: arm.mode,
                policy: arm.policy,
                tau: arm.tau,
            },
            run: self.run_config()?,
            base_seed: self.run.seed,
            fixed_dataset: self.sweep.fixed_dataset,
        };
        config
            .validate()
            .map_err(|e| AppError::Config(format!("compare: {e}")))?;
        Ok(config)
    }
}

/// Reproducibility header: version, config hash, effective seed, and the
/// fully-resolved config itself. Every output file starts with this.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub config: Config,
}

impl Metadata {
    pub fn for_config(config: &Config) -> Self {
        let canonical = serde_json::to_vec(config).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hex::encode(digest),
            seed: config.run.seed,
            config: config.clone(),
        }
    }

    /// `#`-prefixed header lines for CSV-style outputs. The config is on one
    /// line as JSON so it can be extracted and re-run.
    pub fn comment_header(&self) -> String {
        format!(
            "# nem {}\n# config-sha256: {}\n# seed: {}\n# config-json: {}\n",
            self.version,
            self.config_sha256,
            self.seed,
            serde_json::to_string(&self.config).expect("config serializes")
        )
    }
}
