//! The noise-injected EM iteration loop: noise sampling, injection, E-step on
//! the noiseless data, M-step on the injected data, and the parameter-delta
//! stopping rule. Plain EM is the zero-noise special case.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NemError, Result};
use crate::mixture::{e_step, m_step, mixture_log_likelihood, Dataset, GmmParams, VARIANCE_FLOOR};
use crate::noise::{inject, sample_noise, NoisePolicy, NoiseSpec};

/// How the starting parameters are built from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// Uniform weights, means at the data quantiles `j / (K + 1)`, and every
    /// variance set to the sample variance split evenly across components
    /// (`sample variance / K`). Deterministic.
    FixedOverdispersed,
    /// Uniform weights, means drawn (seeded) from the data without
    /// replacement, variances as in `FixedOverdispersed`.
    RandomFromData,
}

/// Stopping rule, iteration cap, initialization choice, and RNG seed for one
/// trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRunConfig")]
pub struct RunConfig {
    /// Convergence threshold is `10^(-tol_exponent)` on the infinity norm of
    /// the concatenated parameter vector.
    pub tol_exponent: u32,
    pub max_iterations: usize,
    pub init: InitStrategy,
    pub seed: u64,
}

#[derive(Deserialize)]
struct RawRunConfig {
    tol_exponent: u32,
    max_iterations: usize,
    init: InitStrategy,
    seed: u64,
}

impl TryFrom<RawRunConfig> for RunConfig {
    type Error = NemError;

    fn try_from(raw: RawRunConfig) -> Result<Self> {
        RunConfig::new(raw.tol_exponent, raw.max_iterations, raw.init, raw.seed)
    }
}

impl RunConfig {
    pub fn new(
        tol_exponent: u32,
        max_iterations: usize,
        init: InitStrategy,
        seed: u64,
    ) -> Result<Self> {
        if tol_exponent < 1 {
            return Err(NemError::InvalidConfig("tol_exponent must be >= 1".into()));
        }
        if max_iterations < 1 {
            return Err(NemError::InvalidConfig(
                "max_iterations must be >= 1".into(),
            ));
        }
        Ok(Self {
            tol_exponent,
            max_iterations,
            init,
            seed,
        })
    }

    pub fn tolerance(&self) -> f64 {
        10f64.powi(-(self.tol_exponent as i32))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for RunConfig {
    /// `tol_exponent = 1`, `max_iterations = 500`, deterministic
    /// overdispersed initialization. The coarse default threshold puts
    /// noiseless convergence on the two-Gaussian benchmark model in the
    /// 5-10 iteration range.
    fn default() -> Self {
        Self {
            tol_exponent: 1,
            max_iterations: 500,
            init: InitStrategy::FixedOverdispersed,
            seed: 0,
        }
    }
}

/// Complete trace of one EM/NEM run.
///
/// `param_trace` has `iterations + 1` entries (the initial parameters plus
/// one per completed M-step) and `loglik_trace` records the noiseless-data
/// log-likelihood at each of those parameter vectors. Serializes to one JSON
/// object per trial for the JSON-lines outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub iterations: usize,
    pub converged: bool,
    /// Set when an update produced non-finite parameters and the trial was
    /// aborted; the traces end at the last finite iterate.
    pub non_finite_abort: bool,
    /// Number of iterations in which at least one component went degenerate
    /// (kept its previous mean and variance).
    pub degenerate_events: usize,
    pub param_trace: Vec<GmmParams>,
    pub loglik_trace: Vec<f64>,
    pub final_params: GmmParams,
    pub noise_spec: NoiseSpec,
    pub seed: u64,
}

/// Run the noise-injected EM loop until the parameter delta drops below
/// `10^(-tol_exponent)` or `max_iterations` is reached.
///
/// Iteration `k` (starting at 1) draws per-sample noise at the annealed scale
/// `k^(-tau) * sigma_n` using the current iterate's means for the constraint,
/// injects it to form the perturbed data, computes responsibilities from the
/// *noiseless* data at the current parameters, and maximizes with the
/// perturbed data. With the noise policy off the loop is textbook EM.
pub fn run_nem(
    data: &Dataset,
    init_params: &GmmParams,
    noise: &NoiseSpec,
    config: &RunConfig,
) -> TrialRecord {
    let tol = config.tolerance();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params.clone();
    let mut param_trace = vec![params.clone()];
    let mut loglik_trace = vec![mixture_log_likelihood(data, &params)];
    let mut converged = false;
    let mut non_finite_abort = false;
    let mut degenerate_events = 0usize;
    let mut iterations = 0usize;

    for k in 1..=config.max_iterations {
        let step = |noisy: Vec<f64>, resp| -> Result<_> {
            let noisy = Dataset::new(noisy)?;
            m_step(&noisy, resp, &params)
        };

        let noisy: Vec<f64> = if noise.policy == NoisePolicy::Off {
            data.samples().to_vec()
        } else {
            data.samples()
                .iter()
                .map(|&y| {
                    let n = sample_noise(y, params.means(), noise, k, &mut rng);
                    inject(y, n, noise.mode)
                })
                .collect()
        };
        let resp = e_step(data, &params);

        match step(noisy, &resp) {
            Ok(out) => {
                if out.any_degenerate() {
                    degenerate_events += 1;
                }
                let delta = out.params.max_abs_diff(&params);
                params = out.params;
                param_trace.push(params.clone());
                loglik_trace.push(mixture_log_likelihood(data, &params));
                iterations = k;
                if delta < tol {
                    converged = true;
                    break;
                }
            }
            Err(_) => {
                non_finite_abort = true;
                break;
            }
        }
    }

    debug_assert_eq!(param_trace.len(), iterations + 1);
    debug_assert_eq!(loglik_trace.len(), iterations + 1);
    TrialRecord {
        iterations,
        converged,
        non_finite_abort,
        degenerate_events,
        final_params: params,
        param_trace,
        loglik_trace,
        noise_spec: *noise,
        seed: config.seed,
    }
}

/// Plain EM: [`run_nem`] with noise disabled.
pub fn run_em(data: &Dataset, init_params: &GmmParams, config: &RunConfig) -> TrialRecord {
    run_nem(
        data,
        init_params,
        &NoiseSpec::off(crate::noise::InjectionMode::Additive),
        config,
    )
}

/// Build starting parameters for a K-component fit.
pub fn initial_params(
    data: &Dataset,
    k: usize,
    strategy: InitStrategy,
    seed: u64,
) -> Result<GmmParams> {
    if k == 0 {
        return Err(NemError::InvalidConfig("K must be >= 1".into()));
    }
    let m = data.len();
    let variance = (sample_variance(data.samples()) / k as f64).max(VARIANCE_FLOOR);
    let weights = uniform_weights(k);

    let means = match strategy {
        InitStrategy::FixedOverdispersed => {
            let mut sorted = data.samples().to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (1..=k)
                .map(|j| quantile(&sorted, j as f64 / (k + 1) as f64))
                .collect()
        }
        InitStrategy::RandomFromData => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if m >= k {
                rand::seq::index::sample(&mut rng, m, k)
                    .iter()
                    .map(|i| data.samples()[i])
                    .collect()
            } else {
                (0..k)
                    .map(|_| data.samples()[rand::Rng::gen_range(&mut rng, 0..m)])
                    .collect()
            }
        }
    };

    GmmParams::new(weights, means, vec![variance; k])
}

fn uniform_weights(k: usize) -> Vec<f64> {
    let w = 1.0 / k as f64;
    let mut weights = vec![w; k];
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    weights
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = xs.len();
    if m < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / m as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64
}

/// Linear-interpolation quantile of pre-sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let pos = q * (m - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= m {
        sorted[m - 1]
    } else {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    }
}
