//! Experiment harness: synthetic data generation, noise-intensity sweeps over
//! seeded trials, and bootstrap inference on convergence-time differences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NemError, Result};
use crate::mixture::{draw_from_mixture, Dataset, GmmParams};
use crate::noise::{InjectionMode, NoisePolicy, NoiseSpec};
use crate::runner::{initial_params, run_nem, RunConfig, TrialRecord};

const DATA_SALT: u64 = 1;
const INIT_SALT: u64 = 2;
const NULL_SALT: u64 = 0x6e656d5f6e756c6c; // distinct stream for null resamples

/// Derive an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer).
pub fn split_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw `m` samples from the mixture: component by weight, value from that
/// component's normal. Deterministic under the seed.
pub fn generate_data(model: &GmmParams, m: usize, seed: u64) -> Result<Dataset> {
    if m == 0 {
        return Err(NemError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset::new(
        (0..m)
            .map(|_| draw_from_mixture(model, &mut rng).1)
            .collect(),
    )
}

/// A noise configuration with the intensity left open; sweeps fill in each
/// grid value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTemplate {
    pub mode: InjectionMode,
    pub policy: NoisePolicy,
    pub tau: f64,
}

impl NoiseTemplate {
    pub fn with_sigma(&self, sigma_n: f64) -> Result<NoiseSpec> {
        NoiseSpec::new(self.mode, self.policy, sigma_n, self.tau)
    }
}

/// Full description of one noise-intensity sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Data-generating truth.
    pub model: GmmParams,
    pub sample_size: usize,
    pub trials_per_point: usize,
    /// Noise intensities to test; must contain 0 (the noiseless baseline).
    pub sigma_grid: Vec<f64>,
    pub template: NoiseTemplate,
    pub run: RunConfig,
    pub base_seed: u64,
    /// When set, every trial reuses one dataset generated from `base_seed`
    /// instead of drawing fresh data per trial.
    #[serde(default)]
    pub fixed_dataset: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_grid.is_empty() {
            return Err(NemError::InvalidConfig("sigma_grid is empty".into()));
        }
        if !self.sigma_grid.contains(&0.0) {
            return Err(NemError::InvalidConfig(
                "sigma_grid must contain 0 (the noiseless baseline)".into(),
            ));
        }
        for &s in &self.sigma_grid {
            if !s.is_finite() || s < 0.0 {
                return Err(NemError::InvalidConfig(format!(
                    "sigma_grid entry {s} must be finite and >= 0"
                )));
            }
        }
        if self.trials_per_point < 2 {
            return Err(NemError::InvalidConfig(
                "trials_per_point must be >= 2".into(),
            ));
        }
        if self.sample_size == 0 {
            return Err(NemError::EmptyDataset);
        }
        Ok(())
    }

    fn baseline_index(&self) -> usize {
        self.sigma_grid.iter().position(|&s| s == 0.0).unwrap()
    }
}

/// Aggregates for one noise intensity. `mean_iterations` averages converged
/// trials only; a point where nothing converged carries `None` and the
/// convergence rate makes the exclusion visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_n: f64,
    pub mean_iterations: Option<f64>,
    pub std_error: Option<f64>,
    pub convergence_rate: f64,
    pub speedup_percent: Option<f64>,
}

/// Per-intensity aggregates plus the empirically optimal intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    /// Grid value with the smallest mean iteration count (ties resolved to
    /// the earliest grid entry).
    pub sigma_star: f64,
    pub sigma_star_index: usize,
}

impl SweepSummary {
    /// Render the pinned CSV: header
    /// `sigma_n,mean_iterations,std_error,convergence_rate,speedup_percent`,
    /// one row per grid point, empty cells for absent aggregates.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("sigma_n,mean_iterations,std_error,convergence_rate,speedup_percent\n");
        for r in &self.rows {
            let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.sigma_n,
                cell(r.mean_iterations),
                cell(r.std_error),
                r.convergence_rate,
                cell(r.speedup_percent)
            ));
        }
        out
    }
}

/// One trial inside a sweep: the full run record plus its grid coordinates
/// and the distance of the final estimate to the data-generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub grid_index: usize,
    pub trial_index: usize,
    pub sigma_n: f64,
    /// Infinity-norm distance of `final_params` to the generating model,
    /// minimized over component relabelings.
    pub dist_to_truth: f64,
    #[serde(flatten)]
    pub record: TrialRecord,
}

/// Everything a sweep produces: the summary table and every trial record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub summary: SweepSummary,
    pub trials: Vec<SweepTrial>,
}

impl SweepOutcome {
    /// Iteration counts of the converged trials at one grid point.
    pub fn converged_iterations(&self, grid_index: usize) -> Vec<u32> {
        self.trials
            .iter()
            .filter(|t| t.grid_index == grid_index && t.record.converged)
            .map(|t| t.record.iterations as u32)
            .collect()
    }
}

/// Run one trial end to end from a generating model: derive the data and
/// init seeds from the run seed, draw the dataset, initialize, and run the
/// noise-injected loop. Returns the record and its distance to truth.
pub fn run_generated_trial(
    model: &GmmParams,
    sample_size: usize,
    noise: &NoiseSpec,
    run: &RunConfig,
) -> Result<(TrialRecord, f64)> {
    run_trial_with_data_seed(
        model,
        sample_size,
        noise,
        run,
        split_seed(run.seed, DATA_SALT),
    )
}

fn run_trial_with_data_seed(
    model: &GmmParams,
    sample_size: usize,
    noise: &NoiseSpec,
    run: &RunConfig,
    data_seed: u64,
) -> Result<(TrialRecord, f64)> {
    let data = generate_data(model, sample_size, data_seed)?;
    let init = initial_params(&data, model.k(), run.init, split_seed(run.seed, INIT_SALT))?;
    let record = run_nem(&data, &init, noise, run);
    let dist = distance_to_truth(&record.final_params, model);
    Ok((record, dist))
}

/// Infinity-norm parameter distance minimized over component label
/// permutations (exhaustive for K <= 6, identity labeling beyond that).
pub fn distance_to_truth(estimate: &GmmParams, truth: &GmmParams) -> f64 {
    if estimate.k() != truth.k() {
        return f64::INFINITY;
    }
    let k = estimate.k();
    if k > 6 {
        return estimate.max_abs_diff(truth);
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm over all K! relabelings.
    let mut c = vec![0usize; k];
    best = best.min(estimate.permuted(&perm).unwrap().max_abs_diff(truth));
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(estimate.permuted(&perm).unwrap().max_abs_diff(truth));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

/// Run the full sweep: `trials_per_point` trials at every grid intensity,
/// trial seed `base_seed XOR trial_index XOR grid_index`, aggregation in
/// deterministic (grid, trial) order regardless of thread count.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let grid = &config.sigma_grid;
    let trials_total = grid.len() * config.trials_per_point;

    let specs: Vec<NoiseSpec> = grid
        .iter()
        .map(|&s| config.template.with_sigma(s))
        .collect::<Result<_>>()?;

    let trials: Vec<SweepTrial> = (0..trials_total)
        .into_par_iter()
        .map(|flat| {
            let g = flat / config.trials_per_point;
            let t = flat % config.trials_per_point;
            let trial_seed = config.base_seed ^ (t as u64) ^ (g as u64);
            let run = config.run.with_seed(trial_seed);
            let data_seed = if config.fixed_dataset {
                split_seed(config.base_seed, DATA_SALT)
            } else {
                split_seed(trial_seed, DATA_SALT)
            };
            let (record, dist) = run_trial_with_data_seed(
                &config.model,
                config.sample_size,
                &specs[g],
                &run,
                data_seed,
            )?;
            Ok(SweepTrial {
                grid_index: g,
                trial_index: t,
                sigma_n: grid[g],
                dist_to_truth: dist,
                record,
            })
        })
        .collect::<Result<_>>()?;

    let summary = summarize_sweep(config, &trials);
    Ok(SweepOutcome { summary, trials })
}

fn summarize_sweep(config: &SweepConfig, trials: &[SweepTrial]) -> SweepSummary {
    let baseline = config.baseline_index();
    let mut rows = Vec::with_capacity(config.sigma_grid.len());

    let stats_at = |g: usize| -> (Option<f64>, Option<f64>, f64) {
        let iters: Vec<f64> = trials
            .iter()
            .filter(|t| t.grid_index == g && t.record.converged)
            .map(|t| t.record.iterations as f64)
            .collect();
        let rate = iters.len() as f64 / config.trials_per_point as f64;
        if iters.is_empty() {
            return (None, None, rate);
        }
        let n = iters.len() as f64;
        let mean = iters.iter().sum::<f64>() / n;
        let se = if iters.len() >= 2 {
            let var = iters.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            Some((var / n).sqrt())
        } else {
            None
        };
        (Some(mean), se, rate)
    };

    let (baseline_mean, _, _) = stats_at(baseline);
    for (g, &sigma) in config.sigma_grid.iter().enumerate() {
        let (mean, se, rate) = stats_at(g);
        let speedup = if g == baseline {
            mean.map(|_| 0.0)
        } else {
            match (baseline_mean, mean) {
                (Some(b), Some(m)) if b != 0.0 => Some(100.0 * (b - m) / b),
                _ => None,
            }
        };
        rows.push(SweepRow {
            sigma_n: sigma,
            mean_iterations: mean,
            std_error: se,
            convergence_rate: rate,
            speedup_percent: speedup,
        });
    }

    let mut sigma_star_index = baseline;
    let mut best = f64::INFINITY;
    for (g, row) in rows.iter().enumerate() {
        if let Some(m) = row.mean_iterations {
            if m < best {
                best = m;
                sigma_star_index = g;
            }
        }
    }
    SweepSummary {
        sigma_star: config.sigma_grid[sigma_star_index],
        sigma_star_index,
        rows,
    }
}

/// Percentile-bootstrap inference for a difference of means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided achieved significance level for the null of zero difference
    /// (shifted-resample method).
    pub p_value: f64,
    pub num_resamples: usize,
    pub level: f64,
}

/// Percentile bootstrap for `mean(a) - mean(b)` plus a shifted-resample
/// two-sided p-value for the zero-difference null.
///
/// Resampling streams are keyed by each vector's content as well as the seed,
/// which makes the procedure symmetric: exchanging `a` and `b` negates every
/// resampled difference bit-exactly, so `p(a, b) == p(b, a)` and identical
/// inputs yield a degenerate zero bootstrap distribution.
pub fn bootstrap_diff(
    a: &[u32],
    b: &[u32],
    num_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if a.is_empty() || b.is_empty() {
        return Err(NemError::InvalidConfig(
            "bootstrap samples must be nonempty".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(NemError::InvalidConfig(format!(
            "confidence level {level} must lie in (0, 1)"
        )));
    }
    if num_resamples < 1 {
        return Err(NemError::InvalidConfig("num_resamples must be >= 1".into()));
    }

    let af: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let bf: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    let mean_a = af.iter().sum::<f64>() / af.len() as f64;
    let mean_b = bf.iter().sum::<f64>() / bf.len() as f64;
    let point = mean_a - mean_b;

    let key_a = content_key(a);
    let key_b = content_key(b);

    // Percentile CI from independent resamples of each vector.
    let mut rng_a = ChaCha8Rng::seed_from_u64(seed ^ key_a);
    let mut rng_b = ChaCha8Rng::seed_from_u64(seed ^ key_b);
    let mut diffs: Vec<f64> = (0..num_resamples)
        .map(|_| resample_mean(&af, &mut rng_a) - resample_mean(&bf, &mut rng_b))
        .collect();
    diffs.sort_by(|x, y| x.total_cmp(y));
    let alpha = 1.0 - level;
    let lo_idx = ((alpha / 2.0) * num_resamples as f64) as usize;
    let hi_idx = (((1.0 - alpha / 2.0) * num_resamples as f64) as usize).min(num_resamples - 1);
    let ci_low = diffs[lo_idx.min(num_resamples - 1)];
    let ci_high = diffs[hi_idx];

    // Null distribution: both samples shifted to the pooled mean.
    let pooled = (af.iter().sum::<f64>() + bf.iter().sum::<f64>()) / (af.len() + bf.len()) as f64;
    let a0: Vec<f64> = af.iter().map(|x| x - mean_a + pooled).collect();
    let b0: Vec<f64> = bf.iter().map(|x| x - mean_b + pooled).collect();
    let mut rng_a0 = ChaCha8Rng::seed_from_u64(seed ^ key_a ^ NULL_SALT);
    let mut rng_b0 = ChaCha8Rng::seed_from_u64(seed ^ key_b ^ NULL_SALT);
    let mut exceed = 0usize;
    for _ in 0..num_resamples {
        let d = resample_mean(&a0, &mut rng_a0) - resample_mean(&b0, &mut rng_b0);
        if d.abs() >= point.abs() {
            exceed += 1;
        }
    }
    let p_value = (exceed + 1) as f64 / (num_resamples + 1) as f64;

    Ok(BootstrapResult {
        point_estimate: point,
        ci_low,
        ci_high,
        p_value,
        num_resamples,
        level,
    })
}

fn resample_mean<R: Rng + ?Sized>(xs: &[f64], rng: &mut R) -> f64 {
    let n = xs.len();
    (0..n).map(|_| xs[rng.gen_range(0..n)]).sum::<f64>() / n as f64
}

/// FNV-1a over the element bytes; identical vectors map to identical streams.
fn content_key(xs: &[u32]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &x in xs {
        for byte in x.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Two sweeps plus bootstrap inference on the difference of mean iteration
/// counts at the two empirically optimal intensities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeComparison {
    pub bootstrap: BootstrapResult,
    pub summary_a: SweepSummary,
    pub summary_b: SweepSummary,
}

/// Run both sweeps and bootstrap the difference of mean iterations at the two
/// empirical optima. The configs must share the generating model, sample
/// size, and run settings so that only the noise treatment differs.
pub fn compare_modes(
    config_a: &SweepConfig,
    config_b: &SweepConfig,
    num_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ModeComparison> {
    if config_a.model != config_b.model {
        return Err(NemError::InvalidConfig(
            "compared sweeps must share the generating model".into(),
        ));
    }
    if config_a.sample_size != config_b.sample_size {
        return Err(NemError::InvalidConfig(
            "compared sweeps must share the sample size".into(),
        ));
    }
    let ra = config_a.run;
    let rb = config_b.run;
    if (ra.tol_exponent, ra.max_iterations, ra.init)
        != (rb.tol_exponent, rb.max_iterations, rb.init)
    {
        return Err(NemError::InvalidConfig(
            "compared sweeps must share the run configuration".into(),
        ));
    }
    let outcome_a = run_sweep(config_a)?;
    let outcome_b = run_sweep(config_b)?;
    compare_outcomes(&outcome_a, &outcome_b, num_resamples, level, seed)
}

/// The inference step of [`compare_modes`], reusing already-computed sweeps.
pub fn compare_outcomes(
    outcome_a: &SweepOutcome,
    outcome_b: &SweepOutcome,
    num_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ModeComparison> {
    let iters_a = outcome_a.converged_iterations(outcome_a.summary.sigma_star_index);
    let iters_b = outcome_b.converged_iterations(outcome_b.summary.sigma_star_index);
    let bootstrap = bootstrap_diff(&iters_a, &iters_b, num_resamples, level, seed)?;
    Ok(ModeComparison {
        bootstrap,
        summary_a: outcome_a.summary.clone(),
        summary_b: outcome_b.summary.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::InitStrategy;
    use approx::assert_abs_diff_eq;

    fn fig1_model() -> GmmParams {
        GmmParams::new(vec![0.5, 0.5], vec![-2.0, 2.0], vec![4.0, 4.0]).unwrap()
    }

    fn small_sweep_config(policy: NoisePolicy, grid: Vec<f64>) -> SweepConfig {
        SweepConfig {
            model: fig1_model(),
            sample_size: 40,
            trials_per_point: 8,
            sigma_grid: grid,
            template: NoiseTemplate {
                mode: InjectionMode::Additive,
                policy,
                tau: 2.0,
            },
            run: RunConfig::default(),
            base_seed: 99,
            fixed_dataset: false,
        }
    }

    #[test]
    fn generated_data_matches_population_moments() {
        let model = GmmParams::single(0.0, 1.0).unwrap();
        let data = generate_data(&model, 100_000, 42).unwrap();
        let m = data.len() as f64;
        let mean = data.samples().iter().sum::<f64>() / m;
        let var = data
            .samples()
            .iter()
            .map(|y| (y - mean) * (y - mean))
            .sum::<f64>()
            / m;
        assert!(mean.abs() < 0.02, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.05, "var = {var}");
    }

    #[test]
    fn generated_mixture_has_mixture_variance() {
        // Mixture variance of the two-component model: 4 + 4 = 8.
        let data = generate_data(&fig1_model(), 100_000, 7).unwrap();
        let m = data.len() as f64;
        let mean = data.samples().iter().sum::<f64>() / m;
        let var = data
            .samples()
            .iter()
            .map(|y| (y - mean) * (y - mean))
            .sum::<f64>()
            / m;
        assert!(mean.abs() < 0.05, "mean = {mean}");
        assert!((var - 8.0).abs() < 0.2, "var = {var}");
    }

    #[test]
    fn degenerate_weights_draw_from_one_component() {
        let model = GmmParams::new(vec![1.0, 0.0], vec![0.0, 50.0], vec![1.0, 1.0]).unwrap();
        let data = generate_data(&model, 5000, 3).unwrap();
        assert!(data.samples().iter().all(|&y| y < 25.0));
    }

    #[test]
    fn bootstrap_identical_vectors() {
        let a = vec![9u32, 11, 10, 8, 12];
        let r = bootstrap_diff(&a, &a, 500, 0.95, 4).unwrap();
        assert_eq!(r.point_estimate, 0.0);
        assert!(r.ci_low <= 0.0 && 0.0 <= r.ci_high);
        assert_eq!((r.ci_low, r.ci_high), (0.0, 0.0));
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn bootstrap_constant_vectors() {
        let r = bootstrap_diff(&[10, 10, 10], &[7, 7, 7], 200, 0.95, 1).unwrap();
        assert_eq!(r.point_estimate, 3.0);
        assert_eq!((r.ci_low, r.ci_high), (3.0, 3.0));
        assert!(r.ci_low <= r.point_estimate && r.point_estimate <= r.ci_high);
    }

    #[test]
    fn bootstrap_p_value_is_exchange_symmetric() {
        let a = vec![10u32, 12, 9, 14, 11, 10, 13];
        let b = vec![8u32, 9, 7, 10, 8];
        let pab = bootstrap_diff(&a, &b, 2000, 0.95, 77).unwrap();
        let pba = bootstrap_diff(&b, &a, 2000, 0.95, 77).unwrap();
        assert_eq!(pab.p_value, pba.p_value);
        assert_eq!(pab.point_estimate, -pba.point_estimate);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let a = vec![10u32, 12, 9, 14];
        let b = vec![8u32, 9, 7];
        let r1 = bootstrap_diff(&a, &b, 1000, 0.9, 5).unwrap();
        let r2 = bootstrap_diff(&a, &b, 1000, 0.9, 5).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn bootstrap_rejects_bad_inputs() {
        assert!(bootstrap_diff(&[], &[1], 10, 0.95, 0).is_err());
        assert!(bootstrap_diff(&[1], &[1], 10, 1.0, 0).is_err());
        assert!(bootstrap_diff(&[1], &[1], 0, 0.95, 0).is_err());
    }

    #[test]
    fn baseline_only_sweep_has_zero_speedup() {
        let config = small_sweep_config(NoisePolicy::NemConstrained, vec![0.0]);
        let outcome = run_sweep(&config).unwrap();
        assert_eq!(outcome.summary.rows.len(), 1);
        assert_eq!(outcome.summary.rows[0].speedup_percent, Some(0.0));
        assert_eq!(outcome.summary.sigma_star, 0.0);
    }

    #[test]
    fn sweep_is_deterministic() {
        let config = small_sweep_config(NoisePolicy::NemConstrained, vec![0.0, 0.5, 1.0]);
        let a = run_sweep(&config).unwrap();
        let b = run_sweep(&config).unwrap();
        assert_eq!(
            serde_json::to_string(&a.summary).unwrap(),
            serde_json::to_string(&b.summary).unwrap()
        );
        assert_eq!(a.trials.len(), b.trials.len());
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn zero_noise_row_matches_policy_off_row() {
        let nem = small_sweep_config(NoisePolicy::NemConstrained, vec![0.0, 0.8]);
        let off = small_sweep_config(NoisePolicy::Off, vec![0.0, 0.8]);
        let a = run_sweep(&nem).unwrap();
        let b = run_sweep(&off).unwrap();
        assert_eq!(a.summary.rows[0], b.summary.rows[0]);
        let ta: Vec<_> = a.trials.iter().filter(|t| t.grid_index == 0).collect();
        let tb: Vec<_> = b.trials.iter().filter(|t| t.grid_index == 0).collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn unconverged_trials_are_excluded_but_counted() {
        let mut config = small_sweep_config(NoisePolicy::Off, vec![0.0]);
        config.run = RunConfig::new(8, 2, InitStrategy::FixedOverdispersed, 0).unwrap();
        let outcome = run_sweep(&config).unwrap();
        let row = &outcome.summary.rows[0];
        assert!(row.convergence_rate < 1.0);
        let conv = outcome.converged_iterations(0);
        match row.mean_iterations {
            Some(m) => {
                let manual = conv.iter().map(|&x| x as f64).sum::<f64>() / conv.len() as f64;
                assert_abs_diff_eq!(m, manual, epsilon = 1e-12);
            }
            None => assert!(conv.is_empty()),
        }
    }

    #[test]
    fn fixed_dataset_reuses_one_sample() {
        let mut config = small_sweep_config(NoisePolicy::Off, vec![0.0]);
        config.fixed_dataset = true;
        let outcome = run_sweep(&config).unwrap();
        // Same data + deterministic init + no noise: every trial is identical.
        let first = &outcome.trials[0].record;
        for t in &outcome.trials {
            assert_eq!(&t.record.final_params, &first.final_params);
            assert_eq!(t.record.iterations, first.iterations);
        }
    }

    #[test]
    fn compare_identical_configs_gives_zero_difference() {
        let config = small_sweep_config(NoisePolicy::NemConstrained, vec![0.0, 0.5]);
        let cmp = compare_modes(&config, &config, 300, 0.95, 9).unwrap();
        assert_eq!(cmp.bootstrap.point_estimate, 0.0);
        assert!(cmp.bootstrap.ci_low <= 0.0 && 0.0 <= cmp.bootstrap.ci_high);
        assert!(cmp.bootstrap.p_value > 0.05);
    }

    #[test]
    fn compare_rejects_mismatched_configs() {
        let a = small_sweep_config(NoisePolicy::NemConstrained, vec![0.0, 0.5]);
        let mut b = a.clone();
        b.sample_size = 50;
        assert!(compare_modes(&a, &b, 100, 0.95, 0).is_err());
        let mut c = a.clone();
        c.model = GmmParams::single(0.0, 1.0).unwrap();
        assert!(compare_modes(&a, &c, 100, 0.95, 0).is_err());
    }

    #[test]
    fn distance_to_truth_minimizes_over_labels() {
        let truth = fig1_model();
        let est = GmmParams::new(vec![0.5, 0.5], vec![2.1, -2.2], vec![4.0, 4.0]).unwrap();
        assert_abs_diff_eq!(distance_to_truth(&est, &truth), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn sweep_rejects_invalid_configs() {
        let mut c = small_sweep_config(NoisePolicy::Off, vec![]);
        assert!(run_sweep(&c).is_err());
        c.sigma_grid = vec![0.5];
        assert!(run_sweep(&c).is_err(), "grid without 0 must be rejected");
        c.sigma_grid = vec![0.0];
        c.trials_per_point = 1;
        assert!(run_sweep(&c).is_err());
    }

    #[test]
    fn sweep_csv_has_pinned_header_and_row_count() {
        let config = small_sweep_config(NoisePolicy::NemConstrained, vec![0.0, 0.3, 0.6]);
        let outcome = run_sweep(&config).unwrap();
        let csv = outcome.summary.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "sigma_n,mean_iterations,std_error,convergence_rate,speedup_percent"
        );
        assert_eq!(lines.count(), 3);
    }
}
