//! One-dimensional Gaussian mixture models: parameter vectors, density
//! evaluation, responsibilities, and the EM E-step / M-step.
//!
//! All density arithmetic runs in log space with log-sum-exp reductions so
//! that far-tail samples normalize without underflow.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NemError, Result};

/// Smallest variance the M-step will produce. Prevents singular likelihoods
/// when a component's responsibility mass collapses onto one sample.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Absolute tolerance on `sum(weights) == 1` at construction.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Absolute tolerance on responsibility row sums.
pub const RESPONSIBILITY_ROW_TOL: f64 = 1e-10;

const LN_2PI: f64 = 1.8378770664093453;

/// Full parameter vector of a K-component Gaussian mixture: convex weights,
/// component means, and component variances.
///
/// Immutable after construction; `new` enforces the invariants (weights on
/// the simplex, variances at or above [`VARIANCE_FLOOR`], equal lengths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGmmParams")]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

#[derive(Deserialize)]
struct RawGmmParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl TryFrom<RawGmmParams> for GmmParams {
    type Error = NemError;

    fn try_from(raw: RawGmmParams) -> Result<Self> {
        GmmParams::new(raw.weights, raw.means, raw.variances)
    }
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(NemError::InvalidParams("K must be >= 1".into()));
        }
        if means.len() != k || variances.len() != k {
            return Err(NemError::DimensionMismatch(format!(
                "weights/means/variances lengths {}/{}/{} differ",
                k,
                means.len(),
                variances.len()
            )));
        }
        for (j, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(NemError::InvalidParams(format!(
                    "weight[{j}] = {w} is negative or non-finite"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(NemError::InvalidParams(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        for (j, &m) in means.iter().enumerate() {
            if !m.is_finite() {
                return Err(NemError::InvalidParams(format!("mean[{j}] is non-finite")));
            }
        }
        for (j, &v) in variances.iter().enumerate() {
            if !v.is_finite() || v < VARIANCE_FLOOR {
                return Err(NemError::InvalidParams(format!(
                    "variance[{j}] = {v} is non-finite or below the floor {VARIANCE_FLOOR}"
                )));
            }
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Single-component convenience constructor.
    pub fn single(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Infinity norm of the difference over the concatenated
    /// (weights, means, variances) vector. This is the stopping-rule metric.
    pub fn max_abs_diff(&self, other: &GmmParams) -> f64 {
        assert_eq!(self.k(), other.k(), "component counts differ");
        let mut d: f64 = 0.0;
        for j in 0..self.k() {
            d = d.max((self.weights[j] - other.weights[j]).abs());
            d = d.max((self.means[j] - other.means[j]).abs());
            d = d.max((self.variances[j] - other.variances[j]).abs());
        }
        d
    }

    /// Reorder components by the given label permutation.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k() {
            return Err(NemError::DimensionMismatch(
                "permutation length differs from K".into(),
            ));
        }
        Self::new(
            perm.iter().map(|&j| self.weights[j]).collect(),
            perm.iter().map(|&j| self.means[j]).collect(),
            perm.iter().map(|&j| self.variances[j]).collect(),
        )
    }
}

/// Observed one-dimensional data vector. Non-empty, all entries finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct Dataset {
    samples: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDataset {
    samples: Vec<f64>,
}

impl TryFrom<RawDataset> for Dataset {
    type Error = NemError;

    fn try_from(raw: RawDataset) -> Result<Self> {
        Dataset::new(raw.samples)
    }
}

impl Dataset {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(NemError::EmptyDataset);
        }
        for (i, &y) in samples.iter().enumerate() {
            if !y.is_finite() {
                return Err(NemError::NonFiniteSample(i));
            }
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Posterior membership weights `p(z = j | y_i, params)`, one row per sample.
/// Rows sum to 1 within [`RESPONSIBILITY_ROW_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix {
    entries: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl ResponsibilityMatrix {
    /// Build from explicit rows, validating row-stochasticity.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(NemError::DimensionMismatch("no rows".into()));
        }
        let cols = rows[0].len();
        if cols == 0 {
            return Err(NemError::DimensionMismatch("no columns".into()));
        }
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(NemError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > RESPONSIBILITY_ROW_TOL {
                return Err(NemError::InvalidParams(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
            for &r in row {
                if !(0.0..=1.0).contains(&r) {
                    return Err(NemError::InvalidParams(format!(
                        "row {i} entry {r} outside [0, 1]"
                    )));
                }
            }
            entries.extend_from_slice(row);
        }
        let n = rows.len();
        Ok(Self {
            entries,
            rows: n,
            cols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }
}

/// Log-density of a sample under one normal component.
///
/// The only rejected input is a non-positive variance; everything else is
/// plain closed-form evaluation.
pub fn component_log_pdf(y: f64, mean: f64, variance: f64) -> Result<f64> {
    if variance.is_nan() || variance <= 0.0 {
        return Err(NemError::NonPositiveVariance(variance));
    }
    Ok(log_normal_pdf(y, mean, variance))
}

#[inline]
pub(crate) fn log_normal_pdf(y: f64, mean: f64, variance: f64) -> f64 {
    debug_assert!(variance > 0.0);
    let d = y - mean;
    -0.5 * (LN_2PI + variance.ln()) - d * d / (2.0 * variance)
}

/// Log-density of one sample under the whole mixture, via log-sum-exp.
pub fn mixture_log_pdf(y: f64, params: &GmmParams) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut terms = [0.0f64; 8];
    let k = params.k();
    let mut heap;
    let buf: &mut [f64] = if k <= terms.len() {
        &mut terms[..k]
    } else {
        heap = vec![0.0; k];
        &mut heap
    };
    for (j, slot) in buf.iter_mut().enumerate() {
        let t = params.weights[j].ln() + log_normal_pdf(y, params.means[j], params.variances[j]);
        *slot = t;
        if t > max {
            max = t;
        }
    }
    // Weights sum to 1, so at least one term is finite.
    max + buf.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// Total log-likelihood of the dataset under the mixture.
///
/// Empty data is unrepresentable (`Dataset` enforces M >= 1), so the result
/// is always finite for valid parameters.
pub fn mixture_log_likelihood(data: &Dataset, params: &GmmParams) -> f64 {
    data.samples()
        .iter()
        .map(|&y| mixture_log_pdf(y, params))
        .sum()
}

/// E-step: posterior responsibilities of each component for each sample,
/// computed in log space and normalized per row.
pub fn e_step(data: &Dataset, params: &GmmParams) -> ResponsibilityMatrix {
    let k = params.k();
    let m = data.len();
    let mut entries = Vec::with_capacity(m * k);
    let mut logs = vec![0.0f64; k];
    for &y in data.samples() {
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in logs.iter_mut().enumerate() {
            let t =
                params.weights[j].ln() + log_normal_pdf(y, params.means[j], params.variances[j]);
            *slot = t;
            if t > max {
                max = t;
            }
        }
        let mut sum = 0.0;
        let start = entries.len();
        for &l in logs.iter() {
            let e = (l - max).exp();
            entries.push(e);
            sum += e;
        }
        for e in &mut entries[start..] {
            *e /= sum;
        }
    }
    ResponsibilityMatrix {
        entries,
        rows: m,
        cols: k,
    }
}

/// Outcome of one M-step: updated parameters plus a per-component flag marking
/// components whose responsibility mass fell below threshold and therefore
/// kept their previous mean and variance.
#[derive(Debug, Clone)]
pub struct MStepOutcome {
    pub params: GmmParams,
    pub degenerate: Vec<bool>,
}

impl MStepOutcome {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

/// Total responsibility below which a component is treated as empty.
pub const DEGENERATE_MASS: f64 = 1e-12;

/// M-step: closed-form maximizer of the surrogate likelihood built from the
/// (possibly noise-injected) data and the given responsibilities.
///
/// A component with total responsibility below [`DEGENERATE_MASS`] keeps
/// `previous`'s mean and variance (its weight still comes from the
/// responsibilities, preserving the simplex constraint) and is flagged.
pub fn m_step(
    noisy_data: &Dataset,
    resp: &ResponsibilityMatrix,
    previous: &GmmParams,
) -> Result<MStepOutcome> {
    let m = noisy_data.len();
    let k = resp.cols();
    if resp.rows() != m {
        return Err(NemError::DimensionMismatch(format!(
            "responsibilities have {} rows for {} samples",
            resp.rows(),
            m
        )));
    }
    if previous.k() != k {
        return Err(NemError::DimensionMismatch(format!(
            "previous parameters have K = {}, responsibilities have K = {}",
            previous.k(),
            k
        )));
    }

    let ys = noisy_data.samples();
    let mut mass = vec![0.0f64; k];
    let mut mean_acc = vec![0.0f64; k];
    for (i, &y) in ys.iter().enumerate() {
        let row = resp.row(i);
        for j in 0..k {
            mass[j] += row[j];
            mean_acc[j] += row[j] * y;
        }
    }

    let total: f64 = mass.iter().sum();
    let mut weights = vec![0.0f64; k];
    let mut means = vec![0.0f64; k];
    let mut variances = vec![0.0f64; k];
    let mut degenerate = vec![false; k];

    for j in 0..k {
        weights[j] = mass[j] / total;
        if mass[j] < DEGENERATE_MASS {
            degenerate[j] = true;
            means[j] = previous.means()[j];
            variances[j] = previous.variances()[j];
        } else {
            means[j] = mean_acc[j] / mass[j];
        }
    }
    for (i, &y) in ys.iter().enumerate() {
        let row = resp.row(i);
        for j in 0..k {
            if !degenerate[j] {
                let d = y - means[j];
                variances[j] += row[j] * d * d;
            }
        }
    }
    for j in 0..k {
        if !degenerate[j] {
            variances[j] = (variances[j] / mass[j]).max(VARIANCE_FLOOR);
        }
    }

    let params = GmmParams::new(weights, means, variances)?;
    Ok(MStepOutcome { params, degenerate })
}

/// Draw one (component index, value) pair from the mixture: the component by
/// its weight, the value from that component's normal.
pub fn draw_from_mixture<R: Rng + ?Sized>(params: &GmmParams, rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut comp = params.k() - 1;
    for j in 0..params.k() {
        acc += params.weights[j];
        if u < acc {
            comp = j;
            break;
        }
    }
    let y = Normal::new(params.means[comp], params.variances[comp].sqrt())
        .unwrap()
        .sample(rng);
    (comp, y)
}

/// Surrogate likelihood `Q(candidate | responsibilities)` evaluated on the
/// (possibly noise-injected) data:
/// `sum_i sum_j r_ij (ln w_j + ln f(y_i | j))`.
///
/// A zero weight carrying nonzero responsibility yields `-inf`, not an error;
/// a zero responsibility contributes exactly zero regardless of the weight.
pub fn compute_q(candidate: &GmmParams, resp: &ResponsibilityMatrix, noisy_data: &Dataset) -> f64 {
    let m = noisy_data.len();
    let k = candidate.k();
    assert_eq!(
        resp.rows(),
        m,
        "responsibility rows must match sample count"
    );
    assert_eq!(resp.cols(), k, "responsibility cols must match K");

    let ys = noisy_data.samples();
    let ln_w: Vec<f64> = candidate.weights().iter().map(|w| w.ln()).collect();
    let mut q = 0.0;
    for (i, &y) in ys.iter().enumerate() {
        let row = resp.row(i);
        for j in 0..k {
            let r = row[j];
            if r == 0.0 {
                continue;
            }
            q += r * (ln_w[j] + log_normal_pdf(y, candidate.means()[j], candidate.variances()[j]));
        }
    }
    q
}
