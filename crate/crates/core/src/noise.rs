//! Noise injection: per-sample valid noise sets, constrained sampling, the
//! two injection modes, and the iteration-decay schedule.
//!
//! The valid noise set for a sample is the intersection over all mixture
//! components of each component's pointwise density-benefit inequality
//! (quadratic in the additive case, a sign condition in the multiplicative
//! case). Both inequalities depend only on the component means.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{NemError, Result};

/// Slack absorbing floating-point roundoff at interval endpoints when the
/// condition predicates are evaluated on sampled noise.
pub const CONDITION_TOL: f64 = 1e-12;

/// Below this acceptance mass the truncated sampler switches from rejection
/// to inverse-CDF sampling.
const REJECTION_MIN_MASS: f64 = 1e-3;
const REJECTION_MAX_ATTEMPTS: usize = 50_000;

/// How a noise realization combines with a data sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    Additive,
    Multiplicative,
}

impl InjectionMode {
    /// The noise value that leaves a sample unchanged: 0 for addition,
    /// 1 for multiplication.
    pub fn identity(self) -> f64 {
        match self {
            InjectionMode::Additive => 0.0,
            InjectionMode::Multiplicative => 1.0,
        }
    }
}

/// Whether draws are constrained to the valid noise set, unconstrained
/// ("blind"), or disabled entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    #[serde(rename = "nem")]
    NemConstrained,
    Blind,
    Off,
}

/// Noise configuration: injection mode, constraint policy, base intensity,
/// and decay exponent.
///
/// Zero intensity injects nothing under any policy, so `new` canonicalizes
/// `sigma_n == 0` to policy `Off` and policy `Off` to `sigma_n = 0`. Zero
/// noise therefore produces one canonical spec and trial records compare
/// byte-for-byte across the equivalent configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNoiseSpec")]
pub struct NoiseSpec {
    pub mode: InjectionMode,
    pub policy: NoisePolicy,
    pub sigma_n: f64,
    pub tau: f64,
}

#[derive(Deserialize)]
struct RawNoiseSpec {
    mode: InjectionMode,
    policy: NoisePolicy,
    sigma_n: f64,
    tau: f64,
}

impl TryFrom<RawNoiseSpec> for NoiseSpec {
    type Error = NemError;

    fn try_from(raw: RawNoiseSpec) -> Result<Self> {
        NoiseSpec::new(raw.mode, raw.policy, raw.sigma_n, raw.tau)
    }
}

impl NoiseSpec {
    pub fn new(mode: InjectionMode, policy: NoisePolicy, sigma_n: f64, tau: f64) -> Result<Self> {
        if !sigma_n.is_finite() || sigma_n < 0.0 {
            return Err(NemError::InvalidConfig(format!(
                "sigma_n = {sigma_n} must be finite and >= 0"
            )));
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(NemError::InvalidConfig(format!(
                "tau = {tau} must be finite and >= 0"
            )));
        }
        let (policy, sigma_n) = if sigma_n == 0.0 || policy == NoisePolicy::Off {
            (NoisePolicy::Off, 0.0)
        } else {
            (policy, sigma_n)
        };
        Ok(Self {
            mode,
            policy,
            sigma_n,
            tau,
        })
    }

    /// A spec that injects nothing.
    pub fn off(mode: InjectionMode) -> Self {
        Self {
            mode,
            policy: NoisePolicy::Off,
            sigma_n: 0.0,
            tau: 0.0,
        }
    }
}

/// Closed interval of noise values valid for one sample. The injection mode's
/// identity element always lies inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInterval {
    pub lo: f64,
    pub hi: f64,
}

impl NoiseInterval {
    fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }
}

/// Additive noise-benefit condition `n^2 <= 2 n (mu_j - y)` as a conjunction
/// over all component means.
pub fn additive_condition(n: f64, y: f64, means: &[f64]) -> bool {
    assert!(!means.is_empty(), "means must be nonempty");
    means
        .iter()
        .all(|&mu| n * n <= 2.0 * n * (mu - y) + CONDITION_TOL)
}

/// Multiplicative noise-benefit condition
/// `y (n - 1) [y (n + 1) - 2 mu_j] <= 0` as a conjunction over all means.
pub fn multiplicative_condition(n: f64, y: f64, means: &[f64]) -> bool {
    assert!(!means.is_empty(), "means must be nonempty");
    means
        .iter()
        .all(|&mu| y * (n - 1.0) * (y * (n + 1.0) - 2.0 * mu) <= CONDITION_TOL)
}

/// Closed-form solution of the valid noise set for one sample.
///
/// Additive: the interval between 0 and `2 (mu_j - y)` intersected over `j`,
/// which collapses to `[0, 0]` when `y` lies between the smallest and largest
/// means. Multiplicative (`y != 0`): the interval between 1 and
/// `2 mu_j / y - 1` intersected over `j`. For `y == 0` every noise value is
/// valid, so the returned interval is the six-sigma window `1 +- 6 * scale`
/// of the current sampling scale.
pub fn valid_interval(y: f64, means: &[f64], mode: InjectionMode, scale: f64) -> NoiseInterval {
    assert!(!means.is_empty(), "means must be nonempty");
    match mode {
        InjectionMode::Additive => {
            let mu_min = means.iter().cloned().fold(f64::INFINITY, f64::min);
            let mu_max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if y < mu_min {
                NoiseInterval::new(0.0, 2.0 * (mu_min - y))
            } else if y > mu_max {
                NoiseInterval::new(2.0 * (mu_max - y), 0.0)
            } else {
                NoiseInterval::new(0.0, 0.0)
            }
        }
        InjectionMode::Multiplicative => {
            if y == 0.0 {
                return NoiseInterval::new(1.0 - 6.0 * scale, 1.0 + 6.0 * scale);
            }
            let mut lo = f64::NEG_INFINITY;
            let mut hi = f64::INFINITY;
            for &mu in means {
                let b = 2.0 * mu / y - 1.0;
                lo = lo.max(b.min(1.0));
                hi = hi.min(b.max(1.0));
            }
            if lo > hi {
                // Cannot happen (1 lies in every factor interval); kept as a
                // safe fallback to the identity.
                NoiseInterval::new(1.0, 1.0)
            } else {
                NoiseInterval::new(lo, hi)
            }
        }
    }
}

/// Apply the injection mode: `y + n` or `y * n`.
#[inline]
pub fn inject(y: f64, n: f64, mode: InjectionMode) -> f64 {
    match mode {
        InjectionMode::Additive => y + n,
        InjectionMode::Multiplicative => y * n,
    }
}

/// The annealed noise standard deviation `k^(-tau) * sigma_n` at iteration
/// `k >= 1`. Equals `sigma_n` at the first iteration and decreases to zero
/// in `k` whenever `tau > 0`.
pub fn decay_scale(k: usize, sigma_n: f64, tau: f64) -> f64 {
    assert!(k >= 1, "iteration index must be >= 1");
    (k as f64).powf(-tau) * sigma_n
}

/// Draw one noise realization for sample `y` at iteration `k`.
///
/// Policy `Off` (or a zero annealed scale) returns the mode's identity
/// element; `Blind` draws from `N(identity, scale^2)` with no constraint;
/// `NemConstrained` draws from the same normal truncated to
/// [`valid_interval`], so the returned value always satisfies the mode's
/// condition predicate. `means` are the current parameter iterate's means.
pub fn sample_noise<R: Rng + ?Sized>(
    y: f64,
    means: &[f64],
    spec: &NoiseSpec,
    k: usize,
    rng: &mut R,
) -> f64 {
    let identity = spec.mode.identity();
    if spec.policy == NoisePolicy::Off {
        return identity;
    }
    let scale = decay_scale(k, spec.sigma_n, spec.tau);
    if scale == 0.0 {
        return identity;
    }
    match spec.policy {
        NoisePolicy::Off => identity,
        NoisePolicy::Blind => Normal::new(identity, scale).unwrap().sample(rng),
        NoisePolicy::NemConstrained => {
            if spec.mode == InjectionMode::Multiplicative && y == 0.0 {
                // The condition is identically satisfied at y = 0.
                return Normal::new(identity, scale).unwrap().sample(rng);
            }
            let iv = valid_interval(y, means, spec.mode, scale);
            truncated_normal(identity, scale, iv, rng)
        }
    }
}

/// Truncated-Gaussian sampler: rejection against `N(center, scale^2)` with an
/// inverse-CDF fallback once the acceptance mass of the interval drops below
/// `REJECTION_MIN_MASS`, guaranteeing termination.
fn truncated_normal<R: Rng + ?Sized>(
    center: f64,
    scale: f64,
    iv: NoiseInterval,
    rng: &mut R,
) -> f64 {
    if iv.is_point() {
        return iv.lo;
    }
    let std = StdNormal::new(0.0, 1.0).unwrap();
    let p_lo = std.cdf((iv.lo - center) / scale);
    let p_hi = std.cdf((iv.hi - center) / scale);
    let mass = p_hi - p_lo;

    if mass >= REJECTION_MIN_MASS {
        let proposal = Normal::new(center, scale).unwrap();
        for _ in 0..REJECTION_MAX_ATTEMPTS {
            let n = proposal.sample(rng);
            if iv.contains(n) {
                return n;
            }
        }
    }
    if mass <= 0.0 || !mass.is_finite() {
        // Interval width is below the CDF's resolution around the center.
        return center.clamp(iv.lo, iv.hi);
    }
    let u = p_lo + rng.gen::<f64>() * mass;
    (center + scale * std.inverse_cdf(u)).clamp(iv.lo, iv.hi)
}
