//! Property tests: randomized invariants for the mixture operations, the
//! valid-noise intervals (against a brute-force grid scan of the condition
//! predicates), and the average-ascent behavior of the noisy runner.

use nem_core::harness::{generate_data, split_seed};
use nem_core::mixture::{compute_q, e_step, m_step, mixture_log_pdf};
use nem_core::noise::{
    additive_condition, decay_scale, inject, multiplicative_condition, sample_noise, valid_interval,
};
use nem_core::runner::{initial_params, run_em, run_nem, InitStrategy};
use nem_core::{Dataset, GmmParams, InjectionMode, NoisePolicy, NoiseSpec, RunConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn params_strategy(max_k: usize) -> impl Strategy<Value = GmmParams> {
    (1..=max_k).prop_flat_map(|k| {
        (
            proptest::collection::vec(0.05f64..1.0, k),
            proptest::collection::vec(-8.0f64..8.0, k),
            proptest::collection::vec(0.05f64..9.0, k),
        )
            .prop_map(|(raw_w, means, vars)| {
                let sum: f64 = raw_w.iter().sum();
                let weights: Vec<f64> = raw_w.iter().map(|w| w / sum).collect();
                GmmParams::new(weights, means, vars).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn e_step_rows_sum_to_one(
        params in params_strategy(4),
        samples in proptest::collection::vec(-50.0f64..50.0, 1..40),
    ) {
        let data = Dataset::new(samples).unwrap();
        let resp = e_step(&data, &params);
        for i in 0..resp.rows() {
            let sum: f64 = resp.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-10, "row {i} sums to {sum}");
            prop_assert!(resp.row(i).iter().all(|r| (0.0..=1.0).contains(r)));
        }
    }

    #[test]
    fn m_step_weights_stay_on_simplex_and_q_ascends(
        params in params_strategy(3),
        samples in proptest::collection::vec(-10.0f64..10.0, 4..30),
    ) {
        let data = Dataset::new(samples).unwrap();
        let resp = e_step(&data, &params);
        let out = m_step(&data, &resp, &params).unwrap();
        let wsum: f64 = out.params.weights().iter().sum();
        prop_assert!((wsum - 1.0).abs() <= 1e-12);
        prop_assert!(compute_q(&out.params, &resp, &data)
            >= compute_q(&params, &resp, &data) - 1e-9);
    }

    #[test]
    fn conditions_agree_with_interval_membership(
        y in -8.0f64..8.0,
        means in proptest::collection::vec(-8.0f64..8.0, 1..5),
        n in -12.0f64..12.0,
    ) {
        // Points clearly inside/outside the closed-form interval must agree
        // with the predicate; a thin shell around the endpoints is skipped
        // because the predicate carries a 1e-12 slack.
        for mode in [InjectionMode::Additive, InjectionMode::Multiplicative] {
            if mode == InjectionMode::Multiplicative && y.abs() < 0.05 {
                continue;
            }
            let iv = valid_interval(y, &means, mode, 1.0);
            let holds = match mode {
                InjectionMode::Additive => additive_condition(n, y, &means),
                InjectionMode::Multiplicative => multiplicative_condition(n, y, &means),
            };
            if n > iv.lo + 1e-6 && n < iv.hi - 1e-6 {
                prop_assert!(holds, "{mode:?}: n={n} inside [{}, {}] must satisfy", iv.lo, iv.hi);
            }
            if n < iv.lo - 1e-6 || n > iv.hi + 1e-6 {
                prop_assert!(!holds, "{mode:?}: n={n} outside [{}, {}] must violate", iv.lo, iv.hi);
            }
        }
    }

    #[test]
    fn constrained_draws_always_satisfy_condition(
        y in -8.0f64..8.0,
        means in proptest::collection::vec(-8.0f64..8.0, 1..4),
        sigma in 0.01f64..4.0,
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mode in [InjectionMode::Additive, InjectionMode::Multiplicative] {
            let spec = NoiseSpec::new(mode, NoisePolicy::NemConstrained, sigma, 2.0).unwrap();
            let n = sample_noise(y, &means, &spec, k, &mut rng);
            let ok = match mode {
                InjectionMode::Additive => additive_condition(n, y, &means),
                InjectionMode::Multiplicative => multiplicative_condition(n, y, &means),
            };
            prop_assert!(ok, "{mode:?} draw {n} violates the condition (y={y})");
        }
    }

    #[test]
    fn off_policy_injection_is_identity(
        y in -100.0f64..100.0,
        seed in any::<u64>(),
        k in 1usize..10,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mode in [InjectionMode::Additive, InjectionMode::Multiplicative] {
            let spec = NoiseSpec::off(mode);
            let n = sample_noise(y, &[0.7], &spec, k, &mut rng);
            prop_assert_eq!(inject(y, n, mode), y);
        }
    }

    #[test]
    fn mixture_log_pdf_is_finite(params in params_strategy(4), y in -1e6f64..1e6) {
        prop_assert!(mixture_log_pdf(y, &params).is_finite());
    }
}

#[test]
fn decay_scale_vanishes_for_positive_tau() {
    for tau in [0.5, 1.0, 2.0] {
        let mut last = f64::INFINITY;
        for k in [1usize, 2, 5, 20, 100, 10_000] {
            let s = decay_scale(k, 1.9, tau);
            assert!(s <= last);
            last = s;
        }
        assert!(decay_scale(100_000_000, 1.9, tau) < 1e-3);
    }
}

/// Brute-force grid scan of the condition predicates at resolution 1e-4 over
/// `[identity - 10, identity + 10]` for 1,000 random (y, means) pairs,
/// checked against the closed-form interval. Points within one grid step of
/// an endpoint are skipped (the predicate has a 1e-12 slack there).
#[test]
fn valid_interval_matches_grid_scan() {
    const STEP: f64 = 1e-4;
    let failures: Vec<String> = (0..1000u64)
        .into_par_iter()
        .filter_map(|pair| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(pair, 17));
            let k = rng.gen_range(1..=4usize);
            let means: Vec<f64> = (0..k).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let mode = if pair % 2 == 0 {
                InjectionMode::Additive
            } else {
                InjectionMode::Multiplicative
            };
            let y = loop {
                let y: f64 = rng.gen_range(-6.0..6.0);
                // Multiplicative slopes scale with y^2; keep the violation
                // margin beyond one grid step above the predicate slack.
                if mode == InjectionMode::Additive || y.abs() >= 0.05 {
                    break y;
                }
            };
            let iv = valid_interval(y, &means, mode, 1.0);
            let id = mode.identity();
            let steps = (20.0 / STEP) as usize;
            for i in 0..=steps {
                let n = id - 10.0 + i as f64 * STEP;
                if (n - iv.lo).abs() <= STEP || (n - iv.hi).abs() <= STEP {
                    continue;
                }
                let inside = n > iv.lo && n < iv.hi;
                let holds = match mode {
                    InjectionMode::Additive => additive_condition(n, y, &means),
                    InjectionMode::Multiplicative => multiplicative_condition(n, y, &means),
                };
                if holds != inside {
                    return Some(format!(
                        "{mode:?} y={y} means={means:?}: n={n} holds={holds} inside [{}, {}]={inside}",
                        iv.lo, iv.hi
                    ));
                }
            }
            None
        })
        .collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

/// At the same intensity, constrained noise must beat blind noise: the
/// bootstrap CI for (constrained - blind) mean iterations lies below zero.
#[test]
fn constrained_beats_blind_at_equal_intensity() {
    use nem_core::harness::{bootstrap_diff, run_sweep, NoiseTemplate, SweepConfig};
    let model = GmmParams::new(vec![0.5, 0.5], vec![-2.0, 2.0], vec![4.0, 4.0]).unwrap();
    let sweep = |policy: NoisePolicy| {
        run_sweep(&SweepConfig {
            model: model.clone(),
            sample_size: 100,
            trials_per_point: 120,
            sigma_grid: vec![0.0, 0.8],
            template: NoiseTemplate {
                mode: InjectionMode::Additive,
                policy,
                tau: 2.0,
            },
            run: RunConfig::default(),
            base_seed: 31,
            fixed_dataset: false,
        })
        .unwrap()
    };
    let nem = sweep(NoisePolicy::NemConstrained);
    let blind = sweep(NoisePolicy::Blind);
    let result = bootstrap_diff(
        &nem.converged_iterations(1),
        &blind.converged_iterations(1),
        2_000,
        0.95,
        5,
    )
    .unwrap();
    assert!(
        result.point_estimate < 0.0 && result.ci_high < 0.0,
        "constrained noise should be clearly faster than blind: diff {} CI [{}, {}]",
        result.point_estimate,
        result.ci_low,
        result.ci_high
    );
}

/// The noiseless ascent is exact; with constrained noise the ascent holds on
/// average: over 200 paired seeds the mean final log-likelihood of the noisy
/// runs must not fall below the noiseless mean (within 1e-6).
#[test]
fn constrained_noise_preserves_average_final_likelihood() {
    let model = GmmParams::new(vec![0.5, 0.5], vec![-2.0, 2.0], vec![4.0, 4.0]).unwrap();
    let noise = NoiseSpec::new(
        InjectionMode::Additive,
        NoisePolicy::NemConstrained,
        0.5,
        2.0,
    )
    .unwrap();
    let config = RunConfig::new(4, 500, InitStrategy::FixedOverdispersed, 0).unwrap();

    let (noisy_sum, clean_sum): (f64, f64) = (0..200u64)
        .into_par_iter()
        .map(|t| {
            let data = generate_data(&model, 100, split_seed(t, 1)).unwrap();
            let init = initial_params(&data, 2, InitStrategy::FixedOverdispersed, split_seed(t, 2))
                .unwrap();
            let cfg = config.with_seed(t);
            let noisy = run_nem(&data, &init, &noise, &cfg);
            let clean = run_em(&data, &init, &cfg);
            (
                *noisy.loglik_trace.last().unwrap(),
                *clean.loglik_trace.last().unwrap(),
            )
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));

    let noisy_mean = noisy_sum / 200.0;
    let clean_mean = clean_sum / 200.0;
    assert!(
        noisy_mean >= clean_mean - 1e-6,
        "mean final log-likelihood dropped under constrained noise: {noisy_mean} < {clean_mean}"
    );
}
