mod common;

use common::*;
use pfdiff_core::datagen::{generate, Dataset, ScenarioConfig};
use pfdiff_core::diffusion::*;
use pfdiff_core::powerflow::{residual_penalties, LimitSet};
use pfdiff_core::sampler::*;
use pfdiff_core::{rng, Error, GridCase, StateVector};
use proptest::prelude::*;

fn dataset(grid: &GridCase, n: usize, screen: LimitSet) -> Dataset {
    let cfg = ScenarioConfig { n_samples: n, seed: 11, screen_limits: screen, ..Default::default() };
    generate(grid, &cfg).unwrap()
}

/// A small untrained model with non-zero output, bound to `ds`.
fn noisy_model(ds: &Dataset, seed: u64) -> DenoiserModel {
    let mut m = DenoiserModel::new(ds.norm.dim(), 8, 16, 2, Activation::Silu, seed).unwrap();
    let mut r = rng::stream(seed, 99);
    for p in &mut m.params {
        *p += 0.1 * rng::normal(&mut r);
    }
    m.norm_digest = Some(ds.norm.digest_hex());
    m
}

fn unguided(mode: SamplerMode, n: usize) -> SamplerConfig {
    SamplerConfig {
        mode,
        guidance: None,
        n_samples: n,
        batch_size: n,
        ..Default::default()
    }
}

/// Ancestral sampling written from the posterior `q(x_{t-1} | x_t, x̂₀)`.
fn ddpm_oracle(model: &DenoiserModel, sched: &NoiseSchedule, seed: u64, index: u64) -> Vec<f64> {
    let d = model.state_dim;
    let mut r = rng::stream(seed, index);
    let mut x = rng::normal_vec(&mut r, d);
    for t in (0..sched.steps()).rev() {
        let eps = model.predict_eps(&x, t).unwrap();
        let ab = sched.alpha_bar[t];
        let ab_prev = if t == 0 { 1.0 } else { sched.alpha_bar[t - 1] };
        let beta = sched.beta[t];
        let x0: Vec<f64> = x.iter().zip(&eps).map(|(x, e)| (x - (1.0 - ab).sqrt() * e) / ab.sqrt()).collect();
        let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
        let ct = sched.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let std = ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt();
        let z = rng::normal_vec(&mut r, d);
        x = (0..d).map(|k| c0 * x0[k] + ct * x[k] + std * z[k]).collect();
    }
    x
}

#[test]
fn ddpm_mode_follows_posterior_ancestral_sampling() {
    let grid = case6();
    let ds = dataset(&grid, 60, LimitSet::ALL);
    let model = noisy_model(&ds, 1);
    let sched = NoiseSchedule::standard();
    let mut cfg = unguided(SamplerMode::Ddpm, 3);
    cfg.seed = 5;
    let out = generate_normalized(&model, &sched, &grid, &ds.norm, &cfg).unwrap();
    for i in 0..3 {
        let oracle = ddpm_oracle(&model, &sched, 5, i as u64);
        let got = &out[i * 24..(i + 1) * 24];
        assert!(max_abs_diff(got, &oracle) < 1e-8, "sample {i}: {}", max_abs_diff(got, &oracle));
    }
}

#[test]
fn ddim_with_unit_eta_matches_posterior_moments() {
    let s = NoiseSchedule::standard();
    for t in 0..s.steps() {
        let prev = t.checked_sub(1);
        let ab = s.alpha_bar[t];
        let ab_prev = s.alpha_bar_or_one(prev);
        let sigma = ddim_sigma(t, prev, 1.0, &s);
        let post_var = (1.0 - ab_prev) / (1.0 - ab) * s.beta[t];
        assert!((sigma * sigma - post_var).abs() < 1e-12);
        // x_t = √ᾱ x₀ + √(1−ᾱ) ε, so the posterior mean in (x₀, ε) coordinates:
        let c0 = ab_prev.sqrt() * s.beta[t] / (1.0 - ab);
        let ct = s.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let on_x0 = c0 + ct * ab.sqrt();
        let on_eps = ct * (1.0 - ab).sqrt();
        assert!((on_x0 - ab_prev.sqrt()).abs() < 1e-10, "t={t}");
        assert!((on_eps - (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt()).abs() < 1e-10, "t={t}");
    }
}

#[test]
fn two_step_schedule_sigma() {
    let s = NoiseSchedule {
        beta_start: 0.1,
        beta_end: 0.2,
        beta: vec![0.1, 0.2],
        alpha: vec![0.9, 0.8],
        alpha_bar: vec![0.9, 0.72],
    };
    let sigma = ddim_sigma(1, Some(0), 1.0, &s);
    assert!((sigma * sigma - 0.1 / 0.28 * 0.2).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconstruct_inverts_forward_noising(seed in any::<u64>(), t in 0usize..1000) {
        let s = NoiseSchedule::standard();
        let mut r = rng::stream(seed, 0);
        let x0 = rng::normal_vec(&mut r, 10);
        let eps = rng::normal_vec(&mut r, 10);
        let x_t = q_sample(&x0, t, &eps, &s).unwrap();
        let back = reconstruct_x0(&x_t, t, &eps, &s);
        let tol = 1e-12 / s.alpha_bar[t].sqrt();
        prop_assert!(max_abs_diff(&back, &x0) < tol.max(1e-12) * 10.0);
    }

    #[test]
    fn sigma_strictly_increasing_in_eta(t in 1usize..1000, gap in 1usize..100, e1 in 0.01f64..1.0, e2 in 0.01f64..1.0) {
        prop_assume!(e1 != e2);
        let s = NoiseSchedule::standard();
        let prev = t.saturating_sub(gap);
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(ddim_sigma(t, Some(prev), lo, &s) < ddim_sigma(t, Some(prev), hi, &s));
        prop_assert_eq!(ddim_sigma(t, Some(prev), 0.0, &s), 0.0);
    }

    #[test]
    fn timestep_subset_shape(total in 2usize..3000, frac in 0.0f64..1.0) {
        let n = 2 + ((total - 2) as f64 * frac) as usize;
        let sub = timestep_subset(total, n).unwrap();
        prop_assert_eq!(sub.len(), n);
        prop_assert_eq!(sub[0], total - 1);
        prop_assert_eq!(*sub.last().unwrap(), 0);
        prop_assert!(sub.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn guidance_never_increases_penalty(seed in any::<u64>(), lambda in 1e-4f64..5.0) {
        let grid = case6();
        let ds = dataset(&grid, 40, LimitSet::ALL);
        let s = random_state(&grid, seed);
        let x = ds.norm.normalize(s.as_slice()).unwrap();
        let pen = |x: &[f64]| {
            let st = StateVector::from_vec(6, ds.norm.denormalize(x).unwrap()).unwrap();
            let r = residual_penalties(&st, &grid).unwrap();
            r.r_h + r.r_g
        };
        let out = guide(&x, &grid, &ds.norm, lambda, 0.2, LimitSet::ALL).unwrap();
        prop_assert!(pen(&out) <= pen(&x));
        prop_assert!(out.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 0.2 + 1e-12));
    }
}

#[test]
fn small_guidance_step_strictly_decreases_penalty() {
    let grid = case6();
    let ds = dataset(&grid, 40, LimitSet::ALL);
    for seed in 0..20 {
        let s = random_state(&grid, seed);
        let x = ds.norm.normalize(s.as_slice()).unwrap();
        // Features constant in the data collapse to their stored value.
        let s = StateVector::from_vec(6, ds.norm.denormalize(&x).unwrap()).unwrap();
        let before = residual_penalties(&s, &grid).unwrap();
        let out = guide(&x, &grid, &ds.norm, 1e-3, f64::INFINITY, LimitSet::ALL).unwrap();
        let after = residual_penalties(&StateVector::from_vec(6, ds.norm.denormalize(&out).unwrap()).unwrap(), &grid).unwrap();
        assert!(after.r_h + after.r_g < before.r_h + before.r_g);
    }
}

#[test]
fn guidance_identity_cases() {
    let grid = case6();
    let ds = dataset(&grid, 40, LimitSet::ALL);
    let x = ds.norm.normalize(ds.states[3].as_slice()).unwrap();
    assert_eq!(guide(&x, &grid, &ds.norm, 0.0, 0.2, LimitSet::ALL).unwrap(), x);
    let moved = guide(&x, &grid, &ds.norm, 0.5, 0.2, LimitSet::ALL).unwrap();
    assert!(max_abs_diff(&moved, &x) < 1e-8);
}

#[test]
fn output_independent_of_batch_partition() {
    let grid = case6();
    let ds = dataset(&grid, 60, LimitSet::ALL);
    let model = noisy_model(&ds, 2);
    let sched = NoiseSchedule::standard();
    for eta in [0.0, 0.2] {
        let mut cfg = SamplerConfig { eta, n_samples: 7, batch_size: 7, n_ddim_steps: 12, ..Default::default() };
        let whole = generate_normalized(&model, &sched, &grid, &ds.norm, &cfg).unwrap();
        cfg.batch_size = 3;
        let split = generate_normalized(&model, &sched, &grid, &ds.norm, &cfg).unwrap();
        assert_eq!(whole, split);
        let again = generate_normalized(&model, &sched, &grid, &ds.norm, &cfg).unwrap();
        assert_eq!(split, again);
    }
}

#[test]
fn zero_injection_buses_exactly_zero() {
    let grid = case24();
    let ds = dataset(&grid, 60, LimitSet::NETWORK);
    let model = noisy_model(&ds, 3);
    let sched = NoiseSchedule::standard();
    let cfg = SamplerConfig { n_samples: 10, batch_size: 10, n_ddim_steps: 10, limits: LimitSet::NETWORK, ..Default::default() };
    let states = generate_states(&model, &sched, &grid, &ds.norm, &cfg).unwrap();
    let features = grid.zero_injection_features();
    assert_eq!(features.len(), 8);
    for s in &states {
        for &k in &features {
            assert_eq!(s.as_slice()[k].to_bits(), 0.0f64.to_bits());
        }
    }
}

#[test]
fn projected_samples_satisfy_power_balance() {
    let grid = case6();
    let ds = dataset(&grid, 200, LimitSet::ALL);
    let rows = ds.normalized().unwrap();
    let tcfg = TrainConfig { epochs: 150, batch_size: 32, hidden_width: 32, n_hidden_layers: 2, time_dim: 16, learning_rate: 2e-3, ..Default::default() };
    let sched = NoiseSchedule::standard();
    let (model, _) = train(&rows, &ds.norm, &tcfg, &sched, |_, _| {}).unwrap();
    let cfg = SamplerConfig { n_samples: 20, batch_size: 20, terminal_projection: true, ..Default::default() };
    let batch = sample(&model, &sched, &grid, &ds.norm, &cfg).unwrap();
    let projections = batch.projections.as_ref().unwrap();
    assert_eq!(projections.len(), 20);
    let mut converged = 0;
    for (p, r) in projections.iter().zip(&batch.residuals) {
        if p.solution.converged {
            converged += 1;
            assert!(r.r_h < 1e-12);
        }
    }
    assert!(converged > 0);
    assert_eq!(batch.timesteps.len(), 30);
}

#[test]
fn mismatched_statistics_rejected() {
    let grid = case6();
    let ds = dataset(&grid, 60, LimitSet::ALL);
    let mut model = noisy_model(&ds, 4);
    model.norm_digest = Some("00".into());
    let cfg = unguided(SamplerMode::Ddim, 2);
    let err = generate_normalized(&model, &NoiseSchedule::standard(), &grid, &ds.norm, &cfg).unwrap_err();
    assert!(matches!(err, Error::DigestMismatch { .. }));
}

#[test]
fn invalid_configs_rejected() {
    let sched = NoiseSchedule::standard();
    let bad = [
        SamplerConfig { eta: 1.5, ..Default::default() },
        SamplerConfig { n_samples: 0, ..Default::default() },
        SamplerConfig { n_ddim_steps: 1, ..Default::default() },
        SamplerConfig { guidance: Some(GuidanceSchedule::constant(-1.0)), ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(&sched), Err(Error::Validation(_))));
    }
    let ddpm = SamplerConfig { mode: SamplerMode::Ddpm, n_ddim_steps: 1, ..Default::default() };
    assert!(ddpm.validate(&sched).is_ok());
    assert_eq!(ddpm.timesteps(&sched).unwrap().len(), 1000);
}

#[test]
fn oversized_sigma_reports_negative_radicand() {
    let s = NoiseSchedule::standard();
    let err = ddim_update(&[0.0], &[0.0], Some(10), 1.0, &[0.0], &s).unwrap_err();
    assert!(matches!(err, Error::NegativeRadicand { .. }));
}

#[test]
fn linear_guidance_is_stronger_when_noisier() {
    let g = GuidanceSchedule::linear(2.0);
    let s = NoiseSchedule::standard();
    let lambdas: Vec<f64> = (0..1000).map(|t| g.lambda(s.alpha_bar[t])).collect();
    assert!(lambdas.iter().all(|&l| l >= 0.0));
    assert!(lambdas.windows(2).all(|w| w[0] <= w[1]));
}
