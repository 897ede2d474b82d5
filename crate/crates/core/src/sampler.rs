//! Reverse-process generation.
//!
//! Sampling walks a descending subset `S` of the training timesteps. At each
//! `t ∈ S` the model's noise estimate gives a clean estimate `x̂₀`, which is
//! optionally corrected by one gradient step on the physics penalty (taken in
//! physical units, then mapped back through the min–max scaling) and fed into
//! the DDIM update towards the next timestep in `S`. The last update targets
//! `ᾱ = 1` and therefore returns the corrected `x̂₀` itself.
//!
//! DDPM ancestral sampling is the special case `S = {T-1, …, 0}`, `η = 1`.

use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use crate::datagen::NormStats;
use crate::diffusion::{DenoiserModel, NoiseSchedule};
use crate::grid::GridCase;
use crate::powerflow::{
    grad_penalties_with, project_to_feasible, residual_penalties, residual_penalties_with, LimitSet, Projection,
    ResidualReport, StateVector,
};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SamplerMode {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GuidanceDecay {
    /// `λ_t = λ_max · (1 − ᾱ_t)`: strongest at high noise.
    LinearInAlphaBar,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GuidanceSchedule {
    pub lambda_max: f64,
    pub decay: GuidanceDecay,
    /// Largest change of any normalized feature in one guidance step; the
    /// whole step is scaled down to respect it.
    pub max_step: f64,
}

impl GuidanceSchedule {
    pub fn linear(lambda_max: f64) -> Self {
        Self {
            lambda_max,
            decay: GuidanceDecay::LinearInAlphaBar,
            max_step: f64::INFINITY,
        }
    }

    pub fn constant(lambda: f64) -> Self {
        Self {
            decay: GuidanceDecay::Constant,
            ..Self::linear(lambda)
        }
    }

    pub fn with_max_step(self, max_step: f64) -> Self {
        Self { max_step, ..self }
    }

    pub fn lambda(&self, alpha_bar: f64) -> f64 {
        match self.decay {
            GuidanceDecay::LinearInAlphaBar => self.lambda_max * (1.0 - alpha_bar),
            GuidanceDecay::Constant => self.lambda_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Length of the timestep subset; ignored for DDPM.
    pub n_ddim_steps: usize,
    /// Ignored for DDPM, which always uses `η = 1`.
    pub eta: f64,
    pub guidance: Option<GuidanceSchedule>,
    /// Limit families used by guidance.
    pub limits: LimitSet,
    pub clamp_zero_injection: bool,
    pub terminal_projection: bool,
    pub seed: u64,
    /// Rows pushed through the network together.
    pub batch_size: usize,
    pub n_samples: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Ddim,
            n_ddim_steps: 30,
            eta: 0.2,
            guidance: Some(GuidanceSchedule::linear(1.0).with_max_step(0.2)),
            limits: LimitSet::ALL,
            clamp_zero_injection: true,
            terminal_projection: false,
            seed: 0,
            batch_size: 500,
            n_samples: 1000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Validation("n_samples must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Validation("eta must lie in [0, 1]".into()));
        }
        if let Some(g) = self.guidance {
            if !(g.lambda_max >= 0.0 && g.lambda_max.is_finite()) {
                return Err(Error::Validation("guidance lambda must be non-negative".into()));
            }
            if !(g.max_step > 0.0) {
                return Err(Error::Validation("guidance max_step must be positive".into()));
            }
        }
        if self.mode == SamplerMode::Ddim {
            timestep_subset(sched.steps(), self.n_ddim_steps)?;
        }
        Ok(())
    }

    fn effective_eta(&self) -> f64 {
        match self.mode {
            SamplerMode::Ddpm => 1.0,
            SamplerMode::Ddim => self.eta,
        }
    }

    pub fn timesteps(&self, sched: &NoiseSchedule) -> Result<Vec<usize>> {
        match self.mode {
            SamplerMode::Ddpm => Ok((0..sched.steps()).rev().collect()),
            SamplerMode::Ddim => timestep_subset(sched.steps(), self.n_ddim_steps),
        }
    }
}

/// `n` evenly spaced timesteps from `T-1` down to `0`, both included.
pub fn timestep_subset(total: usize, n: usize) -> Result<Vec<usize>> {
    if n < 2 || n > total {
        return Err(Error::Validation(alloc::format!(
            "DDIM step count must lie in [2, {total}], got {n}"
        )));
    }
    let last = (total - 1) as f64;
    let span = (n - 1) as f64;
    Ok((0..n)
        .rev()
        .map(|k| libm::round(k as f64 * last / span) as usize)
        .collect())
}

/// `x̂₀ = (x_t − √(1−ᾱ_t) ε̂) / √ᾱ_t`.
pub fn reconstruct_x0(x_t: &[f64], t: usize, eps_hat: &[f64], sched: &NoiseSchedule) -> Vec<f64> {
    let ab = sched.alpha_bar[t];
    let (a, s) = (sqrt(ab), sqrt(1.0 - ab));
    x_t.iter().zip(eps_hat).map(|(x, e)| (x - s * e) / a).collect()
}

/// DDIM noise scale between `t` and `t_prev` (`None` = clean end).
///
/// `σ = η · √((1−ᾱ_prev)/(1−ᾱ_t)) · √(1 − ᾱ_t/ᾱ_prev)`.
pub fn ddim_sigma(t: usize, t_prev: Option<usize>, eta: f64, sched: &NoiseSchedule) -> f64 {
    let ab_t = sched.alpha_bar[t];
    let ab_prev = sched.alpha_bar_or_one(t_prev);
    eta * sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * sqrt(1.0 - ab_t / ab_prev)
}

/// `x_prev = √ᾱ_prev x̂₀ + √(1 − ᾱ_prev − σ²) ε̂ + σ z`.
pub fn ddim_update(
    x0_hat: &[f64],
    eps_hat: &[f64],
    t_prev: Option<usize>,
    sigma: f64,
    z: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let ab_prev = sched.alpha_bar_or_one(t_prev);
    let radicand = 1.0 - ab_prev - sigma * sigma;
    // Rounding can leave a tiny negative value at the clean end.
    let radicand = if radicand < 0.0 && radicand > -1e-15 { 0.0 } else { radicand };
    if radicand < 0.0 {
        return Err(Error::NegativeRadicand { value: radicand });
    }
    let (a, c) = (sqrt(ab_prev), sqrt(radicand));
    Ok(x0_hat
        .iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((x, e), zz)| a * x + c * e + sigma * zz)
        .collect())
}

/// One unguided DDIM transition of a single state.
pub fn ddim_step(
    model: &DenoiserModel,
    x_t: &[f64],
    t: usize,
    t_prev: Option<usize>,
    sched: &NoiseSchedule,
    eta: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    let eps = model.predict_eps(x_t, t)?;
    let x0 = reconstruct_x0(x_t, t, &eps, sched);
    let sigma = ddim_sigma(t, t_prev, eta, sched);
    ddim_update(&x0, &eps, t_prev, sigma, z, sched)
}

/// Halvings of the guidance step tried before a correction is dropped.
pub const MAX_STEP_HALVINGS: u32 = 30;

/// One physics-guidance step on a normalized clean estimate.
///
/// The estimate is denormalized, the penalty gradient is evaluated in
/// physical units and pulled back through the affine scaling (multiplied by
/// each feature's half range). The step is first shortened so that no
/// feature moves by more than `max_step`, then halved until the penalty does
/// not increase; if no halving helps, the estimate is returned as is.
pub fn guide(
    x0_hat: &[f64],
    grid: &GridCase,
    norm: &NormStats,
    lambda: f64,
    max_step: f64,
    limits: LimitSet,
) -> Result<Vec<f64>> {
    if lambda == 0.0 {
        return Ok(x0_hat.to_vec());
    }
    let n = grid.n();
    let penalty = |x: &[f64]| -> Result<f64> {
        let s = StateVector::from_vec(n, norm.denormalize(x)?)?;
        let r = residual_penalties_with(&s, grid, limits)?;
        Ok(r.r_h + r.r_g)
    };
    let phys = StateVector::from_vec(n, norm.denormalize(x0_hat)?)?;
    let grad = grad_penalties_with(&phys, grid, limits)?;
    let scaled: Vec<f64> = (0..x0_hat.len())
        .map(|k| grad[k] * norm.half_range(k))
        .collect();
    let before = penalty(x0_hat)?;
    if !before.is_finite() || scaled.iter().any(|g| !g.is_finite()) {
        return Ok(x0_hat.to_vec());
    }
    let largest = scaled.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if largest == 0.0 {
        return Ok(x0_hat.to_vec());
    }
    let mut step = lambda.min(max_step / largest);
    for _ in 0..=MAX_STEP_HALVINGS {
        let trial: Vec<f64> = x0_hat
            .iter()
            .zip(&scaled)
            .map(|(x, g)| x - step * g)
            .collect();
        if penalty(&trial)? <= before {
            return Ok(trial);
        }
        step *= 0.5;
    }
    Ok(x0_hat.to_vec())
}

/// Generated states with their recomputed residuals.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleBatch {
    /// Physical states; projected ones where projection ran and converged.
    pub states: Vec<StateVector>,
    pub residuals: Vec<ResidualReport>,
    /// Present when terminal projection was requested.
    pub projections: Option<Vec<Projection>>,
    pub timesteps: Vec<usize>,
    pub config: SamplerConfig,
}

impl SampleBatch {
    pub fn mean_r_h(&self) -> f64 {
        mean(self.residuals.iter().map(|r| r.r_h))
    }

    pub fn mean_r_g(&self) -> f64 {
        mean(self.residuals.iter().map(|r| r.r_g))
    }
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        return 0.0;
    }
    it.sum::<f64>() / n as f64
}

fn check_consistency(model: &DenoiserModel, grid: &GridCase, norm: &NormStats) -> Result<()> {
    if let Some(bound) = &model.norm_digest {
        let actual = norm.digest_hex();
        if *bound != actual {
            return Err(Error::DigestMismatch {
                expected: bound.clone(),
                actual,
            });
        }
    }
    for dim in [model.state_dim, norm.dim()] {
        if dim != grid.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.state_dim(),
                actual: dim,
            });
        }
    }
    Ok(())
}

/// Normalized value of a physical zero for each zero-injection feature.
fn clamp_targets(grid: &GridCase, norm: &NormStats) -> Vec<(usize, f64)> {
    grid.zero_injection_features()
        .into_iter()
        .map(|k| {
            let target = if norm.is_constant(k) {
                0.0
            } else {
                2.0 * (0.0 - norm.min[k]) / (norm.max[k] - norm.min[k]) - 1.0
            };
            (k, target)
        })
        .collect()
}

fn apply_clamp(row: &mut [f64], targets: &[(usize, f64)]) {
    for &(k, v) in targets {
        row[k] = v;
    }
}

/// Run the reverse process and return normalized clean samples, row-major.
///
/// Sample `i` draws its initial noise and every step's `z` from stream
/// `(cfg.seed, i)`, so output does not depend on `batch_size`.
pub fn generate_normalized(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    grid: &GridCase,
    norm: &NormStats,
    cfg: &SamplerConfig,
) -> Result<Vec<f64>> {
    cfg.validate(sched)?;
    check_consistency(model, grid, norm)?;
    let d = grid.state_dim();
    let steps = cfg.timesteps(sched)?;
    let eta = cfg.effective_eta();
    let targets = if cfg.clamp_zero_injection {
        clamp_targets(grid, norm)
    } else {
        Vec::new()
    };
    let sigmas: Vec<f64> = steps
        .iter()
        .enumerate()
        .map(|(k, &t)| ddim_sigma(t, steps.get(k + 1).copied(), eta, sched))
        .collect();

    let mut out = Vec::with_capacity(cfg.n_samples * d);
    let mut z = vec![0.0; d];
    let mut start = 0;
    while start < cfg.n_samples {
        let rows = cfg.batch_size.min(cfg.n_samples - start);
        let mut streams: Vec<rng::StreamRng> = (start..start + rows)
            .map(|i| rng::stream(cfg.seed, i as u64))
            .collect();
        let mut xs = vec![0.0; rows * d];
        for (r, row) in xs.chunks_mut(d).enumerate() {
            rng::fill_normal(&mut streams[r], row);
            apply_clamp(row, &targets);
        }
        for (k, &t) in steps.iter().enumerate() {
            let t_prev = steps.get(k + 1).copied();
            let eps = model.predict_eps_batch(&xs, t)?;
            let (lambda, max_step) = cfg
                .guidance
                .map_or((0.0, f64::INFINITY), |g| (g.lambda(sched.alpha_bar[t]), g.max_step));
            for r in 0..rows {
                let x_t = &xs[r * d..(r + 1) * d];
                let e = &eps[r * d..(r + 1) * d];
                let mut x0 = reconstruct_x0(x_t, t, e, sched);
                apply_clamp(&mut x0, &targets);
                if lambda > 0.0 {
                    x0 = guide(&x0, grid, norm, lambda, max_step, cfg.limits)?;
                    apply_clamp(&mut x0, &targets);
                }
                rng::fill_normal(&mut streams[r], &mut z);
                let mut next = ddim_update(&x0, e, t_prev, sigmas[k], &z, sched)?;
                apply_clamp(&mut next, &targets);
                xs[r * d..(r + 1) * d].copy_from_slice(&next);
            }
        }
        out.extend_from_slice(&xs);
        start += rows;
    }
    Ok(out)
}

/// Reverse process followed by denormalization.
pub fn generate_states(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    grid: &GridCase,
    norm: &NormStats,
    cfg: &SamplerConfig,
) -> Result<Vec<StateVector>> {
    let rows = generate_normalized(model, sched, grid, norm, cfg)?;
    let mut states = crate::datagen::denormalize(&rows, norm)?;
    if cfg.clamp_zero_injection {
        // The affine round trip need not reproduce 0.0 bit for bit.
        let features = grid.zero_injection_features();
        for s in &mut states {
            for &k in &features {
                s.as_mut_slice()[k] = 0.0;
            }
        }
    }
    Ok(states)
}

/// Optional terminal projection and residual reports for generated states.
pub fn finish(
    states: Vec<StateVector>,
    grid: &GridCase,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<SampleBatch> {
    let (states, projections) = if cfg.terminal_projection {
        let mut projected = Vec::with_capacity(states.len());
        let mut records = Vec::with_capacity(states.len());
        for s in states {
            let p = match project_to_feasible(&s, grid) {
                Ok(p) => p,
                Err(Error::SingularJacobian { .. }) => unconverged(&s),
                Err(e) => return Err(e),
            };
            projected.push(if p.solution.converged {
                p.solution.state.clone()
            } else {
                s
            });
            records.push(p);
        }
        (projected, Some(records))
    } else {
        (states, None)
    };
    let residuals = states
        .iter()
        .map(|s| residual_penalties(s, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleBatch {
        states,
        residuals,
        projections,
        timesteps: cfg.timesteps(sched)?,
        config: cfg.clone(),
    })
}

fn unconverged(s: &StateVector) -> Projection {
    Projection {
        solution: crate::powerflow::PfSolution {
            state: s.clone(),
            iterations: 0,
            final_mismatch: f64::INFINITY,
            converged: false,
            mismatch_history: Vec::new(),
        },
        distance: f64::INFINITY,
    }
}

/// Full pipeline: reverse process, denormalization, optional projection,
/// residual reports.
pub fn sample(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    grid: &GridCase,
    norm: &NormStats,
    cfg: &SamplerConfig,
) -> Result<SampleBatch> {
    let states = generate_states(model, sched, grid, norm, cfg)?;
    finish(states, grid, sched, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_endpoints_and_order() {
        let s = timestep_subset(1000, 30).unwrap();
        assert_eq!(s.len(), 30);
        assert_eq!(s[0], 999);
        assert_eq!(*s.last().unwrap(), 0);
        assert!(s.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(timestep_subset(5, 5).unwrap(), vec![4, 3, 2, 1, 0]);
        assert!(timestep_subset(10, 1).is_err());
        assert!(timestep_subset(10, 11).is_err());
    }

    #[test]
    fn sigma_zero_for_deterministic() {
        let sched = NoiseSchedule::standard();
        for t in 1..1000 {
            assert_eq!(ddim_sigma(t, Some(t - 1), 0.0, &sched), 0.0);
        }
    }

    #[test]
    fn sigma_two_step_hand_value() {
        let sched = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let s = ddim_sigma(1, Some(0), 1.0, &sched);
        // (1 − 0.9) / (1 − 0.72) · 0.2
        assert!((s * s - 0.1 / 0.28 * 0.2).abs() < 1e-15);
        assert!((s * s - 0.071_428_571).abs() < 1e-9);
    }

    #[test]
    fn clean_end_returns_estimate() {
        let sched = NoiseSchedule::standard();
        let x0 = [0.3, -0.7];
        let out = ddim_update(&x0, &[5.0, -5.0], None, 0.0, &[1.0, 1.0], &sched).unwrap();
        assert_eq!(out, x0.to_vec());
        assert_eq!(ddim_sigma(0, None, 1.0, &sched), 0.0);
    }

    #[test]
    fn oversized_sigma_rejected() {
        let sched = NoiseSchedule::standard();
        let err = ddim_update(&[0.0], &[0.0], Some(10), 1.0, &[0.0], &sched);
        assert!(matches!(err, Err(Error::NegativeRadicand { .. })));
    }

    #[test]
    fn zero_noise_estimate_scales_input() {
        let sched = NoiseSchedule::standard();
        let x = [0.4, -0.2];
        let x0 = reconstruct_x0(&x, 500, &[0.0, 0.0], &sched);
        let a = libm::sqrt(sched.alpha_bar[500]);
        assert_eq!(x0, vec![0.4 / a, -0.2 / a]);
    }

    #[test]
    fn guidance_lambda_schedule() {
        let g = GuidanceSchedule::linear(0.5);
        assert_eq!(g.lambda(1.0), 0.0);
        assert_eq!(g.lambda(0.0), 0.5);
        let sched = NoiseSchedule::standard();
        let lams: Vec<f64> = sched.alpha_bar.iter().map(|&a| g.lambda(a)).collect();
        assert!(lams.windows(2).all(|w| w[0] <= w[1]));
    }
}
