//! Sampling-time benchmark: DDPM over the full schedule against DDIM on a
//! timestep subset, swept over batch sizes.

use std::time::Instant;

use pfdiff_core::datagen::NormStats;
use pfdiff_core::diffusion::{DenoiserModel, NoiseSchedule};
use pfdiff_core::sampler::{generate_states, SamplerConfig, SamplerMode};
use pfdiff_core::{GridCase, StateVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Minimum coefficient of determination for a sweep to count as linear.
pub const LINEAR_R2: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub n_samples: usize,
    pub steps: usize,
    /// Fastest of `runs` measurements.
    pub seconds: f64,
    pub runs: usize,
}

/// Least-squares line `seconds = slope · n + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fit a line through `(x, y)` points. Needs at least two distinct `x`.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if points.len() < 2 || sxx == 0.0 {
        return Err(CliError::Config("a linear fit needs two distinct sizes".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

/// Run the reverse process and time it. Only the sampling loop is inside
/// the timed region.
pub fn timed_generate(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    grid: &GridCase,
    norm: &NormStats,
    cfg: &SamplerConfig,
) -> Result<(Vec<StateVector>, f64)> {
    let start = Instant::now();
    let states = generate_states(model, sched, grid, norm, cfg)?;
    Ok((states, start.elapsed().as_secs_f64()))
}

fn method_name(mode: SamplerMode) -> &'static str {
    match mode {
        SamplerMode::Ddpm => "ddpm",
        SamplerMode::Ddim => "ddim",
    }
}

/// The DDPM and DDIM configurations compared by the benchmark.
pub fn bench_configs(base: &SamplerConfig, guide_ddpm: bool) -> [SamplerConfig; 2] {
    let ddpm = SamplerConfig {
        mode: SamplerMode::Ddpm,
        guidance: if guide_ddpm { base.guidance } else { None },
        terminal_projection: false,
        ..base.clone()
    };
    let ddim = SamplerConfig {
        mode: SamplerMode::Ddim,
        terminal_projection: false,
        ..base.clone()
    };
    [ddpm, ddim]
}

/// Time every configuration at every size, `repeats` times, keeping the
/// fastest run of each cell.
///
/// Runs go round by round. Within a round the sizes alternate between
/// ascending and descending order and the configurations take turns at each
/// size, so a slow stretch of the host is spread over cells instead of
/// landing on one end of the sweep. `on_run` sees every individual
/// measurement; the returned rows are grouped by configuration, sizes
/// ascending.
pub fn run_bench(
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    grid: &GridCase,
    norm: &NormStats,
    configs: &[SamplerConfig],
    sizes: &[usize],
    repeats: usize,
    mut on_run: impl FnMut(&BenchRow),
) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Config("benchmark sizes must be positive".into()));
    }
    if repeats == 0 {
        return Err(CliError::Config("benchmark repeats must be positive".into()));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut best = vec![f64::INFINITY; configs.len() * sorted.len()];
    for round in 0..repeats {
        let order: Vec<usize> = if round % 2 == 0 {
            (0..sorted.len()).collect()
        } else {
            (0..sorted.len()).rev().collect()
        };
        for &k in &order {
            for (c, cfg) in configs.iter().enumerate() {
                let cfg = SamplerConfig {
                    n_samples: sorted[k],
                    ..cfg.clone()
                };
                let (_, seconds) = timed_generate(model, sched, grid, norm, &cfg)?;
                on_run(&BenchRow {
                    method: method_name(cfg.mode).into(),
                    n_samples: sorted[k],
                    steps: cfg.timesteps(sched)?.len(),
                    seconds,
                    runs: 1,
                });
                let cell = &mut best[c * sorted.len() + k];
                *cell = cell.min(seconds);
            }
        }
    }
    let mut rows = Vec::with_capacity(best.len());
    for (c, cfg) in configs.iter().enumerate() {
        for (k, &n) in sorted.iter().enumerate() {
            rows.push(BenchRow {
                method: method_name(cfg.mode).into(),
                n_samples: n,
                steps: cfg.timesteps(sched)?.len(),
                seconds: best[c * sorted.len() + k],
                runs: repeats,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub steps: usize,
    pub fit: LinearFit,
    /// `seconds(n_{k+1}) / seconds(n_k)` over consecutive sizes.
    pub growth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub methods: Vec<MethodSummary>,
    pub largest_n: usize,
    /// DDPM seconds over DDIM seconds at the largest size.
    pub speedup: f64,
    pub linear: bool,
}

pub fn summarize(rows: &[BenchRow]) -> Result<BenchSummary> {
    let mut methods = Vec::new();
    for name in ["ddpm", "ddim"] {
        let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == name).collect();
        if mine.is_empty() {
            continue;
        }
        let points: Vec<(f64, f64)> = mine.iter().map(|r| (r.n_samples as f64, r.seconds)).collect();
        methods.push(MethodSummary {
            method: name.into(),
            steps: mine[0].steps,
            fit: linear_fit(&points)?,
            growth: mine.windows(2).map(|w| w[1].seconds / w[0].seconds).collect(),
        });
    }
    let largest_n = rows.iter().map(|r| r.n_samples).max().unwrap_or(0);
    let at = |name: &str| {
        rows.iter()
            .find(|r| r.method == name && r.n_samples == largest_n)
            .map(|r| r.seconds)
    };
    let speedup = match (at("ddpm"), at("ddim")) {
        (Some(p), Some(i)) if i > 0.0 => p / i,
        _ => f64::NAN,
    };
    let linear = methods.iter().all(|m| m.fit.r2 > LINEAR_R2);
    Ok(BenchSummary {
        methods,
        largest_n,
        speedup,
        linear,
    })
}
