//! Ground-truth datasets of feasible operating states and min–max
//! normalization.
//!
//! Scenarios scale the baseline demand, perturb it per bus, dispatch the
//! generators and solve the power flow. Only converged states with
//! `r_h < 1e-12` and no violation of the screened limits are kept. Scenario `k` draws from its
//! own stream `(seed, k)`, so a dataset is a pure function of the grid and
//! the configuration.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::exp;
use sha2::{Digest, Sha256};

use crate::grid::{hex_string, BusType, GridCase};
use crate::powerflow::{
    newton_raphson, residual_penalties_with, LimitSet, Loads, StateVector,
};
use crate::{rng, Error, Result};

/// Maximum `r_h` (and `r_g`) accepted for ingested rows.
pub const INGEST_TOLERANCE: f64 = 1e-6;

/// Maximum `r_h` accepted for generated states.
pub const GENERATED_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DispatchPolicy {
    /// Scenario demand split over all generators in proportion to `Pmax`;
    /// the slack also absorbs losses.
    ProportionalToPmax,
    /// Each non-slack generator drawn uniformly in `[Pmin, Pmax]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScenarioConfig {
    pub n_samples: usize,
    /// Multiplicative range `[lo, hi]` applied to baseline `Pd, Qd`.
    pub load_scale_range: [f64; 2],
    /// Log-normal spread of the per-bus factor around the common scale.
    pub per_bus_noise_sigma: f64,
    pub dispatch_policy: DispatchPolicy,
    pub seed: u64,
    /// Limit families a solved scenario must satisfy to be kept. Generator
    /// output is recovered from net injection plus baseline demand, so on
    /// cases with load at generator buses the generator family rejects
    /// nearly every scaled scenario and is best left out.
    pub screen_limits: LimitSet,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            load_scale_range: [0.8, 1.2],
            per_bus_noise_sigma: 0.05,
            dispatch_policy: DispatchPolicy::ProportionalToPmax,
            seed: 0,
            screen_limits: LimitSet::ALL,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.load_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Validation(alloc::format!(
                "load_scale_range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Validation("n_samples must be at least 1".into()));
        }
        if !(self.per_bus_noise_sigma >= 0.0 && self.per_bus_noise_sigma.is_finite()) {
            return Err(Error::Validation("per_bus_noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Provenance {
    Generated,
    Ingested,
}

/// Per-feature min and max of a training set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub frozen: bool,
}

impl NormStats {
    /// Fit on a set of states and freeze.
    pub fn fit(states: &[StateVector]) -> Result<Self> {
        let first = states.first().ok_or(Error::EmptySample)?;
        let mut min = first.as_slice().to_vec();
        let mut max = min.clone();
        for s in &states[1..] {
            if s.as_slice().len() != min.len() {
                return Err(Error::DimensionMismatch {
                    expected: min.len(),
                    actual: s.as_slice().len(),
                });
            }
            for (k, &x) in s.as_slice().iter().enumerate() {
                min[k] = min[k].min(x);
                max[k] = max[k].max(x);
            }
        }
        Ok(Self {
            min,
            max,
            frozen: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn is_constant(&self, k: usize) -> bool {
        self.max[k] == self.min[k]
    }

    /// `∂x_phys / ∂x_norm` per feature; zero for constant features.
    pub fn half_range(&self, k: usize) -> f64 {
        (self.max[k] - self.min[k]) / 2.0
    }

    fn check(&self, len: usize) -> Result<()> {
        if !self.frozen {
            return Err(Error::NormNotFrozen);
        }
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Map physical features to `[-1, 1]`; constant features map to 0.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let range = self.max[k] - self.min[k];
                if range == 0.0 {
                    0.0
                } else {
                    2.0 * (v - self.min[k]) / range - 1.0
                }
            })
            .collect())
    }

    /// Inverse of [`normalize`](Self::normalize); constant features are
    /// restored to their stored value.
    pub fn denormalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        Ok(x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let range = self.max[k] - self.min[k];
                if range == 0.0 {
                    self.min[k]
                } else {
                    (v + 1.0) / 2.0 * range + self.min[k]
                }
            })
            .collect())
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"pfdiff-norm-v1");
        h.update((self.dim() as u64).to_le_bytes());
        for v in self.min.iter().chain(&self.max) {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex_string(&self.digest())
    }
}

/// Normalize every state, flattened row-major.
pub fn normalize(states: &[StateVector], norm: &NormStats) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(states.len() * norm.dim());
    for s in states {
        out.extend(norm.normalize(s.as_slice())?);
    }
    Ok(out)
}

/// Denormalize row-major normalized features back to physical states.
pub fn denormalize(rows: &[f64], norm: &NormStats) -> Result<Vec<StateVector>> {
    let d = norm.dim();
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: rows.len(),
        });
    }
    rows.chunks(d)
        .map(|r| StateVector::from_vec(d / 4, norm.denormalize(r)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub states: Vec<StateVector>,
    pub norm: NormStats,
    /// Hex digest of the grid this data was produced on.
    pub grid_hash: String,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(states: Vec<StateVector>, grid: &GridCase, provenance: Provenance) -> Result<Self> {
        let norm = NormStats::fit(&states)?;
        Ok(Self {
            states,
            norm,
            grid_hash: grid.digest_hex(),
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Fails with [`Error::DigestMismatch`] when the data belongs to another
    /// grid.
    pub fn check_grid(&self, grid: &GridCase) -> Result<()> {
        let actual = grid.digest_hex();
        if actual != self.grid_hash {
            return Err(Error::DigestMismatch {
                expected: self.grid_hash.clone(),
                actual,
            });
        }
        Ok(())
    }

    pub fn normalized(&self) -> Result<Vec<f64>> {
        normalize(&self.states, &self.norm)
    }

    /// Split off the last `k` states; both halves refit their own statistics.
    pub fn split_tail(mut self, k: usize, grid: &GridCase) -> Result<(Dataset, Dataset)> {
        if k == 0 || k >= self.states.len() {
            return Err(Error::Validation("split must leave both halves non-empty".into()));
        }
        let tail = self.states.split_off(self.states.len() - k);
        Ok((
            Dataset::new(self.states, grid, self.provenance)?,
            Dataset::new(tail, grid, self.provenance)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerationReport {
    pub attempts: usize,
    pub nonconverged: usize,
    pub infeasible: usize,
}

/// Demand and dispatch of scenario `index`.
pub fn scenario(grid: &GridCase, cfg: &ScenarioConfig, index: u64) -> (Loads, Vec<f64>) {
    let mut r = rng::stream(cfg.seed, index);
    let [lo, hi] = cfg.load_scale_range;
    let scale = lo + (hi - lo) * rng::uniform(&mut r);
    let n = grid.n();
    let mut loads = Loads {
        pd: vec![0.0; n],
        qd: vec![0.0; n],
    };
    for (i, bus) in grid.buses.iter().enumerate() {
        let z = rng::normal(&mut r);
        let f = scale * exp(cfg.per_bus_noise_sigma * z);
        loads.pd[i] = bus.pd * f;
        // constant power factor
        loads.qd[i] = bus.qd * f;
    }
    let mut dispatch = vec![0.0; n];
    let total_pmax: f64 = grid.gens.iter().map(|g| g.pmax).sum();
    let total_load: f64 = loads.pd.iter().sum();
    for gen in &grid.gens {
        let u = rng::uniform(&mut r);
        if grid.buses[gen.bus].bus_type == BusType::Slack {
            continue;
        }
        dispatch[gen.bus] = match cfg.dispatch_policy {
            DispatchPolicy::ProportionalToPmax if total_pmax > 0.0 => {
                gen.pmax * total_load / total_pmax
            }
            DispatchPolicy::ProportionalToPmax => 0.0,
            DispatchPolicy::Uniform => gen.pmin + (gen.pmax - gen.pmin) * u,
        };
    }
    (loads, dispatch)
}

/// Solve scenario `index`, returning the state if it is feasible.
pub fn solve_scenario(
    grid: &GridCase,
    cfg: &ScenarioConfig,
    index: u64,
) -> core::result::Result<StateVector, Rejection> {
    let (loads, dispatch) = scenario(grid, cfg, index);
    let sol = match newton_raphson(grid, &loads, &dispatch) {
        Ok(sol) if sol.converged => sol,
        _ => return Err(Rejection::NonConverged),
    };
    match residual_penalties_with(&sol.state, grid, cfg.screen_limits) {
        Ok(rep) if rep.r_h < GENERATED_TOLERANCE && rep.r_g == 0.0 => Ok(sol.state),
        _ => Err(Rejection::Infeasible),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    NonConverged,
    Infeasible,
}

/// Generate `cfg.n_samples` feasible states.
pub fn generate(grid: &GridCase, cfg: &ScenarioConfig) -> Result<Dataset> {
    generate_with_report(grid, cfg).map(|(d, _)| d)
}

/// Like [`generate`], also returning how many scenarios were rejected.
///
/// Scenarios are tried in index order until enough are accepted or the budget
/// of `10 × n_samples` attempts is spent.
pub fn generate_with_report(
    grid: &GridCase,
    cfg: &ScenarioConfig,
) -> Result<(Dataset, GenerationReport)> {
    cfg.validate()?;
    let budget = 10 * cfg.n_samples;
    let mut report = GenerationReport::default();
    let mut states = Vec::with_capacity(cfg.n_samples);
    while states.len() < cfg.n_samples {
        if report.attempts == budget {
            return Err(Error::GenerationExhausted {
                requested: cfg.n_samples,
                accepted: states.len(),
                attempts: report.attempts,
            });
        }
        let index = report.attempts as u64;
        report.attempts += 1;
        match solve_scenario(grid, cfg, index) {
            Ok(s) => states.push(s),
            Err(Rejection::NonConverged) => report.nonconverged += 1,
            Err(Rejection::Infeasible) => report.infeasible += 1,
        }
    }
    Ok((Dataset::new(states, grid, Provenance::Generated)?, report))
}

/// Partition externally supplied states by the ingest feasibility screen.
/// Returns the accepted states and the zero-based indices of rejected ones.
pub fn screen_feasible(
    states: Vec<StateVector>,
    grid: &GridCase,
) -> Result<(Vec<StateVector>, Vec<usize>)> {
    screen_feasible_with(states, grid, LimitSet::ALL)
}

/// [`screen_feasible`] over a chosen set of limit families.
pub fn screen_feasible_with(
    states: Vec<StateVector>,
    grid: &GridCase,
    limits: LimitSet,
) -> Result<(Vec<StateVector>, Vec<usize>)> {
    let mut accepted = Vec::with_capacity(states.len());
    let mut rejected = Vec::new();
    for (k, s) in states.into_iter().enumerate() {
        let rep = residual_penalties_with(&s, grid, limits)?;
        if rep.r_h <= INGEST_TOLERANCE && rep.r_g <= INGEST_TOLERANCE {
            accepted.push(s);
        } else {
            rejected.push(k);
        }
    }
    Ok((accepted, rejected))
}
