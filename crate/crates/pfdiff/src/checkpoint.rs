//! Model checkpoints as versioned JSON.
//!
//! ```text
//! {
//!   "format": "pfdiff-checkpoint",
//!   "version": 1,
//!   "model": { state_dim, time_dim, activation, layers: [{fan_in, fan_out}], params: [...], norm_digest },
//!   "schedule": { "steps": 1000, "beta_start": 1e-4, "beta_end": 0.02 },
//!   "norm_digest": "<sha256 hex of the normalization statistics>",
//!   "grid_hash": "<sha256 hex of the grid>",
//!   "train_config": { ... }
//! }
//! ```
//!
//! `params` is the flat parameter vector, layer by layer, each layer a
//! row-major `fan_in × fan_out` weight block followed by its bias. Floats are
//! written in shortest round-trip form and parsed with correct rounding, so a
//! save/load cycle is exact.

use std::path::Path;

use pfdiff_core::diffusion::{DenoiserModel, NoiseSchedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::files;

pub const FORMAT: &str = "pfdiff-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleParams {
    pub fn of(s: &NoiseSchedule) -> Self {
        Self {
            steps: s.steps(),
            beta_start: s.beta_start,
            beta_end: s.beta_end,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: DenoiserModel,
    pub schedule: ScheduleParams,
    pub norm_digest: String,
    pub grid_hash: String,
    pub train_config: TrainConfig,
}

impl Checkpoint {
    pub fn new(
        model: DenoiserModel,
        schedule: &NoiseSchedule,
        norm_digest: String,
        grid_hash: String,
        train_config: TrainConfig,
    ) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model,
            schedule: ScheduleParams::of(schedule),
            norm_digest,
            grid_hash,
            train_config,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| CliError::format(path, e))?;
        files::write_atomic(path, text.as_bytes())
    }

    /// Read and check format, version and internal consistency.
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = files::read_json(path)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(CliError::format(
                path,
                format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            ));
        }
        ck.model.validate()?;
        if ck.model.norm_digest.as_deref() != Some(ck.norm_digest.as_str()) {
            return Err(CliError::format(path, "model and container disagree on the normalization digest"));
        }
        ck.schedule.build()?;
        Ok(ck)
    }

    /// Fail unless this model was trained on statistics with digest `digest`
    /// for the grid with hash `grid_hash`.
    pub fn check_binding(&self, digest: &str, grid_hash: &str) -> Result<()> {
        if self.norm_digest != digest {
            return Err(CliError::Digest {
                what: "normalization statistics".into(),
                expected: self.norm_digest.clone(),
                actual: digest.into(),
            });
        }
        if self.grid_hash != grid_hash {
            return Err(CliError::Digest {
                what: "grid".into(),
                expected: self.grid_hash.clone(),
                actual: grid_hash.into(),
            });
        }
        Ok(())
    }
}
