//! Experiment configuration: built-in defaults, overridden by a TOML file,
//! overridden by command-line flags.

use std::path::{Path, PathBuf};

use pfdiff_core::datagen::ScenarioConfig;
use pfdiff_core::diffusion::TrainConfig;
use pfdiff_core::sampler::{GuidanceSchedule, SamplerConfig, SamplerMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::files;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub n_bins: usize,
    /// Bus ids whose `(P, Q)` and `(V, θ)` pairs get scatter data; empty
    /// means every bus.
    pub plot_buses: Vec<u32>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_bins: pfdiff_core::metrics::DEFAULT_BINS,
            plot_buses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub sizes: Vec<usize>,
    /// Apply the configured guidance to the DDPM runs as well.
    pub guide_ddpm: bool,
    /// Measurements per (sampler, size) cell; the fastest is reported.
    pub repeats: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            sizes: vec![500, 1000, 2000, 5000],
            guide_ddpm: false,
            repeats: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySettings {
    pub widths: Vec<usize>,
    pub epochs: usize,
}

impl Default for CapacitySettings {
    fn default() -> Self {
        Self {
            widths: vec![64, 128, 256, 512],
            epochs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Case file path or bundled case name.
    pub case: String,
    /// When set, replaces the data, train and sampler seeds.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub samples_dir: Option<PathBuf>,
    /// CSV of externally solved states for `gen-data`.
    pub ingest: Option<PathBuf>,
    pub data: ScenarioConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalSettings,
    pub bench: BenchSettings,
    pub capacity: CapacitySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: "case6ww".into(),
            seed: None,
            out: PathBuf::from("out"),
            data_dir: None,
            checkpoint: None,
            samples_dir: None,
            ingest: None,
            data: ScenarioConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            eval: EvalSettings::default(),
            bench: BenchSettings::default(),
            capacity: CapacitySettings::default(),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq, clap::Args)]
pub struct Overrides {
    /// TOML experiment configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Case file, or a bundled case name (case6ww, case24_rts)
    #[arg(long, global = true)]
    pub case: Option<String>,
    /// Seed for data generation, training and sampling
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory (gen-data output)
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint file (train output)
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Sample directory (sample output)
    #[arg(long, global = true)]
    pub samples: Option<PathBuf>,
    /// Ingest this CSV instead of generating scenarios
    #[arg(long, global = true)]
    pub ingest: Option<PathBuf>,
    /// Number of states to generate or sample
    #[arg(long, global = true)]
    pub n_samples: Option<usize>,
    /// Training epochs
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, global = true)]
    pub ddim_steps: Option<usize>,
    #[arg(long, global = true)]
    pub eta: Option<f64>,
    /// Guidance strength; 0 disables guidance
    #[arg(long, global = true)]
    pub guidance_lambda: Option<f64>,
    /// Do not clamp zero-injection buses
    #[arg(long, global = true)]
    pub no_clamp: bool,
    /// Project generated states onto the power-flow manifold
    #[arg(long, global = true)]
    pub project: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Ddpm,
    Ddim,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = files::read_string(path)?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then the file named by `--config`, then the flags.
    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        cfg.apply_seed();
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.data.seed = seed;
            self.train.seed = seed;
            self.sampler.seed = seed;
        }
    }

    pub fn apply(&mut self, f: &Overrides) {
        if let Some(case) = &f.case {
            self.case = case.clone();
        }
        if f.seed.is_some() {
            self.seed = f.seed;
            self.apply_seed();
        }
        if let Some(out) = &f.out {
            self.out = out.clone();
        }
        for (flag, slot) in [
            (&f.data, &mut self.data_dir),
            (&f.checkpoint, &mut self.checkpoint),
            (&f.samples, &mut self.samples_dir),
            (&f.ingest, &mut self.ingest),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if let Some(n) = f.n_samples {
            self.data.n_samples = n;
            self.sampler.n_samples = n;
        }
        if let Some(e) = f.epochs {
            self.train.epochs = e;
            self.capacity.epochs = e;
        }
        if let Some(m) = f.mode {
            self.sampler.mode = match m {
                ModeArg::Ddpm => SamplerMode::Ddpm,
                ModeArg::Ddim => SamplerMode::Ddim,
            };
        }
        if let Some(s) = f.ddim_steps {
            self.sampler.n_ddim_steps = s;
        }
        if let Some(eta) = f.eta {
            self.sampler.eta = eta;
        }
        if let Some(l) = f.guidance_lambda {
            self.sampler.guidance = if l == 0.0 {
                None
            } else {
                let base = self
                    .sampler
                    .guidance
                    .unwrap_or_else(|| GuidanceSchedule::linear(l).with_max_step(0.2));
                Some(GuidanceSchedule { lambda_max: l, ..base })
            };
        }
        if f.no_clamp {
            self.sampler.clamp_zero_injection = false;
        }
        if f.project {
            self.sampler.terminal_projection = true;
        }
    }

    /// Checks that do not need the grid or a schedule.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if self.sampler.n_samples == 0 {
            return Err(CliError::Config("sampler.n_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.sampler.eta) {
            return Err(CliError::Config("sampler.eta must lie in [0, 1]".into()));
        }
        if self.eval.n_bins < 2 {
            return Err(CliError::Config("eval.n_bins must be at least 2".into()));
        }
        if self.bench.sizes.is_empty() || self.bench.sizes.contains(&0) {
            return Err(CliError::Config("bench.sizes must be non-empty and positive".into()));
        }
        if self.bench.repeats == 0 {
            return Err(CliError::Config("bench.repeats must be positive".into()));
        }
        if self.capacity.widths.is_empty() || self.capacity.widths.contains(&0) {
            return Err(CliError::Config("capacity.widths must be non-empty and positive".into()));
        }
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("--{flag} is required for this command")))
    }
}
