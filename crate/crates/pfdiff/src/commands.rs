//! The subcommands. Each reads its inputs, writes its outputs into
//! `cfg.out` and finishes with a `manifest.json`.

use std::path::Path;

use pfdiff_core::datagen::generate_with_report;
use pfdiff_core::diffusion::{train, NoiseSchedule, TrainConfig};
use pfdiff_core::metrics::{fidelity_report, plot_data, PlotSelection};
use pfdiff_core::sampler::{finish, SampleBatch, SamplerMode};
use pfdiff_core::GridCase;
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchRow};
use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{self, DatasetMeta, NormFile, DATASET_CSV, META_JSON, NORM_JSON};
use crate::error::{CliError, Result};
use crate::files;
use crate::manifest::Manifest;

pub const CHECKPOINT_JSON: &str = "checkpoint.json";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const RESIDUALS_JSON: &str = "residuals.json";
pub const TIMING_JSON: &str = "timing.json";
pub const FIDELITY_JSON: &str = "fidelity.json";
pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_SUMMARY_JSON: &str = "bench_summary.json";
pub const CAPACITY_CSV: &str = "capacity.csv";
pub const CAPACITY_SUMMARY_JSON: &str = "capacity_summary.json";

fn load_grid(cfg: &ExperimentConfig, manifest: &mut Manifest) -> Result<GridCase> {
    let grid = files::load_case(&cfg.case)?;
    manifest.input_digest(&format!("case:{}", cfg.case), grid.digest_hex());
    manifest.bind("grid_hash", grid.digest_hex());
    Ok(grid)
}

fn record_dataset_inputs(manifest: &mut Manifest, dir: &Path) -> Result<()> {
    for name in [DATASET_CSV, NORM_JSON, META_JSON] {
        manifest.input_file(&dir.join(name))?;
    }
    Ok(())
}

/// Generate scenarios, or ingest a CSV, into a dataset directory.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<DatasetMeta> {
    let mut manifest = Manifest::new("gen-data", Some(cfg.data.seed), cfg)?;
    let grid = load_grid(cfg, &mut manifest)?;
    let (ds, meta) = match &cfg.ingest {
        Some(path) => {
            manifest.input_file(path)?;
            let ing = dataset::ingest_csv(path, &grid, cfg.data.screen_limits)?;
            let meta = dataset::ingest_meta(&cfg.case, path, &ing);
            log::info!(
                "ingested {} of {} rows ({} rejected)",
                ing.dataset.len(),
                ing.total_rows,
                ing.rejected_rows.len()
            );
            (ing.dataset, meta)
        }
        None => {
            let (ds, report) = generate_with_report(&grid, &cfg.data)?;
            log::info!(
                "generated {} states in {} attempts ({} not converged, {} infeasible)",
                ds.len(),
                report.attempts,
                report.nonconverged,
                report.infeasible
            );
            let meta = DatasetMeta::generated(&cfg.case, &cfg.data, &report, ds.len());
            (ds, meta)
        }
    };
    dataset::write_dataset(&cfg.out, &ds, &grid, &meta)?;
    manifest.bind("norm_digest", ds.norm.digest_hex());
    manifest.outputs_in(&cfg.out, &[DATASET_CSV, NORM_JSON, META_JSON])?;
    manifest.write(&cfg.out)?;
    Ok(meta)
}

fn train_log_csv(initial: f64, log: &pfdiff_core::diffusion::TrainLog) -> Result<Vec<u8>> {
    let first = std::iter::once(vec!["0".to_string(), String::new(), initial.to_string()]);
    let rest = log.epochs.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.to_string(),
        ]
    });
    files::csv_bytes(&["epoch", "train_loss", "val_loss"], first.chain(rest))
}

/// Train a denoiser on a dataset directory and write the checkpoint.
pub fn train_cmd(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let mut manifest = Manifest::new("train", Some(cfg.train.seed), cfg)?;
    let grid = load_grid(cfg, &mut manifest)?;
    let data_dir = cfg.require(&cfg.data_dir, "data")?;
    let (ds, _) = dataset::read_dataset(data_dir, &grid)?;
    record_dataset_inputs(&mut manifest, data_dir)?;
    let sched = NoiseSchedule::standard();
    let rows = ds.normalized()?;
    let (model, log) = train(&rows, &ds.norm, &cfg.train, &sched, |rec, _| {
        log::info!(
            "epoch {:>4}  train {:.5}  val {:.5}",
            rec.epoch,
            rec.train_loss,
            rec.val_loss
        );
    })?;
    files::ensure_dir(&cfg.out)?;
    let ck = Checkpoint::new(
        model,
        &sched,
        ds.norm.digest_hex(),
        grid.digest_hex(),
        cfg.train.clone(),
    );
    ck.save(&cfg.out.join(CHECKPOINT_JSON))?;
    files::write_atomic(
        &cfg.out.join(TRAIN_LOG_CSV),
        &train_log_csv(log.initial_val_loss, &log)?,
    )?;
    manifest.bind("norm_digest", ds.norm.digest_hex());
    manifest.outputs_in(&cfg.out, &[CHECKPOINT_JSON, TRAIN_LOG_CSV])?;
    manifest.write(&cfg.out)?;
    Ok(ck)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResidual {
    pub r_h: f64,
    pub r_g: f64,
    pub projection_converged: Option<bool>,
    pub projection_iterations: Option<usize>,
}

/// Contents of `residuals.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub n_samples: usize,
    pub mean_r_h: f64,
    pub max_r_h: f64,
    pub mean_r_g: f64,
    pub max_r_g: f64,
    pub projected: Option<usize>,
    pub projection_converged: Option<usize>,
    pub samples: Vec<SampleResidual>,
}

impl ResidualSummary {
    pub fn of(batch: &SampleBatch) -> Self {
        let max = |f: fn(&pfdiff_core::ResidualReport) -> f64| {
            batch.residuals.iter().map(f).fold(0.0, f64::max)
        };
        let samples = batch
            .residuals
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let p = batch.projections.as_ref().map(|ps| &ps[i]);
                SampleResidual {
                    r_h: r.r_h,
                    r_g: r.r_g,
                    projection_converged: p.map(|p| p.solution.converged),
                    projection_iterations: p.map(|p| p.solution.iterations),
                }
            })
            .collect();
        Self {
            n_samples: batch.states.len(),
            mean_r_h: batch.mean_r_h(),
            max_r_h: max(|r| r.r_h),
            mean_r_g: batch.mean_r_g(),
            max_r_g: max(|r| r.r_g),
            projected: batch.projections.as_ref().map(Vec::len),
            projection_converged: batch
                .projections
                .as_ref()
                .map(|ps| ps.iter().filter(|p| p.solution.converged).count()),
            samples,
        }
    }
}

/// Contents of `timing.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mode: SamplerMode,
    pub steps: usize,
    pub n_samples: usize,
    /// Wall-clock seconds of the reverse process only.
    pub seconds: f64,
    pub seconds_per_sample: f64,
}

fn load_model_inputs(
    cfg: &ExperimentConfig,
    grid: &GridCase,
    manifest: &mut Manifest,
) -> Result<(Checkpoint, NormFile)> {
    let ck_path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let data_dir = cfg.require(&cfg.data_dir, "data")?;
    let ck = Checkpoint::load(ck_path)?;
    manifest.input_file(ck_path)?;
    let norm_path = data_dir.join(NORM_JSON);
    let norm: NormFile = files::read_json(&norm_path)?;
    manifest.input_file(&norm_path)?;
    if norm.digest != norm.stats().digest_hex() {
        return Err(CliError::format(norm_path, "digest does not match the stored statistics"));
    }
    ck.check_binding(&norm.digest, &grid.digest_hex())?;
    manifest.bind("norm_digest", norm.digest.clone());
    Ok((ck, norm))
}

/// Draw samples from a trained checkpoint.
pub fn sample_cmd(cfg: &ExperimentConfig) -> Result<(ResidualSummary, Timing)> {
    let mut manifest = Manifest::new("sample", Some(cfg.sampler.seed), cfg)?;
    let grid = load_grid(cfg, &mut manifest)?;
    let (ck, norm) = load_model_inputs(cfg, &grid, &mut manifest)?;
    let sched = ck.schedule.build()?;
    cfg.sampler.validate(&sched)?;
    let (states, seconds) =
        bench::timed_generate(&ck.model, &sched, &grid, &norm.stats(), &cfg.sampler)?;
    let batch = finish(states, &grid, &sched, &cfg.sampler)?;
    let residuals = ResidualSummary::of(&batch);
    let timing = Timing {
        mode: cfg.sampler.mode,
        steps: batch.timesteps.len(),
        n_samples: batch.states.len(),
        seconds,
        seconds_per_sample: seconds / batch.states.len() as f64,
    };
    log::info!(
        "{} samples in {seconds:.3} s, mean r_h {:.3e}, mean r_g {:.3e}",
        timing.n_samples,
        residuals.mean_r_h,
        residuals.mean_r_g
    );
    files::ensure_dir(&cfg.out)?;
    files::write_atomic(
        &cfg.out.join(SAMPLES_CSV),
        &dataset::states_csv(&batch.states, &grid)?,
    )?;
    files::write_json(&cfg.out.join(RESIDUALS_JSON), &residuals)?;
    files::write_json(&cfg.out.join(TIMING_JSON), &timing)?;
    // timing.json varies run to run and is left out of the digests.
    manifest.outputs_in(&cfg.out, &[SAMPLES_CSV, RESIDUALS_JSON])?;
    manifest.write(&cfg.out)?;
    Ok((residuals, timing))
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
        .collect()
}

/// Compare a sample directory against a real dataset directory.
pub fn eval_cmd(cfg: &ExperimentConfig) -> Result<pfdiff_core::metrics::FidelityReport> {
    let mut manifest = Manifest::new("eval", cfg.seed, cfg)?;
    let grid = load_grid(cfg, &mut manifest)?;
    let data_dir = cfg.require(&cfg.data_dir, "data")?;
    let samples_dir = cfg.require(&cfg.samples_dir, "samples")?;
    let (real, _) = dataset::read_dataset(data_dir, &grid)?;
    record_dataset_inputs(&mut manifest, data_dir)?;

    let produced = Manifest::read(samples_dir)?;
    produced.verify_output(samples_dir, SAMPLES_CSV)?;
    let bound = produced.bindings.get("grid_hash").cloned().unwrap_or_default();
    if bound != real.grid_hash {
        return Err(CliError::Digest {
            what: format!("grid of {}", samples_dir.display()),
            expected: real.grid_hash.clone(),
            actual: bound,
        });
    }
    let samples_path = samples_dir.join(SAMPLES_CSV);
    manifest.input_file(&samples_path)?;
    let syn = dataset::read_states_csv(&samples_path, &grid)?;

    let labels = grid.feature_labels();
    let report = fidelity_report(&real.states, &syn, labels.clone(), cfg.eval.n_bins)?;
    log::info!("mean W1 {:.4}, mean KL {:.4}", report.w1_mean, report.kl_mean);

    let buses: Vec<usize> = if cfg.eval.plot_buses.is_empty() {
        (0..grid.n()).collect()
    } else {
        cfg.eval
            .plot_buses
            .iter()
            .map(|id| {
                grid.bus_ids()
                    .position(|b| b == *id)
                    .ok_or_else(|| CliError::Config(format!("eval.plot_buses: unknown bus {id}")))
            })
            .collect::<Result<_>>()?
    };
    let sel = PlotSelection::for_buses(grid.n(), &buses, cfg.eval.n_bins);
    let (hists, scatters) = plot_data(&real.states, &syn, &labels, &sel)?;

    files::ensure_dir(&cfg.out)?;
    files::write_json(&cfg.out.join(FIDELITY_JSON), &report)?;
    let mut written = vec![FIDELITY_JSON.to_string()];
    for h in &hists {
        let name = format!("hist_{}.csv", file_stem(&h.label));
        let rows = (0..h.real.len()).map(|b| {
            vec![
                h.edges[b].to_string(),
                h.edges[b + 1].to_string(),
                h.real[b].to_string(),
                h.syn[b].to_string(),
            ]
        });
        let bytes = files::csv_bytes(&["bin_lo", "bin_hi", "real", "syn"], rows)?;
        files::write_atomic(&cfg.out.join(&name), &bytes)?;
        written.push(name);
    }
    for s in &scatters {
        let name = format!("scatter_{}.csv", file_stem(&s.name));
        let rows = s
            .real
            .iter()
            .map(|(x, y)| ("real", x, y))
            .chain(s.syn.iter().map(|(x, y)| ("syn", x, y)))
            .map(|(set, x, y)| vec![set.to_string(), x.to_string(), y.to_string()]);
        let header = ["set", s.x_label.as_str(), s.y_label.as_str()];
        files::write_atomic(&cfg.out.join(&name), &files::csv_bytes(&header, rows)?)?;
        written.push(name);
    }
    let names: Vec<&str> = written.iter().map(String::as_str).collect();
    manifest.outputs_in(&cfg.out, &names)?;
    manifest.write(&cfg.out)?;
    Ok(report)
}

/// Time DDPM and DDIM over the configured sample counts.
pub fn bench_cmd(cfg: &ExperimentConfig) -> Result<bench::BenchSummary> {
    let mut manifest = Manifest::new("bench", Some(cfg.sampler.seed), cfg)?;
    let grid = load_grid(cfg, &mut manifest)?;
    let (ck, norm) = load_model_inputs(cfg, &grid, &mut manifest)?;
    let sched = ck.schedule.build()?;
    let configs = bench::bench_configs(&cfg.sampler, cfg.bench.guide_ddpm);
    for c in &configs {
        c.validate(&sched)?;
    }
    let rows = bench::run_bench(
        &ck.model,
        &sched,
        &grid,
        &norm.stats(),
        &configs,
        &cfg.bench.sizes,
        cfg.bench.repeats,
        |r| log::info!("{} n={} steps={} {:.3} s", r.method, r.n_samples, r.steps, r.seconds),
    )?;
    let summary = bench::summarize(&rows)?;
    files::ensure_dir(&cfg.out)?;
    files::write_atomic(&cfg.out.join(BENCH_CSV), &bench_csv(&rows)?)?;
    files::write_json(&cfg.out.join(BENCH_SUMMARY_JSON), &summary)?;
    manifest.write(&cfg.out)?;
    log::info!("speedup at n={}: {:.1}x", summary.largest_n, summary.speedup);
    if !summary.linear {
        return Err(CliError::Numerical(format!(
            "sampling time is not linear in the sample count (R^2 {:?})",
            summary.methods.iter().map(|m| m.fit.r2).collect::<Vec<_>>()
        )));
    }
    Ok(summary)
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<Vec<u8>> {
    files::csv_bytes(
        &["method", "n_samples", "steps", "seconds", "runs"],
        rows.iter().map(|r| {
            vec![
                r.method.clone(),
                r.n_samples.to_string(),
                r.steps.to_string(),
                r.seconds.to_string(),
                r.runs.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub width: usize,
    pub n_params: usize,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
    pub best_val_loss: f64,
}

/// Train one model per hidden width and record the validation curves.
pub fn capacity_sweep_cmd(cfg: &ExperimentConfig) -> Result<Vec<CapacityResult>> {
    let mut manifest = Manifest::new("capacity-sweep", Some(cfg.train.seed), cfg)?;
    let grid = load_grid(cfg, &mut manifest)?;
    let data_dir = cfg.require(&cfg.data_dir, "data")?;
    let (ds, _) = dataset::read_dataset(data_dir, &grid)?;
    record_dataset_inputs(&mut manifest, data_dir)?;
    let rows = ds.normalized()?;
    let sched = NoiseSchedule::standard();
    let mut curve = Vec::new();
    let mut results = Vec::new();
    for &width in &cfg.capacity.widths {
        let tc = TrainConfig {
            hidden_width: width,
            epochs: cfg.capacity.epochs,
            ..cfg.train.clone()
        };
        let (model, log) = train(&rows, &ds.norm, &tc, &sched, |_, _| {})?;
        for e in &log.epochs {
            curve.push(vec![
                width.to_string(),
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
            ]);
        }
        let result = CapacityResult {
            width,
            n_params: model.n_params(),
            initial_val_loss: log.initial_val_loss,
            final_val_loss: log.final_val_loss().unwrap_or(f64::NAN),
            best_val_loss: log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min),
        };
        log::info!("width {width}: final val {:.5}", result.final_val_loss);
        results.push(result);
    }
    files::ensure_dir(&cfg.out)?;
    files::write_atomic(
        &cfg.out.join(CAPACITY_CSV),
        &files::csv_bytes(&["width", "epoch", "train_loss", "val_loss"], curve)?,
    )?;
    files::write_json(&cfg.out.join(CAPACITY_SUMMARY_JSON), &results)?;
    manifest.outputs_in(&cfg.out, &[CAPACITY_CSV, CAPACITY_SUMMARY_JSON])?;
    manifest.write(&cfg.out)?;
    Ok(results)
}
