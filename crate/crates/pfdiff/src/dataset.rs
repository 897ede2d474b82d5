//! On-disk dataset layout: `dataset.csv`, `norm.json`, `meta.json`.
//!
//! `dataset.csv` has a header of feature labels (`P_<id>`, ..., `theta_<id>`)
//! and one state per row in per-unit, radians for angles. Values are written
//! in shortest round-trip decimal form, so reading a file back reproduces
//! the stored states bit for bit.

use std::path::{Path, PathBuf};

use pfdiff_core::datagen::{
    screen_feasible_with, Dataset, GenerationReport, NormStats, Provenance, ScenarioConfig,
};
use pfdiff_core::powerflow::LimitSet;
use pfdiff_core::{GridCase, StateVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::files;

pub const DATASET_CSV: &str = "dataset.csv";
pub const NORM_JSON: &str = "norm.json";
pub const META_JSON: &str = "meta.json";

/// Contents of `norm.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormFile {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub frozen: bool,
    pub grid_hash: String,
    /// Digest of `(min, max)` that models trained on this data are bound to.
    pub digest: String,
}

impl NormFile {
    pub fn new(norm: &NormStats, grid_hash: &str) -> Self {
        Self {
            min: norm.min.clone(),
            max: norm.max.clone(),
            frozen: norm.frozen,
            grid_hash: grid_hash.to_string(),
            digest: norm.digest_hex(),
        }
    }

    pub fn stats(&self) -> NormStats {
        NormStats {
            min: self.min.clone(),
            max: self.max.clone(),
            frozen: self.frozen,
        }
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub provenance: Provenance,
    pub n_states: usize,
    pub case: String,
    /// Scenario configuration, for generated data.
    pub scenario: Option<ScenarioConfig>,
    pub seed: Option<u64>,
    pub attempts: Option<usize>,
    pub nonconverged: Option<usize>,
    pub infeasible: Option<usize>,
    /// Source file and rejected one-based data rows, for ingested data.
    pub source: Option<String>,
    pub rejected_rows: Vec<usize>,
}

impl DatasetMeta {
    pub fn generated(case: &str, cfg: &ScenarioConfig, report: &GenerationReport, n: usize) -> Self {
        Self {
            provenance: Provenance::Generated,
            n_states: n,
            case: case.to_string(),
            scenario: Some(cfg.clone()),
            seed: Some(cfg.seed),
            attempts: Some(report.attempts),
            nonconverged: Some(report.nonconverged),
            infeasible: Some(report.infeasible),
            source: None,
            rejected_rows: Vec::new(),
        }
    }
}

/// Serialize states with the grid's feature labels as header.
pub fn states_csv(states: &[StateVector], grid: &GridCase) -> Result<Vec<u8>> {
    let labels = grid.feature_labels();
    let header: Vec<&str> = labels.iter().map(String::as_str).collect();
    files::csv_bytes(
        &header,
        states
            .iter()
            .map(|s| s.as_slice().iter().map(|v| v.to_string()).collect::<Vec<_>>()),
    )
}

/// Parse a state CSV, checking the header against the grid.
pub fn read_states_csv(path: &Path, grid: &GridCase) -> Result<Vec<StateVector>> {
    let schema = |row: usize, message: String| CliError::Schema {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => schema(0, format!("{other:?}")),
        })?;
    let expected = grid.feature_labels();
    let header = reader.headers().map_err(|e| schema(0, e.to_string()))?.clone();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(schema(
            0,
            format!(
                "header must be the {} labels {}, ..., {}",
                expected.len(),
                expected[0],
                expected[expected.len() - 1]
            ),
        ));
    }
    let n = grid.n();
    let mut states = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| schema(row, e.to_string()))?;
        if record.len() != 4 * n {
            return Err(schema(row, format!("expected {} fields, found {}", 4 * n, record.len())));
        }
        let values = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| schema(row, format!("{f:?} is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        states.push(StateVector::from_vec(n, values)?);
    }
    if states.is_empty() {
        return Err(schema(0, "no data rows".into()));
    }
    Ok(states)
}

/// Write the three dataset files into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset, grid: &GridCase, meta: &DatasetMeta) -> Result<()> {
    files::ensure_dir(dir)?;
    files::write_atomic(&dir.join(DATASET_CSV), &states_csv(&ds.states, grid)?)?;
    files::write_json(&dir.join(NORM_JSON), &NormFile::new(&ds.norm, &ds.grid_hash))?;
    files::write_json(&dir.join(META_JSON), meta)
}

/// Load a dataset directory, verifying it belongs to `grid` and that the
/// stored statistics match the stored states.
pub fn read_dataset(dir: &Path, grid: &GridCase) -> Result<(Dataset, DatasetMeta)> {
    let norm_path = dir.join(NORM_JSON);
    let norm_file: NormFile = files::read_json(&norm_path)?;
    let meta: DatasetMeta = files::read_json(&dir.join(META_JSON))?;
    let actual = grid.digest_hex();
    if norm_file.grid_hash != actual {
        return Err(CliError::Digest {
            what: format!("grid of {}", dir.display()),
            expected: norm_file.grid_hash,
            actual,
        });
    }
    let states = read_states_csv(&dir.join(DATASET_CSV), grid)?;
    let norm = norm_file.stats();
    if NormStats::fit(&states)? != norm || norm.digest_hex() != norm_file.digest {
        return Err(CliError::format(norm_path, "statistics do not match dataset.csv"));
    }
    let ds = Dataset {
        states,
        norm,
        grid_hash: actual,
        provenance: meta.provenance,
    };
    Ok((ds, meta))
}

/// Outcome of an ingest: the dataset and the one-based data rows that failed
/// the feasibility screen.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rejected_rows: Vec<usize>,
    pub total_rows: usize,
}

/// Read externally solved states and keep those within the ingest tolerance
/// on `limits`. Fails when more than half of the rows are rejected.
pub fn ingest_csv(path: &Path, grid: &GridCase, limits: LimitSet) -> Result<Ingested> {
    let states = read_states_csv(path, grid)?;
    let total = states.len();
    let (accepted, rejected) = screen_feasible_with(states, grid, limits)?;
    let rows: Vec<usize> = rejected.iter().map(|k| k + 1).collect();
    if 2 * rows.len() > total {
        return Err(CliError::Feasibility {
            rejected: rows.len(),
            total,
            rows,
        });
    }
    for r in &rows {
        log::warn!("{}: row {r} rejected by the feasibility screen", path.display());
    }
    Ok(Ingested {
        dataset: Dataset::new(accepted, grid, Provenance::Ingested)?,
        rejected_rows: rows,
        total_rows: total,
    })
}

pub fn ingest_meta(case: &str, source: &Path, ing: &Ingested) -> DatasetMeta {
    DatasetMeta {
        provenance: Provenance::Ingested,
        n_states: ing.dataset.len(),
        case: case.to_string(),
        scenario: None,
        seed: None,
        attempts: None,
        nonconverged: None,
        infeasible: None,
        source: Some(PathBuf::from(source).display().to_string()),
        rejected_rows: ing.rejected_rows.clone(),
    }
}
