use std::fs;

use pfdiff::checkpoint::Checkpoint;
use pfdiff::dataset::{self, DatasetMeta};
use pfdiff::error::CliError;
use pfdiff::files;
use pfdiff_core::casefile;
use pfdiff_core::datagen::{generate_with_report, ScenarioConfig};
use pfdiff_core::diffusion::{Activation, DenoiserModel, NoiseSchedule, TrainConfig};
use pfdiff_core::powerflow::LimitSet;
use pfdiff_core::rng;
use proptest::prelude::*;

fn case6() -> pfdiff_core::GridCase {
    casefile::bundled("case6ww").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip_is_exact(seed in any::<u64>(), width in 1usize..12, layers in 1usize..4) {
        let mut model = DenoiserModel::new(24, 6, width, layers, Activation::Silu, seed).unwrap();
        let mut r = rng::stream(seed, 1);
        for p in &mut model.params {
            *p = rng::normal(&mut r) * 10f64.powi(rng::below(&mut r, 20) as i32 - 10);
        }
        model.norm_digest = Some("ab".repeat(32));
        let ck = Checkpoint::new(model, &NoiseSchedule::standard(), "ab".repeat(32), "cd".repeat(32), TrainConfig::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        prop_assert_eq!(&back, &ck);
        let bits = |m: &DenoiserModel| m.params.iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.model), bits(&ck.model));
    }
}

#[test]
fn checkpoint_rejects_foreign_data_and_bad_versions() {
    let mut model = DenoiserModel::new(24, 4, 3, 1, Activation::Relu, 0).unwrap();
    model.norm_digest = Some("11".into());
    let ck = Checkpoint::new(model, &NoiseSchedule::standard(), "11".into(), "22".into(), TrainConfig::default());
    assert!(ck.check_binding("11", "22").is_ok());
    assert!(matches!(ck.check_binding("12", "22"), Err(CliError::Digest { .. })));
    assert!(matches!(ck.check_binding("11", "23"), Err(CliError::Digest { .. })));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let mut bad = ck.clone();
    bad.version = 99;
    bad.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(CliError::Format { .. })));
    let mut bad = ck;
    bad.model.params.pop();
    bad.save(&path).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(CliError::Core(_))));
}

#[test]
fn dataset_directory_round_trip() {
    let grid = case6();
    let cfg = ScenarioConfig { n_samples: 50, seed: 3, ..Default::default() };
    let (ds, report) = generate_with_report(&grid, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = DatasetMeta::generated("case6ww", &cfg, &report, ds.len());
    dataset::write_dataset(dir.path(), &ds, &grid, &meta).unwrap();
    let (back, back_meta) = dataset::read_dataset(dir.path(), &grid).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back_meta, meta);

    let other = casefile::bundled("case24_rts").unwrap();
    assert!(matches!(dataset::read_dataset(dir.path(), &other), Err(CliError::Digest { .. })));
}

#[test]
fn edited_dataset_detected() {
    let grid = case6();
    let (ds, report) = generate_with_report(&grid, &ScenarioConfig { n_samples: 20, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    dataset::write_dataset(dir.path(), &ds, &grid, &DatasetMeta::generated("case6ww", &ScenarioConfig::default(), &report, 20)).unwrap();
    let csv = dir.path().join(dataset::DATASET_CSV);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.truncate(lines.len() - 5);
    fs::write(&csv, lines.join("\n")).unwrap();
    assert!(matches!(dataset::read_dataset(dir.path(), &grid), Err(CliError::Format { .. })));
}

fn write_rows(dir: &std::path::Path, header: &str, rows: &[Vec<f64>]) -> std::path::PathBuf {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        let fields: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    let path = dir.join("in.csv");
    fs::write(&path, text).unwrap();
    path
}

fn feasible_rows(n: usize) -> Vec<Vec<f64>> {
    let grid = case6();
    pfdiff_core::datagen::generate(&grid, &ScenarioConfig { n_samples: n, ..Default::default() })
        .unwrap()
        .states
        .iter()
        .map(|s| s.as_slice().to_vec())
        .collect()
}

#[test]
fn ingest_reports_rejected_rows() {
    let grid = case6();
    let header = grid.feature_labels().join(",");
    let mut rows = feasible_rows(10);
    rows[2][0] += 0.3;
    rows[8][20] += 0.01;
    let dir = tempfile::tempdir().unwrap();
    let path = write_rows(dir.path(), &header, &rows);
    let ing = dataset::ingest_csv(&path, &grid, LimitSet::ALL).unwrap();
    assert_eq!(ing.rejected_rows, vec![3, 9]);
    assert_eq!(ing.dataset.len(), 8);
    assert_eq!(ing.total_rows, 10);
    assert_eq!(ing.dataset.provenance, pfdiff_core::datagen::Provenance::Ingested);
}

#[test]
fn ingest_fails_when_most_rows_infeasible() {
    let grid = case6();
    let header = grid.feature_labels().join(",");
    let mut rows = feasible_rows(5);
    for r in rows.iter_mut().take(3) {
        r[1] += 1.0;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = write_rows(dir.path(), &header, &rows);
    match dataset::ingest_csv(&path, &grid, LimitSet::ALL) {
        Err(CliError::Feasibility { rejected: 3, total: 5, rows }) => assert_eq!(rows, vec![1, 2, 3]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn ingest_schema_errors() {
    let grid = case6();
    let dir = tempfile::tempdir().unwrap();
    let rows = feasible_rows(3);

    let wrong_header = grid.feature_labels()[1..].join(",") + ",X";
    let path = write_rows(dir.path(), &wrong_header, &rows);
    assert!(matches!(dataset::ingest_csv(&path, &grid, LimitSet::ALL), Err(CliError::Schema { row: 0, .. })));

    let header = grid.feature_labels().join(",");
    let mut short = rows.clone();
    short[1].pop();
    let path = write_rows(dir.path(), &header, &short);
    assert!(matches!(dataset::ingest_csv(&path, &grid, LimitSet::ALL), Err(CliError::Schema { row: 2, .. })));

    let path = dir.path().join("nan.csv");
    let mut text = header.clone() + "\n";
    text.push_str(&vec!["nan"; 24].join(","));
    fs::write(&path, text).unwrap();
    assert!(matches!(dataset::ingest_csv(&path, &grid, LimitSet::ALL), Err(CliError::Schema { row: 1, .. })));
}

#[test]
fn atomic_write_replaces_whole_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("f.txt");
    files::write_atomic(&path, b"first version, longer").unwrap();
    files::write_atomic(&path, b"second").unwrap();
    assert_eq!(fs::read(&path).unwrap(), b"second");
    let leftovers = fs::read_dir(path.parent().unwrap()).unwrap().count();
    assert_eq!(leftovers, 1);
}

#[test]
fn bundled_and_file_cases_agree() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("six.txt");
    fs::write(&path, casefile::CASE6WW).unwrap();
    let from_file = files::load_case(path.to_str().unwrap()).unwrap();
    assert_eq!(from_file, files::load_case("case6ww").unwrap());
    assert!(matches!(files::load_case("no-such-case"), Err(CliError::Config(_))));
}
