mod common;

use common::*;
use pfdiff_core::datagen::*;
use pfdiff_core::powerflow::{residual_penalties, residual_penalties_with, LimitSet};
use pfdiff_core::{Error, StateVector};

#[test]
fn generation_is_deterministic_and_feasible() {
    let grid = case6();
    let cfg = ScenarioConfig { n_samples: 300, seed: 21, ..Default::default() };
    let (a, report) = generate_with_report(&grid, &cfg).unwrap();
    let b = generate(&grid, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 300);
    assert_eq!(report.attempts, 300 + report.nonconverged + report.infeasible);
    for s in &a.states {
        let r = residual_penalties(s, &grid).unwrap();
        assert!(r.r_h < GENERATED_TOLERANCE);
        assert_eq!(r.r_g, 0.0);
    }
    let other = generate(&grid, &ScenarioConfig { seed: 22, ..cfg }).unwrap();
    assert_ne!(a.states, other.states);
}

#[test]
fn normalized_rows_lie_in_unit_box() {
    let grid = case6();
    let ds = generate(&grid, &ScenarioConfig { n_samples: 200, ..Default::default() }).unwrap();
    let rows = ds.normalized().unwrap();
    assert_eq!(rows.len(), 200 * 24);
    assert!(rows.iter().all(|v| (-1.0..=1.0).contains(v)));
    for k in 0..24 {
        let col: Vec<f64> = rows.iter().skip(k).step_by(24).copied().collect();
        if !ds.norm.is_constant(k) {
            assert!(col.contains(&-1.0) && col.contains(&1.0));
        }
    }
    let back = denormalize(&rows, &ds.norm).unwrap();
    for (s, b) in ds.states.iter().zip(&back) {
        assert!(s.distance(b) < 1e-12);
    }
}

#[test]
fn network_screen_on_large_case() {
    let grid = case24();
    let cfg = ScenarioConfig { n_samples: 50, screen_limits: LimitSet::NETWORK, ..Default::default() };
    let ds = generate(&grid, &cfg).unwrap();
    for s in &ds.states {
        let r = residual_penalties_with(s, &grid, LimitSet::NETWORK).unwrap();
        assert!(r.r_h < GENERATED_TOLERANCE && r.r_g == 0.0);
        for &k in &grid.zero_injection_features() {
            assert_eq!(s.as_slice()[k], 0.0);
        }
    }
}

#[test]
fn exhausted_budget_reported() {
    let grid = case6();
    let cfg = ScenarioConfig { n_samples: 5, load_scale_range: [40.0, 50.0], ..Default::default() };
    match generate(&grid, &cfg) {
        Err(Error::GenerationExhausted { requested: 5, accepted: 0, attempts: 50 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn split_refits_statistics_on_both_halves() {
    let grid = case6();
    let ds = generate(&grid, &ScenarioConfig { n_samples: 100, ..Default::default() }).unwrap();
    let all = ds.states.clone();
    let (train, test) = ds.split_tail(20, &grid).unwrap();
    assert_eq!(train.states[..], all[..80]);
    assert_eq!(test.states[..], all[80..]);
    assert_eq!(train.norm, NormStats::fit(&all[..80]).unwrap());
    assert!(train.check_grid(&grid).is_ok());
    assert!(matches!(train.check_grid(&case24()), Err(Error::DigestMismatch { .. })));
}

#[test]
fn ingest_screen_flags_infeasible_rows() {
    let grid = case6();
    let ds = generate(&grid, &ScenarioConfig { n_samples: 10, ..Default::default() }).unwrap();
    let mut states: Vec<StateVector> = ds.states.clone();
    states[3].as_mut_slice()[0] += 0.5;
    states[7].as_mut_slice()[14] = 1.5;
    let (ok, bad) = screen_feasible(states, &grid).unwrap();
    assert_eq!(ok.len(), 8);
    assert_eq!(bad, vec![3, 7]);
}

#[test]
fn digest_tracks_statistics() {
    let grid = case6();
    let ds = generate(&grid, &ScenarioConfig { n_samples: 30, ..Default::default() }).unwrap();
    let mut other = ds.norm.clone();
    assert_eq!(other.digest(), ds.norm.digest());
    other.max[5] += 1e-12;
    assert_ne!(other.digest(), ds.norm.digest());
    assert_eq!(ds.norm.digest_hex().len(), 64);
}
