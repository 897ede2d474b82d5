#![allow(dead_code)]

use pfdiff_core::casefile;
use pfdiff_core::rng::{self, StreamRng};
use pfdiff_core::{GridCase, StateVector};

pub fn case6() -> GridCase {
    casefile::parse_case_str(casefile::CASE6WW).unwrap()
}

pub fn case24() -> GridCase {
    casefile::parse_case_str(casefile::CASE24_RTS).unwrap()
}

fn uniform(r: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng::uniform(r)
}

/// A state in a plausible operating region, not necessarily feasible.
pub fn random_state(grid: &GridCase, seed: u64) -> StateVector {
    let mut r = rng::stream(seed, 77);
    let n = grid.n();
    let p: Vec<f64> = (0..n).map(|_| uniform(&mut r, -1.5, 1.5)).collect();
    let q: Vec<f64> = (0..n).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
    let v: Vec<f64> = (0..n).map(|_| uniform(&mut r, 0.85, 1.15)).collect();
    let th: Vec<f64> = (0..n).map(|_| uniform(&mut r, -0.4, 0.4)).collect();
    StateVector::from_parts(&p, &q, &v, &th).unwrap()
}

/// Power-balance mismatch from complex nodal currents, written without the
/// trigonometric expansion used by the library.
pub fn mismatch_oracle(s: &StateVector, grid: &GridCase) -> Vec<f64> {
    let n = grid.n();
    let (v, th) = (s.v(), s.theta());
    let ure: Vec<f64> = (0..n).map(|i| v[i] * th[i].cos()).collect();
    let uim: Vec<f64> = (0..n).map(|i| v[i] * th[i].sin()).collect();
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let (mut cre, mut cim) = (0.0, 0.0);
        for j in 0..n {
            let (g, b) = (grid.ybus.g(i, j), grid.ybus.b(i, j));
            cre += g * ure[j] - b * uim[j];
            cim += g * uim[j] + b * ure[j];
        }
        // S = U · conj(I)
        let p = ure[i] * cre + uim[i] * cim;
        let q = uim[i] * cre - ure[i] * cim;
        out[i] = s.p()[i] - p;
        out[n + i] = s.q()[i] - q;
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
