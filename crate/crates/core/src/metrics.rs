//! One-dimensional distributional fidelity: empirical 1-Wasserstein
//! distance and histogram KL divergence, per feature.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::log;

use crate::datagen::NormStats;
use crate::powerflow::StateVector;
use crate::{Error, Result};

/// Additive per-bin smoothing for KL histograms.
pub const KL_SMOOTHING: f64 = 1e-10;

pub const DEFAULT_BINS: usize = 50;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Empirical 1-Wasserstein distance between two samples.
///
/// Equal sizes use the matched order statistics; otherwise the quantile
/// functions are integrated exactly over the merged grid of `i/|a|` and
/// `j/|b|` breakpoints.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (sa, sb) = (sorted(a), sorted(b));
    if sa.len() == sb.len() {
        let s: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / sa.len() as f64);
    }
    let (na, nb) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        // next breakpoints (i+1)/na and (j+1)/nb compared without rounding
        let ia = (i + 1) * nb;
        let jb = (j + 1) * na;
        let next = if ia <= jb {
            (i + 1) as f64 / na as f64
        } else {
            (j + 1) as f64 / nb as f64
        };
        total += (next - u) * (sa[i] - sb[j]).abs();
        u = next;
        if ia <= jb {
            i += 1;
        }
        if jb <= ia {
            j += 1;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KlEstimate {
    /// `KL(real ‖ syn)` in nats.
    pub value: f64,
    /// `real` has zero range; the value compares point masses instead of
    /// histograms.
    pub degenerate: bool,
}

fn smoothed(counts: &[usize], total: usize) -> Vec<f64> {
    let norm = 1.0 + counts.len() as f64 * KL_SMOOTHING;
    counts
        .iter()
        .map(|&c| (c as f64 / total as f64 + KL_SMOOTHING) / norm)
        .collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * log(pi / qi) } else { 0.0 })
        .sum::<f64>()
        .max(0.0)
}

/// Equal-width bins over `[lo, hi]`; values outside land in the edge bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_bins];
    let width = (hi - lo) / n_bins as f64;
    for &v in values {
        let k = if width > 0.0 {
            let raw = libm::floor((v - lo) / width);
            if raw.is_nan() || raw < 0.0 {
                0
            } else {
                (raw as usize).min(n_bins - 1)
            }
        } else {
            0
        };
        counts[k] += 1;
    }
    counts
}

/// Histogram estimate of `KL(real ‖ syn)` on the range of `real`.
///
/// When `real` is constant the estimate compares the point mass at that value
/// with the fraction of `syn` exactly equal to it, so any spread in `syn` is
/// heavily penalized and an exactly matching constant scores 0.
pub fn kl_divergence(real: &[f64], syn: &[f64], n_bins: usize) -> Result<KlEstimate> {
    if real.is_empty() || syn.is_empty() {
        return Err(Error::EmptySample);
    }
    if n_bins < 2 {
        return Err(Error::Validation("need at least 2 bins".into()));
    }
    let lo = real.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        let at = syn.iter().filter(|&&v| v == lo).count();
        let p = smoothed(&[real.len(), 0], real.len());
        let q = smoothed(&[at, syn.len() - at], syn.len());
        return Ok(KlEstimate {
            value: kl(&p, &q),
            degenerate: true,
        });
    }
    let p = smoothed(&histogram(real, lo, hi, n_bins), real.len());
    let q = smoothed(&histogram(syn, lo, hi, n_bins), syn.len());
    Ok(KlEstimate {
        value: kl(&p, &q),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FidelityReport {
    pub labels: Vec<String>,
    pub w1: Vec<f64>,
    pub w1_mean: f64,
    pub kl: Vec<f64>,
    pub kl_degenerate: Vec<bool>,
    /// Mean over non-degenerate features only.
    pub kl_mean: f64,
    pub n_real: usize,
    pub n_syn: usize,
    pub n_bins: usize,
    pub kl_direction: String,
    pub space: String,
}

fn column(states: &[Vec<f64>], k: usize) -> Vec<f64> {
    states.iter().map(|s| s[k]).collect()
}

/// Per-feature W1 and KL between real and synthetic states.
///
/// Both sets are normalized with min–max statistics fitted on `real`. A
/// feature that is constant in `real` collapses to zero under that scaling,
/// so its KL is computed on physical values instead and it is left out of
/// the KL mean.
pub fn fidelity_report(
    real: &[StateVector],
    syn: &[StateVector],
    labels: Vec<String>,
    n_bins: usize,
) -> Result<FidelityReport> {
    if real.is_empty() || syn.is_empty() {
        return Err(Error::EmptySample);
    }
    let norm = NormStats::fit(real)?;
    let d = norm.dim();
    if labels.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: labels.len(),
        });
    }
    let rn: Vec<Vec<f64>> = real
        .iter()
        .map(|s| norm.normalize(s.as_slice()))
        .collect::<Result<_>>()?;
    let sn: Vec<Vec<f64>> = syn
        .iter()
        .map(|s| norm.normalize(s.as_slice()))
        .collect::<Result<_>>()?;

    let mut w1 = Vec::with_capacity(d);
    let mut kl_vals = Vec::with_capacity(d);
    let mut degenerate = Vec::with_capacity(d);
    for k in 0..d {
        let (a, b) = (column(&rn, k), column(&sn, k));
        w1.push(wasserstein1(&a, &b)?);
        let est = if norm.is_constant(k) {
            let pa: Vec<f64> = real.iter().map(|s| s.as_slice()[k]).collect();
            let pb: Vec<f64> = syn.iter().map(|s| s.as_slice()[k]).collect();
            kl_divergence(&pa, &pb, n_bins)?
        } else {
            kl_divergence(&a, &b, n_bins)?
        };
        kl_vals.push(est.value);
        degenerate.push(est.degenerate);
    }
    let w1_mean = w1.iter().sum::<f64>() / d as f64;
    let kept: Vec<f64> = kl_vals
        .iter()
        .zip(&degenerate)
        .filter(|(_, &deg)| !deg)
        .map(|(v, _)| *v)
        .collect();
    let kl_mean = if kept.is_empty() {
        0.0
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    Ok(FidelityReport {
        labels,
        w1,
        w1_mean,
        kl: kl_vals,
        kl_degenerate: degenerate,
        kl_mean,
        n_real: real.len(),
        n_syn: syn.len(),
        n_bins,
        kl_direction: "real||syn".into(),
        space: "normalized (real min-max)".into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramData {
    pub feature: usize,
    pub label: String,
    /// `n_bins + 1` edges over the range of the real values.
    pub edges: Vec<f64>,
    pub real: Vec<usize>,
    pub syn: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterData {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub real: Vec<(f64, f64)>,
    pub syn: Vec<(f64, f64)>,
}

/// Which features and feature pairs to export for plotting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotSelection {
    pub histograms: Vec<usize>,
    /// `(x feature, y feature)` pairs.
    pub scatters: Vec<(usize, usize)>,
    pub n_bins: usize,
}

impl PlotSelection {
    /// Histograms of every feature and `(P, Q)`, `(V, θ)` scatters for the
    /// given bus indices.
    pub fn for_buses(n: usize, buses: &[usize], n_bins: usize) -> Self {
        let mut scatters = Vec::new();
        for &i in buses {
            scatters.push((i, n + i));
            scatters.push((2 * n + i, 3 * n + i));
        }
        Self {
            histograms: (0..4 * n).collect(),
            scatters,
            n_bins,
        }
    }
}

/// Binned marginals and paired point clouds in physical units.
pub fn plot_data(
    real: &[StateVector],
    syn: &[StateVector],
    labels: &[String],
    sel: &PlotSelection,
) -> Result<(Vec<HistogramData>, Vec<ScatterData>)> {
    if real.is_empty() || syn.is_empty() {
        return Err(Error::EmptySample);
    }
    let bins = sel.n_bins.max(1);
    let col = |set: &[StateVector], k: usize| -> Vec<f64> { set.iter().map(|s| s.as_slice()[k]).collect() };
    let mut hists = Vec::with_capacity(sel.histograms.len());
    for &k in &sel.histograms {
        let (a, b) = (col(real, k), col(syn, k));
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let edges = (0..=bins)
            .map(|e| lo + (hi - lo) * e as f64 / bins as f64)
            .collect();
        hists.push(HistogramData {
            feature: k,
            label: labels[k].clone(),
            edges,
            real: histogram(&a, lo, hi, bins),
            syn: histogram(&b, lo, hi, bins),
        });
    }
    let mut scatters = Vec::with_capacity(sel.scatters.len());
    for &(kx, ky) in &sel.scatters {
        let pairs = |set: &[StateVector]| -> Vec<(f64, f64)> {
            set.iter().map(|s| (s.as_slice()[kx], s.as_slice()[ky])).collect()
        };
        scatters.push(ScatterData {
            name: alloc::format!("{}__{}", labels[kx], labels[ky]),
            x_label: labels[kx].clone(),
            y_label: labels[ky].clone(),
            real: pairs(real),
            syn: pairs(syn),
        });
    }
    Ok((hists, scatters))
}
