use alloc::vec::Vec;

use libm::sqrt;

use crate::{Error, Result};

/// Linear `β` schedule with the derived `α_t = 1 − β_t` and cumulative
/// `ᾱ_t = Π_{s≤t} α_s`. Timesteps are zero-based, `0..T`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseSchedule {
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Validation("schedule needs at least 2 steps".into()));
        }
        if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Validation(alloc::format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let last = (steps - 1) as f64;
        let beta: Vec<f64> = (0..steps)
            .map(|t| beta_start + (beta_end - beta_start) * t as f64 / last)
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
        })
    }

    /// `T = 1000`, `β ∈ [1e-4, 0.02]`.
    pub fn standard() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("standard schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `ᾱ` at a timestep, with `None` meaning the clean end where `ᾱ = 1`.
    pub fn alpha_bar_or_one(&self, t: Option<usize>) -> f64 {
        t.map_or(1.0, |t| self.alpha_bar[t])
    }

    /// Whether the terminal state carries less than 5% of the signal
    /// amplitude.
    pub fn reaches_noise(&self) -> bool {
        sqrt(self.alpha_bar[self.steps() - 1]) < 0.05
    }
}

/// `x_t = √ᾱ_t · x₀ + √(1 − ᾱ_t) · ε`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            actual: eps.len(),
        });
    }
    if t >= sched.steps() {
        return Err(Error::Validation(alloc::format!("timestep {t} out of range")));
    }
    let ab = sched.alpha_bar[t];
    let (a, s) = (sqrt(ab), sqrt(1.0 - ab));
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}
