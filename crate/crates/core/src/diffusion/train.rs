use alloc::vec;
use alloc::vec::Vec;

use libm::sqrt;

use super::{Activation, Adam, DenoiserModel, NoiseSchedule};
use crate::datagen::NormStats;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub hidden_width: usize,
    pub n_hidden_layers: usize,
    pub time_dim: usize,
    pub activation: Activation,
    /// Noise draws per validation state; fixed for the whole run.
    pub validation_repeats: usize,
    pub lr_schedule: LrSchedule,
}

/// Learning rate as a function of the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `learning_rate` at the first epoch to zero after the
    /// last.
    Cosine,
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = (epoch - 1) as f64 / epochs as f64;
                0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * frac))
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            validation_fraction: 0.1,
            hidden_width: 512,
            n_hidden_layers: 3,
            time_dim: 64,
            activation: Activation::Silu,
            validation_repeats: 4,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::Validation("validation_fraction must lie in (0, 0.5)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.validation_repeats == 0 {
            return Err(Error::Validation("epochs, batch_size and validation_repeats must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainLog {
    /// Validation loss of the untrained model.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub n_train: usize,
    pub n_val: usize,
}

impl TrainLog {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_loss)
    }
}

/// Fixed `(x_t, t, ε)` triples used to score a model.
struct EvalSet {
    x_t: Vec<f64>,
    ts: Vec<usize>,
    eps: Vec<f64>,
}

impl EvalSet {
    fn draw(rows: &[&[f64]], repeats: usize, sched: &NoiseSchedule, seed: u64) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let mut r = rng::stream(seed, 2);
        let mut set = EvalSet {
            x_t: Vec::with_capacity(rows.len() * repeats * d),
            ts: Vec::with_capacity(rows.len() * repeats),
            eps: Vec::with_capacity(rows.len() * repeats * d),
        };
        for _ in 0..repeats {
            for x0 in rows {
                let t = rng::below(&mut r, sched.steps());
                push_noised(&mut set.x_t, &mut set.eps, x0, t, sched, &mut r);
                set.ts.push(t);
            }
        }
        set
    }

    fn loss(&self, model: &DenoiserModel, chunk: usize) -> Result<f64> {
        let d = model.state_dim;
        let mut total = 0.0;
        for (k, ts) in self.ts.chunks(chunk).enumerate() {
            let lo = k * chunk * d;
            let hi = lo + ts.len() * d;
            total += model.loss(&self.x_t[lo..hi], ts, &self.eps[lo..hi])? * ts.len() as f64;
        }
        Ok(total / self.ts.len() as f64)
    }
}

fn push_noised(
    x_t: &mut Vec<f64>,
    eps: &mut Vec<f64>,
    x0: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    r: &mut rng::StreamRng,
) {
    let ab = sched.alpha_bar[t];
    let (a, s) = (sqrt(ab), sqrt(1.0 - ab));
    for &x in x0 {
        let e = rng::normal(r);
        eps.push(e);
        x_t.push(a * x + s * e);
    }
}

/// Mean ε-prediction loss of `model` on `rows` at a fixed timestep with the
/// given noise (row-major, same shape as `rows`).
pub fn eval_loss(
    model: &DenoiserModel,
    rows: &[f64],
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<f64> {
    let d = model.state_dim;
    let n = rows.len() / d;
    let mut x_t = Vec::with_capacity(rows.len());
    let ab = sched.alpha_bar[t];
    let (a, s) = (sqrt(ab), sqrt(1.0 - ab));
    for (x, e) in rows.iter().zip(eps) {
        x_t.push(a * x + s * e);
    }
    model.loss(&x_t, &vec![t; n], eps)
}

/// Train a fresh model on normalized rows (row-major, `norm.dim()` wide).
///
/// The rows are shuffled once and split into training and validation parts;
/// each epoch reshuffles the training part, draws `t ~ U{0..T-1}` and
/// `ε ~ N(0, I)` per row and takes one Adam step per mini-batch.
/// `on_epoch` runs after every epoch with the current model.
pub fn train(
    rows: &[f64],
    norm: &NormStats,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    mut on_epoch: impl FnMut(&EpochRecord, &DenoiserModel),
) -> Result<(DenoiserModel, TrainLog)> {
    cfg.validate()?;
    if !norm.frozen {
        return Err(Error::NormNotFrozen);
    }
    let d = norm.dim();
    if d == 0 || rows.is_empty() || rows.len() % d != 0 {
        return Err(Error::EmptySample);
    }
    let n = rows.len() / d;
    let row = |k: usize| &rows[k * d..(k + 1) * d];

    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(cfg.seed, 0), &mut order);
    // A single state serves as both training and validation data.
    let n_val = if n < 2 {
        0
    } else {
        (libm::ceil(n as f64 * cfg.validation_fraction) as usize).clamp(1, n - 1)
    };
    let (val_idx, train_idx) = if n_val == 0 {
        (order.clone(), order)
    } else {
        let (v, t) = order.split_at(n_val);
        (v.to_vec(), t.to_vec())
    };

    let mut model = DenoiserModel::new(
        d,
        cfg.time_dim,
        cfg.hidden_width,
        cfg.n_hidden_layers,
        cfg.activation,
        cfg.seed,
    )?;
    model.norm_digest = Some(norm.digest_hex());

    let val_rows: Vec<&[f64]> = val_idx.iter().map(|&k| row(k)).collect();
    let val = EvalSet::draw(&val_rows, cfg.validation_repeats, sched, cfg.seed);
    let eval_chunk = 512;
    let mut log = TrainLog {
        initial_val_loss: val.loss(&model, eval_chunk)?,
        epochs: Vec::with_capacity(cfg.epochs),
        n_train: train_idx.len(),
        n_val: val_idx.len(),
    };

    let mut opt = Adam::new(
        model.n_params(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
    );
    let mut grad = vec![0.0; model.n_params()];
    let mut epoch_order = train_idx;
    let bs = cfg.batch_size.min(epoch_order.len());
    let mut x_t = Vec::with_capacity(bs * d);
    let mut eps = Vec::with_capacity(bs * d);
    let mut ts = Vec::with_capacity(bs);

    for epoch in 1..=cfg.epochs {
        let mut r = rng::stream(cfg.seed, 1000 + epoch as u64);
        rng::shuffle(&mut r, &mut epoch_order);
        opt.lr = cfg.lr_schedule.rate(cfg.learning_rate, epoch, cfg.epochs);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_order.chunks(bs) {
            x_t.clear();
            eps.clear();
            ts.clear();
            for &k in batch {
                let t = rng::below(&mut r, sched.steps());
                push_noised(&mut x_t, &mut eps, row(k), t, sched, &mut r);
                ts.push(t);
            }
            let loss = model.loss_and_grad(&x_t, &ts, &eps, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            opt.step(&mut model.params, &grad);
            if !model.params_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum += loss;
            batches += 1;
        }
        let val_loss = val.loss(&model, eval_chunk)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: sum / batches as f64,
            val_loss,
        };
        on_epoch(&rec, &model);
        log.epochs.push(rec);
    }
    Ok((model, log))
}
