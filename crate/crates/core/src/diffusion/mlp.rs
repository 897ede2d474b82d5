use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, exp, log, sin, sqrt};

use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + exp(-x)),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + exp(-x));
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerShape {
    fn n_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Sinusoidal embedding of a timestep: `d/2` sines followed by `d/2` cosines
/// at geometrically spaced frequencies `10000^(-k/(d/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    let ln_base = log(10_000.0);
    for k in 0..half {
        let freq = exp(-ln_base * k as f64 / half as f64);
        let arg = t as f64 * freq;
        out[k] = sin(arg);
        out[half + k] = cos(arg);
    }
    out
}

/// Noise-prediction MLP `ε_θ(x_t, t)`.
///
/// Input is the noisy state concatenated with the time embedding; hidden
/// layers are affine maps followed by the activation; the output layer is
/// affine and zero-initialized. Parameters live in one flat vector, layer by
/// layer, each as a `fan_in × fan_out` row-major weight block followed by the
/// bias.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenoiserModel {
    pub state_dim: usize,
    pub time_dim: usize,
    pub activation: Activation,
    pub layers: Vec<LayerShape>,
    pub params: Vec<f64>,
    /// Digest of the normalization statistics the model was trained under.
    pub norm_digest: Option<String>,
}

/// Intermediate values of a forward pass needed by backprop.
struct Trace {
    /// Input to each layer, `rows × fan_in`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl DenoiserModel {
    pub fn new(
        state_dim: usize,
        time_dim: usize,
        hidden_width: usize,
        n_hidden: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if state_dim == 0 || hidden_width == 0 || n_hidden == 0 {
            return Err(Error::Validation("model dimensions must be positive".into()));
        }
        if time_dim < 2 || time_dim % 2 != 0 {
            return Err(Error::Validation("time embedding dimension must be even and >= 2".into()));
        }
        let mut layers = Vec::with_capacity(n_hidden + 1);
        let mut fan_in = state_dim + time_dim;
        for _ in 0..n_hidden {
            layers.push(LayerShape { fan_in, fan_out: hidden_width });
            fan_in = hidden_width;
        }
        layers.push(LayerShape { fan_in, fan_out: state_dim });

        let total = layers.iter().map(LayerShape::n_params).sum();
        let mut params = vec![0.0; total];
        let mut r = rng::stream(seed, 0x1417);
        let mut off = 0;
        for (l, shape) in layers.iter().enumerate() {
            let n = shape.n_params();
            if l + 1 < layers.len() {
                let bound = 1.0 / sqrt(shape.fan_in as f64);
                for p in &mut params[off..off + n] {
                    *p = bound * (2.0 * rng::uniform(&mut r) - 1.0);
                }
            }
            off += n;
        }
        Ok(Self {
            state_dim,
            time_dim,
            activation,
            layers,
            params,
            norm_digest: None,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.time_dim
    }

    /// Check that the layer table is consistent with the parameter vector.
    pub fn validate(&self) -> Result<()> {
        let total: usize = self.layers.iter().map(LayerShape::n_params).sum();
        let chained = self.layers.windows(2).all(|w| w[0].fan_out == w[1].fan_in);
        let ends = self.layers.first().map(|l| l.fan_in) == Some(self.input_dim())
            && self.layers.last().map(|l| l.fan_out) == Some(self.state_dim);
        if total != self.params.len() || !chained || !ends {
            return Err(Error::Validation("inconsistent model layout".into()));
        }
        Ok(())
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for shape in &self.layers {
            off.push(acc);
            acc += shape.n_params();
        }
        off
    }

    fn assemble_input(&self, xs: &[f64], ts: &[usize]) -> Result<Vec<f64>> {
        let d = self.state_dim;
        if xs.len() != ts.len() * d {
            return Err(Error::DimensionMismatch {
                expected: ts.len() * d,
                actual: xs.len(),
            });
        }
        let width = self.input_dim();
        let mut input = vec![0.0; ts.len() * width];
        let mut cached: Option<(usize, Vec<f64>)> = None;
        for (row, &t) in ts.iter().enumerate() {
            let emb = match &cached {
                Some((ct, e)) if *ct == t => e,
                _ => &cached.insert((t, time_embedding(t, self.time_dim))).1,
            };
            let dst = &mut input[row * width..(row + 1) * width];
            dst[..d].copy_from_slice(&xs[row * d..(row + 1) * d]);
            dst[d..].copy_from_slice(emb);
        }
        Ok(input)
    }

    fn forward(&self, input: Vec<f64>, rows: usize, keep: bool) -> (Vec<f64>, Option<Trace>) {
        let offsets = self.offsets();
        let last = self.layers.len() - 1;
        let mut trace = keep.then(|| Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(last),
        });
        let mut x = input;
        for (l, shape) in self.layers.iter().enumerate() {
            let (fi, fo) = (shape.fan_in, shape.fan_out);
            let w = &self.params[offsets[l]..offsets[l] + fi * fo];
            let b = &self.params[offsets[l] + fi * fo..offsets[l] + fi * fo + fo];
            let mut z = vec![0.0; rows * fo];
            affine(&x, rows, w, b, fi, fo, &mut z);
            if l == last {
                if let Some(tr) = trace.as_mut() {
                    tr.inputs.push(x);
                }
                return (z, trace);
            }
            let act = self.activation;
            let a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if let Some(tr) = trace.as_mut() {
                tr.inputs.push(x);
                tr.pre.push(z);
            }
            x = a;
        }
        unreachable!("model has an output layer")
    }

    /// `ε_θ(x_t, t)` for one state.
    pub fn predict_eps(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        self.predict_eps_batch(x_t, t)
    }

    /// `ε_θ` for `rows` states stacked row-major, all at timestep `t`.
    ///
    /// Each row's result is independent of the other rows in the batch.
    pub fn predict_eps_batch(&self, xs: &[f64], t: usize) -> Result<Vec<f64>> {
        if xs.len() % self.state_dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: xs.len(),
            });
        }
        let rows = xs.len() / self.state_dim;
        let ts = vec![t; rows];
        let input = self.assemble_input(xs, &ts)?;
        Ok(self.forward(input, rows, false).0)
    }

    /// Mean squared error between `ε_θ(x_t, t)` and `eps` over all rows and
    /// features.
    pub fn loss(&self, x_t: &[f64], ts: &[usize], eps: &[f64]) -> Result<f64> {
        let input = self.assemble_input(x_t, ts)?;
        let (out, _) = self.forward(input, ts.len(), false);
        check_target(&out, eps)?;
        Ok(mse(&out, eps))
    }

    /// Loss and its gradient with respect to every parameter, written into
    /// `grad` (overwritten).
    pub fn loss_and_grad(
        &self,
        x_t: &[f64],
        ts: &[usize],
        eps: &[f64],
        grad: &mut [f64],
    ) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        let rows = ts.len();
        let input = self.assemble_input(x_t, ts)?;
        let (out, trace) = self.forward(input, rows, true);
        check_target(&out, eps)?;
        let trace = trace.expect("trace requested");
        let loss = mse(&out, eps);

        let scale = 2.0 / out.len() as f64;
        let mut dz: Vec<f64> = out.iter().zip(eps).map(|(o, e)| scale * (o - e)).collect();
        grad.fill(0.0);
        let offsets = self.offsets();
        for l in (0..self.layers.len()).rev() {
            let LayerShape { fan_in: fi, fan_out: fo } = self.layers[l];
            let off = offsets[l];
            let x = &trace.inputs[l];
            {
                let (gw, gb) = grad[off..off + fi * fo + fo].split_at_mut(fi * fo);
                weight_grad(x, &dz, rows, fi, fo, gw);
                for r in 0..rows {
                    for (g, d) in gb.iter_mut().zip(&dz[r * fo..(r + 1) * fo]) {
                        *g += d;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fi * fo];
            let pre = &trace.pre[l - 1];
            let mut dprev = vec![0.0; rows * fi];
            for r in 0..rows {
                let dzr = &dz[r * fo..(r + 1) * fo];
                for i in 0..fi {
                    let wr = &w[i * fo..(i + 1) * fo];
                    let s: f64 = wr.iter().zip(dzr).map(|(a, b)| a * b).sum();
                    dprev[r * fi + i] = s * self.activation.derivative(pre[r * fi + i]);
                }
            }
            dz = dprev;
        }
        Ok(loss)
    }

    pub fn params_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

fn check_target(out: &[f64], eps: &[f64]) -> Result<()> {
    if out.len() != eps.len() {
        return Err(Error::DimensionMismatch {
            expected: out.len(),
            actual: eps.len(),
        });
    }
    Ok(())
}

fn mse(out: &[f64], target: &[f64]) -> f64 {
    let s: f64 = out.iter().zip(target).map(|(o, e)| (o - e) * (o - e)).sum();
    s / out.len() as f64
}

/// `out = x · W + b` for `rows` rows. Four rows share each pass over `W`; the
/// per-element summation order is the same for every row either way.
fn affine(x: &[f64], rows: usize, w: &[f64], b: &[f64], fi: usize, fo: usize, out: &mut [f64]) {
    let mut r = 0;
    while r + ROWS <= rows {
        affine_rows::<ROWS>(x, r, w, b, fi, fo, out);
        r += ROWS;
    }
    while r < rows {
        affine_rows::<1>(x, r, w, b, fi, fo, out);
        r += 1;
    }
}

const ROWS: usize = 4;
const COLS: usize = 4;

/// Rows `r..r+R` of the product, accumulated in registers over column tiles.
/// Every output element is `b_j + Σ_i x_i w_ij` summed in increasing `i`,
/// whatever `R` is.
#[inline(always)]
fn affine_rows<const R: usize>(
    x: &[f64],
    r: usize,
    w: &[f64],
    b: &[f64],
    fi: usize,
    fo: usize,
    out: &mut [f64],
) {
    let xr: [&[f64]; R] = core::array::from_fn(|k| &x[(r + k) * fi..(r + k + 1) * fi]);
    let mut j = 0;
    while j + COLS <= fo {
        let mut acc = [[0.0f64; COLS]; R];
        for row in acc.iter_mut() {
            row.copy_from_slice(&b[j..j + COLS]);
        }
        for i in 0..fi {
            let wv: [f64; COLS] = w[i * fo + j..i * fo + j + COLS].try_into().unwrap();
            for k in 0..R {
                let a = xr[k][i];
                for c in 0..COLS {
                    acc[k][c] += a * wv[c];
                }
            }
        }
        for k in 0..R {
            out[(r + k) * fo + j..(r + k) * fo + j + COLS].copy_from_slice(&acc[k]);
        }
        j += COLS;
    }
    for j in j..fo {
        for k in 0..R {
            let mut acc = b[j];
            for i in 0..fi {
                acc += xr[k][i] * w[i * fo + j];
            }
            out[(r + k) * fo + j] = acc;
        }
    }
}

/// `gw += xᵀ · dz`.
fn weight_grad(x: &[f64], dz: &[f64], rows: usize, fi: usize, fo: usize, gw: &mut [f64]) {
    for r in 0..rows {
        let dzr = &dz[r * fo..(r + 1) * fo];
        for i in 0..fi {
            let a = x[r * fi + i];
            if a == 0.0 {
                continue;
            }
            for (g, d) in gw[i * fo..(i + 1) * fo].iter_mut().zip(dzr) {
                *g += a * d;
            }
        }
    }
}
