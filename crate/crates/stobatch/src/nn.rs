//! Dense network core: encoder affine transform with a noise injection
//! point, bounded hidden activations, classifier layers, and exact
//! hand-derived gradients of the perturbed objectives.
//!
//! The network is f(x) = g(a(x, theta1), theta2). The encoder output h is
//! hard-clamped to [-1, 1] and classifier hidden layers use tanh, so the
//! boundedness preconditions of the sensitivity bounds hold by construction.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{clamp_unit, Matrix};
use crate::rng::rng_for;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Encoder weights theta1 (d x beta, also used transposed for
/// reconstruction) and classifier layers theta2 ending in W_pi
/// (|h_pi| x K).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta1: Matrix,
    pub theta2: Vec<Matrix>,
}

impl ModelParams {
    /// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    ///
    /// `hidden` lists the tanh layer widths after the encoder; the last
    /// entry is |h_pi|. The final W_pi layer maps |h_pi| -> k.
    pub fn init(d: usize, beta: usize, hidden: &[usize], k: usize, seed: u64) -> Result<Self> {
        if d == 0 || beta == 0 || k == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config("all layer sizes must be >= 1".into()));
        }
        let uniform = |rows: usize, cols: usize, layer: u64| -> Matrix {
            let mut rng = rng_for("init", seed, &[layer]);
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Matrix::from_flat(rows, cols, data).expect("sized allocation")
        };
        let theta1 = uniform(d, beta, 0);
        let mut theta2 = Vec::with_capacity(hidden.len() + 1);
        let mut prev = beta;
        for (i, &width) in hidden.iter().enumerate() {
            theta2.push(uniform(prev, width, 1 + i as u64));
            prev = width;
        }
        theta2.push(uniform(prev, k, 1 + hidden.len() as u64));
        Ok(Self { theta1, theta2 })
    }

    pub fn d(&self) -> usize {
        self.theta1.rows()
    }

    pub fn beta(&self) -> usize {
        self.theta1.cols()
    }

    /// Width of the last hidden layer h_pi.
    pub fn h_pi_size(&self) -> usize {
        self.theta2[self.theta2.len() - 1].rows()
    }

    pub fn n_classes(&self) -> usize {
        self.theta2[self.theta2.len() - 1].cols()
    }

    pub fn w_pi(&self) -> &Matrix {
        &self.theta2[self.theta2.len() - 1]
    }

    pub fn validate_chain(&self) -> Result<()> {
        if self.theta2.is_empty() {
            return Err(Error::Shape("theta2 must contain at least W_pi".into()));
        }
        let mut prev = self.beta();
        for (i, layer) in self.theta2.iter().enumerate() {
            if layer.rows() != prev {
                return Err(Error::Shape(format!(
                    "theta2 layer {i} expects {prev} inputs, has {}",
                    layer.rows()
                )));
            }
            prev = layer.cols();
        }
        if !self.theta1.is_finite() || self.theta2.iter().any(|l| !l.is_finite()) {
            return Err(Error::Shape("non-finite parameter entries".into()));
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = self.theta1.l2_norm_sq();
        for l in &self.theta2 {
            s += l.l2_norm_sq();
        }
        s.sqrt()
    }

    /// Versioned binary checkpoint: magic "SBCK", format version, shape
    /// header, then row-major little-endian f64 payloads for theta1 and
    /// each theta2 layer.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.theta1.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.theta1.cols() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.theta2.len() as u32).to_le_bytes());
        for layer in &self.theta2 {
            buf.extend_from_slice(&(layer.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(layer.cols() as u32).to_le_bytes());
        }
        for v in self.theta1.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for layer in &self.theta2 {
            for v in layer.as_slice() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path.as_ref())?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref())?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if bytes.len() < *off + n {
                return Err(Error::Format("truncated checkpoint".into()));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        let magic = take(&mut off, 4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:02x?}")));
        }
        let read_u32 = |off: &mut usize| -> Result<u32> {
            let s = take(off, 4)?;
            Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        };
        let version = read_u32(&mut off)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let d = read_u32(&mut off)? as usize;
        let beta = read_u32(&mut off)? as usize;
        let n_layers = read_u32(&mut off)? as usize;
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let r = read_u32(&mut off)? as usize;
            let c = read_u32(&mut off)? as usize;
            shapes.push((r, c));
        }
        let read_mat = |off: &mut usize, rows: usize, cols: usize| -> Result<Matrix> {
            let n = rows * cols;
            if bytes.len() < *off + n * 8 {
                return Err(Error::Format("truncated checkpoint payload".into()));
            }
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let s = &bytes[*off + i * 8..*off + i * 8 + 8];
                data.push(f64::from_le_bytes(s.try_into().expect("8-byte chunk")));
            }
            *off += n * 8;
            Matrix::from_flat(rows, cols, data)
        };
        let theta1 = read_mat(&mut off, d, beta)?;
        let mut theta2 = Vec::with_capacity(n_layers);
        for &(r, c) in &shapes {
            theta2.push(read_mat(&mut off, r, c)?);
        }
        let params = Self { theta1, theta2 };
        params.validate_chain()?;
        Ok(params)
    }
}

/// Pre-clamp encoder transform theta1^T x_bar.
pub fn encode_pre(x_bar: &[f64], theta1: &Matrix) -> Result<Vec<f64>> {
    theta1.transpose_vec_mul(x_bar)
}

/// Encoder output h = clamp(theta1^T x_bar, -1, 1).
pub fn encode(x_bar: &[f64], theta1: &Matrix) -> Result<Vec<f64>> {
    Ok(encode_pre(x_bar, theta1)?.into_iter().map(clamp_unit).collect())
}

/// h_bar = h + 2 chi2 / m. No clamp here; the bound applies to the
/// pre-noise h only.
pub fn noised_hidden(h: &[f64], chi2: &[f64], m: usize) -> Result<Vec<f64>> {
    if h.len() != chi2.len() {
        return Err(Error::Shape(format!("h length {} vs chi2 length {}", h.len(), chi2.len())));
    }
    let mf = m as f64;
    Ok(h.iter().zip(chi2).map(|(&hv, &c)| hv + 2.0 * c / mf).collect())
}

/// Reconstruction x_tilde = theta1 h_bar.
pub fn reconstruct(h_bar: &[f64], theta1: &Matrix) -> Result<Vec<f64>> {
    theta1.vec_mul(h_bar)
}

/// Per-layer record of a classifier pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ClassifierTrace {
    /// Input to each theta2 layer; `inputs[0]` is h_bar.
    pub inputs: Vec<Vec<f64>>,
    /// Last hidden layer, tanh-bounded in [-1, 1].
    pub h_pi: Vec<f64>,
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Run the classifier g: tanh hidden layers, then softmax(h_pi W_pi).
pub fn classify(h_bar: &[f64], theta2: &[Matrix]) -> Result<ClassifierTrace> {
    if theta2.is_empty() {
        return Err(Error::Shape("theta2 must contain at least W_pi".into()));
    }
    let mut inputs = Vec::with_capacity(theta2.len());
    let mut activation = h_bar.to_vec();
    for layer in &theta2[..theta2.len() - 1] {
        inputs.push(activation.clone());
        let pre = layer.transpose_vec_mul(&activation)?;
        activation = pre.into_iter().map(f64::tanh).collect();
    }
    let h_pi = activation.clone();
    inputs.push(activation);
    let w_pi = &theta2[theta2.len() - 1];
    let logits = w_pi.transpose_vec_mul(&h_pi)?;
    let scores = softmax(&logits);
    Ok(ClassifierTrace { inputs, h_pi, logits, scores })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn argmax_lowest_tie(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// One full training-mode pass x_bar -> (h, h_bar, h_pi, scores, x_tilde).
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub h: Vec<f64>,
    pub h_bar: Vec<f64>,
    pub h_pi: Vec<f64>,
    pub scores: Vec<f64>,
    pub x_tilde: Vec<f64>,
}

pub fn forward_trace(
    params: &ModelParams,
    x_bar: &[f64],
    chi2: &[f64],
    m: usize,
) -> Result<ForwardTrace> {
    let h = encode(x_bar, &params.theta1)?;
    let h_bar = noised_hidden(&h, chi2, m)?;
    let x_tilde = reconstruct(&h_bar, &params.theta1)?;
    let trace = classify(&h_bar, &params.theta2)?;
    Ok(ForwardTrace { h, h_bar, h_pi: trace.h_pi, scores: trace.scores, x_tilde })
}

/// Inference-mode pass with explicit noise: scores for
/// x + input_noise fed through clamp, then + hidden_noise, then g.
pub fn forward_with_noise(
    params: &ModelParams,
    x: &[f64],
    input_noise: &[f64],
    hidden_noise: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != input_noise.len() {
        return Err(Error::Shape(format!(
            "x length {} vs input noise length {}",
            x.len(),
            input_noise.len()
        )));
    }
    let noised: Vec<f64> = x.iter().zip(input_noise).map(|(a, b)| a + b).collect();
    let h = encode(&noised, &params.theta1)?;
    if h.len() != hidden_noise.len() {
        return Err(Error::Shape(format!(
            "h length {} vs hidden noise length {}",
            h.len(),
            hidden_noise.len()
        )));
    }
    let h_noised: Vec<f64> = h.iter().zip(hidden_noise).map(|(a, b)| a + b).collect();
    Ok(classify(&h_noised, &params.theta2)?.scores)
}

/// Gradient of the perturbed reconstruction objective over a batch with
/// respect to theta1 (d x beta).
///
/// The objective per example is sum_j (1/2 - x_bar_j) * x_tilde_j with
/// x_tilde = theta1 (clamp(theta1^T x_bar) + 2 chi2 / m). Row j of the
/// gradient carries the coefficient term sum_i h_bar_i (1/2 - x_bar_ij)
/// plus the chain through the encoder, with the clamp treated as identity
/// inside the active region and zero outside.
pub fn grad_reconstruction(
    theta1: &Matrix,
    batch: &[&[f64]],
    chi2: &[f64],
    m: usize,
) -> Result<Matrix> {
    if batch.is_empty() {
        return Err(Error::Config("gradient over an empty batch".into()));
    }
    let (d, beta) = (theta1.rows(), theta1.cols());
    if chi2.len() != beta {
        return Err(Error::Shape(format!("chi2 length {} vs beta {beta}", chi2.len())));
    }
    let mut grad = Matrix::zeros(d, beta);
    for &x_bar in batch {
        if x_bar.len() != d {
            return Err(Error::Shape(format!("example length {} vs d {d}", x_bar.len())));
        }
        let pre = encode_pre(x_bar, theta1)?;
        let h_bar = noised_hidden(&pre.iter().map(|&v| clamp_unit(v)).collect::<Vec<_>>(), chi2, m)?;
        // w_j = 1/2 - x_bar_j; t = theta1^T w (per-unit weight of the chain term)
        let w: Vec<f64> = x_bar.iter().map(|&x| 0.5 - x).collect();
        let t = theta1.transpose_vec_mul(&w)?;
        for p in 0..d {
            let row = grad.row_mut(p);
            for q in 0..beta {
                let gate = if pre[q].abs() < 1.0 { 1.0 } else { 0.0 };
                row[q] += w[p] * h_bar[q] + gate * x_bar[p] * t[q];
            }
        }
    }
    Ok(grad)
}

/// Gradients of `scale * sum_i Lbar_i` with respect to every theta2 layer,
/// where Lbar is the perturbed Taylor output loss with coefficient noise
/// chi3 / m. Returns one matrix per layer, last is the W_pi gradient.
pub fn grad_classifier(
    theta2: &[Matrix],
    h_bars: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    chi3: &[f64],
    m: usize,
    scale: f64,
) -> Result<Vec<Matrix>> {
    if h_bars.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} traces vs {} labels",
            h_bars.len(),
            labels.len()
        )));
    }
    if theta2.is_empty() {
        return Err(Error::Shape("theta2 must contain at least W_pi".into()));
    }
    let w_pi = &theta2[theta2.len() - 1];
    if w_pi.cols() != n_classes {
        return Err(Error::Shape(format!("W_pi has {} classes, expected {n_classes}", w_pi.cols())));
    }
    if chi3.len() != w_pi.rows() {
        return Err(Error::Shape(format!(
            "chi3 length {} vs |h_pi| {}",
            chi3.len(),
            w_pi.rows()
        )));
    }
    let mf = m as f64;
    let mut grads: Vec<Matrix> =
        theta2.iter().map(|l| Matrix::zeros(l.rows(), l.cols())).collect();
    for (h_bar, &label) in h_bars.iter().zip(labels) {
        if label >= n_classes {
            return Err(Error::Consistency(format!("label {label} out of {n_classes} classes")));
        }
        let trace = classify(h_bar, theta2)?;
        // dL/dz_k = 1 - 1/2 sign(z_k) + 1/4 z_k - y_k
        let dz: Vec<f64> = trace
            .logits
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let y = if k == label { 1.0 } else { 0.0 };
                1.0 - 0.5 * sign(z) + 0.25 * z - y
            })
            .collect();
        // W_pi gradient: h_pi outer dz, minus the coefficient noise chi3/m
        // contributed once per (example, class).
        let last = grads.len() - 1;
        {
            let h_pi = &trace.h_pi;
            let g = &mut grads[last];
            for a in 0..h_pi.len() {
                let row = g.row_mut(a);
                for (k, &dzk) in dz.iter().enumerate() {
                    row[k] += scale * (h_pi[a] * dzk - chi3[a] / mf);
                }
            }
        }
        // Backpropagate into the tanh layers.
        let mut delta = w_pi.vec_mul(&dz)?; // dL/dh_pi
        for l in (0..theta2.len() - 1).rev() {
            let input = &trace.inputs[l];
            let output = &trace.inputs[l + 1]; // tanh activation of layer l
            let d_pre: Vec<f64> =
                delta.iter().zip(output).map(|(&dl, &a)| dl * (1.0 - a * a)).collect();
            let g = &mut grads[l];
            for p in 0..input.len() {
                let row = g.row_mut(p);
                for (q, &dp) in d_pre.iter().enumerate() {
                    row[q] += scale * input[p] * dp;
                }
            }
            delta = theta2[l].vec_mul(&d_pre)?;
        }
    }
    Ok(grads)
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
