//! Laplace sampling and the run's noise state.
//!
//! A training run draws its Laplace noise exactly once: `chi1` perturbs
//! inputs, `chi2` perturbs the encoder's affine transform, `chi3` perturbs
//! the label-dependent output-loss coefficients. The same draw serves every
//! epoch; redrawing mid-run would break the privacy accounting, so the
//! bundle carries a fingerprint that downstream stages verify.
//!
//! At inference time fresh noise must be drawn per invocation, but fully
//! fresh draws shift the input distribution away from the one the model was
//! trained under. [`InferenceNoiseStream`] centers each fresh draw on the
//! training draw and shrinks its scale by `psi`, which controls that shift.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for;

/// i.i.d. Laplace(0, `scale`) samples via inverse CDF.
pub fn laplace_vector(scale: f64, len: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(scale > 0.0) {
        return Err(Error::Config(format!("laplace scale must be positive, got {scale}")));
    }
    if len == 0 {
        return Err(Error::Config("laplace vector length must be >= 1".into()));
    }
    Ok((0..len).map(|_| laplace_sample(scale, rng)).collect())
}

fn laplace_sample(scale: f64, rng: &mut impl Rng) -> f64 {
    // u in (0, 1); u = 0 would send the tail to -inf at exactly 0 probability.
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// The single training draw (chi1, chi2, chi3).
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    /// Input perturbation draw, length d, scale delta_r / eps1.
    pub chi1: Vec<f64>,
    /// Hidden-transform draw, length beta, scale delta_r / eps1.
    pub chi2: Vec<f64>,
    /// Output-coefficient draw, length |h_pi|, scale delta_l2 / eps2.
    pub chi3: Vec<f64>,
    pub seed: u64,
}

/// Draw the run's noise once, from its own purpose-tagged stream.
#[allow(clippy::too_many_arguments)]
pub fn draw_training_noise(
    delta_r: f64,
    eps1: f64,
    delta_l2: f64,
    eps2: f64,
    d: usize,
    beta: usize,
    h_pi_size: usize,
    seed: u64,
) -> Result<NoiseBundle> {
    for (name, v) in [("delta_r", delta_r), ("eps1", eps1), ("delta_l2", delta_l2), ("eps2", eps2)] {
        if !(v > 0.0) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let mut rng = rng_for("noise", seed, &[]);
    let chi1 = laplace_vector(delta_r / eps1, d, &mut rng)?;
    let chi2 = laplace_vector(delta_r / eps1, beta, &mut rng)?;
    let chi3 = laplace_vector(delta_l2 / eps2, h_pi_size, &mut rng)?;
    Ok(NoiseBundle { chi1, chi2, chi3, seed })
}

impl NoiseBundle {
    /// FNV-1a over the chi1 bits. Stages that consumed chi1 earlier
    /// (batch perturbation) use this to reject a bundle that was redrawn
    /// between preprocessing and training.
    pub fn chi1_fingerprint(&self) -> u64 {
        fnv1a_f64(&self.chi1)
    }
}

pub(crate) fn fnv1a_f64(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Per-invocation inference noise centered on the training draw.
///
/// Each call to [`InferenceNoiseStream::next_pair`] yields
/// `chi1/m + Lap((delta_r/eps1)/psi)/m` for the input and
/// `2*chi2/m + 2*Lap((delta_r/eps1)/psi)/m` for the hidden transform,
/// with fresh draws independent across the counter. The base bundle is
/// never mutated.
#[derive(Debug)]
pub struct InferenceNoiseStream {
    chi1: Vec<f64>,
    chi2: Vec<f64>,
    psi: f64,
    fresh_scale: f64,
    m: usize,
    draw_index: u64,
    rng: ChaCha20Rng,
}

impl InferenceNoiseStream {
    /// Fork stream `stream_id` off the bundle. Concurrent certification jobs
    /// each hold their own id, so their draws never overlap.
    pub fn new(
        base: &NoiseBundle,
        psi: f64,
        delta_r: f64,
        eps1: f64,
        m: usize,
        stream_id: u64,
    ) -> Result<Self> {
        if !(psi > 0.0) {
            return Err(Error::Config(format!("psi must be positive, got {psi}")));
        }
        if m == 0 {
            return Err(Error::Config("batch size m must be >= 1".into()));
        }
        Ok(Self {
            chi1: base.chi1.clone(),
            chi2: base.chi2.clone(),
            psi,
            fresh_scale: (delta_r / eps1) / psi,
            m,
            draw_index: 0,
            rng: rng_for("inference", base.seed, &[stream_id]),
        })
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn draw_index(&self) -> u64 {
        self.draw_index
    }

    /// Next (input_noise, hidden_noise) pair.
    pub fn next_pair(&mut self) -> (Vec<f64>, Vec<f64>) {
        let m = self.m as f64;
        let input = self
            .chi1
            .iter()
            .map(|&c| (c + laplace_sample(self.fresh_scale, &mut self.rng)) / m)
            .collect();
        let hidden = self
            .chi2
            .iter()
            .map(|&c| 2.0 * (c + laplace_sample(self.fresh_scale, &mut self.rng)) / m)
            .collect();
        self.draw_index += 1;
        (input, hidden)
    }
}
