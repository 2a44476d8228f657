//! White-box l-infinity attacks and the ensemble batch crafter.
//!
//! Attacks receive the model and inputs only — never ground-truth labels.
//! Gradients run through the full noised forward pass with the run's fixed
//! noise draw, and every crafted example stays within the l-infinity ball
//! of radius mu around its source. Crafting starts from already-perturbed
//! examples, so it is post-processing in the privacy accounting.

use std::str::FromStr;

use rand::Rng;

use crate::data::PerturbedBatch;
use crate::error::{Error, Result};
use crate::nn::{argmax_lowest_tie, classify, encode_pre, noised_hidden, ModelParams};
use crate::noise::NoiseBundle;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Ifgsm,
    Mim,
    Madry,
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "fgsm" => Ok(Self::Fgsm),
            "ifgsm" => Ok(Self::Ifgsm),
            "mim" => Ok(Self::Mim),
            "madry" => Ok(Self::Madry),
            other => Err(Error::Config(format!("unknown attack kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Fgsm => "fgsm",
            Self::Ifgsm => "ifgsm",
            Self::Mim => "mim",
            Self::Madry => "madry",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    /// l-infinity radius in input units.
    pub mu: f64,
    /// Iteration count T_mu for the iterative attacks.
    pub steps: usize,
    /// MIM momentum decay.
    pub decay: f64,
    /// Ensemble members, in chunk order.
    pub kinds: Vec<AttackKind>,
    /// Project crafted examples into the data box [-1, 1] instead of the
    /// looser finite envelope. Off by default: perturbed inputs already
    /// exceed the box, so crafting keeps them where the model sees them.
    pub box_clip: bool,
    /// Madry step size as a fraction of mu.
    pub madry_step_frac: f64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(Error::Config(format!("attack mu must be positive, got {}", self.mu)));
        }
        if self.steps == 0 {
            return Err(Error::Config("attack steps must be >= 1".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("attack kinds must be nonempty".into()));
        }
        if self.decay < 0.0 {
            return Err(Error::Config(format!("decay must be nonnegative, got {}", self.decay)));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mu: 0.2,
            steps: 10,
            decay: 1.0,
            kinds: vec![AttackKind::Ifgsm, AttackKind::Mim, AttackKind::Madry],
            box_clip: false,
            madry_step_frac: 0.25,
        }
    }
}

/// The crafting view of the model: the trained parameters plus the fixed
/// hidden-noise draw, so attack gradients see exactly the deployed scorer.
#[derive(Debug, Clone, Copy)]
pub struct AttackModel<'a> {
    pub params: &'a ModelParams,
    pub chi2: &'a [f64],
    pub m: usize,
}

impl<'a> AttackModel<'a> {
    pub fn new(params: &'a ModelParams, noise: &'a NoiseBundle, m: usize) -> Self {
        Self { params, chi2: &noise.chi2, m }
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pre = encode_pre(x, &self.params.theta1)?;
        let h: Vec<f64> = pre.iter().map(|&v| v.clamp(-1.0, 1.0)).collect();
        let h_bar = noised_hidden(&h, self.chi2, self.m)?;
        Ok(classify(&h_bar, &self.params.theta2)?.scores)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax_lowest_tie(&self.scores(x)?))
    }

    /// Gradient of the cross-entropy loss CE(f(x), label) with respect to
    /// the input, through softmax, the tanh layers, the hidden noise add,
    /// and the clamped encoder.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        let theta1 = &self.params.theta1;
        let theta2 = &self.params.theta2;
        let pre = encode_pre(x, theta1)?;
        let h: Vec<f64> = pre.iter().map(|&v| v.clamp(-1.0, 1.0)).collect();
        let h_bar = noised_hidden(&h, self.chi2, self.m)?;
        let trace = classify(&h_bar, theta2)?;
        // dCE/dlogits = p - y
        let mut delta: Vec<f64> = trace.scores.clone();
        delta[label] -= 1.0;
        // back through W_pi
        let w_pi = &theta2[theta2.len() - 1];
        let mut grad_h = w_pi.vec_mul(&delta)?;
        // back through tanh layers
        for l in (0..theta2.len() - 1).rev() {
            let output = &trace.inputs[l + 1];
            let d_pre: Vec<f64> =
                grad_h.iter().zip(output).map(|(&g, &a)| g * (1.0 - a * a)).collect();
            grad_h = theta2[l].vec_mul(&d_pre)?;
        }
        // noise add is identity; clamp gates the encoder chain
        let gated: Vec<f64> = grad_h
            .iter()
            .zip(&pre)
            .map(|(&g, &p)| if p.abs() < 1.0 { g } else { 0.0 })
            .collect();
        theta1.vec_mul(&gated)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamp each coordinate into the finite envelope, then project back onto
/// the l-infinity ball of radius mu around the center. The ball projection
/// runs last so the radius contract holds unconditionally.
fn project(x: &mut [f64], center: &[f64], mu: f64, box_clip: bool) {
    let (lo, hi) = if box_clip { (-1.0, 1.0) } else { (-1.0 - mu, 1.0 + mu) };
    for (xi, &ci) in x.iter_mut().zip(center) {
        *xi = xi.clamp(lo, hi).clamp(ci - mu, ci + mu);
    }
}

/// Single-step sign attack: x + mu * sign(grad CE(f(x), y(x))), with the
/// label taken from the model's own prediction to avoid label leaking.
pub fn fgsm(model: &AttackModel<'_>, x_bar: &[f64], mu: f64, box_clip: bool) -> Result<Vec<f64>> {
    if mu == 0.0 {
        return Ok(x_bar.to_vec());
    }
    let label = model.predict(x_bar)?;
    let grad = model.input_gradient(x_bar, label)?;
    let mut adv: Vec<f64> =
        x_bar.iter().zip(&grad).map(|(&x, &g)| x + mu * sign(g)).collect();
    project(&mut adv, x_bar, mu, box_clip);
    Ok(adv)
}

/// Iterative sign attack: T_mu steps of size mu / T_mu, label re-predicted
/// each step, iterate projected into the ball after every step.
pub fn ifgsm(
    model: &AttackModel<'_>,
    x_bar: &[f64],
    mu: f64,
    t_mu: usize,
    box_clip: bool,
) -> Result<Vec<f64>> {
    if mu == 0.0 || t_mu == 0 {
        return Ok(x_bar.to_vec());
    }
    let step = mu / t_mu as f64;
    let mut adv = x_bar.to_vec();
    for _ in 0..t_mu {
        let label = model.predict(&adv)?;
        let grad = model.input_gradient(&adv, label)?;
        for (a, &g) in adv.iter_mut().zip(&grad) {
            *a += step * sign(g);
        }
        project(&mut adv, x_bar, mu, box_clip);
    }
    Ok(adv)
}

/// Momentum iterative attack: g_t = decay * g_{t-1} + grad / ||grad||_1,
/// step mu / T_mu along sign(g_t). A zero gradient with zero momentum
/// leaves the iterate unchanged.
pub fn mim(
    model: &AttackModel<'_>,
    x_bar: &[f64],
    mu: f64,
    t_mu: usize,
    decay: f64,
    box_clip: bool,
) -> Result<Vec<f64>> {
    if mu == 0.0 || t_mu == 0 {
        return Ok(x_bar.to_vec());
    }
    let step = mu / t_mu as f64;
    let mut adv = x_bar.to_vec();
    let mut momentum = vec![0.0; x_bar.len()];
    for _ in 0..t_mu {
        let label = model.predict(&adv)?;
        let grad = model.input_gradient(&adv, label)?;
        let l1: f64 = grad.iter().map(|g| g.abs()).sum();
        for (mo, &g) in momentum.iter_mut().zip(&grad) {
            *mo = decay * *mo + if l1 > 0.0 { g / l1 } else { 0.0 };
        }
        for (a, &mo) in adv.iter_mut().zip(&momentum) {
            *a += step * sign(mo);
        }
        project(&mut adv, x_bar, mu, box_clip);
    }
    Ok(adv)
}

/// Projected gradient descent with a uniform random start inside the ball.
/// The target label is the model's prediction at the starting example and
/// stays fixed across steps.
pub fn pgd_madry(
    model: &AttackModel<'_>,
    x_bar: &[f64],
    mu: f64,
    t_mu: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    pgd_madry_clip(model, x_bar, mu, t_mu, step, seed, false)
}

pub fn pgd_madry_clip(
    model: &AttackModel<'_>,
    x_bar: &[f64],
    mu: f64,
    t_mu: usize,
    step: f64,
    seed: u64,
    box_clip: bool,
) -> Result<Vec<f64>> {
    if mu == 0.0 {
        return Ok(x_bar.to_vec());
    }
    if !(step > 0.0) {
        return Err(Error::Config(format!("pgd step must be positive, got {step}")));
    }
    let label = model.predict(x_bar)?;
    let mut rng = rng_for("madry", seed, &[]);
    let mut adv: Vec<f64> = x_bar.iter().map(|&x| x + rng.gen_range(-mu..=mu)).collect();
    project(&mut adv, x_bar, mu, box_clip);
    for _ in 0..t_mu {
        let grad = model.input_gradient(&adv, label)?;
        for (a, &g) in adv.iter_mut().zip(&grad) {
            *a += step * sign(g);
        }
        project(&mut adv, x_bar, mu, box_clip);
    }
    Ok(adv)
}

/// An ensemble-crafted adversarial batch, tied to the source example
/// indices it was built from.
#[derive(Debug, Clone)]
pub struct AdversarialBatch {
    pub features: Vec<Vec<f64>>,
    pub source_indices: Vec<usize>,
    pub mu: f64,
}

/// Split the source batch into |A| chunks of size m / |A| in list order and
/// attack chunk i with kinds[i] at l-infinity(mu_t). The source must come
/// from the perturbed batch plan, which the argument type guarantees.
pub fn craft_ensemble_batch(
    model: &AttackModel<'_>,
    source: &PerturbedBatch<'_>,
    cfg: &AttackConfig,
    mu_t: f64,
    seed: u64,
) -> Result<AdversarialBatch> {
    let m = source.len();
    let kinds = &cfg.kinds;
    if kinds.is_empty() {
        return Err(Error::Config("attack kinds must be nonempty".into()));
    }
    if m % kinds.len() != 0 {
        return Err(Error::Config(format!(
            "batch size {m} not divisible by {} attack kinds",
            kinds.len()
        )));
    }
    let chunk = m / kinds.len();
    let mut features = Vec::with_capacity(m);
    let mut source_indices = Vec::with_capacity(m);
    for (ki, &kind) in kinds.iter().enumerate() {
        for pos in ki * chunk..(ki + 1) * chunk {
            let x_bar = source.feature_row(pos);
            let adv = if mu_t == 0.0 {
                x_bar.to_vec()
            } else {
                match kind {
                    AttackKind::Fgsm => fgsm(model, x_bar, mu_t, cfg.box_clip)?,
                    AttackKind::Ifgsm => ifgsm(model, x_bar, mu_t, cfg.steps, cfg.box_clip)?,
                    AttackKind::Mim => {
                        mim(model, x_bar, mu_t, cfg.steps, cfg.decay, cfg.box_clip)?
                    }
                    AttackKind::Madry => pgd_madry_clip(
                        model,
                        x_bar,
                        mu_t,
                        cfg.steps,
                        (cfg.madry_step_frac * mu_t).max(f64::MIN_POSITIVE),
                        crate::rng::sub_seed("madry-example", seed, &[pos as u64]),
                        cfg.box_clip,
                    )?,
                }
            };
            features.push(adv);
            source_indices.push(source.indices[pos]);
        }
    }
    Ok(AdversarialBatch { features, source_indices, mu: mu_t })
}

/// Cross-entropy of the model's scores at `x` against a fixed label;
/// the metric attacks are judged by.
pub fn cross_entropy_at(model: &AttackModel<'_>, x: &[f64], label: usize) -> Result<f64> {
    let scores = model.scores(x)?;
    Ok(-(scores[label].max(1e-300)).ln())
}
