//! Sensitivity formulas, perturbed objectives, and the privacy accountant.
//!
//! Both training objectives are low-order polynomial approximations whose
//! coefficients carry the Laplace noise: the reconstruction objective
//! absorbs chi1 (inputs) and chi2 (hidden transform), the output loss
//! absorbs chi3 (label-dependent coefficients). The total budget composes
//! as eps1 * (1 + 1/gamma_x + 1/gamma) + eps2 and does not grow with the
//! number of training steps.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{classify, encode, noised_hidden, reconstruct, sign};

/// Reconstruction sensitivity over neighboring batches: d * (beta + 2).
pub fn sensitivity_reconstruction(d: usize, beta: usize) -> Result<f64> {
    if d == 0 || beta == 0 {
        return Err(Error::Config(format!("dimensions must be positive, got d={d} beta={beta}")));
    }
    Ok((d * (beta + 2)) as f64)
}

/// Output-loss sensitivity: 2 * |h_pi|.
pub fn sensitivity_output(h_pi_size: usize) -> Result<f64> {
    if h_pi_size == 0 {
        return Err(Error::Config("|h_pi| must be positive".into()));
    }
    Ok(2.0 * h_pi_size as f64)
}

/// Perturbed reconstruction objective over a batch of perturbed examples:
/// sum_i [ sum_j (1/2) theta1_j . h_bar_i  -  x_bar_i . x_tilde_i ],
/// evaluated through encode -> noised_hidden -> reconstruct. Unperturbed
/// inputs never enter.
pub fn perturbed_reconstruction_loss(
    batch: &[&[f64]],
    theta1: &Matrix,
    chi2: &[f64],
    m: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for &x_bar in batch {
        let h = encode(x_bar, theta1)?;
        let h_bar = noised_hidden(&h, chi2, m)?;
        let x_tilde = reconstruct(&h_bar, theta1)?;
        total += x_bar
            .iter()
            .zip(&x_tilde)
            .map(|(&x, &xt)| (0.5 - x) * xt)
            .sum::<f64>();
    }
    Ok(total)
}

fn check_one_hot(y: &[f64]) -> Result<usize> {
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Consistency("label must be one-hot".into()));
    }
    Ok(y.iter().position(|&v| v == 1.0).unwrap())
}

/// Label-independent and label-dependent parts of the Taylor output loss:
/// L1 = sum_k [z_k - 1/2 |z_k| + 1/8 z_k^2], L2 = sum_k y_k z_k,
/// with z_k = h_pi . W_pi[:,k].
pub fn taylor_l1_l2(h_pi: &[f64], w_pi: &Matrix, y: &[f64]) -> Result<(f64, f64)> {
    if y.len() != w_pi.cols() {
        return Err(Error::Shape(format!("label length {} vs {} classes", y.len(), w_pi.cols())));
    }
    check_one_hot(y)?;
    let z = w_pi.transpose_vec_mul(h_pi)?;
    let l1 = z.iter().map(|&zk| zk - 0.5 * zk.abs() + 0.125 * zk * zk).sum();
    let l2 = z.iter().zip(y).map(|(&zk, &yk)| yk * zk).sum();
    Ok((l1, l2))
}

/// Second-order Taylor approximation of the cross-entropy output loss for
/// one example: L1 - L2.
pub fn taylor_output_loss(h_pi: &[f64], w_pi: &Matrix, y: &[f64]) -> Result<f64> {
    let (l1, l2) = taylor_l1_l2(h_pi, w_pi, y)?;
    Ok(l1 - l2)
}

/// Perturbed output loss for one example: L1 - L2bar with
/// L2bar = sum_k (h_pi y_k + chi3/m) . W_pi[:,k], so the coefficient noise
/// enters as (chi3/m) . W_pi[:,k] per class.
pub fn perturbed_output_loss(
    h_pi: &[f64],
    w_pi: &Matrix,
    y: &[f64],
    chi3: &[f64],
    m: usize,
) -> Result<f64> {
    if chi3.len() != w_pi.rows() {
        return Err(Error::Shape(format!(
            "chi3 length {} vs |h_pi| {}",
            chi3.len(),
            w_pi.rows()
        )));
    }
    let (l1, l2) = taylor_l1_l2(h_pi, w_pi, y)?;
    let mf = m as f64;
    let noise_term: f64 = (0..w_pi.cols())
        .map(|k| (0..w_pi.rows()).map(|a| chi3[a] / mf * w_pi.get(a, k)).sum::<f64>())
        .sum();
    Ok(l1 - (l2 + noise_term))
}

/// Batch perturbed output loss through the classifier, summed over
/// examples. This is the function the classifier gradients differentiate.
pub fn batch_perturbed_output_loss(
    theta2: &[Matrix],
    h_bars: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    chi3: &[f64],
    m: usize,
) -> Result<f64> {
    if h_bars.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} inputs vs {} labels",
            h_bars.len(),
            labels.len()
        )));
    }
    let w_pi = &theta2[theta2.len() - 1];
    let mut total = 0.0;
    for (h_bar, &label) in h_bars.iter().zip(labels) {
        let trace = classify(h_bar, theta2)?;
        let mut y = vec![0.0; n_classes];
        y[label] = 1.0;
        total += perturbed_output_loss(&trace.h_pi, w_pi, &y, chi3, m)?;
    }
    Ok(total)
}

/// Combined adversarial objective over two disjoint batches:
/// (1 / (m (1 + xi))) * (sum benign + xi * sum adversarial).
pub fn adversarial_objective(
    benign_losses: &[f64],
    adversarial_losses: &[f64],
    benign_indices: &[usize],
    adversarial_indices: &[usize],
    xi: f64,
    m: usize,
) -> Result<f64> {
    if xi < 0.0 {
        return Err(Error::Config(format!("xi must be nonnegative, got {xi}")));
    }
    if benign_losses.len() != m || adversarial_losses.len() != m {
        return Err(Error::Shape(format!(
            "both batches must have size m={m}, got {} and {}",
            benign_losses.len(),
            adversarial_losses.len()
        )));
    }
    for b in benign_indices {
        if adversarial_indices.contains(b) {
            return Err(Error::PrivacyViolation(format!(
                "example {b} appears in both the benign and adversarial batch"
            )));
        }
    }
    let benign: f64 = benign_losses.iter().sum();
    let adv: f64 = adversarial_losses.iter().sum();
    Ok((benign + xi * adv) / (m as f64 * (1.0 + xi)))
}

/// Budgets, batch size, and dimensions entering the accountant.
#[derive(Debug, Clone)]
pub struct PrivacyConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub m: usize,
    pub d: usize,
    pub beta: usize,
    pub h_pi_size: usize,
    /// Pre-declared bound on the max column 1-norm of theta1. When set,
    /// gamma is computed from this cap instead of the learned weights, so
    /// reports are fixed before training starts.
    pub theta1_norm_cap: Option<f64>,
}

impl PrivacyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps1 > 0.0) || !(self.eps2 > 0.0) {
            return Err(Error::Config(format!(
                "budgets must be positive: eps1={} eps2={}",
                self.eps1, self.eps2
            )));
        }
        if self.m == 0 || self.d == 0 || self.beta == 0 || self.h_pi_size == 0 {
            return Err(Error::Config("m and all dimensions must be >= 1".into()));
        }
        if let Some(cap) = self.theta1_norm_cap {
            if !(cap > 0.0) {
                return Err(Error::Config(format!("theta1 norm cap must be positive, got {cap}")));
            }
        }
        Ok(())
    }

    pub fn delta_r(&self) -> f64 {
        (self.d * (self.beta + 2)) as f64
    }

    pub fn delta_l2(&self) -> f64 {
        2.0 * self.h_pi_size as f64
    }
}

/// How the gamma in a report was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSource {
    /// From a pre-declared theta1 norm cap; independent of training length.
    Declared,
    /// From the theta1 in effect at accounting time.
    Measured,
}

impl std::fmt::Display for GammaSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GammaSource::Declared => write!(f, "declared"),
            GammaSource::Measured => write!(f, "measured"),
        }
    }
}

/// The composed budget: total_eps = eps1 (1 + 1/gamma_x + 1/gamma) + eps2.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyReport {
    pub delta_r: f64,
    pub delta_l2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub m: usize,
    pub theta1_norm_11: f64,
    pub gamma: f64,
    pub gamma_x: f64,
    pub gamma_source: GammaSource,
    pub total_eps: f64,
}

impl PrivacyReport {
    /// Flat key=value block embedded in run reports.
    pub fn to_key_value_block(&self) -> String {
        format!(
            "delta_r = {}\ndelta_l2 = {}\neps1 = {}\neps2 = {}\nm = {}\n\
             theta1_norm_11 = {}\ngamma = {}\ngamma_x = {}\ngamma_source = {}\ntotal_eps = {}\n",
            self.delta_r,
            self.delta_l2,
            self.eps1,
            self.eps2,
            self.m,
            self.theta1_norm_11,
            self.gamma,
            self.gamma_x,
            self.gamma_source,
            self.total_eps
        )
    }
}

fn report_with_norm(cfg: &PrivacyConfig, norm: f64, source: GammaSource) -> PrivacyReport {
    let delta_r = cfg.delta_r();
    let gamma = 2.0 * delta_r / (cfg.m as f64 * norm);
    let gamma_x = delta_r / cfg.m as f64;
    let total_eps = cfg.eps1 * (1.0 + 1.0 / gamma_x + 1.0 / gamma) + cfg.eps2;
    PrivacyReport {
        delta_r,
        delta_l2: cfg.delta_l2(),
        eps1: cfg.eps1,
        eps2: cfg.eps2,
        m: cfg.m,
        theta1_norm_11: norm,
        gamma,
        gamma_x,
        gamma_source: source,
        total_eps,
    }
}

/// Accountant from the theta1 in effect at accounting time. Pure function
/// of its inputs; the budget does not grow with the step count.
pub fn accountant(cfg: &PrivacyConfig, theta1: &Matrix) -> Result<PrivacyReport> {
    cfg.validate()?;
    if theta1.is_zero() {
        return Err(Error::DegenerateParams("gamma undefined for zero theta1".into()));
    }
    Ok(report_with_norm(cfg, theta1.max_col_l1(), GammaSource::Measured))
}

/// Accountant from the pre-declared norm cap; requires `theta1_norm_cap`.
pub fn accountant_declared(cfg: &PrivacyConfig) -> Result<PrivacyReport> {
    cfg.validate()?;
    let cap = cfg.theta1_norm_cap.ok_or_else(|| {
        Error::Config("declared accounting requires theta1_norm_cap".into())
    })?;
    Ok(report_with_norm(cfg, cap, GammaSource::Declared))
}

/// eps1 that makes the composed total hit `target_eps` given eps2 and the
/// gammas: eps1 = (eps - eps2) / (1 + 1/gamma + 1/gamma_x).
pub fn split_budget(target_eps: f64, eps2: f64, gamma: f64, gamma_x: f64) -> Result<f64> {
    if !(target_eps > eps2) {
        return Err(Error::Config(format!(
            "target eps {target_eps} must exceed eps2 {eps2}"
        )));
    }
    if !(gamma > 0.0) || !(gamma_x > 0.0) {
        return Err(Error::Config("gammas must be positive".into()));
    }
    Ok((target_eps - eps2) / (1.0 + 1.0 / gamma + 1.0 / gamma_x))
}

/// Constant bounds on the average error of the truncated objectives:
/// reconstruction 4 e d / (1+e)^2, output (e^2 + 2e - 1) / (e (1+e)^2) * K.
pub fn approximation_error_bounds(d: usize, k: usize) -> (f64, f64) {
    let e = std::f64::consts::E;
    let bound_r = 4.0 * e * d as f64 / ((1.0 + e) * (1.0 + e));
    let bound_l = (e * e + 2.0 * e - 1.0) / (e * (1.0 + e) * (1.0 + e)) * k as f64;
    (bound_r, bound_l)
}

/// Sign helper re-exported for oracle tests of the |z| term.
pub fn taylor_sign(z: f64) -> f64 {
    sign(z)
}
