//! Verified inference: Monte-Carlo score expectations with Hoeffding
//! confidence bounds, and the maximal certified radius from composing the
//! two randomization layers (input noise and hidden-transform noise).
//!
//! All randomization here is Laplace, so the broken-probability term of
//! the certification check vanishes and the check reduces to
//! `e_lb[k] > exp(2 eps_r) * max_{i != k} e_ub[i]`.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{argmax_lowest_tie, forward_with_noise, ModelParams};
use crate::noise::{InferenceNoiseStream, NoiseBundle};
use crate::objective::PrivacyConfig;

/// Geometric grid over [lo, hi] used to search the robustness budget.
#[derive(Debug, Clone)]
pub struct EpsGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for EpsGrid {
    fn default() -> Self {
        Self { lo: 1e-3, hi: 5.0, points: 200 }
    }
}

impl EpsGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.lo];
        }
        let ratio = (self.hi / self.lo).powf(1.0 / (self.points - 1) as f64);
        (0..self.points).map(|i| self.lo * ratio.powi(i as i32)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0) || !(self.hi >= self.lo) || self.points == 0 {
            return Err(Error::Config(format!(
                "eps_r grid must satisfy 0 < lo <= hi and points >= 1, got [{}, {}] x {}",
                self.lo, self.hi, self.points
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RobustnessConfig {
    /// Monte-Carlo invocations per certification.
    pub n: usize,
    /// Confidence level in (0, 1).
    pub eta: f64,
    /// Distribution-shift control for inference noise.
    pub psi: f64,
    pub grid: EpsGrid,
    /// The mu in the input sensitivity Delta_x_r = mu * d; unit-norm
    /// perturbations correspond to 1.
    pub mu_for_sensitivity: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self { n: 1000, eta: 0.95, psi: 2.0, grid: EpsGrid::default(), mu_for_sensitivity: 1.0 }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("monte-carlo invocations n must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.psi > 0.0) {
            return Err(Error::Config(format!("psi must be positive, got {}", self.psi)));
        }
        if !(self.mu_for_sensitivity > 0.0) {
            return Err(Error::Config("mu_for_sensitivity must be positive".into()));
        }
        self.grid.validate()
    }
}

/// Mean of n randomized forward passes, each with a fresh noise pair from
/// the stream. Components stay in [0, 1] and sum to 1 up to rounding.
pub fn monte_carlo_expectation(
    params: &ModelParams,
    x: &[f64],
    n: usize,
    stream: &mut InferenceNoiseStream,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("monte-carlo invocations n must be >= 1".into()));
    }
    let k = params.n_classes();
    let mut acc = vec![0.0; k];
    for _ in 0..n {
        let (input_noise, hidden_noise) = stream.next_pair();
        let scores = forward_with_noise(params, x, &input_noise, &hidden_noise)?;
        for (a, s) in acc.iter_mut().zip(&scores) {
            *a += s;
        }
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

/// Two-sided Hoeffding bounds with a union bound over the K classes:
/// half-width w = sqrt(ln(2K / (1 - eta)) / (2n)), clipped into [0, 1].
pub fn hoeffding_bounds(
    e_hat: &[f64],
    n: usize,
    eta: f64,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("eta must lie in (0, 1), got {eta}")));
    }
    if n == 0 || k == 0 {
        return Err(Error::Config("n and k must be >= 1".into()));
    }
    let w = hoeffding_half_width(n, eta, k);
    let lb = e_hat.iter().map(|&e| (e - w).max(0.0)).collect();
    let ub = e_hat.iter().map(|&e| (e + w).min(1.0)).collect();
    Ok((lb, ub))
}

pub fn hoeffding_half_width(n: usize, eta: f64, k: usize) -> f64 {
    ((2.0 * k as f64 / (1.0 - eta)).ln() / (2.0 * n as f64)).sqrt()
}

/// The composed certification check at total randomization budget
/// `eps_sum`: strict inequality e_lb[k] > exp(2 eps_sum) * max e_ub[i != k].
pub fn robustness_check(e_lb: &[f64], e_ub: &[f64], k: usize, eps_sum: f64) -> bool {
    let max_other = e_ub
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    e_lb[k] > (2.0 * eps_sum).exp() * max_other
}

/// Group-privacy sizes for the two randomization layers and their
/// composition kappa * phi / (kappa + phi).
pub fn kappa_phi(
    delta_r: f64,
    m: usize,
    eps1: f64,
    eps_r: f64,
    delta_x_r: f64,
    delta_h_r: f64,
) -> Result<(f64, f64, f64)> {
    for (name, v) in [
        ("delta_r", delta_r),
        ("eps1", eps1),
        ("eps_r", eps_r),
        ("delta_x_r", delta_x_r),
        ("delta_h_r", delta_h_r),
    ] {
        if !(v > 0.0) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    if m == 0 {
        return Err(Error::Config("m must be >= 1".into()));
    }
    let base = delta_r / (m as f64 * eps1);
    let kappa = base / (delta_x_r / eps_r);
    let phi = 2.0 * base / (delta_h_r / eps_r);
    Ok((kappa, phi, kappa * phi / (kappa + phi)))
}

/// Sensitivities of the input and hidden layers to unit-scaled attacks:
/// Delta_x_r = mu * d, Delta_h_r = beta * ||theta1||_inf with the norm
/// taken as the maximum 1-norm over theta1's rows.
pub fn robustness_sensitivities(
    mu: f64,
    d: usize,
    beta: usize,
    theta1: &Matrix,
) -> Result<(f64, f64)> {
    if theta1.is_zero() {
        return Err(Error::DegenerateParams("zero theta1 has no usable row norm".into()));
    }
    Ok((mu * d as f64, beta as f64 * theta1.max_row_l1()))
}

/// Closed-form radius at the chosen eps_r:
/// delta_r * eps_r / (m * eps1 * (delta_x_r + delta_h_r / 2)).
pub fn radius_at(
    delta_r: f64,
    m: usize,
    eps1: f64,
    eps_r: f64,
    delta_x_r: f64,
    delta_h_r: f64,
) -> f64 {
    delta_r * eps_r / (m as f64 * eps1 * (delta_x_r + delta_h_r / 2.0))
}

/// Outcome of certifying one example.
#[derive(Debug, Clone)]
pub struct CertificationResult {
    /// Predicted label: argmax of e_hat, ties to the lowest class index.
    pub label: usize,
    pub e_hat: Vec<f64>,
    pub e_lb: Vec<f64>,
    pub e_ub: Vec<f64>,
    /// Largest eps_r on the grid passing the check; 0 when none passes.
    pub eps_r_star: f64,
    /// Maximal certified radius kappa phi / (kappa + phi); 0 when the
    /// check fails even as eps_r approaches 0.
    pub radius: f64,
    pub eta: f64,
}

impl CertificationResult {
    pub fn is_robust_at(&self, mu_a: f64) -> bool {
        self.radius >= mu_a
    }

    pub fn max_e_ub_other(&self) -> f64 {
        self.e_ub
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.label)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One Monte-Carlo pass, then an ascending scan of the eps_r grid. The
/// bounds do not depend on eps_r, and a larger eps_r only tightens the
/// right side of the check, so the scan returns the largest passing point.
pub fn radius_search(
    params: &ModelParams,
    x: &[f64],
    cfg: &RobustnessConfig,
    privacy: &PrivacyConfig,
    noise: &NoiseBundle,
    stream_id: u64,
) -> Result<CertificationResult> {
    cfg.validate()?;
    let mut stream =
        InferenceNoiseStream::new(noise, cfg.psi, privacy.delta_r(), privacy.eps1, privacy.m, stream_id)?;
    let e_hat = monte_carlo_expectation(params, x, cfg.n, &mut stream)?;
    let k = argmax_lowest_tie(&e_hat);
    let (e_lb, e_ub) = hoeffding_bounds(&e_hat, cfg.n, cfg.eta, params.n_classes())?;

    let (delta_x_r, delta_h_r) = robustness_sensitivities(
        cfg.mu_for_sensitivity,
        params.d(),
        params.beta(),
        &params.theta1,
    )?;
    let mut eps_r_star = 0.0;
    for eps_r in cfg.grid.values() {
        if robustness_check(&e_lb, &e_ub, k, eps_r) {
            eps_r_star = eps_r;
        } else {
            break;
        }
    }
    let radius = if eps_r_star > 0.0 {
        radius_at(privacy.delta_r(), privacy.m, privacy.eps1, eps_r_star, delta_x_r, delta_h_r)
    } else {
        0.0
    };
    Ok(CertificationResult { label: k, e_hat, e_lb, e_ub, eps_r_star, radius, eta: cfg.eta })
}

/// Robust iff the maximal certified radius covers the attack size mu_a.
pub fn verified_infer(
    params: &ModelParams,
    x: &[f64],
    mu_a: f64,
    cfg: &RobustnessConfig,
    privacy: &PrivacyConfig,
    noise: &NoiseBundle,
    stream_id: u64,
) -> Result<(bool, usize, f64)> {
    if mu_a < 0.0 {
        return Err(Error::Config(format!("attack size mu_a must be nonnegative, got {mu_a}")));
    }
    let result = radius_search(params, x, cfg, privacy, noise, stream_id)?;
    Ok((result.is_robust_at(mu_a), result.label, result.radius))
}

pub const CERT_CSV_HEADER: &str =
    "example_id,label,radius,eps_r_star,e_lb_k,max_e_ub_other,is_robust_at_mu_a";

pub fn cert_csv_row(example_id: usize, r: &CertificationResult, mu_a: f64) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        example_id,
        r.label,
        r.radius,
        r.eps_r_star,
        r.e_lb[r.label],
        r.max_e_ub_other(),
        r.is_robust_at(mu_a)
    )
}
