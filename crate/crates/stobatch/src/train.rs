//! Sequential and distributed trainers.
//!
//! Both trainers run the same per-step computation: craft an ensemble
//! adversarial batch from one batch, take gradients of the perturbed
//! reconstruction objective and the combined output objective over the
//! benign batch and the crafted batch, then descend. The sequential
//! trainer cycles batches in plan order and crafts from the next batch;
//! the distributed trainer holds fixed batch pairs per local trainer and
//! averages gradient messages on a parameter server behind a synchronous
//! barrier. With one trainer and an aligned schedule the two produce the
//! same trajectory, which the test suite pins.
//!
//! The privacy budget of a run does not depend on the step count: batches
//! are fixed and disjoint, and the noise is drawn once.

use std::path::PathBuf;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::attack::{craft_ensemble_batch, AttackConfig, AttackModel};
use crate::data::PerturbedBatchPlan;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{encode, grad_classifier, grad_reconstruction, noised_hidden, ModelParams};
use crate::noise::NoiseBundle;
use crate::objective::{
    accountant, accountant_declared, adversarial_objective, perturbed_output_loss,
    PrivacyConfig, PrivacyReport,
};
use crate::rng::{rng_for, sub_seed};

#[derive(Debug, Clone)]
pub struct TrainingConfig {
    /// Total gradient steps T.
    pub steps: usize,
    /// Constant learning rate.
    pub learning_rate: f64,
    /// Batch size m; must match the plan and the privacy config.
    pub m: usize,
    /// Adversarial loss weight.
    pub xi: f64,
    pub n_classes: usize,
    /// Tanh layer widths after the encoder; the last entry is |h_pi|.
    pub hidden: Vec<usize>,
    pub attack: AttackConfig,
    pub privacy: PrivacyConfig,
    /// Local trainers picked per step in distributed mode.
    pub trainer_count: usize,
    pub seed: u64,
    /// Write a checkpoint every k steps (0 = final state only).
    pub checkpoint_every: usize,
    /// Directory for checkpoints; no files are written when unset.
    pub out_dir: Option<PathBuf>,
    /// Synchronous-barrier timeout; a missing trainer fails the run.
    pub barrier_timeout: Duration,
}

impl TrainingConfig {
    pub fn validate(&self, plan: &PerturbedBatchPlan) -> Result<()> {
        self.privacy.validate()?;
        self.attack.validate()?;
        if self.m != plan.m() || self.m != self.privacy.m {
            return Err(Error::Config(format!(
                "batch size mismatch: config m={}, plan m={}, privacy m={}",
                self.m,
                plan.m(),
                self.privacy.m
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one hidden layer (h_pi) required".into()));
        }
        if *self.hidden.last().unwrap() != self.privacy.h_pi_size {
            return Err(Error::Config(format!(
                "last hidden width {} must equal privacy h_pi_size {}",
                self.hidden.last().unwrap(),
                self.privacy.h_pi_size
            )));
        }
        if plan.dim() != self.privacy.d {
            return Err(Error::Config(format!(
                "feature dimension {} vs privacy d {}",
                plan.dim(),
                self.privacy.d
            )));
        }
        if plan.n_batches() < 2 {
            return Err(Error::Config(
                "need at least two disjoint batches (benign and adversarial source)".into(),
            ));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if !(self.xi >= 0.0) {
            return Err(Error::Config("xi must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A local trainer's fixed batch pair: gradients come from the benign
/// batch and from adversarial examples crafted out of the second batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainerAssignment {
    pub trainer_id: usize,
    pub benign_batch: usize,
    pub adv_batch: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub mu_t: f64,
    pub mean_loss_benign: f64,
    pub mean_loss_adv: f64,
    pub combined_objective: f64,
}

/// Immutable gradient message sent to the parameter server.
#[derive(Debug, Clone)]
pub struct GradientMessage {
    pub trainer_id: usize,
    pub step: usize,
    pub grad_theta1: Matrix,
    pub grad_theta2: Vec<Matrix>,
    pub stats: StepStats,
}

/// One local step: craft the ensemble batch from the assignment's second
/// batch, then compute both gradient sets on the benign batch plus the
/// crafted batch against the given parameter snapshot. Global state is
/// never touched.
#[allow(clippy::too_many_arguments)]
pub fn local_trainer_step(
    assignment: TrainerAssignment,
    params: &ModelParams,
    plan: &PerturbedBatchPlan,
    labels: &[usize],
    n_classes: usize,
    mu_t: f64,
    noise: &NoiseBundle,
    xi: f64,
    attack: &AttackConfig,
    attack_seed: u64,
    step: usize,
) -> Result<GradientMessage> {
    if assignment.benign_batch == assignment.adv_batch {
        return Err(Error::PrivacyViolation(format!(
            "trainer {} was assigned the same batch {} for both roles",
            assignment.trainer_id, assignment.benign_batch
        )));
    }
    let m = plan.m();
    let benign = plan.batch(assignment.benign_batch);
    let adv_source = plan.batch(assignment.adv_batch);

    let model = AttackModel::new(params, noise, m);
    let adv = craft_ensemble_batch(&model, &adv_source, attack, mu_t, attack_seed)?;

    // theta1 gradient over the union of both batches, rescaled to the
    // per-example mean so one learning rate serves both parameter groups;
    // the constant prefactor moves neither the optimum nor the accounting
    let mut union_rows: Vec<&[f64]> = (0..benign.len()).map(|p| benign.feature_row(p)).collect();
    for f in &adv.features {
        union_rows.push(f.as_slice());
    }
    let mut grad_theta1 = grad_reconstruction(&params.theta1, &union_rows, &noise.chi2, m)?;
    grad_theta1.scale(1.0 / (m as f64 * (1.0 + xi)));

    // hidden representations and per-example output losses
    let w_pi = params.w_pi();
    let mut benign_h = Vec::with_capacity(benign.len());
    let mut benign_losses = Vec::with_capacity(benign.len());
    let benign_labels: Vec<usize> = benign.indices.iter().map(|&i| labels[i]).collect();
    for (pos, &label) in benign_labels.iter().enumerate() {
        let h = encode(benign.feature_row(pos), &params.theta1)?;
        let h_bar = noised_hidden(&h, &noise.chi2, m)?;
        let trace = crate::nn::classify(&h_bar, &params.theta2)?;
        let mut y = vec![0.0; n_classes];
        y[label] = 1.0;
        benign_losses.push(perturbed_output_loss(&trace.h_pi, w_pi, &y, &noise.chi3, m)?);
        benign_h.push(h_bar);
    }
    let mut adv_h = Vec::with_capacity(adv.features.len());
    let mut adv_losses = Vec::with_capacity(adv.features.len());
    let adv_labels: Vec<usize> = adv.source_indices.iter().map(|&i| labels[i]).collect();
    for (feat, &label) in adv.features.iter().zip(&adv_labels) {
        let h = encode(feat, &params.theta1)?;
        let h_bar = noised_hidden(&h, &noise.chi2, m)?;
        let trace = crate::nn::classify(&h_bar, &params.theta2)?;
        let mut y = vec![0.0; n_classes];
        y[label] = 1.0;
        adv_losses.push(perturbed_output_loss(&trace.h_pi, w_pi, &y, &noise.chi3, m)?);
        adv_h.push(h_bar);
    }

    let combined = adversarial_objective(
        &benign_losses,
        &adv_losses,
        benign.indices,
        &adv.source_indices,
        xi,
        m,
    )?;
    if !combined.is_finite() {
        return Err(Error::Divergence { step, msg: format!("combined objective {combined}") });
    }

    // theta2 gradient of the combined objective
    let weight = 1.0 / (m as f64 * (1.0 + xi));
    let mut grad_theta2 = grad_classifier(
        &params.theta2,
        &benign_h,
        &benign_labels,
        n_classes,
        &noise.chi3,
        m,
        weight,
    )?;
    let adv_grads = grad_classifier(
        &params.theta2,
        &adv_h,
        &adv_labels,
        n_classes,
        &noise.chi3,
        m,
        xi * weight,
    )?;
    for (g, a) in grad_theta2.iter_mut().zip(&adv_grads) {
        g.add_scaled(a, 1.0)?;
    }

    let stats = StepStats {
        mu_t,
        mean_loss_benign: benign_losses.iter().sum::<f64>() / m as f64,
        mean_loss_adv: adv_losses.iter().sum::<f64>() / m as f64,
        combined_objective: combined,
    };
    Ok(GradientMessage {
        trainer_id: assignment.trainer_id,
        step,
        grad_theta1,
        grad_theta2,
        stats,
    })
}

/// Synchronous aggregation: exactly `expected` messages for the current
/// step, reduced in ascending trainer id order, then one descent step
/// with the mean gradient. Returns the aggregated stats and the mean
/// gradient norm.
pub fn aggregate(
    messages: &[GradientMessage],
    step: usize,
    learning_rate: f64,
    params: &mut ModelParams,
    expected: usize,
) -> Result<(StepStats, f64)> {
    if messages.len() != expected {
        return Err(Error::IncompleteRound(format!(
            "step {step}: got {} of {expected} gradient messages",
            messages.len()
        )));
    }
    for msg in messages {
        if msg.step != step {
            return Err(Error::StaleGradient(format!(
                "trainer {} sent step {} during step {step}",
                msg.trainer_id, msg.step
            )));
        }
    }
    let mut order: Vec<usize> = (0..messages.len()).collect();
    order.sort_by_key(|&i| messages[i].trainer_id);
    for w in order.windows(2) {
        if messages[w[0]].trainer_id == messages[w[1]].trainer_id {
            return Err(Error::Consistency(format!(
                "duplicate message from trainer {}",
                messages[w[0]].trainer_id
            )));
        }
    }

    let n = messages.len() as f64;
    let first = &messages[order[0]];
    let mut mean_t1 = Matrix::zeros(first.grad_theta1.rows(), first.grad_theta1.cols());
    let mut mean_t2: Vec<Matrix> =
        first.grad_theta2.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
    let mut mu_sum = 0.0;
    let mut benign_sum = 0.0;
    let mut adv_sum = 0.0;
    let mut combined_sum = 0.0;
    for &i in &order {
        let msg = &messages[i];
        mean_t1.add_scaled(&msg.grad_theta1, 1.0 / n)?;
        for (acc, g) in mean_t2.iter_mut().zip(&msg.grad_theta2) {
            acc.add_scaled(g, 1.0 / n)?;
        }
        mu_sum += msg.stats.mu_t;
        benign_sum += msg.stats.mean_loss_benign;
        adv_sum += msg.stats.mean_loss_adv;
        combined_sum += msg.stats.combined_objective;
    }
    let mut norm_sq = mean_t1.l2_norm_sq();
    for g in &mean_t2 {
        norm_sq += g.l2_norm_sq();
    }
    if !norm_sq.is_finite() {
        return Err(Error::Divergence { step, msg: "non-finite gradient".into() });
    }

    params.theta1.add_scaled(&mean_t1, -learning_rate)?;
    for (layer, g) in params.theta2.iter_mut().zip(&mean_t2) {
        layer.add_scaled(g, -learning_rate)?;
    }
    let stats = StepStats {
        mu_t: mu_sum / n,
        mean_loss_benign: benign_sum / n,
        mean_loss_adv: adv_sum / n,
        combined_objective: combined_sum / n,
    };
    Ok((stats, norm_sq.sqrt()))
}

#[derive(Debug, Clone, Copy)]
pub struct RunLogRow {
    pub step: usize,
    pub mean_loss_benign: f64,
    pub mean_loss_adv: f64,
    pub grad_norm: f64,
    pub mu_t: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<RunLogRow>,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,mean_loss_benign,mean_loss_adv,grad_norm,mu_t,wall_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.mean_loss_benign, r.mean_loss_adv, r.grad_norm, r.mu_t, r.wall_ms
            ));
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: PrivacyReport,
    pub log: RunLog,
}

/// Draw mu_t in (0, 1] for (step, slot).
fn draw_mu(seed: u64, step: usize, slot: usize) -> f64 {
    let u: f64 = rng_for("mu", seed, &[step as u64, slot as u64]).gen_range(0.0..1.0);
    1.0 - u
}

fn attack_seed(seed: u64, step: usize, slot: usize) -> u64 {
    sub_seed("attack", seed, &[step as u64, slot as u64])
}

fn finish_report(cfg: &TrainingConfig, params: &ModelParams) -> Result<PrivacyReport> {
    if cfg.privacy.theta1_norm_cap.is_some() {
        accountant_declared(&cfg.privacy)
    } else {
        accountant(&cfg.privacy, &params.theta1)
    }
}

fn write_checkpoint(cfg: &TrainingConfig, step: usize, params: &ModelParams) -> Result<()> {
    if let Some(dir) = &cfg.out_dir {
        params.save(dir.join(format!("model_{step}.sbck")))?;
    }
    Ok(())
}

fn guard_noise(plan: &PerturbedBatchPlan, noise: &NoiseBundle) -> Result<()> {
    if plan.chi1_fingerprint() != noise.chi1_fingerprint() {
        return Err(Error::PrivacyViolation(
            "noise bundle does not match the draw the batch plan was perturbed with".into(),
        ));
    }
    Ok(())
}

/// Iterative trainer: step t takes batch t mod (N/m) as the benign batch
/// and crafts the ensemble adversarial batch from the next batch.
pub fn train_sequential(
    cfg: &TrainingConfig,
    plan: &PerturbedBatchPlan,
    labels: &[usize],
    noise: &NoiseBundle,
) -> Result<TrainOutcome> {
    cfg.validate(plan)?;
    guard_noise(plan, noise)?;
    let nb = plan.n_batches();
    let plan_hash = plan.plan().hash();
    let mut params = ModelParams::init(
        cfg.privacy.d,
        cfg.privacy.beta,
        &cfg.hidden,
        cfg.n_classes,
        cfg.seed,
    )?;
    let mut log = RunLog::default();
    for t in 0..cfg.steps {
        let started = Instant::now();
        let i = t % nb;
        let assignment =
            TrainerAssignment { trainer_id: 0, benign_batch: i, adv_batch: (i + 1) % nb };
        let mu_t = draw_mu(cfg.seed, t, 0);
        let msg = local_trainer_step(
            assignment,
            &params,
            plan,
            labels,
            cfg.n_classes,
            mu_t,
            noise,
            cfg.xi,
            &cfg.attack,
            attack_seed(cfg.seed, t, 0),
            t,
        )?;
        let (stats, grad_norm) =
            aggregate(&[msg], t, cfg.learning_rate, &mut params, 1)?;
        log.rows.push(RunLogRow {
            step: t,
            mean_loss_benign: stats.mean_loss_benign,
            mean_loss_adv: stats.mean_loss_adv,
            grad_norm,
            mu_t: stats.mu_t,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if (t + 1) % nb == 0 && plan.plan().hash() != plan_hash {
            return Err(Error::PrivacyViolation("batch plan changed between epochs".into()));
        }
        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            write_checkpoint(cfg, t + 1, &params)?;
        }
    }
    write_checkpoint(cfg, cfg.steps, &params)?;
    let report = finish_report(cfg, &params)?;
    Ok(TrainOutcome { params, report, log })
}

/// Test-visible schedule injection for the distributed trainer: explicit
/// assignments and, optionally, the trainers picked at each step.
#[derive(Debug, Clone, Default)]
pub struct StobatchSchedule {
    pub assignments: Option<Vec<TrainerAssignment>>,
    pub picks: Option<Vec<Vec<usize>>>,
}

/// Default assignment: shuffle the batch indices once, then give trainer i
/// the pair (perm[2i], perm[2i+1]), so every batch belongs to at most one
/// trainer.
pub fn default_assignments(plan: &PerturbedBatchPlan, seed: u64) -> Vec<TrainerAssignment> {
    let nb = plan.n_batches();
    let mut perm: Vec<usize> = (0..nb).collect();
    perm.shuffle(&mut rng_for("assign", seed, &[]));
    (0..nb / 2)
        .map(|i| TrainerAssignment {
            trainer_id: i,
            benign_batch: perm[2 * i],
            adv_batch: perm[2 * i + 1],
        })
        .collect()
}

/// Parameter-server trainer: each step picks `trainer_count` local
/// trainers, which compute gradient messages concurrently against the
/// step's parameter snapshot; the server averages them in ascending
/// trainer id order and applies one descent step.
pub fn train_stobatch(
    cfg: &TrainingConfig,
    plan: &PerturbedBatchPlan,
    labels: &[usize],
    noise: &NoiseBundle,
    schedule: Option<&StobatchSchedule>,
) -> Result<TrainOutcome> {
    cfg.validate(plan)?;
    guard_noise(plan, noise)?;
    let assignments = match schedule.and_then(|s| s.assignments.clone()) {
        Some(a) => a,
        None => default_assignments(plan, cfg.seed),
    };
    if assignments.is_empty() {
        return Err(Error::Config("no trainer assignments available".into()));
    }
    if cfg.trainer_count == 0 || cfg.trainer_count > assignments.len() {
        return Err(Error::Config(format!(
            "trainer_count {} must be in 1..={} (floor of N/(2m) available pairs)",
            cfg.trainer_count,
            assignments.len()
        )));
    }
    let picks_override = schedule.and_then(|s| s.picks.clone());
    let nb = plan.n_batches();
    let plan_hash = plan.plan().hash();
    let mut params = ModelParams::init(
        cfg.privacy.d,
        cfg.privacy.beta,
        &cfg.hidden,
        cfg.n_classes,
        cfg.seed,
    )?;
    let mut log = RunLog::default();

    for t in 0..cfg.steps {
        let started = Instant::now();
        let picked: Vec<usize> = match &picks_override {
            Some(picks) => picks[t % picks.len()].clone(),
            None => {
                let mut ids: Vec<usize> = (0..assignments.len()).collect();
                ids.shuffle(&mut rng_for("pick", cfg.seed, &[t as u64]));
                ids.truncate(cfg.trainer_count);
                ids
            }
        };
        if picked.len() != cfg.trainer_count {
            return Err(Error::Config(format!(
                "step {t}: schedule picked {} trainers, expected {}",
                picked.len(),
                cfg.trainer_count
            )));
        }

        // Retry the step if a stale-tagged message slips through; consistent
        // with dropping the message and re-running the round.
        let mut attempts = 0;
        let (stats, grad_norm) = loop {
            attempts += 1;
            match run_round(cfg, plan, labels, noise, &assignments, &picked, &params, t) {
                Ok(messages) => {
                    match aggregate(&messages, t, cfg.learning_rate, &mut params, picked.len()) {
                        Ok(out) => break out,
                        Err(Error::StaleGradient(msg)) if attempts < 3 => {
                            let _ = msg;
                            continue;
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(e) => return Err(e),
            }
        };

        log.rows.push(RunLogRow {
            step: t,
            mean_loss_benign: stats.mean_loss_benign,
            mean_loss_adv: stats.mean_loss_adv,
            grad_norm,
            mu_t: stats.mu_t,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if (t + 1) % nb == 0 && plan.plan().hash() != plan_hash {
            return Err(Error::PrivacyViolation("batch plan changed between epochs".into()));
        }
        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            write_checkpoint(cfg, t + 1, &params)?;
        }
    }
    write_checkpoint(cfg, cfg.steps, &params)?;
    let report = finish_report(cfg, &params)?;
    Ok(TrainOutcome { params, report, log })
}

/// One synchronous round: picked trainers compute concurrently against the
/// shared snapshot and send immutable messages; the round fails if any
/// message is missing when the barrier times out.
#[allow(clippy::too_many_arguments)]
fn run_round(
    cfg: &TrainingConfig,
    plan: &PerturbedBatchPlan,
    labels: &[usize],
    noise: &NoiseBundle,
    assignments: &[TrainerAssignment],
    picked: &[usize],
    params: &ModelParams,
    step: usize,
) -> Result<Vec<GradientMessage>> {
    let (tx, rx) = mpsc::channel::<Result<GradientMessage>>();
    std::thread::scope(|scope| {
        for (slot, &trainer_ix) in picked.iter().enumerate() {
            let tx = tx.clone();
            let assignment = assignments[trainer_ix];
            let mu_t = draw_mu(cfg.seed, step, slot);
            let seed = attack_seed(cfg.seed, step, slot);
            scope.spawn(move || {
                let msg = local_trainer_step(
                    assignment,
                    params,
                    plan,
                    labels,
                    cfg.n_classes,
                    mu_t,
                    noise,
                    cfg.xi,
                    &cfg.attack,
                    seed,
                    step,
                );
                let _ = tx.send(msg);
            });
        }
        drop(tx);
        let mut messages = Vec::with_capacity(picked.len());
        for _ in 0..picked.len() {
            match rx.recv_timeout(cfg.barrier_timeout) {
                Ok(Ok(msg)) => messages.push(msg),
                Ok(Err(e)) => return Err(e),
                Err(_) => {
                    return Err(Error::IncompleteRound(format!(
                        "step {step}: barrier timed out with {} of {} messages",
                        messages.len(),
                        picked.len()
                    )))
                }
            }
        }
        Ok(messages)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_batch_plan, perturb_batches, synth_dataset};
    use crate::noise::draw_training_noise;

    fn toy_setup(
        n: usize,
        m: usize,
        eps1: f64,
        eps2: f64,
        seed: u64,
    ) -> (TrainingConfig, PerturbedBatchPlan, Vec<usize>, NoiseBundle) {
        let d = 4;
        let beta = 3;
        let h_pi = 3;
        let data = synth_dataset(2, d, n, seed).unwrap();
        let delta_r = (d * (beta + 2)) as f64;
        let delta_l2 = 2.0 * h_pi as f64;
        let noise =
            draw_training_noise(delta_r, eps1, delta_l2, eps2, d, beta, h_pi, seed).unwrap();
        let plan = build_batch_plan(n, m, seed).unwrap();
        let plan = perturb_batches(plan, &data.features, &noise.chi1, m).unwrap();
        let cfg = TrainingConfig {
            steps: 4,
            learning_rate: 1e-3,
            m,
            xi: 1.0,
            n_classes: 2,
            hidden: vec![h_pi],
            attack: AttackConfig {
                mu: 0.2,
                steps: 2,
                decay: 1.0,
                kinds: vec![crate::attack::AttackKind::Ifgsm],
                box_clip: false,
                madry_step_frac: 0.25,
            },
            privacy: PrivacyConfig {
                eps1,
                eps2,
                m,
                d,
                beta,
                h_pi_size: h_pi,
                theta1_norm_cap: None,
            },
            trainer_count: 1,
            seed,
            checkpoint_every: 0,
            out_dir: None,
            barrier_timeout: Duration::from_secs(30),
        };
        (cfg, plan, data.labels, noise)
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let (mut cfg, plan, labels, noise) = toy_setup(12, 3, 10.0, 10.0, 1);
        cfg.steps = 0;
        let out = train_sequential(&cfg, &plan, &labels, &noise).unwrap();
        let init = ModelParams::init(4, 3, &[3], 2, cfg.seed).unwrap();
        assert_eq!(out.params, init);
        assert!(out.log.rows.is_empty());
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let (mut cfg, plan, labels, noise) = toy_setup(12, 3, 10.0, 10.0, 2);
        cfg.learning_rate = 0.0;
        cfg.steps = 3;
        let out = train_sequential(&cfg, &plan, &labels, &noise).unwrap();
        let init = ModelParams::init(4, 3, &[3], 2, cfg.seed).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let (cfg, plan, labels, noise) = toy_setup(12, 3, 10.0, 10.0, 3);
        let a = train_sequential(&cfg, &plan, &labels, &noise).unwrap();
        let b = train_sequential(&cfg, &plan, &labels, &noise).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn redrawn_noise_is_rejected() {
        let (cfg, plan, labels, _) = toy_setup(12, 3, 10.0, 10.0, 4);
        // a different draw than the one the plan was perturbed with
        let other = draw_training_noise(20.0, 10.0, 6.0, 10.0, 4, 3, 3, 999).unwrap();
        let r = train_sequential(&cfg, &plan, &labels, &other);
        assert!(matches!(r, Err(Error::PrivacyViolation(_))));
    }

    #[test]
    fn local_step_is_pure() {
        let (cfg, plan, labels, noise) = toy_setup(12, 3, 10.0, 10.0, 5);
        let params = ModelParams::init(4, 3, &[3], 2, cfg.seed).unwrap();
        let a = local_trainer_step(
            TrainerAssignment { trainer_id: 0, benign_batch: 0, adv_batch: 1 },
            &params, &plan, &labels, 2, 0.4, &noise, 1.0, &cfg.attack, 42, 0,
        )
        .unwrap();
        let b = local_trainer_step(
            TrainerAssignment { trainer_id: 0, benign_batch: 0, adv_batch: 1 },
            &params, &plan, &labels, 2, 0.4, &noise, 1.0, &cfg.attack, 42, 0,
        )
        .unwrap();
        assert_eq!(a.grad_theta1, b.grad_theta1);
        assert_eq!(a.grad_theta2, b.grad_theta2);
    }

    #[test]
    fn overlapping_batch_pair_rejected() {
        let (cfg, plan, labels, noise) = toy_setup(12, 3, 10.0, 10.0, 6);
        let params = ModelParams::init(4, 3, &[3], 2, cfg.seed).unwrap();
        let r = local_trainer_step(
            TrainerAssignment { trainer_id: 0, benign_batch: 1, adv_batch: 1 },
            &params, &plan, &labels, 2, 0.4, &noise, 1.0, &cfg.attack, 42, 0,
        );
        assert!(matches!(r, Err(Error::PrivacyViolation(_))));
    }

    fn zero_message(trainer_id: usize, step: usize, like: &ModelParams) -> GradientMessage {
        GradientMessage {
            trainer_id,
            step,
            grad_theta1: Matrix::zeros(like.theta1.rows(), like.theta1.cols()),
            grad_theta2: like.theta2.iter().map(|l| Matrix::zeros(l.rows(), l.cols())).collect(),
            stats: StepStats {
                mu_t: 0.5,
                mean_loss_benign: 0.0,
                mean_loss_adv: 0.0,
                combined_objective: 0.0,
            },
        }
    }

    #[test]
    fn aggregate_zero_gradients_no_update() {
        let mut params = ModelParams::init(4, 3, &[3], 2, 7).unwrap();
        let before = params.clone();
        let msgs = vec![zero_message(0, 0, &params), zero_message(1, 0, &params)];
        aggregate(&msgs, 0, 0.1, &mut params, 2).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn aggregate_cancellation_and_mean_identity() {
        let mut params = ModelParams::init(4, 3, &[3], 2, 8).unwrap();
        let before = params.clone();
        let mut plus = zero_message(0, 0, &params);
        plus.grad_theta1.set(0, 0, 2.0);
        let mut minus = zero_message(1, 0, &params);
        minus.grad_theta1.set(0, 0, -2.0);
        aggregate(&[plus.clone(), minus], 0, 0.1, &mut params, 2).unwrap();
        assert_eq!(params, before);

        // duplicate gradients across trainers act like a single trainer
        let mut a = params.clone();
        let mut b = params.clone();
        let dup = vec![plus.clone(), GradientMessage { trainer_id: 1, ..plus.clone() }];
        aggregate(&dup, 0, 0.1, &mut a, 2).unwrap();
        aggregate(&[plus], 0, 0.1, &mut b, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_order_independent() {
        let base = ModelParams::init(4, 3, &[3], 2, 9).unwrap();
        let mut m1 = zero_message(0, 0, &base);
        m1.grad_theta1.set(0, 0, 1.0);
        let mut m2 = zero_message(1, 0, &base);
        m2.grad_theta1.set(0, 1, -1.0);
        let mut a = base.clone();
        let mut b = base.clone();
        aggregate(&[m1.clone(), m2.clone()], 0, 0.1, &mut a, 2).unwrap();
        aggregate(&[m2, m1], 0, 0.1, &mut b, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_rejects_stale_and_incomplete() {
        let base = ModelParams::init(4, 3, &[3], 2, 10).unwrap();
        let mut params = base.clone();
        let stale = zero_message(0, 3, &base);
        assert!(matches!(
            aggregate(&[stale], 4, 0.1, &mut params, 1),
            Err(Error::StaleGradient(_))
        ));
        let one = zero_message(0, 0, &base);
        assert!(matches!(
            aggregate(&[one], 0, 0.1, &mut params, 2),
            Err(Error::IncompleteRound(_))
        ));
    }

    #[test]
    fn stobatch_single_trainer_runs() {
        let (mut cfg, plan, labels, noise) = toy_setup(12, 3, 10.0, 10.0, 11);
        cfg.trainer_count = 1;
        cfg.steps = 3;
        let out = train_stobatch(&cfg, &plan, &labels, &noise, None).unwrap();
        assert_eq!(out.log.rows.len(), 3);
    }

    #[test]
    fn stobatch_multi_trainer_deterministic() {
        let (mut cfg, plan, labels, noise) = toy_setup(24, 3, 10.0, 10.0, 12);
        cfg.trainer_count = 3;
        cfg.steps = 3;
        let a = train_stobatch(&cfg, &plan, &labels, &noise, None).unwrap();
        let b = train_stobatch(&cfg, &plan, &labels, &noise, None).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn stobatch_rejects_oversubscription() {
        let (mut cfg, plan, labels, noise) = toy_setup(12, 3, 10.0, 10.0, 13);
        // 4 batches -> 2 disjoint pairs available
        cfg.trainer_count = 3;
        let r = train_stobatch(&cfg, &plan, &labels, &noise, None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn loss_descends_on_separable_data_with_generous_budget() {
        let (mut cfg, plan, labels, noise) = toy_setup(40, 4, 10.0, 10.0, 14);
        cfg.steps = 500;
        cfg.learning_rate = 5e-3;
        let out = train_sequential(&cfg, &plan, &labels, &noise).unwrap();
        let first = out.log.rows.first().unwrap().mean_loss_benign;
        let last = out.log.rows.last().unwrap().mean_loss_benign;
        assert!(
            last < first,
            "mean training loss should fall: step1 {first} vs step500 {last}"
        );
    }
}
