//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Oracles here are independent of the implementation paths they check:
//! sensitivity bounds come from literal neighbor enumeration, gradients
//! from central finite differences, the optimum-gap bound from the exact
//! closed-form series objective, and the radius search from exhaustive
//! grid evaluation.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;

use stobatch::attack::{ifgsm, pgd_madry, AttackConfig, AttackKind, AttackModel};
use stobatch::certify::{
    hoeffding_bounds, hoeffding_half_width, monte_carlo_expectation, radius_search,
    robustness_check, EpsGrid, RobustnessConfig,
};
use stobatch::data::{
    avg_pool, build_batch_plan, load_idx_pair, normalize_signed, perturb_batches, synth_dataset,
    Dataset, PerturbedBatchPlan,
};
use stobatch::linalg::Matrix;
use stobatch::metrics::{certified_accuracy, conventional_accuracy};
use stobatch::nn::{
    argmax_lowest_tie, encode_pre, grad_classifier, grad_reconstruction, ModelParams,
};
use stobatch::noise::{draw_training_noise, InferenceNoiseStream, NoiseBundle};
use stobatch::objective::{
    accountant_declared, batch_perturbed_output_loss, perturbed_reconstruction_loss,
    sensitivity_output, sensitivity_reconstruction, split_budget, PrivacyConfig,
};
use stobatch::rng::{rng_for, sub_seed};
use stobatch::train::{
    train_sequential, train_stobatch, StobatchSchedule, TrainerAssignment, TrainingConfig,
};

fn pass(criterion: usize, what: &str) {
    println!("acceptance criterion {criterion} ({what}): PASS");
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn c1_sensitivity_oracles_brute_force() {
    let started = Instant::now();
    let mut rng = rng_for("c1", 1, &[]);
    let instances = 1200;

    // Reconstruction objective: swap every position of a random micro-batch
    // against a random replacement tuple and evaluate the coefficient-change
    // expression literally.
    for _ in 0..instances {
        let m = rng.gen_range(1..=5usize);
        let d = rng.gen_range(1..=6usize);
        let beta = rng.gen_range(1..=3usize);
        let xs: Vec<Vec<f64>> =
            (0..m).map(|_| (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
        let hs: Vec<Vec<f64>> =
            (0..m).map(|_| (0..beta).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
        let x_new: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let h_new: Vec<f64> = (0..beta).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let bound = sensitivity_reconstruction(d, beta).unwrap();

        for swap in 0..m {
            let mut total = 0.0;
            for j in 0..d {
                // || sum_i h_i/2 - sum_i h'_i/2 ||_1 over the beta components
                let mut h_term = 0.0;
                for b in 0..beta {
                    let before: f64 = hs.iter().map(|h| 0.5 * h[b]).sum();
                    let after: f64 = hs
                        .iter()
                        .enumerate()
                        .map(|(i, h)| 0.5 * if i == swap { h_new[b] } else { h[b] })
                        .sum();
                    h_term += (before - after).abs();
                }
                let x_before: f64 = xs.iter().map(|x| x[j]).sum();
                let x_after: f64 = xs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| if i == swap { x_new[j] } else { x[j] })
                    .sum();
                total += h_term + (x_before - x_after).abs();
            }
            assert!(
                total <= bound + 1e-9,
                "reconstruction sensitivity violated: {total} > {bound} (m={m} d={d} beta={beta})"
            );
        }
    }

    // Output objective: one-hot labels, h_pi in [-1,1]; swap the last tuple.
    for _ in 0..instances {
        let h_pi_size = rng.gen_range(1..=6usize);
        let k = rng.gen_range(2..=4usize);
        let h: Vec<f64> = (0..h_pi_size).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let h_new: Vec<f64> = (0..h_pi_size).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let label = rng.gen_range(0..k);
        let label_new = rng.gen_range(0..k);
        let bound = sensitivity_output(h_pi_size).unwrap();

        let mut total = 0.0;
        for class in 0..k {
            let y = if class == label { 1.0 } else { 0.0 };
            let y_new = if class == label_new { 1.0 } else { 0.0 };
            for a in 0..h_pi_size {
                total += (h[a] * y - h_new[a] * y_new).abs();
            }
        }
        assert!(total <= bound + 1e-9, "output sensitivity violated: {total} > {bound}");
    }

    assert!(started.elapsed() < Duration::from_secs(60));
    pass(1, "sensitivity oracles, brute-force neighbor enumeration");
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn c2_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut rng = rng_for("c2", 2, &[]);
    let step = 1e-5;
    let tol = 1e-4;

    // perturbed reconstruction objective
    let mut done = 0;
    while done < 100 {
        let d = rng.gen_range(1..=5usize);
        let beta = rng.gen_range(1..=4usize);
        let m = rng.gen_range(1..=4usize);
        let theta1 = Matrix::from_flat(
            d,
            beta,
            (0..d * beta).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        )
        .unwrap();
        let rows: Vec<Vec<f64>> =
            (0..m).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let near_kink = rows.iter().any(|r| {
            encode_pre(r, &theta1).unwrap().iter().any(|v| (v.abs() - 1.0).abs() < 1e-3)
        });
        if near_kink {
            continue;
        }
        let chi2: Vec<f64> = (0..beta).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let batch: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let analytic = grad_reconstruction(&theta1, &batch, &chi2, m).unwrap();
        for r in 0..d {
            for c in 0..beta {
                let mut plus = theta1.clone();
                plus.set(r, c, theta1.get(r, c) + step);
                let mut minus = theta1.clone();
                minus.set(r, c, theta1.get(r, c) - step);
                let lp = perturbed_reconstruction_loss(&batch, &plus, &chi2, m).unwrap();
                let lm = perturbed_reconstruction_loss(&batch, &minus, &chi2, m).unwrap();
                let numeric = (lp - lm) / (2.0 * step);
                let a = analytic.get(r, c);
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "reconstruction grad ({r},{c}): analytic {a} vs fd {numeric}"
                );
            }
        }
        done += 1;
    }

    // perturbed output objective
    let mut done = 0;
    while done < 100 {
        let beta = rng.gen_range(2..=3usize);
        let h_pi = rng.gen_range(2..=4usize);
        let k = rng.gen_range(2..=3usize);
        let n = rng.gen_range(1..=3usize);
        let m = rng.gen_range(1..=4usize);
        let mk = |rows: usize, cols: usize, rng: &mut rand_chacha::ChaCha20Rng| {
            Matrix::from_flat(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-0.8..0.8)).collect())
                .unwrap()
        };
        let theta2 = vec![mk(beta, h_pi, &mut rng), mk(h_pi, k, &mut rng)];
        let h_bars: Vec<Vec<f64>> =
            (0..n).map(|_| (0..beta).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let chi3: Vec<f64> = (0..h_pi).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kinky = h_bars.iter().any(|hb| {
            stobatch::nn::classify(hb, &theta2).unwrap().logits.iter().any(|z| z.abs() < 1e-3)
        });
        if kinky {
            continue;
        }
        let analytic = grad_classifier(&theta2, &h_bars, &labels, k, &chi3, m, 1.0).unwrap();
        for (li, layer) in theta2.iter().enumerate() {
            for r in 0..layer.rows() {
                for c in 0..layer.cols() {
                    let mut plus = theta2.clone();
                    plus[li].set(r, c, layer.get(r, c) + step);
                    let mut minus = theta2.clone();
                    minus[li].set(r, c, layer.get(r, c) - step);
                    let lp =
                        batch_perturbed_output_loss(&plus, &h_bars, &labels, k, &chi3, m).unwrap();
                    let lm =
                        batch_perturbed_output_loss(&minus, &h_bars, &labels, k, &chi3, m).unwrap();
                    let numeric = (lp - lm) / (2.0 * step);
                    let a = analytic[li].get(r, c);
                    let denom = a.abs().max(numeric.abs()).max(1e-8);
                    assert!(
                        (a - numeric).abs() / denom < tol,
                        "output grad layer {li} ({r},{c}): analytic {a} vs fd {numeric}"
                    );
                }
            }
        }
        done += 1;
    }

    assert!(started.elapsed() < Duration::from_secs(30));
    pass(2, "analytic gradients vs central finite differences");
}

// ---------------------------------------------------------------- criterion 3

fn toy_training(
    n: usize,
    m: usize,
    seed: u64,
    steps: usize,
    out_dir: Option<PathBuf>,
) -> (TrainingConfig, PerturbedBatchPlan, Vec<usize>, NoiseBundle) {
    let d = 4;
    let beta = 3;
    let h_pi = 3;
    let data = synth_dataset(2, d, n, seed).unwrap();
    let privacy = PrivacyConfig {
        eps1: 10.0,
        eps2: 10.0,
        m,
        d,
        beta,
        h_pi_size: h_pi,
        theta1_norm_cap: None,
    };
    let noise = draw_training_noise(
        privacy.delta_r(),
        privacy.eps1,
        privacy.delta_l2(),
        privacy.eps2,
        d,
        beta,
        h_pi,
        seed,
    )
    .unwrap();
    let plan = build_batch_plan(n, m, seed).unwrap();
    let plan = perturb_batches(plan, &data.features, &noise.chi1, m).unwrap();
    let cfg = TrainingConfig {
        steps,
        learning_rate: 5e-3,
        m,
        xi: 1.0,
        n_classes: 2,
        hidden: vec![h_pi],
        attack: AttackConfig {
            mu: 0.2,
            steps: 3,
            decay: 1.0,
            kinds: vec![AttackKind::Ifgsm, AttackKind::Mim, AttackKind::Madry],
            box_clip: false,
            madry_step_frac: 0.25,
        },
        privacy,
        trainer_count: 1,
        seed,
        checkpoint_every: if out_dir.is_some() { 1 } else { 0 },
        out_dir,
        barrier_timeout: Duration::from_secs(60),
    };
    (cfg, plan, data.labels, noise)
}

#[test]
fn c3_stobatch_equals_sequential_with_one_trainer() {
    let steps = 50;
    let seq_dir = tempfile::tempdir().unwrap();
    let dist_dir = tempfile::tempdir().unwrap();
    // m divisible by |A| = 3 so the ensemble splits evenly
    let (mut cfg, plan, labels, noise) =
        toy_training(24, 3, 77, steps, Some(seq_dir.path().to_path_buf()));
    let nb = plan.n_batches();
    let seq = train_sequential(&cfg, &plan, &labels, &noise).unwrap();

    // Align the distributed schedule with the sequential batch cycle:
    // trainer j holds the pair (j, j+1 mod nb) and step t picks trainer
    // t mod nb.
    cfg.out_dir = Some(dist_dir.path().to_path_buf());
    let schedule = StobatchSchedule {
        assignments: Some(
            (0..nb)
                .map(|j| TrainerAssignment {
                    trainer_id: j,
                    benign_batch: j,
                    adv_batch: (j + 1) % nb,
                })
                .collect(),
        ),
        picks: Some((0..nb).map(|j| vec![j]).collect()),
    };
    let dist = train_stobatch(&cfg, &plan, &labels, &noise, Some(&schedule)).unwrap();

    // Per-step parameter trajectories agree within 1e-9.
    for t in 1..=steps {
        let a = ModelParams::load(seq_dir.path().join(format!("model_{t}.sbck"))).unwrap();
        let b = ModelParams::load(dist_dir.path().join(format!("model_{t}.sbck"))).unwrap();
        let mut max_diff = 0.0f64;
        for (x, y) in a.theta1.as_slice().iter().zip(b.theta1.as_slice()) {
            max_diff = max_diff.max((x - y).abs());
        }
        for (la, lb) in a.theta2.iter().zip(&b.theta2) {
            for (x, y) in la.as_slice().iter().zip(lb.as_slice()) {
                max_diff = max_diff.max((x - y).abs());
            }
        }
        assert!(max_diff <= 1e-9, "step {t}: trajectories diverged by {max_diff}");
    }
    assert_eq!(seq.log.rows.len(), dist.log.rows.len());
    pass(3, "distributed(1 trainer) trajectory equals sequential over 50 steps");
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn c4_accountant_identity_and_non_accumulation() {
    // identity, exact in 64-bit arithmetic
    let privacy = PrivacyConfig {
        eps1: 1.25,
        eps2: 0.1,
        m: 8,
        d: 8,
        beta: 2,
        h_pi_size: 4,
        theta1_norm_cap: Some(2.0),
    };
    let report = accountant_declared(&privacy).unwrap();
    let identity = report.total_eps
        - report.eps2
        - report.eps1 * (1.0 + 1.0 / report.gamma_x + 1.0 / report.gamma);
    assert_eq!(identity, 0.0, "accountant identity must hold exactly");

    // non-accumulation: the declared report of a 10-step and a 1000-step
    // run are byte-identical
    let (mut cfg, plan, labels, noise) = toy_training(12, 3, 4242, 10, None);
    cfg.privacy.theta1_norm_cap = Some(2.0);
    let short = train_sequential(&cfg, &plan, &labels, &noise).unwrap();
    cfg.steps = 1000;
    let long = train_sequential(&cfg, &plan, &labels, &noise).unwrap();
    assert_eq!(
        short.report.to_key_value_block(),
        long.report.to_key_value_block(),
        "privacy report must not depend on the number of steps"
    );
    pass(4, "accountant identity exact; budget independent of step count");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn c5_hoeffding_width_and_coverage() {
    // half-width matches the stated formula through an algebraically
    // different evaluation route
    for (n, eta, k) in [(2000usize, 0.95, 10usize), (500, 0.9, 2), (10_000, 0.99, 4)] {
        let w = hoeffding_half_width(n, eta, k);
        let independent =
            (((2.0 * k as f64).ln() - (1.0 - eta).ln()) / (2.0 * n as f64)).sqrt();
        assert!((w - independent).abs() <= 1e-12, "width mismatch: {w} vs {independent}");
    }

    // Coverage control: a scorer returning (1,0) iff a fresh Laplace draw
    // exceeds tau. The true expectation is known in closed form, so the
    // Hoeffding interval can be scored against the truth.
    let b = 1.0f64;
    let tau = 0.5f64;
    let truth = 0.5 * (-tau / b).exp(); // P(Lap(0,b) > tau), tau >= 0
    let n = 200;
    let eta = 0.9;
    let reps = 500;
    let mut covered = 0;
    for rep in 0..reps {
        let mut rng = rng_for("c5-coverage", rep, &[]);
        let mut hits = 0usize;
        for _ in 0..n {
            let draw = stobatch::noise::laplace_vector(b, 1, &mut rng).unwrap()[0];
            if draw > tau {
                hits += 1;
            }
        }
        let e_hat = [hits as f64 / n as f64, 1.0 - hits as f64 / n as f64];
        let (lb, ub) = hoeffding_bounds(&e_hat, n, eta, 2).unwrap();
        let truth_vec = [truth, 1.0 - truth];
        if truth_vec.iter().zip(lb.iter().zip(&ub)).all(|(&t, (&l, &u))| l <= t && t <= u) {
            covered += 1;
        }
    }
    let coverage = covered as f64 / reps as f64;
    assert!(coverage >= eta, "empirical coverage {coverage} below eta {eta}");
    pass(5, "hoeffding width formula and empirical coverage");
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn c6_certification_soundness_under_pgd() {
    let started = Instant::now();
    let seed = 606;
    let d = 16;
    let beta = 8;
    let h_pi = 8;
    let k = 2;
    let m = 60;
    let n_train = 240;
    let n_test = 60;

    let data = synth_dataset(k, d, n_train + n_test, seed).unwrap();
    let (train, test) = data.split(n_train, n_test, seed).unwrap();

    // total budget 2.0 with a declared norm cap
    let cap = 1.0;
    let delta_r = (d * (beta + 2)) as f64;
    let gamma = 2.0 * delta_r / (m as f64 * cap);
    let gamma_x = delta_r / m as f64;
    let eps2 = 0.1;
    let eps1 = split_budget(2.0, eps2, gamma, gamma_x).unwrap();
    let privacy = PrivacyConfig { eps1, eps2, m, d, beta, h_pi_size: h_pi, theta1_norm_cap: Some(cap) };
    let noise = draw_training_noise(
        delta_r,
        eps1,
        2.0 * h_pi as f64,
        eps2,
        d,
        beta,
        h_pi,
        seed,
    )
    .unwrap();
    let plan = build_batch_plan(n_train, m, seed).unwrap();
    let plan = perturb_batches(plan, &train.features, &noise.chi1, m).unwrap();
    let cfg = TrainingConfig {
        steps: 400,
        learning_rate: 0.05,
        m,
        xi: 1.0,
        n_classes: k,
        hidden: vec![h_pi],
        attack: AttackConfig {
            mu: 0.2,
            steps: 5,
            decay: 1.0,
            kinds: vec![AttackKind::Ifgsm, AttackKind::Mim, AttackKind::Madry],
            box_clip: false,
            madry_step_frac: 0.25,
        },
        privacy: privacy.clone(),
        trainer_count: 1,
        seed,
        checkpoint_every: 0,
        out_dir: None,
        barrier_timeout: Duration::from_secs(60),
    };
    let outcome = train_sequential(&cfg, &plan, &train.labels, &noise).unwrap();
    let params = outcome.params;

    let eta = 0.95;
    let rc = RobustnessConfig {
        n: 1000,
        eta,
        psi: 2.0,
        grid: EpsGrid::default(),
        mu_for_sensitivity: 1.0,
    };

    let mut certified = Vec::new();
    for i in 0..test.len() {
        let r = radius_search(&params, test.features.row(i), &rc, &privacy, &noise, i as u64)
            .unwrap();
        if r.radius > 0.0 {
            certified.push((i, r));
        }
    }
    assert!(
        certified.len() >= 10,
        "need a meaningful certified set, got {} of {}",
        certified.len(),
        test.len()
    );

    // PGD at each point's own certified radius against the smoothed decision
    let attack_model = AttackModel::new(&params, &noise, m);
    let mf = m as f64;
    let mut flips = 0usize;
    for (i, r) in &certified {
        let x = test.features.row(*i);
        let x_bar: Vec<f64> = x.iter().zip(&noise.chi1).map(|(&v, &c)| v + c / mf).collect();
        let adv_bar = pgd_madry(
            &attack_model,
            &x_bar,
            r.radius,
            200,
            r.radius / 20.0,
            sub_seed("c6-pgd", seed, &[*i as u64]),
        )
        .unwrap();
        let adv_raw: Vec<f64> =
            adv_bar.iter().zip(&noise.chi1).map(|(&v, &c)| v - c / mf).collect();
        let mut stream = InferenceNoiseStream::new(
            &noise,
            rc.psi,
            privacy.delta_r(),
            privacy.eps1,
            m,
            sub_seed("c6-eval", seed, &[*i as u64]),
        )
        .unwrap();
        let e_adv = monte_carlo_expectation(&params, &adv_raw, rc.n, &mut stream).unwrap();
        if argmax_lowest_tie(&e_adv) != r.label {
            flips += 1;
        }
    }
    let flip_rate = flips as f64 / certified.len() as f64;
    let allowance = (1.0 - eta) + 0.03;
    assert!(
        flip_rate <= allowance,
        "certified decisions flipped at rate {flip_rate} > {allowance} ({} certified)",
        certified.len()
    );
    assert!(started.elapsed() < Duration::from_secs(600));
    pass(6, "PGD at the certified radius respects the certificate");
}

// ---------------------------------------------------------------- criterion 7

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn load_mnist_pooled(seed: u64) -> (Dataset, Dataset) {
    let dir = mnist_dir();
    let (raw, labels) = load_idx_pair(dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"))
        .expect("MNIST fixture at data/mnist");
    let pooled = avg_pool(&raw, 28, 4).unwrap();
    let features = normalize_signed(&pooled).unwrap();
    let all = Dataset {
        features,
        labels: labels.iter().map(|&l| l as usize).collect(),
        n_classes: 10,
    };
    let (train, test) = all.split(5000, 1000, seed).unwrap();
    (train, test)
}

struct TrendRun {
    params: ModelParams,
    privacy: PrivacyConfig,
    noise: NoiseBundle,
}

fn train_mnist_at(total_eps: f64, train: &Dataset, seed: u64) -> TrendRun {
    let d = train.dim();
    let beta = 64;
    let h_pi = 32;
    let m = 2500;
    let cap = 1.0;
    let delta_r = (d * (beta + 2)) as f64;
    let gamma = 2.0 * delta_r / (m as f64 * cap);
    let gamma_x = delta_r / m as f64;
    let eps2 = 0.1;
    let eps1 = split_budget(total_eps, eps2, gamma, gamma_x).unwrap();
    let privacy = PrivacyConfig {
        eps1,
        eps2,
        m,
        d,
        beta,
        h_pi_size: h_pi,
        theta1_norm_cap: Some(cap),
    };
    let noise = draw_training_noise(
        delta_r,
        eps1,
        2.0 * h_pi as f64,
        eps2,
        d,
        beta,
        h_pi,
        seed,
    )
    .unwrap();
    let plan = build_batch_plan(train.len(), m, seed).unwrap();
    let plan = perturb_batches(plan, &train.features, &noise.chi1, m).unwrap();
    let cfg = TrainingConfig {
        steps: 160,
        learning_rate: 0.5,
        m,
        xi: 1.0,
        n_classes: 10,
        hidden: vec![h_pi],
        attack: AttackConfig {
            mu: 0.2,
            steps: 10,
            decay: 1.0,
            kinds: vec![AttackKind::Ifgsm],
            box_clip: false,
            madry_step_frac: 0.25,
        },
        privacy: privacy.clone(),
        trainer_count: 1,
        seed,
        checkpoint_every: 0,
        out_dir: None,
        barrier_timeout: Duration::from_secs(120),
    };
    let outcome = train_sequential(&cfg, &plan, &train.labels, &noise).unwrap();
    TrendRun { params: outcome.params, privacy, noise }
}

fn ifgsm_smoothed_accuracy(run: &TrendRun, test: &Dataset, n_mc: usize, seed: u64) -> f64 {
    let m = run.privacy.m;
    let mf = m as f64;
    let model = AttackModel::new(&run.params, &run.noise, m);
    let mut preds = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        let x = test.features.row(i);
        let x_bar: Vec<f64> = x.iter().zip(&run.noise.chi1).map(|(&v, &c)| v + c / mf).collect();
        let adv_bar = ifgsm(&model, &x_bar, 0.2, 10, false).unwrap();
        let adv_raw: Vec<f64> =
            adv_bar.iter().zip(&run.noise.chi1).map(|(&v, &c)| v - c / mf).collect();
        let mut stream = InferenceNoiseStream::new(
            &run.noise,
            2.0,
            run.privacy.delta_r(),
            run.privacy.eps1,
            m,
            sub_seed("c7-eval", seed, &[i as u64]),
        )
        .unwrap();
        let e = monte_carlo_expectation(&run.params, &adv_raw, n_mc, &mut stream).unwrap();
        preds.push(argmax_lowest_tie(&e));
    }
    conventional_accuracy(&preds, &test.labels).unwrap()
}

#[test]
fn c7_mnist_trend_reproduction() {
    let started = Instant::now();
    let seed = 707;
    let (train, test) = load_mnist_pooled(seed);

    // (a) accuracy under I-FGSM(0.2, T=10) grows with the privacy budget
    let run_tight = train_mnist_at(0.2, &train, seed);
    let run_loose = train_mnist_at(2.0, &train, seed);
    let n_mc = 500;
    let acc_tight = ifgsm_smoothed_accuracy(&run_tight, &test, n_mc, seed);
    let acc_loose = ifgsm_smoothed_accuracy(&run_loose, &test, n_mc, seed);
    println!("ifgsm accuracy: eps=0.2 -> {acc_tight}, eps=2.0 -> {acc_loose}");
    assert!(
        acc_loose - acc_tight >= 0.05,
        "expected >= 5-point gap, got eps2.0 {acc_loose} vs eps0.2 {acc_tight}"
    );

    // (b) certified accuracy is non-increasing in the attack size
    let rc = RobustnessConfig {
        n: 1000,
        eta: 0.95,
        psi: 2.0,
        grid: EpsGrid::default(),
        mu_for_sensitivity: 1.0,
    };
    let mut results = Vec::with_capacity(test.len());
    for i in 0..test.len() {
        results.push(
            radius_search(
                &run_loose.params,
                test.features.row(i),
                &rc,
                &run_loose.privacy,
                &run_loose.noise,
                i as u64,
            )
            .unwrap(),
        );
    }
    let mu_grid = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
    let accs: Vec<f64> = mu_grid
        .iter()
        .map(|&mu| certified_accuracy(&results, &test.labels, mu).unwrap())
        .collect();
    println!("certified accuracy over mu_a {mu_grid:?}: {accs:?}");
    for w in accs.windows(2) {
        assert!(
            w[1] <= w[0] + 0.02,
            "certified accuracy increased beyond the noise band: {accs:?}"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1800), "took {elapsed:?}");
    pass(7, "MNIST subset trend: budget direction and certified-accuracy curve");
}

// ---------------------------------------------------------------- criterion 8

/// Full-series reconstruction objective: the exact closed forms
/// x log(1 + exp(-z)) + (1 - x) log(1 + exp(z)) with z = theta * h and
/// h = theta * x (1-D, no clamp active for |theta| <= 1, |x| <= 1).
fn full_series_loss_1d(theta: f64, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| {
            let h = theta * x;
            let z = theta * h;
            // ln(1+e^z) via ln_1p for numerical care on both tails
            let softplus = |v: f64| {
                if v > 0.0 {
                    v + (-v).exp().ln_1p()
                } else {
                    v.exp().ln_1p()
                }
            };
            x * softplus(-z) + (1.0 - x) * softplus(z)
        })
        .sum()
}

/// Truncated objective in the same 1-D setting:
/// sum_i [ln 2 + theta (1/2 - x) h].
fn truncated_loss_1d(theta: f64, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| {
            let h = theta * x;
            std::f64::consts::LN_2 + theta * (0.5 - x) * h
        })
        .sum()
}

#[test]
fn c8_truncation_optimum_gap_within_bound() {
    let (bound_r, _) = stobatch::objective::approximation_error_bounds(1, 2);
    let mut rng = rng_for("c8", 8, &[]);
    let grid: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 * 1e-3).collect();
    for case in 0..100 {
        let batch_size = rng.gen_range(1..=6usize);
        let xs: Vec<f64> = (0..batch_size).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let argmin = |f: &dyn Fn(f64) -> f64| -> f64 {
            let mut best = grid[0];
            let mut best_v = f(grid[0]);
            for &t in &grid[1..] {
                let v = f(t);
                if v < best_v {
                    best_v = v;
                    best = t;
                }
            }
            best
        };
        let theta_trunc = argmin(&|t| truncated_loss_1d(t, &xs));
        let theta_full = argmin(&|t| full_series_loss_1d(t, &xs));
        let gap = (full_series_loss_1d(theta_trunc, &xs) - full_series_loss_1d(theta_full, &xs))
            .abs()
            / batch_size as f64;
        assert!(
            gap <= bound_r + 1e-12,
            "case {case}: per-example optimum gap {gap} exceeds bound {bound_r}"
        );
    }
    pass(8, "1-D truncation optimum gap within the constant bound");
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn c9_radius_search_matches_brute_force() {
    let mut rng = rng_for("c9", 9, &[]);
    let grid = EpsGrid::default();
    let grid_values = grid.values();
    for case in 0..100 {
        let k = rng.gen_range(2..=4usize);
        let n = 500;
        let eta = 0.95;
        // random expectation vector on the simplex
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0f64)).collect();
        let sum: f64 = raw.iter().sum();
        let e_hat: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let (e_lb, e_ub) = hoeffding_bounds(&e_hat, n, eta, k).unwrap();
        let label = argmax_lowest_tie(&e_hat);

        // ascending scan with early exit (the implementation's rule)
        let mut scan = 0.0;
        for &eps in &grid_values {
            if robustness_check(&e_lb, &e_ub, label, eps) {
                scan = eps;
            } else {
                break;
            }
        }
        // exhaustive brute force over the same grid
        let brute = grid_values
            .iter()
            .copied()
            .filter(|&eps| robustness_check(&e_lb, &e_ub, label, eps))
            .fold(0.0f64, f64::max);
        assert_eq!(scan, brute, "case {case}: scan {scan} vs brute force {brute}");
    }
    pass(9, "grid scan equals exhaustive brute force");
}
