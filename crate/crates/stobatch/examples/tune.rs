// scratch tuning harness (deleted before release)
use std::time::{Duration, Instant};

use stobatch::attack::{ifgsm, AttackConfig, AttackKind, AttackModel};
use stobatch::certify::{monte_carlo_expectation, radius_search, EpsGrid, RobustnessConfig};
use stobatch::data::{avg_pool, build_batch_plan, load_idx_pair, normalize_signed, perturb_batches, synth_dataset, Dataset};
use stobatch::metrics::{certified_accuracy, conventional_accuracy};
use stobatch::nn::argmax_lowest_tie;
use stobatch::noise::{draw_training_noise, InferenceNoiseStream};
use stobatch::objective::{split_budget, PrivacyConfig};
use stobatch::rng::sub_seed;
use stobatch::train::{train_sequential, TrainingConfig};

fn getenv_f64(k: &str, d: f64) -> f64 {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}
fn getenv_usize(k: &str, d: usize) -> usize {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() {
    let mode = std::env::var("MODE").unwrap_or_else(|_| "mnist".into());
    if mode == "mnist" {
        mnist_trend();
    } else {
        synth_c6();
    }
}

fn mnist_trend() {
    let seed = 707;
    let pool = getenv_usize("POOL", 4);
    let (raw, labels) = load_idx_pair("data/mnist/images-idx3-ubyte", "data/mnist/labels-idx1-ubyte").unwrap();
    let pooled = if pool > 1 { avg_pool(&raw, 28, pool).unwrap() } else { raw };
    let features = normalize_signed(&pooled).unwrap();
    let all = Dataset { features, labels: labels.iter().map(|&l| l as usize).collect(), n_classes: 10 };
    let (train, test) = all.split(5000, 1000, seed).unwrap();
    let d = train.dim();

    let beta = 64;
    let h_pi = 32;
    let m = getenv_usize("M", 2500);
    let cap = getenv_f64("CAP", 1.0);
    let steps = getenv_usize("T", 160);
    let lr = getenv_f64("LR", 0.5);
    let xi = getenv_f64("XI", 1.0);
    let n_mc = getenv_usize("NMC", 300);
    let eval_n = getenv_usize("EVALN", 300);

    for total_eps in [getenv_f64("EPS_LO", 0.2), getenv_f64("EPS_HI", 2.0)] {
        let t0 = Instant::now();
        let delta_r = (d * (beta + 2)) as f64;
        let gamma = 2.0 * delta_r / (m as f64 * cap);
        let gamma_x = delta_r / m as f64;
        let eps2 = 0.1;
        let eps1 = split_budget(total_eps, eps2, gamma, gamma_x).unwrap();
        let privacy = PrivacyConfig { eps1, eps2, m, d, beta, h_pi_size: h_pi, theta1_norm_cap: Some(cap) };
        let noise = draw_training_noise(delta_r, eps1, 2.0 * h_pi as f64, eps2, d, beta, h_pi, seed).unwrap();
        let plan = build_batch_plan(train.len(), m, seed).unwrap();
        let plan = perturb_batches(plan, &train.features, &noise.chi1, m).unwrap();
        let cfg = TrainingConfig {
            steps,
            learning_rate: lr,
            m,
            xi,
            n_classes: 10,
            hidden: vec![h_pi],
            attack: AttackConfig { mu: 0.2, steps: 10, decay: 1.0, kinds: vec![AttackKind::Ifgsm], box_clip: false, madry_step_frac: 0.25 },
            privacy: privacy.clone(),
            trainer_count: 1,
            seed,
            checkpoint_every: 0,
            out_dir: None,
            barrier_timeout: Duration::from_secs(120),
        };
        let outcome = train_sequential(&cfg, &plan, &train.labels, &noise).unwrap();
        let params = outcome.params;
        println!(
            "eps={total_eps}: eps1={eps1:.4} chi1_scale/m={:.3} 2chi2/m={:.3} theta1_norm_col={:.3} theta1_row_inf={:.3} train {:?}",
            delta_r / eps1 / m as f64,
            2.0 * delta_r / eps1 / m as f64,
            params.theta1.max_col_l1(),
            params.theta1.max_row_l1(),
            t0.elapsed()
        );
        let first = outcome.log.rows.first().unwrap();
        let last = outcome.log.rows.last().unwrap();
        println!("  loss: step0 benign {:.4} adv {:.4} -> final benign {:.4} adv {:.4}", first.mean_loss_benign, first.mean_loss_adv, last.mean_loss_benign, last.mean_loss_adv);

        // clean + attacked smoothed accuracy on a 300-example eval subset
        let eval_count = 300.min(test.len());
        let mf = m as f64;
        let model = AttackModel::new(&params, &noise, m);
        let mut clean_preds = Vec::new();
        let mut adv_preds = Vec::new();
        for i in 0..eval_count {
            let x = test.features.row(i);
            let x_bar: Vec<f64> = x.iter().zip(&noise.chi1).map(|(&v, &c)| v + c / mf).collect();
            let adv_bar = ifgsm(&model, &x_bar, 0.2, 10, false).unwrap();
            let adv_raw: Vec<f64> = adv_bar.iter().zip(&noise.chi1).map(|(&v, &c)| v - c / mf).collect();
            let mut s1 = InferenceNoiseStream::new(&noise, 2.0, delta_r, eps1, m, sub_seed("tune-c", seed, &[i as u64])).unwrap();
            let e_clean = monte_carlo_expectation(&params, x, eval_n, &mut s1).unwrap();
            clean_preds.push(argmax_lowest_tie(&e_clean));
            let mut s2 = InferenceNoiseStream::new(&noise, 2.0, delta_r, eps1, m, sub_seed("tune-a", seed, &[i as u64])).unwrap();
            let e_adv = monte_carlo_expectation(&params, &adv_raw, eval_n, &mut s2).unwrap();
            adv_preds.push(argmax_lowest_tie(&e_adv));
        }
        let labels_sub = &test.labels[..eval_count];
        println!(
            "  clean smoothed acc {:.3}, ifgsm(0.2) acc {:.3}",
            conventional_accuracy(&clean_preds, labels_sub).unwrap(),
            conventional_accuracy(&adv_preds, labels_sub).unwrap()
        );

        // certified accuracy curve on 200 examples
        let rc = RobustnessConfig { n: n_mc, eta: 0.95, psi: 2.0, grid: EpsGrid::default(), mu_for_sensitivity: 1.0 };
        let cert_count = 200.min(test.len());
        let mut results = Vec::new();
        for i in 0..cert_count {
            results.push(radius_search(&params, test.features.row(i), &rc, &privacy, &noise, i as u64).unwrap());
        }
        let accs: Vec<f64> = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
            .iter()
            .map(|&mu| certified_accuracy(&results, &test.labels[..cert_count], mu).unwrap())
            .collect();
        let n_cert = results.iter().filter(|r| r.radius > 0.0).count();
        let max_r = results.iter().map(|r| r.radius).fold(0.0f64, f64::max);
        println!("  certified: {n_cert}/{cert_count} with radius>0, max radius {max_r:.4}, cert-acc curve {accs:?}");
    }
}

fn synth_c6() {
    let seed = 606;
    let d = 16;
    let beta = 8;
    let h_pi = 8;
    let k = 2;
    let m = getenv_usize("M", 60);
    let n_train = 240;
    let n_test = 60;
    let steps = getenv_usize("T", 400);
    let lr = getenv_f64("LR", 0.05);
    let cap = getenv_f64("CAP", 1.0);

    let data = synth_dataset(k, d, n_train + n_test, seed).unwrap();
    let (train, test) = data.split(n_train, n_test, seed).unwrap();
    let delta_r = (d * (beta + 2)) as f64;
    let gamma = 2.0 * delta_r / (m as f64 * cap);
    let gamma_x = delta_r / m as f64;
    let eps2 = 0.1;
    let eps1 = split_budget(2.0, eps2, gamma, gamma_x).unwrap();
    println!("eps1 = {eps1:.4}, chi1/m scale = {:.3}, 2chi2/m = {:.3}", delta_r / eps1 / m as f64, 2.0 * delta_r / eps1 / m as f64);
    let privacy = PrivacyConfig { eps1, eps2, m, d, beta, h_pi_size: h_pi, theta1_norm_cap: Some(cap) };
    let noise = draw_training_noise(delta_r, eps1, 2.0 * h_pi as f64, eps2, d, beta, h_pi, seed).unwrap();
    let plan = build_batch_plan(n_train, m, seed).unwrap();
    let plan = perturb_batches(plan, &train.features, &noise.chi1, m).unwrap();
    let cfg = TrainingConfig {
        steps,
        learning_rate: lr,
        m,
        xi: 1.0,
        n_classes: k,
        hidden: vec![h_pi],
        attack: AttackConfig { mu: 0.2, steps: 5, decay: 1.0, kinds: vec![AttackKind::Ifgsm, AttackKind::Mim, AttackKind::Madry], box_clip: false, madry_step_frac: 0.25 },
        privacy: privacy.clone(),
        trainer_count: 1,
        seed,
        checkpoint_every: 0,
        out_dir: None,
        barrier_timeout: Duration::from_secs(60),
    };
    let outcome = train_sequential(&cfg, &plan, &train.labels, &noise).unwrap();
    let params = outcome.params;
    println!("theta1 col norm {:.3} row inf {:.3}", params.theta1.max_col_l1(), params.theta1.max_row_l1());

    let rc = RobustnessConfig { n: 1000, eta: 0.95, psi: 2.0, grid: EpsGrid::default(), mu_for_sensitivity: 1.0 };
    let mut n_cert = 0;
    let mut correct = 0;
    let mut radii = Vec::new();
    for i in 0..test.len() {
        let r = radius_search(&params, test.features.row(i), &rc, &privacy, &noise, i as u64).unwrap();
        if r.label == test.labels[i] {
            correct += 1;
        }
        if r.radius > 0.0 {
            n_cert += 1;
            radii.push(r.radius);
        }
    }
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "smoothed acc {:.3}; certified {n_cert}/{}; radius range {:?}..{:?}",
        correct as f64 / test.len() as f64,
        test.len(),
        radii.first(),
        radii.last()
    );
}
