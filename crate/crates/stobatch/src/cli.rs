//! Command-line entry points: `train`, `train-dist`, `certify`,
//! `attack-eval`, and `account`, all driven by one config file and one
//! top-level seed. Every emitted report embeds the config hash and the
//! privacy report block, and identical config + seed produce byte-identical
//! reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::attack::{fgsm, ifgsm, mim, pgd_madry_clip, AttackConfig, AttackKind, AttackModel};
use crate::certify::{
    cert_csv_row, monte_carlo_expectation, radius_search, EpsGrid, RobustnessConfig,
    CERT_CSV_HEADER,
};
use crate::config::Config;
use crate::data::{
    avg_pool, build_batch_plan, load_idx_pair, normalize_signed, perturb_batches, synth_dataset,
    Dataset, PerturbedBatchPlan,
};
use crate::error::{Error, Result};
use crate::metrics::{certified_accuracy, conventional_accuracy, EvalReport};
use crate::nn::{argmax_lowest_tie, ModelParams};
use crate::noise::{draw_training_noise, InferenceNoiseStream, NoiseBundle};
use crate::objective::{accountant, accountant_declared, split_budget, PrivacyConfig};
use crate::rng::sub_seed;
use crate::train::{train_sequential, train_stobatch, TrainingConfig};

const USAGE: &str = "\
usage: stobatch <command> --config <path> [--seed <u64>] [--out <dir>]

commands:
  train        sequential differentially private adversarial training
  train-dist   distributed training with a parameter server
  certify      per-example certified robustness radii for the test set
  attack-eval  conventional and certified accuracy under attack
  account      print the privacy report for a checkpoint
";

#[derive(Debug, Clone)]
pub struct CliArgs {
    pub command: String,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn parse_args(mut args: impl Iterator<Item = String>) -> std::result::Result<CliArgs, String> {
    let command = args.next().ok_or_else(|| USAGE.to_string())?;
    if !["train", "train-dist", "certify", "attack-eval", "account"].contains(&command.as_str()) {
        return Err(format!("unknown command `{command}`\n\n{USAGE}"));
    }
    let mut config = None;
    let mut seed = None;
    let mut out = PathBuf::from("out");
    while let Some(flag) = args.next() {
        match flag.as_str() {
            "--config" => {
                let v = args.next().ok_or("--config requires a path")?;
                config = Some(PathBuf::from(v));
            }
            "--seed" => {
                let v = args.next().ok_or("--seed requires an integer")?;
                seed = Some(v.parse::<u64>().map_err(|_| format!("bad seed `{v}`"))?);
            }
            "--out" => {
                let v = args.next().ok_or("--out requires a directory")?;
                out = PathBuf::from(v);
            }
            other => return Err(format!("unknown flag `{other}`\n\n{USAGE}")),
        }
    }
    let config = config.ok_or(format!("--config is required\n\n{USAGE}"))?;
    Ok(CliArgs { command, config, seed, out })
}

/// Run a parsed command. Returns the process exit code: 0 on success,
/// 2 for configuration problems, 1 for runtime failures.
pub fn run(args: &CliArgs) -> i32 {
    let cfg = match Config::from_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let seed = args.seed.unwrap_or_else(|| {
        cfg.u64_or("run", "seed", 42).unwrap_or(42)
    });
    let outcome = match args.command.as_str() {
        "train" => cmd_train(&cfg, seed, &args.out, false),
        "train-dist" => cmd_train(&cfg, seed, &args.out, true),
        "certify" => cmd_certify(&cfg, seed, &args.out),
        "attack-eval" => cmd_attack_eval(&cfg, seed, &args.out),
        "account" => cmd_account(&cfg, seed, &args.out),
        _ => unreachable!("validated in parse_args"),
    };
    match outcome {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct LoadedData {
    train: Dataset,
    test: Dataset,
}

fn load_data(cfg: &Config, seed: u64) -> Result<LoadedData> {
    match cfg.get("data", "source")? {
        "synth" => {
            let k = cfg.usize("data", "classes")?;
            let d = cfg.usize("data", "dim")?;
            let n_train = cfg.usize("data", "train_n")?;
            let n_test = cfg.usize("data", "test_n")?;
            let all = synth_dataset(k, d, n_train + n_test, sub_seed("data", seed, &[]))?;
            let (train, test) = all.split(n_train, n_test, seed)?;
            Ok(LoadedData { train, test })
        }
        "idx" => {
            let images = cfg.get("data", "images")?;
            let labels = cfg.get("data", "labels")?;
            let (mut raw, raw_labels) = load_idx_pair(images, labels)?;
            let pool = cfg.usize_or("data", "pool", 1)?;
            if pool > 1 {
                let side = cfg.usize("data", "side")?;
                raw = avg_pool(&raw, side, pool)?;
            }
            let features = normalize_signed(&raw)?;
            let n_classes = cfg.usize_or(
                "data",
                "classes",
                usize::from(raw_labels.iter().copied().max().unwrap_or(0)) + 1,
            )?;
            let all = Dataset {
                features,
                labels: raw_labels.iter().map(|&l| l as usize).collect(),
                n_classes,
            };
            let n_train = cfg.usize("data", "train_n")?;
            let n_test = cfg.usize("data", "test_n")?;
            let (train, test) = all.split(n_train, n_test, seed)?;
            Ok(LoadedData { train, test })
        }
        other => Err(Error::Config(format!("unknown data source `{other}`"))),
    }
}

fn build_attack(cfg: &Config) -> Result<AttackConfig> {
    let kinds = match cfg.get_opt("attack", "kinds") {
        Some(_) => cfg
            .list("attack", "kinds")?
            .iter()
            .map(|s| AttackKind::from_str(s))
            .collect::<Result<Vec<_>>>()?,
        None => vec![AttackKind::Ifgsm, AttackKind::Mim, AttackKind::Madry],
    };
    Ok(AttackConfig {
        mu: cfg.f64_or("attack", "mu", 0.2)?,
        steps: cfg.usize_or("attack", "steps", 10)?,
        decay: cfg.f64_or("attack", "decay", 1.0)?,
        kinds,
        box_clip: cfg.bool_or("attack", "box_clip", false)?,
        madry_step_frac: cfg.f64_or("attack", "madry_step_frac", 0.25)?,
    })
}

fn build_privacy(
    cfg: &Config,
    d: usize,
    beta: usize,
    h_pi_size: usize,
    m: usize,
) -> Result<PrivacyConfig> {
    let eps2 = cfg.f64("privacy", "eps2")?;
    let cap = match cfg.get_opt("privacy", "theta1_norm_cap") {
        Some(_) => Some(cfg.f64("privacy", "theta1_norm_cap")?),
        None => None,
    };
    let delta_r = (d * (beta + 2)) as f64;
    let eps1 = match cfg.get_opt("privacy", "eps1") {
        Some(_) => cfg.f64("privacy", "eps1")?,
        None => {
            // derive eps1 from a target total; needs the declared gamma
            let target = cfg.f64("privacy", "target_eps")?;
            let cap = cap.ok_or_else(|| {
                Error::Config(
                    "privacy.target_eps requires privacy.theta1_norm_cap to pre-declare gamma"
                        .into(),
                )
            })?;
            let gamma = 2.0 * delta_r / (m as f64 * cap);
            let gamma_x = delta_r / m as f64;
            split_budget(target, eps2, gamma, gamma_x)?
        }
    };
    let privacy = PrivacyConfig { eps1, eps2, m, d, beta, h_pi_size, theta1_norm_cap: cap };
    privacy.validate()?;
    Ok(privacy)
}

fn build_robustness(cfg: &Config) -> Result<RobustnessConfig> {
    let defaults = RobustnessConfig::default();
    let grid = EpsGrid {
        lo: cfg.f64_or("certify", "grid_lo", 1e-3)?,
        hi: cfg.f64_or("certify", "grid_hi", 5.0)?,
        points: cfg.usize_or("certify", "grid_points", 200)?,
    };
    let rc = RobustnessConfig {
        n: cfg.usize_or("certify", "n", defaults.n)?,
        eta: cfg.f64_or("certify", "eta", defaults.eta)?,
        psi: cfg.f64_or("certify", "psi", defaults.psi)?,
        grid,
        mu_for_sensitivity: cfg.f64_or("certify", "mu_sensitivity", 1.0)?,
    };
    rc.validate()?;
    Ok(rc)
}

struct TrainSetup {
    training: TrainingConfig,
    plan: PerturbedBatchPlan,
    labels: Vec<usize>,
    noise: NoiseBundle,
}

fn build_training(cfg: &Config, seed: u64, out: &Path, data: &LoadedData) -> Result<TrainSetup> {
    let beta = cfg.usize("model", "beta")?;
    let hidden: Vec<usize> = cfg
        .list("model", "hidden")?
        .iter()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("model.hidden entry `{s}` is not an integer")))
        })
        .collect::<Result<Vec<_>>>()?;
    if hidden.is_empty() {
        return Err(Error::Config("model.hidden must list at least |h_pi|".into()));
    }
    let h_pi_size = *hidden.last().unwrap();
    let m = cfg.usize("train", "m")?;
    let d = data.train.dim();
    let privacy = build_privacy(cfg, d, beta, h_pi_size, m)?;
    let noise = draw_training_noise(
        privacy.delta_r(),
        privacy.eps1,
        privacy.delta_l2(),
        privacy.eps2,
        d,
        beta,
        h_pi_size,
        seed,
    )?;
    let plan = build_batch_plan(data.train.len(), m, seed)?;
    let plan = perturb_batches(plan, &data.train.features, &noise.chi1, m)?;
    let training = TrainingConfig {
        steps: cfg.usize("train", "steps")?,
        learning_rate: cfg.f64("train", "lr")?,
        m,
        xi: cfg.f64_or("train", "xi", 1.0)?,
        n_classes: data.train.n_classes,
        hidden,
        attack: build_attack(cfg)?,
        privacy,
        trainer_count: cfg.usize_or("train", "trainers", 1)?,
        seed,
        checkpoint_every: cfg.usize_or("train", "checkpoint_every", 0)?,
        out_dir: Some(out.to_path_buf()),
        barrier_timeout: Duration::from_secs(cfg.u64_or("train", "barrier_timeout_s", 60)?),
    };
    Ok(TrainSetup { training, plan, labels: data.train.labels.clone(), noise })
}

fn report_header(cfg: &Config, privacy_block: &str) -> String {
    let mut out = format!("# config_hash = {:016x}\n", cfg.hash());
    for line in privacy_block.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn cmd_train(cfg: &Config, seed: u64, out: &Path, distributed: bool) -> Result<()> {
    let data = load_data(cfg, seed)?;
    let setup = build_training(cfg, seed, out, &data)?;
    fs::create_dir_all(out)?;
    let outcome = if distributed {
        train_stobatch(&setup.training, &setup.plan, &setup.labels, &setup.noise, None)?
    } else {
        train_sequential(&setup.training, &setup.plan, &setup.labels, &setup.noise)?
    };
    let header = report_header(cfg, &outcome.report.to_key_value_block());
    write_file(&out.join("run_log.csv"), &format!("{header}{}", outcome.log.to_csv()))?;
    write_file(
        &out.join("privacy_report.txt"),
        &format!("{header}{}", outcome.report.to_key_value_block()),
    )?;
    println!(
        "trained {} steps; total_eps = {}; checkpoint {}",
        setup.training.steps,
        outcome.report.total_eps,
        out.join(format!("model_{}.sbck", setup.training.steps)).display()
    );
    Ok(())
}

/// Deterministic noise reconstruction: the bundle is a pure function of the
/// privacy parameters and the run seed, so post-training stages recover the
/// training draw instead of redrawing fresh noise.
fn rebuild_noise(privacy: &PrivacyConfig, seed: u64) -> Result<NoiseBundle> {
    draw_training_noise(
        privacy.delta_r(),
        privacy.eps1,
        privacy.delta_l2(),
        privacy.eps2,
        privacy.d,
        privacy.beta,
        privacy.h_pi_size,
        seed,
    )
}

fn load_checkpoint(cfg: &Config) -> Result<ModelParams> {
    let path = cfg.get("certify", "model")?;
    ModelParams::load(path)
}

fn cmd_certify(cfg: &Config, seed: u64, out: &Path) -> Result<()> {
    let data = load_data(cfg, seed)?;
    let params = load_checkpoint(cfg)?;
    if params.d() != data.test.dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects d={}, test data has {}",
            params.d(),
            data.test.dim()
        )));
    }
    let m = cfg.usize("train", "m")?;
    let privacy = build_privacy(cfg, params.d(), params.beta(), params.h_pi_size(), m)?;
    let noise = rebuild_noise(&privacy, seed)?;
    let rc = build_robustness(cfg)?;
    let mu_a = cfg.f64_or("certify", "mu_a", 0.2)?;

    let report = if privacy.theta1_norm_cap.is_some() {
        accountant_declared(&privacy)?
    } else {
        accountant(&privacy, &params.theta1)?
    };
    let mut body = String::from(CERT_CSV_HEADER);
    body.push('\n');
    for i in 0..data.test.len() {
        let result = radius_search(&params, data.test.features.row(i), &rc, &privacy, &noise, i as u64)?;
        body.push_str(&cert_csv_row(i, &result, mu_a));
        body.push('\n');
    }
    let header = report_header(cfg, &report.to_key_value_block());
    write_file(&out.join("cert_report.csv"), &format!("{header}{body}"))?;
    println!("certified {} examples at mu_a = {mu_a}", data.test.len());
    Ok(())
}

fn cmd_attack_eval(cfg: &Config, seed: u64, out: &Path) -> Result<()> {
    let data = load_data(cfg, seed)?;
    let params = load_checkpoint(cfg)?;
    let m = cfg.usize("train", "m")?;
    let privacy = build_privacy(cfg, params.d(), params.beta(), params.h_pi_size(), m)?;
    let noise = rebuild_noise(&privacy, seed)?;
    let rc = build_robustness(cfg)?;
    let attack = build_attack(cfg)?;
    let mu_a = attack.mu;

    // One certification pass serves both accuracy metrics: the smoothed
    // prediction is the deployed decision rule.
    let mut results = Vec::with_capacity(data.test.len());
    for i in 0..data.test.len() {
        results.push(radius_search(
            &params,
            data.test.features.row(i),
            &rc,
            &privacy,
            &noise,
            i as u64,
        )?);
    }
    let predictions: Vec<usize> = results.iter().map(|r| r.label).collect();
    let conventional = conventional_accuracy(&predictions, &data.test.labels)?;
    let certified = certified_accuracy(&results, &data.test.labels, mu_a)?;

    // Attacks act on the raw example within the mu_a ball: craft against
    // the fixed-noise forward at x + chi1/m, then map back to raw space
    // before handing the example to the smoothed decision.
    let model = AttackModel::new(&params, &noise, m);
    let mf = m as f64;
    let mut per_attack = Vec::new();
    for (ki, &kind) in attack.kinds.iter().enumerate() {
        let mut preds = Vec::with_capacity(data.test.len());
        for i in 0..data.test.len() {
            let x = data.test.features.row(i);
            let x_bar: Vec<f64> =
                x.iter().zip(&noise.chi1).map(|(&v, &c)| v + c / mf).collect();
            let adv_bar = match kind {
                AttackKind::Fgsm => fgsm(&model, &x_bar, mu_a, attack.box_clip)?,
                AttackKind::Ifgsm => ifgsm(&model, &x_bar, mu_a, attack.steps, attack.box_clip)?,
                AttackKind::Mim => {
                    mim(&model, &x_bar, mu_a, attack.steps, attack.decay, attack.box_clip)?
                }
                AttackKind::Madry => pgd_madry_clip(
                    &model,
                    &x_bar,
                    mu_a,
                    attack.steps,
                    (attack.madry_step_frac * mu_a).max(f64::MIN_POSITIVE),
                    sub_seed("eval-attack", seed, &[ki as u64, i as u64]),
                    attack.box_clip,
                )?,
            };
            let adv_raw: Vec<f64> =
                adv_bar.iter().zip(&noise.chi1).map(|(&v, &c)| v - c / mf).collect();
            let mut stream = InferenceNoiseStream::new(
                &noise,
                rc.psi,
                privacy.delta_r(),
                privacy.eps1,
                m,
                sub_seed("eval-stream", seed, &[ki as u64, i as u64]),
            )?;
            let e_hat = monte_carlo_expectation(&params, &adv_raw, rc.n, &mut stream)?;
            preds.push(argmax_lowest_tie(&e_hat));
        }
        per_attack.push((kind.to_string(), conventional_accuracy(&preds, &data.test.labels)?));
    }

    let report = if privacy.theta1_norm_cap.is_some() {
        accountant_declared(&privacy)?
    } else {
        accountant(&privacy, &params.theta1)?
    };
    let eval = EvalReport { conventional_acc: conventional, certified_acc: certified, per_attack };
    let header = report_header(cfg, &report.to_key_value_block());
    write_file(&out.join("eval_report.csv"), &format!("{header}{}", eval.to_csv()))?;
    println!(
        "conventional_acc = {conventional}; certified_acc = {certified} at mu_a = {mu_a}"
    );
    Ok(())
}

fn cmd_account(cfg: &Config, seed: u64, out: &Path) -> Result<()> {
    let _ = seed;
    let params = load_checkpoint(cfg)?;
    let m = cfg.usize("train", "m")?;
    let privacy = build_privacy(cfg, params.d(), params.beta(), params.h_pi_size(), m)?;
    let measured = accountant(&privacy, &params.theta1)?;
    let mut body = String::from("[measured]\n");
    body.push_str(&measured.to_key_value_block());
    if privacy.theta1_norm_cap.is_some() {
        let declared = accountant_declared(&privacy)?;
        body.push_str("\n[declared]\n");
        body.push_str(&declared.to_key_value_block());
    }
    let header = report_header(cfg, &measured.to_key_value_block());
    write_file(&out.join("privacy_report.txt"), &format!("{header}{body}"))?;
    print!("{body}");
    Ok(())
}
