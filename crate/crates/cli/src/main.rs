//! Experiment runner: train / eval / ood / attack / ablate / regress1d /
//! gradcheck / fetch subcommands over the hypergan library.
//!
//! Exit codes: 0 ok, 1 check failure, 2 config or input error, 3 runtime
//! abort (partial artifacts are kept).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hypergan::attack::{self, AttackConfig};
use hypergan::checkpoint;
use hypergan::checks;
use hypergan::config::RunConfig;
use hypergan::data::{self, Dataset};
use hypergan::eval;
use hypergan::metrics;
use hypergan::model::{HyperGanConfig, HyperGanModel};
use hypergan::nets::{forward, ArchSpec};
use hypergan::tensor::Tensor;
use hypergan::train;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[derive(Parser)]
#[command(
    name = "hypergan",
    about = "Generative model over network weights: training and evaluation harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file or preset name
    Train {
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ensemble accuracy table over member counts from a checkpoint
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// mnist | mnist5000 | cifar5 | notmnist
        #[arg(long)]
        dataset: Option<String>,
        /// Comma-separated member counts
        #[arg(long)]
        members: Option<String>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Predictive-entropy OOD study: inlier vs outlier datasets
    Ood {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "mnist")]
        inlier: String,
        #[arg(long, default_value = "notmnist")]
        outlier: String,
        #[arg(long, default_value_t = 100)]
        members: usize,
        /// Cap examples per side (0 = full test sets)
        #[arg(long, default_value_t = 0)]
        max_examples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// FGSM/PGD sweep: fresh-ensemble detection and transfer study
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<String>,
        /// Comma-separated epsilon list (overrides config)
        #[arg(long)]
        eps: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Train full / no-mixer / no-discriminator variants and compare
    Ablate {
        #[arg(long)]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 1D regression with uncertainty bands
    Regress1d {
        #[arg(long, default_value = "regress1d")]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference verification of every op and the tiny
    /// end-to-end stack
    Gradcheck,
    /// Download a file and verify its SHA-256
    Fetch {
        #[arg(long)]
        url: String,
        #[arg(long)]
        sha256: String,
        #[arg(long)]
        out: PathBuf,
        /// Gunzip / untar the download next to it
        #[arg(long, default_value_t = false)]
        extract: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code)
}

#[derive(Debug)]
enum CmdError {
    Config(String),
    Input(String),
    Abort(String),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(m) | CmdError::Input(m) => write!(f, "{m}"),
            CmdError::Abort(m) => write!(f, "aborted: {m}"),
        }
    }
}

impl CmdError {
    fn exit_code(&self) -> u8 {
        match self {
            CmdError::Config(_) | CmdError::Input(_) => 2,
            CmdError::Abort(_) => 3,
        }
    }
}

type CmdResult = Result<u8, CmdError>;

fn cfg_err<E: std::fmt::Display>(e: E) -> CmdError {
    CmdError::Config(e.to_string())
}

fn input_err<E: std::fmt::Display>(e: E) -> CmdError {
    CmdError::Input(e.to_string())
}

fn abort_err<E: std::fmt::Display>(e: E) -> CmdError {
    CmdError::Abort(e.to_string())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Train { config, seed, out } => cmd_train(&config, seed, out),
        Command::Eval {
            checkpoint,
            dataset,
            members,
            seeds,
            out,
            data_dir,
        } => cmd_eval(&checkpoint, dataset, members, seeds, out, data_dir),
        Command::Ood {
            checkpoint,
            inlier,
            outlier,
            members,
            max_examples,
            out,
            data_dir,
        } => cmd_ood(
            &checkpoint,
            &inlier,
            &outlier,
            members,
            max_examples,
            out,
            data_dir,
        ),
        Command::Attack {
            checkpoint,
            config,
            eps,
            out,
            data_dir,
        } => cmd_attack(&checkpoint, config, eps, out, data_dir),
        Command::Ablate { config, out } => cmd_ablate(&config, out),
        Command::Regress1d { config, out } => cmd_regress1d(&config, out),
        Command::Gradcheck => cmd_gradcheck(),
        Command::Fetch {
            url,
            sha256,
            out,
            extract,
        } => cmd_fetch(&url, &sha256, &out, extract),
    }
}

// ── dataset resolution ───────────────────────────────────────────────

fn load_dataset(
    name: &str,
    data_dir: &Path,
    take: usize,
    seed: u64,
    train_split: bool,
) -> Result<Dataset, CmdError> {
    let ds = match name {
        "mnist" | "mnist5000" => {
            let ds = data::load_idx_dir(&data_dir.join("mnist"), train_split).map_err(input_err)?;
            let take = if name == "mnist5000" && train_split {
                5000
            } else {
                take
            };
            if take > 0 && train_split {
                data::take_n(&ds, take, seed).map_err(input_err)?
            } else {
                ds
            }
        }
        "notmnist" => {
            // IDX layout preferred; fall back to a PNG class tree
            match data::load_idx_dir(&data_dir.join("notmnist"), train_split) {
                Ok(ds) => ds,
                Err(_) => {
                    let (ds, report) =
                        data::load_image_dir(&data_dir.join("notmnist")).map_err(input_err)?;
                    if !report.skipped.is_empty() {
                        eprintln!(
                            "notmnist: skipped {} unreadable files",
                            report.skipped.len()
                        );
                    }
                    ds
                }
            }
        }
        "cifar10" => {
            data::load_cifar_dir(&data_dir.join("cifar10"), train_split).map_err(input_err)?
        }
        "cifar5" => {
            let full = data::load_cifar_dir(&data_dir.join("cifar10"), train_split)
                .map_err(input_err)?;
            data::class_subset(&full, &[0, 1, 2, 3, 4]).map_err(input_err)?
        }
        "cifar5-heldout" => {
            let full = data::load_cifar_dir(&data_dir.join("cifar10"), train_split)
                .map_err(input_err)?;
            data::class_subset(&full, &[5, 6, 7, 8, 9]).map_err(input_err)?
        }
        "regress1d" => data::make_regression_set(seed).dataset(),
        other => return Err(CmdError::Input(format!("unknown dataset '{other}'"))),
    };
    Ok(ds)
}

fn ensure_out(dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CmdError::Input(format!("cannot create {}: {e}", dir.display())))
}

fn load_model_ck(path: &Path) -> Result<HyperGanModel, CmdError> {
    checkpoint::load_model(path).map_err(input_err)
}

fn default_data_dir() -> PathBuf {
    std::env::var("HG_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("data"))
}

// ── train ────────────────────────────────────────────────────────────

fn cmd_train(config_arg: &str, seed: Option<u64>, out: Option<PathBuf>) -> CmdResult {
    let mut cfg = RunConfig::from_arg(config_arg).map_err(cfg_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.seed = s;
        cfg.direct.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    ensure_out(&cfg.out_dir)?;
    checkpoint::atomic_write(&cfg.out_dir.join("config.txt"), cfg.to_text().as_bytes())
        .map_err(input_err)?;

    let ds = load_dataset(&cfg.dataset, &cfg.data_dir, cfg.take, cfg.seed, true)?;
    let arch = ArchSpec::by_name(&cfg.arch)
        .ok_or_else(|| CmdError::Config(format!("unknown arch '{}'", cfg.arch)))?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = HyperGanModel::init(cfg.hypergan.clone(), &arch, &mut rng).map_err(cfg_err)?;

    println!(
        "training '{}' on {} ({} examples), {} target params per network",
        cfg.experiment,
        ds.name,
        ds.len(),
        arch.param_count()
    );
    match train::train(&mut model, &ds, &cfg.train) {
        Ok(result) => {
            metrics::write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &result.metrics)
                .map_err(input_err)?;
            checkpoint::save_model(&model, &cfg.out_dir.join("model.hgck")).map_err(input_err)?;
            let last = result.metrics.last();
            println!(
                "done: {} steps, final val acc {:.4}{}",
                result.steps_run,
                last.map_or(f64::NAN, |r| r.val_acc),
                if result.early_stopped {
                    " (early stop)"
                } else {
                    ""
                }
            );
            Ok(0)
        }
        Err(e) => {
            // keep partial artifacts for inspection
            let _ = checkpoint::save_model(&model, &cfg.out_dir.join("model.partial.hgck"));
            Err(abort_err(e))
        }
    }
}

// ── eval ─────────────────────────────────────────────────────────────

fn parse_list_usize(s: &str) -> Result<Vec<usize>, CmdError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CmdError::Input(format!("bad list entry '{p}'")))
        })
        .collect()
}

fn cmd_eval(
    ck: &Path,
    dataset: Option<String>,
    members: Option<String>,
    seeds: Option<usize>,
    out: Option<PathBuf>,
    data_dir: Option<PathBuf>,
) -> CmdResult {
    let model = load_model_ck(ck)?;
    let dataset = dataset.unwrap_or_else(|| match model.arch.name.as_str() {
        "cifar" => "cifar5".into(),
        _ => "mnist".into(),
    });
    let data_dir = data_dir.unwrap_or_else(default_data_dir);
    let member_counts = match members {
        Some(m) => parse_list_usize(&m)?,
        None => vec![1, 5, 10, 100],
    };
    let seeds = seeds.unwrap_or(3);
    let test = load_dataset(&dataset, &data_dir, 0, 0, false)?;
    let labels = test
        .targets
        .classes()
        .ok_or_else(|| CmdError::Input("eval needs a classification dataset".into()))?;

    let max_members = *member_counts.iter().max().unwrap_or(&1);
    let mut rows = Vec::new();
    let mut acc_by_count: Vec<Vec<f64>> = vec![Vec::new(); member_counts.len()];
    for s in 0..seeds {
        let mut rng = ChaCha20Rng::seed_from_u64(0xED_u64 + s as u64);
        // one shared pool per seed; member subsets reuse the same forwards
        let pool = model
            .sample_networks(max_members, &mut rng)
            .map_err(input_err)?;
        let mut logits: Vec<Tensor> = Vec::with_capacity(max_members);
        for net in &pool {
            logits.push(forward(&model.arch, net, &test.inputs).map_err(input_err)?);
        }
        for (ci, &count) in member_counts.iter().enumerate() {
            let pred = eval::EnsemblePrediction::from_member_logits(logits[..count].to_vec());
            acc_by_count[ci].push(eval::accuracy(&pred, labels));
        }
    }
    println!("method,members,acc_mean,acc_std");
    for (ci, &count) in member_counts.iter().enumerate() {
        let accs = &acc_by_count[ci];
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
        let row = metrics::EvalRow {
            method: "hypergan".into(),
            members: count,
            acc_mean: mean,
            acc_std: var.sqrt(),
        };
        println!("hypergan,{},{:.4},{:.4}", count, row.acc_mean, row.acc_std);
        rows.push(row);
    }
    if let Some(out) = out {
        ensure_out(&out)?;
        metrics::write_eval_csv(&out.join("eval.csv"), &rows).map_err(input_err)?;
    }
    Ok(0)
}

// ── ood ──────────────────────────────────────────────────────────────

fn cmd_ood(
    ck: &Path,
    inlier: &str,
    outlier: &str,
    members: usize,
    max_examples: usize,
    out: Option<PathBuf>,
    data_dir: Option<PathBuf>,
) -> CmdResult {
    let model = load_model_ck(ck)?;
    let data_dir = data_dir.unwrap_or_else(default_data_dir);
    let mut in_ds = load_dataset(inlier, &data_dir, 0, 0, false)?;
    let mut out_ds = load_dataset(outlier, &data_dir, 0, 0, false)?;
    if max_examples > 0 {
        in_ds = in_ds.head(max_examples.min(in_ds.len()));
        out_ds = out_ds.head(max_examples.min(out_ds.len()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(0x00D);
    let nets = model
        .sample_networks(members, &mut rng)
        .map_err(input_err)?;
    let in_pred = eval::fuse_softmax(&nets, &model.arch, &in_ds.inputs).map_err(input_err)?;
    let out_pred = eval::fuse_softmax(&nets, &model.arch, &out_ds.inputs).map_err(input_err)?;
    let in_h = eval::predictive_entropy(&in_pred);
    let out_h = eval::predictive_entropy(&out_pred);
    let auroc = eval::ood_auroc(&in_h, &out_h);
    println!(
        "inliers {} ({}), outliers {} ({}), members {}",
        inlier,
        in_h.len(),
        outlier,
        out_h.len(),
        members
    );
    println!("entropy AUROC: {auroc:.3}");
    if let Some(out) = out {
        ensure_out(&out)?;
        metrics::write_values(&out.join("entropy_inlier.txt"), &in_h).map_err(input_err)?;
        metrics::write_values(&out.join("entropy_outlier.txt"), &out_h).map_err(input_err)?;
        metrics::write_ecdf_csv(&out.join("ecdf_inlier.csv"), &eval::entropy_ecdf(&in_h))
            .map_err(input_err)?;
        metrics::write_ecdf_csv(&out.join("ecdf_outlier.csv"), &eval::entropy_ecdf(&out_h))
            .map_err(input_err)?;
        checkpoint::atomic_write(&out.join("auroc.txt"), format!("{auroc:.3}\n").as_bytes())
            .map_err(input_err)?;
    }
    Ok(0)
}

// ── attack ───────────────────────────────────────────────────────────

fn cmd_attack(
    ck: &Path,
    config: Option<String>,
    eps: Option<String>,
    out: Option<PathBuf>,
    data_dir: Option<PathBuf>,
) -> CmdResult {
    let model = load_model_ck(ck)?;
    let run_cfg = match config {
        Some(c) => RunConfig::from_arg(&c).map_err(cfg_err)?,
        None => RunConfig::preset(match model.arch.name.as_str() {
            "cifar" => "cifar5",
            _ => "mnist",
        })
        .map_err(cfg_err)?,
    };
    let sweep = &run_cfg.attack;
    let eps_list: Vec<f32> = match eps {
        Some(e) => e
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| CmdError::Input(format!("bad eps '{p}'")))
            })
            .collect::<Result<_, _>>()?,
        None => sweep.eps.clone(),
    };
    let data_dir = data_dir.unwrap_or_else(default_data_dir);
    let dataset = match model.arch.name.as_str() {
        "cifar" => "cifar5",
        _ => "mnist",
    };
    let test = load_dataset(dataset, &data_dir, 0, 0, false)?;
    let batch = test.head(sweep.examples.min(test.len()));
    let labels = batch.targets.classes().unwrap().to_vec();

    let mut rows = Vec::new();
    for &e in &eps_list {
        for kind in ["fgsm", "pgd"] {
            let mut acfg = if kind == "fgsm" {
                AttackConfig::fgsm(e)
            } else {
                AttackConfig::pgd(e)
            };
            acfg.pgd_steps = sweep.pgd_steps;
            acfg.pgd_restarts = sweep.pgd_restarts;
            acfg.seed = run_cfg.seed;
            let mut rng = ChaCha20Rng::seed_from_u64(run_cfg.seed ^ 0xA77AC4);
            let report = attack::attack_then_fresh_eval(
                &model,
                &acfg,
                sweep.n_attacked,
                sweep.n_eval,
                &batch.inputs,
                &labels,
                &mut rng,
            )
            .map_err(abort_err)?;
            let transfer = attack::transfer_fooling_rate(
                &model,
                &acfg,
                sweep.transfer_eval,
                &batch.inputs,
                &labels,
                &mut rng,
            )
            .map_err(abort_err)?;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let row = metrics::AttackRow {
                eps: e,
                kind: kind.into(),
                clean_entropy_mean: mean(&report.clean_entropy),
                adv_entropy_mean: mean(&report.adv_entropy),
                adv_accuracy: report.adv_accuracy,
                attacked_fooled_fraction: report.attacked_fooled_fraction,
                transfer_fooling_mean: transfer.mean_fooling_rate,
            };
            println!(
                "eps {:.3} {}: clean H {:.3}, adv H {:.3}, adv acc {:.3}, transfer fooling {:.3}",
                e,
                kind,
                row.clean_entropy_mean,
                row.adv_entropy_mean,
                row.adv_accuracy,
                row.transfer_fooling_mean
            );
            if let Some(dir) = &out {
                ensure_out(dir)?;
                metrics::write_values(
                    &dir.join(format!("entropy_adv_{kind}_eps{e}.txt")),
                    &report.adv_entropy,
                )
                .map_err(input_err)?;
                metrics::write_values(
                    &dir.join(format!("fooling_{kind}_eps{e}.txt")),
                    &transfer.fooling_rate,
                )
                .map_err(input_err)?;
            }
            rows.push(row);
        }
    }
    if let Some(dir) = &out {
        metrics::write_attack_csv(&dir.join("attack.csv"), &rows).map_err(input_err)?;
    }
    Ok(0)
}

// ── ablate ───────────────────────────────────────────────────────────

fn cmd_ablate(config_arg: &str, out: Option<PathBuf>) -> CmdResult {
    let mut cfg = RunConfig::from_arg(config_arg).map_err(cfg_err)?;
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    ensure_out(&cfg.out_dir)?;
    checkpoint::atomic_write(&cfg.out_dir.join("config.txt"), cfg.to_text().as_bytes())
        .map_err(input_err)?;
    let ds = load_dataset(&cfg.dataset, &cfg.data_dir, cfg.take, cfg.seed, true)?;
    let arch = ArchSpec::by_name(&cfg.arch)
        .ok_or_else(|| CmdError::Config(format!("unknown arch '{}'", cfg.arch)))?;

    let mut rows = Vec::new();
    for (variant, use_mixer, beta) in [
        ("full", true, cfg.hypergan.beta),
        ("no_mixer", false, cfg.hypergan.beta),
        ("no_discriminator", true, 0.0),
    ] {
        let hcfg = HyperGanConfig {
            use_mixer,
            beta,
            ..cfg.hypergan.clone()
        };
        let tcfg = train::TrainConfig {
            beta,
            ..cfg.train.clone()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut model = HyperGanModel::init(hcfg, &arch, &mut rng).map_err(cfg_err)?;
        println!("ablation variant '{variant}'...");
        let result = train::train(&mut model, &ds, &tcfg).map_err(abort_err)?;
        checkpoint::save_model(&model, &cfg.out_dir.join(format!("model_{variant}.hgck")))
            .map_err(input_err)?;
        for r in &result.metrics {
            rows.push(metrics::AblateRow {
                variant: variant.into(),
                step: r.step,
                val_acc: r.val_acc,
                diversity_cv: r.diversity_cv.clone(),
            });
        }
        let last = result.metrics.last();
        println!(
            "  final val acc {:.4}, diversity cv {:?}",
            last.map_or(f64::NAN, |r| r.val_acc),
            last.map_or(vec![], |r| r.diversity_cv.clone())
        );
    }
    metrics::write_ablate_csv(&cfg.out_dir.join("ablate.csv"), &rows).map_err(input_err)?;
    Ok(0)
}

// ── regress1d ────────────────────────────────────────────────────────

fn cmd_regress1d(config_arg: &str, out: Option<PathBuf>) -> CmdResult {
    let mut cfg = RunConfig::from_arg(config_arg).map_err(cfg_err)?;
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    ensure_out(&cfg.out_dir)?;
    checkpoint::atomic_write(&cfg.out_dir.join("config.txt"), cfg.to_text().as_bytes())
        .map_err(input_err)?;
    let rs = data::make_regression_set(cfg.seed);
    let ds = rs.dataset();
    let arch = ArchSpec::regression();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut model = HyperGanModel::init(cfg.hypergan.clone(), &arch, &mut rng).map_err(cfg_err)?;
    let result = train::train(&mut model, &ds, &cfg.train).map_err(abort_err)?;
    checkpoint::save_model(&model, &cfg.out_dir.join("model.hgck")).map_err(input_err)?;
    metrics::write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &result.metrics)
        .map_err(input_err)?;

    let grid = data::regression_eval_grid();
    let band = |count: usize, seed: u64| -> Result<(Vec<f64>, Vec<f64>), CmdError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let members = model.sample_networks(count, &mut rng).map_err(input_err)?;
        let n = grid.shape()[0];
        let mut sums = vec![0.0f64; n];
        let mut sumsq = vec![0.0f64; n];
        for m in &members {
            let out = forward(&arch, m, &grid).map_err(input_err)?;
            for (i, &v) in out.data().iter().enumerate() {
                sums[i] += v as f64;
                sumsq[i] += v as f64 * v as f64;
            }
        }
        let mean: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
        let std: Vec<f64> = (0..n)
            .map(|i| (sumsq[i] / count as f64 - mean[i] * mean[i]).max(0.0).sqrt())
            .collect();
        Ok((mean, std))
    };
    let (mean10, std10) = band(10, 0xB10)?;
    let (mean100, std100) = band(100, 0xB100)?;
    let rows: Vec<metrics::BandRow> = (0..grid.shape()[0])
        .map(|i| metrics::BandRow {
            x: grid.data()[i] as f64,
            mean10: mean10[i],
            std10: std10[i],
            mean100: mean100[i],
            std100: std100[i],
        })
        .collect();
    metrics::write_band_csv(&cfg.out_dir.join("bands.csv"), &rows).map_err(input_err)?;
    println!(
        "bands written; std100 at x=0: {:.3}, at x=+6: {:.3}",
        std100[200], std100[400]
    );
    Ok(0)
}

// ── gradcheck ────────────────────────────────────────────────────────

fn cmd_gradcheck() -> CmdResult {
    let start = std::time::Instant::now();
    let reports = checks::gradient_suite();
    let mut failed = 0;
    for r in &reports {
        println!(
            "{} {:<40} rel_err {:.2e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.rel_err
        );
        if !r.pass {
            failed += 1;
        }
    }
    println!(
        "{}/{} checks passed in {:?}",
        reports.len() - failed,
        reports.len(),
        start.elapsed()
    );
    Ok(if failed == 0 { 0 } else { 1 })
}

// ── fetch ────────────────────────────────────────────────────────────

fn cmd_fetch(url: &str, sha256: &str, out: &Path, extract: bool) -> CmdResult {
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            ensure_out(dir)?;
        }
    }
    let response = ureq::get(url)
        .call()
        .map_err(|e| CmdError::Input(format!("download failed: {e}")))?;
    let mut raw = Vec::new();
    use std::io::Read;
    response
        .into_reader()
        .read_to_end(&mut raw)
        .map_err(|e| CmdError::Input(format!("download read failed: {e}")))?;
    checkpoint::atomic_write(out, &raw).map_err(input_err)?;
    let digest = data::sha256_file(out).map_err(input_err)?;
    if !digest.eq_ignore_ascii_case(sha256) {
        return Err(CmdError::Input(format!(
            "sha256 mismatch: expected {sha256}, got {digest}"
        )));
    }
    println!("fetched {} ({} bytes, sha256 ok)", out.display(), raw.len());
    if extract {
        extract_archive(out)?;
    }
    Ok(0)
}

fn extract_archive(path: &Path) -> Result<(), CmdError> {
    let name = path.to_string_lossy();
    let dir = path.parent().unwrap_or(Path::new("."));
    if name.ends_with(".tar.gz") || name.ends_with(".tgz") {
        let f = std::fs::File::open(path).map_err(input_err)?;
        let gz = flate2::read::GzDecoder::new(f);
        let mut archive = tar::Archive::new(gz);
        archive.unpack(dir).map_err(input_err)?;
        println!("extracted archive into {}", dir.display());
    } else if name.ends_with(".gz") {
        let f = std::fs::File::open(path).map_err(input_err)?;
        let mut gz = flate2::read::GzDecoder::new(f);
        let mut out = Vec::new();
        use std::io::Read;
        gz.read_to_end(&mut out).map_err(input_err)?;
        let target = path.with_extension("");
        checkpoint::atomic_write(&target, &out).map_err(input_err)?;
        println!("decompressed to {}", target.display());
    } else {
        return Err(CmdError::Input(
            "only .gz and .tar.gz archives are supported".into(),
        ));
    }
    Ok(())
}
