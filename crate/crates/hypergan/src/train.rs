//! Alternating optimization of the hypernetwork objective: task loss of a
//! freshly generated network plus the beta-weighted latent adversarial
//! term, with interleaved discriminator updates. Also the direct-training
//! baselines (random-start ensembles, MC dropout).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::{Dataset, Targets};
use crate::eval::{accuracy, diversity_stats, fuse_softmax};
use crate::model::{HyperGanModel, ModelError, ParamGroup};
use crate::nets::{
    forward, forward_graph, forward_graph_dropout, ArchSpec, DropoutPlan, ParamSet, ParamValues,
};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Graph, Tensor, TensorError, Value};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training data: {0}")]
    Data(String),
    #[error(
        "non-finite loss at step {step}: task={task}, adv_g={adv_g}, adv_d={adv_d}"
    )]
    NonFinite {
        step: u64,
        task: f64,
        adv_g: f64,
        adv_d: f64,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the latent adversarial regularizer.
    pub beta: f32,
    /// Adam learning rate for mixer + generators.
    pub lr_generator: f32,
    /// Adam learning rate for the discriminator.
    pub lr_discriminator: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides epochs when set.
    pub steps_override: Option<usize>,
    /// Discriminator updates per generator update.
    pub d_steps: usize,
    /// Noise batch for the adversarial terms (the task term always uses a
    /// single fresh network per minibatch).
    pub latent_batch: usize,
    pub seed: u64,
    /// Steps between validation/diversity snapshots (also the metrics-row
    /// interval).
    pub eval_interval: usize,
    /// Fraction of the training set held out for validation.
    pub val_fraction: f32,
    /// Cap on validation examples actually scored.
    pub val_max: usize,
    /// Ensemble size for the validation metric.
    pub val_members: usize,
    /// Population size for diversity snapshots.
    pub diversity_samples: usize,
    /// Stop when validation improvement stays below
    /// `early_stop_min_delta` for `early_stop_window` consecutive evals,
    /// restoring the highest-diversity model of that window.
    pub early_stop: bool,
    pub early_stop_min_delta: f64,
    pub early_stop_window: usize,
    /// Directory receiving `model.latest.hgck` / `state.latest.hgck` at
    /// every eval interval (resumable runs).
    pub checkpoint_dir: Option<std::path::PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1.0,
            lr_generator: 5e-4,
            lr_discriminator: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            steps_override: None,
            d_steps: 1,
            latent_batch: 32,
            seed: 0,
            eval_interval: 500,
            val_fraction: 0.05,
            val_max: 1000,
            val_members: 5,
            diversity_samples: 100,
            early_stop: false,
            early_stop_min_delta: 0.001,
            early_stop_window: 3,
            checkpoint_dir: None,
        }
    }
}

/// Optimizer and rng state carried across steps.
pub struct TrainState {
    pub step: u64,
    pub adam_generator: Adam,
    pub adam_discriminator: Adam,
    pub rng: ChaCha20Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        let adam = |lr| {
            Adam::new(AdamConfig {
                lr,
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                eps: cfg.adam_eps,
            })
        };
        TrainState {
            step: 0,
            adam_generator: adam(cfg.lr_generator),
            adam_discriminator: adam(cfg.lr_discriminator),
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub task: f64,
    pub adv_g: f64,
}

/// One metrics-log row, produced at each eval interval.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub step: u64,
    pub task_loss: f64,
    pub adv_d: f64,
    pub adv_g: f64,
    /// Fused validation accuracy; for regression, negative RMSE.
    pub val_acc: f64,
    pub diversity_cv: Vec<f64>,
}

pub struct TrainResult {
    pub metrics: Vec<MetricsRow>,
    pub early_stopped: bool,
    pub steps_run: u64,
}

fn task_loss(g: &Graph, out: Value, y: &Targets) -> crate::tensor::Result<Value> {
    match y {
        Targets::Classes(labels) => g.softmax_cross_entropy(out, labels),
        Targets::Values(vals) => {
            let t = g.constant(Tensor::from_vec(&[vals.len(), 1], vals.clone())?);
            g.mse(out, t)
        }
    }
}

/// One generator-side update: fresh noise, generate one network, task loss
/// on the minibatch, plus the nonsaturating adversarial term on a noise
/// batch. Discriminator parameters are read but never updated here.
pub fn hypergan_step(
    model: &mut HyperGanModel,
    x: &Tensor,
    y: &Targets,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<StepReport> {
    let arch = model.arch.clone();
    let n = arch.layer_count();
    let use_adv = cfg.beta > 0.0 && model.mixer.is_some();

    let (grads, task_v, adv_v) = {
        let g = Graph::new();
        let vals = model.register(&g, ParamGroup::GeneratorSide);

        let s_task = model.sample_noise(1, &mut state.rng);
        let vs = g.constant(s_task);
        let z = model.mix_graph(&g, &vals, vs)?;
        let codes = (0..n)
            .map(|i| model.code_graph(&g, z, i))
            .collect::<crate::tensor::Result<Vec<_>>>()?;
        let params = model.generate_graph(&g, &vals, &codes, &arch)?;
        let vx = g.constant(x.clone());
        let out = forward_graph(&g, &arch, &params, vx)?;
        let task = task_loss(&g, out, y)?;

        let (total, adv_v) = if use_adv {
            let s_adv = model.sample_noise(cfg.latent_batch, &mut state.rng);
            let vsa = g.constant(s_adv);
            let za = model.mix_graph(&g, &vals, vsa)?;
            let mut adv: Option<Value> = None;
            for i in 0..n {
                let code = model.code_graph(&g, za, i)?;
                let score = model.discriminate_graph(&g, &vals, code)?;
                let term = g.bce_toward_one(score)?;
                adv = Some(match adv {
                    Some(a) => g.add(a, term)?,
                    None => term,
                });
            }
            let adv = adv.expect("at least one layer");
            let adv_v = g.tensor(adv).item() as f64;
            let scaled = g.scale(adv, cfg.beta);
            (g.add(task, scaled)?, adv_v)
        } else {
            (task, 0.0)
        };

        let task_v = g.tensor(task).item() as f64;
        if !task_v.is_finite() || !adv_v.is_finite() {
            return Err(TrainError::NonFinite {
                step: state.step,
                task: task_v,
                adv_g: adv_v,
                adv_d: f64::NAN,
            });
        }
        g.backward(total)?;
        let ordered = vals.ordered(ParamGroup::GeneratorSide);
        let grads: Vec<Option<Tensor>> = ordered.iter().map(|&v| g.take_grad(v)).collect();
        (grads, task_v, adv_v)
    };

    state.adam_generator.begin();
    let mut slot = 0;
    let adam = &mut state.adam_generator;
    model.visit_params_mut(ParamGroup::GeneratorSide, &mut |_, t| {
        adam.update(slot, t, grads[slot].as_ref());
        slot += 1;
    });
    state.step += 1;
    Ok(StepReport {
        task: task_v,
        adv_g: adv_v,
    })
}

/// One discriminator update: fresh codes (no gradient into the mixer)
/// against fresh prior draws, layerwise logistic loss.
pub fn discriminator_step(
    model: &mut HyperGanModel,
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<f64> {
    let n = model.arch.layer_count();
    let (grads, loss_v) = {
        let s = model.sample_noise(cfg.latent_batch, &mut state.rng);
        let latent = model.mix(&s)?;
        let g = Graph::new();
        let vals = model.register(&g, ParamGroup::DiscriminatorSide);
        let mut loss: Option<Value> = None;
        for i in 0..n {
            let real = g.constant(model.sample_prior(cfg.latent_batch, &mut state.rng));
            let fake = g.constant(latent.code(i));
            let d_real = model.discriminate_graph(&g, &vals, real)?;
            let d_fake = model.discriminate_graph(&g, &vals, fake)?;
            let term = g.bce_logit_pair(d_real, d_fake)?;
            loss = Some(match loss {
                Some(l) => g.add(l, term)?,
                None => term,
            });
        }
        let loss = loss.expect("at least one layer");
        let loss_v = g.tensor(loss).item() as f64;
        if !loss_v.is_finite() {
            return Err(TrainError::NonFinite {
                step: state.step,
                task: f64::NAN,
                adv_g: f64::NAN,
                adv_d: loss_v,
            });
        }
        g.backward(loss)?;
        let ordered = vals.ordered(ParamGroup::DiscriminatorSide);
        let grads: Vec<Option<Tensor>> = ordered.iter().map(|&v| g.take_grad(v)).collect();
        (grads, loss_v)
    };

    state.adam_discriminator.begin();
    let mut slot = 0;
    let adam = &mut state.adam_discriminator;
    model.visit_params_mut(ParamGroup::DiscriminatorSide, &mut |_, t| {
        adam.update(slot, t, grads[slot].as_ref());
        slot += 1;
    });
    Ok(loss_v)
}

fn split_validation(dataset: &Dataset, cfg: &TrainConfig) -> (Dataset, Dataset) {
    let n = dataset.len();
    let val_n = ((n as f32 * cfg.val_fraction) as usize).min(cfg.val_max);
    if val_n < 10 || n - val_n < cfg.batch_size {
        return (dataset.clone(), dataset.clone());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(17));
    use rand::seq::SliceRandom;
    idx.shuffle(&mut rng);
    let val = dataset.gather(&idx[..val_n]);
    let train = dataset.gather(&idx[val_n..]);
    (train, val)
}

/// Validation metric (higher is better) and per-layer diversity CVs,
/// from a seeded rng decoupled from the training stream.
fn snapshot_metrics(
    model: &HyperGanModel,
    val: &Dataset,
    cfg: &TrainConfig,
    step: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut rng =
        ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xA076_1D64_78BD_642F ^ step.wrapping_mul(0x9E37));
    let members = model.sample_networks(cfg.val_members.max(1), &mut rng)?;
    let metric = match &val.targets {
        Targets::Classes(labels) => {
            let pred = fuse_softmax(&members, &model.arch, &val.inputs)?;
            accuracy(&pred, labels)
        }
        Targets::Values(ys) => {
            let mut mean = vec![0.0f64; val.len()];
            for m in &members {
                let out = forward(&model.arch, m, &val.inputs)?;
                for (acc, &v) in mean.iter_mut().zip(out.data()) {
                    *acc += v as f64;
                }
            }
            let k = members.len() as f64;
            let mse: f64 = mean
                .iter()
                .zip(ys)
                .map(|(&m, &y)| {
                    let d = m / k - y as f64;
                    d * d
                })
                .sum::<f64>()
                / val.len() as f64;
            -mse.sqrt()
        }
    };
    let pop = model.sample_networks(cfg.diversity_samples.max(2), &mut rng)?;
    let cvs = diversity_stats(&pop).layers.iter().map(|l| l.cv).collect();
    Ok((metric, cvs))
}

/// Full training loop: for every minibatch, `d_steps` discriminator
/// updates then one generator-side update; periodic validation accuracy
/// and diversity snapshots; optional plateau early stopping that keeps the
/// highest-diversity model of the stopping window.
pub fn train(
    model: &mut HyperGanModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if dataset.is_empty() {
        return Err(TrainError::Data("empty dataset".into()));
    }
    let (train_ds, val_ds) = split_validation(dataset, cfg);
    let steps_per_epoch = train_ds.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = cfg
        .steps_override
        .map(|s| s as u64)
        .unwrap_or(cfg.epochs as u64 * steps_per_epoch)
        .max(1);

    let mut state = TrainState::new(cfg);
    let mut metrics = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut improvements: Vec<f64> = Vec::new();
    let mut snaps: VecDeque<(f64, HyperGanModel)> = VecDeque::new();
    let mut early_stopped = false;

    let mut run_task = 0.0f64;
    let mut run_adv_g = 0.0f64;
    let mut run_adv_d = 0.0f64;
    let mut run_count = 0u64;
    let use_disc = cfg.beta > 0.0 && model.mixer.is_some();

    'outer: for epoch in 0.. {
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64);
        for (x, y) in train_ds.batches(cfg.batch_size, epoch_seed) {
            if use_disc {
                for _ in 0..cfg.d_steps.max(1) {
                    run_adv_d += discriminator_step(model, cfg, &mut state)?;
                }
            }
            let rep = hypergan_step(model, &x, &y, cfg, &mut state)?;
            run_task += rep.task;
            run_adv_g += rep.adv_g;
            run_count += 1;

            let at_interval = state.step % cfg.eval_interval as u64 == 0;
            let at_end = state.step >= total_steps;
            if at_interval || at_end {
                let (metric, cvs) = snapshot_metrics(model, &val_ds, cfg, state.step)?;
                let denom = run_count.max(1) as f64;
                metrics.push(MetricsRow {
                    step: state.step,
                    task_loss: run_task / denom,
                    adv_d: run_adv_d / (denom * cfg.d_steps.max(1) as f64),
                    adv_g: run_adv_g / denom,
                    val_acc: metric,
                    diversity_cv: cvs.clone(),
                });
                run_task = 0.0;
                run_adv_g = 0.0;
                run_adv_d = 0.0;
                run_count = 0;

                let best_before = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                history.push(metric);
                improvements.push(if best_before.is_finite() {
                    metric - best_before
                } else {
                    f64::INFINITY
                });
                if let Some(dir) = &cfg.checkpoint_dir {
                    let _ = crate::checkpoint::model_to_store(model)
                        .save(&dir.join("model.latest.hgck"));
                    let _ = crate::checkpoint::state_to_store(&state)
                        .save(&dir.join("state.latest.hgck"));
                }
                let mean_cv = cvs.iter().sum::<f64>() / cvs.len().max(1) as f64;
                snaps.push_back((mean_cv, model.clone()));
                while snaps.len() > cfg.early_stop_window {
                    snaps.pop_front();
                }
                if cfg.early_stop
                    && improvements.len() > cfg.early_stop_window
                    && improvements
                        .iter()
                        .rev()
                        .take(cfg.early_stop_window)
                        .all(|&d| d < cfg.early_stop_min_delta)
                {
                    // keep the most diverse of the plateau window
                    if let Some((_, best)) = snaps
                        .iter()
                        .max_by(|a, b| a.0.partial_cmp(&b.0).expect("finite cv"))
                    {
                        *model = best.clone();
                    }
                    early_stopped = true;
                    break 'outer;
                }
            }
            if at_end {
                break 'outer;
            }
        }
    }
    Ok(TrainResult {
        metrics,
        early_stopped,
        steps_run: state.step,
    })
}

// ── direct-training baselines ────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct DirectConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_override: Option<usize>,
    pub seed: u64,
    pub eval_interval: usize,
    /// Halve the learning rate after this many evals without improvement.
    pub plateau_patience: usize,
    pub lr_decay: f32,
    /// Dropout rate after hidden layers (the MC-dropout baseline).
    pub dropout: Option<f32>,
    pub val_fraction: f32,
    pub val_max: usize,
}

impl Default for DirectConfig {
    fn default() -> Self {
        DirectConfig {
            lr: 0.01,
            batch_size: 32,
            epochs: 10,
            steps_override: None,
            seed: 0,
            eval_interval: 500,
            plateau_patience: 2,
            lr_decay: 0.5,
            dropout: None,
            val_fraction: 0.05,
            val_max: 1000,
        }
    }
}

/// Standard supervised training of one target network from random init.
/// Returns the trained parameters with a (step, val metric) trace.
pub fn train_direct(
    arch: &ArchSpec,
    dataset: &Dataset,
    cfg: &DirectConfig,
) -> Result<(ParamSet, Vec<(u64, f64)>)> {
    if dataset.is_empty() {
        return Err(TrainError::Data("empty dataset".into()));
    }
    let hcfg = TrainConfig {
        seed: cfg.seed,
        batch_size: cfg.batch_size,
        val_fraction: cfg.val_fraction,
        val_max: cfg.val_max,
        ..TrainConfig::default()
    };
    let (train_ds, val_ds) = split_validation(dataset, &hcfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut params = ParamSet::init(arch, &mut rng);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let steps_per_epoch = train_ds.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = cfg
        .steps_override
        .map(|s| s as u64)
        .unwrap_or(cfg.epochs as u64 * steps_per_epoch)
        .max(1);

    let mut trace = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut step = 0u64;
    'outer: for epoch in 0.. {
        let epoch_seed = cfg.seed.wrapping_add(epoch as u64);
        for (x, y) in train_ds.batches(cfg.batch_size, epoch_seed) {
            let grads = {
                let g = Graph::new();
                let values = ParamValues::register(&g, &params, true);
                let vx = g.constant(x.clone());
                let out = match cfg.dropout {
                    Some(rate) if rate > 0.0 => forward_graph_dropout(
                        &g,
                        arch,
                        &values,
                        vx,
                        DropoutPlan {
                            rate,
                            rng: &mut rng,
                        },
                    )?,
                    _ => forward_graph(&g, arch, &values, vx)?,
                };
                let loss = task_loss(&g, out, &y)?;
                let loss_v = g.tensor(loss).item() as f64;
                if !loss_v.is_finite() {
                    return Err(TrainError::NonFinite {
                        step,
                        task: loss_v,
                        adv_g: 0.0,
                        adv_d: 0.0,
                    });
                }
                g.backward(loss)?;
                let mut grads = Vec::new();
                for (w, b) in &values.layers {
                    grads.push(g.grad(*w));
                    grads.push(g.grad(*b));
                }
                grads
            };
            adam.begin();
            for (li, layer) in params.layers.iter_mut().enumerate() {
                adam.update(2 * li, &mut layer.weight, grads[2 * li].as_ref());
                adam.update(2 * li + 1, &mut layer.bias, grads[2 * li + 1].as_ref());
            }
            step += 1;

            if step % cfg.eval_interval as u64 == 0 || step >= total_steps {
                let metric = direct_val_metric(arch, &params, &val_ds)?;
                trace.push((step, metric));
                if metric > best + 1e-4 {
                    best = metric;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.plateau_patience {
                        adam.config.lr *= cfg.lr_decay;
                        stale = 0;
                    }
                }
            }
            if step >= total_steps {
                break 'outer;
            }
        }
    }
    Ok((params, trace))
}

fn direct_val_metric(arch: &ArchSpec, params: &ParamSet, val: &Dataset) -> Result<f64> {
    let out = forward(arch, params, &val.inputs)?;
    Ok(match &val.targets {
        Targets::Classes(labels) => {
            let pred = crate::eval::EnsemblePrediction::from_member_logits(vec![out]);
            accuracy(&pred, labels)
        }
        Targets::Values(ys) => {
            let mse: f64 = out
                .data()
                .iter()
                .zip(ys)
                .map(|(&p, &y)| (p as f64 - y as f64).powi(2))
                .sum::<f64>()
                / ys.len() as f64;
            -mse.sqrt()
        }
    })
}

/// The random-start baseline: k independent direct trainings. Individual
/// failures are reported without aborting the remaining members.
pub fn train_standard_ensemble(
    arch: &ArchSpec,
    dataset: &Dataset,
    k: usize,
    cfg: &DirectConfig,
) -> (Vec<ParamSet>, Vec<(usize, TrainError)>) {
    let mut members = Vec::with_capacity(k);
    let mut failures = Vec::new();
    for i in 0..k {
        let member_cfg = DirectConfig {
            seed: cfg.seed.wrapping_add(1000 * i as u64 + 1),
            ..cfg.clone()
        };
        match train_direct(arch, dataset, &member_cfg) {
            Ok((params, _)) => members.push(params),
            Err(e) => failures.push((i, e)),
        }
    }
    (members, failures)
}

/// Dropout-trained network sampled by stochastic forward passes.
#[derive(Debug, Clone)]
pub struct McDropoutModel {
    pub params: ParamSet,
    pub rate: f32,
}

impl McDropoutModel {
    /// One stochastic pass per requested member.
    pub fn stochastic_logits<R: Rng>(
        &self,
        arch: &ArchSpec,
        x: &Tensor,
        passes: usize,
        rng: &mut R,
    ) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(passes);
        for _ in 0..passes {
            let g = Graph::new();
            let values = ParamValues::register(&g, &self.params, false);
            let vx = g.constant(x.clone());
            let y = forward_graph_dropout(
                &g,
                arch,
                &values,
                vx,
                DropoutPlan {
                    rate: self.rate,
                    rng,
                },
            )?;
            out.push(g.tensor(y));
        }
        Ok(out)
    }
}

/// Train the MC-dropout baseline (dropout after every hidden layer, same
/// direct objective).
pub fn train_mc_dropout(
    arch: &ArchSpec,
    dataset: &Dataset,
    cfg: &DirectConfig,
    rate: f32,
) -> Result<McDropoutModel> {
    let cfg = DirectConfig {
        dropout: Some(rate),
        ..cfg.clone()
    };
    let (params, _) = train_direct(arch, dataset, &cfg)?;
    Ok(McDropoutModel { params, rate })
}
