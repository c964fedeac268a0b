//! L-infinity bounded attacks (FGSM, PGD with random restarts) against
//! single networks and logit-fused ensembles, plus the two study
//! protocols: attack-one-ensemble / evaluate-a-fresh-one, and the
//! transfer fooling-rate measurement over freshly sampled networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::eval::{argmax_rows, fuse_softmax, predictive_entropy, EnsemblePrediction};
use crate::model::{HyperGanModel, ModelError};
use crate::nets::{forward_graph, ArchSpec, ParamSet, ParamValues};
use crate::tensor::{Graph, Result as TensorResult, Tensor, TensorError, Value};

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("attack config: {0}")]
    Config(String),
    #[error("non-finite input gradient")]
    NonFiniteGradient,
}

pub type Result<T> = std::result::Result<T, AttackError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget in pixel units on the [0,1] scale.
    pub epsilon: f32,
    pub pgd_step: f32,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
    /// Uniform random init inside the epsilon ball (PGD); disabled it
    /// starts at the clean input.
    pub random_init: bool,
    pub seed: u64,
    pub clamp: (f32, f32),
}

impl AttackConfig {
    pub fn fgsm(epsilon: f32) -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            epsilon,
            pgd_step: epsilon / 4.0,
            pgd_steps: 40,
            pgd_restarts: 5,
            random_init: true,
            seed: 0,
            clamp: (0.0, 1.0),
        }
    }

    pub fn pgd(epsilon: f32) -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            ..AttackConfig::fgsm(epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(AttackError::Config(format!(
                "epsilon must be in (0,1], got {}",
                self.epsilon
            )));
        }
        if self.kind == AttackKind::Pgd && self.pgd_step > self.epsilon {
            return Err(AttackError::Config(format!(
                "pgd step {} exceeds epsilon {}",
                self.pgd_step, self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// Whether the attacked model set misclassifies each example.
    pub success: Vec<bool>,
    pub perturbation_linf: Vec<f32>,
}

/// Sum of member logits, differentiable w.r.t. the input leaf.
pub fn fused_logit_graph(
    g: &Graph,
    members: &[ParamSet],
    arch: &ArchSpec,
    x: Value,
) -> TensorResult<Value> {
    assert!(!members.is_empty());
    let mut fused: Option<Value> = None;
    for m in members {
        let values = ParamValues::register(g, m, false);
        let logits = forward_graph(g, arch, &values, x)?;
        fused = Some(match fused {
            Some(f) => g.add(f, logits)?,
            None => logits,
        });
    }
    Ok(fused.expect("nonempty ensemble"))
}

/// Evaluation-only fused logits l(x) = sum of member logits.
pub fn fused_logit_forward(
    members: &[ParamSet],
    arch: &ArchSpec,
    x: &Tensor,
) -> TensorResult<Tensor> {
    let g = Graph::new();
    let vx = g.constant(x.clone());
    let fused = fused_logit_graph(&g, members, arch, vx)?;
    Ok(g.tensor(fused))
}

/// Cross-entropy input gradient through the fused logits.
fn input_gradient(
    members: &[ParamSet],
    arch: &ArchSpec,
    x: &Tensor,
    labels: &[u32],
) -> Result<(Tensor, Tensor)> {
    let g = Graph::new();
    let vx = g.leaf(x.clone(), true);
    let fused = fused_logit_graph(&g, members, arch, vx)?;
    let loss = g.softmax_cross_entropy(fused, labels)?;
    g.backward(loss)?;
    let grad = g.grad(vx).ok_or(AttackError::NonFiniteGradient)?;
    if grad.data().iter().any(|v| !v.is_finite()) {
        return Err(AttackError::NonFiniteGradient);
    }
    Ok((grad, g.tensor(fused)))
}

fn clamp_unit(v: f32, lo: f32, hi: f32) -> f32 {
    v.max(lo).min(hi)
}

fn linf_per_example(adv: &Tensor, clean: &Tensor) -> Vec<f32> {
    let b = adv.shape()[0];
    let row = adv.len() / b;
    (0..b)
        .map(|i| {
            adv.data()[i * row..(i + 1) * row]
                .iter()
                .zip(&clean.data()[i * row..(i + 1) * row])
                .map(|(a, c)| (a - c).abs())
                .fold(0.0f32, f32::max)
        })
        .collect()
}

fn success_flags(members: &[ParamSet], arch: &ArchSpec, adv: &Tensor, labels: &[u32]) -> Result<Vec<bool>> {
    let fused = fused_logit_forward(members, arch, adv)?;
    Ok(argmax_rows(&fused)
        .iter()
        .zip(labels)
        .map(|(p, l)| p != l)
        .collect())
}

/// One signed-gradient step of size epsilon from the clean input.
pub fn fgsm(
    members: &[ParamSet],
    arch: &ArchSpec,
    x: &Tensor,
    labels: &[u32],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let (grad, _) = input_gradient(members, arch, x, labels)?;
    let (lo, hi) = cfg.clamp;
    let adv_data: Vec<f32> = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| clamp_unit(v + cfg.epsilon * sign(g), lo, hi))
        .collect();
    let adversarial = Tensor::from_vec(x.shape(), adv_data)?;
    let success = success_flags(members, arch, &adversarial, labels)?;
    let perturbation_linf = linf_per_example(&adversarial, x);
    Ok(AttackResult {
        adversarial,
        success,
        perturbation_linf,
    })
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-example cross-entropy of fused logits (selection score for PGD).
fn per_example_ce(fused: &Tensor, labels: &[u32]) -> Vec<f64> {
    let (b, c) = (fused.shape()[0], fused.shape()[1]);
    (0..b)
        .map(|i| {
            let row = &fused.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let sum: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            sum.ln() - (row[labels[i] as usize] as f64 - max)
        })
        .collect()
}

/// Iterated signed-gradient ascent with projection onto the epsilon ball,
/// over `pgd_restarts` random starts; keeps each example's highest-loss
/// iterate.
pub fn pgd(
    members: &[ParamSet],
    arch: &ArchSpec,
    x: &Tensor,
    labels: &[u32],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let (lo, hi) = cfg.clamp;
    let eps = cfg.epsilon;
    let b = x.shape()[0];
    let row = x.len() / b;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut best_loss_guard: Vec<f64> = vec![f64::NEG_INFINITY; b];
    let mut best_adv: Vec<f32> = x.data().to_vec();

    for _restart in 0..cfg.pgd_restarts.max(1) {
        let mut cur: Vec<f32> = if cfg.random_init {
            x.data()
                .iter()
                .map(|&v| clamp_unit(v + rng.gen_range(-eps..=eps), lo, hi))
                .collect()
        } else {
            x.data().to_vec()
        };
        for _step in 0..cfg.pgd_steps.max(1) {
            let cur_t = Tensor::from_vec(x.shape(), cur.clone())?;
            let (grad, _) = input_gradient(members, arch, &cur_t, labels)?;
            for (i, v) in cur.iter_mut().enumerate() {
                let stepped = *v + cfg.pgd_step * sign(grad.data()[i]);
                let center = x.data()[i];
                let projected = stepped.max(center - eps).min(center + eps);
                *v = clamp_unit(projected, lo, hi);
            }
            // score this iterate and keep per-example best
            let cur_t = Tensor::from_vec(x.shape(), cur.clone())?;
            let fused = fused_logit_forward(members, arch, &cur_t)?;
            let losses = per_example_ce(&fused, labels);
            for i in 0..b {
                if losses[i] > best_loss_guard[i] {
                    best_loss_guard[i] = losses[i];
                    best_adv[i * row..(i + 1) * row]
                        .copy_from_slice(&cur[i * row..(i + 1) * row]);
                }
            }
        }
    }
    let adversarial = Tensor::from_vec(x.shape(), best_adv)?;
    let success = success_flags(members, arch, &adversarial, labels)?;
    let perturbation_linf = linf_per_example(&adversarial, x);
    Ok(AttackResult {
        adversarial,
        success,
        perturbation_linf,
    })
}

pub fn run_attack(
    members: &[ParamSet],
    arch: &ArchSpec,
    x: &Tensor,
    labels: &[u32],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(members, arch, x, labels, cfg),
        AttackKind::Pgd => pgd(members, arch, x, labels, cfg),
    }
}

/// Outcome of the attack-then-fresh-ensemble protocol.
#[derive(Debug, Clone)]
pub struct FreshEvalReport {
    /// Fresh-ensemble fused predictive entropy on clean inputs.
    pub clean_entropy: Vec<f64>,
    /// ... and on the adversarial batch.
    pub adv_entropy: Vec<f64>,
    pub clean_accuracy: f64,
    pub adv_accuracy: f64,
    /// Fraction of examples whose attack fooled the attacked set itself.
    pub attacked_fooled_fraction: f64,
}

/// Craft attacks against `attacked`, then score entropy and accuracy with
/// the independent `evaluators` ensemble.
pub fn attack_then_eval(
    attacked: &[ParamSet],
    evaluators: &[ParamSet],
    arch: &ArchSpec,
    x: &Tensor,
    labels: &[u32],
    cfg: &AttackConfig,
) -> Result<FreshEvalReport> {
    let result = run_attack(attacked, arch, x, labels, cfg)?;
    let clean_pred = fuse_softmax(evaluators, arch, x)?;
    let adv_pred = fuse_softmax(evaluators, arch, &result.adversarial)?;
    let acc = |pred: &EnsemblePrediction| crate::eval::accuracy(pred, labels);
    let fooled = result.success.iter().filter(|&&s| s).count() as f64
        / result.success.len() as f64;
    Ok(FreshEvalReport {
        clean_entropy: predictive_entropy(&clean_pred),
        adv_entropy: predictive_entropy(&adv_pred),
        clean_accuracy: acc(&clean_pred),
        adv_accuracy: acc(&adv_pred),
        attacked_fooled_fraction: fooled,
    })
}

/// Sample `n_attacked` networks from the model, attack their fused
/// logits, then evaluate with `n_eval` freshly sampled networks.
pub fn attack_then_fresh_eval<R: Rng>(
    model: &HyperGanModel,
    cfg: &AttackConfig,
    n_attacked: usize,
    n_eval: usize,
    x: &Tensor,
    labels: &[u32],
    rng: &mut R,
) -> Result<FreshEvalReport> {
    let attacked = model.sample_networks(n_attacked, rng)?;
    let fresh = model.sample_networks(n_eval, rng)?;
    attack_then_eval(&attacked, &fresh, &model.arch, x, labels, cfg)
}

#[derive(Debug, Clone)]
pub struct TransferReport {
    /// Per adversarial example: fraction of fresh networks misclassifying.
    pub fooling_rate: Vec<f64>,
    pub mean_fooling_rate: f64,
}

/// Craft attacks against one sampled network, then measure how many of
/// `n_eval` freshly sampled networks each example fools.
pub fn transfer_fooling_rate<R: Rng>(
    model: &HyperGanModel,
    cfg: &AttackConfig,
    n_eval: usize,
    x: &Tensor,
    labels: &[u32],
    rng: &mut R,
) -> Result<TransferReport> {
    let attacked = model.sample_networks(1, rng)?;
    let result = run_attack(&attacked, &model.arch, x, labels, cfg)?;
    transfer_of_batch(model, &result.adversarial, labels, n_eval, rng)
}

/// Fooling rate of an existing (possibly clean) batch over fresh samples.
pub fn transfer_of_batch<R: Rng>(
    model: &HyperGanModel,
    batch: &Tensor,
    labels: &[u32],
    n_eval: usize,
    rng: &mut R,
) -> Result<TransferReport> {
    let b = labels.len();
    let mut fooled = vec![0usize; b];
    // sample in blocks to bound memory
    let mut remaining = n_eval;
    while remaining > 0 {
        let take = remaining.min(50);
        let nets = model.sample_networks(take, rng)?;
        for net in &nets {
            let logits = crate::nets::forward(&model.arch, net, batch)?;
            for (i, p) in argmax_rows(&logits).iter().enumerate() {
                if *p != labels[i] {
                    fooled[i] += 1;
                }
            }
        }
        remaining -= take;
    }
    let fooling_rate: Vec<f64> = fooled.iter().map(|&f| f as f64 / n_eval as f64).collect();
    let mean = fooling_rate.iter().sum::<f64>() / b as f64;
    Ok(TransferReport {
        fooling_rate,
        mean_fooling_rate: mean,
    })
}
