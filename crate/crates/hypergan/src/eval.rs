//! Ensemble fusion and the uncertainty/diversity measurements: fused
//! accuracy, predictive entropy with its ECDF, entropy AUROC for
//! out-of-distribution splits, per-layer weight-norm diversity, and the
//! latent normality probe.

use crate::model::HyperGanModel;
use crate::nets::{forward, ArchSpec, ParamSet};
use crate::tensor::{Result, Tensor};

/// Per-member and fused predictions for one input batch.
///
/// `fused_probs` is the member-mean of softmax rows; `fused_logits` is the
/// member-sum of raw logits (the differentiable surface attacks use).
#[derive(Debug, Clone)]
pub struct EnsemblePrediction {
    pub member_probs: Vec<Tensor>,
    pub member_logits: Vec<Tensor>,
    pub fused_probs: Tensor,
    pub fused_logits: Tensor,
}

/// Row-wise softmax in f64 accumulation.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let mut out = vec![0.0f32; b * c];
    for i in 0..b {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum = 0.0f64;
        for &v in row {
            sum += (v as f64 - max).exp();
        }
        for (j, &v) in row.iter().enumerate() {
            out[i * c + j] = ((v as f64 - max).exp() / sum) as f32;
        }
    }
    Tensor::from_vec(&[b, c], out).expect("softmax shape")
}

impl EnsemblePrediction {
    pub fn members(&self) -> usize {
        self.member_probs.len()
    }

    pub fn batch(&self) -> usize {
        self.fused_probs.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.fused_probs.shape()[1]
    }

    /// Fuse precomputed member logits.
    pub fn from_member_logits(member_logits: Vec<Tensor>) -> Self {
        assert!(!member_logits.is_empty());
        let (b, c) = (member_logits[0].shape()[0], member_logits[0].shape()[1]);
        let member_probs: Vec<Tensor> = member_logits.iter().map(softmax).collect();
        let mut fused_p = vec![0.0f64; b * c];
        let mut fused_l = vec![0.0f64; b * c];
        for (probs, logits) in member_probs.iter().zip(&member_logits) {
            for i in 0..b * c {
                fused_p[i] += probs.data()[i] as f64;
                fused_l[i] += logits.data()[i] as f64;
            }
        }
        let n = member_logits.len() as f64;
        let fused_probs = Tensor::from_vec(
            &[b, c],
            fused_p.iter().map(|&v| (v / n) as f32).collect(),
        )
        .expect("fused shape");
        let fused_logits = Tensor::from_vec(
            &[b, c],
            fused_l.iter().map(|&v| v as f32).collect(),
        )
        .expect("fused shape");
        EnsemblePrediction {
            member_probs,
            member_logits,
            fused_probs,
            fused_logits,
        }
    }
}

/// Run every member over `x`, softmax, and average.
pub fn fuse_softmax(members: &[ParamSet], arch: &ArchSpec, x: &Tensor) -> Result<EnsemblePrediction> {
    assert!(!members.is_empty(), "ensemble needs at least one member");
    let mut member_logits = Vec::with_capacity(members.len());
    for m in members {
        member_logits.push(forward(arch, m, x)?);
    }
    Ok(EnsemblePrediction::from_member_logits(member_logits))
}

/// Fused-argmax accuracy; argmax ties resolve to the lowest class index.
pub fn accuracy(pred: &EnsemblePrediction, labels: &[u32]) -> f64 {
    assert_eq!(pred.batch(), labels.len());
    let c = pred.classes();
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = &pred.fused_probs.data()[i * c..(i + 1) * c];
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == label as usize {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Argmax labels of raw logits (ties to lowest index).
pub fn argmax_rows(logits: &Tensor) -> Vec<u32> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    (0..b)
        .map(|i| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}

/// Shannon entropy (nats) of each fused row.
pub fn predictive_entropy(pred: &EnsemblePrediction) -> Vec<f64> {
    entropy_rows(&pred.fused_probs)
}

/// Mean over members of each member's per-row entropy; a secondary
/// statistic next to the fused ("total") entropy.
pub fn mean_member_entropy(pred: &EnsemblePrediction) -> Vec<f64> {
    let b = pred.batch();
    let mut acc = vec![0.0f64; b];
    for m in &pred.member_probs {
        for (i, h) in entropy_rows(m).into_iter().enumerate() {
            acc[i] += h;
        }
    }
    let n = pred.members() as f64;
    acc.iter().map(|&v| v / n).collect()
}

fn entropy_rows(probs: &Tensor) -> Vec<f64> {
    let (b, c) = (probs.shape()[0], probs.shape()[1]);
    (0..b)
        .map(|i| {
            let mut h = 0.0f64;
            for &p in &probs.data()[i * c..(i + 1) * c] {
                let p = p as f64;
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            h
        })
        .collect()
}

/// Empirical CDF: sorted unique support with cumulative heights k/n.
#[derive(Debug, Clone)]
pub struct Ecdf {
    pub support: Vec<f64>,
    pub heights: Vec<f64>,
}

pub fn entropy_ecdf(values: &[f64]) -> Ecdf {
    assert!(!values.is_empty(), "ECDF of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite entropies"));
    let n = sorted.len() as f64;
    let mut support = Vec::new();
    let mut heights = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        if i + 1 < sorted.len() && sorted[i + 1] == v {
            continue; // keep only the last (highest) step per value
        }
        support.push(v);
        heights.push((i + 1) as f64 / n);
    }
    Ecdf { support, heights }
}

impl Ecdf {
    /// Fraction of the sample <= x.
    pub fn at(&self, x: f64) -> f64 {
        match self.support.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => self.heights[i],
            Err(0) => 0.0,
            Err(i) => self.heights[i - 1],
        }
    }
}

/// Probability that a random outlier scores higher than a random inlier,
/// ties counting one half. Exact pairwise counting.
pub fn ood_auroc(inlier: &[f64], outlier: &[f64]) -> f64 {
    assert!(!inlier.is_empty() && !outlier.is_empty());
    let mut wins = 0.0f64;
    for &o in outlier {
        for &i in inlier {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (inlier.len() as f64 * outlier.len() as f64)
}

/// Rank-statistic form of the same quantity (Mann-Whitney U / nm); used
/// as the cross-check route in tests.
pub fn ood_auroc_rank(inlier: &[f64], outlier: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = inlier
        .iter()
        .map(|&v| (v, false))
        .chain(outlier.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    // midranks for ties
    let mut rank_sum_outlier = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_outlier += midrank;
            }
        }
        i = j + 1;
    }
    let n_out = outlier.len() as f64;
    let n_in = inlier.len() as f64;
    (rank_sum_outlier - n_out * (n_out + 1.0) / 2.0) / (n_in * n_out)
}

/// Per-layer L2-norm statistics over a population of parameter sets.
#[derive(Debug, Clone)]
pub struct DiversityReport {
    pub population: usize,
    /// (mean, population std, cv) of the weight-tensor L2 norm per layer.
    pub layers: Vec<LayerDiversity>,
}

#[derive(Debug, Clone)]
pub struct LayerDiversity {
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
}

pub fn diversity_stats(population: &[ParamSet]) -> DiversityReport {
    assert!(population.len() >= 2, "diversity needs at least two members");
    let layers = population[0].layers.len();
    let mut report = Vec::with_capacity(layers);
    for l in 0..layers {
        let norms: Vec<f64> = population
            .iter()
            .map(|p| {
                p.layers[l]
                    .weight
                    .data()
                    .iter()
                    .map(|&v| v as f64 * v as f64)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let n = norms.len() as f64;
        let mean = norms.iter().sum::<f64>() / n;
        let var = norms.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let cv = if mean != 0.0 { std / mean } else { 0.0 };
        report.push(LayerDiversity { mean, std, cv });
    }
    DiversityReport {
        population: population.len(),
        layers: report,
    }
}

/// Mean and std of each layer code over `n` mixed noise draws. Std is
/// `None` for fewer than two samples.
pub fn latent_normality<R: rand::Rng>(
    model: &HyperGanModel,
    n: usize,
    rng: &mut R,
) -> crate::model::Result<Vec<(f64, Option<f64>)>> {
    let s = model.sample_noise(n, rng);
    let latent = model.mix(&s)?;
    let codes = latent.num_codes();
    let mut out = Vec::with_capacity(codes);
    for i in 0..codes {
        let code = latent.code(i);
        let count = code.len() as f64;
        let mean = code.data().iter().map(|&v| v as f64).sum::<f64>() / count;
        let std = if n >= 2 {
            let var = code
                .data()
                .iter()
                .map(|&v| (v as f64 - mean) * (v as f64 - mean))
                .sum::<f64>()
                / count;
            Some(var.sqrt())
        } else {
            None
        };
        out.push((mean, std));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HyperGanConfig, HyperGanModel, Mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pred_from_probs(rows: &[Vec<Vec<f32>>]) -> EnsemblePrediction {
        // rows[member][example] = prob row; convert to logits via ln(p)+C
        let logits: Vec<Tensor> = rows
            .iter()
            .map(|member| {
                let b = member.len();
                let c = member[0].len();
                let data: Vec<f32> = member
                    .iter()
                    .flat_map(|r| r.iter().map(|&p| (p.max(1e-30)).ln()))
                    .collect();
                Tensor::from_vec(&[b, c], data).unwrap()
            })
            .collect();
        EnsemblePrediction::from_member_logits(logits)
    }

    #[test]
    fn fusion_averages_probs() {
        let pred = pred_from_probs(&[
            vec![vec![1.0, 0.0]],
            vec![vec![0.0, 1.0]],
        ]);
        assert!((pred.fused_probs.data()[0] - 0.5).abs() < 1e-5);
        assert!((pred.fused_probs.data()[1] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn single_member_fusion_is_identity() {
        let pred = pred_from_probs(&[vec![vec![0.7, 0.2, 0.1]]]);
        for (f, m) in pred.fused_probs.data().iter().zip(pred.member_probs[0].data()) {
            assert!((f - m).abs() < 1e-6);
        }
    }

    #[test]
    fn fusion_is_linear_over_partitions() {
        // fuse(all) == weighted mean of fuse(part1), fuse(part2)
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let members: Vec<Tensor> = (0..6).map(|_| Tensor::randn(&[3, 4], &mut rng)).collect();
        let whole = EnsemblePrediction::from_member_logits(members.clone());
        let p1 = EnsemblePrediction::from_member_logits(members[..2].to_vec());
        let p2 = EnsemblePrediction::from_member_logits(members[2..].to_vec());
        for i in 0..12 {
            let mixed = (2.0 * p1.fused_probs.data()[i] + 4.0 * p2.fused_probs.data()[i]) / 6.0;
            assert!((whole.fused_probs.data()[i] - mixed).abs() < 1e-6);
        }
    }

    #[test]
    fn accuracy_cases() {
        let pred = pred_from_probs(&[vec![
            vec![0.9, 0.05, 0.05],
            vec![0.1, 0.8, 0.1],
        ]]);
        assert_eq!(accuracy(&pred, &[0, 1]), 1.0);
        assert_eq!(accuracy(&pred, &[1, 1]), 0.5);

        // uniform predictions tie-break to class 0
        let uniform = pred_from_probs(&[vec![vec![0.25; 4]; 8]]);
        let labels = [0u32, 1, 2, 3, 0, 1, 2, 3];
        assert_eq!(accuracy(&uniform, &labels), 0.25);
    }

    #[test]
    fn entropy_bounds_and_extremes() {
        let onehot = pred_from_probs(&[vec![vec![1.0, 0.0, 0.0]]]);
        assert!(predictive_entropy(&onehot)[0].abs() < 1e-6);

        let uniform = pred_from_probs(&[vec![vec![0.1; 10]]]);
        assert!((predictive_entropy(&uniform)[0] - 10.0f64.ln()).abs() < 1e-6);

        // ten members each one-hot on a different class fuse to uniform
        let members: Vec<Vec<Vec<f32>>> = (0..10)
            .map(|m| {
                let mut row = vec![0.0f32; 10];
                row[m] = 1.0;
                vec![row]
            })
            .collect();
        let pred = pred_from_probs(&members);
        assert!((predictive_entropy(&pred)[0] - 10.0f64.ln()).abs() < 1e-5);

        // bounds on arbitrary rows
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let logits = Tensor::randn(&[20, 7], &mut rng);
        let pred = EnsemblePrediction::from_member_logits(vec![logits]);
        for h in predictive_entropy(&pred) {
            assert!(h >= -1e-12 && h <= 7.0f64.ln() + 1e-9);
        }
    }

    #[test]
    fn ecdf_steps() {
        let e = entropy_ecdf(&[1.0, 1.0, 1.0]);
        assert_eq!(e.support, vec![1.0]);
        assert_eq!(e.heights, vec![1.0]);

        let e2 = entropy_ecdf(&[1.0, 0.0]);
        assert_eq!(e2.support, vec![0.0, 1.0]);
        assert_eq!(e2.heights, vec![0.5, 1.0]);
        assert_eq!(e2.at(-1.0), 0.0);
        assert_eq!(e2.at(0.5), 0.5);
        assert_eq!(e2.at(2.0), 1.0);

        // nondecreasing, reaches 1
        let e3 = entropy_ecdf(&[0.3, 0.1, 0.9, 0.3, 0.5]);
        for w in e3.heights.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert_eq!(*e3.heights.last().unwrap(), 1.0);
    }

    #[test]
    fn auroc_extremes_and_rank_equivalence() {
        assert_eq!(ood_auroc(&[0.1, 0.2], &[0.9, 0.8]), 1.0);
        assert_eq!(ood_auroc(&[0.5, 0.5], &[0.5, 0.5]), 0.5);

        let mut rng = ChaCha20Rng::seed_from_u64(33);
        use rand::Rng;
        let inlier: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let outlier: Vec<f64> = (0..150).map(|_| rng.gen_range(0.3..1.3)).collect();
        let a = ood_auroc(&inlier, &outlier);
        let b = ood_auroc_rank(&inlier, &outlier);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn diversity_of_identical_members_is_zero() {
        let arch = crate::nets::ArchSpec::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let p = crate::nets::ParamSet::init(&arch, &mut rng);
        let report = diversity_stats(&[p.clone(), p.clone(), p]);
        for layer in &report.layers {
            assert_eq!(layer.cv, 0.0);
            assert!(layer.mean > 0.0);
        }
    }

    #[test]
    fn diversity_is_order_invariant() {
        let arch = crate::nets::ArchSpec::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let pop: Vec<_> = (0..5).map(|_| crate::nets::ParamSet::init(&arch, &mut rng)).collect();
        let fwd = diversity_stats(&pop);
        let mut rev = pop.clone();
        rev.reverse();
        let bwd = diversity_stats(&rev);
        for (a, b) in fwd.layers.iter().zip(&bwd.layers) {
            assert!((a.cv - b.cv).abs() < 1e-12);
        }
    }

    #[test]
    fn latent_normality_zero_mixer_and_degenerate_n() {
        let arch = crate::nets::ArchSpec::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(36);
        let mut model =
            HyperGanModel::init(HyperGanConfig::tiny(), &arch, &mut rng).unwrap();
        // zero the mixer output layer: codes collapse to exactly zero
        let mixer: &mut Mlp = model.mixer.as_mut().unwrap();
        let last = mixer.weights.len() - 1;
        mixer.weights[last] = Tensor::zeros(mixer.weights[last].shape());
        mixer.biases[last] = Tensor::zeros(mixer.biases[last].shape());
        let stats = latent_normality(&model, 100, &mut rng).unwrap();
        for (mean, std) in stats {
            assert_eq!(mean, 0.0);
            assert_eq!(std.unwrap(), 0.0);
        }
        // n = 1: std undefined
        let stats = latent_normality(&model, 1, &mut rng).unwrap();
        assert!(stats.iter().all(|(_, s)| s.is_none()));
    }
}
