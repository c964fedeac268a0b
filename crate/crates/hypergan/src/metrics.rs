//! CSV and raw-value emission for experiment logs. Files are written
//! atomically; CSVs carry a versioned schema comment on the first line
//! and always use '.' decimals.

use std::path::Path;

use crate::checkpoint::{atomic_write, CheckpointError};
use crate::eval::Ecdf;
use crate::train::MetricsRow;

pub type Result<T> = std::result::Result<T, CheckpointError>;

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// `metrics.csv`: one row per eval interval.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let layers = rows.first().map_or(0, |r| r.diversity_cv.len());
    let mut out = String::from("# schema: hypergan-metrics/v1\n");
    out.push_str("step,task_loss,adv_d,adv_g,val_acc");
    for i in 0..layers {
        out.push_str(&format!(",diversity_cv_layer_{}", i + 1));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.step,
            fmt(r.task_loss),
            fmt(r.adv_d),
            fmt(r.adv_g),
            fmt(r.val_acc)
        ));
        for cv in &r.diversity_cv {
            out.push(',');
            out.push_str(&fmt(*cv));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Raw per-example values, one float per line (no header: line count ==
/// example count).
pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&fmt(*v));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_ecdf_csv(path: &Path, ecdf: &Ecdf) -> Result<()> {
    let mut out = String::from("# schema: hypergan-ecdf/v1\nvalue,cdf\n");
    for (v, h) in ecdf.support.iter().zip(&ecdf.heights) {
        out.push_str(&format!("{},{}\n", fmt(*v), fmt(*h)));
    }
    atomic_write(path, out.as_bytes())
}

/// Accuracy table rows for the eval subcommand.
pub struct EvalRow {
    pub method: String,
    pub members: usize,
    pub acc_mean: f64,
    pub acc_std: f64,
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out = String::from("# schema: hypergan-eval/v1\nmethod,members,acc_mean,acc_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.method,
            r.members,
            fmt(r.acc_mean),
            fmt(r.acc_std)
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// One attack-sweep row per epsilon.
pub struct AttackRow {
    pub eps: f32,
    pub kind: String,
    pub clean_entropy_mean: f64,
    pub adv_entropy_mean: f64,
    pub adv_accuracy: f64,
    pub attacked_fooled_fraction: f64,
    pub transfer_fooling_mean: f64,
}

pub fn write_attack_csv(path: &Path, rows: &[AttackRow]) -> Result<()> {
    let mut out = String::from(
        "# schema: hypergan-attack/v1\neps,kind,clean_entropy_mean,adv_entropy_mean,adv_accuracy,attacked_fooled_fraction,transfer_fooling_mean\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.eps,
            r.kind,
            fmt(r.clean_entropy_mean),
            fmt(r.adv_entropy_mean),
            fmt(r.adv_accuracy),
            fmt(r.attacked_fooled_fraction),
            fmt(r.transfer_fooling_mean)
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Ablation comparison rows: one per (variant, eval step).
pub struct AblateRow {
    pub variant: String,
    pub step: u64,
    pub val_acc: f64,
    pub diversity_cv: Vec<f64>,
}

pub fn write_ablate_csv(path: &Path, rows: &[AblateRow]) -> Result<()> {
    let layers = rows.first().map_or(0, |r| r.diversity_cv.len());
    let mut out = String::from("# schema: hypergan-ablate/v1\nvariant,step,val_acc");
    for i in 0..layers {
        out.push_str(&format!(",diversity_cv_layer_{}", i + 1));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}", r.variant, r.step, fmt(r.val_acc)));
        for cv in &r.diversity_cv {
            out.push(',');
            out.push_str(&fmt(*cv));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Regression band rows over the evaluation grid.
pub struct BandRow {
    pub x: f64,
    pub mean10: f64,
    pub std10: f64,
    pub mean100: f64,
    pub std100: f64,
}

pub fn write_band_csv(path: &Path, rows: &[BandRow]) -> Result<()> {
    let mut out = String::from("# schema: hypergan-regress1d/v1\nx,mean10,std10,mean100,std100\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(r.x),
            fmt(r.mean10),
            fmt(r.std10),
            fmt(r.mean100),
            fmt(r.std100)
        ));
    }
    atomic_write(path, out.as_bytes())
}
