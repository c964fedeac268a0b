//! Central finite differences against the analytic backward pass.
//!
//! The numeric side replays the recorded graph in f64 (see `reference`), so
//! the comparison isolates backward-pass bugs instead of f32 rounding.

use std::collections::HashMap;

use super::graph::{Graph, Value};
use super::reference::eval_f64;
use super::{Result, Tensor};

/// Max relative error between analytic and central-difference gradients of
/// a scalar-valued function of `x`, probed at every coordinate.
///
/// `build` must construct the loss from the supplied leaf. Relative error
/// uses denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(build: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Graph, Value) -> Result<Value>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_check_coords(build, x, h, &coords)
}

/// Same as [`finite_diff_check`] but probing only the given coordinates of
/// `x`; use for large parameter tensors.
pub fn finite_diff_check_coords<F>(build: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&Graph, Value) -> Result<Value>,
{
    let graph = Graph::new();
    let vx = graph.param(x.clone());
    let loss = build(&graph, vx)?;
    graph.backward(loss)?;
    let analytic = graph.grad(vx);
    numeric_vs(&graph, vx, loss, analytic.as_ref(), x, h, coords)
}

/// Compare central differences against a *candidate* gradient instead of
/// the graph's own backward result. A deliberately corrupted candidate
/// must produce a large error; this is how the checker's sensitivity is
/// itself verified.
pub fn finite_diff_vs<F>(
    build: F,
    x: &Tensor,
    h: f64,
    candidate: &Tensor,
    coords: &[usize],
) -> Result<f64>
where
    F: Fn(&Graph, Value) -> Result<Value>,
{
    let graph = Graph::new();
    let vx = graph.param(x.clone());
    let loss = build(&graph, vx)?;
    numeric_vs(&graph, vx, loss, Some(candidate), x, h, coords)
}

fn numeric_vs(
    graph: &Graph,
    vx: Value,
    loss: Value,
    analytic: Option<&Tensor>,
    x: &Tensor,
    h: f64,
    coords: &[usize],
) -> Result<f64> {
    let base: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let mut max_rel = 0.0f64;
    for &c in coords {
        let mut plus = base.clone();
        plus[c] += h;
        let mut minus = base.clone();
        minus[c] -= h;
        let mut overrides = HashMap::new();
        overrides.insert(vx, plus);
        let fp = eval_f64(graph, loss, &overrides)[0];
        overrides.insert(vx, minus);
        let fm = eval_f64(graph, loss, &overrides)[0];
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.map_or(0.0, |t| t.data()[c] as f64);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
