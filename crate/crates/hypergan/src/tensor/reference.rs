//! Plain f64 re-evaluation of a recorded graph.
//!
//! Used by the finite-difference checker: perturbing a leaf and replaying
//! the tape at full double precision gives difference quotients that are not
//! drowned by f32 storage rounding. The loops here are deliberately naive
//! and share no code with the f32 kernels.

use std::collections::HashMap;

use super::graph::{Graph, Op, Value};

/// Replay the graph up to `target` in f64, with `overrides` substituting
/// leaf data. Returns the value of `target` (which must be scalar-sized for
/// the gradcheck use, though any node can be evaluated).
pub(crate) fn eval_f64(
    graph: &Graph,
    target: Value,
    overrides: &HashMap<Value, Vec<f64>>,
) -> Vec<f64> {
    graph.with_nodes(|nodes| {
        let mut vals: Vec<Option<Vec<f64>>> = vec![None; target.0 + 1];
        for i in 0..=target.0 {
            let node = &nodes[i];
            let out: Vec<f64> = match &node.op {
                Op::Leaf => match overrides.get(&Value(i)) {
                    Some(v) => v.clone(),
                    None => node.tensor.data().iter().map(|&v| v as f64).collect(),
                },
                Op::Matmul { a, b } => {
                    let (ta, tb) = (&nodes[a.0].tensor, &nodes[b.0].tensor);
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    let (va, vb) = (get(&vals, *a), get(&vals, *b));
                    let mut out = vec![0.0f64; m * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = va[i * k + p];
                            for j in 0..n {
                                out[i * n + j] += av * vb[p * n + j];
                            }
                        }
                    }
                    out
                }
                Op::Conv2d { x, w, bias } => {
                    let (tx, tw) = (&nodes[x.0].tensor, &nodes[w.0].tensor);
                    let (b, ci, h, wd) =
                        (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
                    let (co, k) = (tw.shape()[0], tw.shape()[2]);
                    let (oh, ow) = (h - k + 1, wd - k + 1);
                    let (vx, vw, vb) = (get(&vals, *x), get(&vals, *w), get(&vals, *bias));
                    let mut out = vec![0.0f64; b * co * oh * ow];
                    for img in 0..b {
                        for c in 0..co {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut s = vb[c];
                                    for cc in 0..ci {
                                        for kh in 0..k {
                                            for kw in 0..k {
                                                let xi = img * ci * h * wd
                                                    + cc * h * wd
                                                    + (oy + kh) * wd
                                                    + (ox + kw);
                                                let wi = c * ci * k * k + cc * k * k + kh * k + kw;
                                                s += vx[xi] * vw[wi];
                                            }
                                        }
                                    }
                                    out[img * co * oh * ow + c * oh * ow + oy * ow + ox] = s;
                                }
                            }
                        }
                    }
                    out
                }
                Op::MaxPool2d { x, .. } => {
                    let tx = &nodes[x.0].tensor;
                    let (b, c, h, w) =
                        (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
                    let (oh, ow) = (h / 2, w / 2);
                    let vx = get(&vals, *x);
                    let mut out = vec![0.0f64; b * c * oh * ow];
                    for bc in 0..b * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let v = vx[bc * h * w + (2 * oy + dy) * w + 2 * ox + dx];
                                        if v > best {
                                            best = v;
                                        }
                                    }
                                }
                                out[bc * oh * ow + oy * ow + ox] = best;
                            }
                        }
                    }
                    out
                }
                Op::Crop2d { x } => {
                    let tx = &nodes[x.0].tensor;
                    let (b, c, h, w) =
                        (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
                    let os = node.tensor.shape();
                    let (nh, nw) = (os[2], os[3]);
                    let vx = get(&vals, *x);
                    let mut out = vec![0.0f64; b * c * nh * nw];
                    for bc in 0..b * c {
                        for y in 0..nh {
                            for xw in 0..nw {
                                out[bc * nh * nw + y * nw + xw] = vx[bc * h * w + y * w + xw];
                            }
                        }
                    }
                    out
                }
                Op::LeakyRelu { x, slope } => get(&vals, *x)
                    .iter()
                    .map(|&v| if v >= 0.0 { v } else { *slope as f64 * v })
                    .collect(),
                Op::Add { a, b } => get(&vals, *a)
                    .iter()
                    .zip(get(&vals, *b))
                    .map(|(x, y)| x + y)
                    .collect(),
                Op::AddRow { a, row } => {
                    let (va, vr) = (get(&vals, *a), get(&vals, *row));
                    let n = vr.len();
                    va.iter().enumerate().map(|(i, &v)| v + vr[i % n]).collect()
                }
                Op::Scale { x, c } => get(&vals, *x).iter().map(|&v| v * *c as f64).collect(),
                Op::Reshape { x } => get(&vals, *x).clone(),
                Op::SliceCols { x, start } => {
                    let tx = &nodes[x.0].tensor;
                    let (m, n) = (tx.shape()[0], tx.shape()[1]);
                    let w = node.tensor.shape()[1];
                    let vx = get(&vals, *x);
                    let mut out = vec![0.0f64; m * w];
                    for r in 0..m {
                        out[r * w..(r + 1) * w]
                            .copy_from_slice(&vx[r * n + start..r * n + start + w]);
                    }
                    out
                }
                Op::Mul { a, b } => get(&vals, *a)
                    .iter()
                    .zip(get(&vals, *b))
                    .map(|(x, y)| x * y)
                    .collect(),
                Op::SoftmaxCrossEntropy { logits, labels, .. } => {
                    let tl = &nodes[logits.0].tensor;
                    let (b, c) = (tl.shape()[0], tl.shape()[1]);
                    let vl = get(&vals, *logits);
                    let mut loss = 0.0f64;
                    for r in 0..b {
                        let row = &vl[r * c..(r + 1) * c];
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                        loss += sum.ln() - (row[labels[r] as usize] - max);
                    }
                    vec![loss / b as f64]
                }
                Op::Mse { pred, target } => {
                    let (vp, vt) = (get(&vals, *pred), get(&vals, *target));
                    let n = vp.len() as f64;
                    let s: f64 = vp.iter().zip(vt).map(|(a, b)| (a - b) * (a - b)).sum();
                    vec![s / n]
                }
                Op::BceLogitPair { real, fake } => {
                    let (vr, vf) = (get(&vals, *real), get(&vals, *fake));
                    let sr: f64 = vr.iter().map(|&v| softplus64(-v)).sum::<f64>() / vr.len() as f64;
                    let sf: f64 = vf.iter().map(|&v| softplus64(v)).sum::<f64>() / vf.len() as f64;
                    vec![sr + sf]
                }
                Op::BceTowardOne { scores } => {
                    let vs = get(&vals, *scores);
                    let s: f64 = vs.iter().map(|&v| softplus64(-v)).sum::<f64>() / vs.len() as f64;
                    vec![s]
                }
                Op::SumAll { x } => vec![get(&vals, *x).iter().sum()],
            };
            vals[i] = Some(out);
        }
        vals[target.0].take().expect("evaluated")
    })
}

fn get<'a>(vals: &'a [Option<Vec<f64>>], v: Value) -> &'a Vec<f64> {
    vals[v.0].as_ref().expect("topological order")
}

fn softplus64(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
