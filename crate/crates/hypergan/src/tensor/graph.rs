//! Reverse-mode differentiation over recorded tensor ops.
//!
//! A [`Graph`] records every operation applied through it. `backward`
//! consumes the graph (a second call is an error) and leaves gradients on
//! each node that transitively required them.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use super::kernels::{col2im_from, im2col_into, mm_nn, mm_nt, mm_nt_acc, mm_tn, sigmoid, softplus};

/// Images per shared im2col buffer, sized to keep the patch matrix
/// within L2 (the matmul streams it once per 4-row block).
fn conv_chunk(ckk: usize, ohow: usize, batch: usize) -> usize {
    let target: usize = std::env::var("HG_CONV_CHUNK_KB")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(384)
        << 10;
    (target / (ckk * ohow * 4)).clamp(1, batch.max(1))
}
use super::{Result, Tensor, TensorError};

/// Handle to one node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(pub(crate) usize);

pub(crate) struct Node {
    pub(crate) tensor: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<f32>>,
}

pub(crate) enum Op {
    Leaf,
    Matmul { a: Value, b: Value },
    Conv2d { x: Value, w: Value, bias: Value },
    MaxPool2d { x: Value, argmax: Vec<u32> },
    Crop2d { x: Value },
    LeakyRelu { x: Value, slope: f32 },
    Add { a: Value, b: Value },
    AddRow { a: Value, row: Value },
    Scale { x: Value, c: f32 },
    Reshape { x: Value },
    SliceCols { x: Value, start: usize },
    Mul { a: Value, b: Value },
    SoftmaxCrossEntropy { logits: Value, labels: Arc<Vec<u32>>, probs: Tensor },
    Mse { pred: Value, target: Value },
    BceLogitPair { real: Value, fake: Value },
    BceTowardOne { scores: Value },
    SumAll { x: Value },
}

/// Single-threaded op tape. Create one per forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Insert a tensor as a graph leaf.
    pub fn leaf(&self, tensor: Tensor, requires_grad: bool) -> Value {
        self.push(Node {
            tensor,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        })
    }

    /// Leaf that will not receive a gradient.
    pub fn constant(&self, tensor: Tensor) -> Value {
        self.leaf(tensor, false)
    }

    /// Leaf that participates in backward.
    pub fn param(&self, tensor: Tensor) -> Value {
        self.leaf(tensor, true)
    }

    fn push(&self, node: Node) -> Value {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Value(nodes.len() - 1)
    }

    fn push_op(&self, tensor: Tensor, op: Op, inputs: &[Value]) -> Value {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        self.push(Node {
            tensor,
            op,
            requires_grad,
            grad: None,
        })
    }

    pub fn tensor(&self, v: Value) -> Tensor {
        self.nodes.borrow()[v.0].tensor.clone()
    }

    pub fn shape(&self, v: Value) -> Vec<usize> {
        self.nodes.borrow()[v.0].tensor.shape().to_vec()
    }

    /// Gradient left on `v` by `backward`, if any.
    pub fn grad(&self, v: Value) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_vec(node.tensor.shape(), g.clone()).expect("grad shape"))
    }

    /// Like [`Graph::grad`] but moves the buffer out instead of copying;
    /// subsequent reads of this node's grad return nothing.
    pub fn take_grad(&self, v: Value) -> Option<Tensor> {
        let mut nodes = self.nodes.borrow_mut();
        let node = &mut nodes[v.0];
        let shape = node.tensor.shape().to_vec();
        node.grad
            .take()
            .map(|g| Tensor::from_vec(&shape, g).expect("grad shape"))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub(crate) fn with_nodes<T>(&self, f: impl FnOnce(&[Node]) -> T) -> T {
        f(&self.nodes.borrow())
    }

    // ── ops ──────────────────────────────────────────────────────────

    /// C[m,n] = A[m,k] * B[k,n]
    pub fn matmul(&self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = mm_nn(ta.data(), tb.data(), m, k, n);
        let tensor = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push_op(tensor, Op::Matmul { a, b }, &[a, b]))
    }

    /// Valid cross-correlation, stride 1, with per-channel bias.
    pub fn conv2d(&self, x: Value, w: Value, bias: Value) -> Result<Value> {
        let (tx, tw, tb) = (self.tensor(x), self.tensor(w), self.tensor(bias));
        let (sx, sw) = (tx.shape().to_vec(), tw.shape().to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        let (b, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[0], sw[2]);
        if k > h || k > wd {
            return Err(TensorError::BadShape {
                op: "conv2d",
                expected: format!("kernel {k} to fit within spatial dims"),
                got: sx,
            });
        }
        if tb.shape() != [co] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: tb.shape().to_vec(),
                rhs: vec![co],
            });
        }
        let (oh, ow) = (h - k + 1, wd - k + 1);
        let ohow = oh * ow;
        let ckk = ci * k * k;
        let mut out = vec![0.0f32; b * co * ohow];
        let chunk = conv_chunk(ckk, ohow, b);
        let mut start = 0;
        while start < b {
            let imgs = (b - start).min(chunk);
            let width = imgs * ohow;
            let mut cols = vec![0.0f32; ckk * width];
            for local in 0..imgs {
                let img = start + local;
                im2col_into(
                    &tx.data()[img * ci * h * wd..(img + 1) * ci * h * wd],
                    ci,
                    h,
                    wd,
                    k,
                    &mut cols,
                    width,
                    local * ohow,
                );
            }
            let y = mm_nn(tw.data(), &cols, co, ckk, width);
            for local in 0..imgs {
                let img = start + local;
                for c in 0..co {
                    let bv = tb.data()[c];
                    let src = &y[c * width + local * ohow..c * width + (local + 1) * ohow];
                    let dst = &mut out[img * co * ohow + c * ohow..][..ohow];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s + bv;
                    }
                }
            }
            start += imgs;
        }
        let tensor = Tensor::from_vec(&[b, co, oh, ow], out)?;
        Ok(self.push_op(tensor, Op::Conv2d { x, w, bias }, &[x, w, bias]))
    }

    /// 2x2 max pooling, stride 2. Ties route the gradient to the first
    /// occurrence in row-major scan order. Odd spatial dims are an error.
    pub fn maxpool2d(&self, x: Value) -> Result<Value> {
        let tx = self.tensor(x);
        let sx = tx.shape().to_vec();
        if sx.len() != 4 {
            return Err(TensorError::BadShape {
                op: "maxpool2d",
                expected: "rank-4 input".into(),
                got: sx,
            });
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(TensorError::BadShape {
                op: "maxpool2d",
                expected: "even spatial dims".into(),
                got: sx,
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; b * c * oh * ow];
        let mut argmax = vec![0u32; b * c * oh * ow];
        let data = tx.data();
        for bc in 0..b * c {
            let base = bc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = base + (2 * oy) * w + 2 * ox;
                    let mut best = data[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                    out[bc * oh * ow + oy * ow + ox] = best;
                    argmax[bc * oh * ow + oy * ow + ox] = best_idx as u32;
                }
            }
        }
        let tensor = Tensor::from_vec(&[b, c, oh, ow], out)?;
        Ok(self.push_op(tensor, Op::MaxPool2d { x, argmax }, &[x]))
    }

    /// Keep the top-left `[new_h, new_w]` window of each spatial plane.
    pub fn crop2d(&self, x: Value, new_h: usize, new_w: usize) -> Result<Value> {
        let tx = self.tensor(x);
        let sx = tx.shape().to_vec();
        if sx.len() != 4 || new_h > sx[2] || new_w > sx[3] || new_h == 0 || new_w == 0 {
            return Err(TensorError::BadShape {
                op: "crop2d",
                expected: format!("crop [{new_h},{new_w}] within spatial dims"),
                got: sx,
            });
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if new_h == h && new_w == w {
            return Ok(x);
        }
        let mut out = vec![0.0f32; b * c * new_h * new_w];
        for bc in 0..b * c {
            for y in 0..new_h {
                let src = &tx.data()[bc * h * w + y * w..bc * h * w + y * w + new_w];
                out[bc * new_h * new_w + y * new_w..bc * new_h * new_w + (y + 1) * new_w]
                    .copy_from_slice(src);
            }
        }
        let tensor = Tensor::from_vec(&[b, c, new_h, new_w], out)?;
        Ok(self.push_op(tensor, Op::Crop2d { x }, &[x]))
    }

    /// max(x, slope*x) elementwise.
    pub fn leaky_relu(&self, x: Value, slope: f32) -> Value {
        let tx = self.tensor(x);
        // branchless; slope < 1 makes max(x, slope*x) the correct form
        let out: Vec<f32> = tx.data().iter().map(|&v| (slope * v).max(v)).collect();
        let tensor = Tensor::from_vec(tx.shape(), out).expect("same shape");
        self.push_op(tensor, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&self, x: Value) -> Value {
        self.leaky_relu(x, 0.0)
    }

    pub fn add(&self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f32> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let tensor = Tensor::from_vec(ta.shape(), out)?;
        Ok(self.push_op(tensor, Op::Add { a, b }, &[a, b]))
    }

    /// Broadcast a `[n]` row over every row of a `[m,n]` matrix.
    pub fn add_row(&self, a: Value, row: Value) -> Result<Value> {
        let (ta, tr) = (self.tensor(a), self.tensor(row));
        let sa = ta.shape().to_vec();
        if sa.len() != 2 || tr.shape() != [sa[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: sa,
                rhs: tr.shape().to_vec(),
            });
        }
        let (m, n) = (sa[0], sa[1]);
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = ta.data()[i * n + j] + tr.data()[j];
            }
        }
        let tensor = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push_op(tensor, Op::AddRow { a, row }, &[a, row]))
    }

    pub fn scale(&self, x: Value, c: f32) -> Value {
        let tx = self.tensor(x);
        let out: Vec<f32> = tx.data().iter().map(|&v| v * c).collect();
        let tensor = Tensor::from_vec(tx.shape(), out).expect("same shape");
        self.push_op(tensor, Op::Scale { x, c }, &[x])
    }

    pub fn reshape(&self, x: Value, shape: &[usize]) -> Result<Value> {
        let tx = self.tensor(x);
        let tensor = tx.reshaped(shape)?;
        Ok(self.push_op(tensor, Op::Reshape { x }, &[x]))
    }

    /// Columns `[start, end)` of a `[m,n]` matrix.
    pub fn slice_cols(&self, x: Value, start: usize, end: usize) -> Result<Value> {
        let tx = self.tensor(x);
        let sx = tx.shape().to_vec();
        if sx.len() != 2 || start >= end || end > sx[1] {
            return Err(TensorError::BadShape {
                op: "slice_cols",
                expected: format!("column range {start}..{end} within a matrix"),
                got: sx,
            });
        }
        let (m, n, w) = (sx[0], sx[1], end - start);
        let mut out = vec![0.0f32; m * w];
        for i in 0..m {
            out[i * w..(i + 1) * w].copy_from_slice(&tx.data()[i * n + start..i * n + end]);
        }
        let tensor = Tensor::from_vec(&[m, w], out)?;
        Ok(self.push_op(tensor, Op::SliceCols { x, start }, &[x]))
    }

    pub fn mul(&self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.tensor(a), self.tensor(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out: Vec<f32> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let tensor = Tensor::from_vec(ta.shape(), out)?;
        Ok(self.push_op(tensor, Op::Mul { a, b }, &[a, b]))
    }

    /// Mean over the batch of -log softmax(logits)[label], stabilized by
    /// row-max subtraction.
    pub fn softmax_cross_entropy(&self, logits: Value, labels: &[u32]) -> Result<Value> {
        let tl = self.tensor(logits);
        let sl = tl.shape().to_vec();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(TensorError::BadShape {
                op: "softmax_cross_entropy",
                expected: format!("[{} x C] logits", labels.len()),
                got: sl,
            });
        }
        let (b, c) = (sl[0], sl[1]);
        for &label in labels {
            if label as usize >= c {
                return Err(TensorError::LabelOutOfRange { label, classes: c });
            }
        }
        let mut probs = vec![0.0f32; b * c];
        let mut loss = 0.0f64;
        for i in 0..b {
            let row = &tl.data()[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let mut sum = 0.0f64;
            for &v in row {
                sum += (v as f64 - max).exp();
            }
            for (j, &v) in row.iter().enumerate() {
                probs[i * c + j] = ((v as f64 - max).exp() / sum) as f32;
            }
            loss += sum.ln() - (row[labels[i] as usize] as f64 - max);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(TensorError::NonFinite {
                op: "softmax_cross_entropy",
            });
        }
        let tensor = Tensor::scalar(loss as f32);
        let probs = Tensor::from_vec(&[b, c], probs)?;
        Ok(self.push_op(
            tensor,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: Arc::new(labels.to_vec()),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean of squared differences.
    pub fn mse(&self, pred: Value, target: Value) -> Result<Value> {
        let (tp, tt) = (self.tensor(pred), self.tensor(target));
        if tp.shape() != tt.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse",
                lhs: tp.shape().to_vec(),
                rhs: tt.shape().to_vec(),
            });
        }
        let n = tp.len() as f64;
        let mut loss = 0.0f64;
        for (&a, &b) in tp.data().iter().zip(tt.data()) {
            let d = a as f64 - b as f64;
            loss += d * d;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(TensorError::NonFinite { op: "mse" });
        }
        let tensor = Tensor::scalar(loss as f32);
        Ok(self.push_op(tensor, Op::Mse { pred, target }, &[pred, target]))
    }

    /// -(mean log sigmoid(real) + mean log(1 - sigmoid(fake))) in stable
    /// softplus form; the discriminator objective for one layer code.
    pub fn bce_logit_pair(&self, real: Value, fake: Value) -> Result<Value> {
        let (tr, tf) = (self.tensor(real), self.tensor(fake));
        let mut loss = 0.0f64;
        let mut s = 0.0f64;
        for &v in tr.data() {
            s += softplus(-(v as f64));
        }
        loss += s / tr.len() as f64;
        s = 0.0;
        for &v in tf.data() {
            s += softplus(v as f64);
        }
        loss += s / tf.len() as f64;
        if !loss.is_finite() {
            return Err(TensorError::NonFinite { op: "bce_logit_pair" });
        }
        let tensor = Tensor::scalar(loss as f32);
        Ok(self.push_op(tensor, Op::BceLogitPair { real, fake }, &[real, fake]))
    }

    /// -mean log sigmoid(scores): nonsaturating generator-side loss pushing
    /// scores toward "real".
    pub fn bce_toward_one(&self, scores: Value) -> Result<Value> {
        let ts = self.tensor(scores);
        let mut loss = 0.0f64;
        for &v in ts.data() {
            loss += softplus(-(v as f64));
        }
        loss /= ts.len() as f64;
        if !loss.is_finite() {
            return Err(TensorError::NonFinite { op: "bce_toward_one" });
        }
        let tensor = Tensor::scalar(loss as f32);
        Ok(self.push_op(tensor, Op::BceTowardOne { scores }, &[scores]))
    }

    pub fn sum_all(&self, x: Value) -> Value {
        let tx = self.tensor(x);
        let s: f64 = tx.data().iter().map(|&v| v as f64).sum();
        self.push_op(Tensor::scalar(s as f32), Op::SumAll { x }, &[x])
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Chain rule in reverse creation order, seeded with dloss = 1.
    /// Consumes the graph: a second call is rejected.
    pub fn backward(&self, loss: Value) -> Result<()> {
        if self.consumed.get() {
            return Err(TensorError::GraphConsumed);
        }
        {
            let nodes = self.nodes.borrow();
            let t = &nodes[loss.0].tensor;
            if !t.is_scalar() {
                return Err(TensorError::NonScalarLoss {
                    shape: t.shape().to_vec(),
                });
            }
        }
        self.consumed.set(true);

        let mut nodes = self.nodes.borrow_mut();
        let n = nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad || grads[i].is_none() {
                continue;
            }
            let g = grads[i].take().expect("checked above");
            propagate(&nodes, i, &g, &mut grads);
            nodes[i].grad = Some(g);
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, contribution: &[f32]) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        None => *slot = Some(contribution.to_vec()),
    }
}

fn needs(nodes: &[Node], v: Value) -> bool {
    nodes[v.0].requires_grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_is_exact() {
        let g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let id = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let left = g.matmul(id, a).unwrap();
        let right = g.matmul(a, id).unwrap();
        assert_eq!(g.tensor(left).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.tensor(right).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 1], &[5.0, 6.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.tensor(c).data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn matmul_grad_matches_finite_differences() {
        // grad of sum(A*B) w.r.t. A at A=ones, B=I is ones
        let a = Tensor::filled(&[2, 2], 1.0);
        let err = finite_diff_check(
            |g, va| {
                let b = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
                let c = g.matmul(va, b)?;
                Ok(g.sum_all(c))
            },
            &a,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");

        let g = Graph::new();
        let va = g.param(Tensor::filled(&[2, 2], 1.0));
        let b = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = g.matmul(va, b).unwrap();
        let loss = g.sum_all(c);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(va).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn conv_all_ones_sums_window() {
        let g = Graph::new();
        let x = g.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let w = g.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.shape(y), vec![1, 1, 1, 1]);
        assert_eq!(g.tensor(y).data(), &[9.0]);
    }

    #[test]
    fn conv_mnist_shape_chain() {
        let g = Graph::new();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let x = g.constant(Tensor::randn(&[1, 1, 28, 28], &mut rng));
        let w = g.constant(Tensor::randn(&[32, 1, 5, 5], &mut rng));
        let b = g.constant(Tensor::zeros(&[32]));
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.shape(y), vec![1, 32, 24, 24]);
    }

    #[test]
    fn conv_channel_mismatch_is_error() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 8, 8]));
        let w = g.constant(Tensor::zeros(&[4, 3, 3, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        assert!(matches!(
            g.conv2d(x, w, b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv_grads_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = Tensor::randn(&[2, 2, 6, 6], &mut rng);
        let w0 = Tensor::randn(&[3, 2, 3, 3], &mut rng);
        let labels = vec![0u32, 2];

        // w.r.t. kernel
        let xc = x.clone();
        let err_w = finite_diff_check(
            |g, vw| {
                let vx = g.constant(xc.clone());
                let vb = g.constant(Tensor::zeros(&[3]));
                let y = g.conv2d(vx, vw, vb)?;
                let p = g.maxpool2d(y)?;
                let flat = g.reshape(p, &[2, 3 * 2 * 2])?;
                g.softmax_cross_entropy(flat, &labels)
            },
            &w0,
            1e-3,
        )
        .unwrap();
        assert!(err_w < 1e-4, "kernel rel err {err_w}");

        // w.r.t. input
        let wc = w0.clone();
        let err_x = finite_diff_check(
            |g, vx| {
                let vw = g.constant(wc.clone());
                let vb = g.constant(Tensor::zeros(&[3]));
                let y = g.conv2d(vx, vw, vb)?;
                Ok(g.sum_all(y))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err_x < 1e-4, "input rel err {err_x}");
    }

    #[test]
    fn maxpool_basics() {
        let g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2d(x).unwrap();
        assert_eq!(g.tensor(y).data(), &[4.0]);

        let odd = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(g.maxpool2d(odd).is_err());

        let g2 = Graph::new();
        let x2 = g2.constant(Tensor::zeros(&[1, 32, 24, 24]));
        let y2 = g2.maxpool2d(x2).unwrap();
        assert_eq!(g2.shape(y2), vec![1, 32, 12, 12]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_occurrence() {
        let g = Graph::new();
        let x = g.param(Tensor::filled(&[1, 1, 2, 2], 5.0));
        let y = g.maxpool2d(x).unwrap();
        assert_eq!(g.tensor(y).data(), &[5.0]);
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn leaky_relu_values() {
        let g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, -1.0, 3.0]));
        let y = g.leaky_relu(x, 0.2);
        assert_eq!(g.tensor(y).data(), &[0.0, -0.2, 3.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_stabilized() {
        let g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 10]));
        let l = g.softmax_cross_entropy(logits, &[3]).unwrap();
        assert!((g.tensor(l).item() - 10.0f32.ln()).abs() < 1e-6);

        let mut big = vec![0.0f32; 10];
        big[7] = 1000.0;
        let logits2 = g.constant(t(&[1, 10], &big));
        let l2 = g.softmax_cross_entropy(logits2, &[7]).unwrap();
        let v = g.tensor(l2).item();
        assert!(v.is_finite() && v.abs() < 1e-4, "loss {v}");
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 10]));
        assert!(matches!(
            g.softmax_cross_entropy(logits, &[10]),
            Err(TensorError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn cross_entropy_grad_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let logits = Tensor::randn(&[4, 5], &mut rng);
        let err = finite_diff_check(
            |g, v| g.softmax_cross_entropy(v, &[0, 1, 2, 3]),
            &logits,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn mse_values_and_grad() {
        let g = Graph::new();
        let p = g.constant(t(&[1, 1], &[0.0]));
        let y = g.constant(t(&[1, 1], &[3.0]));
        let l = g.mse(p, y).unwrap();
        assert_eq!(g.tensor(l).item(), 9.0);

        let same = g.mse(y, y).unwrap();
        assert_eq!(g.tensor(same).item(), 0.0);

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let pred = Tensor::randn(&[4, 1], &mut rng);
        let target = Tensor::randn(&[4, 1], &mut rng);
        let err = finite_diff_check(
            |g, v| {
                let vt = g.constant(target.clone());
                g.mse(v, vt)
            },
            &pred,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn bce_logit_pair_values() {
        let two_ln2 = 2.0 * std::f32::consts::LN_2;
        let g = Graph::new();
        let zero = g.constant(t(&[1, 1], &[0.0]));
        let l = g.bce_logit_pair(zero, zero).unwrap();
        assert!((g.tensor(l).item() - two_ln2).abs() < 1e-6);

        // perfect discriminator: strongly positive on real, negative on fake
        let hi = g.constant(t(&[1, 1], &[60.0]));
        let lo = g.constant(t(&[1, 1], &[-60.0]));
        let l2 = g.bce_logit_pair(hi, lo).unwrap();
        assert!(g.tensor(l2).item().abs() < 1e-6);

        // three codes at zero, summed as in the layerwise objective
        let mut total = g.bce_logit_pair(zero, zero).unwrap();
        for _ in 0..2 {
            let term = g.bce_logit_pair(zero, zero).unwrap();
            total = g.add(total, term).unwrap();
        }
        assert!((g.tensor(total).item() - 3.0 * two_ln2).abs() < 1e-5);
    }

    #[test]
    fn bce_grads_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let scores = Tensor::randn(&[6, 1], &mut rng);
        let err = finite_diff_check(
            |g, v| {
                let fake = g.constant(Tensor::filled(&[6, 1], 0.3));
                g.bce_logit_pair(v, fake)
            },
            &scores,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4);
        let err2 = finite_diff_check(|g, v| g.bce_toward_one(v), &scores, 1e-3).unwrap();
        assert!(err2 < 1e-4);
    }

    #[test]
    fn backward_of_sum_is_ones_and_detached_gets_none() {
        let g = Graph::new();
        let x = g.param(t(&[3], &[5.0, -1.0, 2.0]));
        let detached = g.constant(t(&[3], &[1.0, 1.0, 1.0]));
        let both = g.add(x, detached).unwrap();
        let loss = g.sum_all(both);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert!(g.grad(detached).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_double_call() {
        let g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.scale(x, 2.0);
        assert!(matches!(
            g.backward(y),
            Err(TensorError::NonScalarLoss { .. })
        ));
        let loss = g.sum_all(y);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(TensorError::GraphConsumed)));
    }

    #[test]
    fn composite_mlp_grad_matches_finite_differences() {
        // f(x) = mse(leaky_relu(x*W), y)
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Tensor::randn(&[3, 4], &mut rng);
        let w = Tensor::randn(&[4, 2], &mut rng);
        let y = Tensor::randn(&[3, 2], &mut rng);
        let err = finite_diff_check(
            |g, vx| {
                let vw = g.constant(w.clone());
                let vy = g.constant(y.clone());
                let h = g.matmul(vx, vw)?;
                let a = g.leaky_relu(h, 0.2);
                g.mse(a, vy)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn fan_out_accumulates_gradients() {
        // x used twice: loss = sum(x + x) -> grad 2 everywhere
        let g = Graph::new();
        let x = g.param(t(&[2], &[1.0, -3.0]));
        let s = g.add(x, x).unwrap();
        let loss = g.sum_all(s);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn slice_cols_and_crop_backward() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x = Tensor::randn(&[3, 6], &mut rng);
        let err = finite_diff_check(
            |g, vx| {
                let s = g.slice_cols(vx, 2, 5)?;
                Ok(g.sum_all(s))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4);

        let img = Tensor::randn(&[1, 2, 5, 5], &mut rng);
        let err2 = finite_diff_check(
            |g, vx| {
                let c = g.crop2d(vx, 4, 4)?;
                let p = g.maxpool2d(c)?;
                Ok(g.sum_all(p))
            },
            &img,
            1e-4,
        )
        .unwrap();
        assert!(err2 < 1e-4);
    }
}

fn propagate(nodes: &[Node], i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let (ta, tb) = (&nodes[a.0].tensor, &nodes[b.0].tensor);
            let (m, k) = (ta.shape()[0], ta.shape()[1]);
            let n = tb.shape()[1];
            if needs(nodes, *a) {
                let da = mm_nt(g, tb.data(), m, n, k);
                accumulate(&mut grads[a.0], &da);
            }
            if needs(nodes, *b) {
                let db = mm_tn(ta.data(), g, m, k, n);
                accumulate(&mut grads[b.0], &db);
            }
        }
        Op::Conv2d { x, w, bias } => {
            let (tx, tw) = (&nodes[x.0].tensor, &nodes[w.0].tensor);
            let (b, ci, h, wd) = (
                tx.shape()[0],
                tx.shape()[1],
                tx.shape()[2],
                tx.shape()[3],
            );
            let (co, k) = (tw.shape()[0], tw.shape()[2]);
            let (oh, ow) = (h - k + 1, wd - k + 1);
            let ohow = oh * ow;
            let ckk = ci * k * k;
            let need_x = needs(nodes, *x);
            let need_w = needs(nodes, *w);
            let need_b = needs(nodes, *bias);
            let mut dw_acc = if need_w { vec![0.0f64; co * ckk] } else { vec![] };
            let mut db_acc = if need_b { vec![0.0f64; co] } else { vec![] };
            let mut dx = if need_x { vec![0.0f32; b * ci * h * wd] } else { vec![] };
            let chunk = conv_chunk(ckk, ohow, b);
            let mut start = 0;
            while start < b {
                let imgs = (b - start).min(chunk);
                let width = imgs * ohow;
                // upstream grad rearranged to [co, width] so every matmul
                // sees long rows
                let mut gyt = vec![0.0f32; co * width];
                for local in 0..imgs {
                    let img = start + local;
                    for c in 0..co {
                        gyt[c * width + local * ohow..c * width + (local + 1) * ohow]
                            .copy_from_slice(&g[img * co * ohow + c * ohow..][..ohow]);
                    }
                }
                if need_w || need_x {
                    let mut cols = vec![0.0f32; ckk * width];
                    for local in 0..imgs {
                        let img = start + local;
                        im2col_into(
                            &tx.data()[img * ci * h * wd..(img + 1) * ci * h * wd],
                            ci,
                            h,
                            wd,
                            k,
                            &mut cols,
                            width,
                            local * ohow,
                        );
                    }
                    if need_w {
                        mm_nt_acc(&mut dw_acc, &gyt, &cols, co, width, ckk);
                    }
                    if need_x {
                        let dcols = mm_tn(tw.data(), &gyt, co, ckk, width);
                        for local in 0..imgs {
                            let img = start + local;
                            col2im_from(
                                &dcols,
                                ci,
                                h,
                                wd,
                                k,
                                &mut dx[img * ci * h * wd..(img + 1) * ci * h * wd],
                                width,
                                local * ohow,
                            );
                        }
                    }
                }
                if need_b {
                    for c in 0..co {
                        let mut s = 0.0f64;
                        for &v in &gyt[c * width..(c + 1) * width] {
                            s += v as f64;
                        }
                        db_acc[c] += s;
                    }
                }
                start += imgs;
            }
            if need_w {
                let dw: Vec<f32> = dw_acc.iter().map(|&v| v as f32).collect();
                accumulate(&mut grads[w.0], &dw);
            }
            if need_b {
                let db: Vec<f32> = db_acc.iter().map(|&v| v as f32).collect();
                accumulate(&mut grads[bias.0], &db);
            }
            if need_x {
                accumulate(&mut grads[x.0], &dx);
            }
        }
        Op::MaxPool2d { x, argmax } => {
            if needs(nodes, *x) {
                let mut dx = vec![0.0f32; nodes[x.0].tensor.len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src as usize] += g[o];
                }
                accumulate(&mut grads[x.0], &dx);
            }
        }
        Op::Crop2d { x } => {
            if needs(nodes, *x) {
                let tx = &nodes[x.0].tensor;
                let (b, c, h, w) = (
                    tx.shape()[0],
                    tx.shape()[1],
                    tx.shape()[2],
                    tx.shape()[3],
                );
                let out_shape = nodes[i].tensor.shape();
                let (nh, nw) = (out_shape[2], out_shape[3]);
                let mut dx = vec![0.0f32; tx.len()];
                for bc in 0..b * c {
                    for y in 0..nh {
                        let src = &g[bc * nh * nw + y * nw..bc * nh * nw + (y + 1) * nw];
                        dx[bc * h * w + y * w..bc * h * w + y * w + nw].copy_from_slice(src);
                    }
                }
                accumulate(&mut grads[x.0], &dx);
            }
        }
        Op::LeakyRelu { x, slope } => {
            if needs(nodes, *x) {
                let tx = &nodes[x.0].tensor;
                let dx: Vec<f32> = tx
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v >= 0.0 { gv } else { slope * gv })
                    .collect();
                accumulate(&mut grads[x.0], &dx);
            }
        }
        Op::Add { a, b } => {
            if needs(nodes, *a) {
                accumulate(&mut grads[a.0], g);
            }
            if needs(nodes, *b) {
                accumulate(&mut grads[b.0], g);
            }
        }
        Op::AddRow { a, row } => {
            if needs(nodes, *a) {
                accumulate(&mut grads[a.0], g);
            }
            if needs(nodes, *row) {
                let n = nodes[row.0].tensor.len();
                let m = g.len() / n;
                let mut acc = vec![0.0f64; n];
                for i in 0..m {
                    for j in 0..n {
                        acc[j] += g[i * n + j] as f64;
                    }
                }
                let dr: Vec<f32> = acc.iter().map(|&v| v as f32).collect();
                accumulate(&mut grads[row.0], &dr);
            }
        }
        Op::Scale { x, c } => {
            if needs(nodes, *x) {
                let dx: Vec<f32> = g.iter().map(|&v| v * c).collect();
                accumulate(&mut grads[x.0], &dx);
            }
        }
        Op::Reshape { x } => {
            if needs(nodes, *x) {
                accumulate(&mut grads[x.0], g);
            }
        }
        Op::SliceCols { x, start } => {
            if needs(nodes, *x) {
                let tx = &nodes[x.0].tensor;
                let (m, n) = (tx.shape()[0], tx.shape()[1]);
                let w = nodes[i].tensor.shape()[1];
                let mut dx = vec![0.0f32; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                accumulate(&mut grads[x.0], &dx);
            }
        }
        Op::Mul { a, b } => {
            let (ta, tb) = (&nodes[a.0].tensor, &nodes[b.0].tensor);
            if needs(nodes, *a) {
                let da: Vec<f32> = g.iter().zip(tb.data()).map(|(&gv, &bv)| gv * bv).collect();
                accumulate(&mut grads[a.0], &da);
            }
            if needs(nodes, *b) {
                let db: Vec<f32> = g.iter().zip(ta.data()).map(|(&gv, &av)| gv * av).collect();
                accumulate(&mut grads[b.0], &db);
            }
        }
        Op::SoftmaxCrossEntropy { logits, labels, probs } => {
            if needs(nodes, *logits) {
                let gs = g[0];
                let (b, c) = (probs.shape()[0], probs.shape()[1]);
                let mut dl = vec![0.0f32; b * c];
                let inv_b = 1.0 / b as f32;
                for r in 0..b {
                    for j in 0..c {
                        let onehot = if labels[r] as usize == j { 1.0 } else { 0.0 };
                        dl[r * c + j] = gs * (probs.data()[r * c + j] - onehot) * inv_b;
                    }
                }
                accumulate(&mut grads[logits.0], &dl);
            }
        }
        Op::Mse { pred, target } => {
            let (tp, tt) = (&nodes[pred.0].tensor, &nodes[target.0].tensor);
            let n = tp.len() as f32;
            let gs = g[0];
            if needs(nodes, *pred) {
                let dp: Vec<f32> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .map(|(&a, &b)| gs * 2.0 * (a - b) / n)
                    .collect();
                accumulate(&mut grads[pred.0], &dp);
            }
            if needs(nodes, *target) {
                let dt: Vec<f32> = tp
                    .data()
                    .iter()
                    .zip(tt.data())
                    .map(|(&a, &b)| -gs * 2.0 * (a - b) / n)
                    .collect();
                accumulate(&mut grads[target.0], &dt);
            }
        }
        Op::BceLogitPair { real, fake } => {
            let gs = g[0] as f64;
            if needs(nodes, *real) {
                let tr = &nodes[real.0].tensor;
                let n = tr.len() as f64;
                let dr: Vec<f32> = tr
                    .data()
                    .iter()
                    .map(|&v| (-(sigmoid(-(v as f64))) * gs / n) as f32)
                    .collect();
                accumulate(&mut grads[real.0], &dr);
            }
            if needs(nodes, *fake) {
                let tf = &nodes[fake.0].tensor;
                let n = tf.len() as f64;
                let df: Vec<f32> = tf
                    .data()
                    .iter()
                    .map(|&v| (sigmoid(v as f64) * gs / n) as f32)
                    .collect();
                accumulate(&mut grads[fake.0], &df);
            }
        }
        Op::BceTowardOne { scores } => {
            if needs(nodes, *scores) {
                let ts = &nodes[scores.0].tensor;
                let gs = g[0] as f64;
                let n = ts.len() as f64;
                let ds: Vec<f32> = ts
                    .data()
                    .iter()
                    .map(|&v| (-(sigmoid(-(v as f64))) * gs / n) as f32)
                    .collect();
                accumulate(&mut grads[scores.0], &ds);
            }
        }
        Op::SumAll { x } => {
            if needs(nodes, *x) {
                let dx = vec![g[0]; nodes[x.0].tensor.len()];
                accumulate(&mut grads[x.0], &dx);
            }
        }
    }
}
