//! Target architectures and their functional forward pass.
//!
//! Weights are not owned by the network: every forward takes an explicit
//! parameter assignment, so gradients can flow back into whatever produced
//! the parameters (a generator, an optimizer buffer, or an attack graph).

use rand::Rng;

use crate::tensor::{Graph, Result, Tensor, TensorError, Value};

/// Elementwise activation applied after a layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f32),
    Relu,
    None,
}

impl Activation {
    fn apply(&self, g: &Graph, v: Value) -> Value {
        match self {
            Activation::LeakyRelu(s) => g.leaky_relu(v, *s),
            Activation::Relu => g.relu(v),
            Activation::None => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// Valid stride-1 convolution, weight `[out, in, k, k]`.
    Conv { out_channels: usize, in_channels: usize, kernel: usize },
    /// Dense layer, weight `[inputs, outputs]`.
    Linear { inputs: usize, outputs: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    /// 2x2 max pool after the activation (conv layers only). Odd spatial
    /// dims are cropped to even before pooling.
    pub pool: bool,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv { out_channels, in_channels, kernel } => {
                vec![out_channels, in_channels, kernel, kernel]
            }
            LayerKind::Linear { inputs, outputs } => vec![inputs, outputs],
        }
    }

    pub fn bias_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv { out_channels, .. } => vec![out_channels],
            LayerKind::Linear { outputs, .. } => vec![outputs],
        }
    }

    pub fn weight_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn bias_count(&self) -> usize {
        self.bias_shape().iter().product()
    }

    /// Flattened weights plus biases: the width one generator must emit.
    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }
}

/// Declarative description of a target network. Layer-shape composition is
/// validated at construction, not at forward time.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub output_dim: usize,
}

impl ArchSpec {
    pub fn new(
        name: &str,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        output_dim: usize,
    ) -> Result<Self> {
        let spec = ArchSpec {
            name: name.to_string(),
            input_shape,
            layers,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Number of layers, and therefore of per-layer generators.
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Walk the shape chain and confirm adjacent layers compose; returns
    /// the flattened size feeding the first linear layer, if any.
    fn validate(&self) -> Result<()> {
        let mut flat: Option<usize> = None; // set once we leave conv land
        let mut spatial: Option<(usize, usize, usize)> = match self.input_shape.len() {
            3 => Some((self.input_shape[0], self.input_shape[1], self.input_shape[2])),
            1 => {
                flat = Some(self.input_shape[0]);
                None
            }
            _ => {
                return Err(TensorError::BadShape {
                    op: "arch",
                    expected: "input shape [c,h,w] or [n]".into(),
                    got: self.input_shape.clone(),
                })
            }
        };
        let mut last_out = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer.kind {
                LayerKind::Conv { out_channels, in_channels, kernel } => {
                    let (c, h, w) = spatial.ok_or_else(|| TensorError::BadShape {
                        op: "arch",
                        expected: format!("layer {i}: conv after flatten"),
                        got: self.input_shape.clone(),
                    })?;
                    if c != in_channels || kernel > h || kernel > w {
                        return Err(TensorError::BadShape {
                            op: "arch",
                            expected: format!(
                                "layer {i}: conv {in_channels}x{kernel}x{kernel} on {c}x{h}x{w}"
                            ),
                            got: vec![c, h, w],
                        });
                    }
                    let (mut nh, mut nw) = (h - kernel + 1, w - kernel + 1);
                    if layer.pool {
                        nh /= 2;
                        nw /= 2;
                    }
                    spatial = Some((out_channels, nh, nw));
                    last_out = out_channels * nh * nw;
                }
                LayerKind::Linear { inputs, outputs } => {
                    let feed = match (spatial.take(), flat) {
                        (Some((c, h, w)), _) => c * h * w,
                        (None, Some(f)) => f,
                        _ => unreachable!(),
                    };
                    if feed != inputs {
                        return Err(TensorError::BadShape {
                            op: "arch",
                            expected: format!("layer {i}: linear input {inputs}"),
                            got: vec![feed],
                        });
                    }
                    flat = Some(outputs);
                    last_out = outputs;
                }
            }
        }
        if last_out != self.output_dim {
            return Err(TensorError::BadShape {
                op: "arch",
                expected: format!("output dim {}", self.output_dim),
                got: vec![last_out],
            });
        }
        Ok(())
    }

    /// conv(32x1x5x5)+pool, conv(32x32x5x5)+pool, linear(512x10); leaky
    /// ReLU between. 28x28 grayscale in, 10 classes out.
    pub fn mnist() -> Self {
        let lr = Activation::LeakyRelu(0.2);
        ArchSpec::new(
            "mnist",
            vec![1, 28, 28],
            vec![
                LayerSpec {
                    kind: LayerKind::Conv { out_channels: 32, in_channels: 1, kernel: 5 },
                    activation: lr,
                    pool: true,
                },
                LayerSpec {
                    kind: LayerKind::Conv { out_channels: 32, in_channels: 32, kernel: 5 },
                    activation: lr,
                    pool: true,
                },
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 512, outputs: 10 },
                    activation: Activation::None,
                    pool: false,
                },
            ],
            10,
        )
        .expect("static arch")
    }

    /// Three 3x3 conv+pool stages (16, 32, 64 channels) then 256-128-10
    /// dense head. 32x32 RGB in.
    pub fn cifar() -> Self {
        let lr = Activation::LeakyRelu(0.2);
        ArchSpec::new(
            "cifar",
            vec![3, 32, 32],
            vec![
                LayerSpec {
                    kind: LayerKind::Conv { out_channels: 16, in_channels: 3, kernel: 3 },
                    activation: lr,
                    pool: true,
                },
                LayerSpec {
                    kind: LayerKind::Conv { out_channels: 32, in_channels: 16, kernel: 3 },
                    activation: lr,
                    pool: true,
                },
                LayerSpec {
                    kind: LayerKind::Conv { out_channels: 64, in_channels: 32, kernel: 3 },
                    activation: lr,
                    pool: true,
                },
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 256, outputs: 128 },
                    activation: lr,
                    pool: false,
                },
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 128, outputs: 10 },
                    activation: Activation::None,
                    pool: false,
                },
            ],
            10,
        )
        .expect("static arch")
    }

    /// 1 -> 100 (ReLU) -> 1 regression net.
    pub fn regression() -> Self {
        ArchSpec::new(
            "regression",
            vec![1],
            vec![
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 1, outputs: 100 },
                    activation: Activation::Relu,
                    pool: false,
                },
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 100, outputs: 1 },
                    activation: Activation::None,
                    pool: false,
                },
            ],
            1,
        )
        .expect("static arch")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "mnist" => Some(ArchSpec::mnist()),
            "cifar" => Some(ArchSpec::cifar()),
            "regression" => Some(ArchSpec::regression()),
            "toy" => Some(ArchSpec::toy()),
            _ => None,
        }
    }

    /// Tiny conv-free arch for fast end-to-end checks.
    pub fn toy() -> Self {
        ArchSpec::new(
            "toy",
            vec![2],
            vec![
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 2, outputs: 8 },
                    activation: Activation::LeakyRelu(0.2),
                    pool: false,
                },
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 8, outputs: 2 },
                    activation: Activation::None,
                    pool: false,
                },
            ],
            2,
        )
        .expect("static arch")
    }
}

/// One concrete weight assignment for an [`ArchSpec`].
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub arch_name: String,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ParamSet {
    /// Build from per-layer flat vectors laid out as weights then biases.
    pub fn from_flat(arch: &ArchSpec, flats: &[&[f32]]) -> Result<Self> {
        if flats.len() != arch.layer_count() {
            return Err(TensorError::BadShape {
                op: "param_set",
                expected: format!("{} layer vectors", arch.layer_count()),
                got: vec![flats.len()],
            });
        }
        let mut layers = Vec::with_capacity(flats.len());
        for (spec, flat) in arch.layers.iter().zip(flats) {
            if flat.len() != spec.param_count() {
                return Err(TensorError::LengthMismatch {
                    len: flat.len(),
                    shape: vec![spec.param_count()],
                });
            }
            let wc = spec.weight_count();
            layers.push(LayerParams {
                weight: Tensor::from_vec(&spec.weight_shape(), flat[..wc].to_vec())?,
                bias: Tensor::from_vec(&spec.bias_shape(), flat[wc..].to_vec())?,
            });
        }
        Ok(ParamSet {
            arch_name: arch.name.clone(),
            layers,
        })
    }

    /// Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
    pub fn init<R: Rng>(arch: &ArchSpec, rng: &mut R) -> Self {
        let layers = arch
            .layers
            .iter()
            .map(|spec| {
                let fan_in = match spec.kind {
                    LayerKind::Conv { in_channels, kernel, .. } => in_channels * kernel * kernel,
                    LayerKind::Linear { inputs, .. } => inputs,
                };
                let bound = 1.0 / (fan_in as f32).sqrt();
                LayerParams {
                    weight: Tensor::rand_uniform(&spec.weight_shape(), -bound, bound, rng),
                    bias: Tensor::zeros(&spec.bias_shape()),
                }
            })
            .collect();
        ParamSet {
            arch_name: arch.name.clone(),
            layers,
        }
    }

    pub fn matches(&self, arch: &ArchSpec) -> bool {
        self.arch_name == arch.name
            && self.layers.len() == arch.layer_count()
            && self
                .layers
                .iter()
                .zip(&arch.layers)
                .all(|(p, s)| {
                    p.weight.shape() == s.weight_shape() && p.bias.shape() == s.bias_shape()
                })
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}

/// Per-layer weight/bias graph handles for a differentiable forward.
pub struct ParamValues {
    pub layers: Vec<(Value, Value)>,
}

impl ParamValues {
    /// Register a concrete ParamSet in a graph.
    pub fn register(g: &Graph, params: &ParamSet, trainable: bool) -> Self {
        ParamValues {
            layers: params
                .layers
                .iter()
                .map(|l| (g.leaf(l.weight.clone(), trainable), g.leaf(l.bias.clone(), trainable)))
                .collect(),
        }
    }
}

/// Dropout plan for the stochastic-forward baseline: keep probability and
/// a mask source.
pub struct DropoutPlan<'r, R: Rng> {
    pub rate: f32,
    pub rng: &'r mut R,
}

/// Differentiable forward pass producing logits (or the regression output).
pub fn forward_graph(
    g: &Graph,
    arch: &ArchSpec,
    params: &ParamValues,
    x: Value,
) -> Result<Value> {
    forward_graph_inner(g, arch, params, x, None::<DropoutPlan<rand_chacha::ChaCha20Rng>>)
}

/// Forward with dropout masks after every hidden activation; the final
/// layer is never masked. Rate 0 reduces to the plain forward.
pub fn forward_graph_dropout<R: Rng>(
    g: &Graph,
    arch: &ArchSpec,
    params: &ParamValues,
    x: Value,
    plan: DropoutPlan<R>,
) -> Result<Value> {
    forward_graph_inner(g, arch, params, x, Some(plan))
}

fn forward_graph_inner<R: Rng>(
    g: &Graph,
    arch: &ArchSpec,
    params: &ParamValues,
    x: Value,
    mut dropout: Option<DropoutPlan<R>>,
) -> Result<Value> {
    if params.layers.len() != arch.layer_count() {
        return Err(TensorError::BadShape {
            op: "forward",
            expected: format!("{} layers", arch.layer_count()),
            got: vec![params.layers.len()],
        });
    }
    let batch = g.shape(x)[0];
    let mut h = x;
    let last = arch.layer_count() - 1;
    for (i, layer) in arch.layers.iter().enumerate() {
        let (w, b) = params.layers[i];
        h = match layer.kind {
            LayerKind::Conv { .. } => {
                let y = g.conv2d(h, w, b).map_err(|e| name_layer(e, i))?;
                let mut a = layer.activation.apply(g, y);
                if layer.pool {
                    let s = g.shape(a);
                    let (nh, nw) = (s[2] & !1, s[3] & !1);
                    if (nh, nw) != (s[2], s[3]) {
                        a = g.crop2d(a, nh, nw)?;
                    }
                    g.maxpool2d(a)?
                } else {
                    a
                }
            }
            LayerKind::Linear { inputs, .. } => {
                let s = g.shape(h);
                let flat = if s.len() > 2 {
                    g.reshape(h, &[batch, s[1..].iter().product()])?
                } else {
                    h
                };
                if g.shape(flat)[1] != inputs {
                    return Err(name_layer(
                        TensorError::ShapeMismatch {
                            op: "linear",
                            lhs: g.shape(flat),
                            rhs: vec![inputs],
                        },
                        i,
                    ));
                }
                let y = g.matmul(flat, w).map_err(|e| name_layer(e, i))?;
                let y = g.add_row(y, b)?;
                layer.activation.apply(g, y)
            }
        };
        if i != last {
            if let Some(plan) = dropout.as_mut() {
                if plan.rate > 0.0 {
                    let shape = g.shape(h);
                    let keep = 1.0 - plan.rate;
                    let n: usize = shape.iter().product();
                    let mask: Vec<f32> = (0..n)
                        .map(|_| {
                            if plan.rng.gen::<f32>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mv = g.constant(Tensor::from_vec(&shape, mask)?);
                    h = g.mul(h, mv)?;
                }
            }
        }
    }
    Ok(h)
}

fn name_layer(e: TensorError, layer: usize) -> TensorError {
    match e {
        TensorError::ShapeMismatch { op: _, lhs, rhs } => TensorError::BadShape {
            op: "forward",
            expected: format!("layer {layer} shapes {rhs:?}"),
            got: lhs,
        },
        other => other,
    }
}

/// Pure evaluation forward: identical inputs give bitwise-identical output.
pub fn forward(arch: &ArchSpec, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
    let g = Graph::new();
    let values = ParamValues::register(&g, params, false);
    let vx = g.constant(x.clone());
    let out = forward_graph(&g, arch, &values, vx)?;
    Ok(g.tensor(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::finite_diff_check_coords;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn mnist_arch_shapes_and_count() {
        let arch = ArchSpec::mnist();
        assert_eq!(arch.layers[0].weight_shape(), vec![32, 1, 5, 5]);
        assert_eq!(arch.layers[2].weight_shape(), vec![512, 10]);
        assert_eq!(arch.layer_count(), 3);
        // 800+32 + 25600+32 + 5120+10
        assert_eq!(arch.param_count(), 31_594);
    }

    #[test]
    fn cifar_arch_shapes_and_chain() {
        let arch = ArchSpec::cifar();
        assert_eq!(arch.layers[0].weight_shape(), vec![16, 3, 3, 3]);
        assert_eq!(arch.layers[3].weight_shape(), vec![256, 128]);
        assert_eq!(arch.layer_count(), 5);
        // the 13->6 pool stage forces a crop; validation must accept it
        // and the flatten must feed 64*2*2 = 256 into linear1.
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let params = ParamSet::init(&arch, &mut rng);
        let x = Tensor::randn(&[2, 3, 32, 32], &mut rng);
        let out = forward(&arch, &params, &x).unwrap();
        assert_eq!(out.shape(), &[2, 10]);
    }

    #[test]
    fn regression_arch_count_and_shape() {
        let arch = ArchSpec::regression();
        assert_eq!(arch.layers[0].weight_shape(), vec![1, 100]);
        assert_eq!(arch.param_count(), 301);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let params = ParamSet::init(&arch, &mut rng);
        let x = Tensor::randn(&[20, 1], &mut rng);
        let out = forward(&arch, &params, &x).unwrap();
        assert_eq!(out.shape(), &[20, 1]);
    }

    #[test]
    fn invalid_composition_is_rejected_at_construction() {
        let err = ArchSpec::new(
            "bad",
            vec![1, 28, 28],
            vec![
                LayerSpec {
                    kind: LayerKind::Conv { out_channels: 8, in_channels: 1, kernel: 5 },
                    activation: Activation::Relu,
                    pool: true,
                },
                LayerSpec {
                    kind: LayerKind::Linear { inputs: 999, outputs: 10 },
                    activation: Activation::None,
                    pool: false,
                },
            ],
            10,
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let arch = ArchSpec::mnist();
        let flats: Vec<Vec<f32>> = arch
            .layers
            .iter()
            .map(|l| vec![0.0; l.param_count()])
            .collect();
        let refs: Vec<&[f32]> = flats.iter().map(|v| v.as_slice()).collect();
        let params = ParamSet::from_flat(&arch, &refs).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = Tensor::randn(&[3, 1, 28, 28], &mut rng);
        let out = forward(&arch, &params, &x).unwrap();
        assert_eq!(out.shape(), &[3, 10]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mnist_logits_shape() {
        let arch = ArchSpec::mnist();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let params = ParamSet::init(&arch, &mut rng);
        let x = Tensor::randn(&[8, 1, 28, 28], &mut rng);
        let out = forward(&arch, &params, &x).unwrap();
        assert_eq!(out.shape(), &[8, 10]);
    }

    #[test]
    fn forward_is_deterministic() {
        let arch = ArchSpec::mnist();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let params = ParamSet::init(&arch, &mut rng);
        let x = Tensor::randn(&[2, 1, 28, 28], &mut rng);
        let a = forward(&arch, &params, &x).unwrap();
        let b = forward(&arch, &params, &x).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn conv1_weight_grads_match_finite_differences() {
        let arch = ArchSpec::mnist();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let params = ParamSet::init(&arch, &mut rng);
        let x = Tensor::randn(&[2, 1, 28, 28], &mut rng);
        let labels = vec![3u32, 7];
        let w0 = params.layers[0].weight.clone();
        let coords = [0usize, 17, 100, 333, 799];
        // h small enough that no max-pool argmax or ReLU kink sits inside
        // the probe radius; the f64 replay keeps the quotient exact.
        let err = finite_diff_check_coords(
            |g, vw| {
                let mut values = ParamValues::register(g, &params, false);
                let b0 = values.layers[0].1;
                values.layers[0] = (vw, b0);
                let vx = g.constant(x.clone());
                let logits = forward_graph(g, &arch, &values, vx)?;
                g.softmax_cross_entropy(logits, &labels)
            },
            &w0,
            1e-6,
            &coords,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn param_grads_are_nonzero_for_every_layer() {
        let arch = ArchSpec::mnist();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let params = ParamSet::init(&arch, &mut rng);
        let x = Tensor::randn(&[2, 1, 28, 28], &mut rng);
        let g = Graph::new();
        let values = ParamValues::register(&g, &params, true);
        let vx = g.constant(x);
        let logits = forward_graph(&g, &arch, &values, vx).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[1, 2]).unwrap();
        g.backward(loss).unwrap();
        for (i, (w, b)) in values.layers.iter().enumerate() {
            let gw = g.grad(*w).unwrap();
            let gb = g.grad(*b).unwrap();
            assert!(gw.data().iter().any(|&v| v != 0.0), "layer {i} weight grad all zero");
            assert!(gb.data().iter().any(|&v| v != 0.0), "layer {i} bias grad all zero");
        }
    }

    #[test]
    fn dropout_rate_zero_is_plain_forward() {
        let arch = ArchSpec::toy();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let params = ParamSet::init(&arch, &mut rng);
        let x = Tensor::randn(&[4, 2], &mut rng);
        let plain = forward(&arch, &params, &x).unwrap();
        let g = Graph::new();
        let values = ParamValues::register(&g, &params, false);
        let vx = g.constant(x.clone());
        let mut drop_rng = ChaCha20Rng::seed_from_u64(8);
        let out = forward_graph_dropout(
            &g,
            &arch,
            &values,
            vx,
            DropoutPlan { rate: 0.0, rng: &mut drop_rng },
        )
        .unwrap();
        assert!(g.tensor(out).bit_eq(&plain));
    }
}
