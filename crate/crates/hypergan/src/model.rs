//! The generative machine: noise -> mixer -> per-layer codes -> parallel
//! generators -> one complete target-network parameter set, plus the
//! discriminator that keeps codes close to the Gaussian prior.

use rand::Rng;

use crate::nets::{ArchSpec, ParamSet, ParamValues};
use crate::tensor::{Graph, Tensor, TensorError, Value};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration mismatch: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Dimensions and hyperparameters of the generative stack.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGanConfig {
    /// Width j of the noise source S = N(0, I_j).
    pub noise_dim: usize,
    /// Width d of each per-layer code.
    pub code_dim: usize,
    /// Hidden layer widths of the mixer MLP.
    pub mixer_hidden: Vec<usize>,
    /// Hidden layer widths of every generator MLP.
    pub generator_hidden: Vec<usize>,
    /// Hidden layer widths of the discriminator MLP.
    pub discriminator_hidden: Vec<usize>,
    /// Weight of the latent adversarial regularizer.
    pub beta: f32,
    /// Std of the code prior P = N(0, prior_std^2 I_d).
    pub prior_std: f32,
    /// When false the mixer is dropped and each generator consumes an
    /// independent d-dimensional Gaussian draw.
    pub use_mixer: bool,
}

impl HyperGanConfig {
    pub fn mnist() -> Self {
        HyperGanConfig {
            noise_dim: 256,
            code_dim: 128,
            mixer_hidden: vec![512, 512],
            generator_hidden: vec![512, 512],
            discriminator_hidden: vec![512, 512],
            beta: 1.0,
            prior_std: 1.0,
            use_mixer: true,
        }
    }

    pub fn cifar() -> Self {
        HyperGanConfig {
            noise_dim: 256,
            code_dim: 256,
            mixer_hidden: vec![512, 512],
            generator_hidden: vec![512, 512],
            discriminator_hidden: vec![512, 512],
            beta: 1.0,
            prior_std: 1.0,
            use_mixer: true,
        }
    }

    pub fn regression() -> Self {
        HyperGanConfig {
            noise_dim: 64,
            code_dim: 64,
            mixer_hidden: vec![128, 128],
            generator_hidden: vec![128, 128],
            discriminator_hidden: vec![128, 128],
            beta: 1.0,
            prior_std: 1.0,
            use_mixer: true,
        }
    }

    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        HyperGanConfig {
            noise_dim: 8,
            code_dim: 4,
            mixer_hidden: vec![16],
            generator_hidden: vec![16],
            discriminator_hidden: vec![16],
            beta: 1.0,
            prior_std: 1.0,
            use_mixer: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(ModelError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.noise_dim == 0 || self.code_dim == 0 {
            return Err(ModelError::Config("noise_dim and code_dim must be positive".into()));
        }
        if self.prior_std <= 0.0 {
            return Err(ModelError::Config("prior_std must be positive".into()));
        }
        Ok(())
    }
}

/// Plain MLP: ReLU after each hidden layer, linear output. Weights are
/// `[in, out]`, init uniform on +/- 1/sqrt(fan_in), biases zero.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Graph handles for one registered MLP.
pub struct MlpValues {
    pub weights: Vec<Value>,
    pub biases: Vec<Value>,
}

impl Mlp {
    pub fn init<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let bound = 1.0 / (w[0] as f32).sqrt();
            weights.push(Tensor::rand_uniform(&[w[0], w[1]], -bound, bound, rng));
            biases.push(Tensor::zeros(&[w[1]]));
        }
        Mlp {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn register(&self, g: &Graph, trainable: bool) -> MlpValues {
        MlpValues {
            weights: self.weights.iter().map(|w| g.leaf(w.clone(), trainable)).collect(),
            biases: self.biases.iter().map(|b| g.leaf(b.clone(), trainable)).collect(),
        }
    }

    pub fn forward_values(&self, g: &Graph, vals: &MlpValues, x: Value) -> crate::tensor::Result<Value> {
        let mut h = x;
        let last = self.weights.len() - 1;
        for i in 0..self.weights.len() {
            h = g.matmul(h, vals.weights[i])?;
            h = g.add_row(h, vals.biases[i])?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Evaluation-only forward through a throwaway graph; numerics are
    /// identical to the recorded path.
    pub fn forward_tensor(&self, x: &Tensor) -> crate::tensor::Result<Tensor> {
        let g = Graph::new();
        let vals = self.register(&g, false);
        let vx = g.constant(x.clone());
        let out = self.forward_values(&g, &vals, vx)?;
        Ok(g.tensor(out))
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            f(format!("{prefix}.w{i}"), w);
            f(format!("{prefix}.b{i}"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            f(format!("{prefix}.w{i}"), w);
            f(format!("{prefix}.b{i}"), b);
        }
    }
}

/// The mixed latent vector Z of one noise batch, viewed as N codes of
/// width d. Slices concatenate back to Z exactly; slice i feeds layer i.
#[derive(Debug, Clone)]
pub struct MixedLatent {
    pub z: Tensor,
    pub code_dim: usize,
}

impl MixedLatent {
    pub fn num_codes(&self) -> usize {
        self.z.shape()[1] / self.code_dim
    }

    pub fn batch(&self) -> usize {
        self.z.shape()[0]
    }

    /// Copy of code slice i, shape `[batch, d]`.
    pub fn code(&self, i: usize) -> Tensor {
        let (b, total) = (self.z.shape()[0], self.z.shape()[1]);
        let d = self.code_dim;
        let mut out = vec![0.0f32; b * d];
        for r in 0..b {
            out[r * d..(r + 1) * d]
                .copy_from_slice(&self.z.data()[r * total + i * d..r * total + (i + 1) * d]);
        }
        Tensor::from_vec(&[b, d], out).expect("slice shape")
    }
}

/// Which side of the objective a graph registration trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Mixer and generators (the sampled-network side).
    GeneratorSide,
    /// Discriminator only.
    DiscriminatorSide,
    /// Everything.
    All,
}

/// Learned parameters of the whole stack.
#[derive(Debug, Clone)]
pub struct HyperGanModel {
    pub config: HyperGanConfig,
    pub arch: ArchSpec,
    pub mixer: Option<Mlp>,
    pub generators: Vec<Mlp>,
    pub discriminator: Mlp,
}

/// Graph handles for a registered model.
pub struct ModelValues {
    pub mixer: Option<MlpValues>,
    pub generators: Vec<MlpValues>,
    pub discriminator: MlpValues,
}

impl MlpValues {
    /// Values interleaved w0, b0, w1, b1, ... matching the visit order.
    fn ordered(&self) -> impl Iterator<Item = Value> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [*w, *b])
    }
}

impl ModelValues {
    /// Graph values of a parameter group in `visit_params` order.
    pub fn ordered(&self, group: ParamGroup) -> Vec<Value> {
        let mut out = Vec::new();
        if matches!(group, ParamGroup::GeneratorSide | ParamGroup::All) {
            if let Some(m) = &self.mixer {
                out.extend(m.ordered());
            }
            for g in &self.generators {
                out.extend(g.ordered());
            }
        }
        if matches!(group, ParamGroup::DiscriminatorSide | ParamGroup::All) {
            out.extend(self.discriminator.ordered());
        }
        out
    }
}

impl HyperGanModel {
    pub fn init<R: Rng>(config: HyperGanConfig, arch: &ArchSpec, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = arch.layer_count();
        let d = config.code_dim;
        let mixer = if config.use_mixer {
            let mut dims = vec![config.noise_dim];
            dims.extend(&config.mixer_hidden);
            dims.push(n * d);
            Some(Mlp::init(&dims, rng))
        } else {
            None
        };
        let generators = arch
            .layers
            .iter()
            .map(|layer| {
                let mut dims = vec![d];
                dims.extend(&config.generator_hidden);
                dims.push(layer.param_count());
                Mlp::init(&dims, rng)
            })
            .collect();
        let mut ddims = vec![d];
        ddims.extend(&config.discriminator_hidden);
        ddims.push(1);
        let discriminator = Mlp::init(&ddims, rng);
        Ok(HyperGanModel {
            config,
            arch: arch.clone(),
            mixer,
            generators,
            discriminator,
        })
    }

    /// Width of the noise the model consumes: j with a mixer, N*d without.
    pub fn noise_width(&self) -> usize {
        if self.mixer.is_some() {
            self.config.noise_dim
        } else {
            self.arch.layer_count() * self.config.code_dim
        }
    }

    pub fn sample_noise<R: Rng>(&self, batch: usize, rng: &mut R) -> Tensor {
        sample_noise(batch, self.noise_width(), rng)
    }

    pub fn sample_prior<R: Rng>(&self, batch: usize, rng: &mut R) -> Tensor {
        sample_prior(batch, self.config.code_dim, self.config.prior_std, rng)
    }

    /// Map a noise batch to the mixed latent space (identity when the
    /// mixer is ablated).
    pub fn mix(&self, s: &Tensor) -> Result<MixedLatent> {
        if s.rank() != 2 || s.shape()[1] != self.noise_width() {
            return Err(ModelError::Tensor(TensorError::BadShape {
                op: "mix",
                expected: format!("[batch x {}] noise", self.noise_width()),
                got: s.shape().to_vec(),
            }));
        }
        let z = match &self.mixer {
            Some(mixer) => mixer.forward_tensor(s)?,
            None => s.clone(),
        };
        Ok(MixedLatent {
            z,
            code_dim: self.config.code_dim,
        })
    }

    /// Run every generator over its code slice and split rows into one
    /// ParamSet per latent row.
    pub fn generate(&self, latent: &MixedLatent, arch: &ArchSpec) -> Result<Vec<ParamSet>> {
        let n = arch.layer_count();
        if latent.code_dim != self.config.code_dim
            || latent.num_codes() != n
            || self.generators.len() != n
        {
            return Err(ModelError::Config(format!(
                "latent {}x{} codes do not fit arch '{}' with {} layers",
                latent.num_codes(),
                latent.code_dim,
                arch.name,
                n
            )));
        }
        for (i, (gen, layer)) in self.generators.iter().zip(&arch.layers).enumerate() {
            if gen.out_dim() != layer.param_count() {
                return Err(ModelError::Config(format!(
                    "generator {} emits {} scalars, layer needs {}",
                    i,
                    gen.out_dim(),
                    layer.param_count()
                )));
            }
        }
        let batch = latent.batch();
        let mut flats: Vec<Tensor> = Vec::with_capacity(n);
        for (i, gen) in self.generators.iter().enumerate() {
            flats.push(gen.forward_tensor(&latent.code(i))?);
        }
        let mut out = Vec::with_capacity(batch);
        for row in 0..batch {
            let rows: Vec<&[f32]> = flats
                .iter()
                .zip(&arch.layers)
                .map(|(flat, layer)| {
                    let w = layer.param_count();
                    &flat.data()[row * w..(row + 1) * w]
                })
                .collect();
            out.push(ParamSet::from_flat(arch, &rows)?);
        }
        Ok(out)
    }

    /// Independent draws s -> Q -> G, no gradient tape retained.
    pub fn sample_networks<R: Rng>(&self, count: usize, rng: &mut R) -> Result<Vec<ParamSet>> {
        let s = self.sample_noise(count, rng);
        let latent = self.mix(&s)?;
        self.generate(&latent, &self.arch.clone())
    }

    /// Pre-sigmoid realness score per code row.
    pub fn discriminate(&self, code: &Tensor) -> Result<Tensor> {
        if code.rank() != 2 || code.shape()[1] != self.config.code_dim {
            return Err(ModelError::Tensor(TensorError::BadShape {
                op: "discriminate",
                expected: format!("[batch x {}] code", self.config.code_dim),
                got: code.shape().to_vec(),
            }));
        }
        Ok(self.discriminator.forward_tensor(code)?)
    }

    /// Register parameters in a graph; `trainable` marks which group gets
    /// gradients, everything else enters as constants.
    pub fn register(&self, g: &Graph, trainable: ParamGroup) -> ModelValues {
        let gen_side = matches!(trainable, ParamGroup::GeneratorSide | ParamGroup::All);
        let disc_side = matches!(trainable, ParamGroup::DiscriminatorSide | ParamGroup::All);
        ModelValues {
            mixer: self.mixer.as_ref().map(|m| m.register(g, gen_side)),
            generators: self.generators.iter().map(|m| m.register(g, gen_side)).collect(),
            discriminator: self.discriminator.register(g, disc_side),
        }
    }

    /// Mixed latent Z as a graph value ([batch x N*d]).
    pub fn mix_graph(
        &self,
        g: &Graph,
        vals: &ModelValues,
        s: Value,
    ) -> crate::tensor::Result<Value> {
        match (&self.mixer, &vals.mixer) {
            (Some(mixer), Some(mv)) => mixer.forward_values(g, mv, s),
            _ => Ok(s),
        }
    }

    /// Slice code i out of a mixed latent value.
    pub fn code_graph(&self, g: &Graph, z: Value, i: usize) -> crate::tensor::Result<Value> {
        let d = self.config.code_dim;
        g.slice_cols(z, i * d, (i + 1) * d)
    }

    /// Generate a single network (codes must be `[1, d]`) as graph values
    /// shaped for the target forward pass.
    pub fn generate_graph(
        &self,
        g: &Graph,
        vals: &ModelValues,
        codes: &[Value],
        arch: &ArchSpec,
    ) -> crate::tensor::Result<ParamValues> {
        let mut layers = Vec::with_capacity(codes.len());
        for (i, (gen, layer)) in self.generators.iter().zip(&arch.layers).enumerate() {
            let flat = gen.forward_values(g, &vals.generators[i], codes[i])?;
            let wc = layer.weight_count();
            let total = layer.param_count();
            let w = g.slice_cols(flat, 0, wc)?;
            let w = g.reshape(w, &layer.weight_shape())?;
            let b = g.slice_cols(flat, wc, total)?;
            let b = g.reshape(b, &layer.bias_shape())?;
            layers.push((w, b));
        }
        Ok(ParamValues { layers })
    }

    pub fn discriminate_graph(
        &self,
        g: &Graph,
        vals: &ModelValues,
        code: Value,
    ) -> crate::tensor::Result<Value> {
        self.discriminator.forward_values(g, &vals.discriminator, code)
    }

    pub fn visit_params(&self, group: ParamGroup, f: &mut dyn FnMut(String, &Tensor)) {
        if matches!(group, ParamGroup::GeneratorSide | ParamGroup::All) {
            if let Some(m) = &self.mixer {
                m.visit("mixer", f);
            }
            for (i, gen) in self.generators.iter().enumerate() {
                gen.visit(&format!("gen{i}"), f);
            }
        }
        if matches!(group, ParamGroup::DiscriminatorSide | ParamGroup::All) {
            self.discriminator.visit("disc", f);
        }
    }

    pub fn visit_params_mut(&mut self, group: ParamGroup, f: &mut dyn FnMut(String, &mut Tensor)) {
        if matches!(group, ParamGroup::GeneratorSide | ParamGroup::All) {
            if let Some(m) = &mut self.mixer {
                m.visit_mut("mixer", f);
            }
            for (i, gen) in self.generators.iter_mut().enumerate() {
                gen.visit_mut(&format!("gen{i}"), f);
            }
        }
        if matches!(group, ParamGroup::DiscriminatorSide | ParamGroup::All) {
            self.discriminator.visit_mut("disc", f);
        }
    }
}

/// I.i.d. standard normal noise `[batch x dim]`.
pub fn sample_noise<R: Rng>(batch: usize, dim: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[batch, dim], rng)
}

/// Draws from the code prior P = N(0, std^2 I_d).
pub fn sample_prior<R: Rng>(batch: usize, dim: usize, std: f32, rng: &mut R) -> Tensor {
    let t = Tensor::randn(&[batch, dim], rng);
    if (std - 1.0).abs() < f32::EPSILON {
        t
    } else {
        let data: Vec<f32> = t.data().iter().map(|&v| v * std).collect();
        Tensor::from_vec(&[batch, dim], data).expect("same shape")
    }
}
