//! Adam with bias correction. State is kept per parameter slot in the
//! order the caller supplies, and serializes for bitwise-resumable runs.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// One optimizer instance per parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step_count: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Start one optimizer step; follow with [`Adam::update`] per slot.
    pub fn begin(&mut self) {
        self.step_count += 1;
    }

    /// Update one parameter slot. Slots must be visited in a stable order;
    /// a `None` grad contributes zero gradient (moments still decay).
    pub fn update(&mut self, slot: usize, param: &mut Tensor, grad: Option<&Tensor>) {
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].is_empty() {
            self.m[slot] = vec![0.0; param.len()];
            self.v[slot] = vec![0.0; param.len()];
        }
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        assert_eq!(m.len(), param.len(), "state shape for slot {slot}");
        let t = self.step_count as f64;
        let b1 = self.config.beta1 as f64;
        let b2 = self.config.beta2 as f64;
        let lr = self.config.lr as f64;
        let eps = self.config.eps as f64;
        let bc1 = 1.0 - b1.powf(t);
        let bc2 = 1.0 - b2.powf(t);
        let data = param.data_mut();
        for i in 0..data.len() {
            let g = grad.map_or(0.0, |g| g.data()[i] as f64);
            let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            data[i] = (data[i] as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
        }
    }

    /// One-shot convenience over `begin` + `update`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) {
        assert_eq!(params.len(), grads.len(), "param/grad arity");
        self.begin();
        for (slot, param) in params.iter_mut().enumerate() {
            self.update(slot, param, grads[slot].as_ref());
        }
    }

    /// Flattened state for checkpointing: (m, v) per slot.
    pub fn state(&self) -> (u64, &[Vec<f32>], &[Vec<f32>]) {
        (self.step_count, &self.m, &self.v)
    }

    pub fn restore(&mut self, step_count: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        self.step_count = step_count;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_is_a_no_op() {
        let mut p = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default());
        let zero = Tensor::zeros(&[3]);
        adam.step(&mut [&mut p], &[Some(zero.clone())]);
        adam.step(&mut [&mut p], &[Some(zero)]);
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn descends_a_quadratic() {
        // minimize (x-3)^2, gradient 2(x-3)
        let mut x = Tensor::scalar(0.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        for _ in 0..500 {
            let g = 2.0 * (x.item() - 3.0);
            let grad = Tensor::scalar(g);
            adam.step(&mut [&mut x], &[Some(grad)]);
        }
        assert!((x.item() - 3.0).abs() < 1e-2, "x = {}", x.item());
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // bias correction makes the first update ~= lr * sign(g)
        let mut x = Tensor::scalar(0.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.01));
        adam.step(&mut [&mut x], &[Some(Tensor::scalar(7.0))]);
        assert!((x.item() + 0.01).abs() < 1e-4, "x = {}", x.item());
    }

    #[test]
    fn state_roundtrip_resumes_identically() {
        let mut a = Adam::new(AdamConfig::default());
        let mut b = Adam::new(AdamConfig::default());
        let mut pa = Tensor::from_vec(&[2], vec![0.3, -0.8]).unwrap();
        let mut pb = pa.clone();
        let g1 = Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap();
        let g2 = Tensor::from_vec(&[2], vec![-0.3, 0.05]).unwrap();
        a.step(&mut [&mut pa], &[Some(g1.clone())]);
        b.step(&mut [&mut pb], &[Some(g1)]);
        let (t, m, v) = a.state();
        let mut c = Adam::new(AdamConfig::default());
        c.restore(t, m.to_vec(), v.to_vec());
        a.step(&mut [&mut pa], &[Some(g2.clone())]);
        c.step(&mut [&mut pb], &[Some(g2)]);
        assert!(pa.bit_eq(&pb));
    }
}
