use log::warn;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Index of a trainable parameter inside its [`ParamGroup`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Index of a non-trainable buffer (running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferId(usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub(crate) m: Tensor,
    pub(crate) v: Tensor,
}

impl Param {
    pub fn first_moment(&self) -> &Tensor {
        &self.m
    }

    pub fn second_moment(&self) -> &Tensor {
        &self.v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters sharing one optimizer state and one freeze flag.
#[derive(Clone, Debug)]
pub struct ParamGroup {
    name: String,
    params: Vec<Param>,
    buffers: Vec<(String, Tensor)>,
    frozen: bool,
    step: u64,
}

/// Graph handles for every parameter of a group, in registration order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl ParamGroup {
    pub fn new(name: impl Into<String>) -> Self {
        ParamGroup {
            name: name.into(),
            params: Vec::new(),
            buffers: Vec::new(),
            frozen: false,
            step: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.into(),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> BufferId {
        self.buffers.push((name.into(), value));
        BufferId(self.buffers.len() - 1)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn buffers(&self) -> &[(String, Tensor)] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.buffers
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0].1
    }

    /// Mutable access to two distinct buffers at once.
    pub fn buffer_pair_mut(&mut self, a: BufferId, b: BufferId) -> (&mut Tensor, &mut Tensor) {
        assert_ne!(a.0, b.0, "buffer_pair_mut needs distinct buffers");
        if a.0 < b.0 {
            let (lo, hi) = self.buffers.split_at_mut(b.0);
            (&mut lo[a.0].1, &mut hi[0].1)
        } else {
            let (lo, hi) = self.buffers.split_at_mut(a.0);
            (&mut hi[0].1, &mut lo[b.0].1)
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn set_moments(&mut self, idx: usize, m: Tensor, v: Tensor) -> Result<()> {
        let p = &mut self.params[idx];
        if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
            return Err(Error::shape(format!("moment shape mismatch for {}", p.name)));
        }
        p.m = m;
        p.v = v;
        Ok(())
    }

    /// Places every parameter on the graph. Frozen parameters enter as
    /// constants: gradients still flow through them to upstream inputs but
    /// never reach the parameters themselves.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), !self.frozen))
            .collect();
        Bound { vars }
    }

    /// Adds the graph gradients of bound parameters into `grad`.
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(gr) = g.grad(v) {
                p.grad
                    .data_mut()
                    .iter_mut()
                    .zip(gr.data())
                    .for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        adam_step(self, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    }
}

/// Bias-corrected Adam update of every parameter in `group`. A frozen group
/// is left untouched. Gradients are not cleared.
pub fn adam_step(group: &mut ParamGroup, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    if group.frozen {
        warn!("adam_step on frozen group '{}' skipped", group.name);
        return;
    }
    group.step += 1;
    let t = group.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for p in &mut group.params {
        let grad = p.grad.data();
        let m = p.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(grad) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
        }
        let v = p.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(grad) {
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
        }
        let (m, v) = (p.m.data(), p.v.data());
        for ((x, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = mi / c1;
            let vhat = vi / c2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Normal draws with standard deviation `sqrt(2 / fan_in)`.
pub fn kaiming_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::Range("kaiming_init: fan_in must be >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    Ok(Tensor::from_fn(shape, |_| std * rng.normal()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running estimates updated.
    Train,
    /// Batch statistics; running estimates left as they are.
    Frozen,
    /// Running estimates only.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Batch norm over `[n, c, h, w]` with running estimates stored in
/// `running_mean` / `running_var`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    mode: BnMode,
    cfg: BnConfig,
) -> Result<Var> {
    match mode {
        BnMode::Eval => g.batchnorm_eval(x, gamma, beta, running_mean.data(), running_var.data(), cfg.eps),
        BnMode::Train | BnMode::Frozen => {
            let (y, stats) = g.batchnorm_train(x, gamma, beta, cfg.eps)?;
            if mode == BnMode::Train {
                let mom = cfg.momentum;
                for (r, b) in running_mean.data_mut().iter_mut().zip(&stats.mean) {
                    *r = (1.0 - mom) * *r + mom * b;
                }
                for (r, b) in running_var.data_mut().iter_mut().zip(&stats.var) {
                    *r = (1.0 - mom) * *r + mom * b;
                }
            }
            Ok(y)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_group(value: f64) -> (ParamGroup, ParamId) {
        let mut group = ParamGroup::new("g");
        let id = group.add_param("w", Tensor::scalar(value));
        (group, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut group, id) = scalar_group(0.7);
        for _ in 0..5 {
            group.adam_step(&AdamConfig::with_lr(0.1));
        }
        assert_eq!(group.param(id).data()[0], 0.7);
    }

    #[test]
    fn first_step_is_lr_over_one_plus_eps() {
        let (mut group, id) = scalar_group(0.0);
        group.params_mut()[0].grad = Tensor::scalar(1.0);
        group.adam_step(&AdamConfig::with_lr(0.1));
        // m_hat = v_hat = 1 after bias correction.
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((group.param(id).data()[0] - expected).abs() < 1e-15);
        assert_eq!(group.step_count(), 1);
        // constant unit gradient keeps m_hat = v_hat = 1
        group.adam_step(&AdamConfig::with_lr(0.1));
        assert!((group.param(id).data()[0] - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn frozen_group_is_bit_identical() {
        let mut rng = Rng::new(1);
        let mut group = ParamGroup::new("disc");
        group.add_param("w", kaiming_init(&[4, 3], 3, &mut rng).unwrap());
        group.params_mut()[0].grad = Tensor::full(&[4, 3], 0.5);
        let before = group.params()[0].value.clone();
        group.freeze();
        for _ in 0..10 {
            group.adam_step(&AdamConfig::default());
        }
        assert_eq!(group.params()[0].value.data(), before.data());
        assert_eq!(group.step_count(), 0);
    }

    #[test]
    fn kaiming_std_and_determinism() {
        for (fan_in, target, tol) in [(2usize, 1.0, 0.02), (8, 0.5, 0.01)] {
            let t = kaiming_init(&[100_000], fan_in, &mut Rng::new(11)).unwrap();
            let mean = t.data().iter().sum::<f64>() / 1e5;
            let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e5;
            assert!((var.sqrt() - target).abs() < tol, "fan_in={fan_in} std={}", var.sqrt());
        }
        let a = kaiming_init(&[3, 3], 9, &mut Rng::new(4)).unwrap();
        let b = kaiming_init(&[3, 3], 9, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(kaiming_init(&[1], 0, &mut Rng::new(4)).is_err());
    }

    #[test]
    fn frozen_bind_still_passes_gradient_upstream() {
        let mut group = ParamGroup::new("disc");
        let id = group.add_param("w", Tensor::new(vec![1, 2], vec![2.0, -3.0]).unwrap());
        group.freeze();
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
        let bound = group.bind(&mut g);
        let y = g.linear(x, bound.get(id), None).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -3.0]);
        assert!(g.grad(bound.get(id)).is_none());
    }
}
