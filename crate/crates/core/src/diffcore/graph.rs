//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and `backward` is a single reverse sweep. Gradients
//! accumulate additively when a value feeds more than one consumer.

use super::conv::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a training-mode batch norm, for the caller
/// to fold into its running estimates.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance.
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowMean(Var),
    SubRow(Var, Var),
    Reshape(Var),
    LeakyRelu(Var, f64),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    /// `geom` describes the adjoint convolution (output -> input).
    Deconv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Gap(Var),
    ConcatFeatures(Vec<Var>),
    SliceBatch(Var, usize),
    ConcatBatch(Vec<Var>),
    Crop {
        x: Var,
        y0: usize,
        x0: usize,
        flip: bool,
    },
    SelectChannel(Var, usize),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`. Only leaves
    /// keep their gradient after the sweep.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: operand shapes differ, {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(Error::DivisionByZero("elementwise divisor contains 0".into()));
        }
        self.zip_with(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v * c);
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v + c);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v * v);
        self.push(t, Op::Square(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean over every axis but the first: `[n, ...] -> [n]`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = *t
            .shape()
            .first()
            .ok_or_else(|| Error::shape("row_mean of a scalar"))?;
        let m = t.numel() / n.max(1);
        if m == 0 {
            return Err(Error::shape("row_mean over empty rows"));
        }
        let data = t.data().chunks(m).map(|r| r.iter().sum::<f64>() / m as f64).collect();
        let out = Tensor::new(vec![n], data)?;
        Ok(self.push(out, Op::RowMean(a), &[a]))
    }

    /// `a[n, ...] - r[n]`, broadcast over each row.
    pub fn sub_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let ta = self.value(a);
        let tr = self.value(r);
        let n = ta.shape().first().copied().unwrap_or(0);
        if tr.shape() != [n] {
            return Err(Error::shape(format!(
                "sub_row: row vector {:?} does not match leading axis of {:?}",
                tr.shape(),
                ta.shape()
            )));
        }
        let m = ta.numel() / n.max(1);
        let mut data = ta.data().to_vec();
        for (row, &rv) in data.chunks_mut(m.max(1)).zip(tr.data()) {
            row.iter_mut().for_each(|v| *v -= rv);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::SubRow(a, r), &[a, r]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// `[n, ...] -> [n, prod(...)]`
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = shape.first().copied().unwrap_or(1);
        let rest = shape.iter().skip(1).product();
        self.reshape(a, &[n, rest])
    }

    /// `x` for `x >= 0`, `slope * x` otherwise; the derivative at 0 is 1.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a).map(|v| if v >= 0.0 { v } else { slope * v });
        self.push(t, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, i, kh, kw) = self.value(w).dims4()?;
        if i != c {
            return Err(Error::shape(format!(
                "conv2d: input channel axis (1) is {c} but weight in-channel axis (1) is {i}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!(
                "conv2d: kernel axes (2, 3) must be square, got {kh}x{kw}"
            )));
        }
        self.check_bias(b, o, "conv2d")?;
        let geom = ConvGeom::new(n, c, h, wd, o, kh, stride, pad).ok_or_else(|| {
            Error::shape(format!(
                "conv2d: spatial axes (2, 3) {h}x{wd} with pad {pad} smaller than kernel {kh}, or stride 0"
            ))
        })?;
        let bias = b.map(|b| self.value(b).data().to_vec());
        let y = conv::conv_forward(self.value(x).data(), self.value(w).data(), bias.as_deref(), &geom);
        let t = Tensor::new(vec![n, o, geom.oh, geom.ow], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, &inputs))
    }

    /// Transposed convolution; `w` is `[in, out, k, k]`.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (i, o, kh, kw) = self.value(w).dims4()?;
        if i != c {
            return Err(Error::shape(format!(
                "deconv2d: input channel axis (1) is {c} but weight in-channel axis (0) is {i}"
            )));
        }
        if kh != kw {
            return Err(Error::shape(format!(
                "deconv2d: kernel axes (2, 3) must be square, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("deconv2d: stride must be >= 1"));
        }
        self.check_bias(b, o, "deconv2d")?;
        let oh = ((h - 1) * stride + kh)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::shape(format!("deconv2d: padding {pad} leaves no output")))?;
        let ow = ((wd - 1) * stride + kw)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::shape(format!("deconv2d: padding {pad} leaves no output")))?;
        let geom = ConvGeom::new(n, o, oh, ow, c, kh, stride, pad)
            .filter(|g| g.oh == h && g.ow == wd)
            .ok_or_else(|| Error::shape("deconv2d: inconsistent geometry"))?;
        let mut y = conv::conv_backward_input(self.value(x).data(), self.value(w).data(), &geom);
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (idx, chunk) in y.chunks_mut(oh * ow).enumerate() {
                let bo = bias[idx % o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
        let t = Tensor::new(vec![n, o, oh, ow], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Deconv2d { x, w, b, geom }, &inputs))
    }

    fn check_bias(&self, b: Option<Var>, o: usize, what: &str) -> Result<()> {
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(Error::shape(format!(
                    "{what}: bias shape {:?} does not match {o} output channels",
                    self.shape(b)
                )));
            }
        }
        Ok(())
    }

    fn bn_channel_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let shape = self.shape(x);
        if shape.len() < 2 {
            return Err(Error::shape(format!("batchnorm: need [n, c, ...], got {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let plane: usize = shape[2..].iter().product();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batchnorm: affine parameters must be [{c}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok((n, c, plane))
    }

    /// Training-mode batch norm over `[n, c, ...]`, normalising each channel
    /// with the biased batch variance.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, plane) = self.bn_channel_check(x, gamma, beta)?;
        let m = n * plane;
        if m < 2 {
            return Err(Error::DegenerateBatch(format!(
                "batchnorm in train mode needs >= 2 values per channel, got {m}"
            )));
        }
        let xs = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                mean[ci] += xs[(ni * c + ci) * plane..][..plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for ni in 0..n {
            for ci in 0..c {
                let mu = mean[ci];
                var[ci] += xs[(ni * c + ci) * plane..][..plane]
                    .iter()
                    .map(|v| (v - mu) * (v - mu))
                    .sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / m as f64).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / (m - 1) as f64).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, &mean, &inv_std, n, c, plane);
        let t = Tensor::new(self.shape(x).to_vec(), y)?;
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
            &[x, gamma, beta],
        );
        Ok((v, BatchStats { mean, var: unbiased }))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, plane) = self.bn_channel_check(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batchnorm: running statistics length mismatch"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (y, xhat) = self.bn_apply(x, gamma, beta, running_mean, &inv_std, n, c, plane);
        let t = Tensor::new(self.shape(x).to_vec(), y)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
            &[x, gamma, beta],
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
        n: usize,
        c: usize,
        plane: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let xs = self.value(x).data();
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut xhat = vec![0.0; xs.len()];
        let mut y = vec![0.0; xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                for j in off..off + plane {
                    xhat[j] = (xs[j] - mean[ci]) * inv_std[ci];
                    y[j] = gs[ci] * xhat[j] + bs[ci];
                }
            }
        }
        (y, xhat)
    }

    /// `[n, c, h, w] -> [n, c]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let plane = h * w;
        if plane == 0 {
            return Err(Error::shape("global_avg_pool: empty spatial plane"));
        }
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(vec![n, c], data)?;
        Ok(self.push(t, Op::Gap(x), &[x]))
    }

    /// Concatenates along axis 1; all parts share axis 0 and axes 2.. .
    pub fn concat_features(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_features of zero tensors"))?;
        let s0 = self.shape(first).to_vec();
        if s0.len() < 2 {
            return Err(Error::shape("concat_features needs rank >= 2"));
        }
        let n = s0[0];
        let tail: usize = s0[2..].iter().product();
        let mut total_c = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != s0.len() || s[0] != n || s[2..] != s0[2..] {
                return Err(Error::shape(format!(
                    "concat_features: shapes {s0:?} and {s:?} differ outside axis 1"
                )));
            }
            total_c += s[1];
        }
        let mut data = Vec::with_capacity(n * total_c * tail);
        for ni in 0..n {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[ni * c * tail..][..c * tail]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total_c;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::ConcatFeatures(parts.to_vec()), parts))
    }

    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x).slice_batch(start, len)?;
        Ok(self.push(t, Op::SliceBatch(x, start), &[x]))
    }

    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let t = Tensor::concat_batch(&tensors)?;
        Ok(self.push(t, Op::ConcatBatch(parts.to_vec()), parts))
    }

    /// Square `size x size` window at `(y0, x0)` of every channel, optionally
    /// mirrored left-right.
    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, size: usize, flip: bool) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if y0 + size > h || x0 + size > w {
            return Err(Error::shape(format!(
                "crop window {size}x{size} at ({y0}, {x0}) exceeds {h}x{w}"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * size * size);
        for plane in src.chunks(h * w) {
            for r in 0..size {
                let row = &plane[(y0 + r) * w + x0..][..size];
                if flip {
                    data.extend(row.iter().rev());
                } else {
                    data.extend_from_slice(row);
                }
            }
        }
        let t = Tensor::new(vec![n, c, size, size], data)?;
        Ok(self.push(t, Op::Crop { x, y0, x0, flip }, &[x]))
    }

    /// `[n, c, h, w] -> [n, 1, h, w]`
    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if channel >= c {
            return Err(Error::shape(format!(
                "select_channel: channel {channel} out of range for axis 1 of extent {c}"
            )));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * plane);
        for ni in 0..n {
            data.extend_from_slice(&src[(ni * c + channel) * plane..][..plane]);
        }
        let t = Tensor::new(vec![n, 1, h, w], data)?;
        Ok(self.push(t, Op::SelectChannel(x, channel), &[x]))
    }

    /// `x[n, f] * w[o, f]^T + b[o]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, f) = match self.shape(x) {
            &[n, f] => (n, f),
            s => return Err(Error::shape(format!("linear: input must be [n, f], got {s:?}"))),
        };
        let o = match self.shape(w) {
            &[o, fw] if fw == f => o,
            s => {
                return Err(Error::shape(format!(
                    "linear: weight {s:?} does not match feature axis (1) of extent {f}"
                )))
            }
        };
        self.check_bias(b, o, "linear")?;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = b.map(|b| self.value(b).data());
        let mut y = vec![0.0; n * o];
        for ni in 0..n {
            let xr = &xs[ni * f..][..f];
            for oi in 0..o {
                let wr = &ws[oi * f..][..f];
                let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                y[ni * o + oi] = dot + bs.map_or(0.0, |b| b[oi]);
            }
        }
        let t = Tensor::new(vec![n, o], y)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Linear { x, w, b }, &inputs))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`,
    /// evaluated in log-sum-exp form.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = match self.shape(logits) {
            &[n, k] => (n, k),
            s => return Err(Error::shape(format!("cross entropy: logits must be [n, k], got {s:?}"))),
        };
        if labels.len() != n || n == 0 {
            return Err(Error::shape(format!(
                "cross entropy: {} labels for {} rows",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::data(format!("label {bad} out of range for {k} classes")));
        }
        let ls = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for ni in 0..n {
            let row = &ls[ni * k..][..k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for ki in 0..k {
                probs[ni * k + ki] = (row[ki] - lse).exp();
            }
            loss += lse - row[labels[ni]];
        }
        let t = Tensor::scalar(loss / n as f64);
        Ok(self.push(
            t,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Populates gradients of the scalar `loss` on every ancestor that
    /// requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Rank(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(Tensor::new(shape, g)?);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => add_into(existing, &delta),
            slot @ None => *slot = Some(delta),
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(*a, g.to_vec());
                }
                if needs(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(*a, g.to_vec());
                }
                if needs(*b) {
                    acc(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                }
                if needs(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                if needs(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(g, y)| g / y).collect());
                }
                if needs(*b) {
                    acc(
                        *b,
                        g.iter()
                            .zip(val(*a))
                            .zip(val(*b))
                            .map(|((g, x), y)| -g * x / (y * y))
                            .collect(),
                    );
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Square(a) => acc(*a, g.iter().zip(val(*a)).map(|(g, x)| 2.0 * x * g).collect()),
            Op::Sum(a) => acc(*a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::RowMean(a) => {
                let n = g.len();
                let m = val(*a).len() / n;
                let mut d = Vec::with_capacity(n * m);
                for gv in g {
                    d.extend(std::iter::repeat_n(gv / m as f64, m));
                }
                acc(*a, d);
            }
            Op::SubRow(a, r) => {
                let n = val(*r).len();
                let m = val(*a).len() / n.max(1);
                if needs(*a) {
                    acc(*a, g.to_vec());
                }
                if needs(*r) {
                    acc(*r, g.chunks(m.max(1)).map(|row| -row.iter().sum::<f64>()).collect());
                }
            }
            Op::LeakyRelu(a, slope) => acc(
                *a,
                g.iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x >= 0.0 { *g } else { slope * g })
                    .collect(),
            ),
            Op::Conv2d { x, w, b, geom } => {
                if needs(*x) {
                    acc(*x, conv::conv_backward_input(g, val(*w), geom));
                }
                if needs(*w) {
                    acc(*w, conv::conv_backward_weight(val(*x), g, geom));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        acc(*b, conv::channel_sum(g, geom.n, geom.c_out, geom.oh * geom.ow));
                    }
                }
            }
            Op::Deconv2d { x, w, b, geom } => {
                if needs(*x) {
                    acc(*x, conv::conv_forward(g, val(*w), None, geom));
                }
                if needs(*w) {
                    acc(*w, conv::conv_backward_weight(g, val(*x), geom));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        acc(*b, conv::channel_sum(g, geom.n, geom.c_in, geom.h * geom.w));
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = self.nodes[x.0].value.shape();
                let (n, c) = (shape[0], shape[1]);
                let plane: usize = shape[2..].iter().product();
                let m = (n * plane) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * plane;
                        for j in off..off + plane {
                            dgamma[ci] += g[j] * xhat[j];
                            dbeta[ci] += g[j];
                        }
                    }
                }
                if needs(*x) {
                    let gam = val(*gamma);
                    let mut dx = vec![0.0; g.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let off = (ni * c + ci) * plane;
                            let k = gam[ci] * inv_std[ci];
                            for j in off..off + plane {
                                dx[j] = if *batch_stats {
                                    k * (g[j] - dbeta[ci] / m - xhat[j] * dgamma[ci] / m)
                                } else {
                                    k * g[j]
                                };
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if needs(*gamma) {
                    acc(*gamma, dgamma);
                }
                if needs(*beta) {
                    acc(*beta, dbeta);
                }
            }
            Op::Gap(x) => {
                let plane = val(*x).len() / g.len();
                let mut d = Vec::with_capacity(val(*x).len());
                for gv in g {
                    d.extend(std::iter::repeat_n(gv / plane as f64, plane));
                }
                acc(*x, d);
            }
            Op::ConcatFeatures(parts) => {
                let shape = self.nodes[i].value.shape();
                let n = shape[0];
                let tail: usize = shape[2..].iter().product();
                let total = shape[1] * tail;
                let mut offset = 0;
                for &p in parts {
                    let width = self.nodes[p.0].value.shape()[1] * tail;
                    if needs(p) {
                        let mut d = Vec::with_capacity(n * width);
                        for ni in 0..n {
                            d.extend_from_slice(&g[ni * total + offset..][..width]);
                        }
                        acc(p, d);
                    }
                    offset += width;
                }
            }
            Op::SliceBatch(x, start) => {
                let src = val(*x);
                let n = self.nodes[x.0].value.shape()[0];
                let per = src.len() / n;
                let mut d = vec![0.0; src.len()];
                d[start * per..start * per + g.len()].copy_from_slice(g);
                acc(*x, d);
            }
            Op::ConcatBatch(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if needs(p) {
                        acc(p, g[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::Crop { x, y0, x0, flip } => {
                let (_, _, h, w) = self.nodes[x.0].value.dims4()?;
                let size = self.nodes[i].value.shape()[3];
                let mut d = vec![0.0; val(*x).len()];
                for (plane, gp) in d.chunks_mut(h * w).zip(g.chunks(size * size)) {
                    for r in 0..size {
                        let dst = &mut plane[(y0 + r) * w + x0..][..size];
                        let src = &gp[r * size..][..size];
                        for cidx in 0..size {
                            let s = if *flip { src[size - 1 - cidx] } else { src[cidx] };
                            dst[cidx] += s;
                        }
                    }
                }
                acc(*x, d);
            }
            Op::SelectChannel(x, channel) => {
                let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
                let plane = h * w;
                let mut d = vec![0.0; n * c * plane];
                for ni in 0..n {
                    d[(ni * c + channel) * plane..][..plane].copy_from_slice(&g[ni * plane..][..plane]);
                }
                acc(*x, d);
            }
            Op::Linear { x, w, b } => {
                let shape = self.nodes[x.0].value.shape();
                let (n, f) = (shape[0], shape[1]);
                let o = self.nodes[w.0].value.shape()[0];
                let xs = val(*x);
                let ws = val(*w);
                if needs(*x) {
                    let mut dx = vec![0.0; n * f];
                    for ni in 0..n {
                        for oi in 0..o {
                            let gv = g[ni * o + oi];
                            let wr = &ws[oi * f..][..f];
                            dx[ni * f..][..f].iter_mut().zip(wr).for_each(|(d, w)| *d += gv * w);
                        }
                    }
                    acc(*x, dx);
                }
                if needs(*w) {
                    let mut dw = vec![0.0; o * f];
                    for ni in 0..n {
                        let xr = &xs[ni * f..][..f];
                        for oi in 0..o {
                            let gv = g[ni * o + oi];
                            dw[oi * f..][..f].iter_mut().zip(xr).for_each(|(d, x)| *d += gv * x);
                        }
                    }
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let mut db = vec![0.0; o];
                        for row in g.chunks(o) {
                            add_into(&mut db, row);
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut d = probs.clone();
                for (ni, &l) in labels.iter().enumerate() {
                    d[ni * k + l] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, d);
            }
        }
        Ok(())
    }
}
