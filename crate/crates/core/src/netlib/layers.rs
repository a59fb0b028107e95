use crate::diffcore::{batchnorm2d, kaiming_init, BnConfig, BnMode, Bound, BufferId, Graph, ParamGroup, ParamId, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Convolution (or transposed convolution) without bias, followed by batch
/// norm and LeakyReLU.
#[derive(Clone, Debug)]
pub(crate) struct ConvBnAct {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
    stride: usize,
    pad: usize,
    transposed: bool,
}

/// Effective fan-in of a transposed convolution: each output pixel sees
/// `c_in * (k / stride)^2` taps.
pub(crate) fn deconv_fan_in(c_in: usize, k: usize, stride: usize) -> usize {
    (c_in * k * k / (stride * stride)).max(1)
}

impl ConvBnAct {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        group: &mut ParamGroup,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        transposed: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (shape, fan_in) = if transposed {
            ([c_in, c_out, k, k], deconv_fan_in(c_in, k, stride))
        } else {
            ([c_out, c_in, k, k], c_in * k * k)
        };
        let w = group.add_param(format!("{name}.w"), kaiming_init(&shape, fan_in, rng)?);
        let gamma = group.add_param(format!("{name}.bn.gamma"), Tensor::full(&[c_out], 1.0));
        let beta = group.add_param(format!("{name}.bn.beta"), Tensor::zeros(&[c_out]));
        let running_mean = group.add_buffer(format!("{name}.bn.running_mean"), Tensor::zeros(&[c_out]));
        let running_var = group.add_buffer(format!("{name}.bn.running_var"), Tensor::full(&[c_out], 1.0));
        Ok(ConvBnAct {
            w,
            gamma,
            beta,
            running_mean,
            running_var,
            stride,
            pad,
            transposed,
        })
    }

    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        group: &mut ParamGroup,
        x: Var,
        mode: BnMode,
        slope: f64,
    ) -> Result<Var> {
        let w = bound.get(self.w);
        let y = if self.transposed {
            g.deconv2d(x, w, None, self.stride, self.pad)?
        } else {
            g.conv2d(x, w, None, self.stride, self.pad)?
        };
        let mode = effective_mode(group, mode);
        let (rm, rv) = group.buffer_pair_mut(self.running_mean, self.running_var);
        let y = batchnorm2d(
            g,
            y,
            bound.get(self.gamma),
            bound.get(self.beta),
            rm,
            rv,
            mode,
            BnConfig::default(),
        )?;
        Ok(g.leaky_relu(y, slope))
    }
}

/// A frozen group never updates its running statistics.
pub(crate) fn effective_mode(group: &ParamGroup, mode: BnMode) -> BnMode {
    if group.is_frozen() && mode == BnMode::Train {
        BnMode::Frozen
    } else {
        mode
    }
}

/// Plain convolution or transposed convolution with bias.
#[derive(Clone, Debug)]
pub(crate) struct ConvBias {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
    transposed: bool,
}

impl ConvBias {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        group: &mut ParamGroup,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        transposed: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (shape, fan_in) = if transposed {
            ([c_in, c_out, k, k], deconv_fan_in(c_in, k, stride))
        } else {
            ([c_out, c_in, k, k], c_in * k * k)
        };
        let w = group.add_param(format!("{name}.w"), kaiming_init(&shape, fan_in, rng)?);
        let b = group.add_param(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Ok(ConvBias {
            w,
            b,
            stride,
            pad,
            transposed,
        })
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        let (w, b) = (bound.get(self.w), Some(bound.get(self.b)));
        if self.transposed {
            g.deconv2d(x, w, b, self.stride, self.pad)
        } else {
            g.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    pub(crate) fn new(group: &mut ParamGroup, name: &str, c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        let w = group.add_param(format!("{name}.w"), kaiming_init(&[c_out, c_in], c_in, rng)?);
        let b = group.add_param(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Ok(Dense { w, b })
    }

    pub(crate) fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var> {
        g.linear(x, bound.get(self.w), Some(bound.get(self.b)))
    }
}
