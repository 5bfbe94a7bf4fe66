//! Trainable parameter sets attached to graph nodes.

/// Convolution geometry. Weights are laid out `out_ch × in_ch × kh × kw`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvAttrs {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl ConvAttrs {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        ConvAttrs {
            in_ch,
            out_ch,
            kh: k,
            kw: k,
            stride,
            pad,
            bias,
        }
    }

    /// Elements in one output filter.
    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.fan_in()
    }

    /// Output spatial size, or `None` when the kernel does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if self.stride == 0 || ph < self.kh || pw < self.kw {
            return None;
        }
        Some((
            (ph - self.kh) / self.stride + 1,
            (pw - self.kw) / self.stride + 1,
        ))
    }
}

/// Max-pool window. The default is the 2×2, stride-2 reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolAttrs {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Default for PoolAttrs {
    fn default() -> Self {
        PoolAttrs {
            kernel: 2,
            stride: 2,
            pad: 0,
        }
    }
}

impl PoolAttrs {
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if self.stride == 0 || self.kernel == 0 || ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnParams {
    /// Identity-initialised layer: γ=1, β=0, mean 0, var 1.
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_consistent(&self) -> bool {
        let c = self.gamma.len();
        self.beta.len() == c
            && self.running_mean.len() == c
            && self.running_var.len() == c
            && self.running_var.iter().all(|v| *v >= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerTensors {
    Conv(ConvParams),
    BatchNorm(BnParams),
}

impl LayerTensors {
    pub fn as_conv(&self) -> Option<&ConvParams> {
        match self {
            LayerTensors::Conv(p) => Some(p),
            _ => None,
        }
    }
    pub fn as_bn(&self) -> Option<&BnParams> {
        match self {
            LayerTensors::BatchNorm(p) => Some(p),
            _ => None,
        }
    }
    pub fn as_bn_mut(&mut self) -> Option<&mut BnParams> {
        match self {
            LayerTensors::BatchNorm(p) => Some(p),
            _ => None,
        }
    }
}

/// Gradients for one node's trainable parameters. Shapes mirror the
/// parameters; BN running statistics are not trainable.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrads {
    Conv {
        weight: Vec<f64>,
        bias: Option<Vec<f64>>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
    },
}

impl LayerGrads {
    /// Zero buffers shaped like `params`.
    pub fn zeros_like(params: &LayerTensors) -> Self {
        match params {
            LayerTensors::Conv(p) => LayerGrads::Conv {
                weight: vec![0.0; p.weight.len()],
                bias: p.bias.as_ref().map(|b| vec![0.0; b.len()]),
            },
            LayerTensors::BatchNorm(p) => LayerGrads::BatchNorm {
                gamma: vec![0.0; p.gamma.len()],
                beta: vec![0.0; p.beta.len()],
            },
        }
    }

    /// Flat views of every buffer, in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        match self {
            LayerGrads::Conv { weight, bias } => {
                let mut v = vec![weight.as_slice()];
                if let Some(b) = bias {
                    v.push(b.as_slice());
                }
                v
            }
            LayerGrads::BatchNorm { gamma, beta } => vec![gamma.as_slice(), beta.as_slice()],
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            LayerGrads::Conv { weight, bias } => {
                let mut v = vec![weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            LayerGrads::BatchNorm { gamma, beta } => vec![gamma, beta],
        }
    }
}

/// Mutable flat views of the trainable buffers of `params`, in the same
/// order as [`LayerGrads::buffers`].
pub fn trainable_buffers_mut(params: &mut LayerTensors) -> Vec<&mut Vec<f64>> {
    match params {
        LayerTensors::Conv(p) => {
            let mut v = vec![&mut p.weight];
            if let Some(b) = p.bias.as_mut() {
                v.push(b);
            }
            v
        }
        LayerTensors::BatchNorm(p) => vec![&mut p.gamma, &mut p.beta],
    }
}
