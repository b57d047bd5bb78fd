use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// Zero padding on each side of a 2-D feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(h: usize, w: usize) -> Self {
        Self {
            top: h,
            bottom: h,
            left: w,
            right: w,
        }
    }

    /// Keeps spatial size at stride 1; even kernels pad one extra row/column
    /// at the bottom/right.
    pub fn same(kernel: (usize, usize)) -> Self {
        let (th, tw) = (kernel.0 - 1, kernel.1 - 1);
        Self {
            top: th / 2,
            bottom: th - th / 2,
            left: tw / 2,
            right: tw - tw / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl ConvSpec {
    /// Stride-1 convolution with "same" padding.
    pub fn same(in_ch: usize, out_ch: usize, kernel: (usize, usize)) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride: (1, 1),
            padding: Padding::same(kernel),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransposedConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    /// Cropped from each side of the full output.
    pub padding: (usize, usize),
    /// Extra rows/columns appended at the bottom/right.
    pub output_padding: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv2d(ConvSpec),
    TransposedConv2d(TransposedConvSpec),
    Relu,
    BatchNorm { channels: usize },
    /// Sum of two inputs, or first minus second when `subtract`.
    Add { subtract: bool },
    /// Fixed bilinear resize (half-pixel centres) to `height` x `width`.
    BilinearUpsample { height: usize, width: usize },
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Conv2d(_) => "Conv2d",
            LayerSpec::TransposedConv2d(_) => "TransposedConv2d",
            LayerSpec::Relu => "ReLU",
            LayerSpec::BatchNorm { .. } => "BatchNorm",
            LayerSpec::Add { .. } => "Add",
            LayerSpec::BilinearUpsample { .. } => "BilinearUpsample",
        }
    }

    pub(crate) fn kind_id(&self) -> u32 {
        match self {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Conv2d(_) => 2,
            LayerSpec::TransposedConv2d(_) => 3,
            LayerSpec::Relu => 4,
            LayerSpec::BatchNorm { .. } => 5,
            LayerSpec::Add { .. } => 6,
            LayerSpec::BilinearUpsample { .. } => 7,
        }
    }

    /// Integers identifying the layer's configuration in weight manifests.
    pub(crate) fn manifest_ints(&self) -> Vec<u32> {
        let u = |v: usize| v as u32;
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![u(inputs), u(outputs)],
            LayerSpec::Conv2d(c) => vec![
                u(c.in_ch),
                u(c.out_ch),
                u(c.kernel.0),
                u(c.kernel.1),
                u(c.stride.0),
                u(c.stride.1),
                u(c.padding.top),
                u(c.padding.bottom),
                u(c.padding.left),
                u(c.padding.right),
            ],
            LayerSpec::TransposedConv2d(t) => vec![
                u(t.in_ch),
                u(t.out_ch),
                u(t.kernel.0),
                u(t.kernel.1),
                u(t.stride.0),
                u(t.stride.1),
                u(t.padding.0),
                u(t.padding.1),
                u(t.output_padding.0),
                u(t.output_padding.1),
            ],
            LayerSpec::Relu => vec![],
            LayerSpec::BatchNorm { channels } => vec![u(channels)],
            LayerSpec::Add { subtract } => vec![subtract as u32],
            LayerSpec::BilinearUpsample { height, width } => vec![u(height), u(width)],
        }
    }

    pub fn n_inputs(&self) -> usize {
        match self {
            LayerSpec::Add { .. } => 2,
            _ => 1,
        }
    }

    /// Output sample shape given the input sample shapes.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> std::result::Result<Vec<usize>, String> {
        if inputs.len() != self.n_inputs() {
            return Err(format!("expects {} inputs, got {}", self.n_inputs(), inputs.len()));
        }
        let x = inputs[0];
        let spatial = |c: usize| -> std::result::Result<(usize, usize), String> {
            match x {
                [h, w, ch] if *ch == c => Ok((*h, *w)),
                _ => Err(format!("expects [H, W, {c}] input, got {x:?}")),
            }
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                let n: usize = x.iter().product();
                if n != inputs {
                    return Err(format!("expects {inputs} input features, got {n} ({x:?})"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv2d(c) => {
                let (h, w) = spatial(c.in_ch)?;
                let ph = h + c.padding.top + c.padding.bottom;
                let pw = w + c.padding.left + c.padding.right;
                if c.kernel.0 == 0 || c.kernel.1 == 0 || c.stride.0 == 0 || c.stride.1 == 0 {
                    return Err("kernel and stride must be positive".into());
                }
                if ph < c.kernel.0 || pw < c.kernel.1 {
                    return Err(format!("kernel {:?} larger than padded input {ph}x{pw}", c.kernel));
                }
                Ok(vec![(ph - c.kernel.0) / c.stride.0 + 1, (pw - c.kernel.1) / c.stride.1 + 1, c.out_ch])
            }
            LayerSpec::TransposedConv2d(t) => {
                let (h, w) = spatial(t.in_ch)?;
                if h == 0 || w == 0 || t.stride.0 == 0 || t.stride.1 == 0 {
                    return Err("input and stride must be positive".into());
                }
                let full_h = (h - 1) * t.stride.0 + t.kernel.0 + t.output_padding.0;
                let full_w = (w - 1) * t.stride.1 + t.kernel.1 + t.output_padding.1;
                if full_h <= 2 * t.padding.0 || full_w <= 2 * t.padding.1 {
                    return Err("padding crops the whole output".into());
                }
                Ok(vec![full_h - 2 * t.padding.0, full_w - 2 * t.padding.1, t.out_ch])
            }
            LayerSpec::Relu => Ok(x.to_vec()),
            LayerSpec::BatchNorm { channels } => {
                if x.last() != Some(&channels) {
                    return Err(format!("expects {channels} channels last, got {x:?}"));
                }
                Ok(x.to_vec())
            }
            LayerSpec::Add { .. } => {
                if inputs[0] != inputs[1] {
                    return Err(format!("operand shapes differ: {:?} vs {:?}", inputs[0], inputs[1]));
                }
                Ok(x.to_vec())
            }
            LayerSpec::BilinearUpsample { height, width } => match x {
                [_, _, c] if height > 0 && width > 0 => Ok(vec![height, width, *c]),
                _ => Err(format!("expects [H, W, C] input and positive target, got {x:?}")),
            },
        }
    }

    /// Shapes of the learnable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            LayerSpec::Conv2d(c) => vec![vec![c.kernel.0, c.kernel.1, c.in_ch, c.out_ch], vec![c.out_ch]],
            LayerSpec::TransposedConv2d(t) => vec![vec![t.in_ch, t.kernel.0, t.kernel.1, t.out_ch], vec![t.out_ch]],
            LayerSpec::BatchNorm { channels } => vec![vec![channels], vec![channels]],
            _ => vec![],
        }
    }

    /// Non-learned state (BatchNorm running mean and variance).
    pub fn buffer_lens(&self) -> Vec<usize> {
        match *self {
            LayerSpec::BatchNorm { channels } => vec![channels, channels],
            _ => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Operation count in the `2 · (output positions) · (kernel product)`
    /// convention; zero for parameter-free element-wise layers.
    pub fn op_count(&self, out_shape: &[usize]) -> u64 {
        let hw = |s: &[usize]| (s[0] * s[1]) as u64;
        match *self {
            LayerSpec::Dense { inputs, outputs } => 2 * (inputs * outputs) as u64,
            LayerSpec::Conv2d(c) => 2 * hw(out_shape) * (c.kernel.0 * c.kernel.1 * c.in_ch * c.out_ch) as u64,
            LayerSpec::TransposedConv2d(t) => 2 * hw(out_shape) * (t.kernel.0 * t.kernel.1 * t.in_ch * t.out_ch) as u64,
            LayerSpec::BilinearUpsample { .. } => 2 * hw(out_shape) * 4 * out_shape[2] as u64,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d(c) => c.kernel.0 * c.kernel.1 * c.in_ch,
            // each output position sees about (k/s) taps per axis
            LayerSpec::TransposedConv2d(t) => {
                ((t.kernel.0 * t.kernel.1 * t.in_ch) / (t.stride.0 * t.stride.1)).max(1)
            }
            _ => 1,
        }
    }

    fn fan_out(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2d(c) => c.kernel.0 * c.kernel.1 * c.out_ch,
            LayerSpec::TransposedConv2d(t) => {
                ((t.kernel.0 * t.kernel.1 * t.out_ch) / (t.stride.0 * t.stride.1)).max(1)
            }
            _ => 1,
        }
    }

    /// Glorot-uniform weights, zero biases, unit BatchNorm scale. Values are
    /// representable in `f32` so weight files round-trip exactly.
    pub(crate) fn init_params(&self, seed: u64, layer_index: usize) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(seed, &[purpose::INIT, layer_index as u64]);
        let shapes = self.param_shapes();
        match self {
            LayerSpec::BatchNorm { channels } => vec![vec![1.0; *channels], vec![0.0; *channels]],
            LayerSpec::Dense { .. } | LayerSpec::Conv2d(_) | LayerSpec::TransposedConv2d(_) => {
                let bound = (6.0 / (self.fan_in() + self.fan_out()) as f64).sqrt();
                let n_w: usize = shapes[0].iter().product();
                let w = (0..n_w)
                    .map(|_| (rng.random_range(-bound..bound) as f32) as f64)
                    .collect();
                vec![w, vec![0.0; shapes[1][0]]]
            }
            _ => vec![],
        }
    }

    pub(crate) fn init_buffers(&self) -> Vec<Vec<f64>> {
        match *self {
            LayerSpec::BatchNorm { channels } => vec![vec![0.0; channels], vec![1.0; channels]],
            _ => vec![],
        }
    }

    pub(crate) fn layer_error(&self, index: usize, reason: impl Into<String>) -> Error {
        Error::Layer {
            index,
            kind: self.kind(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_finite(values: &[f64], index: usize, spec: &LayerSpec) -> Result<()> {
    if cfg!(debug_assertions) && values.iter().any(|v| !v.is_finite()) {
        return Err(spec.layer_error(index, "produced a non-finite value"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding() {
        assert_eq!(Padding::same((3, 3)), Padding::symmetric(1, 1));
        let p = Padding::same((36, 7));
        assert_eq!((p.top, p.bottom, p.left, p.right), (17, 18, 3, 3));
    }

    #[test]
    fn transposed_geometry_maps_pilots_to_frame() {
        let t = LayerSpec::TransposedConv2d(TransposedConvSpec {
            in_ch: 16,
            out_ch: 16,
            kernel: (11, 11),
            stride: (3, 7),
            padding: (4, 2),
            output_padding: (0, 0),
        });
        assert_eq!(t.output_shape(&[&[24, 2, 16]]).unwrap(), vec![72, 14, 16]);
        assert_eq!(t.param_count(), 11 * 11 * 16 * 16 + 16);
    }

    #[test]
    fn dense_counts() {
        let d = LayerSpec::Dense { inputs: 2, outputs: 3 };
        assert_eq!(d.param_count(), 9);
        assert!(d.output_shape(&[&[4]]).is_err());
    }
}
