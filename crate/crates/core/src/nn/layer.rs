use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::ops::{valid_out, Activation};
use crate::rng::uniform;
use crate::tensor::Tensor;

/// Structural description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid-padding convolution. Linear; follow with an `Activation` layer.
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        filters: usize,
        stride: usize,
    },
    MaxPool2d {
        pool: usize,
        stride: usize,
    },
    GlobalAvgPool,
    /// Affine map on a vector followed by `activation`. With `concat_input`
    /// the raw input is appended after the units, DenseNet style.
    Dense {
        inputs: usize,
        units: usize,
        activation: Activation,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        concat_input: bool,
    },
    Activation {
        activation: Activation,
    },
    /// Per-channel scalar multipliers inserted on a block output.
    Gate {
        channels: usize,
    },
}

impl LayerSpec {
    pub fn conv2d(kernel: usize, in_channels: usize, filters: usize) -> Self {
        LayerSpec::Conv2d {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            filters,
            stride: 1,
        }
    }

    pub fn maxpool(pool: usize) -> Self {
        LayerSpec::MaxPool2d { pool, stride: pool }
    }

    pub fn dense(inputs: usize, units: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            inputs,
            units,
            activation,
            concat_input: false,
        }
    }

    pub fn relu() -> Self {
        LayerSpec::Activation {
            activation: Activation::Relu,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::GlobalAvgPool => "globalavgpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Gate { .. } => "gate",
        }
    }

    /// Layers whose outputs mix input channels through trainable weights.
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Layers that act on each channel independently and keep the channel count.
    pub fn is_channelwise(&self) -> bool {
        matches!(
            self,
            LayerSpec::MaxPool2d { .. }
                | LayerSpec::GlobalAvgPool
                | LayerSpec::Activation { .. }
                | LayerSpec::Gate { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                filters,
                stride,
                ..
            } => {
                if kernel_h == 0 || kernel_w == 0 || stride == 0 {
                    return Err(SorError::invalid("conv2d kernel dims and stride must be >= 1"));
                }
                if filters == 0 {
                    return Err(SorError::invalid("conv2d needs at least one filter"));
                }
            }
            LayerSpec::MaxPool2d { pool, stride } => {
                if pool == 0 || stride == 0 {
                    return Err(SorError::invalid("pool size and stride must be >= 1"));
                }
            }
            LayerSpec::Dense { units, .. } => {
                if units == 0 {
                    return Err(SorError::invalid("dense layer needs at least one unit"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let image = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(SorError::dim(format!("{what} expects H x W x C input, got {input:?}"))),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_channels,
                filters,
                stride,
            } => {
                let (h, w, c) = image("conv2d")?;
                if c != in_channels {
                    return Err(SorError::dim(format!(
                        "conv2d expects {in_channels} input channels, got {c}"
                    )));
                }
                match (valid_out(h, kernel_h, stride), valid_out(w, kernel_w, stride)) {
                    (Some(ho), Some(wo)) => Ok(vec![ho, wo, filters]),
                    _ => Err(SorError::dim(format!(
                        "kernel {kernel_h}x{kernel_w} does not fit a {h}x{w} input"
                    ))),
                }
            }
            LayerSpec::MaxPool2d { pool, stride } => {
                let (h, w, c) = image("maxpool2d")?;
                match (valid_out(h, pool, stride), valid_out(w, pool, stride)) {
                    (Some(ho), Some(wo)) => Ok(vec![ho, wo, c]),
                    _ => Err(SorError::dim(format!("pool {pool} does not fit a {h}x{w} input"))),
                }
            }
            LayerSpec::GlobalAvgPool => {
                let (h, w, c) = image("globalavgpool")?;
                if h == 0 || w == 0 {
                    return Err(SorError::dim("global average pool over an empty extent"));
                }
                Ok(vec![c])
            }
            LayerSpec::Dense {
                inputs,
                units,
                concat_input,
                ..
            } => {
                let n: usize = input.iter().product();
                if input.len() != 1 || n != inputs {
                    return Err(SorError::dim(format!(
                        "dense layer expects a vector of {inputs}, got {input:?}"
                    )));
                }
                Ok(vec![if concat_input { units + inputs } else { units }])
            }
            LayerSpec::Activation { .. } => Ok(input.to_vec()),
            LayerSpec::Gate { channels } => {
                if input.last() != Some(&channels) {
                    return Err(SorError::dim(format!(
                        "gate of {channels} channels applied to shape {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Shapes of the parameter tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_channels,
                filters,
                ..
            } => vec![
                ("weight", vec![kernel_h, kernel_w, in_channels, filters]),
                ("bias", vec![filters]),
            ],
            LayerSpec::Dense { inputs, units, .. } => {
                vec![("weight", vec![inputs, units]), ("bias", vec![units])]
            }
            LayerSpec::Gate { channels } => vec![("beta", vec![channels])],
            _ => Vec::new(),
        }
    }

    /// `(fan_in, fan_out)` used by Glorot initialization.
    fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                kernel_h,
                kernel_w,
                in_channels,
                filters,
                ..
            } => {
                let area = kernel_h * kernel_w;
                Some((area * in_channels, area * filters))
            }
            LayerSpec::Dense { inputs, units, .. } => Some((inputs, units)),
            _ => None,
        }
    }
}

/// A named parameter tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// One layer: its spec, its parameters and whether they are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Param>,
    pub frozen: bool,
}

impl Layer {
    /// Builds a layer with Glorot-uniform weights, zero biases and unit gates.
    /// Draws happen only for the weight tensor, in row-major order.
    pub fn init(spec: LayerSpec, rng: &mut impl RngCore) -> Result<Self> {
        spec.validate()?;
        let fans = spec.fans();
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let value = match (name, fans) {
                    ("weight", Some((fan_in, fan_out))) => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        let n: usize = shape.iter().product();
                        let data = (0..n).map(|_| uniform(rng, -limit, limit)).collect();
                        Tensor::new(shape, data).expect("shape product matches")
                    }
                    ("beta", _) => Tensor::full(&shape, 1.0),
                    _ => Tensor::zeros(&shape),
                };
                Param::new(name, value)
            })
            .collect();
        Ok(Layer {
            spec,
            params,
            frozen: false,
        })
    }

    /// Builds a layer from explicit parameter values.
    pub fn with_params(spec: LayerSpec, values: Vec<Tensor>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != values.len() {
            return Err(SorError::dim(format!(
                "{} layer takes {} parameter tensors, got {}",
                spec.name(),
                shapes.len(),
                values.len()
            )));
        }
        let params = shapes
            .into_iter()
            .zip(values)
            .map(|((name, shape), value)| {
                if value.shape() != shape.as_slice() {
                    Err(SorError::dim(format!(
                        "{} {name} must have shape {shape:?}, got {:?}",
                        spec.name(),
                        value.shape()
                    )))
                } else {
                    Ok(Param::new(name, value))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Layer {
            spec,
            params,
            frozen: false,
        })
    }

    pub fn has_params(&self) -> bool {
        !self.params.is_empty()
    }

    pub fn trainable(&self) -> bool {
        !self.frozen && self.has_params()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Drops output channels (filters, units or gate entries) not in `keep`.
    pub(crate) fn keep_outputs(&mut self, keep: &[usize]) {
        match &mut self.spec {
            LayerSpec::Conv2d { filters, .. } => {
                *filters = keep.len();
                self.params[0].value = self.params[0].value.select(3, keep);
                self.params[1].value = self.params[1].value.select(0, keep);
            }
            LayerSpec::Dense { units, .. } => {
                *units = keep.len();
                self.params[0].value = self.params[0].value.select(1, keep);
                self.params[1].value = self.params[1].value.select(0, keep);
            }
            LayerSpec::Gate { channels } => {
                *channels = keep.len();
                self.params[0].value = self.params[0].value.select(0, keep);
            }
            _ => {}
        }
        self.reset_grads();
    }

    /// Drops input channels not in `keep` from a weighted layer.
    pub(crate) fn keep_inputs(&mut self, keep: &[usize]) {
        match &mut self.spec {
            LayerSpec::Conv2d { in_channels, .. } => {
                *in_channels = keep.len();
                self.params[0].value = self.params[0].value.select(2, keep);
            }
            LayerSpec::Dense { inputs, .. } => {
                *inputs = keep.len();
                self.params[0].value = self.params[0].value.select(0, keep);
            }
            _ => {}
        }
        self.reset_grads();
    }

    fn reset_grads(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Axis of the weight tensor indexed by input channel, for weighted layers.
    pub fn input_axis(&self) -> Option<usize> {
        match self.spec {
            LayerSpec::Conv2d { .. } => Some(2),
            LayerSpec::Dense { .. } => Some(0),
            _ => None,
        }
    }

    /// Axis of the weight tensor indexed by output channel, for weighted layers.
    pub fn output_axis(&self) -> Option<usize> {
        match self.spec {
            LayerSpec::Conv2d { .. } => Some(3),
            LayerSpec::Dense { .. } => Some(1),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn glorot_limits_and_zero_bias() {
        let mut rng = stream(1);
        let layer = Layer::init(LayerSpec::conv2d(3, 1, 10), &mut rng).unwrap();
        let limit = (6.0f64 / (9.0 + 90.0)).sqrt();
        assert!(layer.params[0].value.data().iter().all(|w| w.abs() <= limit));
        assert!(layer.params[1].value.data().iter().all(|&b| b == 0.0));
        assert_eq!(layer.param_count(), 9 * 10 + 10);
    }

    #[test]
    fn gates_start_at_one() {
        let mut rng = stream(1);
        let gate = Layer::init(LayerSpec::Gate { channels: 4 }, &mut rng).unwrap();
        assert!(gate.params[0].value.data().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn spec_validation() {
        assert!(LayerSpec::conv2d(3, 1, 0).validate().is_err());
        assert!(LayerSpec::conv2d(0, 1, 2).validate().is_err());
        assert!(LayerSpec::dense(4, 0, Activation::Sigmoid).validate().is_err());
        assert!(LayerSpec::conv2d(5, 1, 2).output_shape(&[4, 4, 1]).is_err());
        assert_eq!(
            LayerSpec::conv2d(3, 1, 2).output_shape(&[32, 32, 1]).unwrap(),
            vec![30, 30, 2]
        );
    }
}
