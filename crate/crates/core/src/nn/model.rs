use std::ops::Range;

use rand::RngCore;

use crate::error::{Result, SorError};
use crate::nn::layer::{Layer, LayerSpec};
use crate::nn::ops::{self, Activation};
use crate::sor::gates::{gate_backward, gate_forward};
use crate::tensor::Tensor;

/// Per-sample activations recorded by [`ModelGraph::forward_train`].
#[derive(Debug, Clone)]
struct ForwardCache {
    start: usize,
    inputs: Vec<Tensor>,
    outputs: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

/// A sequential model: an input shape and an ordered list of layers.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    cache: Option<ForwardCache>,
}

impl PartialEq for ModelGraph {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl ModelGraph {
    /// Initializes every layer from `rng`, in layer order.
    pub fn new(input_shape: Vec<usize>, specs: Vec<LayerSpec>, rng: &mut impl RngCore) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|s| Layer::init(s, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(input_shape, layers)
    }

    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let model = ModelGraph {
            input_shape,
            layers,
            cache: None,
        };
        model.shapes()?;
        Ok(model)
    }

    /// conv(3x3) -> relu -> maxpool(2) -> conv(3x3) -> relu -> gap -> dense(1, sigmoid).
    pub fn toy_cnn(input_shape: [usize; 3], filters: usize, rng: &mut impl RngCore) -> Result<Self> {
        if filters == 0 {
            return Err(SorError::invalid("filter count must be at least 1"));
        }
        let specs = vec![
            LayerSpec::conv2d(3, input_shape[2], filters),
            LayerSpec::relu(),
            LayerSpec::maxpool(2),
            LayerSpec::conv2d(3, filters, filters),
            LayerSpec::relu(),
            LayerSpec::GlobalAvgPool,
            LayerSpec::dense(filters, 1, Activation::Sigmoid),
        ];
        Self::new(input_shape.to_vec(), specs, rng)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Output shape of every layer (entry `l` is the output of layer `l`).
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            shape = layer
                .spec
                .output_shape(&shape)
                .map_err(|e| SorError::dim(format!("layer {l} ({}): {e}", layer.spec.name())))?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Shape of the tensor entering layer `l` (`l == len()` gives the model output).
    pub fn shape_before(&self, l: usize) -> Result<Vec<usize>> {
        if l == 0 {
            return Ok(self.input_shape.clone());
        }
        Ok(self.shapes()?.swap_remove(l - 1))
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.shape_before(self.layers.len())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Index of the first layer with trainable parameters, if any.
    pub fn first_trainable(&self) -> Option<usize> {
        self.layers.iter().position(Layer::trainable)
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for layer in &mut self.layers {
            layer.frozen = frozen;
        }
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_range(0..self.layers.len(), input)
    }

    /// Runs layers `range` on `input`, which must be the tensor entering `range.start`.
    pub fn forward_range(&self, range: Range<usize>, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for l in range {
            x = layer_forward(&self.layers[l], &x)?.0;
        }
        Ok(x)
    }

    /// Forward pass that records activations for a following [`Self::backward`].
    pub fn forward_train(&mut self, input: &Tensor) -> Result<Tensor> {
        self.forward_train_from(0, input)
    }

    /// Like [`Self::forward_train`] but starts at layer `start`; `input` is the
    /// tensor entering that layer. Backward then stops at `start`.
    pub fn forward_train_from(&mut self, start: usize, input: &Tensor) -> Result<Tensor> {
        if start == 0 && input.shape() != self.input_shape.as_slice() {
            return Err(SorError::dim(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        let n = self.layers.len() - start;
        let mut cache = ForwardCache {
            start,
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            argmax: Vec::with_capacity(n),
        };
        let mut x = input.clone();
        for layer in &self.layers[start..] {
            let (y, arg) = layer_forward(layer, &x)?;
            cache.inputs.push(x);
            cache.outputs.push(y.clone());
            cache.argmax.push(arg);
            x = y;
        }
        self.cache = Some(cache);
        Ok(x)
    }

    /// Back-propagates `grad_output` through the recorded pass, adding parameter
    /// gradients into every trainable layer. Frozen layers only pass gradients
    /// through. Consumes the cache.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| SorError::State("backward called before forward_train".into()))?;
        let start = cache.start;
        let Some(first) = self.layers[start..].iter().position(Layer::trainable) else {
            return Ok(());
        };
        let first = first + start;
        let mut grad = grad_output.clone();
        for l in (first..self.layers.len()).rev() {
            let c = l - start;
            let want_input = l > first;
            let layer = &mut self.layers[l];
            let trainable = layer.trainable();
            let input = &cache.inputs[c];
            let next = match layer.spec.clone() {
                LayerSpec::Conv2d { stride, .. } => {
                    let (w, rest) = layer.params.split_at_mut(1);
                    let pw = &mut w[0];
                    let grads = trainable.then(|| (&mut pw.grad, &mut rest[0].grad));
                    ops::conv2d_backward(input, &pw.value, stride, &grad, grads, want_input)?
                }
                LayerSpec::MaxPool2d { .. } => {
                    let arg = cache.argmax[c].as_ref().expect("maxpool records argmax");
                    Some(ops::maxpool2d_backward(input.shape(), arg, &grad))
                }
                LayerSpec::GlobalAvgPool => Some(ops::globalavgpool_backward(input.shape(), &grad)),
                LayerSpec::Dense {
                    units,
                    activation,
                    concat_input,
                    ..
                } => {
                    let out = &cache.outputs[c];
                    let (own_out, own_grad) = if concat_input {
                        (
                            Tensor::from_vec(out.data()[..units].to_vec()),
                            Tensor::from_vec(grad.data()[..units].to_vec()),
                        )
                    } else {
                        (out.clone(), grad.clone())
                    };
                    let (w, rest) = layer.params.split_at_mut(1);
                    let pw = &mut w[0];
                    let grads = trainable.then(|| (&mut pw.grad, &mut rest[0].grad));
                    let gi = ops::dense_backward(input, &pw.value, &own_out, activation, &own_grad, grads, want_input)?;
                    match (gi, concat_input) {
                        (Some(mut gi), true) => {
                            for (g, &p) in gi.data_mut().iter_mut().zip(&grad.data()[units..]) {
                                *g += p;
                            }
                            Some(gi)
                        }
                        (gi, _) => gi,
                    }
                }
                LayerSpec::Activation { activation } => {
                    let out = &cache.outputs[c];
                    let data = grad
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, &y)| g * activation.derivative_from_output(y))
                        .collect();
                    Some(Tensor::new(grad.shape().to_vec(), data)?)
                }
                LayerSpec::Gate { .. } => {
                    let beta = &mut layer.params[0];
                    let (gi, dbeta) = gate_backward(input, &beta.value, &grad)?;
                    if trainable {
                        for (b, d) in beta.grad.data_mut().iter_mut().zip(dbeta) {
                            *b += d;
                        }
                    }
                    Some(gi)
                }
            };
            if !want_input {
                break;
            }
            grad = next.expect("input gradient requested");
        }
        Ok(())
    }
}

/// Forward through one layer; maxpool also returns its argmax indices.
pub fn layer_forward(layer: &Layer, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
    let p = &layer.params;
    Ok(match layer.spec {
        LayerSpec::Conv2d { stride, .. } => (ops::conv2d_forward(x, &p[0].value, &p[1].value, stride)?, None),
        LayerSpec::MaxPool2d { pool, stride } => {
            let (y, arg) = ops::maxpool2d_forward(x, pool, stride)?;
            (y, Some(arg))
        }
        LayerSpec::GlobalAvgPool => (ops::globalavgpool_forward(x)?, None),
        LayerSpec::Dense {
            activation,
            concat_input,
            ..
        } => {
            let y = ops::dense_forward(x, &p[0].value, &p[1].value, activation)?;
            if concat_input {
                let mut data = y.into_data();
                data.extend_from_slice(x.data());
                (Tensor::from_vec(data), None)
            } else {
                (y, None)
            }
        }
        LayerSpec::Activation { activation } => {
            let data = x.data().iter().map(|&v| activation.apply(v)).collect();
            (Tensor::new(x.shape().to_vec(), data)?, None)
        }
        LayerSpec::Gate { .. } => (gate_forward(x, &p[0].value)?, None),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn toy_model_shapes() {
        let mut rng = stream(5);
        let model = ModelGraph::toy_cnn([32, 32, 1], 10, &mut rng).unwrap();
        let shapes = model.shapes().unwrap();
        assert_eq!(shapes[0], vec![30, 30, 10]);
        assert_eq!(shapes[2], vec![15, 15, 10]);
        assert_eq!(shapes[3], vec![13, 13, 10]);
        assert_eq!(shapes[5], vec![10]);
        assert_eq!(shapes[6], vec![1]);
        assert!(ModelGraph::toy_cnn([32, 32, 1], 0, &mut rng).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut rng = stream(5);
        let mut model = ModelGraph::toy_cnn([8, 8, 1], 2, &mut rng).unwrap();
        let err = model.backward(&Tensor::from_vec(vec![1.0]));
        assert!(matches!(err, Err(SorError::State(_))));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = stream(5);
        let mut model = ModelGraph::toy_cnn([8, 8, 1], 3, &mut rng).unwrap();
        let x = Tensor::new(vec![8, 8, 1], (0..64).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        model.forward_train(&x).unwrap();
        model.backward(&Tensor::from_vec(vec![0.0])).unwrap();
        for layer in &model.layers {
            for p in &layer.params {
                assert!(p.grad.data().iter().all(|&g| g == 0.0));
            }
        }
    }
}
