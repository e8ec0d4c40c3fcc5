#![allow(dead_code)]

use sor::nn::{Activation, LayerSpec, ModelGraph};
use sor::rng::{stream, uniform};
use sor::sor::{apply_sor, define_blocks_at, freeze, insert_gates, ObjectiveConfig, SorConfig, SorMeta};
use sor::Tensor;

pub fn random_inputs(shape: &[usize], n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = stream(seed);
    let len: usize = shape.iter().product();
    (0..n)
        .map(|_| Tensor::new(shape.to_vec(), (0..len).map(|_| uniform(&mut rng, -3.0, 3.0)).collect()).unwrap())
        .collect()
}

/// Inputs drawn from `[-1, 1)`, small enough to keep sigmoids off their tails.
pub fn unit_inputs(shape: &[usize], n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = stream(seed);
    let len: usize = shape.iter().product();
    (0..n)
        .map(|_| Tensor::new(shape.to_vec(), (0..len).map(|_| uniform(&mut rng, -1.0, 1.0)).collect()).unwrap())
        .collect()
}

/// Largest absolute output difference of two models over `inputs`.
pub fn max_output_diff(a: &ModelGraph, b: &ModelGraph, inputs: &[Tensor]) -> f64 {
    inputs
        .iter()
        .map(|x| a.forward(x).unwrap().max_abs_diff(&b.forward(x).unwrap()).unwrap())
        .fold(0.0, f64::max)
}

pub fn toy(filters: usize, seed: u64) -> ModelGraph {
    ModelGraph::toy_cnn([32, 32, 1], filters, &mut stream(seed)).unwrap()
}

/// Toy model with the standard SOR setup at `lambda1`.
pub fn toy_sor(filters: usize, seed: u64, lambda1: f64) -> (ModelGraph, ModelGraph, SorMeta) {
    let base = toy(filters, seed);
    let (gated, meta) = apply_sor(&base, &SorConfig::toy(lambda1)).unwrap();
    (base, gated, meta)
}

/// Parameters removed from the gated toy model when `g` conv1 channels
/// (gates) and `k` conv2 channels (dense groups) are cut, counted filter by
/// filter: a 3x3 filter over `c` input channels holds `9c + 1` parameters.
pub fn toy_removed_params(filters: usize, in_channels: usize, g: usize, k: usize) -> usize {
    let f = filters;
    let conv1 = g * (9 * in_channels + 1);
    let gates = g;
    let conv2_before = f * (9 * f + 1);
    let conv2_after = (f - k) * (9 * (f - g) + 1);
    let dense = k;
    conv1 + gates + (conv2_before - conv2_after) + dense
}

pub fn small_cnn(seed: u64) -> ModelGraph {
    let specs = vec![
        LayerSpec::conv2d(3, 2, 3),
        LayerSpec::relu(),
        LayerSpec::maxpool(2),
        LayerSpec::conv2d(3, 3, 4),
        LayerSpec::relu(),
        LayerSpec::GlobalAvgPool,
        LayerSpec::dense(4, 1, Activation::Sigmoid),
    ];
    ModelGraph::new(vec![10, 10, 2], specs, &mut stream(seed)).unwrap()
}

/// conv-relu-pool | conv-relu | conv-relu-gap | dense, frozen through block 2:
/// a gate after block 1, group lasso on the block 3 convolution (by input
/// channel) and on the dense layer.
pub fn gated_objective_model(seed: u64) -> (ModelGraph, ObjectiveConfig) {
    let specs = vec![
        LayerSpec::conv2d(3, 1, 3),
        LayerSpec::relu(),
        LayerSpec::maxpool(2),
        LayerSpec::conv2d(3, 3, 3),
        LayerSpec::relu(),
        LayerSpec::conv2d(3, 3, 4),
        LayerSpec::relu(),
        LayerSpec::GlobalAvgPool,
        LayerSpec::dense(4, 1, Activation::Sigmoid),
    ];
    let mut rng = stream(seed);
    let mut model = ModelGraph::new(vec![14, 14, 1], specs, &mut rng).unwrap();
    let mut partition = define_blocks_at(&model, &[0, 3, 5, 8]).unwrap();
    freeze(&mut model, &mut partition, 2).unwrap();
    let (mut gated, partition, gates) = insert_gates(&model, &partition).unwrap();
    // move gates away from 1 (and from 0, where |.| has a kink)
    let gl = gates.layer_of(1).unwrap();
    for b in gated.layers[gl].params[0].value.data_mut() {
        *b = uniform(&mut rng, 0.3, 1.5) * if uniform(&mut rng, 0.0, 1.0) < 0.3 { -1.0 } else { 1.0 };
    }
    let cfg = ObjectiveConfig::new(&gated, &partition, gates, 0.07, 0.02).unwrap();
    (gated, cfg)
}

/// Sum over input channels `k` of the Euclidean norm of every weight that
/// reads channel `k`, walking the raw `[kh, kw, cin, cout]` buffer.
pub fn conv_group_oracle(w: &[f64], kh: usize, kw: usize, cin: usize, cout: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..cin {
        let mut ss = 0.0;
        for a in 0..kh {
            for b in 0..kw {
                for o in 0..cout {
                    let v = w[((a * kw + b) * cin + k) * cout + o];
                    ss += v * v;
                }
            }
        }
        total += ss.sqrt();
    }
    total
}

