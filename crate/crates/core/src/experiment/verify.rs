use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::model::ModelGraph;
use crate::rng::{stream, uniform};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub n_inputs: usize,
    pub tol: f64,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Compares the outputs of two models on `n_inputs` random inputs drawn
/// uniformly from `[-3, 3)`, roughly the range of standardized images.
pub fn verify_models(a: &ModelGraph, b: &ModelGraph, n_inputs: usize, tol: f64, seed: u64) -> Result<VerifyReport> {
    if a.input_shape() != b.input_shape() {
        return Err(SorError::dim(format!(
            "input shapes differ: {:?} vs {:?}",
            a.input_shape(),
            b.input_shape()
        )));
    }
    if a.output_shape()? != b.output_shape()? {
        return Err(SorError::dim("output shapes differ"));
    }
    if !(tol >= 0.0) {
        return Err(SorError::invalid("tolerance must be >= 0"));
    }
    let mut rng = stream(seed);
    let shape = a.input_shape().to_vec();
    let len: usize = shape.iter().product();
    let mut max_abs_diff = 0.0f64;
    for _ in 0..n_inputs {
        let x = Tensor::new(shape.clone(), (0..len).map(|_| uniform(&mut rng, -3.0, 3.0)).collect())?;
        let d = a.forward(&x)?.max_abs_diff(&b.forward(&x)?)?;
        // NaN never compares greater, so keep it explicitly.
        if d.is_nan() || d > max_abs_diff {
            max_abs_diff = d;
        }
    }
    Ok(VerifyReport {
        n_inputs,
        tol,
        max_abs_diff,
        passed: max_abs_diff <= tol,
    })
}
