//! Central finite-difference verification of analytic gradients.

use crate::error::{Result, SorError};
use crate::nn::loss::LossKind;
use crate::nn::model::ModelGraph;
use crate::sor::penalty::{add_penalty_subgradients, penalty_value, ObjectiveConfig};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradFailure {
    pub layer: usize,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Everything needed to evaluate the scalar objective being differentiated.
#[derive(Clone, Copy)]
pub struct CheckProblem<'a> {
    pub inputs: &'a [Tensor],
    pub targets: &'a [Vec<f64>],
    pub loss: LossKind,
    pub penalty: Option<&'a ObjectiveConfig>,
}

impl CheckProblem<'_> {
    fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() || self.inputs.len() != self.targets.len() {
            return Err(SorError::invalid("gradient check needs matching, non-empty inputs and targets"));
        }
        Ok(())
    }

    /// Mean task loss over the samples plus the penalty terms.
    pub fn value(&self, model: &ModelGraph) -> Result<f64> {
        self.validate()?;
        let mut total = 0.0;
        for (x, t) in self.inputs.iter().zip(self.targets) {
            let y = model.forward(x)?;
            total += self.loss.sample_loss(y.data(), t);
        }
        let mut v = total / self.inputs.len() as f64;
        if let Some(cfg) = self.penalty {
            v += penalty_value(model, cfg)?.total();
        }
        Ok(v)
    }

    /// Analytic gradient of [`Self::value`] for every trainable parameter,
    /// left in the model's gradient buffers.
    pub fn analytic(&self, model: &mut ModelGraph) -> Result<()> {
        self.validate()?;
        model.zero_grads();
        let n = self.inputs.len() as f64;
        for (x, t) in self.inputs.iter().zip(self.targets) {
            let y = model.forward_train(x)?;
            let g: Vec<f64> = self.loss.sample_grad(y.data(), t).into_iter().map(|v| v / n).collect();
            model.backward(&Tensor::new(y.shape().to_vec(), g)?)?;
        }
        if let Some(cfg) = self.penalty {
            add_penalty_subgradients(model, cfg)?;
        }
        Ok(())
    }
}

/// Compares the gradients currently stored in `model` against central
/// differences of `problem` with step `h`. Only trainable layers are checked.
pub fn compare_with_numeric(
    model: &ModelGraph,
    problem: &CheckProblem<'_>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        failures: Vec::new(),
    };
    for (l, layer) in model.layers.iter().enumerate() {
        if !layer.trainable() {
            continue;
        }
        for (p, param) in layer.params.iter().enumerate() {
            for i in 0..param.value.len() {
                let orig = param.value.data()[i];
                probe.layers[l].params[p].value.data_mut()[i] = orig + h;
                let up = problem.value(&probe)?;
                probe.layers[l].params[p].value.data_mut()[i] = orig - h;
                let down = problem.value(&probe)?;
                probe.layers[l].params[p].value.data_mut()[i] = orig;

                let numeric = (up - down) / (2.0 * h);
                let analytic = param.grad.data()[i];
                let err = rel_error(analytic, numeric);
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(err);
                if !(err < tol) {
                    report.failures.push(GradFailure {
                        layer: l,
                        param: param.name.clone(),
                        index: i,
                        analytic,
                        numeric,
                        rel_error: err,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Computes analytic gradients and checks each one against
/// `(f(theta + h) - f(theta - h)) / 2h`.
pub fn gradient_check(model: &ModelGraph, problem: &CheckProblem<'_>, h: f64, tol: f64) -> Result<GradCheckReport> {
    let mut work = model.clone();
    problem.analytic(&mut work)?;
    compare_with_numeric(&work, problem, h, tol)
}
