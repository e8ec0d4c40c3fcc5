use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::model::ModelGraph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam hyperparameters; the defaults are the usual published constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// One bias-corrected Adam update of a single tensor. `t` is the 1-based step.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(SorError::dim("adam buffers do not match the parameter tensor"));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// `theta <- theta - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(SorError::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    if grads.len() != params.len() {
        return Err(SorError::dim("gradient does not match the parameter tensor"));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Optimizer state for one model. Moment buffers are created on the first
/// step and mirror the model's parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub adam: AdamConfig,
    pub sgd_lr: f64,
    step: u64,
    moments: Vec<Vec<(Tensor, Tensor)>>,
}

impl OptimizerState {
    pub fn adam(cfg: AdamConfig) -> Self {
        OptimizerState {
            kind: OptimizerKind::Adam,
            adam: cfg,
            sgd_lr: 0.0,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            adam: AdamConfig::default(),
            sgd_lr: lr,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Learning rate used when no schedule overrides it.
    pub fn base_lr(&self) -> f64 {
        match self.kind {
            OptimizerKind::Adam => self.adam.lr,
            OptimizerKind::Sgd => self.sgd_lr,
        }
    }

    /// Moment buffers of layer `l`, parameter `p` (Adam only).
    pub fn moments(&self, l: usize, p: usize) -> Option<&(Tensor, Tensor)> {
        self.moments.get(l)?.get(p)
    }

    /// Applies one update with learning rate `lr` to every trainable layer.
    /// Frozen layers are never written.
    pub fn step(&mut self, model: &mut ModelGraph, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(SorError::invalid(format!("learning rate must be > 0, got {lr}")));
        }
        self.step += 1;
        if self.kind == OptimizerKind::Adam && self.moments.len() != model.layers.len() {
            self.moments = model
                .layers
                .iter()
                .map(|l| {
                    l.params
                        .iter()
                        .map(|p| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
                        .collect()
                })
                .collect();
        }
        for (l, layer) in model.layers.iter_mut().enumerate() {
            if layer.frozen {
                continue;
            }
            for (p, param) in layer.params.iter_mut().enumerate() {
                match self.kind {
                    OptimizerKind::Sgd => sgd_step(param.value.data_mut(), param.grad.data(), lr)?,
                    OptimizerKind::Adam => {
                        let (m, v) = &mut self.moments[l][p];
                        if m.shape() != param.value.shape() {
                            return Err(SorError::dim(format!(
                                "adam moments for layer {l} do not match its parameters"
                            )));
                        }
                        adam_step(
                            param.value.data_mut(),
                            param.grad.data(),
                            m.data_mut(),
                            v.data_mut(),
                            self.step,
                            &self.adam,
                            lr,
                        )?
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, uniform};

    #[test]
    fn sgd_hand_value() {
        let mut p = [1.0];
        sgd_step(&mut p, &[0.5], 0.1).unwrap();
        assert_eq!(p[0], 0.95);
        let mut q = [1.0, -2.0];
        sgd_step(&mut q, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(q, [1.0, -2.0]);
        assert!(sgd_step(&mut q, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn sgd_matches_scalar_loop() {
        let mut rng = stream(12);
        let p: Vec<f64> = (0..100).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let g: Vec<f64> = (0..100).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let mut got = p.clone();
        sgd_step(&mut got, &g, 0.037).unwrap();
        for i in 0..100 {
            assert_eq!(got[i].to_bits(), (p[i] - 0.037 * g[i]).to_bits());
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_step(&mut p, &[1.0], &mut m, &mut v, 1, &cfg, cfg.lr).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-7);
        assert!((p[0] - expected).abs() < 1e-18);

        let (mut p, mut m, mut v) = ([0.7], [0.0], [0.0]);
        adam_step(&mut p, &[0.0], &mut m, &mut v, 1, &cfg, cfg.lr).unwrap();
        assert_eq!(p[0], 0.7);
    }
}
