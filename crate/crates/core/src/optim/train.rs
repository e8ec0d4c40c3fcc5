use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::nn::loss::{bce_single, bce_single_grad};
use crate::nn::model::ModelGraph;
use crate::noisebox::Dataset;
use crate::optim::optimizer::OptimizerState;
use crate::optim::schedule::LrSchedule;
use rand::seq::SliceRandom;
use crate::sor::penalty::{add_penalty_subgradients, apply_proximal, penalty_value, ObjectiveConfig, PenaltyMode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Overrides the optimizer's learning rate per epoch.
    pub schedule: Option<LrSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub data_loss: f64,
    pub l1_penalty: f64,
    pub gl_penalty: f64,
    pub psi: f64,
    pub train_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Effective batch size after clamping to the dataset size.
    pub batch_size: usize,
}

impl TrainingHistory {
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| SorError::io("history csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| SorError::io(path, e))?;
        self.write_csv(file)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn samples(data: &Dataset) -> Vec<Tensor> {
    (0..data.len()).map(|i| data.image(i)).collect()
}

/// Mini-batch training of `model` on `data`, minimizing the mean binary
/// cross-entropy plus the penalties of `objective` when given.
///
/// Sample order is reshuffled every epoch from `rng`; the last partial batch
/// is kept. Layers before the first trainable layer are evaluated once per
/// sample up front since their outputs cannot change.
pub fn train(
    model: &mut ModelGraph,
    objective: Option<&ObjectiveConfig>,
    data: &Dataset,
    optimizer: &mut OptimizerState,
    cfg: &TrainConfig,
    rng: &mut impl RngCore,
) -> Result<TrainingHistory> {
    if data.is_empty() {
        return Err(SorError::invalid("cannot train on an empty dataset"));
    }
    if cfg.batch_size < 1 {
        return Err(SorError::invalid("batch size must be at least 1"));
    }
    if let Some(obj) = objective {
        obj.validate(model)?;
    }
    let batch_size = cfg.batch_size.min(data.len());
    let mut history = TrainingHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        batch_size,
    };
    if cfg.epochs == 0 {
        return Ok(history);
    }

    let start = model.first_trainable().unwrap_or(model.len());
    let inputs: Vec<Tensor> = samples(data)
        .into_iter()
        .map(|x| model.forward_range(0..start, &x))
        .collect::<Result<_>>()?;
    let labels = data.labels();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.map_or(optimizer.base_lr(), |s| s.lr_at(epoch));
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(batch_size) {
            model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let out = model.forward_train_from(start, &inputs[i])?;
                let p = out.data()[0];
                let y = labels[i];
                loss_sum += bce_single(p, y);
                correct += usize::from((p >= 0.5) == (y == 1.0));
                let g = Tensor::new(out.shape().to_vec(), vec![bce_single_grad(p, y) * scale])?;
                model.backward(&g)?;
            }
            if let Some(obj) = objective {
                if obj.mode == PenaltyMode::Subgradient {
                    add_penalty_subgradients(model, obj)?;
                }
            }
            optimizer.step(model, lr)?;
            if let Some(obj) = objective {
                if obj.mode == PenaltyMode::Proximal {
                    apply_proximal(model, obj, lr);
                }
            }
        }
        let pen = match objective {
            Some(obj) => penalty_value(model, obj)?,
            None => Default::default(),
        };
        let data_loss = loss_sum / data.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            data_loss,
            l1_penalty: pen.l1,
            gl_penalty: pen.group,
            psi: data_loss + pen.total(),
            train_acc: correct as f64 / data.len() as f64,
            lr,
        });
    }
    Ok(history)
}

/// Sigmoid output of the model for every image.
pub fn predict(model: &ModelGraph, data: &Dataset) -> Result<Vec<f64>> {
    (0..data.len())
        .map(|i| Ok(model.forward(&data.image(i))?.data()[0]))
        .collect()
}

/// Fraction of images classified correctly, predicting 1 iff output >= 0.5.
pub fn evaluate(model: &ModelGraph, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(SorError::invalid("cannot evaluate on an empty dataset"));
    }
    let preds = predict(model, data)?;
    let correct = preds
        .iter()
        .zip(data.labels())
        .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
        .count();
    Ok(correct as f64 / data.len() as f64)
}
