use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::experiment::config::ExperimentConfig;
use crate::nn::model::ModelGraph;
use crate::noisebox::{self, Dataset, Standardizer, IMAGE_SIZE};
use crate::optim::{evaluate, train, AdamConfig, LrSchedule, OptimizerState, TrainConfig, TrainingHistory};
use crate::rng::{derive_seed, stream};
use crate::sor::{apply_sor, prune, removed_fraction, PruneReport, SorConfig, SorMeta};

// Stream tags, so data, initialization and both training stages never share a stream.
const TAG_TRAIN: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_BASELINE: u64 = 3;
const TAG_SOR: u64 = 4;

/// One run of the protocol: a grid cell plus a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub filters: usize,
    pub noise_ub: f64,
    pub train_size: usize,
    pub seed: u64,
}

impl RunKey {
    fn data_path(&self, tag: u64) -> [u64; 4] {
        [tag, self.noise_ub.to_bits(), self.train_size as u64, self.seed]
    }

    fn model_path(&self, tag: u64) -> [u64; 5] {
        [tag, self.filters as u64, self.noise_ub.to_bits(), self.train_size as u64, self.seed]
    }
}

/// Standardized train and test sets. Both are scaled with train statistics.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Standardizer,
}

/// Draws the train and test sets of `key`. Streams depend on the noise level,
/// train size and seed but not on the filter count, so both model sizes see
/// the same images.
pub fn make_split(cfg: &ExperimentConfig, key: &RunKey) -> Result<Split> {
    let train = noisebox::generate(key.train_size, key.noise_ub, derive_seed(cfg.master_seed, &key.data_path(TAG_TRAIN)))?;
    let test = noisebox::generate(cfg.test_size, key.noise_ub, derive_seed(cfg.master_seed, &key.data_path(TAG_TEST)))?;
    let standardizer = Standardizer::fit(&train)?;
    Ok(Split {
        train: standardizer.apply(&train),
        test: standardizer.apply(&test),
        standardizer,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub model: ModelGraph,
    pub history: TrainingHistory,
    pub accuracy: f64,
}

/// Trains the toy CNN from scratch with Adam.
pub fn run_baseline(cfg: &ExperimentConfig, key: &RunKey, split: &Split) -> Result<BaselineOutcome> {
    let mut rng = stream(derive_seed(cfg.master_seed, &key.model_path(TAG_BASELINE)));
    let mut model = ModelGraph::toy_cnn([IMAGE_SIZE, IMAGE_SIZE, 1], key.filters, &mut rng)?;
    let mut opt = OptimizerState::adam(AdamConfig::default());
    let tcfg = TrainConfig {
        epochs: cfg.epochs_stage1,
        batch_size: cfg.batch_size,
        schedule: None,
    };
    let history = train(&mut model, None, &split.train, &mut opt, &tcfg, &mut rng)?;
    let accuracy = evaluate(&model, &split.test)?;
    Ok(BaselineOutcome {
        model,
        history,
        accuracy,
    })
}

#[derive(Debug, Clone)]
pub struct SorOutcome {
    /// Gated model after training, before any pruning.
    pub model: ModelGraph,
    pub meta: SorMeta,
    pub history: TrainingHistory,
    pub accuracy: f64,
    pub reduced_fraction: f64,
}

impl SorOutcome {
    pub fn prune(&self, threshold: f64) -> Result<(ModelGraph, SorMeta, PruneReport)> {
        prune(&self.model, &self.meta, threshold)
    }
}

/// Number of output channels of the first layer, used to check that a model
/// file matches the requested filter count.
pub fn filters_of(model: &ModelGraph) -> Result<usize> {
    let shapes = model.shapes()?;
    shapes
        .first()
        .and_then(|s| s.last().copied())
        .ok_or_else(|| SorError::invalid("model has no layers"))
}

/// Second stage: freeze both convolution blocks of a trained baseline, gate
/// the first, and train the dense head with SGD under the SOR penalties.
pub fn run_sor_stage(
    cfg: &ExperimentConfig,
    key: &RunKey,
    lambda1: f64,
    baseline: &ModelGraph,
    split: &Split,
) -> Result<SorOutcome> {
    let found = filters_of(baseline)?;
    if found != key.filters {
        return Err(SorError::invalid(format!(
            "model has {found} filters but the configuration asks for {}",
            key.filters
        )));
    }
    let sor_cfg = SorConfig {
        lambda2_ratio: None,
        lambda2: Some(cfg.lambda2(lambda1)),
        threshold: cfg.threshold,
        mode: cfg.penalty_mode,
        ..SorConfig::toy(lambda1)
    };
    let (mut model, meta) = apply_sor(baseline, &sor_cfg)?;
    let mut path = key.model_path(TAG_SOR).to_vec();
    path.push(lambda1.to_bits());
    let mut rng = stream(derive_seed(cfg.master_seed, &path));
    let schedule = LrSchedule::step_decay();
    let mut opt = OptimizerState::sgd(schedule.initial_lr);
    let tcfg = TrainConfig {
        epochs: cfg.epochs_stage2,
        batch_size: cfg.batch_size,
        schedule: Some(schedule),
    };
    let history = train(&mut model, Some(&meta.objective), &split.train, &mut opt, &tcfg, &mut rng)?;
    let accuracy = evaluate(&model, &split.test)?;
    let reduced_fraction = removed_fraction(&model, &meta.objective, cfg.threshold)?;
    Ok(SorOutcome {
        model,
        meta,
        history,
        accuracy,
        reduced_fraction,
    })
}
