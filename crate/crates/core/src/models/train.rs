use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamState, CountModel, Matrix, ModelKind, Mode};
use crate::data::{CategoryTable, FeatureGrid, SceneAnnotation};
use crate::gridgt::{cell_ground_truth, make_partition};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    pub minibatch_size: usize,
    pub huber_delta: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 0.95,
            minibatch_size: 64,
            huber_delta: 1.0,
            epochs: 30,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidArgument(format!("lr decay {} must lie in (0, 1]", self.lr_decay)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidArgument("minibatch size must be at least 1".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::InvalidArgument(format!("huber delta {} must be positive", self.huber_delta)));
        }
        Ok(())
    }
}

/// One training image: its features and the flattened targets matching the
/// model's output rows (cell-major `cells x K` for cellwise models, `K`
/// otherwise; gt-class targets are count indices).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: FeatureGrid,
    pub targets: Vec<f64>,
}

/// Pairs scenes with their features and builds the targets `kind` trains on.
pub fn build_training_set(
    kind: ModelKind,
    scenes: &[SceneAnnotation],
    features: &[FeatureGrid],
    categories: &CategoryTable,
    max_count: usize,
) -> Result<Vec<TrainSample>> {
    if scenes.len() != features.len() {
        return Err(Error::Shape(format!("{} scenes but {} feature grids", scenes.len(), features.len())));
    }
    scenes
        .iter()
        .zip(features)
        .map(|(scene, grid)| {
            let targets = match kind {
                ModelKind::AsoSub | ModelKind::SeqSub => {
                    let partition = make_partition(scene.width, scene.height, grid.rows, grid.cols)?;
                    cell_ground_truth(scene, &partition, categories)?.values
                }
                ModelKind::Glance => scene.instance_counts(categories),
                ModelKind::GtClass => scene
                    .instance_counts(categories)
                    .into_iter()
                    .map(|c| c.min(max_count as f64))
                    .collect(),
            };
            Ok(TrainSample {
                features: grid.clone(),
                targets,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CountModel,
    /// Mean training loss of every epoch.
    pub loss_trace: Vec<f64>,
}

fn target_matrix(model: &CountModel, batch: &[&TrainSample]) -> Result<Matrix> {
    let width = model.num_categories;
    let rows = batch.len() * model.rows_per_sample();
    let flat: Vec<f64> = batch.iter().flat_map(|s| s.targets.iter().copied()).collect();
    Array2::from_shape_vec((rows, width), flat)
        .map_err(|_| Error::Shape(format!("targets do not fit {rows} rows of {width} values")))
}

/// Minibatch Adam with per-epoch learning-rate decay and seeded shuffling.
pub fn train(mut model: CountModel, samples: &[TrainSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set has no samples".into()));
    }
    let mut shuffle_rng = rng::stream(config.seed, "train/shuffle");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut state = AdamState::default();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut lr = config.learning_rate;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.minibatch_size).enumerate() {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let grids: Vec<&FeatureGrid> = batch.iter().map(|s| &s.features).collect();
            let x = model.input_matrix(&grids)?;
            let y = target_matrix(&model, &batch)?;
            let (out, cache) = model.forward(&x, Mode::Train)?;
            let (loss, d_out) = model.loss(&out, &y, config.huber_delta)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, batch {b} is {loss}")));
            }
            let grads = model.backward(&cache, &d_out);
            model.update_running_stats(&cache);
            adam_step(model.params_mut(), &grads, &mut state, lr)?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / samples.len() as f64;
        log::debug!("{} epoch {epoch}: loss {mean:.6} lr {lr:.3e}", model.kind);
        trace.push(mean);
        lr *= config.lr_decay;
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}
