//! Learned counters and everything needed to train them.
//!
//! * `glance`: an MLP from the whole-image feature to per-category counts.
//! * `aso-sub`: the same kind of MLP applied to every grid cell on its own,
//!   regressing fractional cell counts that are summed into image counts.
//! * `seq-sub`: aso-sub with context; cell encodings are traversed in two
//!   orders by stacked bi-directional LSTMs before the per-cell head.
//! * `gt-class`: counts treated as classes `0..=max_count` per category.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod lstm;
mod mlp;
mod seqsub;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{grouped_cross_entropy, grouped_softmax, huber, huber_loss, squared};
pub use lstm::{BiLstm, BiLstmStack, Lstm};
pub use mlp::{BatchNorm, Dense, Mlp, MlpSpec, Mode};
pub use seqsub::{cell_orderings, cell_orderings_with, OrderingStyle, SeqSub, SeqSubSpec};
pub use train::{build_training_set, train, TrainConfig, TrainOutcome, TrainSample};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::FeatureGrid;
use crate::gridgt::{aggregate_counts, CellCounts, ImageCounts};
use crate::rng;
use crate::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Glance,
    AsoSub,
    SeqSub,
    GtClass,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Glance => "glance",
            ModelKind::AsoSub => "aso-sub",
            ModelKind::SeqSub => "seq-sub",
            ModelKind::GtClass => "gt-class",
        }
    }

    /// Whether the model predicts per cell (and is trained on cell targets).
    pub fn is_cellwise(self) -> bool {
        matches!(self, ModelKind::AsoSub | ModelKind::SeqSub)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glance" => Ok(ModelKind::Glance),
            "aso-sub" => Ok(ModelKind::AsoSub),
            "seq-sub" => Ok(ModelKind::SeqSub),
            "gt-class" => Ok(ModelKind::GtClass),
            other => Err(Error::InvalidArgument(format!(
                "unknown model kind {other:?} (glance, aso-sub, seq-sub, gt-class)"
            ))),
        }
    }
}

/// Architecture hyperparameters. MLP fields apply to glance, aso-sub and
/// gt-class; the remaining ones to seq-sub.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    /// Batch normalization in the seq-sub encoder and head.
    pub seq_batch_norm: bool,
    pub encoder_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_depth: usize,
    pub head_hidden: usize,
    pub ordering: OrderingStyle,
    pub max_count: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: vec![128],
            batch_norm: true,
            seq_batch_norm: false,
            encoder_dim: 64,
            lstm_hidden: 32,
            lstm_depth: 2,
            head_hidden: 64,
            ordering: OrderingStyle::ColumnMajor,
            max_count: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Mlp(Mlp),
    SeqSub(SeqSub),
}

pub enum ForwardCache {
    Mlp(mlp::MlpCache),
    SeqSub(seqsub::SeqSubCache),
}

/// A counting model together with the grid and label space it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct CountModel {
    pub kind: ModelKind,
    pub rows: usize,
    pub cols: usize,
    pub feature_dim: usize,
    pub num_categories: usize,
    pub arch: ArchConfig,
    pub network: Network,
}

impl CountModel {
    /// Builds a freshly initialized model. Glance and gt-class always use
    /// the 1x1 grid.
    pub fn new(
        kind: ModelKind,
        rows: usize,
        cols: usize,
        feature_dim: usize,
        num_categories: usize,
        arch: ArchConfig,
        seed: u64,
    ) -> Result<Self> {
        let (rows, cols) = if kind.is_cellwise() { (rows, cols) } else { (1, 1) };
        if rows == 0 || cols == 0 || feature_dim == 0 || num_categories == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot build {kind} for grid {rows}x{cols}, {feature_dim} features, {num_categories} categories"
            )));
        }
        let mut rng = rng::stream(seed, "init");
        let outputs = match kind {
            ModelKind::GtClass => num_categories * (arch.max_count + 1),
            _ => num_categories,
        };
        let network = match kind {
            ModelKind::SeqSub => Network::SeqSub(SeqSub::new(
                SeqSubSpec {
                    rows,
                    cols,
                    input_dim: feature_dim,
                    encoder_dim: arch.encoder_dim,
                    lstm_hidden: arch.lstm_hidden,
                    lstm_depth: arch.lstm_depth,
                    head_hidden: arch.head_hidden,
                    outputs,
                    batch_norm: arch.seq_batch_norm,
                    ordering: arch.ordering,
                },
                &mut rng,
            )?),
            _ => {
                let mut sizes = vec![feature_dim];
                sizes.extend(&arch.hidden);
                sizes.push(outputs);
                Network::Mlp(Mlp::new(
                    MlpSpec {
                        sizes,
                        relu_output: false,
                        batch_norm: arch.batch_norm,
                    },
                    &mut rng,
                )?)
            }
        };
        Ok(CountModel {
            kind,
            rows,
            cols,
            feature_dim,
            num_categories,
            arch,
            network,
        })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Input rows contributed by one image.
    pub fn rows_per_sample(&self) -> usize {
        if self.kind.is_cellwise() {
            self.cells()
        } else {
            1
        }
    }

    fn check_grid(&self, features: &FeatureGrid) -> Result<()> {
        if features.rows != self.rows || features.cols != self.cols || features.dim != self.feature_dim {
            return Err(Error::Shape(format!(
                "{} model expects {}x{} cells of {} features, got {}x{} of {}",
                self.kind, self.rows, self.cols, self.feature_dim, features.rows, features.cols, features.dim
            )));
        }
        Ok(())
    }

    /// Stacks the per-cell features of a batch into model input rows.
    pub fn input_matrix(&self, batch: &[&FeatureGrid]) -> Result<Matrix> {
        let mut x = Array2::zeros((batch.len() * self.rows_per_sample(), self.feature_dim));
        for (b, grid) in batch.iter().enumerate() {
            self.check_grid(grid)?;
            for cell in 0..grid.cells() {
                x.row_mut(b * grid.cells() + cell)
                    .iter_mut()
                    .zip(grid.cell(cell))
                    .for_each(|(d, &s)| *d = s);
            }
        }
        Ok(x)
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        match &self.network {
            Network::Mlp(m) => m.forward(x, mode).map(|(y, c)| (y, ForwardCache::Mlp(c))),
            Network::SeqSub(s) => s.forward(x, mode).map(|(y, c)| (y, ForwardCache::SeqSub(c))),
        }
    }

    /// Parameter gradients in [`CountModel::params`] order.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Vec<Matrix> {
        match (&self.network, cache) {
            (Network::Mlp(m), ForwardCache::Mlp(c)) => m.backward(c, d_out).1,
            (Network::SeqSub(s), ForwardCache::SeqSub(c)) => s.backward(c, d_out),
            _ => unreachable!("cache produced by a different network"),
        }
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        match (&mut self.network, cache) {
            (Network::Mlp(m), ForwardCache::Mlp(c)) => m.update_running_stats(c),
            (Network::SeqSub(s), ForwardCache::SeqSub(c)) => s.update_running_stats(c),
            _ => unreachable!("cache produced by a different network"),
        }
    }

    /// Training objective: half squared error for glance, Huber for the
    /// cellwise models, cross-entropy for gt-class.
    pub fn loss(&self, out: &Matrix, target: &Matrix, huber_delta: f64) -> Result<(f64, Matrix)> {
        match self.kind {
            ModelKind::Glance => squared(out, target),
            ModelKind::AsoSub | ModelKind::SeqSub => huber(out, target, huber_delta),
            ModelKind::GtClass => grouped_cross_entropy(out, target, self.arch.max_count + 1),
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        match &self.network {
            Network::Mlp(m) => m.params(),
            Network::SeqSub(s) => s.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.network {
            Network::Mlp(m) => m.params_mut(),
            Network::SeqSub(s) => s.params_mut(),
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match &self.network {
            Network::Mlp(m) => m.param_names(""),
            Network::SeqSub(s) => s.param_names(),
        }
    }

    pub fn buffers(&self) -> Vec<(String, &Matrix)> {
        match &self.network {
            Network::Mlp(m) => m.buffers(""),
            Network::SeqSub(s) => s.buffers(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.network {
            Network::Mlp(m) => m.buffers_mut(),
            Network::SeqSub(s) => s.buffers_mut(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Raw per-cell predictions of a cellwise model.
    pub fn predict_cells(&self, features: &FeatureGrid) -> Result<CellCounts> {
        if !self.kind.is_cellwise() {
            return Err(Error::InvalidArgument(format!("{} does not predict per cell", self.kind)));
        }
        let x = self.input_matrix(&[features])?;
        let (y, _) = self.forward(&x, Mode::Eval)?;
        Ok(CellCounts {
            rows: self.rows,
            cols: self.cols,
            categories: self.num_categories,
            values: y.iter().copied().collect(),
        })
    }

    /// Per-category class probabilities of a gt-class model, `[k][count]`.
    pub fn class_probabilities(&self, features: &FeatureGrid) -> Result<Vec<Vec<f64>>> {
        if self.kind != ModelKind::GtClass {
            return Err(Error::InvalidArgument(format!("{} is not a classifier", self.kind)));
        }
        let x = self.input_matrix(&[features])?;
        let (logits, _) = self.forward(&x, Mode::Eval)?;
        let probs = grouped_softmax(&logits, self.arch.max_count + 1);
        Ok(probs
            .row(0)
            .as_slice()
            .expect("standard layout")
            .chunks(self.arch.max_count + 1)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Image-level counts before rounding. Cellwise models clamp each cell
    /// at zero and sum; gt-class returns the most probable count.
    pub fn predict(&self, features: &FeatureGrid) -> Result<ImageCounts> {
        match self.kind {
            ModelKind::AsoSub | ModelKind::SeqSub => Ok(aggregate_counts(&self.predict_cells(features)?)),
            ModelKind::Glance => {
                let x = self.input_matrix(&[features])?;
                let (y, _) = self.forward(&x, Mode::Eval)?;
                Ok(ImageCounts(y.iter().copied().collect()))
            }
            ModelKind::GtClass => Ok(ImageCounts(
                self.class_probabilities(features)?
                    .iter()
                    .map(|p| argmax_lowest(p) as f64)
                    .collect(),
            )),
        }
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn expect_kind(model: &CountModel, kinds: &[ModelKind]) -> Result<()> {
    if kinds.contains(&model.kind) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("expected a {:?} model, got {}", kinds, model.kind)))
    }
}

/// Whole-image regression from a 1x1 feature grid.
pub fn glance_forward(features: &FeatureGrid, model: &CountModel) -> Result<ImageCounts> {
    expect_kind(model, &[ModelKind::Glance])?;
    model.predict(features)
}

/// Independent per-cell regression.
pub fn asosub_forward(features: &FeatureGrid, model: &CountModel) -> Result<CellCounts> {
    expect_kind(model, &[ModelKind::AsoSub])?;
    model.predict_cells(features)
}

/// Per-cell regression with context from both cell traversals.
pub fn seqsub_forward(features: &FeatureGrid, model: &CountModel) -> Result<CellCounts> {
    expect_kind(model, &[ModelKind::SeqSub])?;
    model.predict_cells(features)
}

/// Per-category probability vectors over `0..=max_count`.
pub fn gtclass_forward(features: &FeatureGrid, model: &CountModel) -> Result<Vec<Vec<f64>>> {
    expect_kind(model, &[ModelKind::GtClass])?;
    model.class_probabilities(features)
}
