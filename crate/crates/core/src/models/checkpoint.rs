use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ArchConfig, CountModel, Matrix, ModelKind, TrainConfig};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl NamedTensor {
    fn new(name: String, m: &Matrix) -> Self {
        NamedTensor {
            name,
            shape: [m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }
}

/// Everything needed to rebuild a trained [`CountModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub rows: usize,
    pub cols: usize,
    pub feature_dim: usize,
    pub num_categories: usize,
    pub arch: ArchConfig,
    pub train: Option<TrainConfig>,
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &CountModel, train: Option<&TrainConfig>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: model.kind,
            rows: model.rows,
            cols: model.cols,
            feature_dim: model.feature_dim,
            num_categories: model.num_categories,
            arch: model.arch.clone(),
            train: train.cloned(),
            params: model
                .param_names()
                .into_iter()
                .zip(model.params())
                .map(|(n, m)| NamedTensor::new(n, m))
                .collect(),
            buffers: model.buffers().into_iter().map(|(n, m)| NamedTensor::new(n, m)).collect(),
        }
    }

    pub fn to_model(&self) -> Result<CountModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint version {} (supported: {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = CountModel::new(
            self.kind,
            self.rows,
            self.cols,
            self.feature_dim,
            self.num_categories,
            self.arch.clone(),
            0,
        )?;
        let names = model.param_names();
        let buffer_names: Vec<String> = model.buffers().into_iter().map(|(n, _)| n).collect();
        restore(&names, model.params_mut(), &self.params)?;
        restore(&buffer_names, model.buffers_mut(), &self.buffers)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("checkpoints always serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

fn restore(names: &[String], slots: Vec<&mut Matrix>, stored: &[NamedTensor]) -> Result<()> {
    if slots.len() != stored.len() {
        return Err(Error::Schema(format!(
            "checkpoint holds {} tensors, architecture needs {}",
            stored.len(),
            slots.len()
        )));
    }
    for ((name, slot), t) in names.iter().zip(slots).zip(stored) {
        if *name != t.name || [slot.nrows(), slot.ncols()] != t.shape {
            return Err(Error::Schema(format!(
                "tensor {} {:?} does not match expected {} {:?}",
                t.name,
                t.shape,
                name,
                [slot.nrows(), slot.ncols()]
            )));
        }
        *slot = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
            .map_err(|_| Error::Schema(format!("tensor {} has {} values for shape {:?}", t.name, t.data.len(), t.shape)))?;
    }
    Ok(())
}
