use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-cell feature vectors over a `rows x cols` grid, row-major, `dim` values per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    #[serde(rename = "data")]
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        let grid = FeatureGrid { rows, cols, dim, values };
        grid.validate()?;
        Ok(grid)
    }

    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        FeatureGrid {
            rows,
            cols,
            dim,
            values: vec![0.0; rows * cols * dim],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.dim == 0 {
            return Err(Error::Shape(format!(
                "feature grid {}x{}x{} has an empty dimension",
                self.rows, self.cols, self.dim
            )));
        }
        if self.values.len() != self.rows * self.cols * self.dim {
            return Err(Error::Shape(format!(
                "feature grid {}x{}x{} holds {} values",
                self.rows,
                self.cols,
                self.dim,
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at flat index {i}")));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Feature of cell `index` in row-major order.
    pub fn cell(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cell_at(&self, row: usize, col: usize) -> &[f64] {
        self.cell(row * self.cols + col)
    }

    pub fn cell_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.values[index * self.dim..(index + 1) * self.dim]
    }
}

/// Feature grids keyed by image id.
pub type FeatureManifest = BTreeMap<u64, FeatureGrid>;

pub fn save_feature_manifest(path: impl AsRef<Path>, manifest: &FeatureManifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string(manifest).expect("feature grids always serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_feature_manifest(path: impl AsRef<Path>) -> Result<FeatureManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: FeatureManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    for (id, grid) in &manifest {
        grid.validate()
            .map_err(|e| Error::Schema(format!("features of image {id}: {e}")))?;
    }
    Ok(manifest)
}
