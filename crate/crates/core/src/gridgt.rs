//! Grid partitions, fractional per-cell ground truth and count aggregation.
//!
//! A box contributes to a cell the share of its own area that falls inside
//! the cell, so a box fully inside the image spreads exactly one unit of
//! count over the grid. The denominator is the unclipped box area: a box
//! hanging over the image border contributes less than one unit in total.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{BBox, CategoryTable, SceneAnnotation};
use crate::{Error, Result};

/// Non-overlapping cells tiling an image. Cell boundaries sit at
/// `floor(i * width / cols)` and `floor(j * height / rows)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPartition {
    pub width: u32,
    pub height: u32,
    pub rows: usize,
    pub cols: usize,
    col_edges: Vec<u32>,
    row_edges: Vec<u32>,
}

impl GridPartition {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Half-open pixel span `[x0, x1)` of column `c`.
    pub fn col_span(&self, c: usize) -> (u32, u32) {
        (self.col_edges[c], self.col_edges[c + 1])
    }

    pub fn row_span(&self, r: usize) -> (u32, u32) {
        (self.row_edges[r], self.row_edges[r + 1])
    }

    pub fn cell(&self, row: usize, col: usize) -> BBox {
        let (x0, x1) = self.col_span(col);
        let (y0, y1) = self.row_span(row);
        BBox::new(f64::from(x0), f64::from(y0), f64::from(x1 - x0), f64::from(y1 - y0))
    }

    /// Cell rectangles in row-major order.
    pub fn cell_boxes(&self) -> Vec<BBox> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (r, c)))
            .map(|(r, c)| self.cell(r, c))
            .collect()
    }
}

pub fn make_partition(width: u32, height: u32, rows: usize, cols: usize) -> Result<GridPartition> {
    if width == 0 || height == 0 || rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot partition a {width}x{height} image into {rows}x{cols} cells"
        )));
    }
    if rows > height as usize || cols > width as usize {
        return Err(Error::InvalidArgument(format!(
            "{rows}x{cols} grid exceeds the {width}x{height} pixel image"
        )));
    }
    let edges = |extent: u32, parts: usize| -> Vec<u32> {
        (0..=parts)
            .map(|i| ((i as u64 * u64::from(extent)) / parts as u64) as u32)
            .collect()
    };
    Ok(GridPartition {
        width,
        height,
        rows,
        cols,
        col_edges: edges(width, cols),
        row_edges: edges(height, rows),
    })
}

/// Real-valued per-cell, per-category counts, indexed `[(row * cols + col) * K + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub rows: usize,
    pub cols: usize,
    pub categories: usize,
    pub values: Vec<f64>,
}

impl CellCounts {
    pub fn zeros(rows: usize, cols: usize, categories: usize) -> Self {
        CellCounts {
            rows,
            cols,
            categories,
            values: vec![0.0; rows * cols * categories],
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn get(&self, cell: usize, k: usize) -> f64 {
        self.values[cell * self.categories + k]
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.categories..(cell + 1) * self.categories]
    }

    pub fn cell_mut(&mut self, cell: usize) -> &mut [f64] {
        &mut self.values[cell * self.categories..(cell + 1) * self.categories]
    }
}

/// Image-level count per category, in category-table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageCounts(pub Vec<f64>);

impl ImageCounts {
    pub fn zeros(categories: usize) -> Self {
        ImageCounts(vec![0.0; categories])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }
}

pub fn cell_ground_truth(
    scene: &SceneAnnotation,
    partition: &GridPartition,
    categories: &CategoryTable,
) -> Result<CellCounts> {
    if partition.width != scene.width || partition.height != scene.height {
        return Err(Error::Shape(format!(
            "partition of {}x{} applied to image {} of {}x{}",
            partition.width, partition.height, scene.image_id, scene.width, scene.height
        )));
    }
    let k_total = categories.len();
    let cells = partition.cell_boxes();
    let mut out = CellCounts::zeros(partition.rows, partition.cols, k_total);
    for (j, inst) in scene.instances.iter().enumerate() {
        let area = inst.bbox.area();
        if !(area > 0.0) || !inst.bbox.is_valid() {
            return Err(Error::InvalidArgument(format!(
                "image {} instance {j} has zero-area box {:?}",
                scene.image_id, inst.bbox
            )));
        }
        let k = categories.index_of(inst.category_id).ok_or_else(|| {
            Error::Schema(format!(
                "image {} instance {j} has unknown category {}",
                scene.image_id, inst.category_id
            ))
        })?;
        for (i, cell) in cells.iter().enumerate() {
            let overlap = cell.intersection_area(&inst.bbox);
            if overlap > 0.0 {
                out.values[i * k_total + k] += overlap / area;
            }
        }
    }
    Ok(out)
}

/// Image count per category: sum over cells of the cell value clamped at zero.
pub fn aggregate_counts(cells: &CellCounts) -> ImageCounts {
    let mut totals = vec![0.0; cells.categories];
    for i in 0..cells.cells() {
        for (k, t) in totals.iter_mut().enumerate() {
            *t += cells.get(i, k).max(0.0);
        }
    }
    ImageCounts(totals)
}

/// Serializable per-image ground-truth dump keyed by category id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDump {
    pub image_id: u64,
    pub rows: usize,
    pub cols: usize,
    pub counts: BTreeMap<u64, Vec<f64>>,
}

impl GroundTruthDump {
    pub fn new(image_id: u64, cells: &CellCounts, categories: &CategoryTable) -> Self {
        let counts = categories
            .entries()
            .iter()
            .enumerate()
            .map(|(k, cat)| (cat.id, (0..cells.cells()).map(|i| cells.get(i, k)).collect()))
            .collect();
        GroundTruthDump {
            image_id,
            rows: cells.rows,
            cols: cells.cols,
            counts,
        }
    }
}
