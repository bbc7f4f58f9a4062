//! Scenes, annotations, features and embeddings.

mod annotations;
mod embeddings;
mod featurize;
mod features;
mod raster;
mod synth;

pub use annotations::{load_annotations, parse_annotations, save_annotations, to_annotation_json};
pub use embeddings::{load_embeddings, parse_embeddings, save_embeddings, EmbeddingTable};
pub use featurize::{featurize, FEATURE_DIM, MAX_LABELS};
pub use features::{load_feature_manifest, save_feature_manifest, FeatureGrid, FeatureManifest};
pub use raster::Raster;
pub use synth::{category_table, generate_synthetic, SynthConfig, SHAPES};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned box in pixel coordinates, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }

    /// Area of the overlap with `other`; zero when they do not overlap.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// The part of the box inside `[0, width] x [0, height]`, if any.
    pub fn clipped(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub category_id: u64,
    /// Unclipped extent as annotated; may reach outside the image.
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<Instance>,
}

impl SceneAnnotation {
    /// Number of instances of each category, in table order.
    pub fn instance_counts(&self, categories: &CategoryTable) -> Vec<f64> {
        let mut counts = vec![0.0; categories.len()];
        for inst in &self.instances {
            if let Some(k) = categories.index_of(inst.category_id) {
                counts[k] += 1.0;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
}

/// Ordered category list. Position in the table is the category index used
/// by every per-category vector in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryTable {
    entries: Vec<Category>,
}

impl CategoryTable {
    pub fn new(entries: Vec<Category>) -> Result<Self> {
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[..i] {
                if a.id == b.id {
                    return Err(Error::Schema(format!("duplicate category id {}", a.id)));
                }
                if a.name == b.name {
                    return Err(Error::Schema(format!("duplicate category name {:?}", a.name)));
                }
            }
        }
        Ok(CategoryTable { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Category] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&Category> {
        self.entries.get(index)
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.entries.iter().position(|c| c.id == id)
    }

    pub fn index_of_name(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|c| c.name == name)
    }

    /// Distinct super-category names in first-appearance order.
    pub fn supercategories(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.entries {
            if !c.supercategory.is_empty() && !out.contains(&c.supercategory.as_str()) {
                out.push(&c.supercategory);
            }
        }
        out
    }

    /// Indices of the categories belonging to `supercategory`.
    pub fn members(&self, supercategory: &str) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, c)| c.supercategory == supercategory)
            .map(|(i, _)| i)
            .collect()
    }
}
