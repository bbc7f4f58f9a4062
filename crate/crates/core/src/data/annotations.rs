//! COCO-style instance annotations (the subset of keys counting needs).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BBox, Category, CategoryTable, Instance, SceneAnnotation};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    images: Vec<ImageRecord>,
    #[serde(default)]
    categories: Vec<Category>,
    #[serde(default)]
    annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageRecord {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<(Vec<SceneAnnotation>, CategoryTable)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text).map_err(|e| match e {
        Error::Parse { line, column, message, .. } => Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message,
        },
        other => other,
    })
}

/// Parses annotation JSON text. Scenes come back in `images` order; keys the
/// format does not use (COCO's `segmentation`, `area`, ...) are ignored.
pub fn parse_annotations(text: &str) -> Result<(Vec<SceneAnnotation>, CategoryTable)> {
    let file: AnnotationFile = serde_json::from_str(text).map_err(|e| Error::json("<annotations>", e))?;
    let categories = CategoryTable::new(file.categories)?;

    let mut scenes = Vec::with_capacity(file.images.len());
    let mut by_id = HashMap::with_capacity(file.images.len());
    for img in file.images {
        if img.width == 0 || img.height == 0 {
            return Err(Error::Schema(format!("image {} has zero extent", img.id)));
        }
        if by_id.insert(img.id, scenes.len()).is_some() {
            return Err(Error::Schema(format!("duplicate image id {}", img.id)));
        }
        scenes.push(SceneAnnotation {
            image_id: img.id,
            width: img.width,
            height: img.height,
            instances: Vec::new(),
        });
    }

    for (n, ann) in file.annotations.into_iter().enumerate() {
        let &slot = by_id
            .get(&ann.image_id)
            .ok_or_else(|| Error::Schema(format!("annotation {n} references unknown image id {}", ann.image_id)))?;
        if categories.index_of(ann.category_id).is_none() {
            return Err(Error::Schema(format!(
                "annotation {n} references unknown category id {}",
                ann.category_id
            )));
        }
        let [x, y, w, h] = ann.bbox;
        let bbox = BBox::new(x, y, w, h);
        let scene = &mut scenes[slot];
        if !bbox.is_valid() {
            return Err(Error::Schema(format!(
                "annotation {n} on image {} has a non-positive or non-finite box {:?}",
                ann.image_id, ann.bbox
            )));
        }
        if bbox.clipped(f64::from(scene.width), f64::from(scene.height)).is_none() {
            return Err(Error::Schema(format!(
                "annotation {n} on image {} lies outside the image",
                ann.image_id
            )));
        }
        scene.instances.push(Instance {
            category_id: ann.category_id,
            bbox,
        });
    }
    Ok((scenes, categories))
}

pub fn to_annotation_json(scenes: &[SceneAnnotation], categories: &CategoryTable) -> String {
    let file = AnnotationFile {
        images: scenes
            .iter()
            .map(|s| ImageRecord {
                id: s.image_id,
                width: s.width,
                height: s.height,
            })
            .collect(),
        categories: categories.entries().to_vec(),
        annotations: scenes
            .iter()
            .flat_map(|s| {
                s.instances.iter().map(move |inst| AnnotationRecord {
                    image_id: s.image_id,
                    category_id: inst.category_id,
                    bbox: [inst.bbox.x, inst.bbox.y, inst.bbox.w, inst.bbox.h],
                })
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("annotation records always serialize")
}

pub fn save_annotations(path: impl AsRef<Path>, scenes: &[SceneAnnotation], categories: &CategoryTable) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_annotation_json(scenes, categories)).map_err(|e| Error::io(path, e))
}
