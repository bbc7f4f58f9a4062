//! A toy scene world: flat shapes of a few categories scattered on a blank
//! canvas, with exact box annotations.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BBox, Category, CategoryTable, Instance, Raster, SceneAnnotation};
use crate::rng;
use crate::{Error, Result};

/// Shape vocabulary as (name, supercategory). Category `k` draws `SHAPES[k]`.
pub const SHAPES: [(&str, &str); 8] = [
    ("circle", "round"),
    ("square", "block"),
    ("triangle", "pointy"),
    ("cross", "stroke"),
    ("ring", "round"),
    ("diamond", "pointy"),
    ("bar", "stroke"),
    ("frame", "block"),
];

const MAX_PLACEMENT_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_categories: usize,
    pub scene_count: usize,
    /// Side of the square canvas in pixels.
    pub image_size: u32,
    /// Inclusive range of instances drawn per category per scene.
    pub count_range: (u32, u32),
    /// Object side as a fraction of `image_size`.
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_categories: 5,
            scene_count: 2500,
            image_size: 120,
            count_range: (0, 8),
            scale_range: (0.05, 0.14),
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_categories == 0 || self.num_categories > SHAPES.len() {
            return Err(Error::InvalidArgument(format!(
                "num_categories must be in 1..={}, got {}",
                SHAPES.len(),
                self.num_categories
            )));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidArgument("image_size must be positive".into()));
        }
        if self.count_range.0 > self.count_range.1 {
            return Err(Error::InvalidArgument(format!("count_range {:?} is inverted", self.count_range)));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scale_range {:?} must satisfy 0 < min <= max <= 1",
                self.scale_range
            )));
        }
        Ok(())
    }
}

/// Category table of the synthetic world: ids `1..=n`, shape names.
pub fn category_table(num_categories: usize) -> CategoryTable {
    let entries = SHAPES
        .iter()
        .take(num_categories)
        .enumerate()
        .map(|(k, (name, sup))| Category {
            id: k as u64 + 1,
            name: (*name).to_string(),
            supercategory: (*sup).to_string(),
        })
        .collect();
    CategoryTable::new(entries).expect("shape names are unique")
}

/// Generates `config.scene_count` scenes. Scene `i` has image id `i + 1` and
/// depends only on `(config, i)`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<(SceneAnnotation, Raster)>> {
    config.validate()?;
    let categories = category_table(config.num_categories);
    (0..config.scene_count)
        .map(|i| generate_scene(config, &categories, i))
        .collect()
}

fn generate_scene(config: &SynthConfig, categories: &CategoryTable, index: usize) -> Result<(SceneAnnotation, Raster)> {
    let mut rng = rng::stream(config.seed, &format!("synth/scene/{index}"));
    let size = config.image_size;

    let mut pending: Vec<usize> = Vec::new();
    for k in 0..categories.len() {
        let n = rng.gen_range(config.count_range.0..=config.count_range.1);
        pending.extend(std::iter::repeat(k).take(n as usize));
    }
    pending.shuffle(&mut rng);

    let mut placed: Vec<(usize, BBox)> = Vec::with_capacity(pending.len());
    for &k in &pending {
        let bbox = (0..MAX_PLACEMENT_TRIES)
            .find_map(|_| {
                let candidate = propose_box(&mut rng, config, k);
                let margin = BBox::new(candidate.x - 1.0, candidate.y - 1.0, candidate.w + 2.0, candidate.h + 2.0);
                placed
                    .iter()
                    .all(|(_, b)| b.intersection_area(&margin) == 0.0)
                    .then_some(candidate)
            })
            .ok_or_else(|| Error::Generation {
                scene: index,
                message: format!(
                    "could not place instance {} of {} after {MAX_PLACEMENT_TRIES} tries",
                    placed.len() + 1,
                    pending.len()
                ),
            })?;
        placed.push((k, bbox));
    }

    let mut raster = Raster::blank(size, size);
    for &(k, bbox) in &placed {
        draw_shape(&mut raster, k, &bbox);
    }
    let instances = placed
        .into_iter()
        .map(|(k, bbox)| Instance {
            category_id: categories.entries()[k].id,
            bbox,
        })
        .collect();
    let scene = SceneAnnotation {
        image_id: index as u64 + 1,
        width: size,
        height: size,
        instances,
    };
    Ok((scene, raster))
}

fn propose_box(rng: &mut impl Rng, config: &SynthConfig, category: usize) -> BBox {
    let size = config.image_size;
    let (lo, hi) = config.scale_range;
    let frac = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    let side = ((frac * f64::from(size)).round() as u32).clamp(2, size);
    let (w, h) = if SHAPES[category].0 == "bar" {
        (side, (side / 2).max(1))
    } else {
        (side, side)
    };
    let x = rng.gen_range(0..=size - w);
    let y = rng.gen_range(0..=size - h);
    BBox::new(f64::from(x), f64::from(y), f64::from(w), f64::from(h))
}

/// Whether the point `(u, v)` of the unit box belongs to shape `category`.
fn shape_contains(category: usize, u: f64, v: f64) -> bool {
    let (du, dv) = ((u - 0.5).abs(), (v - 0.5).abs());
    let r2 = du * du + dv * dv;
    match SHAPES[category].0 {
        "circle" => r2 <= 0.25,
        "square" | "bar" => true,
        "triangle" => v >= 2.0 * du,
        "cross" => du < 1.0 / 6.0 || dv < 1.0 / 6.0,
        "ring" => (0.09..=0.25).contains(&r2),
        "diamond" => du + dv <= 0.5,
        "frame" => du.max(dv) >= 0.25,
        _ => true,
    }
}

fn draw_shape(raster: &mut Raster, category: usize, bbox: &BBox) {
    let label = category as u8 + 1;
    let (x0, y0) = (bbox.x as u32, bbox.y as u32);
    let (w, h) = (bbox.w as u32, bbox.h as u32);
    for py in 0..h {
        for px in 0..w {
            let u = (f64::from(px) + 0.5) / bbox.w;
            let v = (f64::from(py) + 0.5) / bbox.h;
            if shape_contains(category, u, v) {
                raster.set(x0 + px, y0 + py, label);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            scene_count: 20,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_scenes() {
        assert_eq!(generate_synthetic(&small(7)).unwrap(), generate_synthetic(&small(7)).unwrap());
        assert_ne!(generate_synthetic(&small(7)).unwrap(), generate_synthetic(&small(8)).unwrap());
    }

    #[test]
    fn zero_count_range_gives_empty_scenes() {
        let cfg = SynthConfig {
            count_range: (0, 0),
            ..small(1)
        };
        for (scene, raster) in generate_synthetic(&cfg).unwrap() {
            assert!(scene.instances.is_empty());
            assert!(raster.pixels().iter().all(|&p| p == 0));
        }
    }

    #[test]
    fn boxes_inside_and_disjoint() {
        for (scene, raster) in generate_synthetic(&small(3)).unwrap() {
            for (i, a) in scene.instances.iter().enumerate() {
                assert!(a.bbox.x >= 0.0 && a.bbox.right() <= 120.0);
                assert!(a.bbox.y >= 0.0 && a.bbox.bottom() <= 120.0);
                for b in &scene.instances[..i] {
                    assert_eq!(a.bbox.intersection_area(&b.bbox), 0.0);
                }
                // the shape's pixels carry its label
                let label = a.category_id as u8;
                let cx = (a.bbox.x + a.bbox.w / 2.0) as u32;
                let hits = (a.bbox.y as u32..a.bbox.bottom() as u32)
                    .filter(|&y| raster.get(cx, y) == label)
                    .count();
                assert!(hits > 0);
            }
        }
    }

    #[test]
    fn impossible_placement_is_reported() {
        let cfg = SynthConfig {
            scene_count: 3,
            count_range: (30, 30),
            scale_range: (0.5, 0.5),
            ..SynthConfig::default()
        };
        match generate_synthetic(&cfg) {
            Err(Error::Generation { scene, .. }) => assert_eq!(scene, 0),
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SynthConfig { count_range: (3, 1), ..small(1) },
            SynthConfig { scale_range: (0.3, 0.1), ..small(1) },
            SynthConfig { image_size: 0, ..small(1) },
            SynthConfig { num_categories: 9, ..small(1) },
        ];
        for cfg in bad {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidArgument(_))));
        }
    }
}
