//! Counting by detection: non-maximum suppression, score thresholding and a
//! per-category search for the two thresholds that minimize count error.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BBox, CategoryTable, SceneAnnotation};
use crate::gridgt::ImageCounts;
use crate::rng;
use crate::{Error, Result};

/// NMS overlap used while the score threshold is searched.
pub const TUNING_NMS: f64 = 0.3;
/// Out-of-the-box detector settings.
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.8;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.3;
pub const THRESHOLD_GRID_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub category_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: u64,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn of_category(&self, category_id: u64) -> Vec<Detection> {
        self.detections
            .iter()
            .filter(|d| d.category_id == category_id)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub score: f64,
    pub nms: f64,
}

/// Per-category thresholds keyed by category id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdConfig(pub BTreeMap<u64, Thresholds>);

impl ThresholdConfig {
    pub fn uniform(categories: &CategoryTable, score: f64, nms: f64) -> Self {
        ThresholdConfig(categories.entries().iter().map(|c| (c.id, Thresholds { score, nms })).collect())
    }

    pub fn validate(&self) -> Result<()> {
        for (id, t) in &self.0 {
            if !(0.0..=1.0).contains(&t.score) || !(0.0..=1.0).contains(&t.nms) {
                return Err(Error::InvalidArgument(format!("thresholds for category {id} outside [0, 1]: {t:?}")));
            }
        }
        Ok(())
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Input indices sorted by descending score, ties by index.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

/// Greedy NMS over one category. Returns indices of kept detections in
/// descending score order; a detection is dropped when its IoU with an
/// already kept one exceeds `overlap`.
pub fn nms(dets: &[Detection], overlap: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(dets) {
        if kept.iter().all(|&k| iou(&dets[k].bbox, &dets[i].bbox) <= overlap) {
            kept.push(i);
        }
    }
    kept
}

fn count_category(dets: &[Detection], t: Thresholds) -> usize {
    let above: Vec<Detection> = dets.iter().filter(|d| d.score >= t.score).copied().collect();
    nms(&above, t.nms).len()
}

/// Per-category number of detections that survive NMS and the score threshold.
/// Categories missing from `config` count zero.
pub fn detect_count(dets: &DetectionSet, config: &ThresholdConfig, categories: &CategoryTable) -> ImageCounts {
    ImageCounts(
        categories
            .entries()
            .iter()
            .map(|cat| match config.0.get(&cat.id) {
                Some(&t) => count_category(&dets.of_category(cat.id), t) as f64,
                None => 0.0,
            })
            .collect(),
    )
}

/// `points` evenly spaced values from 0 to 1 inclusive.
pub fn threshold_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

fn category_rmse(per_image: &[Vec<Detection>], gts: &[f64], t: Thresholds) -> f64 {
    let sq: f64 = per_image
        .iter()
        .zip(gts)
        .map(|(d, &g)| {
            let e = count_category(d, t) as f64 - g;
            e * e
        })
        .sum();
    (sq / gts.len() as f64).sqrt()
}

/// First grid value minimizing `f`.
fn argmin_on_grid(grid: &[f64], mut f: impl FnMut(f64) -> f64) -> f64 {
    let mut best = (grid[0], f(grid[0]));
    for &t in &grid[1..] {
        let v = f(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best.0
}

/// Two-pass coordinate search per category on a validation set: the score
/// threshold is chosen with NMS fixed at 0.3, then the NMS threshold with that
/// score threshold fixed. Both minimize count RMSE over `grid`; ties go to the
/// lower threshold.
pub fn tune_thresholds(
    val_dets: &[DetectionSet],
    val_gts: &[ImageCounts],
    categories: &CategoryTable,
    grid: &[f64],
) -> Result<ThresholdConfig> {
    if val_dets.is_empty() {
        return Err(Error::Empty("threshold tuning needs validation images".into()));
    }
    if val_dets.len() != val_gts.len() {
        return Err(Error::Shape(format!("{} detection sets for {} images", val_dets.len(), val_gts.len())));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let mut out = BTreeMap::new();
    for (k, cat) in categories.entries().iter().enumerate() {
        let per_image: Vec<Vec<Detection>> = val_dets.iter().map(|d| d.of_category(cat.id)).collect();
        let gts: Vec<f64> = val_gts.iter().map(|g| g.get(k)).collect();
        let score = argmin_on_grid(grid, |s| category_rmse(&per_image, &gts, Thresholds { score: s, nms: TUNING_NMS }));
        let nms = argmin_on_grid(grid, |n| category_rmse(&per_image, &gts, Thresholds { score, nms: n }));
        out.insert(cat.id, Thresholds { score, nms });
    }
    Ok(ThresholdConfig(out))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectionRecord {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

/// Reads a flat detection array and groups it by image id (ascending).
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionSet>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<DetectionRecord> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let mut grouped: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for (n, r) in records.into_iter().enumerate() {
        let [x, y, w, h] = r.bbox;
        let bbox = BBox::new(x, y, w, h);
        if !bbox.is_valid() || !r.score.is_finite() {
            return Err(Error::Schema(format!("detection {n} has an invalid box or score")));
        }
        grouped.entry(r.image_id).or_default().push(Detection {
            bbox,
            score: r.score,
            category_id: r.category_id,
        });
    }
    Ok(grouped
        .into_iter()
        .map(|(image_id, detections)| DetectionSet { image_id, detections })
        .collect())
}

pub fn save_detections(path: impl AsRef<Path>, sets: &[DetectionSet]) -> Result<()> {
    let path = path.as_ref();
    let records: Vec<DetectionRecord> = sets
        .iter()
        .flat_map(|s| {
            s.detections.iter().map(move |d| DetectionRecord {
                image_id: s.image_id,
                category_id: d.category_id,
                bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                score: d.score,
            })
        })
        .collect();
    fs::write(path, serde_json::to_string(&records).expect("detections serialize")).map_err(|e| Error::io(path, e))
}

/// Knobs of the simulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSim {
    /// Probability that an object gets a detection at all.
    pub recall: f64,
    /// Probability of an extra, overlapping low-score box per detected object.
    pub duplicate_rate: f64,
    /// Upper bound (inclusive) of spurious boxes per image and category.
    pub max_false_positives: u32,
    /// Half-width of the per-image score offset; larger means worse calibration across images.
    pub offset_spread: f64,
    /// Box corner jitter as a fraction of the object size.
    pub jitter: f64,
}

impl Default for DetectorSim {
    fn default() -> Self {
        DetectorSim {
            recall: 0.9,
            duplicate_rate: 0.5,
            max_false_positives: 3,
            offset_spread: 0.25,
            jitter: 0.08,
        }
    }
}

/// Simulated detector output for annotated scenes. Within an image and
/// category every true detection outscores every duplicate and spurious box,
/// while a per-image offset shifts all scores of the image so that no single
/// global threshold separates them.
pub fn synthesize_detections(scenes: &[SceneAnnotation], categories: &CategoryTable, sim: &DetectorSim, seed: u64) -> Vec<DetectionSet> {
    scenes
        .iter()
        .map(|scene| {
            let mut rng = rng::stream(seed, &format!("detections/{}", scene.image_id));
            let offset = rng.gen_range(-sim.offset_spread..=sim.offset_spread);
            let (w, h) = (f64::from(scene.width), f64::from(scene.height));
            let mut detections = Vec::new();
            for cat in categories.entries() {
                let mut sizes = Vec::new();
                for inst in scene.instances.iter().filter(|i| i.category_id == cat.id) {
                    sizes.push(inst.bbox.w.max(inst.bbox.h));
                    if !rng.gen_bool(sim.recall) {
                        continue;
                    }
                    let bbox = jittered(&mut rng, &inst.bbox, sim.jitter, w, h);
                    let score = (0.55 + offset + rng.gen_range(0.0..0.4)).clamp(0.0, 1.0);
                    detections.push(Detection { bbox, score, category_id: cat.id });
                    if rng.gen_bool(sim.duplicate_rate) {
                        let bbox = jittered(&mut rng, &inst.bbox, 3.0 * sim.jitter, w, h);
                        let score = (0.15 + offset + rng.gen_range(0.0..0.4)).clamp(0.0, 1.0);
                        detections.push(Detection { bbox, score, category_id: cat.id });
                    }
                }
                let side = if sizes.is_empty() { 0.1 * w.min(h) } else { sizes.iter().sum::<f64>() / sizes.len() as f64 };
                for _ in 0..rng.gen_range(0..=sim.max_false_positives) {
                    let s = side.min(w).min(h);
                    let bbox = BBox::new(rng.gen_range(0.0..=w - s), rng.gen_range(0.0..=h - s), s, s);
                    let score = (0.15 + offset + rng.gen_range(0.0..0.4)).clamp(0.0, 1.0);
                    detections.push(Detection { bbox, score, category_id: cat.id });
                }
            }
            DetectionSet {
                image_id: scene.image_id,
                detections,
            }
        })
        .collect()
}

fn jittered(rng: &mut impl Rng, b: &BBox, jitter: f64, width: f64, height: f64) -> BBox {
    let dx = rng.gen_range(-jitter..=jitter) * b.w;
    let dy = rng.gen_range(-jitter..=jitter) * b.h;
    let sw = 1.0 + rng.gen_range(-jitter..=jitter);
    let sh = 1.0 + rng.gen_range(-jitter..=jitter);
    let moved = BBox::new(b.x + dx, b.y + dy, b.w * sw, b.h * sh);
    moved.clipped(width, height).unwrap_or(*b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Category;

    fn det(x: f64, y: f64, w: f64, h: f64, score: f64) -> Detection {
        Detection {
            bbox: BBox::new(x, y, w, h),
            score,
            category_id: 1,
        }
    }

    fn one_category() -> CategoryTable {
        CategoryTable::new(vec![Category {
            id: 1,
            name: "thing".into(),
            supercategory: String::new(),
        }])
        .unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 1.0, 2.0, 2.0)) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn nms_examples() {
        assert_eq!(nms(&[det(0.0, 0.0, 1.0, 1.0, 0.4)], 0.5), vec![0]);
        let dup = [det(0.0, 0.0, 4.0, 4.0, 0.8), det(0.0, 0.0, 4.0, 4.0, 0.9)];
        assert_eq!(nms(&dup, 0.5), vec![1]);
        let tie = [det(0.0, 0.0, 4.0, 4.0, 0.7), det(0.0, 0.0, 4.0, 4.0, 0.7)];
        assert_eq!(nms(&tie, 0.5), vec![0]);
    }

    #[test]
    fn counting_extremes() {
        let cats = one_category();
        let empty = DetectionSet { image_id: 1, detections: vec![] };
        let cfg = ThresholdConfig::uniform(&cats, 0.5, 0.3);
        assert_eq!(detect_count(&empty, &cfg, &cats).0, vec![0.0]);
        let set = DetectionSet {
            image_id: 1,
            detections: vec![det(0.0, 0.0, 1.0, 1.0, 0.99), det(5.0, 5.0, 1.0, 1.0, 0.5)],
        };
        assert_eq!(detect_count(&set, &ThresholdConfig::uniform(&cats, 1.0, 0.3), &cats).0, vec![0.0]);
        assert_eq!(detect_count(&set, &ThresholdConfig::uniform(&cats, 0.0, 0.3), &cats).0, vec![2.0]);
    }

    #[test]
    fn looser_nms_can_lower_the_count() {
        // b overlaps a a little and c, d a lot; once b survives it removes both
        let cats = one_category();
        let set = DetectionSet {
            image_id: 1,
            detections: vec![
                det(4.0, 0.0, 2.0, 1.0, 0.9),
                det(0.0, 0.0, 10.0, 1.0, 0.8),
                det(0.0, 0.0, 4.0, 1.0, 0.7),
                det(6.0, 0.0, 4.0, 1.0, 0.6),
            ],
        };
        assert_eq!(detect_count(&set, &ThresholdConfig::uniform(&cats, 0.0, 0.15), &cats).0, vec![3.0]);
        assert_eq!(detect_count(&set, &ThresholdConfig::uniform(&cats, 0.0, 0.3), &cats).0, vec![2.0]);
        assert_eq!(detect_count(&set, &ThresholdConfig::uniform(&cats, 0.0, 1.0), &cats).0, vec![4.0]);
    }

    #[test]
    fn grid_endpoints() {
        let g = threshold_grid(THRESHOLD_GRID_POINTS);
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[100]), (0.0, 1.0));
        assert_eq!(threshold_grid(5), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn tuning_needs_data() {
        assert!(matches!(
            tune_thresholds(&[], &[], &one_category(), &threshold_grid(5)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn detection_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let sets = vec![
            DetectionSet { image_id: 2, detections: vec![det(1.0, 2.0, 3.0, 4.0, 0.5)] },
            DetectionSet { image_id: 7, detections: vec![det(0.5, 0.0, 1.0, 1.0, 0.25)] },
        ];
        save_detections(&path, &sets).unwrap();
        assert_eq!(load_detections(&path).unwrap(), sets);
    }
}
