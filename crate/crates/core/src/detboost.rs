//! Using counts to choose how many detections to keep per image.
//!
//! Detections are scored against ground truth with a greedy one-to-one
//! matching at IoU ≥ 0.5 and summarized by mF, the F-measure averaged over
//! (image, category) pairs. Pairs with neither ground truth nor detections
//! carry no information and are left out of the average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{BBox, CategoryTable, SceneAnnotation};
use crate::detcount::{iou, nms, Detection, DetectionSet};
use crate::gridgt::ImageCounts;
use crate::{Error, Result};

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// (detection index, ground-truth index)
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl MatchResult {
    /// True when there was nothing to detect and nothing was detected.
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.false_positives.is_empty() && self.false_negatives.is_empty()
    }
}

/// Detections in descending score order (ties by index) each claim the
/// unclaimed ground-truth box they overlap most, provided the IoU is at
/// least 0.5. Overlap ties go to the lower ground-truth index.
pub fn match_detections(dets: &[Detection], gts: &[BBox]) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut claimed = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] {
                continue;
            }
            let o = iou(&dets[d].bbox, gt);
            if o >= MATCH_IOU && best.map_or(true, |(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        match best {
            Some((g, _)) => {
                claimed[g] = true;
                result.pairs.push((d, g));
            }
            None => result.false_positives.push(d),
        }
    }
    result.false_positives.sort_unstable();
    result.false_negatives = (0..gts.len()).filter(|&g| !claimed[g]).collect();
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision, recall and their harmonic mean. An undefined ratio (no
/// detections, or no ground truth) counts as 0, as does F when P + R = 0.
pub fn f_measure(m: &MatchResult) -> FScore {
    let tp = m.pairs.len() as f64;
    let ratio = |den: f64| if den > 0.0 { tp / den } else { 0.0 };
    let precision = ratio(tp + m.false_positives.len() as f64);
    let recall = ratio(tp + m.false_negatives.len() as f64);
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    FScore { precision, recall, f }
}

pub fn mean_f_measure(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("no (image, category) pair to average".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn gt_boxes(scene: &SceneAnnotation, category_id: u64) -> Vec<BBox> {
    scene
        .instances
        .iter()
        .filter(|i| i.category_id == category_id)
        .map(|i| i.bbox)
        .collect()
}

/// F values of every non-empty (image, category) pair.
pub fn f_values(sets: &[DetectionSet], scenes: &[SceneAnnotation], categories: &CategoryTable) -> Result<Vec<f64>> {
    if sets.len() != scenes.len() {
        return Err(Error::Shape(format!("{} detection sets for {} scenes", sets.len(), scenes.len())));
    }
    let mut out = Vec::new();
    for (set, scene) in sets.iter().zip(scenes) {
        for cat in categories.entries() {
            let m = match_detections(&set.of_category(cat.id), &gt_boxes(scene, cat.id));
            if !m.is_empty() {
                out.push(f_measure(&m).f);
            }
        }
    }
    Ok(out)
}

pub fn mean_f(sets: &[DetectionSet], scenes: &[SceneAnnotation], categories: &CategoryTable) -> Result<f64> {
    mean_f_measure(&f_values(sets, scenes, categories)?)
}

/// Per-category NMS over a whole detection set.
pub fn apply_nms(set: &DetectionSet, overlap: f64) -> DetectionSet {
    let mut by_category: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in &set.detections {
        by_category.entry(d.category_id).or_default().push(*d);
    }
    let detections = by_category
        .values()
        .flat_map(|dets| nms(dets, overlap).into_iter().map(move |i| dets[i]))
        .collect();
    DetectionSet {
        image_id: set.image_id,
        detections,
    }
}

fn threshold_set(set: &DetectionSet, thresholds: &BTreeMap<u64, f64>) -> DetectionSet {
    DetectionSet {
        image_id: set.image_id,
        detections: set
            .detections
            .iter()
            .filter(|d| thresholds.get(&d.category_id).map_or(false, |&t| d.score >= t))
            .copied()
            .collect(),
    }
}

/// Fixed per-category score thresholds maximizing the mean F-measure of the
/// validation images (detections already passed through NMS). Ties go to the
/// lower threshold; a category that never forms a scorable pair gets the
/// lowest grid value.
pub fn fit_base_thresholds(
    val_dets: &[DetectionSet],
    val_scenes: &[SceneAnnotation],
    categories: &CategoryTable,
    grid: &[f64],
) -> Result<BTreeMap<u64, f64>> {
    if val_dets.is_empty() {
        return Err(Error::Empty("base threshold fitting needs validation images".into()));
    }
    if val_dets.len() != val_scenes.len() {
        return Err(Error::Shape(format!("{} detection sets for {} scenes", val_dets.len(), val_scenes.len())));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let mut out = BTreeMap::new();
    for cat in categories.entries() {
        let per_image: Vec<(Vec<Detection>, Vec<BBox>)> = val_dets
            .iter()
            .zip(val_scenes)
            .map(|(d, s)| (d.of_category(cat.id), gt_boxes(s, cat.id)))
            .collect();
        let mut best: Option<(f64, f64)> = None;
        for &t in grid {
            let fs: Vec<f64> = per_image
                .iter()
                .filter_map(|(dets, gts)| {
                    let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= t).copied().collect();
                    let m = match_detections(&kept, gts);
                    (!m.is_empty()).then(|| f_measure(&m).f)
                })
                .collect();
            if let Ok(mf) = mean_f_measure(&fs) {
                if best.map_or(true, |(_, b)| mf > b) {
                    best = Some((t, mf));
                }
            }
        }
        out.insert(cat.id, best.map_or(grid[0], |(t, _)| t));
    }
    Ok(out)
}

/// Keeps, per category, the `c` highest-scoring detections when the
/// predicted count `c` is positive (ties by input order), and falls back to
/// the base threshold when it is zero.
pub fn count_guided_select(
    dets: &DetectionSet,
    counts: &ImageCounts,
    base: &BTreeMap<u64, f64>,
    categories: &CategoryTable,
) -> Result<DetectionSet> {
    if counts.len() != categories.len() {
        return Err(Error::Shape(format!("{} counts for {} categories", counts.len(), categories.len())));
    }
    let mut detections = Vec::new();
    for (k, cat) in categories.entries().iter().enumerate() {
        let mine = dets.of_category(cat.id);
        let c = counts.get(k).max(0.0).round() as usize;
        if c > 0 {
            let mut order: Vec<usize> = (0..mine.len()).collect();
            order.sort_by(|&a, &b| mine[b].score.total_cmp(&mine[a].score).then(a.cmp(&b)));
            detections.extend(order.into_iter().take(c).map(|i| mine[i]));
        } else {
            let t = base.get(&cat.id).copied().unwrap_or(f64::INFINITY);
            detections.extend(mine.into_iter().filter(|d| d.score >= t));
        }
    }
    Ok(DetectionSet {
        image_id: dets.image_id,
        detections,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRow {
    pub method: String,
    pub mean_f: f64,
    pub pairs: usize,
}

/// mF of fixed base thresholds, count-guided selection with `predicted`
/// counts, and count-guided selection with ground-truth counts, all on
/// detections after `nms_overlap` suppression.
pub fn boost_report(
    test_dets: &[DetectionSet],
    test_scenes: &[SceneAnnotation],
    predicted: &[ImageCounts],
    base: &BTreeMap<u64, f64>,
    categories: &CategoryTable,
    nms_overlap: f64,
) -> Result<Vec<BoostRow>> {
    if predicted.len() != test_dets.len() {
        return Err(Error::Shape(format!("{} count vectors for {} images", predicted.len(), test_dets.len())));
    }
    let after_nms: Vec<DetectionSet> = test_dets.iter().map(|d| apply_nms(d, nms_overlap)).collect();
    let row = |method: &str, sets: Vec<DetectionSet>| -> Result<BoostRow> {
        let fs = f_values(&sets, test_scenes, categories)?;
        Ok(BoostRow {
            method: method.to_string(),
            mean_f: mean_f_measure(&fs)?,
            pairs: fs.len(),
        })
    };
    let base_sets = after_nms.iter().map(|d| threshold_set(d, base)).collect();
    let guided = after_nms
        .iter()
        .zip(predicted)
        .map(|(d, c)| count_guided_select(d, c, base, categories))
        .collect::<Result<Vec<_>>>()?;
    let oracle = after_nms
        .iter()
        .zip(test_scenes)
        .map(|(d, s)| count_guided_select(d, &ImageCounts(s.instance_counts(categories)), base, categories))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![row("base", base_sets)?, row("count-guided", guided)?, row("oracle", oracle)?])
}
