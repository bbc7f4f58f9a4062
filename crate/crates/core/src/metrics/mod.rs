//! Count post-processing, RMSE families and bootstrap evaluation.
//!
//! For category `k` over `N` images with ground truth `c` and post-processed
//! prediction `ĉ`:
//!
//! ```text
//! RMSE_k    = sqrt( 1/N Σ (ĉ - c)² )
//! relRMSE_k = sqrt( 1/N Σ (ĉ - c)² / (c + 1) )
//! ```
//!
//! The `-nz` variants restrict the sums to images where `c > 0`. Means
//! (`mRMSE`, ...) average the per-category values; a category without any
//! nonzero ground truth is left out of the nonzero means.

mod analysis;
mod baselines;
mod report;

pub use analysis::{count_bias_stats, count_error_profile, ensemble, occlusion_map, BiasStats, CountErrorProfile, CountErrorRow, OcclusionMap};
pub use baselines::{fit_baseline, predict_baseline, BaselineKind, BaselineSpec};
pub use report::{evaluate, evaluate_splits, CategoryRow, MeanStd, MetricSpread, MetricValues, MetricsReport, BOOTSTRAP_RESAMPLES};

use crate::gridgt::ImageCounts;
use crate::{Error, Result};

/// `round(max(0, c))` per category, halves rounding away from zero.
pub fn postprocess(raw: &ImageCounts) -> Result<ImageCounts> {
    raw.0
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            if c.is_finite() {
                Ok(c.max(0.0).round())
            } else {
                Err(Error::NonFinite(format!("count for category index {k} is {c}")))
            }
        })
        .collect::<Result<Vec<f64>>>()
        .map(ImageCounts)
}

pub fn postprocess_all(raw: &[ImageCounts]) -> Result<Vec<ImageCounts>> {
    raw.iter().map(postprocess).collect()
}

fn check_aligned(preds: &[ImageCounts], gts: &[ImageCounts], k: usize) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} images", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::Empty("no images to evaluate".into()));
    }
    if let Some(i) = preds.iter().zip(gts).position(|(p, g)| p.len() <= k || g.len() <= k) {
        return Err(Error::Shape(format!("image {i} has no value for category index {k}")));
    }
    Ok(())
}

fn root_mean<I: Iterator<Item = (f64, f64)>>(pairs: I, scaled: bool) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in pairs {
        let sq = (p - g) * (p - g);
        sum += if scaled { sq / (g + 1.0) } else { sq };
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

pub fn rmse(preds: &[ImageCounts], gts: &[ImageCounts], k: usize) -> Result<f64> {
    check_aligned(preds, gts, k)?;
    Ok(root_mean(preds.iter().zip(gts).map(|(p, g)| (p.get(k), g.get(k))), false).unwrap())
}

pub fn rel_rmse(preds: &[ImageCounts], gts: &[ImageCounts], k: usize) -> Result<f64> {
    check_aligned(preds, gts, k)?;
    Ok(root_mean(preds.iter().zip(gts).map(|(p, g)| (p.get(k), g.get(k))), true).unwrap())
}

/// RMSE over the images whose ground truth for `k` is positive; `None` when there are none.
pub fn rmse_nz(preds: &[ImageCounts], gts: &[ImageCounts], k: usize) -> Result<Option<f64>> {
    check_aligned(preds, gts, k)?;
    Ok(root_mean(
        preds.iter().zip(gts).map(|(p, g)| (p.get(k), g.get(k))).filter(|&(_, g)| g > 0.0),
        false,
    ))
}

pub fn rel_rmse_nz(preds: &[ImageCounts], gts: &[ImageCounts], k: usize) -> Result<Option<f64>> {
    check_aligned(preds, gts, k)?;
    Ok(root_mean(
        preds.iter().zip(gts).map(|(p, g)| (p.get(k), g.get(k))).filter(|&(_, g)| g > 0.0),
        true,
    ))
}
