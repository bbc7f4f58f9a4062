//! Error breakdowns by count value, under/over-counting rates, ensembling and
//! occlusion sensitivity.

use serde::{Deserialize, Serialize};

use crate::data::{featurize, Raster};
use crate::gridgt::{make_partition, ImageCounts};
use crate::models::CountModel;
use crate::{Error, Result};

fn check_pairs(preds: &[ImageCounts], gts: &[ImageCounts]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} images", preds.len(), gts.len())));
    }
    if let Some(i) = preds.iter().zip(gts).position(|(p, g)| p.len() != g.len()) {
        return Err(Error::Shape(format!("image {i} has mismatched category counts")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountErrorRow {
    /// Ground-truth count value of the bucket.
    pub count: u64,
    /// (image, category) instances in the bucket.
    pub instances: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountErrorProfile {
    /// Populated buckets with ground truth `0..=max_count`, ascending.
    pub rows: Vec<CountErrorRow>,
    /// Everything above `max_count`, reported under `count = max_count + 1`.
    pub overflow: Option<CountErrorRow>,
}

impl CountErrorProfile {
    /// Mean squared error over all instances, recombined from the buckets.
    pub fn overall_mse(&self) -> f64 {
        let (sum, n) = self
            .rows
            .iter()
            .chain(&self.overflow)
            .fold((0.0, 0usize), |(s, n), r| (s + r.rmse * r.rmse * r.instances as f64, n + r.instances));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// RMSE over all (image, category) instances sharing a ground-truth count.
/// Predictions are used as given; pass post-processed counts.
pub fn count_error_profile(preds: &[ImageCounts], gts: &[ImageCounts], max_count: u64) -> Result<CountErrorProfile> {
    check_pairs(preds, gts)?;
    let buckets = max_count as usize + 2;
    let mut sums = vec![0.0; buckets];
    let mut counts = vec![0usize; buckets];
    for (p, g) in preds.iter().zip(gts) {
        for (&pv, &gv) in p.0.iter().zip(&g.0) {
            let b = (gv.max(0.0).round() as u64).min(max_count + 1) as usize;
            sums[b] += (pv - gv) * (pv - gv);
            counts[b] += 1;
        }
    }
    let row = |b: usize| {
        (counts[b] > 0).then(|| CountErrorRow {
            count: b as u64,
            instances: counts[b],
            rmse: (sums[b] / counts[b] as f64).sqrt(),
        })
    };
    Ok(CountErrorProfile {
        rows: (0..=max_count as usize).filter_map(row).collect(),
        overflow: row(max_count as usize + 1),
    })
}

/// Shares of nonzero-ground-truth instances that are under-, over- and exactly counted, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    pub undercount: f64,
    pub overcount: f64,
    pub equal: f64,
    pub instances: usize,
}

pub fn count_bias_stats(preds: &[ImageCounts], gts: &[ImageCounts]) -> Result<BiasStats> {
    check_pairs(preds, gts)?;
    let (mut under, mut over, mut equal) = (0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        for (&pv, &gv) in p.0.iter().zip(&g.0) {
            if gv <= 0.0 {
                continue;
            }
            match pv.partial_cmp(&gv) {
                Some(std::cmp::Ordering::Less) => under += 1,
                Some(std::cmp::Ordering::Greater) => over += 1,
                _ => equal += 1,
            }
        }
    }
    let n = under + over + equal;
    if n == 0 {
        return Err(Error::Empty("no instance has a nonzero ground-truth count".into()));
    }
    let pct = |x: usize| 100.0 * x as f64 / n as f64;
    Ok(BiasStats {
        undercount: pct(under),
        overcount: pct(over),
        equal: pct(equal),
        instances: n,
    })
}

/// Element-wise mean of several aligned prediction sets (raw counts).
pub fn ensemble(members: &[Vec<ImageCounts>]) -> Result<Vec<ImageCounts>> {
    let first = members.first().ok_or_else(|| Error::Empty("ensemble needs at least one member".into()))?;
    for (m, member) in members.iter().enumerate() {
        if member.len() != first.len()
            || member.iter().zip(first).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Shape(format!("ensemble member {m} is not aligned with member 0")));
        }
    }
    let n = members.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            ImageCounts(
                (0..first[i].len())
                    .map(|k| members.iter().map(|m| m[i].get(k)).sum::<f64>() / n)
                    .collect(),
            )
        })
        .collect())
}

/// Count drop for one category when each block of a `mask_grid x mask_grid`
/// tiling of the image is blanked out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionMap {
    pub rows: usize,
    pub cols: usize,
    pub category: usize,
    /// Unmasked raw count.
    pub base: f64,
    /// `base - masked count`, row-major over mask positions.
    pub deltas: Vec<f64>,
}

pub fn occlusion_map(model: &CountModel, raster: &Raster, mask_grid: usize, category: usize) -> Result<OcclusionMap> {
    if category >= model.num_categories {
        return Err(Error::InvalidArgument(format!(
            "category index {category} out of range for {} categories",
            model.num_categories
        )));
    }
    let masks = make_partition(raster.width(), raster.height(), mask_grid, mask_grid)
        .map_err(|_| Error::InvalidArgument(format!("{mask_grid}x{mask_grid} mask grid larger than the image")))?;
    let predict = |r: &Raster| -> Result<f64> {
        let features = featurize(r, model.rows, model.cols)?;
        Ok(model.predict(&features)?.get(category))
    };
    let base = predict(raster)?;
    let mut deltas = Vec::with_capacity(masks.cells());
    for r in 0..mask_grid {
        for c in 0..mask_grid {
            let (x0, x1) = masks.col_span(c);
            let (y0, y1) = masks.row_span(r);
            let mut masked = raster.clone();
            masked.clear_rect(x0, y0, x1, y1);
            deltas.push(base - predict(&masked)?);
        }
    }
    Ok(OcclusionMap {
        rows: mask_grid,
        cols: mask_grid,
        category,
        base,
        deltas,
    })
}
