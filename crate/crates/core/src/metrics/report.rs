use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_aligned, postprocess_all};
use crate::data::CategoryTable;
use crate::gridgt::ImageCounts;
use crate::rng;
use crate::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 10;

/// The four error measures for one category, or their category means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub rmse: f64,
    pub rel_rmse: f64,
    pub rmse_nz: Option<f64>,
    pub rel_rmse_nz: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over resamples.
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

/// Bootstrap spread of each measure. A nonzero measure is summarized over the
/// resamples where it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpread {
    pub rmse: MeanStd,
    pub rel_rmse: MeanStd,
    pub rmse_nz: Option<MeanStd>,
    pub rel_rmse_nz: Option<MeanStd>,
}

impl MetricSpread {
    fn of(samples: &[MetricValues]) -> Self {
        let collect = |f: fn(&MetricValues) -> Option<f64>| -> Vec<f64> { samples.iter().filter_map(f).collect() };
        MetricSpread {
            rmse: MeanStd::of(&collect(|m| Some(m.rmse))).expect("at least one resample"),
            rel_rmse: MeanStd::of(&collect(|m| Some(m.rel_rmse))).expect("at least one resample"),
            rmse_nz: MeanStd::of(&collect(|m| m.rmse_nz)),
            rel_rmse_nz: MeanStd::of(&collect(|m| m.rel_rmse_nz)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category_id: u64,
    pub name: String,
    pub values: MetricValues,
    pub bootstrap: MetricSpread,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Images in the test set and in every resample.
    pub images: usize,
    pub resamples: usize,
    pub seed: u64,
    pub categories: Vec<CategoryRow>,
    /// mRMSE, m-relRMSE, mRMSE-nz, m-relRMSE-nz on the full test set.
    pub mean: MetricValues,
    pub mean_bootstrap: MetricSpread,
}

fn category_values(preds: &[&ImageCounts], gts: &[&ImageCounts], k: usize) -> MetricValues {
    let pairs = || preds.iter().zip(gts).map(|(p, g)| (p.get(k), g.get(k)));
    let n = preds.len() as f64;
    let (mut sq, mut rel, mut sq_nz, mut rel_nz, mut n_nz) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (p, g) in pairs() {
        let e = (p - g) * (p - g);
        sq += e;
        rel += e / (g + 1.0);
        if g > 0.0 {
            sq_nz += e;
            rel_nz += e / (g + 1.0);
            n_nz += 1;
        }
    }
    let nz = |s: f64| (n_nz > 0).then(|| (s / n_nz as f64).sqrt());
    MetricValues {
        rmse: (sq / n).sqrt(),
        rel_rmse: (rel / n).sqrt(),
        rmse_nz: nz(sq_nz),
        rel_rmse_nz: nz(rel_nz),
    }
}

fn mean_values(per_category: &[MetricValues]) -> MetricValues {
    let avg = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    MetricValues {
        rmse: avg(per_category.iter().map(|m| m.rmse).collect()).unwrap_or(0.0),
        rel_rmse: avg(per_category.iter().map(|m| m.rel_rmse).collect()).unwrap_or(0.0),
        rmse_nz: avg(per_category.iter().filter_map(|m| m.rmse_nz).collect()),
        rel_rmse_nz: avg(per_category.iter().filter_map(|m| m.rel_rmse_nz).collect()),
    }
}

fn split_values(preds: &[ImageCounts], gts: &[ImageCounts], split: &[usize], k_total: usize) -> Vec<MetricValues> {
    let p: Vec<&ImageCounts> = split.iter().map(|&i| &preds[i]).collect();
    let g: Vec<&ImageCounts> = split.iter().map(|&i| &gts[i]).collect();
    (0..k_total).map(|k| category_values(&p, &g, k)).collect()
}

/// Full report with `BOOTSTRAP_RESAMPLES` whole-image resamples (with
/// replacement, same size as the test set) drawn from `seed`.
pub fn evaluate(preds: &[ImageCounts], gts: &[ImageCounts], categories: &CategoryTable, seed: u64) -> Result<MetricsReport> {
    let n = preds.len();
    let mut rng = rng::stream(seed, "bootstrap");
    let splits: Vec<Vec<usize>> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| rng.gen_range(0..n.max(1))).collect())
        .collect();
    let mut report = evaluate_splits(preds, gts, categories, &splits)?;
    report.seed = seed;
    Ok(report)
}

/// Like [`evaluate`] with caller-chosen resamples (lists of image indices).
pub fn evaluate_splits(
    preds: &[ImageCounts],
    gts: &[ImageCounts],
    categories: &CategoryTable,
    splits: &[Vec<usize>],
) -> Result<MetricsReport> {
    let k_total = categories.len();
    if k_total == 0 {
        return Err(Error::Empty("no categories".into()));
    }
    for k in 0..k_total {
        check_aligned(preds, gts, k)?;
    }
    if splits.is_empty() || splits.iter().any(|s| s.is_empty() || s.iter().any(|&i| i >= preds.len())) {
        return Err(Error::InvalidArgument("resamples must be non-empty lists of valid image indices".into()));
    }
    let preds = postprocess_all(preds)?;
    let all: Vec<usize> = (0..preds.len()).collect();
    let full = split_values(&preds, gts, &all, k_total);
    let per_split: Vec<Vec<MetricValues>> = splits.iter().map(|s| split_values(&preds, gts, s, k_total)).collect();

    let categories_rows = categories
        .entries()
        .iter()
        .enumerate()
        .map(|(k, cat)| {
            let samples: Vec<MetricValues> = per_split.iter().map(|v| v[k]).collect();
            CategoryRow {
                category_id: cat.id,
                name: cat.name.clone(),
                values: full[k],
                bootstrap: MetricSpread::of(&samples),
            }
        })
        .collect();
    let mean_samples: Vec<MetricValues> = per_split.iter().map(|v| mean_values(v)).collect();
    Ok(MetricsReport {
        images: preds.len(),
        resamples: splits.len(),
        seed: 0,
        categories: categories_rows,
        mean: mean_values(&full),
        mean_bootstrap: MetricSpread::of(&mean_samples),
    })
}

const CSV_HEADER: &str = "category_id,name,rmse,rel_rmse,rmse_nz,rel_rmse_nz,\
rmse_boot_mean,rmse_boot_std,rel_rmse_boot_mean,rel_rmse_boot_std,\
rmse_nz_boot_mean,rmse_nz_boot_std,rel_rmse_nz_boot_mean,rel_rmse_nz_boot_std,images,resamples,seed";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// One row per category plus a final `mean` row. Empty fields mark
    /// undefined nonzero measures.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let mut row = |id: &str, name: &str, v: &MetricValues, b: &MetricSpread| {
            writeln!(
                out,
                "{id},{name},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                v.rmse,
                v.rel_rmse,
                opt(v.rmse_nz),
                opt(v.rel_rmse_nz),
                b.rmse.mean,
                b.rmse.std,
                b.rel_rmse.mean,
                b.rel_rmse.std,
                opt(b.rmse_nz.map(|m| m.mean)),
                opt(b.rmse_nz.map(|m| m.std)),
                opt(b.rel_rmse_nz.map(|m| m.mean)),
                opt(b.rel_rmse_nz.map(|m| m.std)),
                self.images,
                self.resamples,
                self.seed
            )
            .unwrap();
        };
        for c in &self.categories {
            row(&c.category_id.to_string(), &c.name, &c.values, &c.bootstrap);
        }
        row("", "mean", &self.mean, &self.mean_bootstrap);
        out
    }
}
