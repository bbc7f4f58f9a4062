use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gridgt::ImageCounts;
use crate::{Error, Result};

/// Non-learned reference predictors. The count-classification baseline is a
/// trained model (`ModelKind::GtClass`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// The most frequent count, zero.
    #[serde(rename = "always-0")]
    Always0,
    /// Mean count over all training images and categories.
    Mean,
    /// The most frequent nonzero count, one.
    #[serde(rename = "always-1")]
    Always1,
    /// Per-category mean count.
    CategoryMean,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Always0 => "always-0",
            BaselineKind::Mean => "mean",
            BaselineKind::Always1 => "always-1",
            BaselineKind::CategoryMean => "category-mean",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always-0" => Ok(BaselineKind::Always0),
            "mean" => Ok(BaselineKind::Mean),
            "always-1" => Ok(BaselineKind::Always1),
            "category-mean" => Ok(BaselineKind::CategoryMean),
            other => Err(Error::InvalidArgument(format!("unknown baseline {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    /// Per-category prediction before rounding.
    pub counts: Vec<f64>,
}

pub fn fit_baseline(kind: BaselineKind, train_gts: &[ImageCounts], num_categories: usize) -> Result<BaselineSpec> {
    let counts = match kind {
        BaselineKind::Always0 => vec![0.0; num_categories],
        BaselineKind::Always1 => vec![1.0; num_categories],
        BaselineKind::Mean | BaselineKind::CategoryMean => {
            if train_gts.is_empty() {
                return Err(Error::Empty(format!("{kind} baseline needs training counts")));
            }
            if let Some(i) = train_gts.iter().position(|g| g.len() != num_categories) {
                return Err(Error::Shape(format!("training image {i} does not have {num_categories} counts")));
            }
            let n = train_gts.len() as f64;
            let per_category: Vec<f64> = (0..num_categories)
                .map(|k| train_gts.iter().map(|g| g.get(k)).sum::<f64>() / n)
                .collect();
            if kind == BaselineKind::Mean {
                let global = per_category.iter().sum::<f64>() / num_categories as f64;
                vec![global; num_categories]
            } else {
                per_category
            }
        }
    };
    Ok(BaselineSpec { kind, counts })
}

/// Raw prediction for any image; apply `postprocess` before evaluation.
pub fn predict_baseline(spec: &BaselineSpec) -> ImageCounts {
    ImageCounts(spec.counts.clone())
}
