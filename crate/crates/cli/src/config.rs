//! Per-command run configurations and how they are read from disk.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use subitize::detcount::{DetectorSim, DEFAULT_NMS_THRESHOLD, THRESHOLD_GRID_POINTS};
use subitize::metrics::BaselineKind;
use subitize::models::{ArchConfig, ModelKind, TrainConfig};
use subitize::data::SynthConfig;
use subitize::{Error, Result};

/// A grid size written `RxC`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub const ONE: Grid = Grid { rows: 1, cols: 1 };
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("grid {s:?} is not of the form RxC"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let rows: usize = r.trim().parse().map_err(|_| bad())?;
        let cols: usize = c.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 {
            return Err(bad());
        }
        Ok(Grid { rows, cols })
    }
}

impl Serialize for Grid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthRun {
    #[serde(flatten)]
    pub synth: SynthConfig,
    /// Feature grids written as `features_RxC.json`.
    pub grids: Vec<Grid>,
    /// The last `test_count` scenes form the test split, the `val_count`
    /// before them the validation split.
    pub val_count: usize,
    pub test_count: usize,
    pub detector: DetectorSim,
    pub embedding_dim: usize,
}

impl Default for SynthRun {
    fn default() -> Self {
        SynthRun {
            synth: SynthConfig::default(),
            grids: vec![Grid::ONE, Grid { rows: 3, cols: 3 }],
            val_count: 500,
            test_count: 500,
            detector: DetectorSim::default(),
            embedding_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub data_dir: PathBuf,
    pub model: ModelKind,
    /// Ignored (1x1) for glance and gt-class.
    pub grid: Grid,
    pub split: String,
    pub arch: ArchConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            data_dir: PathBuf::from("data"),
            model: ModelKind::SeqSub,
            grid: Grid { rows: 3, cols: 3 },
            split: "train".into(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRun {
    pub data_dir: PathBuf,
    /// Several checkpoints are averaged into an ensemble.
    pub checkpoints: Vec<PathBuf>,
    pub baseline: Option<BaselineKind>,
    /// Raw counts keyed by image id, in the format `eval` writes.
    pub predictions: Option<PathBuf>,
    /// Split the baseline statistics come from.
    pub fit_split: String,
    pub split: String,
    /// Bootstrap seed.
    pub seed: u64,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            data_dir: PathBuf::from("data"),
            checkpoints: Vec::new(),
            baseline: None,
            predictions: None,
            fit_split: "train".into(),
            split: "test".into(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneRun {
    pub data_dir: PathBuf,
    pub split: String,
    /// Split on which tuned and default thresholds are compared afterwards.
    pub eval_split: String,
    pub grid_points: usize,
}

impl Default for TuneRun {
    fn default() -> Self {
        TuneRun {
            data_dir: PathBuf::from("data"),
            split: "val".into(),
            eval_split: "test".into(),
            grid_points: THRESHOLD_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostRun {
    pub data_dir: PathBuf,
    /// `predictions.json` written by `eval`.
    pub predictions: PathBuf,
    /// Split the fixed base thresholds are fitted on.
    pub fit_split: String,
    pub split: String,
    pub nms: f64,
    pub grid_points: usize,
}

impl Default for BoostRun {
    fn default() -> Self {
        BoostRun {
            data_dir: PathBuf::from("data"),
            predictions: PathBuf::from("predictions.json"),
            fit_split: "val".into(),
            split: "test".into(),
            nms: DEFAULT_NMS_THRESHOLD,
            grid_points: THRESHOLD_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaRun {
    pub data_dir: PathBuf,
    pub predictions: PathBuf,
    pub split: String,
}

impl Default for QaRun {
    fn default() -> Self {
        QaRun {
            data_dir: PathBuf::from("data"),
            predictions: PathBuf::from("predictions.json"),
            split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeRun {
    pub data_dir: PathBuf,
    pub predictions: PathBuf,
    pub split: String,
    /// Counts above this share one overflow bucket.
    pub max_count: u64,
    /// Model for occlusion maps; none skips them.
    pub checkpoint: Option<PathBuf>,
    /// Images to map; empty means the first two of the split.
    pub occlusion_images: Vec<u64>,
    pub mask_grid: usize,
}

impl Default for AnalyzeRun {
    fn default() -> Self {
        AnalyzeRun {
            data_dir: PathBuf::from("data"),
            predictions: PathBuf::from("predictions.json"),
            split: "test".into(),
            max_count: 10,
            checkpoint: None,
            occlusion_images: Vec::new(),
            mask_grid: 4,
        }
    }
}

/// Reads a run config. Accepts either the bare config object or a
/// `run.json` (`{"command": ..., "config": ...}`) written by an earlier run
/// of the same command. Without a path the defaults apply.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |e: serde_json::Error| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(parse_err)?;
    if let Some(obj) = value.as_object_mut() {
        if obj.contains_key("command") && obj.contains_key("config") {
            let recorded = obj["command"].as_str().unwrap_or_default();
            if recorded != command {
                return Err(Error::Schema(format!(
                    "{} was written by `{recorded}`, not `{command}`",
                    path.display()
                )));
            }
            value = obj.remove("config").unwrap_or_default();
        }
    }
    serde_json::from_value(value).map_err(parse_err)
}
