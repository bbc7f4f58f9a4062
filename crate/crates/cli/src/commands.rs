//! The subcommands. Each reads its inputs from files, writes its artifacts
//! into the output directory and records its config in `run.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use subitize::data::{
    featurize, generate_synthetic, load_annotations, load_embeddings, load_feature_manifest, save_annotations,
    save_embeddings, save_feature_manifest, CategoryTable, FeatureGrid, FeatureManifest, Raster, SceneAnnotation,
};
use subitize::detboost::{apply_nms, boost_report, fit_base_thresholds, BoostRow};
use subitize::detcount::{
    detect_count, load_detections, save_detections, synthesize_detections, threshold_grid, tune_thresholds,
    DetectionSet, ThresholdConfig, DEFAULT_NMS_THRESHOLD, DEFAULT_SCORE_THRESHOLD,
};
use subitize::gridgt::ImageCounts;
use subitize::metrics::{
    count_bias_stats, count_error_profile, ensemble, evaluate, fit_baseline, occlusion_map, postprocess_all,
    predict_baseline, rmse, BiasStats, CountErrorProfile, OcclusionMap,
};
use subitize::models::{build_training_set, train, Checkpoint, CountModel};
use subitize::qa::{answer_questions, build_countqa, resolve_category, load_questions, save_questions, synthetic_embeddings, synthetic_questions, QaAnswer};
use subitize::{Error, Result};

use crate::config::{AnalyzeRun, BoostRun, EvalRun, Grid, QaRun, SynthRun, TrainRun, TuneRun};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct Envelope<'a, C, T> {
    command: &'a str,
    config: &'a C,
    #[serde(flatten)]
    body: T,
}

/// Writes `<out>/<file>` as `{command, config, ...body}`.
fn emit<C: Serialize, T: Serialize>(out: &Path, file: &str, command: &str, config: &C, body: T) -> Result<()> {
    write_json(&out.join(file), &Envelope { command, config, body })
}

fn finish<C: Serialize>(out: &Path, command: &str, config: &C) -> Result<()> {
    #[derive(Serialize)]
    struct Empty {}
    emit(out, "run.json", command, config, Empty {})
}

fn make_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(io_err(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// A dataset directory as written by `synth`.
pub struct Dataset {
    pub dir: PathBuf,
    pub scenes: Vec<SceneAnnotation>,
    pub categories: CategoryTable,
    pub splits: Splits,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let (scenes, categories) = load_annotations(dir.join("annotations.json"))?;
        let splits = read_json(&dir.join("splits.json"))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            scenes,
            categories,
            splits,
        })
    }

    pub fn split(&self, name: &str) -> Result<Vec<SceneAnnotation>> {
        let ids = match name {
            "train" => &self.splits.train,
            "val" => &self.splits.val,
            "test" => &self.splits.test,
            "all" => return Ok(self.scenes.clone()),
            other => return Err(Error::InvalidArgument(format!("unknown split {other:?} (train, val, test, all)"))),
        };
        let by_id: BTreeMap<u64, &SceneAnnotation> = self.scenes.iter().map(|s| (s.image_id, s)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Schema(format!("split {name} names unknown image {id}")))
            })
            .collect()
    }

    pub fn features(&self, grid: Grid, scenes: &[SceneAnnotation]) -> Result<Vec<FeatureGrid>> {
        let path = self.dir.join(format!("features_{grid}.json"));
        let mut manifest = load_feature_manifest(&path)?;
        scenes
            .iter()
            .map(|s| {
                manifest
                    .remove(&s.image_id)
                    .ok_or_else(|| Error::Schema(format!("{} has no features for image {}", path.display(), s.image_id)))
            })
            .collect()
    }

    /// Detection sets aligned with `scenes`; an image without detections gets an empty set.
    pub fn detections(&self, scenes: &[SceneAnnotation]) -> Result<Vec<DetectionSet>> {
        let mut by_id: BTreeMap<u64, DetectionSet> = load_detections(self.dir.join("detections.json"))?
            .into_iter()
            .map(|d| (d.image_id, d))
            .collect();
        Ok(scenes
            .iter()
            .map(|s| {
                by_id.remove(&s.image_id).unwrap_or(DetectionSet {
                    image_id: s.image_id,
                    detections: Vec::new(),
                })
            })
            .collect())
    }

    pub fn ground_truth(&self, scenes: &[SceneAnnotation]) -> Vec<ImageCounts> {
        scenes.iter().map(|s| ImageCounts(s.instance_counts(&self.categories))).collect()
    }
}

pub fn synth(cfg: &SynthRun, out: &Path) -> Result<()> {
    let n = cfg.synth.scene_count;
    if cfg.val_count + cfg.test_count > n && n > 0 {
        return Err(Error::InvalidArgument(format!(
            "val_count {} + test_count {} exceed scene_count {n}",
            cfg.val_count, cfg.test_count
        )));
    }
    make_out_dir(out)?;
    let generated = generate_synthetic(&cfg.synth)?;
    let categories = subitize::data::category_table(cfg.synth.num_categories);
    let rasters_dir = out.join("rasters");
    make_out_dir(&rasters_dir)?;
    for (scene, raster) in &generated {
        raster.save_png(rasters_dir.join(format!("{}.png", scene.image_id)))?;
    }
    let scenes: Vec<SceneAnnotation> = generated.iter().map(|(s, _)| s.clone()).collect();
    save_annotations(out.join("annotations.json"), &scenes, &categories)?;
    for &grid in &cfg.grids {
        let mut manifest = FeatureManifest::new();
        for (scene, raster) in &generated {
            manifest.insert(scene.image_id, featurize(raster, grid.rows, grid.cols)?);
        }
        save_feature_manifest(out.join(format!("features_{grid}.json")), &manifest)?;
    }
    let ids: Vec<u64> = scenes.iter().map(|s| s.image_id).collect();
    let (test_start, val_start) = if n == 0 {
        (0, 0)
    } else {
        (n - cfg.test_count, n - cfg.test_count - cfg.val_count)
    };
    write_json(
        &out.join("splits.json"),
        &Splits {
            train: ids[..val_start].to_vec(),
            val: ids[val_start..test_start].to_vec(),
            test: ids[test_start..].to_vec(),
        },
    )?;
    save_detections(
        out.join("detections.json"),
        &synthesize_detections(&scenes, &categories, &cfg.detector, cfg.synth.seed),
    )?;
    save_embeddings(
        out.join("embeddings.txt"),
        &synthetic_embeddings(&categories, cfg.embedding_dim, cfg.synth.seed)?,
    )?;
    save_questions(out.join("questions.json"), &synthetic_questions(&scenes, &categories, cfg.synth.seed))?;
    log::info!("wrote {n} scenes to {}", out.display());
    finish(out, "synth", cfg)
}

pub fn train_cmd(cfg: &TrainRun, out: &Path) -> Result<()> {
    let ds = Dataset::open(&cfg.data_dir)?;
    let scenes = ds.split(&cfg.split)?;
    let grid = if cfg.model.is_cellwise() { cfg.grid } else { Grid::ONE };
    let features = ds.features(grid, &scenes)?;
    let feature_dim = features.first().map_or(subitize::data::FEATURE_DIM, |f| f.dim);
    let samples = build_training_set(cfg.model, &scenes, &features, &ds.categories, cfg.arch.max_count)?;
    let model = CountModel::new(
        cfg.model,
        grid.rows,
        grid.cols,
        feature_dim,
        ds.categories.len(),
        cfg.arch.clone(),
        cfg.train.seed,
    )?;
    log::info!("training {} on {} images ({} parameters)", cfg.model, samples.len(), model.num_parameters());
    let outcome = train(model, &samples, &cfg.train)?;
    make_out_dir(out)?;
    Checkpoint::from_model(&outcome.model, Some(&cfg.train)).save(out.join("checkpoint.json"))?;
    #[derive(Serialize)]
    struct Trace<'a> {
        loss: &'a [f64],
    }
    emit(out, "loss_trace.json", "train", cfg, Trace { loss: &outcome.loss_trace })?;
    finish(out, "train", cfg)
}

/// Raw per-image counts keyed by image id, as written by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionsFile {
    pub predictions: BTreeMap<u64, ImageCounts>,
}

fn read_raw_predictions(path: &Path, scenes: &[SceneAnnotation]) -> Result<Vec<ImageCounts>> {
    let file: PredictionsFile = read_json(path)?;
    scenes
        .iter()
        .map(|s| {
            file.predictions
                .get(&s.image_id)
                .cloned()
                .ok_or_else(|| Error::Schema(format!("{} has no counts for image {}", path.display(), s.image_id)))
        })
        .collect()
}

/// Post-processed counts aligned with `scenes`.
pub fn load_predictions(path: &Path, scenes: &[SceneAnnotation]) -> Result<Vec<ImageCounts>> {
    postprocess_all(&read_raw_predictions(path, scenes)?)
}

pub fn eval_cmd(cfg: &EvalRun, out: &Path) -> Result<()> {
    let ds = Dataset::open(&cfg.data_dir)?;
    let scenes = ds.split(&cfg.split)?;
    let gts = ds.ground_truth(&scenes);
    let sources = usize::from(cfg.baseline.is_some()) + usize::from(!cfg.checkpoints.is_empty()) + usize::from(cfg.predictions.is_some());
    if sources != 1 {
        return Err(Error::InvalidArgument(
            "eval needs exactly one of: checkpoints, a baseline, a predictions file".into(),
        ));
    }
    let preds = match (cfg.baseline, &cfg.predictions) {
        (_, Some(path)) => read_raw_predictions(path, &scenes)?,
        (Some(kind), None) => {
            let fit = ds.ground_truth(&ds.split(&cfg.fit_split)?);
            let spec = fit_baseline(kind, &fit, ds.categories.len())?;
            vec![predict_baseline(&spec); scenes.len()]
        }
        (None, None) => {
            let mut members = Vec::with_capacity(cfg.checkpoints.len());
            for path in &cfg.checkpoints {
                let model = Checkpoint::load(path)?.to_model()?;
                if model.num_categories != ds.categories.len() {
                    return Err(Error::Shape(format!(
                        "{} predicts {} categories, the dataset has {}",
                        path.display(),
                        model.num_categories,
                        ds.categories.len()
                    )));
                }
                let grid = Grid {
                    rows: model.rows,
                    cols: model.cols,
                };
                let features = ds.features(grid, &scenes)?;
                members.push(features.iter().map(|f| model.predict(f)).collect::<Result<Vec<_>>>()?);
            }
            ensemble(&members)?
        }
    };
    let report = evaluate(&preds, &gts, &ds.categories, cfg.seed)?;
    make_out_dir(out)?;
    #[derive(Serialize)]
    struct Body<'a, T> {
        report: &'a T,
    }
    emit(out, "report.json", "eval", cfg, Body { report: &report })?;
    let csv = out.join("report.csv");
    fs::write(&csv, report.to_csv()).map_err(io_err(&csv))?;
    let predictions: BTreeMap<u64, ImageCounts> = scenes.iter().map(|s| s.image_id).zip(preds).collect();
    emit(out, "predictions.json", "eval", cfg, PredictionsFile { predictions })?;
    log::info!("mRMSE {:.4} over {} images", report.mean.rmse, report.images);
    finish(out, "eval", cfg)
}

/// Mean over categories of per-category count RMSE.
fn detection_mrmse(dets: &[DetectionSet], gts: &[ImageCounts], config: &ThresholdConfig, categories: &CategoryTable) -> Result<f64> {
    let counts: Vec<ImageCounts> = dets.iter().map(|d| detect_count(d, config, categories)).collect();
    let per: Vec<f64> = (0..categories.len()).map(|k| rmse(&counts, gts, k)).collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
}

pub fn tune_det(cfg: &TuneRun, out: &Path) -> Result<()> {
    let ds = Dataset::open(&cfg.data_dir)?;
    let val = ds.split(&cfg.split)?;
    let val_dets = ds.detections(&val)?;
    let val_gts = ds.ground_truth(&val);
    let tuned = tune_thresholds(&val_dets, &val_gts, &ds.categories, &threshold_grid(cfg.grid_points))?;
    let default = ThresholdConfig::uniform(&ds.categories, DEFAULT_SCORE_THRESHOLD, DEFAULT_NMS_THRESHOLD);

    #[derive(Serialize)]
    struct Comparison {
        split: String,
        tuned_mrmse: f64,
        default_mrmse: f64,
    }
    let compare = |split: &str, dets: &[DetectionSet], gts: &[ImageCounts]| -> Result<Comparison> {
        Ok(Comparison {
            split: split.to_string(),
            tuned_mrmse: detection_mrmse(dets, gts, &tuned, &ds.categories)?,
            default_mrmse: detection_mrmse(dets, gts, &default, &ds.categories)?,
        })
    };
    let mut comparisons = vec![compare(&cfg.split, &val_dets, &val_gts)?];
    let held_out = ds.split(&cfg.eval_split)?;
    if !held_out.is_empty() {
        comparisons.push(compare(&cfg.eval_split, &ds.detections(&held_out)?, &ds.ground_truth(&held_out))?);
    }
    make_out_dir(out)?;
    write_json(&out.join("thresholds.json"), &tuned)?;
    #[derive(Serialize)]
    struct Body<'a> {
        thresholds: &'a ThresholdConfig,
        comparisons: Vec<Comparison>,
    }
    emit(
        out,
        "tune_report.json",
        "tune-det",
        cfg,
        Body {
            thresholds: &tuned,
            comparisons,
        },
    )?;
    finish(out, "tune-det", cfg)
}

pub fn boost_det(cfg: &BoostRun, out: &Path) -> Result<()> {
    let ds = Dataset::open(&cfg.data_dir)?;
    let fit = ds.split(&cfg.fit_split)?;
    let fit_dets: Vec<DetectionSet> = ds.detections(&fit)?.iter().map(|d| apply_nms(d, cfg.nms)).collect();
    let base = fit_base_thresholds(&fit_dets, &fit, &ds.categories, &threshold_grid(cfg.grid_points))?;
    let test = ds.split(&cfg.split)?;
    let predicted = load_predictions(&cfg.predictions, &test)?;
    let rows = boost_report(&ds.detections(&test)?, &test, &predicted, &base, &ds.categories, cfg.nms)?;
    for r in &rows {
        log::info!("{}: mF {:.4} over {} pairs", r.method, r.mean_f, r.pairs);
    }
    make_out_dir(out)?;
    #[derive(Serialize)]
    struct Body {
        base_thresholds: BTreeMap<u64, f64>,
        rows: Vec<BoostRow>,
    }
    emit(
        out,
        "boost_report.json",
        "boost-det",
        cfg,
        Body {
            base_thresholds: base,
            rows,
        },
    )?;
    finish(out, "boost-det", cfg)
}

pub fn qa_cmd(cfg: &QaRun, out: &Path) -> Result<()> {
    let ds = Dataset::open(&cfg.data_dir)?;
    let scenes = ds.split(&cfg.split)?;
    let embeddings = load_embeddings(ds.dir.join("embeddings.txt"))?;
    for cat in ds.categories.entries() {
        resolve_category(&cat.name, &embeddings, &ds.categories)?;
    }
    let in_split: std::collections::BTreeSet<u64> = scenes.iter().map(|s| s.image_id).collect();
    let questions: Vec<_> = load_questions(ds.dir.join("questions.json"))?
        .into_iter()
        .filter(|q| in_split.contains(&q.image_id))
        .collect();
    let kept = build_countqa(&questions, &scenes, &embeddings, &ds.categories);
    log::info!("kept {} of {} questions", kept.len(), questions.len());
    let predicted = load_predictions(&cfg.predictions, &scenes)?;
    let counts: BTreeMap<u64, ImageCounts> = scenes.iter().map(|s| s.image_id).zip(predicted).collect();
    let report = answer_questions(&kept, &counts, &embeddings, &ds.categories)?;
    make_out_dir(out)?;
    #[derive(Serialize)]
    struct Body {
        questions: usize,
        kept: usize,
        rmse: f64,
        answers: Vec<QaAnswer>,
    }
    emit(
        out,
        "qa_report.json",
        "qa",
        cfg,
        Body {
            questions: questions.len(),
            kept: kept.len(),
            rmse: report.rmse,
            answers: report.answers,
        },
    )?;
    finish(out, "qa", cfg)
}

pub fn analyze(cfg: &AnalyzeRun, out: &Path) -> Result<()> {
    let ds = Dataset::open(&cfg.data_dir)?;
    let scenes = ds.split(&cfg.split)?;
    let gts = ds.ground_truth(&scenes);
    let preds = load_predictions(&cfg.predictions, &scenes)?;
    let profile = count_error_profile(&preds, &gts, cfg.max_count)?;
    let bias = count_bias_stats(&preds, &gts)?;
    let mut occlusion = Vec::new();
    if let Some(path) = &cfg.checkpoint {
        let model = Checkpoint::load(path)?.to_model()?;
        let ids: Vec<u64> = if cfg.occlusion_images.is_empty() {
            scenes.iter().take(2).map(|s| s.image_id).collect()
        } else {
            cfg.occlusion_images.clone()
        };
        for id in ids {
            let scene = ds
                .scenes
                .iter()
                .find(|s| s.image_id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown image {id}")))?;
            let counts = scene.instance_counts(&ds.categories);
            let category = subitize::models::argmax_lowest(&counts);
            let raster = Raster::load_png(ds.dir.join("rasters").join(format!("{id}.png")))?;
            occlusion.push(ImageOcclusion {
                image_id: id,
                map: occlusion_map(&model, &raster, cfg.mask_grid, category)?,
            });
        }
    }
    make_out_dir(out)?;
    #[derive(Serialize)]
    struct Body {
        profile: CountErrorProfile,
        bias: BiasStats,
        occlusion: Vec<ImageOcclusion>,
    }
    emit(out, "analysis.json", "analyze", cfg, Body { profile, bias, occlusion })?;
    finish(out, "analyze", cfg)
}

#[derive(Serialize)]
struct ImageOcclusion {
    image_id: u64,
    #[serde(flatten)]
    map: OcclusionMap,
}
