//! Region similarity J, contour accuracy F, J&F and the empty-mask ratio
//! over MeViS-style datasets.

pub mod dataset;
pub mod predictions;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{boundary_f, mask_iou, BitMask, MaskError};
use crate::model::MaskTrack;

pub use dataset::{
    load_dataset, Dataset, DatasetError, DatasetMeta, ExpressionMeta, ExpressionRecord,
    VideoAnnotations, VideoMeta,
};
pub use predictions::{
    prediction_dir, read_prediction, read_trace, write_prediction, PredictionFile,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot access {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("bad prediction {path}: {message}")]
    BadPrediction { path: PathBuf, message: String },
    #[error("frame {frame}: {source}")]
    Mask {
        frame: usize,
        #[source]
        source: MaskError,
    },
    #[error("nothing to aggregate")]
    NoResults,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub is_empty_prediction: bool,
}

impl EvalResult {
    pub fn new(j: f64, f: f64, is_empty_prediction: bool) -> Self {
        Self {
            j,
            f,
            jf: (j + f) / 2.0,
            is_empty_prediction,
        }
    }
}

/// Averages IoU and boundary F over all `num_frames` frames. Frames a track
/// does not store count as empty masks of the given size.
pub fn eval_expression(
    pred: &MaskTrack,
    gt: &MaskTrack,
    num_frames: usize,
    width: u32,
    height: u32,
    tolerance_ratio: f64,
) -> Result<EvalResult, EvalError> {
    let empty = BitMask::empty(width, height);
    let mut j_sum = 0.0;
    let mut f_sum = 0.0;
    for t in 0..num_frames {
        let p = pred.masks.get(&t).unwrap_or(&empty);
        let g = gt.masks.get(&t).unwrap_or(&empty);
        for m in [p, g] {
            if (m.width(), m.height()) != (width, height) {
                return Err(EvalError::Mask {
                    frame: t,
                    source: MaskError::DimensionMismatch(m.width(), m.height(), width, height),
                });
            }
        }
        j_sum += mask_iou(p, g).map_err(|source| EvalError::Mask { frame: t, source })?;
        f_sum += boundary_f(p, g, tolerance_ratio)
            .map_err(|source| EvalError::Mask { frame: t, source })?;
    }
    let n = num_frames.max(1) as f64;
    Ok(EvalResult::new(j_sum / n, f_sum / n, pred.is_empty()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionRow {
    pub video_id: String,
    pub expression_id: String,
    #[serde(default)]
    pub tag: Option<String>,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub empty: bool,
    #[serde(default)]
    pub k_used: Option<usize>,
    #[serde(default)]
    pub prune_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    /// Percentage of expressions with no foreground in any frame.
    pub empty_mask_ratio: f64,
}

impl Summary {
    /// Unweighted means; `None` for an empty slice.
    pub fn of(results: &[EvalResult]) -> Option<Self> {
        if results.is_empty() {
            return None;
        }
        let n = results.len() as f64;
        let j = results.iter().map(|r| r.j).sum::<f64>() / n;
        let f = results.iter().map(|r| r.f).sum::<f64>() / n;
        let empty = results.iter().filter(|r| r.is_empty_prediction).count();
        Some(Self {
            count: results.len(),
            j,
            f,
            jf: (j + f) / 2.0,
            empty_mask_ratio: 100.0 * empty as f64 / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub overall: Summary,
    pub by_tag: BTreeMap<String, Summary>,
    /// Pruning iterations → expression count.
    pub iteration_histogram: BTreeMap<usize, usize>,
    /// Extraction rounds used → expression count.
    pub k_used_histogram: BTreeMap<usize, usize>,
    pub rows: Vec<ExpressionRow>,
}

fn result_of(row: &ExpressionRow) -> EvalResult {
    EvalResult {
        j: row.j,
        f: row.f,
        jf: row.jf,
        is_empty_prediction: row.empty,
    }
}

pub fn aggregate(rows: Vec<ExpressionRow>) -> Result<Report, EvalError> {
    let all: Vec<EvalResult> = rows.iter().map(result_of).collect();
    let overall = Summary::of(&all).ok_or(EvalError::NoResults)?;
    let mut tagged: BTreeMap<String, Vec<EvalResult>> = BTreeMap::new();
    let mut iteration_histogram = BTreeMap::new();
    let mut k_used_histogram = BTreeMap::new();
    for row in &rows {
        if let Some(tag) = &row.tag {
            tagged.entry(tag.clone()).or_default().push(result_of(row));
        }
        if let Some(n) = row.prune_iterations {
            *iteration_histogram.entry(n).or_default() += 1;
        }
        if let Some(k) = row.k_used {
            *k_used_histogram.entry(k).or_default() += 1;
        }
    }
    let by_tag = tagged
        .into_iter()
        .map(|(t, r)| (t, Summary::of(&r).expect("non-empty group")))
        .collect();
    Ok(Report {
        overall,
        by_tag,
        iteration_histogram,
        k_used_histogram,
        rows,
    })
}

/// Writes `report.json` and `report.csv` (one row per expression).
pub fn write_report(dir: &Path, report: &Report) -> Result<(), EvalError> {
    let io = |path: &Path, e: &dyn std::fmt::Display| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let json_path = dir.join("report.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(report).expect("serializes"),
    )
    .map_err(|e| io(&json_path, &e))?;
    let csv_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io(&csv_path, &e))?;
    w.write_record([
        "video_id",
        "expression_id",
        "tag",
        "J",
        "F",
        "J&F",
        "empty",
        "k_used",
        "prune_iterations",
    ])
    .map_err(|e| io(&csv_path, &e))?;
    let opt = |v: Option<usize>| v.map(|n| n.to_string()).unwrap_or_default();
    for r in &report.rows {
        w.write_record([
            r.video_id.clone(),
            r.expression_id.clone(),
            r.tag.clone().unwrap_or_default(),
            format!("{:.6}", r.j),
            format!("{:.6}", r.f),
            format!("{:.6}", r.jf),
            r.empty.to_string(),
            opt(r.k_used),
            opt(r.prune_iterations),
        ])
        .map_err(|e| io(&csv_path, &e))?;
    }
    w.flush().map_err(|e| io(&csv_path, &e))
}

/// Scores every labelled expression of `dataset` against the predictions
/// under `pred_root`. Missing predictions count as empty.
pub fn evaluate_dataset(
    dataset: &Dataset,
    annotations_root: &Path,
    pred_root: &Path,
    tolerance_ratio: f64,
) -> Result<Report, EvalError> {
    let mut by_video: BTreeMap<&str, Vec<&ExpressionRecord>> = BTreeMap::new();
    for e in &dataset.expressions {
        if e.gt_object_ids.is_empty() {
            log::warn!(
                "{}/{}: no ground-truth ids, skipped",
                e.video_id,
                e.expression_id
            );
            continue;
        }
        by_video.entry(e.video_id.as_str()).or_default().push(e);
    }
    let per_video: Vec<Vec<ExpressionRow>> = by_video
        .into_par_iter()
        .map(|(vid, exprs)| {
            let video = &dataset.videos[vid];
            let ann = VideoAnnotations::load(annotations_root, video, &dataset.frame_names[vid])?;
            exprs
                .into_iter()
                .map(|e| {
                    let gt = ann.ground_truth(e)?;
                    let dir = prediction_dir(pred_root, vid, &e.expression_id);
                    let pred = read_prediction(&dir)?.unwrap_or_else(|| {
                        log::warn!("{vid}/{}: no prediction, scoring as empty", e.expression_id);
                        MaskTrack::new(Default::default(), "prediction")
                    });
                    let r = eval_expression(
                        &pred,
                        &gt,
                        video.num_frames(),
                        video.width,
                        video.height,
                        tolerance_ratio,
                    )?;
                    let trace = read_trace(&dir);
                    Ok(ExpressionRow {
                        video_id: vid.to_string(),
                        expression_id: e.expression_id.clone(),
                        tag: e.tag.clone(),
                        j: r.j,
                        f: r.f,
                        jf: r.jf,
                        empty: r.is_empty_prediction,
                        k_used: trace.as_ref().map(|t| t.k_used),
                        prune_iterations: trace.as_ref().map(|t| t.pruning.len()),
                    })
                })
                .collect::<Result<Vec<_>, EvalError>>()
        })
        .collect::<Result<_, EvalError>>()?;
    aggregate(per_video.into_iter().flatten().collect())
}
