//! Prediction output: `<root>/<video>/<expression>/` holds one binary PNG
//! per frame (`00000.png`, ...), `pred.json` with one RLE mask per frame,
//! and `trace.json` when a trace is available. Evaluation reads the RLE.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::mask::{BitMask, RleMask};
use crate::model::{MaskTrack, TrackId, VideoRef};
use crate::pipeline::ExpressionTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub num_frames: usize,
    pub masks: Vec<RleMask>,
}

pub fn prediction_dir(root: &Path, video_id: &str, expression_id: &str) -> PathBuf {
    root.join(video_id).join(expression_id)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `track` (missing frames as empty) and the optional trace.
pub fn write_prediction(
    dir: &Path,
    video: &VideoRef,
    track: &MaskTrack,
    trace: Option<&ExpressionTrace>,
) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut masks = Vec::with_capacity(video.num_frames());
    for t in 0..video.num_frames() {
        let mask = track
            .masks
            .get(&t)
            .cloned()
            .unwrap_or_else(|| BitMask::empty(video.width, video.height));
        let raster = mask.raster();
        let img = GrayImage::from_fn(video.width, video.height, |x, y| {
            Luma([if raster.get(x, y) { 255 } else { 0 }])
        });
        let path = dir.join(format!("{t:05}.png"));
        img.save(&path).map_err(|e| EvalError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        masks.push(mask.rle().clone());
    }
    let file = PredictionFile {
        num_frames: video.num_frames(),
        masks,
    };
    let path = dir.join("pred.json");
    fs::write(&path, serde_json::to_string(&file).expect("serializes")).map_err(io(&path))?;
    if let Some(trace) = trace {
        let path = dir.join("trace.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(trace).expect("serializes"),
        )
        .map_err(io(&path))?;
    }
    Ok(())
}

/// Reads `pred.json`; `Ok(None)` when the directory has none.
pub fn read_prediction(dir: &Path) -> Result<Option<MaskTrack>, EvalError> {
    let path = dir.join("pred.json");
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let file: PredictionFile =
        serde_json::from_str(&text).map_err(|e| EvalError::BadPrediction {
            path: path.clone(),
            message: e.to_string(),
        })?;
    if file.masks.len() != file.num_frames {
        return Err(EvalError::BadPrediction {
            path,
            message: format!("{} masks for {} frames", file.masks.len(), file.num_frames),
        });
    }
    let mut track = MaskTrack::new(TrackId(0), "prediction");
    for (t, rle) in file.masks.into_iter().enumerate() {
        let mask = BitMask::from_rle(rle).map_err(|e| EvalError::BadPrediction {
            path: path.clone(),
            message: e.to_string(),
        })?;
        track.masks.insert(t, mask);
    }
    Ok(Some(track))
}

/// Reads `trace.json` if present and well formed.
pub fn read_trace(dir: &Path) -> Option<ExpressionTrace> {
    let text = fs::read_to_string(dir.join("trace.json")).ok()?;
    serde_json::from_str(&text).ok()
}
