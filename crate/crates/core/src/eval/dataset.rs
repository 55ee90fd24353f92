//! MeViS-style dataset layout.
//!
//! ```text
//! meta.json               {"videos": {vid: {"expressions": {eid: {"exp", "obj_id", "tag"?}}, "frames": [names]}}}
//! <frames_root>/<vid>/    one image per frame name (name, name.jpg or name.png)
//! <annotations>/<vid>/    objects.json (per-object RLE) or one index PNG per frame
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::mask::{BitMask, Raster, RleMask};
use crate::model::{MaskTrack, TrackId, VideoRef};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed meta {path}: {message}")]
    MalformedMeta { path: PathBuf, message: String },
    #[error("video `{video}`: meta lists {meta} frames but {dir} has {found} frame images")]
    FrameCountMismatch {
        video: String,
        meta: usize,
        found: usize,
        dir: PathBuf,
    },
    #[error("video `{video}`: frame `{frame}` not found in {dir}")]
    MissingFrame {
        video: String,
        frame: String,
        dir: PathBuf,
    },
    #[error("video `{video}`: frame {path} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FrameSize {
        video: String,
        path: PathBuf,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("video `{video}`: expression `{expression}` refers to object {object}, which the annotations never contain")]
    IdMismatch {
        video: String,
        expression: String,
        object: u32,
    },
    #[error("video `{video}`: no annotations under {dir}")]
    MissingAnnotations { video: String, dir: PathBuf },
    #[error("video `{video}`: bad annotation {path}: {message}")]
    BadAnnotation {
        video: String,
        path: PathBuf,
        message: String,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn object_ids<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u32>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        Num(u32),
        Text(String),
    }
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Ids {
        One(Id),
        Many(Vec<Id>),
    }
    let ids = match Option::<Ids>::deserialize(d)? {
        None => Vec::new(),
        Some(Ids::One(id)) => vec![id],
        Some(Ids::Many(v)) => v,
    };
    ids.into_iter()
        .map(|id| match id {
            Id::Num(n) => Ok(n),
            Id::Text(s) => s.trim().parse().map_err(serde::de::Error::custom),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMeta {
    pub exp: String,
    #[serde(default, deserialize_with = "object_ids")]
    pub obj_id: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub expressions: BTreeMap<String, ExpressionMeta>,
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub videos: BTreeMap<String, VideoMeta>,
}

impl DatasetMeta {
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::MalformedMeta {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("meta serializes");
        fs::write(path, text).map_err(|e| io_err(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionRecord {
    pub video_id: String,
    pub expression_id: String,
    pub text: String,
    /// Empty for unlabelled splits.
    pub gt_object_ids: BTreeSet<u32>,
    pub tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: BTreeMap<String, VideoRef>,
    /// Frame names per video, in meta order.
    pub frame_names: BTreeMap<String, Vec<String>>,
    pub expressions: Vec<ExpressionRecord>,
}

const IMAGE_EXTS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

fn resolve_frame(dir: &Path, name: &str) -> Option<PathBuf> {
    [
        name.to_string(),
        format!("{name}.jpg"),
        format!("{name}.png"),
    ]
    .into_iter()
    .map(|n| dir.join(n))
    .find(|p| p.is_file())
}

fn stem(name: &str) -> &str {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
}

/// Reads `meta_path` and resolves every video's frames under `frames_root`.
pub fn load_dataset(meta_path: &Path, frames_root: &Path) -> Result<Dataset, DatasetError> {
    let meta = DatasetMeta::read(meta_path)?;
    let mut videos = BTreeMap::new();
    let mut frame_names = BTreeMap::new();
    let mut expressions = Vec::new();
    for (vid, vmeta) in &meta.videos {
        if vmeta.frames.is_empty() {
            return Err(DatasetError::MalformedMeta {
                path: meta_path.to_path_buf(),
                message: format!("video `{vid}` lists no frames"),
            });
        }
        let dir = frames_root.join(vid);
        let found = fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(Result::ok)
            .filter(|e| is_image(&e.path()))
            .count();
        if found != vmeta.frames.len() {
            return Err(DatasetError::FrameCountMismatch {
                video: vid.clone(),
                meta: vmeta.frames.len(),
                found,
                dir,
            });
        }
        let paths = vmeta
            .frames
            .iter()
            .map(|name| {
                resolve_frame(&dir, name).ok_or_else(|| DatasetError::MissingFrame {
                    video: vid.clone(),
                    frame: name.clone(),
                    dir: dir.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (width, height) =
            image::image_dimensions(&paths[0]).map_err(|e| io_err(&paths[0], e))?;
        let video = VideoRef::new(vid.clone(), paths, width, height).map_err(|e| {
            DatasetError::MalformedMeta {
                path: meta_path.to_path_buf(),
                message: e.to_string(),
            }
        })?;
        for (eid, e) in &vmeta.expressions {
            expressions.push(ExpressionRecord {
                video_id: vid.clone(),
                expression_id: eid.clone(),
                text: e.exp.clone(),
                gt_object_ids: e.obj_id.iter().copied().collect(),
                tag: e.tag.clone(),
            });
        }
        videos.insert(vid.clone(), video);
        frame_names.insert(vid.clone(), vmeta.frames.clone());
    }
    Ok(Dataset {
        videos,
        frame_names,
        expressions,
    })
}

/// Per-object RLE annotations: object id → frame index → mask.
pub type ObjectRles = BTreeMap<String, BTreeMap<String, RleMask>>;

/// Ground truth of one video.
#[derive(Debug, Clone, PartialEq)]
pub enum VideoAnnotations {
    /// Per-frame index images; pixel value is the object id, 0 background.
    Index {
        width: u32,
        height: u32,
        frames: Vec<Vec<u16>>,
    },
    /// Per-object RLE masks.
    Rle {
        width: u32,
        height: u32,
        num_frames: usize,
        objects: BTreeMap<u32, BTreeMap<usize, BitMask>>,
    },
}

/// 8- or 16-bit palette or grayscale PNG read as raw sample values, so
/// palette indices are not expanded to colours.
pub fn read_index_png(path: &Path) -> Result<(u32, u32, Vec<u16>), String> {
    let file = fs::File::open(path).map_err(|e| e.to_string())?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("png too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    use png::{BitDepth, ColorType};
    if !matches!(info.color_type, ColorType::Indexed | ColorType::Grayscale) {
        return Err(format!(
            "expected a palette or grayscale image, got {:?}",
            info.color_type
        ));
    }
    let (w, h) = (info.width, info.height);
    let mut values = Vec::with_capacity((w * h) as usize);
    for row in buf[..info.buffer_size()].chunks(info.line_size) {
        match info.bit_depth {
            BitDepth::Sixteen => values.extend(
                row.chunks(2)
                    .take(w as usize)
                    .map(|b| u16::from_be_bytes([b[0], b[1]])),
            ),
            BitDepth::Eight => values.extend(row.iter().take(w as usize).map(|&b| b as u16)),
            depth => {
                let bits = depth as usize;
                let mask = (1u16 << bits) - 1;
                for x in 0..w as usize {
                    let bit = x * bits;
                    let byte = row[bit / 8] as u16;
                    values.push((byte >> (8 - bits - bit % 8)) & mask);
                }
            }
        }
    }
    Ok((w, h, values))
}

impl VideoAnnotations {
    /// Detects the annotation format under `root/<video>` and loads it.
    pub fn load(
        root: &Path,
        video: &VideoRef,
        frame_names: &[String],
    ) -> Result<Self, DatasetError> {
        let dir = root.join(&video.video_id);
        let bad = |path: &Path, message: String| DatasetError::BadAnnotation {
            video: video.video_id.clone(),
            path: path.to_path_buf(),
            message,
        };
        let rle_path = dir.join("objects.json");
        if rle_path.is_file() {
            let text = fs::read_to_string(&rle_path).map_err(|e| io_err(&rle_path, e))?;
            let raw: ObjectRles =
                serde_json::from_str(&text).map_err(|e| bad(&rle_path, e.to_string()))?;
            let mut objects = BTreeMap::new();
            for (id, frames) in raw {
                let id: u32 = id
                    .parse()
                    .map_err(|_| bad(&rle_path, format!("object key {id:?} is not an id")))?;
                let mut masks = BTreeMap::new();
                for (t, rle) in frames {
                    let t: usize = t
                        .parse()
                        .map_err(|_| bad(&rle_path, format!("frame key {t:?} is not an index")))?;
                    if t >= video.num_frames() {
                        return Err(bad(&rle_path, format!("frame {t} out of range")));
                    }
                    let mask = BitMask::from_rle(rle).map_err(|e| bad(&rle_path, e.to_string()))?;
                    if (mask.width(), mask.height()) != (video.width, video.height) {
                        return Err(bad(
                            &rle_path,
                            format!("object {id} frame {t} has the wrong size"),
                        ));
                    }
                    masks.insert(t, mask);
                }
                objects.insert(id, masks);
            }
            return Ok(VideoAnnotations::Rle {
                width: video.width,
                height: video.height,
                num_frames: video.num_frames(),
                objects,
            });
        }
        if !dir.is_dir() {
            return Err(DatasetError::MissingAnnotations {
                video: video.video_id.clone(),
                dir,
            });
        }
        let mut frames = Vec::with_capacity(frame_names.len());
        for name in frame_names {
            let path = dir.join(format!("{}.png", stem(name)));
            if !path.is_file() {
                return Err(DatasetError::MissingFrame {
                    video: video.video_id.clone(),
                    frame: format!("{}.png", stem(name)),
                    dir: dir.clone(),
                });
            }
            let (w, h, values) = read_index_png(&path).map_err(|e| bad(&path, e))?;
            if (w, h) != (video.width, video.height) {
                return Err(DatasetError::FrameSize {
                    video: video.video_id.clone(),
                    path,
                    got_w: w,
                    got_h: h,
                    want_w: video.width,
                    want_h: video.height,
                });
            }
            frames.push(values);
        }
        Ok(VideoAnnotations::Index {
            width: video.width,
            height: video.height,
            frames,
        })
    }

    pub fn object_ids(&self) -> BTreeSet<u32> {
        match self {
            VideoAnnotations::Index { frames, .. } => frames
                .iter()
                .flatten()
                .filter(|&&v| v != 0)
                .map(|&v| v as u32)
                .collect(),
            VideoAnnotations::Rle { objects, .. } => objects.keys().copied().collect(),
        }
    }

    /// Union mask of `ids` on every frame.
    pub fn track(&self, ids: &BTreeSet<u32>) -> MaskTrack {
        let mut track = MaskTrack::new(TrackId(0), "gt");
        match self {
            VideoAnnotations::Index {
                width,
                height,
                frames,
            } => {
                for (t, values) in frames.iter().enumerate() {
                    let cells = values
                        .iter()
                        .map(|&v| v != 0 && ids.contains(&(v as u32)))
                        .collect();
                    let r =
                        Raster::from_cells(*width, *height, cells).expect("sized by construction");
                    track.masks.insert(t, BitMask::from_raster(&r));
                }
            }
            VideoAnnotations::Rle {
                width,
                height,
                num_frames,
                objects,
            } => {
                for t in 0..*num_frames {
                    let mut acc = Raster::zeros(*width, *height);
                    for id in ids {
                        if let Some(m) = objects.get(id).and_then(|o| o.get(&t)) {
                            acc.union_with(&m.raster()).expect("sizes checked on load");
                        }
                    }
                    track.masks.insert(t, BitMask::from_raster(&acc));
                }
            }
        }
        track
    }

    /// Ground truth for `record`, checking that every referenced id exists.
    pub fn ground_truth(&self, record: &ExpressionRecord) -> Result<MaskTrack, DatasetError> {
        let present = self.object_ids();
        if let Some(&missing) = record.gt_object_ids.iter().find(|id| !present.contains(id)) {
            return Err(DatasetError::IdMismatch {
                video: record.video_id.clone(),
                expression: record.expression_id.clone(),
                object: missing,
            });
        }
        Ok(self.track(&record.gt_object_ids))
    }
}

/// Writes per-object RLE annotations in the `objects.json` layout.
pub fn write_object_rles(
    path: &Path,
    objects: &BTreeMap<u32, BTreeMap<usize, BitMask>>,
) -> Result<(), DatasetError> {
    let raw: ObjectRles = objects
        .iter()
        .map(|(id, frames)| {
            let f = frames
                .iter()
                .map(|(t, m)| (t.to_string(), m.rle().clone()))
                .collect();
            (id.to_string(), f)
        })
        .collect();
    fs::write(path, serde_json::to_string(&raw).expect("serializes")).map_err(|e| io_err(path, e))
}
