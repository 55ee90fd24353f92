//! Synthetic benchmark generator.
//!
//! Each video is a world of shapes sliding along horizontal lanes (lanes
//! never overlap, so ground truth is exact). Every video carries a
//! referring expression that needs appearance, a reasoning expression, an
//! expression whose first concept guesses find nothing, and in some videos
//! an object that is visible in only two frames. The generated oracle script
//! answers as a perfect reasoner would, except that in
//! [`DistractorMode::Subtle`] a distractor can only be told apart on a
//! short window of frames.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{DatasetMeta, ExpressionMeta, VideoMeta};
use crate::model::{ConceptPair, QueryType};
use crate::perception::{Placement, Shape, SimObject, SimPerception, SimWorld};
use crate::reasoner::scripted::{OracleExpression, OracleScript};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot access {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DistractorMode {
    /// Every object can be identified on any frame it appears in.
    #[default]
    Clear,
    /// Distractors reveal their identity only on a two-frame window.
    Subtle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub seed: u64,
    pub videos: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub distractors: DistractorMode,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            videos: 10,
            frames: 60,
            width: 128,
            height: 96,
            distractors: DistractorMode::Clear,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.frames < 12 {
            return Err(BenchError::InvalidSpec(
                "need at least 12 frames per video".into(),
            ));
        }
        if self.width < 32 || self.height < MAX_OBJECTS * LANE_PITCH {
            return Err(BenchError::InvalidSpec(format!(
                "canvas must be at least 32x{}",
                MAX_OBJECTS * LANE_PITCH
            )));
        }
        Ok(())
    }
}

/// Worlds plus the oracle script describing their expressions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Benchmark {
    pub worlds: Vec<SimWorld>,
    #[serde(flatten)]
    pub script: OracleScript,
}

const FAMILIES: [(&str, [&str; 4], Shape); 2] = [
    ("vehicle", ["car", "truck", "bus", "bicycle"], Shape::Rect),
    ("animal", ["cat", "dog", "zebra", "monkey"], Shape::Ellipse),
];

const COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [220, 40, 40]),
    ("blue", [40, 80, 220]),
    ("green", [40, 170, 60]),
    ("yellow", [235, 210, 40]),
    ("white", [245, 245, 245]),
    ("black", [20, 20, 20]),
    ("orange", [245, 140, 30]),
    ("purple", [140, 50, 170]),
];

const LANE_PITCH: u32 = 10;
const LANE_HEIGHT: u32 = 8;
const MAX_OBJECTS: u32 = 8;

struct WorldBuilder {
    rng: ChaCha8Rng,
    width: u32,
    frames: usize,
    lanes: Vec<u32>,
    objects: Vec<SimObject>,
}

impl WorldBuilder {
    fn new(rng: ChaCha8Rng, width: u32, height: u32, frames: usize) -> Self {
        let mut lanes: Vec<u32> = (0..height / LANE_PITCH)
            .map(|i| 1 + i * LANE_PITCH)
            .collect();
        let mut rng = rng;
        lanes.shuffle(&mut rng);
        Self {
            rng,
            width,
            frames,
            lanes,
            objects: Vec::new(),
        }
    }

    /// Adds an object living on frames `[start, end)`; returns its id.
    fn add(
        &mut self,
        labels: &[&str],
        shape: Shape,
        color: (&str, [u8; 3]),
        noun: &str,
        start: usize,
        end: usize,
    ) -> u32 {
        let y0 = self.lanes.pop().expect("enough lanes for the world");
        let w = self.rng.random_range(12..=22u32);
        let span = self.width - w;
        let (xa, xb) = (
            self.rng.random_range(0..=span),
            self.rng.random_range(0..=span),
        );
        let len = (end - start).max(1);
        let placements = (0..self.frames)
            .map(|t| {
                (start..end).contains(&t).then(|| {
                    let f = if len > 1 {
                        (t - start) as f64 / (len - 1) as f64
                    } else {
                        0.0
                    };
                    let x0 = (xa as f64 + (xb as f64 - xa as f64) * f).round() as u32;
                    Placement {
                        shape,
                        x0,
                        y0,
                        x1: x0 + w - 1,
                        y1: y0 + LANE_HEIGHT - 1,
                    }
                })
            })
            .collect();
        let object_id = self.objects.len() as u32 + 1;
        self.objects.push(SimObject {
            object_id,
            concept_labels: labels.iter().map(|s| s.to_string()).collect(),
            color: color.1,
            appearance: format!("{} {noun}", color.0),
            placements,
        });
        object_id
    }

    fn span(&mut self, min_len: usize, max_len: usize) -> (usize, usize) {
        let len = self.rng.random_range(min_len..=max_len.min(self.frames));
        let start = self.rng.random_range(0..=self.frames - len);
        (start, start + len)
    }
}

fn pair(core: &str, broad: &str) -> ConceptPair {
    ConceptPair::new(core, broad).expect("distinct non-empty concepts")
}

const FAILED_GUESSES: [(&str, &str); 2] = [("paper", "sheet"), ("crumpled paper", "trash")];

/// Generates `opts.videos` worlds with their expressions.
///
/// # Panics
/// If `opts` fails [`BenchOptions::validate`].
pub fn generate(opts: &BenchOptions) -> Benchmark {
    if let Err(e) = opts.validate() {
        panic!("{e}");
    }
    let mut worlds = Vec::with_capacity(opts.videos);
    let mut expressions = Vec::new();
    for i in 0..opts.videos {
        let mut rng = ChaCha8Rng::seed_from_u64(
            opts.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(i as u64),
        );
        let video_id = format!("v{i:03}");
        let (family, members, shape) = FAMILIES[i % 2];
        let mut picks: Vec<&str> = members.to_vec();
        picks.shuffle(&mut rng);
        let (c1, c2) = (picks[0], picks[1]);
        let mut colors: Vec<(&str, [u8; 3])> = COLORS.to_vec();
        colors.shuffle(&mut rng);
        let grey = rng.random_range(90..=130u8);
        let n = opts.frames;

        let mut b = WorldBuilder::new(rng, opts.width, opts.height, n);
        let a = b.add(&[c1, family], shape, colors[0], c1, 0, n);
        let (s, e) = b.span(n / 3, n);
        b.add(&[c1, family], shape, colors[1], c1, s, e);
        b.add(&[c2, family], shape, colors[2], c2, 0, n * 2 / 3);
        let late_start = n / 2 + b.rng.random_range(0..=n / 6);
        let late = b.add(&[c2, family], shape, colors[3], c2, late_start, n);
        let (s, e) = b.span(n / 3, n);
        let ball = b.add(&["ball", "toy"], Shape::Ellipse, colors[4], "ball", s, e);
        for k in 0..2 {
            let (s, e) = b.span(n / 6, n / 2);
            let noun = if k == 0 { c1 } else { c2 };
            b.add(&[noun, family], shape, colors[5 + k], noun, s, e);
        }
        let brief = (i % 3 == 0).then(|| {
            let start = b.rng.random_range(1..n - 2);
            b.add(
                &["bird", "animal"],
                Shape::Ellipse,
                colors[7],
                "bird",
                start,
                start + 2,
            )
        });

        let world = SimWorld {
            video_id: video_id.clone(),
            width: opts.width,
            height: opts.height,
            duration: n,
            background: [grey, grey, grey],
            objects: b.objects,
            seed: opts.seed,
        };
        let mut rng = b.rng;
        let evidence_for = |targets: &[u32], rng: &mut ChaCha8Rng| -> BTreeMap<u32, Vec<usize>> {
            if opts.distractors == DistractorMode::Clear {
                return BTreeMap::new();
            }
            world
                .objects
                .iter()
                .filter(|o| !targets.contains(&o.object_id))
                .map(|o| {
                    let life = o.lifetime();
                    let at = rng.random_range(0..life.len().saturating_sub(1).max(1));
                    (o.object_id, life[at..(at + 2).min(life.len())].to_vec())
                })
                .collect()
        };
        let mut push = |id: usize,
                        query: String,
                        qt: QueryType,
                        rounds: Vec<Vec<ConceptPair>>,
                        appearance: bool,
                        targets: Vec<u32>,
                        rng: &mut ChaCha8Rng| {
            let evidence = evidence_for(&targets, rng);
            expressions.push(OracleExpression {
                video_id: video_id.clone(),
                expression_id: id.to_string(),
                query,
                query_type: qt,
                rounds,
                appearance_required: appearance,
                targets,
                evidence,
            });
        };
        push(
            0,
            format!("the {} {c1}", colors[0].0),
            QueryType::Referring,
            vec![vec![pair(c1, family)]],
            true,
            vec![a],
            &mut rng,
        );
        push(
            1,
            format!("the {c2} that shows up last"),
            QueryType::Reasoning,
            vec![vec![pair(c2, family)]],
            false,
            vec![late],
            &mut rng,
        );
        let failing = i % 2 + 1;
        let mut rounds: Vec<Vec<ConceptPair>> = FAILED_GUESSES[..failing]
            .iter()
            .map(|(c, b)| vec![pair(c, b)])
            .collect();
        rounds.push(vec![pair("ball", "toy")]);
        push(
            2,
            "the crumpled paper ball".into(),
            QueryType::Referring,
            rounds,
            false,
            vec![ball],
            &mut rng,
        );
        if let Some(bird) = brief {
            push(
                3,
                "the bird that flies past".into(),
                QueryType::Referring,
                vec![vec![pair("bird", "animal")]],
                false,
                vec![bird],
                &mut rng,
            );
        }
        worlds.push(world);
    }
    Benchmark {
        worlds,
        script: OracleScript { expressions },
    }
}

impl Benchmark {
    /// Checks worlds and that every expression names a known video and
    /// existing target objects.
    pub fn validate(&self) -> Result<(), BenchError> {
        let mut ids = BTreeSet::new();
        for w in &self.worlds {
            w.validate()
                .map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
            if !ids.insert(w.video_id.as_str()) {
                return Err(BenchError::InvalidSpec(format!(
                    "duplicate video id `{}`",
                    w.video_id
                )));
            }
        }
        let mut keys = BTreeSet::new();
        for e in &self.script.expressions {
            let world = self
                .worlds
                .iter()
                .find(|w| w.video_id == e.video_id)
                .ok_or_else(|| {
                    BenchError::InvalidSpec(format!(
                        "expression for unknown video `{}`",
                        e.video_id
                    ))
                })?;
            if !keys.insert((e.video_id.as_str(), e.expression_id.as_str())) {
                return Err(BenchError::InvalidSpec(format!(
                    "duplicate expression {}/{}",
                    e.video_id, e.expression_id
                )));
            }
            if e.targets.is_empty() || e.targets.iter().any(|t| world.object(*t).is_none()) {
                return Err(BenchError::InvalidSpec(format!(
                    "{}/{}: missing or unknown targets",
                    e.video_id, e.expression_id
                )));
            }
            if e.rounds.is_empty() {
                return Err(BenchError::InvalidSpec(format!(
                    "{}/{}: no concept rounds",
                    e.video_id, e.expression_id
                )));
            }
        }
        Ok(())
    }

    /// Reads a world spec: a JSON object with `worlds` and `expressions`.
    pub fn from_spec(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let bench: Benchmark =
            serde_json::from_str(&text).map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        bench.validate()?;
        Ok(bench)
    }

    pub fn frame_names(duration: usize) -> Vec<String> {
        (0..duration).map(|t| format!("{t:05}")).collect()
    }

    pub fn meta(&self) -> DatasetMeta {
        let mut videos: BTreeMap<String, VideoMeta> = self
            .worlds
            .iter()
            .map(|w| {
                (
                    w.video_id.clone(),
                    VideoMeta {
                        expressions: BTreeMap::new(),
                        frames: Self::frame_names(w.duration),
                    },
                )
            })
            .collect();
        for e in &self.script.expressions {
            if let Some(v) = videos.get_mut(&e.video_id) {
                v.expressions.insert(
                    e.expression_id.clone(),
                    ExpressionMeta {
                        exp: e.query.clone(),
                        obj_id: e.targets.clone(),
                        tag: Some(e.query_type.to_string()),
                    },
                );
            }
        }
        DatasetMeta { videos }
    }

    /// Writes `frames/`, `annotations/`, `worlds/`, `meta.json` and
    /// `oracle.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        self.validate()?;
        for sub in ["frames", "annotations", "worlds"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
        }
        self.worlds
            .par_iter()
            .try_for_each(|w| -> Result<(), BenchError> {
                let fdir = dir.join("frames").join(&w.video_id);
                let adir = dir.join("annotations").join(&w.video_id);
                for d in [&fdir, &adir] {
                    fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
                }
                for (t, name) in Self::frame_names(w.duration).iter().enumerate() {
                    let fp = fdir.join(format!("{name}.png"));
                    w.render_frame(t).save(&fp).map_err(|e| io_err(&fp, e))?;
                    let ap = adir.join(format!("{name}.png"));
                    w.index_frame(t).save(&ap).map_err(|e| io_err(&ap, e))?;
                }
                let wp = dir.join("worlds").join(format!("{}.json", w.video_id));
                fs::write(&wp, serde_json::to_string(w).expect("serializes"))
                    .map_err(|e| io_err(&wp, e))
            })?;
        let mp = dir.join("meta.json");
        fs::write(
            &mp,
            serde_json::to_string_pretty(&self.meta()).expect("serializes"),
        )
        .map_err(|e| io_err(&mp, e))?;
        let op = dir.join("oracle.json");
        fs::write(
            &op,
            serde_json::to_string_pretty(&self.script).expect("serializes"),
        )
        .map_err(|e| io_err(&op, e))
    }

    /// Reads back what [`Benchmark::write`] produced.
    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let wdir = dir.join("worlds");
        let mut paths: Vec<PathBuf> = fs::read_dir(&wdir)
            .map_err(|e| io_err(&wdir, e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let worlds = paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| BenchError::InvalidSpec(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<SimWorld>, _>>()?;
        let op = dir.join("oracle.json");
        let text = fs::read_to_string(&op).map_err(|e| io_err(&op, e))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| BenchError::InvalidSpec(format!("{}: {e}", op.display())))?;
        let bench = Benchmark { worlds, script };
        bench.validate()?;
        Ok(bench)
    }

    pub fn perception(&self) -> Result<SimPerception, BenchError> {
        SimPerception::new(self.worlds.iter().cloned())
            .map_err(|e| BenchError::InvalidSpec(e.to_string()))
    }
}
