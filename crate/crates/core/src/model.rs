//! Shared data model: videos, queries, mask tracks, verdicts, temporal
//! scopes, pipeline configuration and per-expression run state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BitMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("video `{0}` has no frames")]
    EmptyVideo(String),
    #[error("video `{0}` has zero width or height")]
    ZeroSized(String),
    #[error("query text is empty")]
    EmptyQuery,
    #[error("invalid concept pair ({core:?}, {broad:?}): {reason}")]
    InvalidConceptPair {
        core: String,
        broad: String,
        reason: &'static str,
    },
    #[error("track {track} mask at frame {frame} is {got_w}x{got_h}, video is {want_w}x{want_h}")]
    MaskSize {
        track: TrackId,
        frame: usize,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("track {track} has a mask at frame {frame}, video has {num_frames} frames")]
    FrameOutOfRange {
        track: TrackId,
        frame: usize,
        num_frames: usize,
    },
    #[error("temporal scope must be strictly increasing")]
    UnsortedScope,
    #[error("temporal scope is empty")]
    EmptyScope,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Identifier of a mask track, unique within one run.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TrackId(pub u32);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A pre-extracted video: `T` frame images of identical size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRef {
    pub video_id: String,
    pub frame_paths: Vec<PathBuf>,
    pub width: u32,
    pub height: u32,
}

impl VideoRef {
    pub fn new(
        video_id: impl Into<String>,
        frame_paths: Vec<PathBuf>,
        width: u32,
        height: u32,
    ) -> Result<Self, ModelError> {
        let video_id = video_id.into();
        if frame_paths.is_empty() {
            return Err(ModelError::EmptyVideo(video_id));
        }
        if width == 0 || height == 0 {
            return Err(ModelError::ZeroSized(video_id));
        }
        Ok(Self {
            video_id,
            frame_paths,
            width,
            height,
        })
    }

    /// A video whose frames are not backed by files (simulated worlds).
    pub fn virtual_frames(
        video_id: impl Into<String>,
        num_frames: usize,
        width: u32,
        height: u32,
    ) -> Result<Self, ModelError> {
        let video_id = video_id.into();
        let paths = (0..num_frames)
            .map(|t| PathBuf::from(format!("{video_id}/{t:05}.png")))
            .collect();
        Self::new(video_id, paths, width, height)
    }

    pub fn num_frames(&self) -> usize {
        self.frame_paths.len()
    }

    /// Scope covering every frame of the video.
    pub fn full_scope(&self) -> TemporalScope {
        TemporalScope((0..self.num_frames()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QueryType {
    Referring,
    Reasoning,
    #[default]
    Unknown,
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryType::Referring => "referring",
            QueryType::Reasoning => "reasoning",
            QueryType::Unknown => "unknown",
        })
    }
}

/// A natural-language query. The type stays `Unknown` until concept
/// extraction classifies it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub query_type: QueryType,
}

impl Query {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        Ok(Self {
            text,
            query_type: QueryType::Unknown,
        })
    }
}

/// One object instance over time. A frame without a key, or with an
/// all-zero mask, means the object is absent there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTrack {
    pub track_id: TrackId,
    pub concept: String,
    pub masks: BTreeMap<usize, BitMask>,
}

impl MaskTrack {
    pub fn new(track_id: TrackId, concept: impl Into<String>) -> Self {
        Self {
            track_id,
            concept: concept.into(),
            masks: BTreeMap::new(),
        }
    }

    pub fn with_mask(mut self, frame: usize, mask: BitMask) -> Self {
        self.masks.insert(frame, mask);
        self
    }

    /// Frames where the track has at least one foreground pixel.
    pub fn existence(&self) -> TemporalScope {
        TemporalScope(
            self.masks
                .iter()
                .filter(|(_, m)| !m.is_empty())
                .map(|(&t, _)| t)
                .collect(),
        )
    }

    /// Foreground pixel count at frame `t` (0 when absent).
    pub fn area_at(&self, t: usize) -> u64 {
        self.masks.get(&t).map_or(0, BitMask::area)
    }

    /// Non-empty mask at frame `t`, if any.
    pub fn mask_at(&self, t: usize) -> Option<&BitMask> {
        self.masks.get(&t).filter(|m| !m.is_empty())
    }

    pub fn is_empty(&self) -> bool {
        self.masks.values().all(BitMask::is_empty)
    }

    pub fn validate(&self, video: &VideoRef) -> Result<(), ModelError> {
        for (&frame, mask) in &self.masks {
            if frame >= video.num_frames() {
                return Err(ModelError::FrameOutOfRange {
                    track: self.track_id,
                    frame,
                    num_frames: video.num_frames(),
                });
            }
            if mask.width() != video.width || mask.height() != video.height {
                return Err(ModelError::MaskSize {
                    track: self.track_id,
                    frame,
                    got_w: mask.width(),
                    got_h: mask.height(),
                    want_w: video.width,
                    want_h: video.height,
                });
            }
        }
        Ok(())
    }
}

pub fn temporal_existence(track: &MaskTrack) -> TemporalScope {
    track.existence()
}

/// Sorted union of the existence sets of `tracks`.
pub fn union_scope<'a>(tracks: impl IntoIterator<Item = &'a MaskTrack>) -> TemporalScope {
    let mut frames = BTreeSet::new();
    for track in tracks {
        frames.extend(track.existence().0);
    }
    TemporalScope(frames.into_iter().collect())
}

/// A (core, broad) noun-phrase pair used to prompt the segmentation backend.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConceptPair {
    pub core: String,
    pub broad: String,
}

impl ConceptPair {
    pub fn new(core: impl Into<String>, broad: impl Into<String>) -> Result<Self, ModelError> {
        let core = core.into().trim().to_string();
        let broad = broad.into().trim().to_string();
        let reason = if core.is_empty() || broad.is_empty() {
            Some("both concepts must be non-empty")
        } else if core.eq_ignore_ascii_case(&broad) {
            Some("core and broad concepts must differ")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(ModelError::InvalidConceptPair {
                core,
                broad,
                reason,
            }),
            None => Ok(Self { core, broad }),
        }
    }
}

impl fmt::Display for ConceptPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.core, self.broad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictState {
    Accepted,
    Rejected,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub state: VerdictState,
    #[serde(default)]
    pub rationale: String,
}

impl Verdict {
    pub fn new(state: VerdictState, rationale: impl Into<String>) -> Self {
        Self {
            state,
            rationale: rationale.into(),
        }
    }

    pub fn uncertain(rationale: impl Into<String>) -> Self {
        Self::new(VerdictState::Uncertain, rationale)
    }
}

/// Strictly increasing list of frame indices under consideration.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemporalScope(Vec<usize>);

impl TemporalScope {
    pub fn new(frames: Vec<usize>) -> Result<Self, ModelError> {
        if frames.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::UnsortedScope);
        }
        Ok(Self(frames))
    }

    /// Builds a scope from arbitrary indices, sorting and deduplicating.
    pub fn from_frames(frames: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = frames.into_iter().collect();
        Self(set.into_iter().collect())
    }

    pub fn frames(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.0.binary_search(&frame).is_ok()
    }

    pub fn is_subset_of(&self, other: &TemporalScope) -> bool {
        self.0.iter().all(|&t| other.contains(t))
    }

    /// Sorted merge of two scopes.
    pub fn merge(&self, other: &TemporalScope) -> TemporalScope {
        Self::from_frames(self.0.iter().chain(other.0.iter()).copied())
    }

    /// True when every index is below `num_frames`.
    pub fn fits(&self, num_frames: usize) -> bool {
        self.0.last().is_none_or(|&t| t < num_frames)
    }
}

fn default_num_frames() -> usize {
    16
}
fn default_iters() -> usize {
    3
}
fn default_temperature() -> f64 {
    0.2
}
fn default_max_output_tokens() -> u32 {
    8192
}
fn default_boundary_tolerance() -> f64 {
    0.008
}
fn default_overlay_alpha() -> f64 {
    0.5
}
fn default_dedup_iou() -> f64 {
    0.9
}
fn default_pad_factor() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frames sampled per reasoning call.
    #[serde(default = "default_num_frames")]
    pub num_frames: usize,
    /// Maximum concept-extraction rounds.
    #[serde(default = "default_iters")]
    pub max_extract_iters: usize,
    /// Maximum pruning iterations; the last one is binary (no uncertain).
    #[serde(default = "default_iters")]
    pub max_prune_iters: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub seed: u64,
    /// Boundary-F dilation radius as a fraction of the image diagonal.
    #[serde(default = "default_boundary_tolerance")]
    pub boundary_tolerance_ratio: f64,
    #[serde(default = "default_overlay_alpha")]
    pub overlay_alpha: f64,
    /// Tracks from different concept pairs whose mean IoU over shared frames
    /// exceeds this are treated as the same object.
    #[serde(default = "default_dedup_iou")]
    pub dedup_iou_threshold: f64,
    /// Expansion of the loose crop in reference images.
    #[serde(default = "default_pad_factor")]
    pub reference_pad_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            num_frames: default_num_frames(),
            max_extract_iters: default_iters(),
            max_prune_iters: default_iters(),
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            seed: 0,
            boundary_tolerance_ratio: default_boundary_tolerance(),
            overlay_alpha: default_overlay_alpha(),
            dedup_iou_threshold: default_dedup_iou(),
            reference_pad_factor: default_pad_factor(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.num_frames == 0 || self.max_extract_iters == 0 || self.max_prune_iters == 0 {
            return bad("frame and iteration counts must be at least 1".into());
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be at least 1".into());
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(self.overlay_alpha > 0.0 && self.overlay_alpha <= 1.0) {
            return bad(format!(
                "overlay_alpha {} must be in (0, 1]",
                self.overlay_alpha
            ));
        }
        if self.boundary_tolerance_ratio.is_nan() || self.boundary_tolerance_ratio <= 0.0 {
            return bad("boundary_tolerance_ratio must be > 0".into());
        }
        if self.reference_pad_factor.is_nan() || self.reference_pad_factor < 1.0 {
            return bad("reference_pad_factor must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.dedup_iou_threshold) {
            return bad("dedup_iou_threshold must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Mutable state of one expression while it moves through the pipeline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunState {
    pub candidates: Vec<MaskTrack>,
    pub accepted: Vec<MaskTrack>,
    pub rejected: Vec<MaskTrack>,
    pub failure_set: Vec<Vec<ConceptPair>>,
    pub selected_concepts: Vec<String>,
    pub appearance: BTreeMap<TrackId, String>,
    pub scope: TemporalScope,
    pub iteration: usize,
}

impl RunState {
    /// State at the start of pruning: scope is the union of all candidates.
    pub fn for_pruning(
        candidates: Vec<MaskTrack>,
        selected_concepts: Vec<String>,
        appearance: BTreeMap<TrackId, String>,
    ) -> Self {
        let scope = union_scope(&candidates);
        Self {
            candidates,
            selected_concepts,
            appearance,
            scope,
            ..Self::default()
        }
    }

    pub fn candidate_ids(&self) -> Vec<TrackId> {
        self.candidates.iter().map(|t| t.track_id).collect()
    }

    /// Candidates, accepted and rejected never share a track id.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.candidates
            .iter()
            .chain(&self.accepted)
            .chain(&self.rejected)
            .all(|t| seen.insert(t.track_id))
    }

    pub fn refresh_scope(&mut self) {
        self.scope = union_scope(&self.candidates);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Raster;
    use proptest::prelude::*;

    fn dot(w: u32, h: u32, x: u32, y: u32) -> BitMask {
        let mut r = Raster::zeros(w, h);
        r.set(x, y, true);
        BitMask::from_raster(&r)
    }

    fn track_at(id: u32, frames: &[usize]) -> MaskTrack {
        frames
            .iter()
            .fold(MaskTrack::new(TrackId(id), "obj"), |t, &f| {
                t.with_mask(f, dot(4, 4, 1, 1))
            })
    }

    #[test]
    fn existence_lists_nonempty_frames() {
        assert_eq!(track_at(0, &[2, 5, 9]).existence().frames(), &[2, 5, 9]);
    }

    #[test]
    fn all_zero_mask_is_absent() {
        let t = track_at(0, &[1, 3]).with_mask(4, BitMask::empty(4, 4));
        assert_eq!(temporal_existence(&t).frames(), &[1, 3]);
    }

    #[test]
    fn union_of_scopes() {
        let tracks = [track_at(0, &[1, 3]), track_at(1, &[2, 3])];
        assert_eq!(union_scope(&tracks).frames(), &[1, 2, 3]);
        assert!(union_scope(&[]).is_empty());
    }

    #[test]
    fn scope_constructor_rejects_unsorted() {
        assert_eq!(
            TemporalScope::new(vec![3, 1]),
            Err(ModelError::UnsortedScope)
        );
        assert_eq!(
            TemporalScope::new(vec![1, 1]),
            Err(ModelError::UnsortedScope)
        );
        assert!(TemporalScope::new(vec![0, 4, 7]).is_ok());
    }

    #[test]
    fn concept_pair_invariants() {
        assert!(ConceptPair::new("car", "vehicle").is_ok());
        assert!(ConceptPair::new("car", "Car").is_err());
        assert!(ConceptPair::new(" ", "vehicle").is_err());
    }

    #[test]
    fn query_starts_unknown() {
        let q = Query::new("the cat sitting on the red couch").unwrap();
        assert_eq!(q.query_type, QueryType::Unknown);
        assert!(Query::new("   ").is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = PipelineConfig::default();
        assert_eq!(c.num_frames, 16);
        assert_eq!(c.max_extract_iters, 3);
        assert_eq!(c.max_prune_iters, 3);
        assert_eq!(c.temperature, 0.2);
        assert_eq!(c.max_output_tokens, 8192);
        assert_eq!(c.boundary_tolerance_ratio, 0.008);
        assert_eq!(c.overlay_alpha, 0.5);
        c.validate().unwrap();
        let bad = PipelineConfig {
            max_prune_iters: 0,
            ..c.clone()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            temperature: -1.0,
            ..c
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn track_validation_catches_size_and_range() {
        let video = VideoRef::virtual_frames("v", 3, 4, 4).unwrap();
        track_at(0, &[0, 2]).validate(&video).unwrap();
        assert!(matches!(
            track_at(0, &[3]).validate(&video),
            Err(ModelError::FrameOutOfRange { .. })
        ));
        let wrong = MaskTrack::new(TrackId(1), "x").with_mask(0, dot(5, 4, 0, 0));
        assert!(matches!(
            wrong.validate(&video),
            Err(ModelError::MaskSize { .. })
        ));
    }

    fn random_track(id: u32, t: usize) -> impl Strategy<Value = MaskTrack> {
        proptest::collection::vec(proptest::option::of(any::<bool>()), t).prop_map(move |cells| {
            let mut track = MaskTrack::new(TrackId(id), "x");
            for (f, c) in cells.into_iter().enumerate() {
                match c {
                    Some(true) => track.masks.insert(f, dot(3, 3, 1, 2)),
                    Some(false) => track.masks.insert(f, BitMask::empty(3, 3)),
                    None => None,
                };
            }
            track
        })
    }

    proptest! {
        #[test]
        fn existence_matches_pixel_scan(track in random_track(0, 30)) {
            let brute: Vec<usize> = (0..30)
                .filter(|&f| track.masks.get(&f).is_some_and(|m| {
                    let r = m.raster();
                    (0..3).any(|y| (0..3).any(|x| r.get(x, y)))
                }))
                .collect();
            prop_assert_eq!(track.existence().frames().to_vec(), brute);
            prop_assert_eq!(track.existence(), temporal_existence(&track));
        }

        #[test]
        fn union_matches_membership_scan(tracks in proptest::collection::vec(random_track(0, 20), 5)) {
            let brute: Vec<usize> = (0..20)
                .filter(|&f| tracks.iter().any(|t| t.mask_at(f).is_some()))
                .collect();
            prop_assert_eq!(union_scope(&tracks).frames().to_vec(), brute);
        }

        #[test]
        fn union_distributes_over_split(
            tracks in proptest::collection::vec(random_track(0, 12), 0..6),
            split in 0usize..6,
        ) {
            let split = split.min(tracks.len());
            let (a, b) = tracks.split_at(split);
            prop_assert_eq!(union_scope(&tracks), union_scope(a).merge(&union_scope(b)));
        }
    }
}
