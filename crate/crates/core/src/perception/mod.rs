//! Concept segmentation backends: given a video and a short noun phrase,
//! return one mask track per matching object instance.

pub mod http;
pub mod sim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::BackendError;
use crate::mask::{BitMask, RleMask};
use crate::model::{MaskTrack, TrackId, VideoRef};

pub use http::{FrameEncoding, HttpPerception};
pub use sim::{Placement, Shape, SimObject, SimPerception, SimWorld};

pub trait Perception: Send + Sync {
    /// An empty list means the concept was not found anywhere in the video.
    fn segment_concept(
        &self,
        video: &VideoRef,
        concept: &str,
    ) -> Result<Vec<MaskTrack>, BackendError>;
}

/// Total number of non-empty per-frame detections across `tracks`.
pub fn count_detections(tracks: &[MaskTrack]) -> usize {
    tracks.iter().map(|t| t.existence().len()).sum()
}

/// `POST /v1/segment` request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub video_id: String,
    pub frames: Vec<String>,
    pub width: u32,
    pub height: u32,
    pub concept: String,
    pub frame_encoding: FrameEncoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub tracks: Vec<WireTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTrack {
    pub track_id: u32,
    /// Keyed by decimal frame index.
    pub masks: BTreeMap<String, RleMask>,
}

impl WireTrack {
    pub fn from_track(track: &MaskTrack) -> Self {
        Self {
            track_id: track.track_id.0,
            masks: track
                .masks
                .iter()
                .map(|(t, m)| (t.to_string(), m.rle().clone()))
                .collect(),
        }
    }
}

/// Validates a wire response against the video and converts it to tracks.
pub fn decode_response(
    response: SegmentResponse,
    video: &VideoRef,
    concept: &str,
    endpoint: &str,
) -> Result<Vec<MaskTrack>, BackendError> {
    let protocol = |message: String| BackendError::Protocol {
        endpoint: endpoint.to_string(),
        message,
    };
    let mut tracks = Vec::with_capacity(response.tracks.len());
    for wire in response.tracks {
        let mut track = MaskTrack::new(TrackId(wire.track_id), concept);
        for (key, rle) in wire.masks {
            let frame: usize = key.parse().map_err(|_| {
                protocol(format!(
                    "track {}: frame key {key:?} is not an index",
                    wire.track_id
                ))
            })?;
            let mask = BitMask::from_rle(rle)
                .map_err(|e| protocol(format!("track {}: {e}", wire.track_id)))?;
            track.masks.insert(frame, mask);
        }
        track.validate(video).map_err(|e| protocol(e.to_string()))?;
        tracks.push(track);
    }
    Ok(tracks)
}
