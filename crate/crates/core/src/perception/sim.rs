//! Deterministic synthetic worlds of moving shapes.
//!
//! A [`SimWorld`] is its own ground truth: segmenting a concept returns the
//! exact rasterized shapes of every object carrying that label.

use std::collections::{BTreeMap, BTreeSet};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Perception;
use crate::backend::BackendError;
use crate::frames::{FrameError, FrameSource};
use crate::mask::{BitMask, Raster};
use crate::model::{MaskTrack, TrackId, VideoRef};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("world `{0}` has a zero-sized canvas or no frames")]
    Degenerate(String),
    #[error("object {object} in world `{world}` has {got} placements, expected {expected}")]
    PlacementCount {
        world: String,
        object: u32,
        got: usize,
        expected: usize,
    },
    #[error("object {object} at frame {frame} in world `{world}` leaves the canvas")]
    OutOfCanvas {
        world: String,
        object: u32,
        frame: usize,
    },
    #[error("object id {0} is zero or repeated")]
    BadObjectId(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Ellipse,
}

/// A shape with inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub shape: Shape,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Placement {
    pub fn covers(&self, x: u32, y: u32) -> bool {
        if x < self.x0 || x > self.x1 || y < self.y0 || y > self.y1 {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                let (cx, cy) = (
                    (self.x0 + self.x1) as f64 / 2.0,
                    (self.y0 + self.y1) as f64 / 2.0,
                );
                let (rx, ry) = (
                    (self.x1 - self.x0) as f64 / 2.0 + 0.5,
                    (self.y1 - self.y0) as f64 / 2.0 + 0.5,
                );
                let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    pub fn rasterize(&self, width: u32, height: u32) -> Raster {
        Raster::from_fn(width, height, |x, y| self.covers(x, y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    /// Non-zero; also the pixel value in ground-truth index images.
    pub object_id: u32,
    pub concept_labels: BTreeSet<String>,
    pub color: [u8; 3],
    /// Short appearance phrase, e.g. "red car".
    #[serde(default)]
    pub appearance: String,
    /// One entry per frame; `None` means absent.
    pub placements: Vec<Option<Placement>>,
}

impl SimObject {
    pub fn has_label(&self, concept: &str) -> bool {
        let concept = concept.trim();
        self.concept_labels
            .iter()
            .any(|l| l.eq_ignore_ascii_case(concept))
    }

    pub fn lifetime(&self) -> Vec<usize> {
        self.placements
            .iter()
            .enumerate()
            .filter_map(|(t, p)| p.map(|_| t))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub duration: usize,
    pub background: [u8; 3],
    pub objects: Vec<SimObject>,
    #[serde(default)]
    pub seed: u64,
}

impl SimWorld {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.width == 0 || self.height == 0 || self.duration == 0 {
            return Err(WorldError::Degenerate(self.video_id.clone()));
        }
        let mut ids = BTreeSet::new();
        for obj in &self.objects {
            if obj.object_id == 0 || !ids.insert(obj.object_id) {
                return Err(WorldError::BadObjectId(obj.object_id));
            }
            if obj.placements.len() != self.duration {
                return Err(WorldError::PlacementCount {
                    world: self.video_id.clone(),
                    object: obj.object_id,
                    got: obj.placements.len(),
                    expected: self.duration,
                });
            }
            for (frame, p) in obj.placements.iter().enumerate() {
                if let Some(p) = p {
                    if p.x0 > p.x1 || p.y0 > p.y1 || p.x1 >= self.width || p.y1 >= self.height {
                        return Err(WorldError::OutOfCanvas {
                            world: self.video_id.clone(),
                            object: obj.object_id,
                            frame,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn video_ref(&self) -> VideoRef {
        VideoRef::virtual_frames(&self.video_id, self.duration, self.width, self.height)
            .expect("validated world has frames and a canvas")
    }

    pub fn object(&self, object_id: u32) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn object_raster(&self, object_id: u32, t: usize) -> Option<Raster> {
        let p = self
            .object(object_id)?
            .placements
            .get(t)
            .copied()
            .flatten()?;
        Some(p.rasterize(self.width, self.height))
    }

    /// Ground-truth track for a set of objects: per-frame union of their shapes.
    pub fn ground_truth(&self, object_ids: &[u32]) -> MaskTrack {
        let mut track = MaskTrack::new(TrackId(0), "gt");
        for t in 0..self.duration {
            let mut acc = Raster::zeros(self.width, self.height);
            for &id in object_ids {
                if let Some(r) = self.object_raster(id, t) {
                    acc.union_with(&r).expect("same canvas");
                }
            }
            track.masks.insert(t, BitMask::from_raster(&acc));
        }
        track
    }

    /// One track per object labelled `concept`, ids in object order.
    pub fn segment(&self, concept: &str) -> Vec<MaskTrack> {
        self.objects
            .iter()
            .filter(|o| o.has_label(concept))
            .enumerate()
            .map(|(i, obj)| {
                let mut track = MaskTrack::new(TrackId(i as u32), concept.trim());
                for (t, p) in obj.placements.iter().enumerate() {
                    if let Some(p) = p {
                        track.masks.insert(
                            t,
                            BitMask::from_raster(&p.rasterize(self.width, self.height)),
                        );
                    }
                }
                track
            })
            .collect()
    }

    /// Frame image: background with objects painted in order.
    pub fn render_frame(&self, t: usize) -> RgbImage {
        let [br, bg, bb] = self.background;
        let mut img = RgbImage::from_fn(self.width, self.height, |x, y| {
            // faint checker texture so frames are not flat
            let d = if (x / 8 + y / 8) % 2 == 0 { 0 } else { 12 };
            Rgb([
                br.saturating_add(d),
                bg.saturating_add(d),
                bb.saturating_add(d),
            ])
        });
        for obj in &self.objects {
            if let Some(Some(p)) = obj.placements.get(t) {
                for y in p.y0..=p.y1 {
                    for x in p.x0..=p.x1 {
                        if p.covers(x, y) {
                            img.put_pixel(x, y, Rgb(obj.color));
                        }
                    }
                }
            }
        }
        img
    }

    /// Ground-truth index image (pixel value = object id, 0 = background).
    pub fn index_frame(&self, t: usize) -> image::GrayImage {
        let mut img = image::GrayImage::new(self.width, self.height);
        for obj in &self.objects {
            if let Some(Some(p)) = obj.placements.get(t) {
                for y in p.y0..=p.y1 {
                    for x in p.x0..=p.x1 {
                        if p.covers(x, y) {
                            img.put_pixel(x, y, image::Luma([obj.object_id.min(255) as u8]));
                        }
                    }
                }
            }
        }
        img
    }
}

/// Perception and frame source backed by a set of simulated worlds.
#[derive(Debug, Clone, Default)]
pub struct SimPerception {
    worlds: BTreeMap<String, SimWorld>,
}

impl SimPerception {
    pub fn new(worlds: impl IntoIterator<Item = SimWorld>) -> Result<Self, WorldError> {
        let mut map = BTreeMap::new();
        for w in worlds {
            w.validate()?;
            map.insert(w.video_id.clone(), w);
        }
        Ok(Self { worlds: map })
    }

    pub fn world(&self, video_id: &str) -> Option<&SimWorld> {
        self.worlds.get(video_id)
    }

    pub fn worlds(&self) -> impl Iterator<Item = &SimWorld> {
        self.worlds.values()
    }
}

impl Perception for SimPerception {
    fn segment_concept(
        &self,
        video: &VideoRef,
        concept: &str,
    ) -> Result<Vec<MaskTrack>, BackendError> {
        let world = self.worlds.get(&video.video_id).ok_or_else(|| {
            BackendError::Unavailable(format!("no simulated world for `{}`", video.video_id))
        })?;
        Ok(world.segment(concept))
    }
}

impl FrameSource for SimPerception {
    fn frame(&self, video: &VideoRef, t: usize) -> Result<RgbImage, FrameError> {
        let world = self
            .worlds
            .get(&video.video_id)
            .ok_or_else(|| FrameError::UnknownVideo(video.video_id.clone()))?;
        if t >= world.duration {
            return Err(FrameError::OutOfRange {
                video: video.video_id.clone(),
                frame: t,
            });
        }
        Ok(world.render_frame(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::count_detections;

    fn labels(ls: &[&str]) -> BTreeSet<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    fn object(
        id: u32,
        ls: &[&str],
        lane: u32,
        frames: std::ops::Range<usize>,
        duration: usize,
    ) -> SimObject {
        SimObject {
            object_id: id,
            concept_labels: labels(ls),
            color: [200, 10 * id as u8, 40],
            appearance: String::new(),
            placements: (0..duration)
                .map(|t| {
                    frames.contains(&t).then_some(Placement {
                        shape: if id.is_multiple_of(2) {
                            Shape::Ellipse
                        } else {
                            Shape::Rect
                        },
                        x0: t as u32,
                        y0: lane * 10,
                        x1: t as u32 + 5,
                        y1: lane * 10 + 6,
                    })
                })
                .collect(),
        }
    }

    fn world() -> SimWorld {
        SimWorld {
            video_id: "w".into(),
            width: 40,
            height: 50,
            duration: 10,
            background: [20, 20, 20],
            objects: vec![
                object(1, &["car", "vehicle"], 0, 0..10, 10),
                object(2, &["car", "vehicle"], 1, 2..6, 10),
                object(3, &["bicycle", "vehicle"], 2, 0..10, 10),
                object(4, &["bicycle", "vehicle"], 3, 5..10, 10),
            ],
            seed: 0,
        }
    }

    #[test]
    fn segment_returns_exact_shapes() {
        let w = world();
        let cars = w.segment("car");
        assert_eq!(cars.len(), 2);
        for (track, obj) in cars.iter().zip([1u32, 2]) {
            for t in 0..10 {
                let expected = w.object_raster(obj, t);
                assert_eq!(track.mask_at(t).map(BitMask::raster), expected);
            }
        }
        assert!(w.segment("unicorn").is_empty());
    }

    #[test]
    fn broad_label_finds_more() {
        let w = world();
        assert_eq!(w.segment("vehicle").len(), 4);
        assert!(count_detections(&w.segment("vehicle")) > count_detections(&w.segment("car")));
        assert_eq!(w.segment(" Vehicle ").len(), 4);
    }

    #[test]
    fn deterministic_rle() {
        let (a, b) = (world().segment("vehicle"), world().segment("vehicle"));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn validation() {
        let mut w = world();
        w.validate().unwrap();
        w.objects[0].placements.pop();
        assert!(matches!(
            w.validate(),
            Err(WorldError::PlacementCount { .. })
        ));
        let mut w = world();
        w.objects[1].object_id = 1;
        assert!(matches!(w.validate(), Err(WorldError::BadObjectId(1))));
        let mut w = world();
        w.objects[0].placements[0] = Some(Placement {
            shape: Shape::Rect,
            x0: 0,
            y0: 0,
            x1: 40,
            y1: 3,
        });
        assert!(matches!(w.validate(), Err(WorldError::OutOfCanvas { .. })));
    }

    #[test]
    fn index_frame_matches_shapes() {
        let w = world();
        let idx = w.index_frame(3);
        let car2 = w.object_raster(2, 3).unwrap();
        for (x, y) in car2.foreground() {
            assert_eq!(idx.get_pixel(x, y).0[0], 2);
        }
    }

    #[test]
    fn ellipse_inclusive_bounds_touch_box_edges() {
        let p = Placement {
            shape: Shape::Ellipse,
            x0: 2,
            y0: 2,
            x1: 8,
            y1: 6,
        };
        let r = p.rasterize(12, 10);
        assert!(r.get(2, 4) && r.get(8, 4) && r.get(5, 2) && r.get(5, 6));
        assert!(!r.get(2, 2));
    }
}
