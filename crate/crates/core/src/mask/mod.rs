//! Binary masks: raster and RLE representations, metrics, track merging and
//! set-of-marks rendering.

mod metrics;
mod render;
mod rle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MaskTrack, TrackId};

pub use metrics::{boundary_f, boundary_map, boundary_radius, dilate, mask_iou, raster_iou};
pub use render::{
    label_box, largest_area_frame, make_reference_image, mask_bbox, reference_panels,
    render_overlay, BBox, Palette, ReferenceImage,
};
pub use rle::{rle_decode, rle_encode, RleMask};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("RLE counts sum to {sum}, expected {expected} for a {height}x{width} mask")]
    RleLength {
        sum: u64,
        expected: u64,
        height: u32,
        width: u32,
    },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("raster has {got} cells, expected {expected}")]
    CellCount { got: usize, expected: usize },
    #[error("track {0} has no foreground in any frame")]
    EmptyTrack(TrackId),
}

/// Dense binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    width: u32,
    height: u32,
    cells: Vec<bool>,
}

impl Raster {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            cells: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut cells = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            cells,
        }
    }

    pub fn from_cells(width: u32, height: u32, cells: Vec<bool>) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if cells.len() != expected {
            return Err(MaskError::CellCount {
                got: cells.len(),
                expected,
            });
        }
        Ok(Self {
            width,
            height,
            cells,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.cells[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.cells[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn area(&self) -> u64 {
        self.cells.iter().filter(|&&c| c).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&c| c)
    }

    /// Foreground coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn same_size(&self, other: &Raster) -> Result<(), MaskError> {
        if self.width != other.width || self.height != other.height {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// In-place pixel-wise OR.
    pub fn union_with(&mut self, other: &Raster) -> Result<(), MaskError> {
        self.same_size(other)?;
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            *a |= b;
        }
        Ok(())
    }
}

/// A binary mask stored as column-major RLE. Serializes as
/// `{"size":[H,W],"counts":[...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RleMask", into = "RleMask")]
pub struct BitMask {
    rle: RleMask,
    area: u64,
}

impl BitMask {
    pub fn from_raster(raster: &Raster) -> Self {
        let rle = rle_encode(raster);
        let area = rle.area();
        Self { rle, area }
    }

    pub fn from_rle(rle: RleMask) -> Result<Self, MaskError> {
        rle.check()?;
        let area = rle.area();
        Ok(Self { rle, area })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self::from_raster(&Raster::zeros(width, height))
    }

    pub fn width(&self) -> u32 {
        self.rle.size[1]
    }

    pub fn height(&self) -> u32 {
        self.rle.size[0]
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    pub fn rle(&self) -> &RleMask {
        &self.rle
    }

    pub fn raster(&self) -> Raster {
        rle_decode(&self.rle).expect("BitMask RLE is validated at construction")
    }
}

impl TryFrom<RleMask> for BitMask {
    type Error = MaskError;

    fn try_from(rle: RleMask) -> Result<Self, Self::Error> {
        Self::from_rle(rle)
    }
}

impl From<BitMask> for RleMask {
    fn from(mask: BitMask) -> Self {
        mask.rle
    }
}

/// Per-frame pixel-wise union of `tracks` over `num_frames` frames.
///
/// The result stores a mask for every frame, all-zero where no input track
/// has foreground. It takes the smallest input id and the joined concepts.
pub fn merge_tracks(tracks: &[MaskTrack], num_frames: usize, width: u32, height: u32) -> MaskTrack {
    let track_id = tracks.iter().map(|t| t.track_id).min().unwrap_or_default();
    let mut concepts: Vec<&str> = tracks.iter().map(|t| t.concept.as_str()).collect();
    concepts.sort_unstable();
    concepts.dedup();
    let mut merged = MaskTrack::new(track_id, concepts.join("|"));
    for t in 0..num_frames {
        let mut acc = Raster::zeros(width, height);
        for mask in tracks.iter().filter_map(|track| track.mask_at(t)) {
            let raster = mask.raster();
            if acc.union_with(&raster).is_err() {
                log::warn!(
                    "skipping {}x{} mask at frame {t} while merging",
                    raster.width(),
                    raster.height()
                );
            }
        }
        merged.masks.insert(t, BitMask::from_raster(&acc));
    }
    merged
}
