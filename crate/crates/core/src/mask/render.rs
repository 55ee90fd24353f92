use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{boundary_map, MaskError, Raster};
use crate::mask::BitMask;
use crate::model::{MaskTrack, TrackId};

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// Scales the box about its centre by `factor`, clamped to the image.
    pub fn expand(&self, factor: f64, width: u32, height: u32) -> BBox {
        let grow = |lo: u32, hi: u32, len: u32, limit: u32| {
            let extra = ((len as f64 * factor).round() as i64 - len as i64).max(0);
            let before = extra / 2;
            let after = extra - before;
            let lo = (lo as i64 - before).max(0) as u32;
            let hi = (hi as i64 + after).min(limit as i64 - 1) as u32;
            (lo, hi)
        };
        let (x_min, x_max) = grow(self.x_min, self.x_max, self.width(), width);
        let (y_min, y_max) = grow(self.y_min, self.y_max, self.height(), height);
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }
}

pub fn mask_bbox(mask: &Raster) -> Option<BBox> {
    mask.foreground().fold(None, |acc, (x, y)| {
        Some(match acc {
            None => BBox {
                x_min: x,
                y_min: y,
                x_max: x,
                y_max: y,
            },
            Some(b) => BBox {
                x_min: b.x_min.min(x),
                y_min: b.y_min.min(y),
                x_max: b.x_max.max(x),
                y_max: b.y_max.max(y),
            },
        })
    })
}

/// Frame with the largest foreground area; ties go to the earliest frame.
pub fn largest_area_frame(track: &MaskTrack) -> Option<usize> {
    let mut best: Option<(usize, u64)> = None;
    for (&t, mask) in &track.masks {
        let area = mask.area();
        if area > 0 && best.is_none_or(|(_, a)| area > a) {
            best = Some((t, area));
        }
    }
    best.map(|(t, _)| t)
}

/// Fixed high-contrast colours, assigned by `track_id mod len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette(Vec<Rgb<u8>>);

impl Default for Palette {
    fn default() -> Self {
        Self(
            [
                [230, 25, 75],
                [60, 180, 75],
                [255, 225, 25],
                [0, 130, 200],
                [245, 130, 48],
                [145, 30, 180],
                [70, 240, 240],
                [240, 50, 230],
            ]
            .into_iter()
            .map(Rgb)
            .collect(),
        )
    }
}

impl Palette {
    pub fn new(colors: Vec<Rgb<u8>>) -> Self {
        assert!(!colors.is_empty(), "palette needs at least one colour");
        Self(colors)
    }

    pub fn color(&self, id: TrackId) -> Rgb<u8> {
        self.0[id.0 as usize % self.0.len()]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

// 3x5 digit glyphs, one row per u8 (bit 2 = left column).
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b011, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn glyph_scale(width: u32, height: u32) -> u32 {
    (width.min(height) / 128).max(1)
}

/// Box covering the id label drawn at the mask centroid, clipped to the image.
pub fn label_box(mask: &Raster, id: TrackId) -> Option<BBox> {
    let (w, h) = (mask.width(), mask.height());
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for (x, y) in mask.foreground() {
        sx += x as u64;
        sy += y as u64;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let (cx, cy) = (
        ((sx as f64) / n as f64).round() as i64,
        ((sy as f64) / n as f64).round() as i64,
    );
    let s = glyph_scale(w, h) as i64;
    let digits = id.0.to_string().len() as i64;
    let box_w = digits * 3 * s + (digits - 1) * s + 2 * s;
    let box_h = 7 * s;
    let x0 = (cx - box_w / 2).clamp(0, (w as i64 - box_w).max(0));
    let y0 = (cy - box_h / 2).clamp(0, (h as i64 - box_h).max(0));
    Some(BBox {
        x_min: x0 as u32,
        y_min: y0 as u32,
        x_max: (x0 + box_w - 1).min(w as i64 - 1) as u32,
        y_max: (y0 + box_h - 1).min(h as i64 - 1) as u32,
    })
}

fn draw_label(img: &mut RgbImage, bbox: BBox, id: TrackId) {
    for y in bbox.y_min..=bbox.y_max {
        for x in bbox.x_min..=bbox.x_max {
            img.put_pixel(x, y, Rgb([0, 0, 0]));
        }
    }
    let s = glyph_scale(img.width(), img.height());
    let mut gx = bbox.x_min + s;
    for ch in id.0.to_string().bytes() {
        let glyph = &DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        let (x, y) = (gx + col * s + dx, bbox.y_min + s + row as u32 * s + dy);
                        if bbox.contains(x, y) {
                            img.put_pixel(x, y, Rgb([255, 255, 255]));
                        }
                    }
                }
            }
        }
        gx += 4 * s;
    }
}

fn blend(base: Rgb<u8>, color: Rgb<u8>, alpha: f64) -> Rgb<u8> {
    let mix = |b: u8, c: u8| {
        (alpha * c as f64 + (1.0 - alpha) * b as f64)
            .round()
            .clamp(0.0, 255.0) as u8
    };
    Rgb([
        mix(base[0], color[0]),
        mix(base[1], color[1]),
        mix(base[2], color[2]),
    ])
}

/// Set-of-marks overlay: each candidate is blended with its palette colour,
/// its contour drawn opaque and its id printed at the mask centroid.
pub fn render_overlay(
    frame: &RgbImage,
    candidates: &[(TrackId, &BitMask)],
    palette: &Palette,
    alpha: f64,
) -> RgbImage {
    let mut out = frame.clone();
    let rasters: Vec<(TrackId, Raster)> = candidates
        .iter()
        .filter(|(_, m)| !m.is_empty())
        .filter_map(|&(id, m)| {
            if m.width() != frame.width() || m.height() != frame.height() {
                log::warn!("overlay skips track {id}: mask does not match frame size");
                return None;
            }
            Some((id, m.raster()))
        })
        .collect();
    for (id, raster) in &rasters {
        let color = palette.color(*id);
        for (x, y) in raster.foreground() {
            let p = *out.get_pixel(x, y);
            out.put_pixel(x, y, blend(p, color, alpha));
        }
    }
    for (id, raster) in &rasters {
        let color = palette.color(*id);
        for (x, y) in boundary_map(raster).foreground() {
            out.put_pixel(x, y, color);
        }
    }
    for (id, raster) in &rasters {
        if let Some(bbox) = label_box(raster, *id) {
            draw_label(&mut out, bbox, *id);
        }
    }
    out
}

/// Two-panel reference image for one candidate.
#[derive(Debug, Clone)]
pub struct ReferenceImage {
    pub frame: usize,
    pub bbox: BBox,
    pub loose: BBox,
    pub image: RgbImage,
}

fn crop(img: &RgbImage, b: BBox) -> RgbImage {
    image::imageops::crop_imm(img, b.x_min, b.y_min, b.width(), b.height()).to_image()
}

/// Builds the panels from a frame image and the candidate's mask on it:
/// left is the loose crop (bbox scaled by `pad_factor`) with the bbox
/// outlined, right is the tight bbox crop.
pub fn reference_panels(
    frame_image: &RgbImage,
    frame: usize,
    mask: &Raster,
    pad_factor: f64,
) -> Option<ReferenceImage> {
    let bbox = mask_bbox(mask)?;
    let loose = bbox.expand(pad_factor, frame_image.width(), frame_image.height());
    let mut left = crop(frame_image, loose);
    let outline = Rgb([0, 255, 0]);
    let (bx0, by0) = (bbox.x_min - loose.x_min, bbox.y_min - loose.y_min);
    let (bx1, by1) = (bbox.x_max - loose.x_min, bbox.y_max - loose.y_min);
    for x in bx0..=bx1 {
        left.put_pixel(x, by0, outline);
        left.put_pixel(x, by1, outline);
    }
    for y in by0..=by1 {
        left.put_pixel(bx0, y, outline);
        left.put_pixel(bx1, y, outline);
    }
    let right = crop(frame_image, bbox);
    let mut image = RgbImage::new(
        left.width() + right.width(),
        left.height().max(right.height()),
    );
    image::imageops::replace(&mut image, &left, 0, 0);
    image::imageops::replace(&mut image, &right, left.width() as i64, 0);
    Some(ReferenceImage {
        frame,
        bbox,
        loose,
        image,
    })
}

/// Picks the largest-area frame of `track` and builds its reference panels.
/// `load_frame` supplies the image for the chosen frame index.
pub fn make_reference_image<E>(
    track: &MaskTrack,
    pad_factor: f64,
    load_frame: impl FnOnce(usize) -> Result<RgbImage, E>,
) -> Result<ReferenceImage, E>
where
    E: From<MaskError>,
{
    let frame = largest_area_frame(track).ok_or(MaskError::EmptyTrack(track.track_id))?;
    let mask = track.masks[&frame].raster();
    let img = load_frame(frame)?;
    reference_panels(&img, frame, &mask, pad_factor)
        .ok_or_else(|| MaskError::EmptyTrack(track.track_id).into())
}
