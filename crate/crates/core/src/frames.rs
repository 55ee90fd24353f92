//! Access to decoded video frames.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use thiserror::Error;

use crate::model::VideoRef;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame {frame} of video `{video}` is out of range")]
    OutOfRange { video: String, frame: usize },
    #[error("cannot read frame {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("frame {path} is {got_w}x{got_h}, video is {want_w}x{want_h}")]
    Size {
        path: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("no frame source for video `{0}`")]
    UnknownVideo(String),
    #[error("png encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

/// Supplies RGB frames by index.
pub trait FrameSource: Send + Sync {
    fn frame(&self, video: &VideoRef, t: usize) -> Result<RgbImage, FrameError>;
}

/// Reads frames from `video.frame_paths`.
#[derive(Debug, Default, Clone, Copy)]
pub struct DiskFrames;

impl FrameSource for DiskFrames {
    fn frame(&self, video: &VideoRef, t: usize) -> Result<RgbImage, FrameError> {
        let path = video
            .frame_paths
            .get(t)
            .ok_or_else(|| FrameError::OutOfRange {
                video: video.video_id.clone(),
                frame: t,
            })?;
        let img = image::open(path)
            .map_err(|source| FrameError::Decode {
                path: path.display().to_string(),
                source,
            })?
            .to_rgb8();
        if img.dimensions() != (video.width, video.height) {
            return Err(FrameError::Size {
                path: path.display().to_string(),
                got_w: img.width(),
                got_h: img.height(),
                want_w: video.width,
                want_h: video.height,
            });
        }
        Ok(img)
    }
}

/// Uniform frames of a single colour; useful when only masks matter.
#[derive(Debug, Clone, Copy)]
pub struct BlankFrames(pub Rgb<u8>);

impl Default for BlankFrames {
    fn default() -> Self {
        Self(Rgb([128, 128, 128]))
    }
}

impl FrameSource for BlankFrames {
    fn frame(&self, video: &VideoRef, t: usize) -> Result<RgbImage, FrameError> {
        if t >= video.num_frames() {
            return Err(FrameError::OutOfRange {
                video: video.video_id.clone(),
                frame: t,
            });
        }
        Ok(RgbImage::from_pixel(video.width, video.height, self.0))
    }
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, FrameError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}
