use serde::{Deserialize, Serialize};

use super::{MaskError, Raster};

/// Uncompressed run-length encoding in column-major order.
///
/// `counts` alternates zero-runs and one-runs and always starts with a
/// zero-run, which may have length 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Number of foreground cells (sum of the one-runs).
    pub fn area(&self) -> u64 {
        self.counts
            .iter()
            .skip(1)
            .step_by(2)
            .map(|&c| c as u64)
            .sum()
    }

    pub fn check(&self) -> Result<(), MaskError> {
        let [height, width] = self.size;
        let expected = height as u64 * width as u64;
        let sum = self.total();
        if sum != expected {
            return Err(MaskError::RleLength {
                sum,
                expected,
                height,
                width,
            });
        }
        Ok(())
    }
}

pub fn rle_encode(raster: &Raster) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..raster.width() {
        for y in 0..raster.height() {
            let v = raster.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask {
        size: [raster.height(), raster.width()],
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<Raster, MaskError> {
    rle.check()?;
    let [height, width] = rle.size;
    let mut raster = Raster::zeros(width, height);
    let h = height as usize;
    let mut pos = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        if i % 2 == 1 {
            for p in pos..pos + run as usize {
                raster.set((p / h) as u32, (p % h) as u32, true);
            }
        }
        pos += run as usize;
    }
    Ok(raster)
}
