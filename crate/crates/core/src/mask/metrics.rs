use super::{BitMask, MaskError, Raster};

/// Intersection over union; two empty masks score 1.0.
pub fn mask_iou(a: &BitMask, b: &BitMask) -> Result<f64, MaskError> {
    raster_iou(&a.raster(), &b.raster())
}

pub fn raster_iou(a: &Raster, b: &Raster) -> Result<f64, MaskError> {
    a.same_size(b)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.cells().iter().zip(b.cells()) {
        inter += (x && y) as u64;
        union += (x || y) as u64;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// One-pixel boundary: foreground cells with a background 4-neighbour.
/// Cells outside the image count as background.
pub fn boundary_map(mask: &Raster) -> Raster {
    let (w, h) = (mask.width(), mask.height());
    Raster::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && (x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1))
    })
}

/// Dilation with a disk of the given radius (`dx² + dy² <= r²`).
pub fn dilate(mask: &Raster, radius: u32) -> Raster {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = Raster::zeros(mask.width(), mask.height());
    for (x, y) in mask.foreground() {
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < w && ny < h {
                out.set(nx as u32, ny as u32, true);
            }
        }
    }
    out
}

/// Dilation radius in pixels: `round(ratio * diagonal)`.
pub fn boundary_radius(width: u32, height: u32, tolerance_ratio: f64) -> u32 {
    let diag = ((width as f64).powi(2) + (height as f64).powi(2)).sqrt();
    (tolerance_ratio * diag).round() as u32
}

/// Boundary F-measure between a prediction and ground truth.
///
/// Both empty scores 1.0; exactly one empty scores 0.0.
pub fn boundary_f(pred: &BitMask, gt: &BitMask, tolerance_ratio: f64) -> Result<f64, MaskError> {
    raster_boundary_f(&pred.raster(), &gt.raster(), tolerance_ratio)
}

pub(crate) fn raster_boundary_f(
    pred: &Raster,
    gt: &Raster,
    tolerance_ratio: f64,
) -> Result<f64, MaskError> {
    pred.same_size(gt)?;
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let radius = boundary_radius(pred.width(), pred.height(), tolerance_ratio);
    let pred_b = boundary_map(pred);
    let gt_b = boundary_map(gt);
    let precision = covered_fraction(&pred_b, &dilate(&gt_b, radius));
    let recall = covered_fraction(&gt_b, &dilate(&pred_b, radius));
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

fn covered_fraction(boundary: &Raster, cover: &Raster) -> f64 {
    let (mut hit, mut total) = (0u64, 0u64);
    for (&b, &c) in boundary.cells().iter().zip(cover.cells()) {
        total += b as u64;
        hit += (b && c) as u64;
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = rect(8, 8, 1, 1, 4, 4);
        let b = rect(8, 8, 6, 6, 7, 7);
        assert_eq!(raster_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(raster_iou(&a, &b).unwrap(), 0.0);
        assert_eq!(
            raster_iou(&Raster::zeros(3, 3), &Raster::zeros(3, 3)).unwrap(),
            1.0
        );
        assert_eq!(raster_iou(&Raster::zeros(8, 8), &a).unwrap(), 0.0);
    }

    #[test]
    fn iou_columns_vs_rows() {
        // hand count: intersection 4 pixels, union 12
        let cols = rect(4, 4, 0, 0, 1, 3);
        let rows = rect(4, 4, 0, 0, 3, 1);
        let iou = mask_iou(&BitMask::from_raster(&cols), &BitMask::from_raster(&rows)).unwrap();
        assert!((iou - 4.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn iou_dimension_mismatch() {
        assert!(matches!(
            raster_iou(&Raster::zeros(3, 3), &Raster::zeros(3, 4)),
            Err(MaskError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn boundary_identity_and_empty() {
        let a = BitMask::from_raster(&rect(20, 20, 3, 4, 12, 15));
        assert_eq!(boundary_f(&a, &a, 0.008).unwrap(), 1.0);
        assert_eq!(boundary_f(&BitMask::empty(20, 20), &a, 0.008).unwrap(), 0.0);
        assert_eq!(boundary_f(&a, &BitMask::empty(20, 20), 0.008).unwrap(), 0.0);
        let e = BitMask::empty(20, 20);
        assert_eq!(boundary_f(&e, &e, 0.008).unwrap(), 1.0);
    }

    #[test]
    fn boundary_of_square_is_its_ring() {
        let b = boundary_map(&rect(10, 10, 2, 2, 6, 6));
        assert_eq!(b.area(), 16);
        assert!(!b.get(4, 4));
        assert!(b.get(2, 4));
    }

    #[test]
    fn shifted_square_within_tolerance() {
        let gt = BitMask::from_raster(&rect(32, 32, 11, 11, 20, 20));
        let pred = BitMask::from_raster(&rect(32, 32, 12, 11, 21, 20));
        let ratio = 2.0 / (32f64 * 2f64.sqrt());
        assert_eq!(boundary_radius(32, 32, ratio), 2);
        assert_eq!(boundary_f(&pred, &gt, ratio).unwrap(), 1.0);
        // radius 0 at the default ratio on a 32x32 image: the shifted
        // vertical edges no longer match
        assert_eq!(boundary_radius(32, 32, 0.008), 0);
        assert!(boundary_f(&pred, &gt, 0.008).unwrap() < 1.0);
    }

    #[test]
    fn dilation_radius_one_is_plus_shape() {
        let mut r = Raster::zeros(5, 5);
        r.set(2, 2, true);
        let d = dilate(&r, 1);
        assert_eq!(d.area(), 5);
        assert!(d.get(2, 1) && d.get(1, 2) && !d.get(1, 1));
    }

    fn raster(n: u32) -> impl Strategy<Value = Raster> {
        proptest::collection::vec(any::<bool>(), (n * n) as usize)
            .prop_map(move |c| Raster::from_cells(n, n, c).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_monotone(a in raster(8), b in raster(8), extra in 0u32..64) {
            let ab = raster_iou(&a, &b).unwrap();
            prop_assert_eq!(ab, raster_iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            // adding a pixel to both masks never lowers IoU
            let (x, y) = (extra % 8, extra / 8);
            let (mut a2, mut b2) = (a.clone(), b.clone());
            a2.set(x, y, true);
            b2.set(x, y, true);
            prop_assert!(raster_iou(&a2, &b2).unwrap() >= ab - 1e-12);
        }

        #[test]
        fn boundary_f_symmetric(a in raster(10), b in raster(10), ratio in 0.01f64..0.3) {
            let ab = raster_boundary_f(&a, &b, ratio).unwrap();
            prop_assert_eq!(ab, raster_boundary_f(&b, &a, ratio).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(raster_boundary_f(&a, &a, ratio).unwrap(), 1.0);
        }
    }
}
