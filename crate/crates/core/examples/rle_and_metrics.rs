//! Column-major RLE, region similarity J and boundary F on two small masks.
//!
//! cargo run --example rle_and_metrics

use trackprune::eval::eval_expression;
use trackprune::mask::{
    boundary_f, boundary_map, boundary_radius, mask_iou, rle_decode, rle_encode, BitMask, Raster,
};
use trackprune::{MaskTrack, TrackId};

fn show(r: &Raster) {
    for y in 0..r.height() {
        let row: String = (0..r.width())
            .map(|x| if r.get(x, y) { '#' } else { '.' })
            .collect();
        println!("  {row}");
    }
}

fn main() {
    let gt = Raster::from_fn(12, 8, |x, y| (2..=8).contains(&x) && (2..=5).contains(&y));
    let pred = Raster::from_fn(12, 8, |x, y| (3..=9).contains(&x) && (2..=6).contains(&y));
    println!("ground truth:");
    show(&gt);
    println!("prediction:");
    show(&pred);

    let rle = rle_encode(&gt);
    println!("rle size {:?} counts {:?}", rle.size, rle.counts);
    println!("json: {}", serde_json::to_string(&rle).unwrap());
    assert_eq!(rle_decode(&rle).unwrap(), gt);

    println!("boundary of the ground truth:");
    show(&boundary_map(&gt));

    let (g, p) = (BitMask::from_raster(&gt), BitMask::from_raster(&pred));
    println!("IoU = {:.4}", mask_iou(&p, &g).unwrap());
    for ratio in [0.008, 0.05, 0.1] {
        println!(
            "F at tolerance {ratio} (radius {} px) = {:.4}",
            boundary_radius(12, 8, ratio),
            boundary_f(&p, &g, ratio).unwrap()
        );
    }

    // the mask above on frame 0 of a 2-frame clip, nothing on frame 1
    let track = |m: &BitMask| MaskTrack::new(TrackId(0), "x").with_mask(0, m.clone());
    let r = eval_expression(&track(&p), &track(&g), 2, 12, 8, 0.008).unwrap();
    println!(
        "over two frames: J {:.4}  F {:.4}  J&F {:.4}",
        r.j, r.f, r.jf
    );
}
