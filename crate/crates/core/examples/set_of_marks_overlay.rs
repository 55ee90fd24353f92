//! Draws candidate tracks onto a frame with numbered marks, and builds the
//! two-panel reference crop used to describe a candidate.
//!
//! cargo run --example set_of_marks_overlay [-- OUT_DIR]

use std::collections::BTreeSet;
use std::path::PathBuf;

use trackprune::frames::FrameSource;
use trackprune::mask::{largest_area_frame, reference_panels, render_overlay, Palette};
use trackprune::perception::{Placement, Shape, SimObject, SimPerception, SimWorld};

fn object(
    id: u32,
    label: &str,
    color: [u8; 3],
    shape: Shape,
    x0: u32,
    y0: u32,
    size: u32,
) -> SimObject {
    SimObject {
        object_id: id,
        concept_labels: BTreeSet::from([label.to_string(), "animal".to_string()]),
        color,
        appearance: format!("a {label}"),
        placements: (0..8)
            .map(|t| {
                let x = x0 + 4 * t;
                Some(Placement {
                    shape,
                    x0: x,
                    y0,
                    x1: x + size,
                    y1: y0 + size,
                })
            })
            .collect(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trackprune-overlay"));
    std::fs::create_dir_all(&out)?;

    let world = SimWorld {
        video_id: "zoo".into(),
        width: 160,
        height: 96,
        duration: 8,
        background: [30, 60, 30],
        objects: vec![
            object(1, "cat", [200, 120, 40], Shape::Ellipse, 4, 10, 24),
            object(2, "dog", [120, 90, 60], Shape::Rect, 10, 50, 30),
            object(3, "bird", [230, 230, 80], Shape::Ellipse, 60, 8, 12),
        ],
        seed: 3,
    };
    let sim = SimPerception::new([world.clone()])?;
    let video = world.video_ref();
    let tracks = world.segment("animal");
    println!("{} candidate tracks for \"animal\"", tracks.len());

    let t = 5;
    let frame = sim.frame(&video, t)?;
    let marks: Vec<_> = tracks
        .iter()
        .filter_map(|c| c.mask_at(t).map(|m| (c.track_id, m)))
        .collect();
    let overlay = render_overlay(&frame, &marks, &Palette::default(), 0.5);
    frame.save(out.join("frame.png"))?;
    overlay.save(out.join("overlay.png"))?;

    for track in &tracks {
        let Some(best) = largest_area_frame(track) else {
            continue;
        };
        let mask = track.masks[&best].raster();
        let panels =
            reference_panels(&sim.frame(&video, best)?, best, &mask, 2.0).expect("non-empty mask");
        let name = format!("reference_{}.png", track.track_id);
        panels.image.save(out.join(&name))?;
        println!(
            "track {}: largest on frame {}, bbox {:?}, loose crop {:?} -> {name}",
            track.track_id, panels.frame, panels.bbox, panels.loose
        );
    }
    println!("images written to {}", out.display());
    Ok(())
}
