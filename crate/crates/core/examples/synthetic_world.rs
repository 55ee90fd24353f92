//! Generates a small synthetic benchmark and prints what is in it: the
//! moving objects of each world and the expressions that refer to them.
//!
//! cargo run --example synthetic_world [-- OUT_DIR]

use std::path::PathBuf;

use trackprune::bench::{generate, BenchOptions, Benchmark, DistractorMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bench = generate(&BenchOptions {
        seed: 4,
        videos: 3,
        frames: 40,
        distractors: DistractorMode::Clear,
        ..Default::default()
    });

    for world in &bench.worlds {
        println!(
            "{} ({}x{}, {} frames)",
            world.video_id, world.width, world.height, world.duration
        );
        for o in &world.objects {
            let life = o.lifetime();
            let labels: Vec<_> = o.concept_labels.iter().cloned().collect();
            println!(
                "  object {:>2}  frames {:>2}..{:<2} ({:>2} on screen)  {:<28} {}",
                o.object_id,
                life.first().unwrap_or(&0),
                life.last().map_or(0, |t| t + 1),
                life.len(),
                labels.join(", "),
                o.appearance
            );
        }
        for e in bench
            .script
            .expressions
            .iter()
            .filter(|e| e.video_id == world.video_id)
        {
            println!(
                "  [{:?}] \"{}\" -> objects {:?}",
                e.query_type, e.query, e.targets
            );
        }
    }

    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trackprune-bench"));
    bench.write(&out)?;
    assert_eq!(Benchmark::load(&out)?, bench);
    println!(
        "written to {} (meta.json, frames/, annotations/, worlds/, oracle.json)",
        out.display()
    );
    Ok(())
}
