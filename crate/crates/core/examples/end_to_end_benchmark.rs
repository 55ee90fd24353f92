//! The whole engine against a generated benchmark, entirely in memory:
//! scripted reasoner, simulated segmentation, J/F scoring per expression.
//! The `trackprune simulate | run | eval` commands do the same through
//! files on disk.
//!
//! cargo run --release --example end_to_end_benchmark [-- SEED]

use std::sync::Arc;

use trackprune::bench::{generate, BenchOptions};
use trackprune::eval::{eval_expression, EvalResult, Summary};
use trackprune::reasoner::ScriptedReasoner;
use trackprune::{Engine, PipelineConfig, Query};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(1);
    let bench = generate(&BenchOptions {
        seed,
        videos: 4,
        ..Default::default()
    });
    let sim = Arc::new(bench.perception()?);
    let reasoner = Arc::new(ScriptedReasoner::from_script(&bench.script, &sim)?);
    let config = PipelineConfig::default();
    let tolerance = config.boundary_tolerance_ratio;
    let engine = Engine::new(reasoner, sim.clone(), sim, config)?;

    let mut results = Vec::new();
    for e in &bench.script.expressions {
        let world = bench
            .worlds
            .iter()
            .find(|w| w.video_id == e.video_id)
            .unwrap();
        let query = Query::new(&e.query)?;
        let out = engine.run_expression(&world.video_ref(), &query)?;
        let gt = world.ground_truth(&e.targets);
        let r: EvalResult = eval_expression(
            &out.prediction,
            &gt,
            world.duration,
            world.width,
            world.height,
            tolerance,
        )?;
        println!(
            "{}/{}  {:<34} k={} r={} cand={} -> J {:.3} F {:.3}",
            e.video_id,
            e.expression_id,
            format!("\"{}\"", e.query),
            out.trace.k_used,
            out.trace.pruning.len(),
            out.trace.num_candidates,
            r.j,
            r.f
        );
        results.push(r);
    }
    let s = Summary::of(&results).expect("at least one expression");
    println!(
        "{} expressions: J {:.1}  F {:.1}  J&F {:.1}  empty {:.1}%",
        s.count,
        100.0 * s.j,
        100.0 * s.f,
        100.0 * s.jf,
        s.empty_mask_ratio
    );
    Ok(())
}
