//! Sweeps the two loop budgets on generated benchmarks: pruning rounds on
//! a benchmark whose distractors are identifiable only on a two-frame
//! window, and extraction rounds on one where the first concept guesses
//! for some queries find nothing.
//!
//! cargo run --release --example ablation_sweep

use std::sync::Arc;

use trackprune::bench::{generate, BenchOptions, Benchmark, DistractorMode};
use trackprune::eval::{eval_expression, Summary};
use trackprune::reasoner::ScriptedReasoner;
use trackprune::{Engine, PipelineConfig, Query};

fn score(bench: &Benchmark, config: PipelineConfig) -> Result<Summary, Box<dyn std::error::Error>> {
    let sim = Arc::new(bench.perception()?);
    let reasoner = Arc::new(ScriptedReasoner::from_script(&bench.script, &sim)?);
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
        let pred = engine
            .run_expression(&world.video_ref(), &query)?
            .prediction;
        let gt = world.ground_truth(&e.targets);
        results.push(eval_expression(
            &pred,
            &gt,
            world.duration,
            world.width,
            world.height,
            tolerance,
        )?);
    }
    Ok(Summary::of(&results).expect("expressions"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let opts = BenchOptions {
        seed: 1,
        ..Default::default()
    };
    let subtle = generate(&BenchOptions {
        distractors: DistractorMode::Subtle,
        ..opts.clone()
    });
    println!("max_prune_iters   J&F    (subtle distractors)");
    for r in 1..=3 {
        let s = score(
            &subtle,
            PipelineConfig {
                max_prune_iters: r,
                ..Default::default()
            },
        )?;
        println!("{r:>15}  {:5.1}", 100.0 * s.jf);
    }

    let clear = generate(&opts);
    println!("\nmax_extract_iters  J&F   empty%");
    for k in 1..=3 {
        let s = score(
            &clear,
            PipelineConfig {
                max_extract_iters: k,
                ..Default::default()
            },
        )?;
        println!("{k:>17}  {:5.1}  {:5.1}", 100.0 * s.jf, s.empty_mask_ratio);
    }
    Ok(())
}
