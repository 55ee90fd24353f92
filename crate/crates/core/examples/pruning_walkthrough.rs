//! Iterative pruning over three "dog" tracks. A puppy that leaves early is
//! rejected on sight; the two dogs that remain can only be told apart on
//! frame 35, which the first round does not sample. Once the puppy is gone
//! the temporal scope shrinks to the frames the open candidates occupy and
//! the second round lands on the deciding frame.
//!
//! cargo run --example pruning_walkthrough

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use trackprune::perception::{Placement, Shape, SimObject, SimPerception, SimWorld};
use trackprune::pruning::run_pruning;
use trackprune::reasoner::{Judge, ScriptReply, ScriptRule, ScriptedReasoner, TemplateId};
use trackprune::{Engine, PipelineConfig, Query};

fn dog(id: u32, lane: u32, frames: std::ops::Range<usize>) -> SimObject {
    SimObject {
        object_id: id,
        concept_labels: BTreeSet::from(["dog".to_string()]),
        color: [150 + 30 * id as u8, 100, 60],
        appearance: format!("dog {id}"),
        placements: (0..48)
            .map(|t| {
                frames.contains(&t).then(|| {
                    let x0 = (2 * t as u32) % 60;
                    Placement {
                        shape: Shape::Rect,
                        x0,
                        y0: 4 + 14 * lane,
                        x1: x0 + 14,
                        y1: 14 + 14 * lane,
                    }
                })
            })
            .collect(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = SimWorld {
        video_id: "park".into(),
        width: 80,
        height: 48,
        duration: 48,
        background: [60, 120, 60],
        objects: vec![dog(1, 0, 16..48), dog(2, 1, 16..48), dog(3, 2, 0..16)],
        seed: 0,
    };
    // dog 2 is mid-jump only on frame 35
    let mut judge = Judge::new(Arc::new(world.clone()), [2]);
    judge.evidence = BTreeMap::from([(1, BTreeSet::from([35])), (2, BTreeSet::from([35]))]);
    let reasoner = ScriptedReasoner::new(vec![ScriptRule::new(
        TemplateId::Select,
        ".*",
        ScriptReply::Judge(judge),
    )?]);

    let sim = Arc::new(SimPerception::new([world.clone()])?);
    let config = PipelineConfig {
        num_frames: 6,
        ..Default::default()
    };
    let engine = Engine::new(Arc::new(reasoner), sim.clone(), sim, config)?;
    let candidates = world.segment("dog");
    let query = Query::new("the dog that jumps over the fence")?;
    let out = run_pruning(
        &engine.context(),
        &world.video_ref(),
        &query,
        candidates,
        vec!["dog".into()],
        BTreeMap::new(),
    )?;

    for rec in &out.records {
        println!(
            "iteration {}{}: scope {} frames ({}..={}), sampled {:?}",
            rec.iteration,
            if rec.binary {
                " (final, accept/reject only)"
            } else {
                ""
            },
            rec.scope_before.len(),
            rec.scope_before.frames().first().unwrap(),
            rec.scope_before.frames().last().unwrap(),
            rec.sampled_frames
        );
        for (id, v) in &rec.verdicts {
            println!("    track {id}: {:?} ({})", v.state, v.rationale);
        }
        println!("    still open: {:?}", rec.candidates_after);
    }
    println!(
        "accepted {:?}, rejected {:?}",
        out.accepted_ids, out.rejected_ids
    );
    println!(
        "prediction covers {} frames",
        out.prediction.existence().len()
    );
    Ok(())
}
