//! Candidate generation with retries. The scripted reasoner proposes two
//! concept pairs that match nothing in the video before landing on one
//! that does; each failed round is fed back into the next prompt.
//!
//! cargo run --example concept_extraction

use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::json;
use trackprune::extraction::{candidate_generation_loop, format_failures};
use trackprune::perception::{Placement, Shape, SimObject, SimPerception, SimWorld};
use trackprune::reasoner::{ScriptReply, ScriptRule, ScriptedReasoner, TemplateId};
use trackprune::{Engine, PipelineConfig, Query};

fn concepts(query_type: &str, core: &str, broad: &str) -> String {
    json!({"query_type": query_type, "concept_pairs": [{"core": core, "broad": broad}]}).to_string()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ball = |id: u32, labels: &[&str], y0: u32| SimObject {
        object_id: id,
        concept_labels: labels
            .iter()
            .map(|s| s.to_string())
            .collect::<BTreeSet<_>>(),
        color: [220, 220, 200],
        appearance: labels[0].to_string(),
        placements: (0..20)
            .map(|t| {
                Some(Placement {
                    shape: Shape::Ellipse,
                    x0: 2 + 2 * t,
                    y0,
                    x1: 12 + 2 * t,
                    y1: y0 + 10,
                })
            })
            .collect(),
    };
    let world = SimWorld {
        video_id: "office".into(),
        width: 64,
        height: 48,
        duration: 20,
        background: [40, 40, 60],
        objects: vec![ball(1, &["ball", "toy"], 6), ball(2, &["mug", "cup"], 30)],
        seed: 0,
    };

    let reasoner = ScriptedReasoner::new(vec![
        ScriptRule::new(
            TemplateId::Referring,
            ".*",
            ScriptReply::Fixed(concepts("reasoning", "paper", "sheet")),
        )?,
        ScriptRule::new(
            TemplateId::Reasoning,
            ".*",
            ScriptReply::PerRound(vec![
                concepts("reasoning", "paper", "sheet"),
                concepts("reasoning", "crumpled paper", "trash"),
                concepts("reasoning", "ball", "toy"),
            ]),
        )?,
    ]);
    let sim = Arc::new(SimPerception::new([world.clone()])?);
    let engine = Engine::new(
        Arc::new(reasoner),
        sim.clone(),
        sim,
        PipelineConfig::default(),
    )?;

    let query = Query::new("what someone threw into the wastebasket")?;
    let outcome = candidate_generation_loop(&engine.context(), &query, &world.video_ref())?;
    for round in &outcome.rounds {
        for s in &round.selections {
            println!(
                "round {}: ({}, {}) core {} detections, broad {} -> \"{}\", {} track(s)",
                round.k,
                s.pair.core,
                s.pair.broad,
                s.core_count,
                s.broad_count,
                s.selected,
                s.tracks
            );
        }
    }
    println!(
        "failure set sent with the last retry:\n{}",
        format_failures(&outcome.failures)
    );
    println!(
        "{} round(s) used, {} candidate(s) for {:?}",
        outcome.rounds_used,
        outcome.tracks.len(),
        outcome.selected_concepts
    );
    Ok(())
}
