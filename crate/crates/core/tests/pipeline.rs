//! End-to-end behaviour of one expression through the engine, driven by
//! simulated worlds and scripted reasoner replies.

mod common;

use std::sync::Arc;

use common::worlds::{object, world, Recording};
use serde_json::json;
use trackprune::perception::{SimPerception, SimWorld};
use trackprune::reasoner::{Judge, ScriptReply, ScriptRule, ScriptedReasoner, TemplateId};
use trackprune::{
    Engine, ExpressionOutcome, MaskTrack, PipelineConfig, PipelineError, Query, QueryType, TrackId,
    VideoRef,
};

const T: usize = 40;

struct Rig {
    engine: Engine,
    reasoner: Arc<Recording<ScriptedReasoner>>,
    video: VideoRef,
    world: Arc<SimWorld>,
}

impl Rig {
    fn new(world: SimWorld, rules: Vec<ScriptRule>, config: PipelineConfig) -> Self {
        let sim = Arc::new(SimPerception::new([world.clone()]).unwrap());
        let reasoner = Arc::new(Recording::new(ScriptedReasoner::new(rules)));
        let engine = Engine::new(reasoner.clone(), sim.clone(), sim, config).unwrap();
        Rig {
            engine,
            reasoner,
            video: world.video_ref(),
            world: Arc::new(world),
        }
    }

    fn run(&self, query: &str) -> Result<ExpressionOutcome, PipelineError> {
        self.engine
            .run_expression(&self.video, &Query::new(query).unwrap())
    }

    fn prompts(&self, template: TemplateId) -> Vec<String> {
        self.reasoner
            .requests()
            .into_iter()
            .filter(|r| r.template == template)
            .map(|r| {
                r.messages
                    .iter()
                    .map(|m| m.text())
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .collect()
    }
}

fn concepts(query_type: &str, pairs: &[(&str, &str)]) -> String {
    let pairs: Vec<_> = pairs
        .iter()
        .map(|(c, b)| json!({"core": c, "broad": b}))
        .collect();
    json!({"query_type": query_type, "concept_pairs": pairs}).to_string()
}

fn rule(template: TemplateId, reply: ScriptReply) -> ScriptRule {
    ScriptRule::new(template, ".*", reply).unwrap()
}

fn fixed(template: TemplateId, text: String) -> ScriptRule {
    rule(template, ScriptReply::Fixed(text))
}

fn not_required() -> ScriptRule {
    fixed(
        TemplateId::AppearanceRequirement,
        json!({"required": false}).to_string(),
    )
}

/// Frame-by-frame equality, absent frames counting as empty.
fn assert_same(pred: &MaskTrack, gt: &MaskTrack, frames: usize) {
    for t in 0..frames {
        let a = pred
            .mask_at(t)
            .map(|m| m.raster().foreground().collect::<Vec<_>>())
            .unwrap_or_default();
        let b = gt
            .mask_at(t)
            .map(|m| m.raster().foreground().collect::<Vec<_>>())
            .unwrap_or_default();
        assert_eq!(a, b, "frame {t}");
    }
}

fn paper_ball_world() -> SimWorld {
    world(
        "paper",
        T,
        vec![
            object(1, &["ball", "toy"], "crumpled white ball", 0, 0..T, T),
            object(2, &["cup", "container"], "blue cup", 2, 5..30, T),
        ],
    )
}

fn paper_ball_rules(rig_world: &Arc<SimWorld>, rounds: Vec<String>) -> Vec<ScriptRule> {
    vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("paper", "sheet")]),
        ),
        rule(TemplateId::Reasoning, ScriptReply::PerRound(rounds)),
        not_required(),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(rig_world.clone(), [1])),
        ),
    ]
}

#[test]
fn extraction_retries_until_segmentation_finds_something() {
    let w = paper_ball_world();
    let arc = Arc::new(w.clone());
    let rounds = vec![
        String::new(),
        concepts("reasoning", &[("crumpled paper", "trash")]),
        concepts("reasoning", &[("ball", "toy")]),
    ];
    let rig = Rig::new(w, paper_ball_rules(&arc, rounds), PipelineConfig::default());
    let out = rig.run("the crumpled paper ball").unwrap();

    assert_eq!(out.trace.k_used, 3);
    assert_eq!(out.trace.failures.len(), 2);
    assert_eq!(out.trace.failures[0][0].core, "paper");
    assert_eq!(out.trace.failures[1][0].core, "crumpled paper");
    assert_eq!(out.trace.query_type, QueryType::Referring);
    assert_eq!(out.trace.num_candidates, 1);
    assert!(!out.trace.empty_prediction);
    assert_eq!(out.trace.selected_concepts, vec!["ball".to_string()]);
    assert_same(&out.prediction, &rig.world.ground_truth(&[1]), T);

    // Retry prompts carry the accumulated failures and the sampled frames.
    let prompts = rig.prompts(TemplateId::Reasoning);
    assert_eq!(prompts.len(), 2);
    assert!(prompts[0].contains("(paper, sheet)"), "{}", prompts[0]);
    assert!(!prompts[0].contains("(crumpled paper, trash)"));
    assert!(
        prompts[1].contains("(paper, sheet)") && prompts[1].contains("(crumpled paper, trash)")
    );
    for req in rig
        .reasoner
        .requests()
        .iter()
        .filter(|r| r.template == TemplateId::Reasoning)
    {
        assert_eq!(req.image_count(), PipelineConfig::default().num_frames);
    }
    let referring = rig
        .reasoner
        .requests()
        .into_iter()
        .find(|r| r.template == TemplateId::Referring)
        .unwrap();
    assert_eq!(referring.image_count(), 0);
}

#[test]
fn exhausted_extraction_yields_a_flagged_empty_prediction() {
    let w = paper_ball_world();
    let arc = Arc::new(w.clone());
    let rounds = vec![
        String::new(),
        concepts("reasoning", &[("crumpled paper", "trash")]),
        concepts("reasoning", &[("wad", "litter")]),
    ];
    let rig = Rig::new(w, paper_ball_rules(&arc, rounds), PipelineConfig::default());
    let out = rig.run("the crumpled paper ball").unwrap();
    assert_eq!(out.trace.k_used, 3);
    assert_eq!(out.trace.failures.len(), 3);
    assert_eq!(out.trace.num_candidates, 0);
    assert!(out.trace.empty_prediction);
    assert!(out.prediction.is_empty());
    assert!(out.trace.pruning.is_empty());
    assert!(rig.prompts(TemplateId::Select).is_empty());
    assert!(rig.prompts(TemplateId::AppearanceRequirement).is_empty());
}

#[test]
fn fewer_extraction_rounds_means_earlier_give_up() {
    let w = paper_ball_world();
    let arc = Arc::new(w.clone());
    let rounds = vec![
        String::new(),
        concepts("reasoning", &[("crumpled paper", "trash")]),
        concepts("reasoning", &[("ball", "toy")]),
    ];
    let mut found = Vec::new();
    for k in 1..=3 {
        let config = PipelineConfig {
            max_extract_iters: k,
            ..Default::default()
        };
        let rig = Rig::new(w.clone(), paper_ball_rules(&arc, rounds.clone()), config);
        let out = rig.run("the crumpled paper ball").unwrap();
        assert_eq!(out.trace.k_used, k);
        found.push(!out.trace.empty_prediction);
    }
    assert_eq!(found, vec![false, false, true]);
}

#[test]
fn unparseable_first_reply_counts_as_a_failed_round() {
    let w = paper_ball_world();
    let arc = Arc::new(w.clone());
    let rules = vec![
        fixed(TemplateId::Referring, "I am not sure what you mean.".into()),
        rule(
            TemplateId::Reasoning,
            ScriptReply::PerRound(vec![
                String::new(),
                concepts("reasoning", &[("ball", "toy")]),
            ]),
        ),
        not_required(),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [1])),
        ),
    ];
    let rig = Rig::new(w, rules, PipelineConfig::default());
    let out = rig.run("that thing").unwrap();
    assert_eq!(out.trace.k_used, 2);
    assert_eq!(out.trace.failures, vec![Vec::new()]);
    assert!(out.trace.extraction[0].parse_error.is_some());
    assert_eq!(out.trace.query_type, QueryType::Reasoning);
    // the malformed reply was re-asked once
    assert_eq!(rig.prompts(TemplateId::Referring).len(), 2);
    assert_same(&out.prediction, &arc.ground_truth(&[1]), T);
}

#[test]
fn broad_concept_wins_when_it_finds_more() {
    let w = world(
        "pets",
        T,
        vec![
            object(1, &["dog", "animal"], "brown dog", 0, 0..T, T),
            object(2, &["cat", "animal"], "grey cat", 2, 0..T, T),
            object(3, &["horse", "animal"], "white horse", 3, 10..20, T),
        ],
    );
    let arc = Arc::new(w.clone());
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("dog", "animal")]),
        ),
        not_required(),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [1])),
        ),
    ];
    let rig = Rig::new(w, rules, PipelineConfig::default());
    let out = rig.run("the dog").unwrap();
    let sel = &out.trace.extraction[0].selections[0];
    assert_eq!((sel.core_count, sel.broad_count), (T, 2 * T + 10));
    assert_eq!(sel.selected, "animal");
    assert_eq!(out.trace.num_candidates, 3);
    assert_eq!(out.trace.selected_concepts, vec!["animal".to_string()]);
    assert_same(&out.prediction, &arc.ground_truth(&[1]), T);
    assert_eq!(out.trace.rejected.len(), 2);
}

#[test]
fn tie_between_core_and_broad_keeps_core() {
    let w = world(
        "cars",
        T,
        vec![
            object(1, &["car", "vehicle"], "red car", 0, 0..T, T),
            object(2, &["car", "vehicle"], "blue car", 2, 0..T, T),
        ],
    );
    let arc = Arc::new(w.clone());
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("car", "vehicle")]),
        ),
        not_required(),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [2])),
        ),
    ];
    let rig = Rig::new(w, rules, PipelineConfig::default());
    let out = rig.run("the blue car").unwrap();
    let sel = &out.trace.extraction[0].selections[0];
    assert_eq!(sel.core_count, sel.broad_count);
    assert_eq!(sel.selected, "car");
    assert_same(&out.prediction, &arc.ground_truth(&[2]), T);
}

#[test]
fn appearance_descriptions_reach_the_selection_prompt() {
    let w = world(
        "cars",
        T,
        vec![
            object(1, &["car", "vehicle"], "red car", 0, 0..T, T),
            object(2, &["car", "vehicle"], "blue car", 2, 0..T, T),
        ],
    );
    let arc = Arc::new(w.clone());
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("car", "vehicle")]),
        ),
        fixed(
            TemplateId::AppearanceRequirement,
            json!({"required": true}).to_string(),
        ),
        rule(
            TemplateId::AppearanceRetrieval,
            ScriptReply::Judge(Judge::new(arc.clone(), [1])),
        ),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [1])),
        ),
    ];
    let rig = Rig::new(w, rules, PipelineConfig::default());
    let out = rig.run("the red car").unwrap();
    assert!(out.trace.appearance_required);
    assert_eq!(out.trace.appearance.len(), 2);
    assert_eq!(out.trace.appearance[&TrackId(0)], "red car");
    assert_eq!(out.trace.appearance[&TrackId(1)], "blue car");

    let retrieval: Vec<_> = rig
        .reasoner
        .requests()
        .into_iter()
        .filter(|r| r.template == TemplateId::AppearanceRetrieval)
        .collect();
    assert_eq!(retrieval.len(), 1);
    assert_eq!(retrieval[0].image_count(), 2);
    let select = &rig.prompts(TemplateId::Select)[0];
    assert!(
        select.contains("red car") && select.contains("blue car"),
        "{select}"
    );
    assert_same(&out.prediction, &arc.ground_truth(&[1]), T);
}

#[test]
fn appearance_failures_do_not_stop_the_pipeline() {
    let w = world(
        "cars",
        T,
        vec![object(1, &["car", "vehicle"], "red car", 0, 0..T, T)],
    );
    let arc = Arc::new(w.clone());
    // no retrieval rule: the description call fails
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("car", "vehicle")]),
        ),
        fixed(
            TemplateId::AppearanceRequirement,
            json!({"required": true}).to_string(),
        ),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [1])),
        ),
    ];
    let rig = Rig::new(w.clone(), rules, PipelineConfig::default());
    let out = rig.run("the red car").unwrap();
    assert!(out.trace.appearance_required);
    assert!(out.trace.appearance.is_empty());
    assert!(!rig.prompts(TemplateId::Select)[0].contains("unmasked crops"));
    assert_same(&out.prediction, &arc.ground_truth(&[1]), T);

    // nor does an unanswerable requirement check
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("car", "vehicle")]),
        ),
        fixed(TemplateId::AppearanceRequirement, "maybe?".into()),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [1])),
        ),
    ];
    let rig = Rig::new(w, rules, PipelineConfig::default());
    let out = rig.run("the red car").unwrap();
    assert!(!out.trace.appearance_required);
    assert!(rig.prompts(TemplateId::AppearanceRetrieval).is_empty());
}

#[test]
fn brief_object_survives_extraction_and_pruning() {
    let w = world(
        "birds",
        60,
        vec![
            object(1, &["car", "vehicle"], "car", 0, 0..60, 60),
            object(2, &["bird", "animal"], "small bird", 2, 31..33, 60),
            object(3, &["dog", "animal"], "dog", 3, 0..60, 60),
        ],
    );
    let arc = Arc::new(w.clone());
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("bird", "animal")]),
        ),
        not_required(),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [2])),
        ),
    ];
    let rig = Rig::new(w, rules, PipelineConfig::default());
    let out = rig.run("the bird that flies past").unwrap();
    assert_same(&out.prediction, &arc.ground_truth(&[2]), 60);
    assert_eq!(out.prediction.existence().frames(), &[31, 32]);
}

#[test]
fn single_pruning_iteration_is_binary() {
    let w = world(
        "pets",
        T,
        vec![
            object(1, &["dog", "animal"], "dog", 0, 0..T, T),
            object(2, &["dog", "animal"], "dog", 2, 0..T, T),
        ],
    );
    let arc = Arc::new(w.clone());
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("dog", "animal")]),
        ),
        not_required(),
        rule(
            TemplateId::Select,
            ScriptReply::Judge(Judge::new(arc.clone(), [2])),
        ),
    ];
    let config = PipelineConfig {
        max_prune_iters: 1,
        ..Default::default()
    };
    let rig = Rig::new(w, rules, config);
    let out = rig.run("the second dog").unwrap();
    assert_eq!(out.trace.pruning.len(), 1);
    assert!(out.trace.pruning[0].binary);
    assert!(rig.prompts(TemplateId::Select)[0].contains("final round"));
}

#[test]
fn reasoner_outage_during_pruning_is_an_error() {
    let w = world(
        "cars",
        T,
        vec![object(1, &["car", "vehicle"], "red car", 0, 0..T, T)],
    );
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("car", "vehicle")]),
        ),
        not_required(),
    ];
    let rig = Rig::new(w, rules, PipelineConfig::default());
    let err = rig.run("the red car").unwrap_err();
    assert!(matches!(err, PipelineError::Backend(_)), "{err:?}");
}

#[test]
fn garbled_verdicts_leave_candidates_uncertain_until_the_final_round() {
    let w = world(
        "pets",
        T,
        vec![
            object(1, &["dog", "animal"], "dog", 0, 0..T, T),
            object(2, &["dog", "animal"], "dog", 2, 0..20, T),
        ],
    );
    let arc = Arc::new(w.clone());
    let judge = ScriptReply::Judge(Judge::new(arc.clone(), [1]));
    let select = |r: usize| {
        if r < 2 {
            "no idea".to_string()
        } else {
            String::new()
        }
    };
    let rules = vec![
        fixed(
            TemplateId::Referring,
            concepts("referring", &[("dog", "animal")]),
        ),
        not_required(),
        // rounds 0 and 1 unparseable (even after the re-ask); round 2 judged
        ScriptRule::new(
            TemplateId::Select,
            ".*",
            ScriptReply::PerRound(vec![select(0), select(1)]),
        )
        .unwrap(),
    ];
    let sim = Arc::new(SimPerception::new([(*arc).clone()]).unwrap());
    let scripted = ScriptedReasoner::new(rules);
    // the judge answers only the binary round
    struct FinalJudge(ScriptedReasoner, ScriptedReasoner);
    impl trackprune::reasoner::Reasoner for FinalJudge {
        fn complete(
            &self,
            r: &trackprune::reasoner::ChatRequest,
        ) -> Result<String, trackprune::backend::BackendError> {
            if r.template == TemplateId::Select && r.context.binary {
                self.1.complete(r)
            } else {
                self.0.complete(r)
            }
        }
    }
    let final_judge = ScriptedReasoner::new(vec![rule(TemplateId::Select, judge)]);
    let engine = Engine::new(
        Arc::new(FinalJudge(scripted, final_judge)),
        sim.clone(),
        sim,
        PipelineConfig::default(),
    )
    .unwrap();
    let out = engine
        .run_expression(&w.video_ref(), &Query::new("the dog").unwrap())
        .unwrap();
    let recs = &out.trace.pruning;
    assert_eq!(recs.len(), 3);
    assert!(recs[0].parse_error.is_some() && recs[1].parse_error.is_some());
    assert_eq!(recs[0].candidates_after, recs[0].candidates_before);
    assert!(recs[2].binary && recs[2].parse_error.is_none());
    assert_same(&out.prediction, &arc.ground_truth(&[1]), T);
}
