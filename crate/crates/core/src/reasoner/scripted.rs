//! Deterministic stand-in for the reasoning model.
//!
//! Rules are matched in order on (template, video, query regex). A
//! [`Judge`] answers selection and description requests from the simulated
//! world, identifying each marked candidate by its best IoU against the
//! world's objects on the marked frames.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    serialize_verdicts, ChatRequest, FrameMarks, Reasoner, RequestContext, TemplateId,
    VerdictResponse,
};
use crate::backend::BackendError;
use crate::mask::raster_iou;
use crate::model::{ConceptPair, QueryType, TrackId, Verdict, VerdictState};
use crate::perception::{SimPerception, SimWorld};

/// Ground-truth knowledge about one expression.
#[derive(Debug, Clone)]
pub struct Judge {
    pub world: Arc<SimWorld>,
    /// Object ids the expression refers to.
    pub targets: BTreeSet<u32>,
    /// Frames on which an object's identity (target or not) is visible.
    /// Objects without an entry are decidable on every frame they appear.
    pub evidence: BTreeMap<u32, BTreeSet<usize>>,
}

impl Judge {
    pub fn new(world: Arc<SimWorld>, targets: impl IntoIterator<Item = u32>) -> Self {
        Self {
            world,
            targets: targets.into_iter().collect(),
            evidence: BTreeMap::new(),
        }
    }

    /// World object behind each marked candidate.
    pub fn identify(&self, marks: &[FrameMarks]) -> BTreeMap<TrackId, Option<u32>> {
        let mut scores: BTreeMap<TrackId, BTreeMap<u32, f64>> = BTreeMap::new();
        for fm in marks {
            for (id, mask) in fm.marks.iter() {
                let entry = scores.entry(*id).or_default();
                if mask.is_empty() {
                    continue;
                }
                let raster = mask.raster();
                for obj in &self.world.objects {
                    if let Some(gt) = self.world.object_raster(obj.object_id, fm.frame) {
                        let iou = raster_iou(&raster, &gt).unwrap_or(0.0);
                        if iou > 0.0 {
                            *entry.entry(obj.object_id).or_default() += iou;
                        }
                    }
                }
            }
        }
        scores
            .into_iter()
            .map(|(id, s)| {
                let best = s
                    .into_iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(obj, _)| obj);
                (id, best)
            })
            .collect()
    }

    fn decidable(&self, object: u32, frames: &BTreeSet<usize>) -> bool {
        match self.evidence.get(&object) {
            Some(ev) => !ev.is_disjoint(frames),
            None => !frames.is_empty(),
        }
    }

    pub fn verdicts(&self, ctx: &RequestContext) -> VerdictResponse {
        let identity = self.identify(&ctx.marks);
        let mut shown: BTreeMap<TrackId, BTreeSet<usize>> = BTreeMap::new();
        for fm in &ctx.marks {
            for (id, mask) in &fm.marks {
                let frames = shown.entry(*id).or_default();
                if !mask.is_empty() {
                    frames.insert(fm.frame);
                }
            }
        }
        let verdicts = identity
            .into_iter()
            .map(|(id, obj)| {
                let verdict = match obj {
                    None => Verdict::new(VerdictState::Rejected, "does not match any object"),
                    Some(obj) => {
                        let is_target = self.targets.contains(&obj);
                        if self.decidable(obj, &shown[&id]) {
                            if is_target {
                                Verdict::new(VerdictState::Accepted, "matches the query")
                            } else {
                                Verdict::new(VerdictState::Rejected, "a different object")
                            }
                        } else if ctx.binary {
                            Verdict::new(VerdictState::Accepted, "cannot rule it out")
                        } else {
                            Verdict::uncertain("not enough evidence in these frames")
                        }
                    }
                };
                (id, verdict)
            })
            .collect();
        VerdictResponse { verdicts }
    }

    pub fn descriptions(&self, ctx: &RequestContext) -> BTreeMap<TrackId, String> {
        self.identify(&ctx.marks)
            .into_iter()
            .filter_map(|(id, obj)| {
                let obj = self.world.object(obj?)?;
                let text = if obj.appearance.is_empty() {
                    obj.concept_labels
                        .iter()
                        .next()
                        .cloned()
                        .unwrap_or_default()
                } else {
                    obj.appearance.clone()
                };
                Some((id, text))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum ScriptReply {
    Fixed(String),
    /// Indexed by the request's round, clamped to the last entry.
    PerRound(Vec<String>),
    Judge(Judge),
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub template: TemplateId,
    pub video: Option<String>,
    pub pattern: Regex,
    pub reply: ScriptReply,
}

impl ScriptRule {
    /// `pattern` is matched against the query text.
    pub fn new(
        template: TemplateId,
        pattern: &str,
        reply: ScriptReply,
    ) -> Result<Self, regex::Error> {
        Ok(Self {
            template,
            video: None,
            pattern: Regex::new(pattern)?,
            reply,
        })
    }

    pub fn for_video(mut self, video_id: impl Into<String>) -> Self {
        self.video = Some(video_id.into());
        self
    }

    fn matches(&self, request: &ChatRequest) -> bool {
        self.template == request.template
            && self
                .video
                .as_deref()
                .is_none_or(|v| v == request.context.video_id)
            && self.pattern.is_match(&request.context.query)
    }

    fn answer(&self, ctx: &RequestContext) -> String {
        match &self.reply {
            ScriptReply::Fixed(s) => s.clone(),
            ScriptReply::PerRound(v) => v.get(ctx.round).or(v.last()).cloned().unwrap_or_default(),
            ScriptReply::Judge(judge) => match self.template {
                TemplateId::AppearanceRetrieval => {
                    let map: BTreeMap<String, String> = judge
                        .descriptions(ctx)
                        .into_iter()
                        .map(|(id, d)| (id.to_string(), d))
                        .collect();
                    serde_json::to_string(&map).expect("string map serializes")
                }
                _ => serialize_verdicts(&judge.verdicts(ctx)),
            },
        }
    }
}

/// Ground truth for one expression of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleExpression {
    pub video_id: String,
    pub expression_id: String,
    pub query: String,
    pub query_type: QueryType,
    /// Concept pairs proposed at each extraction round.
    pub rounds: Vec<Vec<ConceptPair>>,
    #[serde(default)]
    pub appearance_required: bool,
    pub targets: Vec<u32>,
    #[serde(default)]
    pub evidence: BTreeMap<u32, Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleScript {
    pub expressions: Vec<OracleExpression>,
}

#[derive(Debug, Default)]
pub struct ScriptedReasoner {
    rules: Vec<ScriptRule>,
    calls: AtomicUsize,
}

impl Clone for ScriptedReasoner {
    fn clone(&self) -> Self {
        Self {
            rules: self.rules.clone(),
            calls: AtomicUsize::new(self.calls()),
        }
    }
}

fn concepts_json(query_type: QueryType, pairs: &[ConceptPair]) -> String {
    let pairs: Vec<_> = pairs
        .iter()
        .map(|p| json!({"core": p.core, "broad": p.broad}))
        .collect();
    json!({"query_type": query_type.to_string(), "concept_pairs": pairs}).to_string()
}

impl ScriptedReasoner {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            rules,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn push(&mut self, rule: ScriptRule) {
        self.rules.push(rule);
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.push(rule);
        self
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Rules answering every template for every expression of `script`.
    /// Worlds are looked up by video id in `worlds`.
    pub fn from_script(
        script: &OracleScript,
        worlds: &SimPerception,
    ) -> Result<Self, BackendError> {
        let mut arcs: BTreeMap<String, Arc<SimWorld>> = BTreeMap::new();
        let mut rules = Vec::new();
        for exp in &script.expressions {
            let world = match arcs.get(&exp.video_id) {
                Some(w) => w.clone(),
                None => {
                    let w = worlds.world(&exp.video_id).ok_or_else(|| {
                        BackendError::Unavailable(format!(
                            "oracle script names unknown video `{}`",
                            exp.video_id
                        ))
                    })?;
                    let w = Arc::new(w.clone());
                    arcs.insert(exp.video_id.clone(), w.clone());
                    w
                }
            };
            let pattern = format!("^{}$", regex::escape(&exp.query));
            let rule = |template, reply| {
                ScriptRule::new(template, &pattern, reply)
                    .expect("escaped pattern is valid")
                    .for_video(&exp.video_id)
            };
            let first = match exp.query_type {
                QueryType::Reasoning => concepts_json(QueryType::Reasoning, &[]),
                _ => concepts_json(
                    QueryType::Referring,
                    exp.rounds.first().map(Vec::as_slice).unwrap_or_default(),
                ),
            };
            let per_round = exp
                .rounds
                .iter()
                .map(|r| concepts_json(QueryType::Reasoning, r))
                .collect();
            let mut judge = Judge::new(world, exp.targets.iter().copied());
            judge.evidence = exp
                .evidence
                .iter()
                .map(|(obj, frames)| (*obj, frames.iter().copied().collect()))
                .collect();
            rules.push(rule(TemplateId::Referring, ScriptReply::Fixed(first)));
            rules.push(rule(
                TemplateId::Reasoning,
                ScriptReply::PerRound(per_round),
            ));
            rules.push(rule(
                TemplateId::AppearanceRequirement,
                ScriptReply::Fixed(json!({"required": exp.appearance_required}).to_string()),
            ));
            rules.push(rule(
                TemplateId::AppearanceRetrieval,
                ScriptReply::Judge(judge.clone()),
            ));
            rules.push(rule(TemplateId::Select, ScriptReply::Judge(judge)));
        }
        Ok(Self::new(rules))
    }
}

impl Reasoner for ScriptedReasoner {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.rules
            .iter()
            .find(|r| r.matches(request))
            .map(|r| r.answer(&request.context))
            .ok_or_else(|| {
                BackendError::Unavailable(format!(
                    "no scripted reply for template {} on video `{}` with query {:?}",
                    request.template, request.context.video_id, request.context.query
                ))
            })
    }
}
