//! Candidate generation: concept extraction with a failure-set retry loop,
//! core/broad selection and track pooling.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::frames::encode_png;
use crate::mask::mask_iou;
use crate::model::{ConceptPair, MaskTrack, Query, QueryType, TrackId, VideoRef};
use crate::perception::{count_detections, Perception};
use crate::pipeline::{AgentContext, PipelineError};
use crate::pruning::sample_frames;
use crate::reasoner::{
    ask_json, parse_concepts, Bindings, ChatRequest, ConceptResponse, EncodedImage, RequestContext,
    TemplateId,
};

fn frame_list(frames: &[usize]) -> String {
    let list: Vec<String> = frames.iter().map(usize::to_string).collect();
    format!("frames {}", list.join(", "))
}

/// Failure set rendered for the reasoning prompt, one round per line.
pub fn format_failures(fail: &[Vec<ConceptPair>]) -> String {
    fail.iter()
        .enumerate()
        .map(|(i, pairs)| {
            let body = if pairs.is_empty() {
                "no usable concepts".to_string()
            } else {
                pairs
                    .iter()
                    .map(ConceptPair::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            format!("- attempt {}: {body}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One extraction round. At `k = 0` the query is classified from text
/// alone; reasoning queries and every retry consult sampled video frames
/// together with the failure set. Pairs already present in `fail` are
/// dropped from the reply.
pub fn extract_concepts(
    ctx: &AgentContext<'_>,
    query: &Query,
    video: &VideoRef,
    k: usize,
    fail: &[Vec<ConceptPair>],
) -> Result<ConceptResponse, PipelineError> {
    let config = ctx.config;
    let base_context = RequestContext {
        video_id: video.video_id.clone(),
        query: query.text.clone(),
        round: k,
        ..Default::default()
    };
    let mut query_type = query.query_type;
    if k == 0 {
        let mut b = Bindings::new();
        b.insert("query".into(), query.text.as_str().into());
        let prompt = ctx.templates.render(TemplateId::Referring, &b)?;
        let req = ChatRequest::with_images(
            TemplateId::Referring,
            prompt,
            Vec::new(),
            config.temperature,
            config.max_output_tokens,
            base_context.clone(),
        );
        let resp = ask_json(ctx.reasoner, &req, parse_concepts)?;
        if resp.query_type == QueryType::Referring {
            return Ok(resp);
        }
        query_type = QueryType::Reasoning;
    }

    let sampled = sample_frames(&video.full_scope(), config.num_frames)?;
    let mut images = Vec::with_capacity(sampled.len());
    for &t in &sampled {
        let png = encode_png(&ctx.frames.frame(video, t)?)?;
        images.push((format!("Frame {t}:"), EncodedImage::png(png)));
    }
    let mut b = Bindings::new();
    b.insert("query".into(), query.text.as_str().into());
    b.insert("num_frames".into(), sampled.len().to_string().into());
    b.insert("frame_list".into(), frame_list(&sampled).into());
    b.insert("has_failures".into(), (!fail.is_empty()).into());
    b.insert("failed_pairs".into(), format_failures(fail).into());
    let prompt = ctx.templates.render(TemplateId::Reasoning, &b)?;
    let req = ChatRequest::with_images(
        TemplateId::Reasoning,
        prompt,
        images,
        config.temperature,
        config.max_output_tokens,
        base_context,
    );
    let resp = ask_json(ctx.reasoner, &req, parse_concepts)?;
    let tried: BTreeSet<&ConceptPair> = fail.iter().flatten().collect();
    let mut seen = BTreeSet::new();
    let pairs = resp
        .pairs
        .into_iter()
        .filter(|p| !tried.contains(p) && seen.insert(p.clone()))
        .collect();
    if query_type == QueryType::Unknown {
        query_type = resp.query_type;
    }
    Ok(ConceptResponse { query_type, pairs })
}

/// Outcome of segmenting one concept pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSelection {
    pub pair: ConceptPair,
    pub core_count: usize,
    pub broad_count: usize,
    pub selected: String,
    pub tracks: usize,
}

/// Tracks pooled from a list of concept pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidatePool {
    /// Ids dense from 0.
    pub tracks: Vec<MaskTrack>,
    pub selected_concepts: Vec<String>,
    pub selections: Vec<PairSelection>,
}

/// The more productive concept of a pair by frame-summed detections; ties
/// go to the core concept.
pub fn select_concept(
    pair: &ConceptPair,
    core: Vec<MaskTrack>,
    broad: Vec<MaskTrack>,
) -> (&str, Vec<MaskTrack>, usize, usize) {
    let (nc, nb) = (count_detections(&core), count_detections(&broad));
    if nb > nc {
        (&pair.broad, broad, nc, nb)
    } else {
        (&pair.core, core, nc, nb)
    }
}

fn mean_shared_iou(a: &MaskTrack, b: &MaskTrack) -> Option<f64> {
    let ea = a.existence();
    let shared: Vec<usize> = b
        .existence()
        .frames()
        .iter()
        .copied()
        .filter(|t| ea.contains(*t))
        .collect();
    if shared.is_empty() {
        return None;
    }
    let sum: f64 = shared
        .iter()
        .map(|&t| {
            mask_iou(a.mask_at(t).expect("exists"), b.mask_at(t).expect("exists")).unwrap_or(0.0)
        })
        .sum();
    Some(sum / shared.len() as f64)
}

/// Segments every pair (core and broad concurrently), keeps the selected
/// concept's tracks and pools them. Tracks from a later pair that duplicate
/// an earlier pair's track (mean IoU over shared frames above the
/// threshold) are dropped.
pub fn generate_candidates(
    ctx: &AgentContext<'_>,
    video: &VideoRef,
    pairs: &[ConceptPair],
) -> Result<CandidatePool, PipelineError> {
    let perception: &dyn Perception = ctx.perception;
    let mut pool = CandidatePool::default();
    for pair in pairs {
        let (core, broad) = std::thread::scope(|s| {
            let broad = s.spawn(|| perception.segment_concept(video, &pair.broad));
            let core = perception.segment_concept(video, &pair.core);
            (core, broad.join().expect("segmentation thread panicked"))
        });
        let keep_nonempty =
            |v: Vec<MaskTrack>| v.into_iter().filter(|t| !t.is_empty()).collect::<Vec<_>>();
        let (concept, tracks, nc, nb) =
            select_concept(pair, keep_nonempty(core?), keep_nonempty(broad?));
        let earlier = pool.tracks.len();
        let mut added = 0;
        for track in tracks {
            let duplicate = pool.tracks[..earlier].iter().any(|p| {
                mean_shared_iou(p, &track).is_some_and(|iou| iou > ctx.config.dedup_iou_threshold)
            });
            if duplicate {
                log::debug!("dropping duplicate track for concept {concept:?}");
                continue;
            }
            pool.tracks.push(track);
            added += 1;
        }
        pool.selections.push(PairSelection {
            pair: pair.clone(),
            core_count: nc,
            broad_count: nb,
            selected: concept.to_string(),
            tracks: added,
        });
        if nc + nb > 0 {
            pool.selected_concepts.push(concept.to_string());
        }
    }
    for (i, t) in pool.tracks.iter_mut().enumerate() {
        t.track_id = TrackId(i as u32);
    }
    Ok(pool)
}

/// Record of one extraction round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRound {
    pub k: usize,
    pub pairs: Vec<ConceptPair>,
    pub selections: Vec<PairSelection>,
    /// Set when the reply could not be parsed even after the re-ask.
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOutcome {
    pub tracks: Vec<MaskTrack>,
    pub selected_concepts: Vec<String>,
    pub query_type: QueryType,
    /// Extraction rounds executed.
    pub rounds_used: usize,
    pub failures: Vec<Vec<ConceptPair>>,
    pub rounds: Vec<ExtractionRound>,
}

impl CandidateOutcome {
    /// No candidate survived every round.
    pub fn exhausted(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Extract → segment until the pool is non-empty or the round budget is
/// spent. Each empty round appends its pairs to the failure set.
pub fn candidate_generation_loop(
    ctx: &AgentContext<'_>,
    query: &Query,
    video: &VideoRef,
) -> Result<CandidateOutcome, PipelineError> {
    let mut query = query.clone();
    let mut failures: Vec<Vec<ConceptPair>> = Vec::new();
    let mut rounds = Vec::new();
    for k in 0..ctx.config.max_extract_iters {
        let resp = match extract_concepts(ctx, &query, video, k, &failures) {
            Ok(r) => r,
            Err(PipelineError::Parse(e)) => {
                log::warn!(
                    "{}: concept extraction round {k} unparseable: {e}",
                    video.video_id
                );
                if k == 0 {
                    query.query_type = QueryType::Reasoning;
                }
                failures.push(Vec::new());
                rounds.push(ExtractionRound {
                    k,
                    pairs: Vec::new(),
                    selections: Vec::new(),
                    parse_error: Some(e.to_string()),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        if k == 0 {
            query.query_type = resp.query_type;
        }
        let pool = generate_candidates(ctx, video, &resp.pairs)?;
        rounds.push(ExtractionRound {
            k,
            pairs: resp.pairs.clone(),
            selections: pool.selections.clone(),
            parse_error: None,
        });
        if !pool.tracks.is_empty() {
            return Ok(CandidateOutcome {
                tracks: pool.tracks,
                selected_concepts: pool.selected_concepts,
                query_type: query.query_type,
                rounds_used: k + 1,
                failures,
                rounds,
            });
        }
        failures.push(resp.pairs);
    }
    Ok(CandidateOutcome {
        tracks: Vec::new(),
        selected_concepts: Vec::new(),
        query_type: query.query_type,
        rounds_used: ctx.config.max_extract_iters,
        failures,
        rounds,
    })
}
