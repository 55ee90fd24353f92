//! Iterative spatio-temporal pruning.
//!
//! Each iteration overlays the remaining candidates on frames sampled from
//! the current temporal scope and asks for one verdict per candidate.
//! Accepted tracks join the output, rejected ones are dropped, uncertain
//! ones carry forward and the scope shrinks to the frames where they exist.
//! The last allowed iteration offers only accept/reject; anything still
//! uncertain after it is accepted.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::appearance::candidate_list;
use crate::frames::encode_png;
use crate::mask::{merge_tracks, render_overlay, Palette};
use crate::model::{
    MaskTrack, ModelError, Query, RunState, TemporalScope, TrackId, Verdict, VerdictState, VideoRef,
};
use crate::pipeline::{AgentContext, PipelineError};
use crate::reasoner::{
    ask_json, parse_verdicts, AskError, Bindings, ChatRequest, EncodedImage, FrameMarks,
    RequestContext, TemplateId,
};

/// Up to `n` evenly spaced members of `scope`: positions
/// `round(i·(len−1)/(n−1))` of the sorted list, deduplicated.
pub fn sample_frames(scope: &TemporalScope, n: usize) -> Result<Vec<usize>, ModelError> {
    let frames = scope.frames();
    if frames.is_empty() {
        return Err(ModelError::EmptyScope);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if frames.len() <= n {
        return Ok(frames.to_vec());
    }
    if n == 1 {
        return Ok(vec![frames[0]]);
    }
    let (span, steps) = (frames.len() - 1, n - 1);
    let mut out: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        // integer round-half-up of i*span/steps
        let pos = (2 * i * span + steps) / (2 * steps);
        if out.last() != Some(&frames[pos]) {
            out.push(frames[pos]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneIterationRecord {
    pub iteration: usize,
    pub binary: bool,
    pub sampled_frames: Vec<usize>,
    pub verdicts: BTreeMap<TrackId, Verdict>,
    pub scope_before: TemporalScope,
    pub scope_after: TemporalScope,
    pub candidates_before: BTreeSet<TrackId>,
    pub candidates_after: BTreeSet<TrackId>,
    /// Set when the reply could not be parsed; every candidate stayed uncertain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
}

fn describe_appearance(candidates: &[MaskTrack], appearance: &BTreeMap<TrackId, String>) -> String {
    candidates
        .iter()
        .filter_map(|t| {
            appearance
                .get(&t.track_id)
                .map(|d| format!("Object {}: {d}", t.track_id))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn frame_list(frames: &[usize]) -> String {
    let list: Vec<String> = frames.iter().map(usize::to_string).collect();
    format!("frames {}", list.join(", "))
}

/// Builds the selection request for the current candidates on `sampled`.
pub fn selection_request(
    ctx: &AgentContext<'_>,
    state: &RunState,
    video: &VideoRef,
    query: &Query,
    sampled: &[usize],
    binary: bool,
) -> Result<ChatRequest, PipelineError> {
    let palette = Palette::default();
    let rendered: Vec<(FrameMarks, EncodedImage)> = sampled
        .par_iter()
        .map(|&t| {
            let marks: Vec<(TrackId, crate::mask::BitMask)> = state
                .candidates
                .iter()
                .filter_map(|c| c.mask_at(t).map(|m| (c.track_id, m.clone())))
                .collect();
            let refs: Vec<_> = marks.iter().map(|(id, m)| (*id, m)).collect();
            let frame = ctx.frames.frame(video, t)?;
            let overlay = render_overlay(&frame, &refs, &palette, ctx.config.overlay_alpha);
            Ok((
                FrameMarks { frame: t, marks },
                EncodedImage::png(encode_png(&overlay)?),
            ))
        })
        .collect::<Result<_, PipelineError>>()?;

    let appearance = describe_appearance(&state.candidates, &state.appearance);
    let concepts = if state.selected_concepts.is_empty() {
        "none".to_string()
    } else {
        state.selected_concepts.join(", ")
    };
    let mut b = Bindings::new();
    b.insert("query".into(), query.text.as_str().into());
    b.insert("concepts".into(), concepts.into());
    b.insert("frame_list".into(), frame_list(sampled).into());
    b.insert(
        "candidate_list".into(),
        candidate_list(&state.candidates).into(),
    );
    b.insert("has_appearance".into(), (!appearance.is_empty()).into());
    b.insert("appearance".into(), appearance.into());
    b.insert("binary".into(), binary.into());
    let prompt = ctx.templates.render(TemplateId::Select, &b)?;

    let mut images = Vec::with_capacity(rendered.len());
    let mut marks = Vec::with_capacity(rendered.len());
    for (m, img) in rendered {
        images.push((format!("Frame {}:", m.frame), img));
        marks.push(m);
    }
    Ok(ChatRequest::with_images(
        TemplateId::Select,
        prompt,
        images,
        ctx.config.temperature,
        ctx.config.max_output_tokens,
        RequestContext {
            video_id: video.video_id.clone(),
            query: query.text.clone(),
            round: state.iteration,
            binary,
            marks,
        },
    ))
}

/// Applies verdicts to `state`: accepted and rejected tracks leave the
/// candidate set, the scope is recomputed from what remains. In binary mode
/// uncertain verdicts count as accepted.
pub fn apply_verdicts(
    state: &mut RunState,
    verdicts: &mut BTreeMap<TrackId, Verdict>,
    binary: bool,
) {
    for track in std::mem::take(&mut state.candidates) {
        let verdict = verdicts
            .entry(track.track_id)
            .or_insert_with(|| Verdict::uncertain("no verdict"));
        if binary && verdict.state == VerdictState::Uncertain {
            verdict.state = VerdictState::Accepted;
        }
        match verdict.state {
            VerdictState::Accepted => state.accepted.push(track),
            VerdictState::Rejected => state.rejected.push(track),
            VerdictState::Uncertain => state.candidates.push(track),
        }
    }
    state.refresh_scope();
    state.iteration += 1;
}

/// One pruning iteration on a non-empty candidate set.
pub fn prune_iteration(
    ctx: &AgentContext<'_>,
    mut state: RunState,
    video: &VideoRef,
    query: &Query,
    binary: bool,
) -> Result<(RunState, PruneIterationRecord), PipelineError> {
    let sampled = sample_frames(&state.scope, ctx.config.num_frames)?;
    let request = selection_request(ctx, &state, video, query, &sampled, binary)?;
    let expected: BTreeSet<TrackId> = state.candidate_ids().into_iter().collect();
    let (mut verdicts, parse_error) =
        match ask_json(ctx.reasoner, &request, |t| parse_verdicts(t, &expected)) {
            Ok(resp) => (resp.verdicts, None),
            Err(AskError::Parse(e)) => {
                log::warn!(
                    "{}: unparseable verdicts at iteration {}: {e}",
                    video.video_id,
                    state.iteration
                );
                let all = expected
                    .iter()
                    .map(|id| (*id, Verdict::uncertain("unparseable reply")))
                    .collect();
                (all, Some(e.to_string()))
            }
            Err(AskError::Backend(e)) => return Err(e.into()),
        };
    let scope_before = state.scope.clone();
    let iteration = state.iteration;
    apply_verdicts(&mut state, &mut verdicts, binary);
    let record = PruneIterationRecord {
        iteration,
        binary,
        sampled_frames: sampled,
        verdicts,
        scope_before,
        scope_after: state.scope.clone(),
        candidates_before: expected,
        candidates_after: state.candidate_ids().into_iter().collect(),
        parse_error,
    };
    Ok((state, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruningOutcome {
    /// Union of accepted tracks over the full video.
    pub prediction: MaskTrack,
    pub records: Vec<PruneIterationRecord>,
    pub accepted_ids: BTreeSet<TrackId>,
    pub rejected_ids: BTreeSet<TrackId>,
}

/// Prunes until no candidate is uncertain or the iteration budget is
/// spent. An empty pool yields an all-empty prediction without any call.
pub fn run_pruning(
    ctx: &AgentContext<'_>,
    video: &VideoRef,
    query: &Query,
    candidates: Vec<MaskTrack>,
    selected_concepts: Vec<String>,
    appearance: BTreeMap<TrackId, String>,
) -> Result<PruningOutcome, PipelineError> {
    let max_iters = ctx.config.max_prune_iters;
    let mut state = RunState::for_pruning(candidates, selected_concepts, appearance);
    let mut records = Vec::new();
    while !state.candidates.is_empty() && state.iteration < max_iters {
        let binary = state.iteration + 1 == max_iters;
        let (next, record) = prune_iteration(ctx, state, video, query, binary)?;
        state = next;
        records.push(record);
    }
    let prediction = merge_tracks(
        &state.accepted,
        video.num_frames(),
        video.width,
        video.height,
    );
    Ok(PruningOutcome {
        prediction,
        records,
        accepted_ids: state.accepted.iter().map(|t| t.track_id).collect(),
        rejected_ids: state.rejected.iter().map(|t| t.track_id).collect(),
    })
}
