//! Appearance tool: when the query hinges on colour or texture (which mask
//! overlays obscure), describe each candidate from unmasked reference crops.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::frames::encode_png;
use crate::mask::{make_reference_image, ReferenceImage};
use crate::model::{MaskTrack, Query, TrackId, VideoRef};
use crate::pipeline::{AgentContext, PipelineError};
use crate::reasoner::{
    ask_json, parse_descriptions, parse_required, Bindings, ChatRequest, EncodedImage, FrameMarks,
    RequestContext, TemplateId,
};

/// `Object <id> (<concept>)`, one per line.
pub fn candidate_list(candidates: &[MaskTrack]) -> String {
    candidates
        .iter()
        .map(|t| format!("Object {} ({})", t.track_id, t.concept))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Whether the query needs appearance evidence. Any failure answers
/// `false`: the tool is skipped rather than failing the expression.
pub fn appearance_required(ctx: &AgentContext<'_>, query: &Query, video: &VideoRef) -> bool {
    let run = || -> Result<bool, PipelineError> {
        let mut b = Bindings::new();
        b.insert("query".into(), query.text.as_str().into());
        let prompt = ctx
            .templates
            .render(TemplateId::AppearanceRequirement, &b)?;
        let req = ChatRequest::with_images(
            TemplateId::AppearanceRequirement,
            prompt,
            Vec::new(),
            ctx.config.temperature,
            ctx.config.max_output_tokens,
            RequestContext {
                video_id: video.video_id.clone(),
                query: query.text.clone(),
                ..Default::default()
            },
        );
        Ok(ask_json(ctx.reasoner, &req, parse_required)?)
    };
    run().unwrap_or_else(|e| {
        log::warn!(
            "{}: appearance requirement check failed, skipping tool: {e}",
            video.video_id
        );
        false
    })
}

/// Reference image for every candidate, in candidate order.
pub fn reference_images(
    ctx: &AgentContext<'_>,
    video: &VideoRef,
    candidates: &[MaskTrack],
) -> Result<Vec<ReferenceImage>, PipelineError> {
    candidates
        .par_iter()
        .map(|track| {
            make_reference_image(track, ctx.config.reference_pad_factor, |t| {
                ctx.frames.frame(video, t).map_err(PipelineError::from)
            })
        })
        .collect()
}

/// One short description per candidate, from a single reasoner call over
/// all reference images. Failures yield an empty map.
pub fn describe_candidates(
    ctx: &AgentContext<'_>,
    query: &Query,
    video: &VideoRef,
    candidates: &[MaskTrack],
) -> BTreeMap<TrackId, String> {
    if candidates.is_empty() {
        return BTreeMap::new();
    }
    let run = || -> Result<BTreeMap<TrackId, String>, PipelineError> {
        let refs = reference_images(ctx, video, candidates)?;
        let mut images = Vec::with_capacity(refs.len());
        let mut marks = Vec::with_capacity(refs.len());
        for (track, r) in candidates.iter().zip(&refs) {
            images.push((
                format!("Object {}:", track.track_id),
                EncodedImage::png(encode_png(&r.image)?),
            ));
            marks.push(FrameMarks {
                frame: r.frame,
                marks: vec![(track.track_id, track.masks[&r.frame].clone())],
            });
        }
        let mut b = Bindings::new();
        b.insert("query".into(), query.text.as_str().into());
        b.insert("candidate_list".into(), candidate_list(candidates).into());
        let prompt = ctx.templates.render(TemplateId::AppearanceRetrieval, &b)?;
        let req = ChatRequest::with_images(
            TemplateId::AppearanceRetrieval,
            prompt,
            images,
            ctx.config.temperature,
            ctx.config.max_output_tokens,
            RequestContext {
                video_id: video.video_id.clone(),
                query: query.text.clone(),
                marks,
                ..Default::default()
            },
        );
        let mut map = ask_json(ctx.reasoner, &req, parse_descriptions)?;
        map.retain(|id, _| candidates.iter().any(|t| t.track_id == *id));
        Ok(map)
    };
    run().unwrap_or_else(|e| {
        log::warn!(
            "{}: appearance description failed, continuing without it: {e}",
            video.video_id
        );
        BTreeMap::new()
    })
}
