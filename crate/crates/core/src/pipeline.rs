//! Per-expression orchestration: candidate generation, the optional
//! appearance tool, then pruning.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::appearance::{appearance_required, describe_candidates};
use crate::backend::BackendError;
use crate::extraction::{candidate_generation_loop, ExtractionRound};
use crate::frames::{FrameError, FrameSource};
use crate::mask::MaskError;
use crate::model::{
    ConceptPair, MaskTrack, ModelError, PipelineConfig, Query, QueryType, TrackId, VideoRef,
};
use crate::perception::Perception;
use crate::pruning::{run_pruning, PruneIterationRecord};
use crate::reasoner::{AskError, ParseError, PromptError, Reasoner, TemplateSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable model reply: {0}")]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

impl From<AskError> for PipelineError {
    fn from(e: AskError) -> Self {
        match e {
            AskError::Parse(p) => PipelineError::Parse(p),
            AskError::Backend(b) => PipelineError::Backend(b),
        }
    }
}

/// Borrowed view of everything a stage needs.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub reasoner: &'a dyn Reasoner,
    pub perception: &'a dyn Perception,
    pub frames: &'a dyn FrameSource,
    pub templates: &'a TemplateSet,
    pub config: &'a PipelineConfig,
}

/// Everything that happened to one expression, written as `trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionTrace {
    pub video_id: String,
    pub query: String,
    pub query_type: QueryType,
    /// Extraction rounds executed.
    pub k_used: usize,
    pub failures: Vec<Vec<ConceptPair>>,
    pub extraction: Vec<ExtractionRound>,
    pub selected_concepts: Vec<String>,
    pub num_candidates: usize,
    pub appearance_required: bool,
    pub appearance: BTreeMap<TrackId, String>,
    pub pruning: Vec<PruneIterationRecord>,
    pub accepted: BTreeSet<TrackId>,
    pub rejected: BTreeSet<TrackId>,
    pub empty_prediction: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionOutcome {
    /// One mask per video frame.
    pub prediction: MaskTrack,
    pub trace: ExpressionTrace,
}

/// The full engine with shared backends. Cheap to share across threads.
#[derive(Clone)]
pub struct Engine {
    reasoner: Arc<dyn Reasoner>,
    perception: Arc<dyn Perception>,
    frames: Arc<dyn FrameSource>,
    templates: TemplateSet,
    config: PipelineConfig,
}

impl Engine {
    pub fn new(
        reasoner: Arc<dyn Reasoner>,
        perception: Arc<dyn Perception>,
        frames: Arc<dyn FrameSource>,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            reasoner,
            perception,
            frames,
            templates: TemplateSet::builtin(),
            config,
        })
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn context(&self) -> AgentContext<'_> {
        AgentContext {
            reasoner: self.reasoner.as_ref(),
            perception: self.perception.as_ref(),
            frames: self.frames.as_ref(),
            templates: &self.templates,
            config: &self.config,
        }
    }

    pub fn run_expression(
        &self,
        video: &VideoRef,
        query: &Query,
    ) -> Result<ExpressionOutcome, PipelineError> {
        let ctx = self.context();
        let generated = candidate_generation_loop(&ctx, query, video)?;
        for track in &generated.tracks {
            track.validate(video)?;
        }
        let mut query = query.clone();
        query.query_type = generated.query_type;

        let (required, appearance) = if generated.tracks.is_empty() {
            (false, BTreeMap::new())
        } else if appearance_required(&ctx, &query, video) {
            (
                true,
                describe_candidates(&ctx, &query, video, &generated.tracks),
            )
        } else {
            (false, BTreeMap::new())
        };

        let num_candidates = generated.tracks.len();
        let pruned = run_pruning(
            &ctx,
            video,
            &query,
            generated.tracks,
            generated.selected_concepts.clone(),
            appearance.clone(),
        )?;
        let empty_prediction = pruned.prediction.is_empty();
        if generated.rounds_used == self.config.max_extract_iters && num_candidates == 0 {
            log::info!(
                "{}: no candidates after {} extraction rounds",
                video.video_id,
                generated.rounds_used
            );
        }
        Ok(ExpressionOutcome {
            prediction: pruned.prediction,
            trace: ExpressionTrace {
                video_id: video.video_id.clone(),
                query: query.text,
                query_type: generated.query_type,
                k_used: generated.rounds_used,
                failures: generated.failures,
                extraction: generated.rounds,
                selected_concepts: generated.selected_concepts,
                num_candidates,
                appearance_required: required,
                appearance,
                pruning: pruned.records,
                accepted: pruned.accepted_ids,
                rejected: pruned.rejected_ids,
                empty_prediction,
            },
        })
    }
}
