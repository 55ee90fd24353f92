//! Training-free referring video object segmentation.
//!
//! The engine turns a natural-language query into per-frame binary masks by
//! chaining three stages around two pluggable backends:
//!
//! 1. **Candidate generation** ([`extraction`]): a reasoning model extracts
//!    `(core, broad)` concept pairs from the query, a concept-segmentation
//!    model turns each concept into mask tracks, and failed concepts are fed
//!    back for a bounded number of retries.
//! 2. **Appearance tool** ([`appearance`]): optional short descriptions of
//!    each candidate built from two-panel reference crops.
//! 3. **Spatio-temporal pruning** ([`pruning`]): candidates are overlaid on
//!    frames sampled from the current temporal scope and classified as
//!    accepted, rejected or uncertain until nothing uncertain remains.
//!
//! Backends are traits ([`perception::Perception`], [`reasoner::Reasoner`])
//! with HTTP clients for real model servers and deterministic simulated
//! implementations ([`perception::sim`], [`reasoner::scripted`]) used by the
//! synthetic benchmark in [`bench`]. The [`eval`] module computes J, F, J&F
//! and the empty-mask ratio over MeViS-style datasets.

pub mod appearance;
pub mod backend;
pub mod bench;
pub mod cli;
pub mod eval;
pub mod extraction;
pub mod frames;
pub mod mask;
pub mod model;
pub mod perception;
pub mod pipeline;
pub mod pruning;
pub mod reasoner;

pub use model::{
    ConceptPair, MaskTrack, PipelineConfig, Query, QueryType, RunState, TemporalScope, TrackId,
    Verdict, VerdictState, VideoRef,
};
pub use pipeline::{Engine, ExpressionOutcome, PipelineError};
