//! Event-driven generative text pipeline.
//!
//! Scoring events flow through a partitioned [`bus`], are congruency-checked
//! against live feeds ([`ontology`]), rendered into engineered prompts
//! ([`prompt`]), turned into raw text by a pluggable [`generator`], fact-checked
//! and corrected ([`postprocess`]) and finally stored and published through a
//! CDN-fronted [`store`]. The [`slots`] module covers the batch/online split used
//! for personalized fill-in-the-blank sentences, and [`metrics`] holds the
//! evaluation suite. [`pipeline`] wires everything together.

pub mod bus;
pub mod clock;
pub mod hash;
pub mod metrics;
pub mod model;
pub mod ontology;
pub mod pipeline;
pub mod postprocess;
pub mod prompt;
pub mod slots;
pub mod store;
pub mod text;

pub mod generator;

pub use model::{
    ContentState, EngineeredPrompt, Exemplar, GeneratedContent, GroundTruthFeeds, PersonRecord,
    Priority, PromptDraft, PronounClass, Property, ScoringEvent,
};
