//! Learning analytics over student–assistant chat transcripts.
//!
//! Raw events pass through the privacy filter, are grouped into sessions,
//! labelled against a help-seeking taxonomy, scanned for risk patterns and
//! summarized into per-session reports that roll up into class views.

pub mod analytics;
pub mod classify;
pub mod config;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod privacy;
pub mod reflect;
pub mod risk;
pub mod store;
pub mod synth;
pub mod text;
pub mod timefmt;

pub use model::{
    Author, CategoryDistribution, LabelBackend, LoggingPolicy, Message, PromptLabel, Role, Session,
    TaxonomyConfig,
};
