//! Prompt classification: a deterministic keyword heuristic, with an optional
//! external backend that falls back to the heuristic per message.

use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::model::{Author, LabelBackend, PromptLabel, Session, TaxonomyConfig, TaxonomyError};
use crate::text::normalize_prose;

const DEFAULT_TAXONOMY: &str = include_str!("../config/taxonomy.toml");

#[derive(Debug, Error)]
pub enum TaxonomyLoadError {
    #[error("cannot read taxonomy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse taxonomy file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] TaxonomyError),
}

pub fn parse_taxonomy(raw: &str) -> Result<TaxonomyConfig, TaxonomyLoadError> {
    let config: TaxonomyConfig = toml::from_str(raw)?;
    Ok(config.validated()?)
}

pub fn load_taxonomy(path: &Path) -> Result<TaxonomyConfig, TaxonomyLoadError> {
    parse_taxonomy(&std::fs::read_to_string(path)?)
}

/// The bundled taxonomy: planning, monitoring, optimization and a fallback.
pub fn default_taxonomy() -> TaxonomyConfig {
    parse_taxonomy(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
}

pub fn default_taxonomy_source() -> &'static str {
    DEFAULT_TAXONOMY
}

fn label_for(
    message_id: &str,
    taxonomy: &TaxonomyConfig,
    fine_idx: usize,
    confidence: f64,
    backend: LabelBackend,
) -> PromptLabel {
    let ft = &taxonomy.fine_types[fine_idx];
    PromptLabel {
        message_id: message_id.to_string(),
        fine_id: ft.fine_id.clone(),
        category_id: ft.category_id.clone(),
        confidence,
        backend,
    }
}

/// Number of rules of each fine type that occur in the normalized text.
pub fn rule_scores(text: &str, taxonomy: &TaxonomyConfig) -> Vec<usize> {
    let norm = normalize_prose(text);
    taxonomy
        .fine_types
        .iter()
        .map(|ft| ft.keyword_rules.iter().filter(|r| norm.contains(r.as_str())).count())
        .collect()
}

/// Labels one prompt with the fine type whose rules match most often.
pub fn classify_prompt(text: &str, taxonomy: &TaxonomyConfig) -> PromptLabel {
    classify_message("", text, taxonomy)
}

fn classify_message(message_id: &str, text: &str, taxonomy: &TaxonomyConfig) -> PromptLabel {
    let scores = rule_scores(text, taxonomy);
    let mut best: Option<(usize, usize)> = None;
    for (idx, &score) in scores.iter().enumerate() {
        if score >= 1 && best.is_none_or(|(_, b)| score > b) {
            best = Some((idx, score));
        }
    }
    match best {
        Some((idx, score)) => {
            let rules = taxonomy.fine_types[idx].keyword_rules.len().max(1);
            label_for(
                message_id,
                taxonomy,
                idx,
                score as f64 / rules as f64,
                LabelBackend::Heuristic,
            )
        }
        None => {
            let idx = taxonomy
                .fine_rank(&taxonomy.fallback().fine_id)
                .expect("fallback is part of the taxonomy");
            label_for(message_id, taxonomy, idx, 0.0, LabelBackend::Heuristic)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTypeDescriptor {
    pub fine_id: String,
    pub description: String,
}

/// Request sent to an external classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub text: String,
    pub fine_types: Vec<FineTypeDescriptor>,
}

impl ExternalRequest {
    pub fn new(text: &str, taxonomy: &TaxonomyConfig) -> Self {
        Self {
            text: text.to_string(),
            fine_types: taxonomy
                .fine_types
                .iter()
                .map(|f| FineTypeDescriptor {
                    fine_id: f.fine_id.clone(),
                    description: f.description.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalReply {
    pub fine_id: String,
    pub confidence: f64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("external classifier timed out")]
    Timeout,
    #[error("external classifier unavailable: {0}")]
    Transport(String),
    #[error("malformed reply: {0}")]
    Malformed(String),
}

pub trait ExternalClassifier: Send + Sync {
    fn classify(&self, request: &ExternalRequest) -> Result<ExternalReply, BackendError>;
}

/// JSON-over-HTTP classifier: POSTs an [`ExternalRequest`], expects an [`ExternalReply`].
pub struct HttpClassifier {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpClassifier {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl ExternalClassifier for HttpClassifier {
    fn classify(&self, request: &ExternalRequest) -> Result<ExternalReply, BackendError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => BackendError::Timeout,
                other => BackendError::Transport(other.to_string()),
            })?;
        resp.body_mut()
            .read_json::<ExternalReply>()
            .map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

/// Caps the number of concurrent external calls.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock");
        while *active >= self.max {
            active = self.freed.wait(active).expect("in-flight lock");
        }
        *active += 1;
        InFlightGuard { limit: self }
    }
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.limit.active.lock().expect("in-flight lock") -= 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Clone)]
pub enum ClassifierBackend {
    Heuristic,
    External {
        client: Arc<dyn ExternalClassifier>,
        max_retries: u32,
        limit: Arc<InFlightLimit>,
    },
}

impl std::fmt::Debug for ClassifierBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierBackend::Heuristic => f.write_str("Heuristic"),
            ClassifierBackend::External { max_retries, .. } => f
                .debug_struct("External")
                .field("max_retries", max_retries)
                .finish_non_exhaustive(),
        }
    }
}

impl ClassifierBackend {
    pub fn external(client: Arc<dyn ExternalClassifier>, max_retries: u32, in_flight: usize) -> Self {
        ClassifierBackend::External {
            client,
            max_retries,
            limit: Arc::new(InFlightLimit::new(in_flight)),
        }
    }
}

fn external_label(
    message_id: &str,
    text: &str,
    taxonomy: &TaxonomyConfig,
    client: &dyn ExternalClassifier,
    max_retries: u32,
    limit: &InFlightLimit,
) -> Result<PromptLabel, BackendError> {
    let request = ExternalRequest::new(text, taxonomy);
    let mut attempt = 0;
    let reply = loop {
        let result = {
            let _slot = limit.acquire();
            client.classify(&request)
        };
        match result {
            Ok(r) => break r,
            Err(e @ BackendError::Malformed(_)) => return Err(e),
            Err(e) if attempt >= max_retries => return Err(e),
            Err(_) => attempt += 1,
        }
    };
    let idx = taxonomy
        .fine_rank(&reply.fine_id)
        .ok_or_else(|| BackendError::Malformed(format!("unknown fine id `{}`", reply.fine_id)))?;
    if !(0.0..=1.0).contains(&reply.confidence) {
        return Err(BackendError::Malformed(format!(
            "confidence {} outside [0, 1]",
            reply.confidence
        )));
    }
    Ok(label_for(message_id, taxonomy, idx, reply.confidence, LabelBackend::External))
}

/// One label per student message, in message order. External failures
/// fall back to the heuristic for that message only.
pub fn classify_session(
    session: &Session,
    taxonomy: &TaxonomyConfig,
    backend: &ClassifierBackend,
) -> Vec<PromptLabel> {
    session
        .messages
        .iter()
        .filter(|m| m.author == Author::Student)
        .map(|m| match backend {
            ClassifierBackend::Heuristic => classify_message(&m.message_id, &m.text, taxonomy),
            ClassifierBackend::External {
                client,
                max_retries,
                limit,
            } => {
                if m.text.is_empty() {
                    return classify_message(&m.message_id, &m.text, taxonomy);
                }
                external_label(&m.message_id, &m.text, taxonomy, client.as_ref(), *max_retries, limit)
                    .unwrap_or_else(|err| {
                        warn!(message = %m.message_id, %err, "external classifier failed, using heuristic");
                        classify_message(&m.message_id, &m.text, taxonomy)
                    })
            }
        })
        .collect()
}
