//! Domain types shared by every stage of the pipeline.
//!
//! All values here are immutable once built and serialize to a canonical
//! JSON object with the field order declared below.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timefmt;

/// Which side of the dialogue produced a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Student,
    Assistant,
}

/// Course-level logging policy applied by the privacy filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoggingPolicy {
    FullLog,
    #[default]
    RedactedLog,
    CountsOnly,
}

impl LoggingPolicy {
    /// Whether message text survives the filter at all.
    pub fn keeps_text(self) -> bool {
        !matches!(self, LoggingPolicy::CountsOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Instructor,
    Admin,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Student => "student",
            Role::Instructor => "instructor",
            Role::Admin => "admin",
        })
    }
}

/// A byte range of the original (pre-filter) text that a redaction rule replaced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionSpan {
    pub start: usize,
    pub end: usize,
    pub rule_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: String,
    pub author: Author,
    #[serde(with = "timefmt")]
    pub timestamp: DateTime<Utc>,
    /// Redacted text; empty under the counts-only policy.
    pub text: String,
    pub redactions: Vec<RedactionSpan>,
    pub code_blocks: u32,
    pub token_count: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("session {0} has no messages")]
    Empty(String),
    #[error("session {session}: message {message} is out of timestamp order")]
    Unordered { session: String, message: String },
    #[error("session {0}: ended_at precedes started_at")]
    InvertedBounds(String),
    #[error("session {session}: message {message} lies outside the session bounds")]
    OutOfBounds { session: String, message: String },
}

/// One help-seeking episode: privacy-filtered messages for one student.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub student_ref: String,
    pub course_id: String,
    pub week_tag: Option<String>,
    pub topic_tag: Option<String>,
    pub logging_policy: LoggingPolicy,
    pub messages: Vec<Message>,
    #[serde(with = "timefmt")]
    pub started_at: DateTime<Utc>,
    #[serde(with = "timefmt")]
    pub ended_at: DateTime<Utc>,
}

impl Session {
    pub fn validate(&self) -> Result<(), SessionError> {
        let id = || self.session_id.clone();
        if self.messages.is_empty() {
            return Err(SessionError::Empty(id()));
        }
        if self.ended_at < self.started_at {
            return Err(SessionError::InvertedBounds(id()));
        }
        let mut prev: Option<DateTime<Utc>> = None;
        for m in &self.messages {
            if prev.is_some_and(|p| m.timestamp < p) {
                return Err(SessionError::Unordered {
                    session: id(),
                    message: m.message_id.clone(),
                });
            }
            if m.timestamp < self.started_at || m.timestamp > self.ended_at {
                return Err(SessionError::OutOfBounds {
                    session: id(),
                    message: m.message_id.clone(),
                });
            }
            prev = Some(m.timestamp);
        }
        Ok(())
    }

    pub fn student_messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| m.author == Author::Student)
    }

    pub fn message(&self, message_id: &str) -> Option<&Message> {
        self.messages.iter().find(|m| m.message_id == message_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptAttribute {
    AnswerSeeking,
    Verification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineType {
    pub fine_id: String,
    pub category_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub keyword_rules: Vec<String>,
    #[serde(default)]
    pub attributes: BTreeSet<PromptAttribute>,
}

impl FineType {
    pub fn has(&self, attr: PromptAttribute) -> bool {
        self.attributes.contains(&attr)
    }
}

/// Fine prompt types grouped under ordered high-level categories.
///
/// Construct through [`TaxonomyConfig::validated`] or
/// [`crate::classify::load_taxonomy`]; the fallback fine type is the unique
/// entry without keyword rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub version: String,
    pub categories: Vec<String>,
    pub fine_types: Vec<FineType>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid taxonomy: {}", .violations.join("; "))]
pub struct TaxonomyError {
    pub violations: Vec<String>,
}

impl TaxonomyConfig {
    /// Checks every invariant and reports all violations at once.
    pub fn validated(self) -> Result<Self, TaxonomyError> {
        let mut violations = Vec::new();
        if self.categories.is_empty() {
            violations.push("no categories defined".to_string());
        }
        let mut seen_cats = BTreeSet::new();
        for c in &self.categories {
            if !seen_cats.insert(c.as_str()) {
                violations.push(format!("duplicate category id `{c}`"));
            }
        }
        let mut seen_fine = BTreeSet::new();
        let mut fallbacks = Vec::new();
        for ft in &self.fine_types {
            if !seen_fine.insert(ft.fine_id.as_str()) {
                violations.push(format!("duplicate fine id `{}`", ft.fine_id));
            }
            if !seen_cats.contains(ft.category_id.as_str()) {
                violations.push(format!(
                    "fine type `{}` references unknown category `{}`",
                    ft.fine_id, ft.category_id
                ));
            }
            if ft.keyword_rules.is_empty() {
                fallbacks.push(ft.fine_id.as_str());
            }
            for rule in &ft.keyword_rules {
                if rule.trim().is_empty() {
                    violations.push(format!("fine type `{}` has an empty rule", ft.fine_id));
                } else if *rule != rule.to_lowercase() {
                    violations.push(format!(
                        "fine type `{}` rule `{rule}` is not lowercase",
                        ft.fine_id
                    ));
                }
            }
        }
        match fallbacks.len() {
            0 => violations.push("no fallback fine type (one entry without keyword rules)".into()),
            1 => {}
            _ => violations.push(format!(
                "multiple fine types without keyword rules: {}",
                fallbacks.join(", ")
            )),
        }
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(TaxonomyError { violations })
        }
    }

    pub fn fine_type(&self, fine_id: &str) -> Option<&FineType> {
        self.fine_types.iter().find(|f| f.fine_id == fine_id)
    }

    pub fn fallback(&self) -> &FineType {
        self.fine_types
            .iter()
            .find(|f| f.keyword_rules.is_empty())
            .expect("validated taxonomy has a fallback fine type")
    }

    pub fn category_rank(&self, category_id: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category_id)
    }

    pub fn fine_rank(&self, fine_id: &str) -> Option<usize> {
        self.fine_types.iter().position(|f| f.fine_id == fine_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelBackend {
    Heuristic,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLabel {
    pub message_id: String,
    pub fine_id: String,
    pub category_id: String,
    pub confidence: f64,
    pub backend: LabelBackend,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoryDistribution {
    pub counts: BTreeMap<String, u64>,
    pub proportions: BTreeMap<String, f64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistributionError {
    #[error("label for message {message_id} references unknown fine type `{fine_id}`")]
    InvalidLabel { message_id: String, fine_id: String },
    #[error("distribution has no counts, so no category dominates")]
    NoDominant,
}

impl CategoryDistribution {
    /// Zero-filled counts for every category of the taxonomy.
    pub fn empty(taxonomy: &TaxonomyConfig) -> Self {
        Self {
            counts: taxonomy.categories.iter().map(|c| (c.clone(), 0)).collect(),
            proportions: BTreeMap::new(),
        }
    }

    pub fn from_counts(counts: BTreeMap<String, u64>) -> Self {
        let total: u64 = counts.values().sum();
        let proportions = if total == 0 {
            BTreeMap::new()
        } else {
            counts
                .iter()
                .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
                .collect()
        };
        Self {
            counts,
            proportions,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Adds another distribution's counts and renormalizes.
    pub fn merged(&self, other: &CategoryDistribution) -> Self {
        let mut counts = self.counts.clone();
        for (k, v) in &other.counts {
            *counts.entry(k.clone()).or_insert(0) += v;
        }
        Self::from_counts(counts)
    }
}

/// Counts labels per category, zero-filled over the taxonomy.
pub fn distribution_of(
    labels: &[PromptLabel],
    taxonomy: &TaxonomyConfig,
) -> Result<CategoryDistribution, DistributionError> {
    let mut counts: BTreeMap<String, u64> =
        taxonomy.categories.iter().map(|c| (c.clone(), 0)).collect();
    for label in labels {
        let ft = taxonomy
            .fine_type(&label.fine_id)
            .filter(|ft| ft.category_id == label.category_id)
            .ok_or_else(|| DistributionError::InvalidLabel {
                message_id: label.message_id.clone(),
                fine_id: label.fine_id.clone(),
            })?;
        *counts.entry(ft.category_id.clone()).or_insert(0) += 1;
    }
    Ok(CategoryDistribution::from_counts(counts))
}

/// Category with the highest count; ties go to the earlier configured category.
pub fn dominant_category<'t>(
    dist: &CategoryDistribution,
    taxonomy: &'t TaxonomyConfig,
) -> Result<&'t str, DistributionError> {
    let mut best: Option<(&str, u64)> = None;
    for cat in &taxonomy.categories {
        let n = dist.counts.get(cat).copied().unwrap_or(0);
        if n > 0 && best.is_none_or(|(_, b)| n > b) {
            best = Some((cat, n));
        }
    }
    best.map(|(c, _)| c).ok_or(DistributionError::NoDominant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::default_taxonomy;

    fn label(fine: &str, tax: &TaxonomyConfig) -> PromptLabel {
        let ft = tax.fine_type(fine).unwrap();
        PromptLabel {
            message_id: format!("m-{fine}"),
            fine_id: fine.into(),
            category_id: ft.category_id.clone(),
            confidence: 1.0,
            backend: LabelBackend::Heuristic,
        }
    }

    #[test]
    fn distribution_quarters() {
        let tax = default_taxonomy();
        let labels: Vec<_> = [
            "approach_request",
            "debugging_help",
            "code_behavior_question",
            "refactor_request",
        ]
        .iter()
        .map(|f| label(f, &tax))
        .collect();
        let d = distribution_of(&labels, &tax).unwrap();
        assert_eq!(d.proportions["planning"], 0.25);
        assert_eq!(d.proportions["monitoring"], 0.5);
        assert_eq!(d.proportions["optimization"], 0.25);
        assert_eq!(d.proportions["other"], 0.0);
        assert_eq!(d.counts.len(), 4);
    }

    #[test]
    fn empty_labels_give_empty_proportions() {
        let tax = default_taxonomy();
        let d = distribution_of(&[], &tax).unwrap();
        assert!(d.proportions.is_empty());
        assert_eq!(d.counts.len(), 4);
        assert!(d.counts.values().all(|&c| c == 0));
        assert_eq!(dominant_category(&d, &tax), Err(DistributionError::NoDominant));
    }

    #[test]
    fn single_category() {
        let tax = default_taxonomy();
        let labels: Vec<_> = (0..10).map(|_| label("debugging_help", &tax)).collect();
        let d = distribution_of(&labels, &tax).unwrap();
        assert_eq!(d.proportions["monitoring"], 1.0);
        assert_eq!(dominant_category(&d, &tax).unwrap(), "monitoring");
    }

    #[test]
    fn unknown_fine_id_is_invalid() {
        let tax = default_taxonomy();
        let mut l = label("debugging_help", &tax);
        l.fine_id = "nope".into();
        assert!(matches!(
            distribution_of(&[l], &tax),
            Err(DistributionError::InvalidLabel { .. })
        ));
    }

    #[test]
    fn dominance_ties_follow_category_order() {
        let tax = default_taxonomy();
        let counts = [("planning", 2), ("monitoring", 2), ("optimization", 0), ("other", 0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let d = CategoryDistribution::from_counts(counts);
        assert_eq!(dominant_category(&d, &tax).unwrap(), "planning");

        let counts = [("planning", 1), ("monitoring", 5)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let d = CategoryDistribution::from_counts(counts);
        assert_eq!(dominant_category(&d, &tax).unwrap(), "monitoring");
    }

    #[test]
    fn taxonomy_reports_every_violation() {
        let mut tax = default_taxonomy();
        tax.fine_types[0].category_id = "nowhere".into();
        let dup = tax.fine_types[1].clone();
        tax.fine_types.push(dup);
        tax.fine_types.retain(|f| !f.keyword_rules.is_empty());
        let err = tax.validated().unwrap_err();
        assert_eq!(err.violations.len(), 3, "{err}");
    }
}
