//! Builds the per-session report: labels, distribution, risk signals and a
//! short templated narrative.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use crate::classify::{classify_session, BackendError, ClassifierBackend};
use crate::model::{
    distribution_of, dominant_category, CategoryDistribution, DistributionError, PromptLabel,
    Session, SessionError, TaxonomyConfig, TaxonomyError,
};
use crate::privacy::{redact_text, RedactionRuleSet};
use crate::risk::{
    detect_answer_overreliance, detect_copy_paste, detect_lack_of_verification, top_topic_term,
    Detection, RiskConfig, RiskError, RiskKind, RiskSignal,
};
use crate::timefmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryGeneratorKind {
    Template,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub student_ref: String,
    pub course_id: String,
    pub week_tag: Option<String>,
    pub topic_tag: Option<String>,
    pub message_count: usize,
    pub student_prompt_count: usize,
    #[serde(with = "timefmt")]
    pub started_at: DateTime<Utc>,
    #[serde(with = "timefmt")]
    pub ended_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    /// Content hash over every other field.
    pub report_id: String,
    pub session: SessionMeta,
    pub distribution: CategoryDistribution,
    pub labels: Vec<PromptLabel>,
    pub risks: Vec<RiskSignal>,
    pub not_computable: Vec<RiskKind>,
    pub topic_term: Option<String>,
    pub summary: String,
    pub generator: SummaryGeneratorKind,
    pub taxonomy_version: String,
    #[serde(with = "timefmt")]
    pub created_at: DateTime<Utc>,
}

impl SessionReport {
    pub fn content_hash(&self) -> String {
        let mut unhashed = self.clone();
        unhashed.report_id = String::new();
        let bytes = serde_json::to_vec(&unhashed).expect("reports serialize");
        hex::encode(&Sha256::digest(&bytes)[..12])
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("reports serialize")
    }

    pub fn has_warn(&self) -> bool {
        self.risks
            .iter()
            .any(|r| r.severity == crate::risk::Severity::Warn)
    }
}

/// What an external summary generator receives. Message text is already
/// filtered; the returned text is filtered again before use.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryInput<'a> {
    pub session: &'a Session,
    pub labels: &'a [PromptLabel],
    pub distribution: &'a CategoryDistribution,
    pub risks: &'a [RiskSignal],
}

pub trait SummaryGenerator: Send + Sync {
    fn generate(&self, input: &SummaryInput<'_>) -> Result<String, BackendError>;
}

#[derive(Clone, Default)]
pub struct ReportBackends {
    pub classifier: Option<ClassifierBackend>,
    pub summarizer: Option<Arc<dyn SummaryGenerator>>,
    pub risk: RiskConfig,
    pub redaction: RedactionRuleSet,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("taxonomy config error: {0}")]
    Taxonomy(#[from] TaxonomyError),
    #[error("invalid session: {0}")]
    Session(#[from] SessionError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("risk config error: {0}")]
    Risk(#[from] RiskError),
}

fn humanize(id: &str) -> String {
    id.replace('_', " ")
}

fn intent_phrase(category: &str) -> String {
    match category {
        "planning" => "was forming an approach".into(),
        "monitoring" => "was troubleshooting".into(),
        "optimization" => "was refining a solution".into(),
        "other" => "was asking general questions".into(),
        other => format!("was mostly working on {}", humanize(other)),
    }
}

/// Template narrative: intent, main difficulties, progression, and a risk
/// sentence when any signal was raised.
pub fn template_summary(
    labels: &[PromptLabel],
    dist: &CategoryDistribution,
    risks: &[RiskSignal],
    taxonomy: &TaxonomyConfig,
) -> String {
    let mut sentences = Vec::new();
    match dominant_category(dist, taxonomy) {
        Ok(dominant) => {
            let n = labels.len();
            sentences.push(format!(
                "Across {n} student prompt{}, the student most likely {}.",
                if n == 1 { "" } else { "s" },
                intent_phrase(dominant)
            ));
            let mut by_fine: Vec<(usize, &str, usize)> = Vec::new();
            for l in labels {
                let rank = taxonomy.fine_rank(&l.fine_id).unwrap_or(usize::MAX);
                match by_fine.iter_mut().find(|(_, f, _)| *f == l.fine_id) {
                    Some(entry) => entry.2 += 1,
                    None => by_fine.push((rank, &l.fine_id, 1)),
                }
            }
            by_fine.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
            let top: Vec<String> = by_fine.iter().take(2).map(|(_, f, _)| humanize(f)).collect();
            sentences.push(format!("Main difficulties centered on {}.", top.join(" and ")));
            let first = &labels[0].category_id;
            let last = &labels[n - 1].category_id;
            if first == last {
                sentences.push(format!("The session remained in {}.", humanize(first)));
            } else {
                sentences.push(format!(
                    "The session moved from {} into {}.",
                    humanize(first),
                    humanize(last)
                ));
            }
        }
        Err(_) => {
            sentences.push("The session contained no student prompts.".into());
            sentences.push("No prompt-strategy profile is available.".into());
        }
    }
    if !risks.is_empty() {
        let listed: Vec<String> = risks
            .iter()
            .map(|r| {
                let sev = match r.severity {
                    crate::risk::Severity::Info => "info",
                    crate::risk::Severity::Warn => "warn",
                };
                format!("{} ({sev})", humanize(r.kind.as_str()))
            })
            .collect();
        sentences.push(format!(
            "Detected patterns that may merit a follow-up: {}.",
            listed.join(", ")
        ));
    }
    sentences.join(" ")
}

/// Narrative for the report, via the external generator when configured and
/// otherwise (or on failure) via the template.
pub fn generate_summary(
    session: &Session,
    labels: &[PromptLabel],
    dist: &CategoryDistribution,
    risks: &[RiskSignal],
    taxonomy: &TaxonomyConfig,
    backends: &ReportBackends,
) -> (String, SummaryGeneratorKind) {
    if let Some(generator) = &backends.summarizer {
        let input = SummaryInput {
            session,
            labels,
            distribution: dist,
            risks,
        };
        match generator.generate(&input) {
            Ok(text) if !text.trim().is_empty() => {
                let (filtered, _) = redact_text(text.trim(), &backends.redaction);
                return (filtered, SummaryGeneratorKind::External);
            }
            Ok(_) => warn!(session = %session.session_id, "external summary empty, using template"),
            Err(err) => warn!(session = %session.session_id, %err, "external summary failed, using template"),
        }
    }
    (
        template_summary(labels, dist, risks, taxonomy),
        SummaryGeneratorKind::Template,
    )
}

/// Runs classification, distribution, the per-session detectors and the
/// summary. Deterministic for heuristic/template backends and a fixed
/// `created_at`.
pub fn build_session_report(
    session: &Session,
    taxonomy: &TaxonomyConfig,
    backends: &ReportBackends,
    created_at: DateTime<Utc>,
) -> Result<SessionReport, ReportError> {
    let taxonomy = taxonomy.clone().validated()?;
    session.validate()?;
    let classifier = backends
        .classifier
        .clone()
        .unwrap_or(ClassifierBackend::Heuristic);
    let labels = classify_session(session, &taxonomy, &classifier);
    let distribution = distribution_of(&labels, &taxonomy)?;

    let mut risks = Vec::new();
    let mut not_computable = Vec::new();
    let detections = [
        (RiskKind::CopyPaste, detect_copy_paste(session, &backends.risk)?),
        (
            RiskKind::AnswerOverreliance,
            if session.logging_policy.keeps_text() {
                detect_answer_overreliance(&session.session_id, &labels, &taxonomy, &backends.risk)?
            } else {
                Detection::NotComputable
            },
        ),
        (
            RiskKind::LackOfVerification,
            detect_lack_of_verification(session, &labels, &taxonomy, &backends.risk)?,
        ),
    ];
    for (kind, detection) in detections {
        match detection {
            Detection::Flagged(sig) => risks.push(sig),
            Detection::NotComputable => not_computable.push(kind),
            Detection::Clear => {}
        }
    }
    risks.sort_by_key(|r| r.kind);

    let (summary, generator) =
        generate_summary(session, &labels, &distribution, &risks, &taxonomy, backends);
    let mut report = SessionReport {
        report_id: String::new(),
        session: SessionMeta {
            session_id: session.session_id.clone(),
            student_ref: session.student_ref.clone(),
            course_id: session.course_id.clone(),
            week_tag: session.week_tag.clone(),
            topic_tag: session.topic_tag.clone(),
            message_count: session.messages.len(),
            student_prompt_count: labels.len(),
            started_at: session.started_at,
            ended_at: session.ended_at,
        },
        distribution,
        labels,
        risks,
        not_computable,
        topic_term: top_topic_term(session),
        summary,
        generator,
        taxonomy_version: taxonomy.version.clone(),
        created_at,
    };
    report.report_id = report.content_hash();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::default_taxonomy;
    use crate::model::{Author, LoggingPolicy, Message};
    use crate::risk::Severity;
    use crate::text::{count_code_blocks, tokenize};
    use chrono::{TimeDelta, TimeZone};

    pub(crate) fn fixture(turns: &[(Author, &str)], policy: LoggingPolicy) -> Session {
        let t0 = Utc.with_ymd_and_hms(2024, 10, 1, 14, 0, 0).unwrap();
        let messages: Vec<Message> = turns
            .iter()
            .enumerate()
            .map(|(i, (author, text))| Message {
                message_id: format!("ses-x-m{i:03}"),
                author: *author,
                timestamp: t0 + TimeDelta::minutes(2 * i as i64),
                text: if policy.keeps_text() { text.to_string() } else { String::new() },
                redactions: vec![],
                code_blocks: count_code_blocks(text),
                token_count: tokenize(text).len() as u32,
            })
            .collect();
        Session {
            session_id: "ses-x".into(),
            student_ref: "stu-12345678".into(),
            course_id: "cs101".into(),
            week_tag: Some("2024-W40".into()),
            topic_tag: Some("recursion".into()),
            logging_policy: policy,
            started_at: t0,
            ended_at: messages.last().unwrap().timestamp,
            messages,
        }
    }

    const CODE: &str = "Try this version:\n```python\ndef fact(n):\n    if n <= 1:\n        return 1\n    return n * fact(n - 1)\n```\nThe base case stops the recursion once n reaches one, and each call multiplies by n.";

    fn eight_message_session() -> Session {
        fixture(
            &[
                (Author::Student, "My recursion crashes with a RecursionError, can you help me fix it?"),
                (Author::Assistant, "Check the base case of your recursive function."),
                (Author::Student, "Why does my recursion never stop?"),
                (Author::Assistant, CODE),
                (Author::Student, "I ran it and the output is right. Is this correct for n = 0 too?"),
                (Author::Assistant, "Yes, n = 0 returns 1."),
                (Author::Student, "Could the recursion be made faster?"),
                (Author::Assistant, "You could memoize or loop instead."),
            ],
            LoggingPolicy::RedactedLog,
        )
    }

    #[test]
    fn fixture_report() {
        let s = eight_message_session();
        let tax = default_taxonomy();
        let r = build_session_report(&s, &tax, &ReportBackends::default(), s.ended_at).unwrap();
        assert_eq!(r.labels.len(), 4);
        assert_eq!(r.session.message_count, 8);
        assert_eq!(r.session.student_prompt_count, 4);
        let sum: f64 = r.distribution.proportions.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(r.summary.contains("troubleshooting"), "{}", r.summary);
        assert!(r.summary.contains("debugging"), "{}", r.summary);
        assert!(r.summary.contains("moved from monitoring into optimization"), "{}", r.summary);
        assert!(r.risks.is_empty(), "{:?}", r.risks);
        assert_eq!(r.topic_term.as_deref(), Some("recursion"));
        assert_eq!(r.generator, SummaryGeneratorKind::Template);
        assert_eq!(r.report_id, r.content_hash());

        let again = build_session_report(&s, &tax, &ReportBackends::default(), s.ended_at).unwrap();
        assert_eq!(r.to_canonical_json(), again.to_canonical_json());
    }

    #[test]
    fn single_prompt_remains() {
        let s = fixture(
            &[(Author::Student, "Explain what a closure is"), (Author::Assistant, "A closure captures variables.")],
            LoggingPolicy::RedactedLog,
        );
        let r = build_session_report(&s, &default_taxonomy(), &ReportBackends::default(), s.ended_at).unwrap();
        assert!(r.summary.contains("remained in planning"), "{}", r.summary);
        assert_eq!(r.summary.matches(". ").count() + 1, 3);
    }

    #[test]
    fn copy_paste_adds_fourth_sentence_without_quoting() {
        let pasted = format!("here is what I have now {CODE}");
        let s = fixture(
            &[
                (Author::Student, "How do I write factorial?"),
                (Author::Assistant, CODE),
                (Author::Student, &pasted),
                (Author::Assistant, "Looks fine."),
            ],
            LoggingPolicy::RedactedLog,
        );
        let r = build_session_report(&s, &default_taxonomy(), &ReportBackends::default(), s.ended_at).unwrap();
        let cp = r.risks.iter().find(|x| x.kind == RiskKind::CopyPaste).unwrap();
        assert_eq!(cp.severity, Severity::Warn);
        assert!(r.summary.contains("copy paste (warn)"), "{}", r.summary);
        let json = r.to_canonical_json();
        for m in &s.messages {
            assert_no_long_copy(&json, &m.text);
        }
        for risk in &r.risks {
            for ev in &risk.evidence {
                assert!(s.message(&ev.message_id).is_some());
            }
        }
    }

    pub(crate) fn assert_no_long_copy(haystack: &str, text: &str) {
        let chars: Vec<char> = text.chars().collect();
        for w in chars.windows(40) {
            let needle: String = w.iter().collect();
            assert!(!haystack.contains(&needle), "leaked `{needle}`");
        }
    }

    #[test]
    fn counts_only_marks_text_detectors() {
        let s = fixture(
            &[(Author::Student, "give me the answer"), (Author::Assistant, CODE)],
            LoggingPolicy::CountsOnly,
        );
        let r = build_session_report(&s, &default_taxonomy(), &ReportBackends::default(), s.ended_at).unwrap();
        assert!(r.risks.is_empty());
        assert_eq!(
            r.not_computable,
            vec![RiskKind::CopyPaste, RiskKind::AnswerOverreliance, RiskKind::LackOfVerification]
        );
        assert_eq!(r.topic_term, None);
    }

    #[test]
    fn no_student_prompts() {
        let s = fixture(&[(Author::Assistant, "Welcome back!")], LoggingPolicy::RedactedLog);
        let r = build_session_report(&s, &default_taxonomy(), &ReportBackends::default(), s.ended_at).unwrap();
        assert!(r.summary.contains("no student prompts"));
        assert!(r.distribution.proportions.is_empty());
    }

    #[test]
    fn invalid_taxonomy_is_config_error() {
        let s = eight_message_session();
        let mut tax = default_taxonomy();
        tax.fine_types.retain(|f| !f.keyword_rules.is_empty());
        assert!(matches!(
            build_session_report(&s, &tax, &ReportBackends::default(), s.ended_at),
            Err(ReportError::Taxonomy(_))
        ));
    }

    struct Fixed(Result<String, ()>);

    impl SummaryGenerator for Fixed {
        fn generate(&self, _: &SummaryInput<'_>) -> Result<String, BackendError> {
            self.0.clone().map_err(|_| BackendError::Timeout)
        }
    }

    #[test]
    fn external_summary_is_filtered_and_falls_back() {
        let s = eight_message_session();
        let tax = default_taxonomy();
        let backends = ReportBackends {
            summarizer: Some(Arc::new(Fixed(Ok("Reach them at kid@school.edu. They debugged.".into())))),
            ..Default::default()
        };
        let r = build_session_report(&s, &tax, &backends, s.ended_at).unwrap();
        assert_eq!(r.generator, SummaryGeneratorKind::External);
        assert_eq!(r.summary, "Reach them at [EMAIL]. They debugged.");

        let backends = ReportBackends {
            summarizer: Some(Arc::new(Fixed(Err(())))),
            ..Default::default()
        };
        let r = build_session_report(&s, &tax, &backends, s.ended_at).unwrap();
        assert_eq!(r.generator, SummaryGeneratorKind::Template);
    }
}
