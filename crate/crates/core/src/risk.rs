//! Lightweight risk indicators with follow-up suggestions.
//!
//! Every signal carries the thresholds that produced it, so it can be
//! reproduced from the session alone. Signals are indicators, not verdicts;
//! severity never exceeds `warn`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Author, PromptAttribute, PromptLabel, Session, TaxonomyConfig};
use crate::text::{normalize_prose, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    AnswerOverreliance,
    CopyPaste,
    LackOfVerification,
    RepeatedMisconception,
}

impl RiskKind {
    pub const ALL: [RiskKind; 4] = [
        RiskKind::AnswerOverreliance,
        RiskKind::CopyPaste,
        RiskKind::LackOfVerification,
        RiskKind::RepeatedMisconception,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskKind::AnswerOverreliance => "answer_overreliance",
            RiskKind::CopyPaste => "copy_paste",
            RiskKind::LackOfVerification => "lack_of_verification",
            RiskKind::RepeatedMisconception => "repeated_misconception",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warn,
}

/// Byte range within a stored (already redacted) message text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextSpan {
    pub start: usize,
    pub end: usize,
}

/// Points at a message; `span: None` means the whole message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub session_id: String,
    pub message_id: String,
    pub span: Option<TextSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskThresholds {
    pub ngram_n: usize,
    pub copy_min_tokens: usize,
    pub copy_overlap_info: f64,
    pub copy_overlap_warn: f64,
    pub answer_min_prompts: usize,
    pub answer_ratio_info: f64,
    pub answer_ratio_warn: f64,
    pub repeat_min_sessions: usize,
    pub execution_terms: Vec<String>,
}

impl Default for RiskThresholds {
    fn default() -> Self {
        Self {
            ngram_n: 8,
            copy_min_tokens: 20,
            copy_overlap_info: 0.6,
            copy_overlap_warn: 0.8,
            answer_min_prompts: 3,
            answer_ratio_info: 0.5,
            answer_ratio_warn: 0.75,
            repeat_min_sessions: 3,
            execution_terms: ["ran", "tested", "output", "error"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSignal {
    pub kind: RiskKind,
    pub severity: Severity,
    pub evidence: Vec<EvidenceRef>,
    pub rationale: String,
    pub thresholds: RiskThresholds,
    pub follow_up: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_term: Option<String>,
}

/// Outcome of one detector. `NotComputable` is distinct from `Clear`: it
/// means the logging policy removed the text the detector needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    Clear,
    Flagged(RiskSignal),
    NotComputable,
}

impl Detection {
    pub fn signal(&self) -> Option<&RiskSignal> {
        match self {
            Detection::Flagged(s) => Some(s),
            _ => None,
        }
    }

    pub fn into_signal(self) -> Option<RiskSignal> {
        match self {
            Detection::Flagged(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("no follow-up template configured for risk kind `{0}`")]
    MissingTemplate(&'static str),
    #[error("cannot read risk config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse risk config: {0}")]
    Parse(#[from] toml::de::Error),
}

/// Follow-up suggestion templates keyed by risk kind; `{topic}` is filled in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FollowUpTemplates(pub BTreeMap<RiskKind, String>);

impl Default for FollowUpTemplates {
    fn default() -> Self {
        let t = [
            (
                RiskKind::AnswerOverreliance,
                "Consider prompting this student to explain the returned solution in their own words.",
            ),
            (
                RiskKind::CopyPaste,
                "Consider asking the student to run the reused answer on their own test cases and describe what each part does.",
            ),
            (
                RiskKind::LackOfVerification,
                "Consider encouraging the student to test the suggested code and note what they observed.",
            ),
            (
                RiskKind::RepeatedMisconception,
                "Consider a short check-in or targeted practice on {topic}, which recurs across this student's sessions.",
            ),
        ];
        Self(t.into_iter().map(|(k, v)| (k, v.to_string())).collect())
    }
}

impl FollowUpTemplates {
    pub fn load(path: &Path) -> Result<Self, RiskError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Detector parameters plus suggestion templates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskConfig {
    pub thresholds: RiskThresholds,
    pub templates: FollowUpTemplates,
}

impl RiskConfig {
    pub fn load_thresholds(path: &Path) -> Result<RiskThresholds, RiskError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Fills the template for the signal's kind.
pub fn suggest_follow_up(signal: &RiskSignal, templates: &FollowUpTemplates) -> Result<String, RiskError> {
    let template = templates
        .0
        .get(&signal.kind)
        .ok_or(RiskError::MissingTemplate(signal.kind.as_str()))?;
    let topic = signal.topic_term.as_deref().unwrap_or("this topic");
    Ok(template.replace("{topic}", topic))
}

fn finish(mut signal: RiskSignal, config: &RiskConfig) -> Result<RiskSignal, RiskError> {
    signal.follow_up = suggest_follow_up(&signal, &config.templates)?;
    Ok(signal)
}

/// Share of `a`'s distinct n-grams that also occur in `b`.
pub fn ngram_overlap<T: AsRef<str>>(a: &[T], b: &[T], n: usize) -> f64 {
    let n = n.max(1);
    if a.len() < n || b.len() < n {
        return 0.0;
    }
    fn grams<T: AsRef<str>>(xs: &[T], n: usize) -> HashSet<Vec<&str>> {
        xs.windows(n)
            .map(|w| w.iter().map(AsRef::as_ref).collect())
            .collect()
    }
    let left = grams(a, n);
    let right = grams(b, n);
    let shared = left.iter().filter(|g| right.contains(*g)).count();
    shared as f64 / left.len().max(1) as f64
}

fn whole(session: &Session, message_id: &str) -> EvidenceRef {
    EvidenceRef {
        session_id: session.session_id.clone(),
        message_id: message_id.to_string(),
        span: None,
    }
}

/// Flags a long student prompt that largely repeats an earlier assistant answer.
pub fn detect_copy_paste(session: &Session, config: &RiskConfig) -> Result<Detection, RiskError> {
    if !session.logging_policy.keeps_text() {
        return Ok(Detection::NotComputable);
    }
    let th = &config.thresholds;
    let mut best: Option<(f64, &str, &str)> = None;
    let mut earlier_assistant: Vec<(&str, Vec<String>)> = Vec::new();
    for m in &session.messages {
        let tokens = tokenize(&m.text);
        match m.author {
            Author::Assistant => earlier_assistant.push((&m.message_id, tokens)),
            Author::Student if tokens.len() >= th.copy_min_tokens => {
                for (aid, atoks) in &earlier_assistant {
                    let ov = ngram_overlap(&tokens, atoks, th.ngram_n);
                    if ov >= th.copy_overlap_info && best.is_none_or(|(b, _, _)| ov > b) {
                        best = Some((ov, &m.message_id, aid));
                    }
                }
            }
            Author::Student => {}
        }
    }
    let Some((overlap, student_id, assistant_id)) = best else {
        return Ok(Detection::Clear);
    };
    let severity = if overlap >= th.copy_overlap_warn {
        Severity::Warn
    } else {
        Severity::Info
    };
    let signal = RiskSignal {
        kind: RiskKind::CopyPaste,
        severity,
        evidence: vec![whole(session, student_id), whole(session, assistant_id)],
        rationale: format!(
            "Pattern consistent with reusing an earlier assistant answer as a new prompt ({}-gram overlap {overlap:.2}).",
            th.ngram_n
        ),
        thresholds: th.clone(),
        follow_up: String::new(),
        topic_term: None,
    };
    Ok(Detection::Flagged(finish(signal, config)?))
}

/// Flags sessions where a large share of prompts ask for finished answers.
pub fn detect_answer_overreliance(
    session_id: &str,
    labels: &[PromptLabel],
    taxonomy: &TaxonomyConfig,
    config: &RiskConfig,
) -> Result<Detection, RiskError> {
    let th = &config.thresholds;
    if labels.len() < th.answer_min_prompts {
        return Ok(Detection::Clear);
    }
    let seeking: Vec<&PromptLabel> = labels
        .iter()
        .filter(|l| {
            taxonomy
                .fine_type(&l.fine_id)
                .is_some_and(|f| f.has(PromptAttribute::AnswerSeeking))
        })
        .collect();
    let ratio = seeking.len() as f64 / labels.len() as f64;
    if ratio < th.answer_ratio_info {
        return Ok(Detection::Clear);
    }
    let severity = if ratio >= th.answer_ratio_warn {
        Severity::Warn
    } else {
        Severity::Info
    };
    let signal = RiskSignal {
        kind: RiskKind::AnswerOverreliance,
        severity,
        evidence: seeking
            .iter()
            .map(|l| EvidenceRef {
                session_id: session_id.to_string(),
                message_id: l.message_id.clone(),
                span: None,
            })
            .collect(),
        rationale: format!(
            "Pattern consistent with relying on direct answers ({} of {} prompts requested complete solutions).",
            seeking.len(),
            labels.len()
        ),
        thresholds: th.clone(),
        follow_up: String::new(),
        topic_term: None,
    };
    Ok(Detection::Flagged(finish(signal, config)?))
}

/// Flags code from the assistant that no later student message verifies.
pub fn detect_lack_of_verification(
    session: &Session,
    labels: &[PromptLabel],
    taxonomy: &TaxonomyConfig,
    config: &RiskConfig,
) -> Result<Detection, RiskError> {
    if !session.logging_policy.keeps_text() {
        return Ok(Detection::NotComputable);
    }
    let Some(last_code) = session
        .messages
        .iter()
        .rposition(|m| m.author == Author::Assistant && m.code_blocks > 0)
    else {
        return Ok(Detection::Clear);
    };
    let th = &config.thresholds;
    let verifying: BTreeSet<&str> = labels
        .iter()
        .filter(|l| {
            taxonomy
                .fine_type(&l.fine_id)
                .is_some_and(|f| f.has(PromptAttribute::Verification))
        })
        .map(|l| l.message_id.as_str())
        .collect();
    let verified = session.messages[last_code + 1..]
        .iter()
        .filter(|m| m.author == Author::Student)
        .any(|m| {
            verifying.contains(m.message_id.as_str())
                || tokenize(&m.text)
                    .iter()
                    .any(|t| th.execution_terms.iter().any(|e| e == t))
        });
    if verified {
        return Ok(Detection::Clear);
    }
    let signal = RiskSignal {
        kind: RiskKind::LackOfVerification,
        severity: Severity::Info,
        evidence: vec![whole(session, &session.messages[last_code].message_id)],
        rationale: "Pattern consistent with accepting assistant code without reporting a test or run.".into(),
        thresholds: th.clone(),
        follow_up: String::new(),
        topic_term: None,
    };
    Ok(Detection::Flagged(finish(signal, config)?))
}

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "all", "also", "and", "another", "any", "are", "assignment",
    "because", "been", "before", "being", "below", "between", "both", "but", "can", "cannot",
    "check", "clean", "code", "complete", "could", "did", "does", "doesn", "doing", "don", "down",
    "each", "email", "entire", "error", "even", "every", "explain", "faster", "feel", "few", "file",
    "first", "fix", "for", "from", "full", "function", "get", "getting", "give", "going", "got",
    "had", "has", "have", "having", "hello", "help", "her", "here", "his", "how", "idea", "into",
    "its", "just", "keep", "know", "like", "line", "look", "looks", "make", "many", "may", "mean",
    "meaning", "might", "more", "most", "much", "must", "name", "need", "not", "now", "off", "okay",
    "once", "one", "only", "other", "our", "out", "output", "over", "own", "phone", "please",
    "program", "really", "right", "run", "running", "same", "see", "she", "should", "show", "so",
    "solution", "some", "still", "such", "sure", "task", "tell", "than", "thank", "thanks", "that",
    "the", "their", "them", "then", "there", "these", "they", "thing", "this", "those", "through",
    "too", "try", "trying", "under", "understand", "until", "url", "use", "using", "very", "want",
    "was", "way", "well", "were", "what", "when", "where", "which", "while", "who", "why", "will",
    "with", "work", "working", "works", "would", "write", "yes", "you", "your",
];

fn is_topic_candidate(tok: &str) -> bool {
    tok.chars().count() >= 3
        && !tok.chars().all(|c| c.is_ascii_digit())
        && STOPWORDS.binary_search(&tok).is_err()
}

/// Most frequent content word across the session's student prompts; ties go
/// to the lexicographically smallest term. Placeholders and code are skipped.
pub fn top_topic_term(session: &Session) -> Option<String> {
    if !session.logging_policy.keeps_text() {
        return None;
    }
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for m in session.student_messages() {
        let prose = strip_placeholders(&normalize_prose(&m.text));
        for tok in tokenize(&prose) {
            if is_topic_candidate(&tok) {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
    }
    let mut best: Option<(&String, usize)> = None;
    for (term, &n) in &freq {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((term, n));
        }
    }
    best.map(|(t, _)| t.clone())
}

fn strip_placeholders(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        match tail.find(']') {
            Some(close)
                if close > 1
                    && tail[1..close]
                        .chars()
                        .all(|c| c.is_ascii_alphabetic() || c == '_') =>
            {
                out.push(' ');
                rest = &tail[close + 1..];
            }
            _ => {
                out.push('[');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Flags a (fine type, topic term) pair that recurs across at least
/// `repeat_min_sessions` distinct sessions of one student.
pub fn detect_repeated_misconception(
    sessions: &[(Session, Vec<PromptLabel>)],
    student_ref: &str,
    taxonomy: &TaxonomyConfig,
    config: &RiskConfig,
) -> Result<Detection, RiskError> {
    let mine: Vec<&(Session, Vec<PromptLabel>)> = sessions
        .iter()
        .filter(|(s, _)| s.student_ref == student_ref)
        .collect();
    if mine.iter().any(|(s, _)| !s.logging_policy.keeps_text()) {
        return Ok(Detection::NotComputable);
    }
    let fallback = &taxonomy.fallback().fine_id;
    let mut pairs: BTreeMap<(String, String), BTreeSet<usize>> = BTreeMap::new();
    for (idx, (session, labels)) in mine.iter().enumerate() {
        let Some(term) = top_topic_term(session) else {
            continue;
        };
        for l in labels.iter().filter(|l| &l.fine_id != fallback) {
            pairs
                .entry((l.fine_id.clone(), term.clone()))
                .or_default()
                .insert(idx);
        }
    }
    let th = &config.thresholds;
    let mut best: Option<(&(String, String), &BTreeSet<usize>)> = None;
    for (pair, hits) in &pairs {
        if hits.len() >= th.repeat_min_sessions && best.is_none_or(|(_, b)| hits.len() > b.len()) {
            best = Some((pair, hits));
        }
    }
    let Some(((fine_id, term), hits)) = best else {
        return Ok(Detection::Clear);
    };
    let mut evidence = Vec::new();
    let mut session_ids = Vec::new();
    for &idx in hits {
        let (session, labels) = mine[idx];
        session_ids.push(session.session_id.clone());
        let msg = labels
            .iter()
            .filter(|l| &l.fine_id == fine_id)
            .find(|l| {
                session
                    .message(&l.message_id)
                    .is_some_and(|m| tokenize(&m.text).iter().any(|t| t == term))
            })
            .or_else(|| labels.iter().find(|l| &l.fine_id == fine_id))
            .expect("pair was built from this session's labels");
        evidence.push(whole(session, &msg.message_id));
    }
    let signal = RiskSignal {
        kind: RiskKind::RepeatedMisconception,
        severity: Severity::Info,
        evidence,
        rationale: format!(
            "Pattern consistent with a recurring difficulty: {} prompts about \"{term}\" appear in {} sessions ({}).",
            fine_id.replace('_', " "),
            hits.len(),
            session_ids.join(", ")
        ),
        thresholds: th.clone(),
        follow_up: String::new(),
        topic_term: Some(term.clone()),
    };
    Ok(Detection::Flagged(finish(signal, config)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{classify_session, default_taxonomy, ClassifierBackend};
    use crate::model::{LabelBackend, LoggingPolicy, Message};
    use crate::text::count_code_blocks;
    use chrono::{TimeDelta, TimeZone, Utc};
    use proptest::prelude::*;

    /// Enumerates every n-gram of both sides by index and compares slices.
    fn brute_overlap(a: &[String], b: &[String], n: usize) -> f64 {
        if a.len() < n || b.len() < n {
            return 0.0;
        }
        let mut distinct_a: Vec<&[String]> = Vec::new();
        for i in 0..=a.len() - n {
            let g = &a[i..i + n];
            if !distinct_a.contains(&g) {
                distinct_a.push(g);
            }
        }
        let mut shared = 0;
        for g in &distinct_a {
            let mut found = false;
            for j in 0..=b.len() - n {
                if &b[j..j + n] == *g {
                    found = true;
                }
            }
            if found {
                shared += 1;
            }
        }
        shared as f64 / distinct_a.len() as f64
    }

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').filter(|t| !t.is_empty()).map(String::from).collect()
    }

    #[test]
    fn overlap_examples() {
        let a = toks("a b c d e f g h i j");
        assert_eq!(ngram_overlap(&a, &a, 8), 1.0);
        assert_eq!(ngram_overlap(&a, &toks("k l m n o p q r s t"), 8), 0.0);
        assert_eq!(ngram_overlap(&toks("a b c"), &a, 8), 0.0);
        // 15 tokens -> 8 distinct 8-grams, one shared contiguous run
        let prompt = toks("p1 p2 p3 p4 p5 p6 p7 r1 r2 r3 r4 r5 r6 r7 r8");
        let other = toks("x y r1 r2 r3 r4 r5 r6 r7 r8 z");
        assert_eq!(brute_overlap(&prompt, &other, 8), 0.125);
        assert_eq!(ngram_overlap(&prompt, &other, 8), 0.125);
    }

    proptest! {
        #[test]
        fn overlap_matches_brute_force(
            a in prop::collection::vec(0u8..4, 0..30),
            b in prop::collection::vec(0u8..4, 0..30),
            n in 1usize..6,
        ) {
            let a: Vec<String> = a.iter().map(|x| x.to_string()).collect();
            let b: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            prop_assert_eq!(ngram_overlap(&a, &b, n), brute_overlap(&a, &b, n));
        }

        #[test]
        fn overreliance_ratio_is_monotone(base in prop::collection::vec(any::<bool>(), 3..12), extra in any::<bool>()) {
            let tax = default_taxonomy();
            let cfg = RiskConfig::default();
            let ratio = |flags: &[bool]| -> f64 {
                let labels = labels_from(flags);
                match detect_answer_overreliance("s", &labels, &tax, &cfg).unwrap() {
                    Detection::Flagged(_) | Detection::Clear => {
                        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
                    }
                    Detection::NotComputable => unreachable!(),
                }
            };
            let before = ratio(&base);
            let mut grown = base.clone();
            grown.push(extra);
            let after = ratio(&grown);
            if extra { prop_assert!(after >= before) } else { prop_assert!(after <= before) }
            // flag status follows the same direction
            let flagged = |flags: &[bool]| detect_answer_overreliance("s", &labels_from(flags), &tax, &cfg).unwrap().signal().is_some();
            if extra && flagged(&base) { prop_assert!(flagged(&grown)); }
            if !extra && !flagged(&base) { prop_assert!(!flagged(&grown)); }
        }
    }

    fn labels_from(flags: &[bool]) -> Vec<PromptLabel> {
        flags
            .iter()
            .enumerate()
            .map(|(i, &seek)| {
                let (fine, cat) = if seek {
                    ("full_solution_request", "planning")
                } else {
                    ("debugging_help", "monitoring")
                };
                PromptLabel {
                    message_id: format!("m{i}"),
                    fine_id: fine.into(),
                    category_id: cat.into(),
                    confidence: 1.0,
                    backend: LabelBackend::Heuristic,
                }
            })
            .collect()
    }

    #[test]
    fn overreliance_thresholds() {
        let tax = default_taxonomy();
        let cfg = RiskConfig::default();
        let d = detect_answer_overreliance("s", &labels_from(&[true, true, true, false]), &tax, &cfg).unwrap();
        let sig = d.signal().unwrap();
        assert_eq!(sig.severity, Severity::Warn);
        assert_eq!(sig.evidence.len(), 3);
        assert!(sig.follow_up.contains("in their own words"));

        let d = detect_answer_overreliance("s", &labels_from(&[true, true]), &tax, &cfg).unwrap();
        assert_eq!(d, Detection::Clear);

        let d = detect_answer_overreliance(
            "s",
            &labels_from(&[true, true, true, false, false, false]),
            &tax,
            &cfg,
        )
        .unwrap();
        assert_eq!(d.signal().unwrap().severity, Severity::Info);
    }

    fn session_of(turns: &[(Author, &str)], policy: LoggingPolicy) -> Session {
        let t0 = Utc.with_ymd_and_hms(2024, 9, 2, 9, 0, 0).unwrap();
        let messages: Vec<Message> = turns
            .iter()
            .enumerate()
            .map(|(i, (author, text))| Message {
                message_id: format!("m{i}"),
                author: *author,
                timestamp: t0 + TimeDelta::minutes(i as i64),
                text: if policy.keeps_text() { text.to_string() } else { String::new() },
                redactions: vec![],
                code_blocks: count_code_blocks(text),
                token_count: tokenize(text).len() as u32,
            })
            .collect();
        Session {
            session_id: "ses-1".into(),
            student_ref: "stu-aaaaaaaa".into(),
            course_id: "cs101".into(),
            week_tag: None,
            topic_tag: None,
            logging_policy: policy,
            started_at: t0,
            ended_at: messages.last().unwrap().timestamp,
            messages,
        }
    }

    const ANSWER: &str = "Here is one way to do it:\n```python\ndef total(values):\n    result = 0\n    for v in values:\n        result = result + v\n    return result\n```\nThis walks the list once and keeps a running sum in result before returning it to the caller.";

    #[test]
    fn verbatim_paste_is_warn() {
        let pasted = format!("ok so {ANSWER}");
        let s = session_of(
            &[
                (Author::Student, "how do I sum a list?"),
                (Author::Assistant, ANSWER),
                (Author::Student, &pasted),
            ],
            LoggingPolicy::RedactedLog,
        );
        // overlap oracle: every 8-gram of the answer survives the paste
        let p = tokenize(&pasted);
        let a = tokenize(ANSWER);
        let oracle = brute_overlap(&p, &a, 8);
        assert!(oracle >= 0.8, "{oracle}");
        let sig = detect_copy_paste(&s, &RiskConfig::default()).unwrap().into_signal().unwrap();
        assert_eq!(sig.severity, Severity::Warn);
        assert_eq!(
            sig.evidence.iter().map(|e| e.message_id.as_str()).collect::<Vec<_>>(),
            ["m2", "m1"]
        );
        assert_eq!(sig.thresholds, RiskThresholds::default());
    }

    #[test]
    fn paraphrase_and_short_prompts_are_clear() {
        let s = session_of(
            &[
                (Author::Assistant, ANSWER),
                (Author::Student, "so the idea is that a running total is updated for every element and then handed back at the end, right? I think I get why that works now"),
                (Author::Student, "def total(values): result = 0 for v"),
            ],
            LoggingPolicy::RedactedLog,
        );
        assert_eq!(detect_copy_paste(&s, &RiskConfig::default()).unwrap(), Detection::Clear);
    }

    #[test]
    fn text_detectors_are_not_computable_under_counts_only() {
        let s = session_of(&[(Author::Assistant, ANSWER)], LoggingPolicy::CountsOnly);
        let tax = default_taxonomy();
        let cfg = RiskConfig::default();
        assert_eq!(detect_copy_paste(&s, &cfg).unwrap(), Detection::NotComputable);
        assert_eq!(detect_lack_of_verification(&s, &[], &tax, &cfg).unwrap(), Detection::NotComputable);
        let pair = vec![(s, vec![])];
        assert_eq!(
            detect_repeated_misconception(&pair, "stu-aaaaaaaa", &tax, &cfg).unwrap(),
            Detection::NotComputable
        );
    }

    #[test]
    fn unverified_final_code() {
        let tax = default_taxonomy();
        let cfg = RiskConfig::default();
        let s = session_of(
            &[(Author::Student, "how do I sum a list?"), (Author::Assistant, ANSWER)],
            LoggingPolicy::RedactedLog,
        );
        let sig = detect_lack_of_verification(&s, &[], &tax, &cfg).unwrap().into_signal().unwrap();
        assert_eq!(sig.severity, Severity::Info);
        assert_eq!(sig.evidence[0].message_id, "m1");

        let s = session_of(
            &[
                (Author::Assistant, ANSWER),
                (Author::Student, "I ran it and it works"),
            ],
            LoggingPolicy::RedactedLog,
        );
        assert_eq!(detect_lack_of_verification(&s, &[], &tax, &cfg).unwrap(), Detection::Clear);

        let s = session_of(&[(Author::Assistant, "no code here")], LoggingPolicy::RedactedLog);
        assert_eq!(detect_lack_of_verification(&s, &[], &tax, &cfg).unwrap(), Detection::Clear);
    }

    #[test]
    fn verification_label_counts_as_verified() {
        let tax = default_taxonomy();
        let s = session_of(
            &[(Author::Assistant, ANSWER), (Author::Student, "is this correct now?")],
            LoggingPolicy::RedactedLog,
        );
        let labels = classify_session(&s, &tax, &ClassifierBackend::Heuristic);
        assert_eq!(labels[0].fine_id, "progress_check");
        assert_eq!(
            detect_lack_of_verification(&s, &labels, &tax, &RiskConfig::default()).unwrap(),
            Detection::Clear
        );
    }

    fn topic_session(id: &str, topic: &str) -> (Session, Vec<PromptLabel>) {
        let text = format!("my {topic} function crashes with a {topic} depth error");
        let mut s = session_of(
            &[(Author::Student, &text), (Author::Assistant, "Let's look.")],
            LoggingPolicy::RedactedLog,
        );
        s.session_id = id.into();
        let labels = classify_session(&s, &default_taxonomy(), &ClassifierBackend::Heuristic);
        (s, labels)
    }

    #[test]
    fn repeated_misconception_needs_three_sessions() {
        let tax = default_taxonomy();
        let cfg = RiskConfig::default();
        let three: Vec<_> = ["a", "b", "c"].iter().map(|id| topic_session(id, "recursion")).collect();
        assert_eq!(top_topic_term(&three[0].0).as_deref(), Some("recursion"));
        let sig = detect_repeated_misconception(&three, "stu-aaaaaaaa", &tax, &cfg)
            .unwrap()
            .into_signal()
            .unwrap();
        assert_eq!(sig.evidence.len(), 3);
        assert!(sig.rationale.contains("a, b, c"));
        assert!(sig.follow_up.contains("recursion"));

        assert_eq!(
            detect_repeated_misconception(&three[..2], "stu-aaaaaaaa", &tax, &cfg).unwrap(),
            Detection::Clear
        );
        let mixed: Vec<_> = [("a", "recursion"), ("b", "loops"), ("c", "strings")]
            .iter()
            .map(|(id, t)| topic_session(id, t))
            .collect();
        assert_eq!(
            detect_repeated_misconception(&mixed, "stu-aaaaaaaa", &tax, &cfg).unwrap(),
            Detection::Clear
        );
    }

    #[test]
    fn follow_ups_are_templated() {
        let cfg = RiskConfig::default();
        let mut sig = RiskSignal {
            kind: RiskKind::CopyPaste,
            severity: Severity::Warn,
            evidence: vec![],
            rationale: String::new(),
            thresholds: RiskThresholds::default(),
            follow_up: String::new(),
            topic_term: None,
        };
        let a = suggest_follow_up(&sig, &cfg.templates).unwrap();
        assert!(a.contains("test cases"));
        assert_eq!(a, suggest_follow_up(&sig, &cfg.templates).unwrap());
        sig.kind = RiskKind::RepeatedMisconception;
        sig.topic_term = Some("recursion".into());
        assert!(suggest_follow_up(&sig, &cfg.templates).unwrap().contains("practice on recursion"));
        let mut partial = cfg.templates.clone();
        partial.0.remove(&RiskKind::RepeatedMisconception);
        assert!(matches!(
            suggest_follow_up(&sig, &partial),
            Err(RiskError::MissingTemplate("repeated_misconception"))
        ));
        for t in cfg.templates.0.values() {
            let lower = t.to_lowercase();
            assert!(!lower.contains("penalt") && !lower.contains("sanction"));
        }
    }

    #[test]
    fn stopwords_sorted_for_binary_search() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn placeholders_are_not_topics() {
        assert_eq!(strip_placeholders("hi [NAME] [name] a[b"), "hi     a[b");
    }
}
