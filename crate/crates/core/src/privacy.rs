//! The data filter: rule-based redaction, keyed pseudonyms and course
//! logging policies, applied before anything reaches the store.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use hmac::{Hmac, KeyInit, Mac};
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::ingest::RawEvent;
use crate::model::{Author, LoggingPolicy, Message, RedactionSpan};
use crate::text::{count_code_blocks, tokenize};

pub const ROSTER_RULE_ID: &str = "roster_name";
pub const ROSTER_PLACEHOLDER: &str = "[NAME]";
pub const SALT_ENV: &str = "TUTORLENS_COURSE_SALT";
const MAX_PASSES: usize = 8;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("rule `{rule_id}` has an invalid pattern: {source}")]
    BadPattern {
        rule_id: String,
        #[source]
        source: regex::Error,
    },
    #[error("placeholder `{placeholder}` of rule `{rule_id}` is matched by rule `{matched_by}`")]
    SelfMatchingPlaceholder {
        rule_id: String,
        placeholder: String,
        matched_by: String,
    },
    #[error("raw id must not be empty")]
    InvalidId,
    #[error("course salt must not be empty")]
    EmptySalt,
    #[error("pseudonym collision between two raw ids ({0})")]
    Collision(String),
    #[error("cannot read rule config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse rule config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule_id: String,
    pub pattern: String,
    pub replacement: String,
}

/// On-disk form of a rule set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSetConfig {
    #[serde(default = "default_version")]
    pub version: String,
    #[serde(default)]
    pub policy: LoggingPolicy,
    #[serde(default)]
    pub roster_names: Vec<String>,
    #[serde(default = "default_rules")]
    pub rules: Vec<RuleSpec>,
}

fn default_version() -> String {
    "1".into()
}

impl Default for RuleSetConfig {
    fn default() -> Self {
        Self {
            version: default_version(),
            policy: LoggingPolicy::default(),
            roster_names: Vec::new(),
            rules: default_rules(),
        }
    }
}

pub const DEFAULT_INSTITUTION_ID_PATTERN: &str = r"(?i)\b\d[a-z]{2}\d{5}\b";

/// Email addresses, URLs carrying a query string, institution ids and
/// phone-like digit runs of nine or more digits.
pub fn default_rules() -> Vec<RuleSpec> {
    let rule = |id: &str, pattern: &str, replacement: &str| RuleSpec {
        rule_id: id.into(),
        pattern: pattern.into(),
        replacement: replacement.into(),
    };
    vec![
        rule("url_query", r"(?i)\bhttps?://[^\s?#]+\?\S+", "[URL]"),
        rule(
            "email",
            r"(?i)[a-z0-9._%+-]+@[a-z0-9-]+(?:\.[a-z0-9-]+)*\.[a-z]{2,}",
            "[EMAIL]",
        ),
        rule("institution_id", DEFAULT_INSTITUTION_ID_PATTERN, "[ID]"),
        rule("phone", r"\+?\d(?:[ .\-]?\d){8,}", "[PHONE]"),
    ]
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule_id: String,
    regex: Regex,
    replacement: String,
}

/// Ordered redaction rules plus the roster-name rule and the course policy.
#[derive(Debug, Clone)]
pub struct RedactionRuleSet {
    version: String,
    rules: Vec<CompiledRule>,
    roster: Option<CompiledRule>,
    policy: LoggingPolicy,
}

impl Default for RedactionRuleSet {
    fn default() -> Self {
        Self::from_config(RuleSetConfig::default()).expect("default rules compile")
    }
}

impl RedactionRuleSet {
    pub fn from_config(config: RuleSetConfig) -> Result<Self, PrivacyError> {
        let rules = config
            .rules
            .into_iter()
            .map(|r| {
                let regex = Regex::new(&r.pattern).map_err(|source| PrivacyError::BadPattern {
                    rule_id: r.rule_id.clone(),
                    source,
                })?;
                Ok(CompiledRule {
                    rule_id: r.rule_id,
                    regex,
                    replacement: r.replacement,
                })
            })
            .collect::<Result<Vec<_>, PrivacyError>>()?;
        let roster = roster_rule(&config.roster_names)?;
        let set = Self {
            version: config.version,
            rules,
            roster,
            policy: config.policy,
        };
        set.check_placeholders()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, PrivacyError> {
        let raw = std::fs::read_to_string(path)?;
        Self::from_config(toml::from_str(&raw)?)
    }

    pub fn with_policy(mut self, policy: LoggingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_roster(self, names: &[String]) -> Result<Self, PrivacyError> {
        let mut set = self;
        set.roster = roster_rule(names)?;
        set.check_placeholders()?;
        Ok(set)
    }

    pub fn policy(&self) -> LoggingPolicy {
        self.policy
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    fn all_rules(&self) -> impl Iterator<Item = &CompiledRule> {
        self.rules.iter().chain(self.roster.iter())
    }

    /// Rules in force for the current policy; roster names are masked under
    /// every policy except `full_log`.
    fn active_rules(&self) -> Vec<&CompiledRule> {
        let roster = match self.policy {
            LoggingPolicy::FullLog => None,
            _ => self.roster.as_ref(),
        };
        self.rules.iter().chain(roster).collect()
    }

    fn check_placeholders(&self) -> Result<(), PrivacyError> {
        for owner in self.all_rules() {
            for other in self.all_rules() {
                if other.regex.is_match(&owner.replacement) {
                    return Err(PrivacyError::SelfMatchingPlaceholder {
                        rule_id: owner.rule_id.clone(),
                        placeholder: owner.replacement.clone(),
                        matched_by: other.rule_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// First active rule that still matches `text`, if any.
    pub fn first_match(&self, text: &str) -> Option<&str> {
        self.active_rules()
            .into_iter()
            .find(|r| r.regex.is_match(text))
            .map(|r| r.rule_id.as_str())
    }
}

fn roster_rule(names: &[String]) -> Result<Option<CompiledRule>, PrivacyError> {
    let mut alternatives: Vec<String> = Vec::new();
    for name in names {
        let name = name.split_whitespace().collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            continue;
        }
        for part in name.split(' ').filter(|p| p.chars().count() >= 3) {
            alternatives.push(part.to_string());
        }
        alternatives.push(name);
    }
    if alternatives.is_empty() {
        return Ok(None);
    }
    alternatives.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    alternatives.dedup();
    let body = alternatives
        .iter()
        .map(|n| regex::escape(n).replace(r"\ ", r"\s+").replace(' ', r"\s+"))
        .collect::<Vec<_>>()
        .join("|");
    let regex = RegexBuilder::new(&format!(r"\b(?:{body})\b"))
        .case_insensitive(true)
        .build()
        .map_err(|source| PrivacyError::BadPattern {
            rule_id: ROSTER_RULE_ID.into(),
            source,
        })?;
    Ok(Some(CompiledRule {
        rule_id: ROSTER_RULE_ID.into(),
        regex,
        replacement: ROSTER_PLACEHOLDER.into(),
    }))
}

/// A placeholder region of the current text and the original bytes it stands for.
#[derive(Debug, Clone)]
struct Region {
    out_start: usize,
    out_end: usize,
    orig_start: usize,
    orig_end: usize,
    rule_id: String,
}

fn map_start(regions: &[Region], p: usize) -> usize {
    let mut shift: isize = 0;
    for r in regions {
        if r.out_start <= p && p < r.out_end {
            return r.orig_start;
        }
        if r.out_end <= p {
            shift += (r.orig_end - r.orig_start) as isize - (r.out_end - r.out_start) as isize;
        }
    }
    (p as isize + shift) as usize
}

fn map_end(regions: &[Region], p: usize) -> usize {
    let mut shift: isize = 0;
    for r in regions {
        if r.out_start < p && p <= r.out_end {
            return r.orig_end;
        }
        if r.out_end < p {
            shift += (r.orig_end - r.orig_start) as isize - (r.out_end - r.out_start) as isize;
        }
    }
    (p as isize + shift) as usize
}

/// Non-overlapping matches of `rules` in `text`; earlier rules claim text first.
fn find_matches<'r>(text: &str, rules: &[&'r CompiledRule]) -> Vec<(usize, usize, &'r CompiledRule)> {
    let mut taken: Vec<(usize, usize, &CompiledRule)> = Vec::new();
    for rule in rules {
        for m in rule.regex.find_iter(text) {
            if m.start() == m.end() {
                continue;
            }
            let overlaps = taken
                .iter()
                .any(|&(s, e, _)| m.start() < e && s < m.end());
            if !overlaps {
                taken.push((m.start(), m.end(), rule));
            }
        }
    }
    taken.sort_by_key(|&(s, _, _)| s);
    taken
}

/// Replaces every match of every active rule by its placeholder.
///
/// Spans are byte ranges over the original text, sorted and non-overlapping.
/// Passes repeat until no rule matches, which makes the result idempotent.
pub fn redact_text(text: &str, rules: &RedactionRuleSet) -> (String, Vec<RedactionSpan>) {
    let active = rules.active_rules();
    let mut current = text.to_string();
    let mut regions: Vec<Region> = Vec::new();
    for _ in 0..MAX_PASSES {
        let matches = find_matches(&current, &active);
        if matches.is_empty() {
            break;
        }
        let mut out = String::with_capacity(current.len());
        let mut next_regions = Vec::new();
        let mut cursor = 0;
        let mut old = regions.iter().peekable();
        for (s, e, rule) in matches {
            // carry over untouched regions that end before this match
            while let Some(r) = old.peek() {
                if r.out_end <= s {
                    if r.out_start >= cursor {
                        let shift = out.len() as isize + (r.out_start - cursor) as isize;
                        next_regions.push(Region {
                            out_start: shift as usize,
                            out_end: shift as usize + (r.out_end - r.out_start),
                            ..(*r).clone()
                        });
                    }
                    old.next();
                } else {
                    break;
                }
            }
            out.push_str(&current[cursor..s]);
            // regions overlapping the match are absorbed into the new one
            while old.peek().is_some_and(|r| r.out_start < e) {
                old.next();
            }
            let start = out.len();
            out.push_str(&rule.replacement);
            next_regions.push(Region {
                out_start: start,
                out_end: out.len(),
                orig_start: map_start(&regions, s),
                orig_end: map_end(&regions, e),
                rule_id: rule.rule_id.clone(),
            });
            cursor = e;
        }
        for r in old {
            if r.out_start >= cursor {
                let shift = out.len() + (r.out_start - cursor);
                next_regions.push(Region {
                    out_start: shift,
                    out_end: shift + (r.out_end - r.out_start),
                    ..r.clone()
                });
            }
        }
        out.push_str(&current[cursor..]);
        current = out;
        regions = next_regions;
    }
    let spans = regions
        .into_iter()
        .map(|r| RedactionSpan {
            start: r.orig_start,
            end: r.orig_end,
            rule_id: r.rule_id,
        })
        .collect();
    (current, spans)
}

type HmacSha256 = Hmac<Sha256>;

fn keyed_digest(key: &[u8], parts: &[&[u8]]) -> Vec<u8> {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts keys of any length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().to_vec()
}

/// Derives the per-course key from the deployment-wide salt.
pub fn course_key(master_salt: &[u8], course_id: &str) -> Vec<u8> {
    keyed_digest(master_salt, &[b"course-key\0", course_id.as_bytes()])
}

/// `stu-` plus the first eight hex digits of a keyed hash of the raw id.
///
/// If the raw id appears inside the hex part, a counter is mixed in until it
/// no longer does.
pub fn derive_pseudonym(key: &[u8], raw_id: &str) -> String {
    let mut round: u32 = 0;
    loop {
        let digest = keyed_digest(key, &[raw_id.as_bytes(), &round.to_be_bytes()]);
        let body = hex::encode(&digest[..4]);
        // The fixed prefix is public; only the derived part must avoid the id.
        if !body.contains(&raw_id.to_ascii_lowercase()) || round == u32::MAX {
            return format!("stu-{body}");
        }
        round += 1;
    }
}

/// Raw id to pseudonym mapping for one course. The reverse direction is kept
/// here only; it never leaves this type except through [`PseudonymMap::reverse`].
#[derive(Debug)]
pub struct PseudonymMap {
    key: Vec<u8>,
    entries: RwLock<BTreeMap<String, String>>,
}

impl PseudonymMap {
    pub fn new(course_salt: &[u8]) -> Result<Self, PrivacyError> {
        if course_salt.is_empty() {
            return Err(PrivacyError::EmptySalt);
        }
        Ok(Self {
            key: course_salt.to_vec(),
            entries: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn for_course(master_salt: &[u8], course_id: &str) -> Result<Self, PrivacyError> {
        if master_salt.is_empty() {
            return Err(PrivacyError::EmptySalt);
        }
        Self::new(&course_key(master_salt, course_id))
    }

    pub fn pseudonymize_id(&self, raw_id: &str) -> Result<String, PrivacyError> {
        if raw_id.trim().is_empty() {
            return Err(PrivacyError::InvalidId);
        }
        if let Some(p) = self.entries.read().expect("pseudonym map lock").get(raw_id) {
            return Ok(p.clone());
        }
        let handle = derive_pseudonym(&self.key, raw_id);
        let mut entries = self.entries.write().expect("pseudonym map lock");
        if entries.iter().any(|(raw, p)| *p == handle && raw != raw_id) {
            return Err(PrivacyError::Collision(handle));
        }
        entries.insert(raw_id.to_string(), handle.clone());
        Ok(handle)
    }

    /// Admin-only lookup from pseudonym back to raw id.
    pub fn reverse(&self, pseudonym: &str) -> Option<String> {
        self.entries
            .read()
            .expect("pseudonym map lock")
            .iter()
            .find(|(_, p)| p.as_str() == pseudonym)
            .map(|(raw, _)| raw.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("pseudonym map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredEvent {
    pub message: Message,
    pub student_ref: String,
}

/// Runs one raw event through the filter under the rule set's policy.
pub fn filter_event(
    event: &RawEvent,
    message_id: String,
    rules: &RedactionRuleSet,
    map: &PseudonymMap,
) -> Result<FilteredEvent, PrivacyError> {
    let student_ref = map.pseudonymize_id(&event.student_id_raw)?;
    let (message, _) = filter_message(event.author, event.timestamp, &event.text_raw, message_id, rules);
    Ok(FilteredEvent { message, student_ref })
}

/// Filters one message. Also returns the redacted text, which is computed
/// even when the policy keeps none of it.
pub fn filter_message(
    author: Author,
    timestamp: DateTime<Utc>,
    raw_text: &str,
    message_id: String,
    rules: &RedactionRuleSet,
) -> (Message, String) {
    let (redacted, spans) = redact_text(raw_text, rules);
    let code_blocks = count_code_blocks(&redacted);
    let token_count = tokenize(&redacted).len() as u32;
    let (text, redactions) = if rules.policy().keeps_text() {
        (redacted.clone(), spans)
    } else {
        (String::new(), Vec::new())
    };
    let message = Message {
        message_id,
        author,
        timestamp,
        text,
        redactions,
        code_blocks,
        token_count,
    };
    (message, redacted)
}

/// Course salt from the environment, if set.
pub fn salt_from_env() -> Option<Vec<u8>> {
    std::env::var(SALT_ENV)
        .ok()
        .filter(|s| !s.is_empty())
        .map(String::into_bytes)
}
