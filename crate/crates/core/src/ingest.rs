//! Transcript parsing and idle-gap sessionization.

use std::collections::BTreeMap;
use std::io::BufRead;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Author;
use crate::timefmt;

pub const DEFAULT_IDLE_GAP_MINUTES: i64 = 30;

/// One dialogue event as captured, before the privacy filter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RawEvent {
    pub student_id_raw: String,
    pub author: Author,
    #[serde(with = "timefmt")]
    pub timestamp: DateTime<Utc>,
    pub text_raw: String,
    pub course_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_tag: Option<String>,
}

/// A line that could not be parsed, kept for operator audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTranscript {
    pub events: Vec<RawEvent>,
    pub rejects: Vec<Reject>,
}

impl ParsedTranscript {
    /// Fraction of non-blank lines that were rejected.
    pub fn reject_rate(&self) -> f64 {
        let total = self.events.len() + self.rejects.len();
        if total == 0 {
            0.0
        } else {
            self.rejects.len() as f64 / total as f64
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read transcript stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus corrupt: {} of {total} lines malformed", .rejects.len())]
    CorpusCorrupt { total: usize, rejects: Vec<Reject> },
}

/// Parses one record line. Returned errors become reject reasons.
pub fn parse_event_line(line: &str) -> Result<RawEvent, String> {
    let ev: RawEvent = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if ev.student_id_raw.trim().is_empty() {
        return Err("empty student_id_raw".into());
    }
    if ev.course_id.trim().is_empty() {
        return Err("empty course_id".into());
    }
    Ok(ev)
}

/// Parses a line-delimited record stream. Blank lines are skipped; malformed
/// lines are collected with their 1-based line numbers.
pub fn parse_transcript<R: BufRead>(stream: R) -> Result<ParsedTranscript, IngestError> {
    let mut parsed = ParsedTranscript::default();
    for (idx, line) in stream.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_event_line(&line) {
            Ok(ev) => parsed.events.push(ev),
            Err(reason) => parsed.rejects.push(Reject {
                line: idx + 1,
                reason,
            }),
        }
    }
    let total = parsed.events.len() + parsed.rejects.len();
    if parsed.rejects.len() * 2 > total {
        return Err(IngestError::CorpusCorrupt {
            total,
            rejects: parsed.rejects,
        });
    }
    Ok(parsed)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum GroupKey {
    Explicit {
        course: String,
        student: String,
        id: String,
    },
    Gap {
        course: String,
        student: String,
    },
}

/// Groups events into sessions.
///
/// Events sharing an explicit session id (per student and course) form one
/// group. Remaining events of a student start a new group whenever the gap
/// to that student's previous event exceeds `idle_gap`. Groups come back
/// ordered by start time; the result does not depend on input order.
pub fn sessionize(events: Vec<RawEvent>, idle_gap: TimeDelta) -> Vec<Vec<RawEvent>> {
    let mut buckets: BTreeMap<GroupKey, Vec<RawEvent>> = BTreeMap::new();
    for ev in events {
        let key = match &ev.explicit_session_id {
            Some(id) => GroupKey::Explicit {
                course: ev.course_id.clone(),
                student: ev.student_id_raw.clone(),
                id: id.clone(),
            },
            None => GroupKey::Gap {
                course: ev.course_id.clone(),
                student: ev.student_id_raw.clone(),
            },
        };
        buckets.entry(key).or_default().push(ev);
    }
    let mut groups = Vec::new();
    for (key, mut evs) in buckets {
        evs.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.cmp(b)));
        match key {
            GroupKey::Explicit { .. } => groups.push(evs),
            GroupKey::Gap { .. } => {
                let mut current: Vec<RawEvent> = Vec::new();
                for ev in evs {
                    if let Some(last) = current.last() {
                        if ev.timestamp - last.timestamp > idle_gap {
                            groups.push(std::mem::take(&mut current));
                        }
                    }
                    current.push(ev);
                }
                if !current.is_empty() {
                    groups.push(current);
                }
            }
        }
    }
    groups.sort_by(|a, b| a[0].timestamp.cmp(&b[0].timestamp).then_with(|| a.cmp(b)));
    groups
}
