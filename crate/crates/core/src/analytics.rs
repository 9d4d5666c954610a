//! Class-level aggregation over session reports.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CategoryDistribution, PromptAttribute, TaxonomyConfig};
use crate::reflect::SessionReport;
use crate::risk::{RiskKind, Severity};
use crate::timefmt;

/// Half-open time window `[from, to)`; a missing bound is unbounded.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    #[serde(with = "timefmt::option")]
    pub from: Option<DateTime<Utc>>,
    #[serde(with = "timefmt::option")]
    pub to: Option<DateTime<Utc>>,
}

impl Window {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.from.is_none_or(|f| t >= f) && self.to.is_none_or(|e| t < e)
    }
}

/// Narrows a report set by window, ISO week and topic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReportFilter {
    pub window: Window,
    pub week: Option<String>,
    pub topic: Option<String>,
}

impl ReportFilter {
    pub fn matches(&self, r: &SessionReport) -> bool {
        let meta = &r.session;
        self.window.contains(meta.started_at)
            && self.week.as_ref().is_none_or(|w| {
                meta.week_tag.as_ref() == Some(w) || iso_week_label(meta.started_at) == *w
            })
            && self.topic.as_ref().is_none_or(|t| {
                let t = t.to_lowercase();
                meta.topic_tag.as_ref().is_some_and(|x| x.to_lowercase() == t)
                    || r.topic_term.as_ref() == Some(&t)
            })
    }

    pub fn apply<'a>(&self, reports: &'a [SessionReport]) -> Vec<&'a SessionReport> {
        reports.iter().filter(|r| self.matches(r)).collect()
    }
}

pub fn iso_week_label(t: DateTime<Utc>) -> String {
    let w = t.iso_week();
    format!("{}-W{:02}", w.year(), w.week())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtRiskStudent {
    pub student_ref: String,
    pub risk_kinds: Vec<RiskKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCount {
    pub term: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekBucket {
    pub week: String,
    pub distribution: CategoryDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOverview {
    pub course_id: String,
    pub window: Window,
    pub student_count: usize,
    pub session_count: usize,
    pub at_risk_students: Vec<AtRiskStudent>,
    pub aggregate_distribution: CategoryDistribution,
    pub top_topics: Vec<TopicCount>,
    pub weekly_series: Vec<WeekBucket>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverviewOptions {
    pub top_k: usize,
    /// A student is at risk with at least this many warn signals in the window.
    pub min_warn_signals: usize,
}

impl Default for OverviewOptions {
    fn default() -> Self {
        Self {
            top_k: 10,
            min_warn_signals: 1,
        }
    }
}

fn zero_distribution(taxonomy: &TaxonomyConfig) -> CategoryDistribution {
    CategoryDistribution::empty(taxonomy)
}

fn aggregate<'a>(
    reports: impl IntoIterator<Item = &'a SessionReport>,
    taxonomy: &TaxonomyConfig,
) -> CategoryDistribution {
    reports
        .into_iter()
        .fold(zero_distribution(taxonomy), |acc, r| acc.merged(&r.distribution))
}

/// Overview of the course's reports whose session started inside `window`.
pub fn class_overview(
    course_id: &str,
    reports: &[&SessionReport],
    window: &Window,
    taxonomy: &TaxonomyConfig,
    options: &OverviewOptions,
) -> ClassOverview {
    let inside: Vec<&SessionReport> = reports
        .iter()
        .copied()
        .filter(|r| r.session.course_id == course_id && window.contains(r.session.started_at))
        .collect();
    let students: BTreeSet<&str> = inside.iter().map(|r| r.session.student_ref.as_str()).collect();
    let mut warn: BTreeMap<&str, (usize, BTreeSet<RiskKind>)> = BTreeMap::new();
    for r in &inside {
        for sig in r.risks.iter().filter(|s| s.severity == Severity::Warn) {
            let entry = warn.entry(&r.session.student_ref).or_default();
            entry.0 += 1;
            entry.1.insert(sig.kind);
        }
    }
    let at_risk_students = warn
        .into_iter()
        .filter(|(_, (n, _))| *n >= options.min_warn_signals.max(1))
        .map(|(s, (_, kinds))| AtRiskStudent {
            student_ref: s.to_string(),
            risk_kinds: kinds.into_iter().collect(),
        })
        .collect();
    ClassOverview {
        course_id: course_id.to_string(),
        window: window.clone(),
        student_count: students.len(),
        session_count: inside.len(),
        at_risk_students,
        aggregate_distribution: aggregate(inside.iter().copied(), taxonomy),
        top_topics: top_topics(&inside, options.top_k.max(1)),
        weekly_series: usage_time_series(&inside, taxonomy),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankDimension {
    Sessions,
    WarnSignals,
    AnswerSeekingRatio,
    Prompts,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown ranking dimension `{0}` (expected sessions, warn_signals, answer_seeking_ratio or prompts)")]
pub struct UnknownDimension(pub String);

impl FromStr for RankDimension {
    type Err = UnknownDimension;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sessions" => Ok(RankDimension::Sessions),
            "warn_signals" => Ok(RankDimension::WarnSignals),
            "answer_seeking_ratio" => Ok(RankDimension::AnswerSeekingRatio),
            "prompts" => Ok(RankDimension::Prompts),
            other => Err(UnknownDimension(other.to_string())),
        }
    }
}

/// Per-student activity row used by the roster and the ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RosterRow {
    pub student_ref: String,
    pub sessions: usize,
    pub prompts: usize,
    pub warn_signals: usize,
    pub answer_seeking_ratio: f64,
    pub risk_kinds: Vec<RiskKind>,
}

impl RosterRow {
    fn value(&self, dim: RankDimension) -> f64 {
        match dim {
            RankDimension::Sessions => self.sessions as f64,
            RankDimension::WarnSignals => self.warn_signals as f64,
            RankDimension::AnswerSeekingRatio => self.answer_seeking_ratio,
            RankDimension::Prompts => self.prompts as f64,
        }
    }
}

/// Roster rows sorted by pseudonym.
pub fn roster(reports: &[&SessionReport], taxonomy: &TaxonomyConfig) -> Vec<RosterRow> {
    #[derive(Default)]
    struct Acc {
        sessions: usize,
        prompts: usize,
        seeking: usize,
        warn: usize,
        kinds: BTreeSet<RiskKind>,
    }
    let mut per: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in reports {
        let acc = per.entry(&r.session.student_ref).or_default();
        acc.sessions += 1;
        acc.prompts += r.labels.len();
        acc.seeking += r
            .labels
            .iter()
            .filter(|l| {
                taxonomy
                    .fine_type(&l.fine_id)
                    .is_some_and(|f| f.has(PromptAttribute::AnswerSeeking))
            })
            .count();
        for sig in &r.risks {
            acc.kinds.insert(sig.kind);
            if sig.severity == Severity::Warn {
                acc.warn += 1;
            }
        }
    }
    per.into_iter()
        .map(|(s, a)| RosterRow {
            student_ref: s.to_string(),
            sessions: a.sessions,
            prompts: a.prompts,
            warn_signals: a.warn,
            answer_seeking_ratio: if a.prompts == 0 {
                0.0
            } else {
                a.seeking as f64 / a.prompts as f64
            },
            risk_kinds: a.kinds.into_iter().collect(),
        })
        .collect()
}

/// Descending by the chosen dimension; ties by pseudonym.
pub fn rank_students(
    reports: &[&SessionReport],
    dimension: RankDimension,
    taxonomy: &TaxonomyConfig,
) -> Vec<RosterRow> {
    let mut rows = roster(reports, taxonomy);
    rows.sort_by(|a, b| {
        b.value(dimension)
            .total_cmp(&a.value(dimension))
            .then_with(|| a.student_ref.cmp(&b.student_ref))
    });
    rows
}

/// Counts each session's top topic term; top `k` by count, ties lexicographic.
pub fn top_topics(reports: &[&SessionReport], k: usize) -> Vec<TopicCount> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in reports {
        if let Some(t) = &r.topic_term {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut all: Vec<TopicCount> = counts
        .into_iter()
        .map(|(term, count)| TopicCount {
            term: term.to_string(),
            count,
        })
        .collect();
    all.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.term.cmp(&b.term)));
    all.truncate(k);
    all
}

fn week_monday(t: DateTime<Utc>) -> NaiveDate {
    let w = t.iso_week();
    NaiveDate::from_isoywd_opt(w.year(), w.week(), chrono::Weekday::Mon).expect("valid iso week")
}

/// Weekly label distributions by ISO week of session start, with empty
/// weeks inside the range filled with zero counts.
pub fn usage_time_series(reports: &[&SessionReport], taxonomy: &TaxonomyConfig) -> Vec<WeekBucket> {
    let mut buckets: BTreeMap<NaiveDate, CategoryDistribution> = BTreeMap::new();
    for r in reports {
        let entry = buckets
            .entry(week_monday(r.session.started_at))
            .or_insert_with(|| zero_distribution(taxonomy));
        *entry = entry.merged(&r.distribution);
    }
    let (Some(&first), Some(&last)) = (buckets.keys().next(), buckets.keys().next_back()) else {
        return Vec::new();
    };
    let mut series = Vec::new();
    let mut monday = first;
    while monday <= last {
        let dist = buckets
            .remove(&monday)
            .unwrap_or_else(|| zero_distribution(taxonomy));
        let w = monday.iso_week();
        series.push(WeekBucket {
            week: format!("{}-W{:02}", w.year(), w.week()),
            distribution: dist,
        });
        monday += TimeDelta::days(7);
    }
    series
}
