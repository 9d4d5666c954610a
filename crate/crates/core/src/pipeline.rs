//! End-to-end batch path: raw events through the filter, sessionization,
//! report building and class aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeDelta, Utc};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{class_overview, iso_week_label, ClassOverview, OverviewOptions, Window};
use crate::classify::{default_taxonomy, load_taxonomy, TaxonomyLoadError};
use crate::config::AppConfig;
use crate::ingest::{sessionize, RawEvent, Reject};
use crate::model::{PromptLabel, Session, TaxonomyConfig};
use crate::privacy::{
    filter_event, PrivacyError, PseudonymMap, RedactionRuleSet, RuleSetConfig,
};
use crate::reflect::{build_session_report, ReportBackends, ReportError, SessionReport};
use crate::store::{Store, StoreError};
use crate::risk::{
    detect_repeated_misconception, FollowUpTemplates, RiskConfig, RiskError, RiskSignal,
};

/// Used when no salt is configured; fine for tests and demos only.
pub const DEV_SALT: &[u8] = b"tutorlens-development-salt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyLoadError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything the batch path needs, resolved from config and environment.
#[derive(Clone)]
pub struct PipelineConfig {
    pub idle_gap: TimeDelta,
    pub redaction: RedactionRuleSet,
    pub master_salt: Vec<u8>,
    pub taxonomy: TaxonomyConfig,
    pub risk: RiskConfig,
    pub overview: OverviewOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            idle_gap: TimeDelta::minutes(crate::ingest::DEFAULT_IDLE_GAP_MINUTES),
            redaction: RedactionRuleSet::default(),
            master_salt: DEV_SALT.to_vec(),
            taxonomy: default_taxonomy(),
            risk: RiskConfig::default(),
            overview: OverviewOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_app_config(cfg: &AppConfig, master_salt: Vec<u8>) -> Result<Self, PipelineError> {
        let redaction = match &cfg.privacy.rules_path {
            Some(p) => RedactionRuleSet::load(p)?,
            None => RedactionRuleSet::from_config(RuleSetConfig {
                rules: cfg
                    .privacy
                    .rules
                    .clone()
                    .unwrap_or_else(crate::privacy::default_rules),
                ..Default::default()
            })?,
        }
        .with_policy(cfg.privacy.policy);
        let redaction = if cfg.privacy.roster_names.is_empty() {
            redaction
        } else {
            redaction.with_roster(&cfg.privacy.roster_names)?
        };
        let taxonomy = match &cfg.taxonomy.path {
            Some(p) => load_taxonomy(p)?,
            None => default_taxonomy(),
        };
        let templates = match &cfg.risk.templates_path {
            Some(p) => FollowUpTemplates::load(p)?,
            None => FollowUpTemplates::default(),
        };
        Ok(Self {
            idle_gap: TimeDelta::minutes(cfg.ingest.idle_gap_minutes.max(1)),
            redaction,
            master_salt,
            taxonomy,
            risk: RiskConfig {
                thresholds: cfg.risk.thresholds.clone().unwrap_or_default(),
                templates,
            },
            overview: OverviewOptions::default(),
        })
    }

    pub fn backends(&self) -> ReportBackends {
        ReportBackends {
            classifier: None,
            summarizer: None,
            risk: self.risk.clone(),
            redaction: self.redaction.clone(),
        }
    }
}

/// Deterministic id for a gap-delimited session.
pub fn derived_session_id(course_id: &str, student_ref: &str, started_at: DateTime<Utc>) -> String {
    let mut h = Sha256::new();
    h.update(course_id.as_bytes());
    h.update([0]);
    h.update(student_ref.as_bytes());
    h.update([0]);
    h.update(crate::timefmt::format(&started_at).as_bytes());
    format!("ses-{}", hex::encode(&h.finalize()[..6]))
}

pub fn message_id(session_id: &str, index: usize) -> String {
    format!("{session_id}-m{index:03}")
}

/// Filters every event and groups them into sessions.
pub fn assemble_sessions(
    events: Vec<RawEvent>,
    config: &PipelineConfig,
) -> Result<Vec<Session>, PipelineError> {
    let mut maps: BTreeMap<String, PseudonymMap> = BTreeMap::new();
    let mut sessions = Vec::new();
    for group in sessionize(events, config.idle_gap) {
        let first = &group[0];
        let course = first.course_id.clone();
        if !maps.contains_key(&course) {
            maps.insert(course.clone(), PseudonymMap::for_course(&config.master_salt, &course)?);
        }
        let map = &maps[&course];
        let student_ref = map.pseudonymize_id(&first.student_id_raw)?;
        let started_at = first.timestamp;
        let ended_at = group.last().expect("groups are non-empty").timestamp;
        let session_id = first
            .explicit_session_id
            .clone()
            .unwrap_or_else(|| derived_session_id(&course, &student_ref, started_at));
        let topic_tag = group.iter().find_map(|e| e.topic_tag.clone());
        let messages = group
            .iter()
            .enumerate()
            .map(|(i, ev)| {
                filter_event(ev, message_id(&session_id, i), &config.redaction, map)
                    .map(|f| f.message)
            })
            .collect::<Result<Vec<_>, _>>()?;
        sessions.push(Session {
            session_id,
            student_ref,
            course_id: course,
            week_tag: Some(iso_week_label(started_at)),
            topic_tag,
            logging_policy: config.redaction.policy(),
            messages,
            started_at,
            ended_at,
        });
    }
    Ok(sessions)
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub sessions: Vec<Session>,
    /// One report per session, sorted by session id.
    pub reports: Vec<SessionReport>,
    pub overviews: Vec<ClassOverview>,
    /// Cross-session signals, one per flagged student at most.
    pub student_signals: Vec<RiskSignal>,
}

/// Builds reports in parallel; output order is by session id. Each report's
/// `created_at` is its session's end, so reruns are byte-identical.
pub fn build_reports(
    sessions: &[Session],
    config: &PipelineConfig,
) -> Result<Vec<SessionReport>, PipelineError> {
    let backends = config.backends();
    let mut reports = sessions
        .par_iter()
        .map(|s| build_session_report(s, &config.taxonomy, &backends, s.ended_at))
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| a.session.session_id.cmp(&b.session.session_id));
    Ok(reports)
}

pub fn student_signals(
    sessions: &[Session],
    reports: &[SessionReport],
    config: &PipelineConfig,
) -> Result<Vec<RiskSignal>, PipelineError> {
    let labels: BTreeMap<&str, &Vec<PromptLabel>> = reports
        .iter()
        .map(|r| (r.session.session_id.as_str(), &r.labels))
        .collect();
    type History = Vec<(Session, Vec<PromptLabel>)>;
    let mut by_student: BTreeMap<(&str, &str), History> = BTreeMap::new();
    for s in sessions {
        let l = labels.get(s.session_id.as_str()).map(|l| (*l).clone()).unwrap_or_default();
        by_student
            .entry((&s.course_id, &s.student_ref))
            .or_default()
            .push((s.clone(), l));
    }
    let mut out = Vec::new();
    for ((_, student), mut group) in by_student {
        group.sort_by(|a, b| a.0.session_id.cmp(&b.0.session_id));
        if let Some(sig) =
            detect_repeated_misconception(&group, student, &config.taxonomy, &config.risk)?.into_signal()
        {
            out.push(sig);
        }
    }
    Ok(out)
}

pub fn overviews(reports: &[SessionReport], config: &PipelineConfig) -> Vec<ClassOverview> {
    let mut courses: BTreeMap<&str, Vec<&SessionReport>> = BTreeMap::new();
    for r in reports {
        courses.entry(&r.session.course_id).or_default().push(r);
    }
    courses
        .into_iter()
        .map(|(course, rs)| class_overview(course, &rs, &Window::default(), &config.taxonomy, &config.overview))
        .collect()
}

pub fn analyze_events(events: Vec<RawEvent>, config: &PipelineConfig) -> Result<BatchOutput, PipelineError> {
    let sessions = assemble_sessions(events, config)?;
    let reports = build_reports(&sessions, config)?;
    let student_signals = student_signals(&sessions, &reports, config)?;
    let overviews = overviews(&reports, config);
    Ok(BatchOutput {
        sessions,
        reports,
        overviews,
        student_signals,
    })
}

/// Appends the batch's sessions and reports to the store. Sessions already
/// present are left alone; returns (new sessions, new report versions).
pub fn persist_batch(store: &mut Store, output: &BatchOutput) -> Result<(usize, usize), StoreError> {
    let mut sessions = 0;
    for s in &output.sessions {
        if store.session(&s.session_id).is_none() {
            store.append_session(s.clone())?;
            sessions += 1;
        }
    }
    let mut reports = 0;
    for r in &output.reports {
        if store.put_report(r.clone())? {
            reports += 1;
        }
    }
    Ok((sessions, reports))
}

/// File-name-safe form of an id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `reports/<session>.json`, `overview.json`, `student_signals.jsonl`
/// and `rejects.jsonl` under `out_dir`.
pub fn write_batch(out_dir: &Path, output: &BatchOutput, rejects: &[Reject]) -> Result<(), PipelineError> {
    let reports_dir = out_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(io_err(&reports_dir))?;
    for r in &output.reports {
        let path = reports_dir.join(format!("{}.json", file_stem(&r.session.session_id)));
        fs::write(&path, format!("{}\n", r.to_canonical_json())).map_err(io_err(&path))?;
    }
    let path = out_dir.join("overview.json");
    let body = serde_json::to_string_pretty(&output.overviews).expect("overviews serialize");
    fs::write(&path, format!("{body}\n")).map_err(io_err(&path))?;
    write_jsonl(&out_dir.join("student_signals.jsonl"), &output.student_signals)?;
    write_jsonl(&out_dir.join("rejects.jsonl"), rejects)?;
    Ok(())
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for row in rows {
        let line = serde_json::to_string(row).expect("rows serialize");
        writeln!(f, "{line}").map_err(io_err(path))?;
    }
    Ok(())
}
