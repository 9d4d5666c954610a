//! Learning record store: one append-only log per course for sessions and
//! reports, one audit log and one policy log. The in-memory index is
//! rebuilt from the logs on open.

pub mod log;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LoggingPolicy, Message, Role, Session, SessionError};
use crate::reflect::SessionReport;
use crate::timefmt;

pub use self::log::{decode_log, LogError, RecordLog};

const AUDIT_FILE: &str = "audit.log";
const POLICY_FILE: &str = "policy.log";
const COURSE_PREFIX: &str = "course-";
const LOG_SUFFIX: &str = ".log";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session `{0}` already exists")]
    Duplicate(String),
    #[error("`{0}` not found")]
    NotFound(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    InvalidSession(#[from] SessionError),
    #[error("storage failure: {0}")]
    Log(#[from] LogError),
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record in {file}: {source}")]
    Corrupt {
        file: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Who is asking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requester {
    pub subject: String,
    pub role: Role,
    pub course_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub role: Role,
    pub principal: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    ViewSummary,
    RequestEvidence,
    GrantEvidence,
    ViewEvidence,
    ChangeSharing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditTarget {
    pub student_ref: String,
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Allowed,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub entry_id: String,
    pub actor: Actor,
    pub action: AuditAction,
    pub target: AuditTarget,
    #[serde(with = "timefmt")]
    pub timestamp: DateTime<Utc>,
    pub justification: Option<String>,
    pub outcome: AuditOutcome,
    pub detail: Option<String>,
}

/// An audit entry before the store assigns its id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditDraft {
    pub actor: Actor,
    pub action: AuditAction,
    pub target: AuditTarget,
    pub timestamp: DateTime<Utc>,
    pub justification: Option<String>,
    pub outcome: AuditOutcome,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingLevel {
    #[default]
    SummaryOnly,
    RiskEvidenceOk,
    FullRedactedOk,
}

impl SharingLevel {
    pub fn permits_evidence(self) -> bool {
        self >= SharingLevel::RiskEvidenceOk
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingPolicy {
    pub student_ref: String,
    pub level: SharingLevel,
    #[serde(with = "timefmt::option")]
    pub updated_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceScope {
    RiskEvidenceSpans,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceGrant {
    pub grant_id: String,
    pub session_id: String,
    pub instructor_id: String,
    pub reason: String,
    #[serde(with = "timefmt")]
    pub granted_at: DateTime<Utc>,
    #[serde(with = "timefmt")]
    pub expires_at: DateTime<Utc>,
    pub scope: EvidenceScope,
}

/// What a requester may see of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportView {
    pub report: SessionReport,
    pub sharing_level: SharingLevel,
    /// Whether an instructor could request the risk evidence right now.
    pub evidence_requestable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "record", rename_all = "snake_case")]
enum CourseRecord {
    Session(Session),
    LiveMessage {
        session_id: String,
        course_id: String,
        student_ref: String,
        topic_tag: Option<String>,
        week_tag: Option<String>,
        logging_policy: LoggingPolicy,
        message: Message,
    },
    Report(SessionReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "record", rename_all = "snake_case")]
enum PolicyRecord {
    Sharing(SharingPolicy),
    Grant(EvidenceGrant),
}

#[derive(Debug, Default)]
struct Index {
    sessions: BTreeMap<String, Session>,
    reports: BTreeMap<String, Vec<SessionReport>>,
    audit: Vec<AuditEntry>,
    sharing: BTreeMap<String, SharingPolicy>,
    grants: Vec<EvidenceGrant>,
}

impl Index {
    fn apply_course(&mut self, rec: CourseRecord) {
        match rec {
            CourseRecord::Session(s) => {
                self.sessions.insert(s.session_id.clone(), s);
            }
            CourseRecord::LiveMessage {
                session_id,
                course_id,
                student_ref,
                topic_tag,
                week_tag,
                logging_policy,
                message,
            } => match self.sessions.get_mut(&session_id) {
                Some(s) => {
                    s.ended_at = s.ended_at.max(message.timestamp);
                    s.messages.push(message);
                }
                None => {
                    let ts = message.timestamp;
                    self.sessions.insert(
                        session_id.clone(),
                        Session {
                            session_id,
                            student_ref,
                            course_id,
                            week_tag,
                            topic_tag,
                            logging_policy,
                            messages: vec![message],
                            started_at: ts,
                            ended_at: ts,
                        },
                    );
                }
            },
            CourseRecord::Report(r) => {
                self.reports
                    .entry(r.session.session_id.clone())
                    .or_default()
                    .push(r);
            }
        }
    }

    fn apply_policy(&mut self, rec: PolicyRecord) {
        match rec {
            PolicyRecord::Sharing(p) => {
                self.sharing.insert(p.student_ref.clone(), p);
            }
            PolicyRecord::Grant(g) => self.grants.push(g),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync after every append.
    pub sync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { sync: true }
    }
}

/// File name of a course log; the course id is hex-encoded so any id is safe.
pub fn course_log_name(course_id: &str) -> String {
    format!("{COURSE_PREFIX}{}{LOG_SUFFIX}", hex::encode(course_id))
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    options: StoreOptions,
    courses: BTreeMap<String, RecordLog>,
    audit_log: RecordLog,
    policy_log: RecordLog,
    index: Index,
}

fn decode<T: for<'de> Deserialize<'de>>(file: &Path, bytes: &[u8]) -> Result<T, StoreError> {
    serde_json::from_slice(bytes).map_err(|source| StoreError::Corrupt {
        file: file.display().to_string(),
        source,
    })
}

fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("store records serialize")
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        Self::open_with(dir, StoreOptions::default())
    }

    pub fn open_with(dir: &Path, options: StoreOptions) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir)?;
        let mut index = Index::default();
        let mut courses = BTreeMap::new();
        let mut names: Vec<(String, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(hexed) = name
                .strip_prefix(COURSE_PREFIX)
                .and_then(|n| n.strip_suffix(LOG_SUFFIX))
            else {
                continue;
            };
            let Some(course) = hex::decode(hexed).ok().and_then(|b| String::from_utf8(b).ok()) else {
                continue;
            };
            names.push((course, path));
        }
        names.sort();
        for (course, path) in names {
            let (log, records) = RecordLog::open(&path, options.sync)?;
            for bytes in records {
                index.apply_course(decode(&path, &bytes)?);
            }
            courses.insert(course, log);
        }
        let audit_path = dir.join(AUDIT_FILE);
        let (audit_log, records) = RecordLog::open(&audit_path, options.sync)?;
        for bytes in records {
            index.audit.push(decode(&audit_path, &bytes)?);
        }
        let policy_path = dir.join(POLICY_FILE);
        let (policy_log, records) = RecordLog::open(&policy_path, options.sync)?;
        for bytes in records {
            index.apply_policy(decode(&policy_path, &bytes)?);
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            options,
            courses,
            audit_log,
            policy_log,
            index,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn course_log(&mut self, course_id: &str) -> Result<&mut RecordLog, StoreError> {
        if !self.courses.contains_key(course_id) {
            let path = self.dir.join(course_log_name(course_id));
            let (log, _) = RecordLog::open(&path, self.options.sync)?;
            self.courses.insert(course_id.to_string(), log);
        }
        Ok(self.courses.get_mut(course_id).expect("inserted above"))
    }

    fn append_course(&mut self, course_id: &str, rec: CourseRecord) -> Result<(), StoreError> {
        let bytes = encode(&rec);
        self.course_log(course_id)?.append(&bytes)?;
        self.index.apply_course(rec);
        Ok(())
    }

    /// Persists a filtered session. Re-appending an existing id is rejected.
    pub fn append_session(&mut self, session: Session) -> Result<String, StoreError> {
        session.validate()?;
        if self.index.sessions.contains_key(&session.session_id) {
            return Err(StoreError::Duplicate(session.session_id));
        }
        let id = session.session_id.clone();
        let course = session.course_id.clone();
        self.append_course(&course, CourseRecord::Session(session))?;
        Ok(id)
    }

    /// Appends one relayed message, creating the session on first use.
    #[allow(clippy::too_many_arguments)]
    pub fn append_live_message(
        &mut self,
        session_id: &str,
        course_id: &str,
        student_ref: &str,
        topic_tag: Option<String>,
        week_tag: Option<String>,
        logging_policy: LoggingPolicy,
        message: Message,
    ) -> Result<(), StoreError> {
        if let Some(existing) = self.index.sessions.get(session_id) {
            if existing.student_ref != student_ref || existing.course_id != course_id {
                return Err(StoreError::Duplicate(session_id.to_string()));
            }
        }
        self.append_course(
            course_id,
            CourseRecord::LiveMessage {
                session_id: session_id.to_string(),
                course_id: course_id.to_string(),
                student_ref: student_ref.to_string(),
                topic_tag,
                week_tag,
                logging_policy,
                message,
            },
        )
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.index.sessions.get(session_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.index.sessions.values()
    }

    pub fn sessions_for_student<'a>(&'a self, student_ref: &'a str) -> impl Iterator<Item = &'a Session> {
        self.sessions().filter(move |s| s.student_ref == student_ref)
    }

    /// Latest session of a student by end time.
    pub fn latest_session_for(&self, course_id: &str, student_ref: &str) -> Option<&Session> {
        self.sessions()
            .filter(|s| s.student_ref == student_ref && s.course_id == course_id)
            .max_by(|a, b| a.ended_at.cmp(&b.ended_at).then(a.session_id.cmp(&b.session_id)))
    }

    /// Stores a report version. Returns false when the identical version is
    /// already the latest one.
    pub fn put_report(&mut self, report: SessionReport) -> Result<bool, StoreError> {
        let sid = report.session.session_id.clone();
        if !self.index.sessions.contains_key(&sid) {
            return Err(StoreError::NotFound(sid));
        }
        if self
            .latest_report(&sid)
            .is_some_and(|r| r.report_id == report.report_id)
        {
            return Ok(false);
        }
        let course = report.session.course_id.clone();
        self.append_course(&course, CourseRecord::Report(report))?;
        Ok(true)
    }

    pub fn latest_report(&self, session_id: &str) -> Option<&SessionReport> {
        self.index.reports.get(session_id).and_then(|v| v.last())
    }

    pub fn report_versions(&self, session_id: &str) -> &[SessionReport] {
        self.index
            .reports
            .get(session_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Latest report of every session in the course, ordered by session id.
    pub fn reports_for_course(&self, course_id: &str) -> Vec<&SessionReport> {
        self.index
            .reports
            .values()
            .filter_map(|v| v.last())
            .filter(|r| r.session.course_id == course_id)
            .collect()
    }

    /// Report as seen by `requester`. Students see only their own reports;
    /// instructors see reports of their course. Reports never carry message
    /// text, so the view is the report itself plus access metadata.
    pub fn get_report(
        &self,
        session_id: &str,
        requester: &Requester,
        sharing: &SharingPolicy,
    ) -> Result<ReportView, StoreError> {
        let report = self
            .latest_report(session_id)
            .ok_or_else(|| StoreError::NotFound(session_id.to_string()))?;
        check_session_access(requester, &report.session.student_ref, &report.session.course_id)?;
        Ok(ReportView {
            report: report.clone(),
            sharing_level: sharing.level,
            evidence_requestable: report.has_warn() && sharing.level.permits_evidence(),
        })
    }

    pub fn record_audit(&mut self, draft: AuditDraft) -> Result<String, StoreError> {
        let timestamp = match self.index.audit.last() {
            Some(prev) if prev.timestamp > draft.timestamp => prev.timestamp,
            _ => draft.timestamp,
        };
        let entry = AuditEntry {
            entry_id: format!("aud-{:08}", self.index.audit.len() + 1),
            actor: draft.actor,
            action: draft.action,
            target: draft.target,
            timestamp,
            justification: draft.justification,
            outcome: draft.outcome,
            detail: draft.detail,
        };
        self.audit_log.append(&encode(&entry))?;
        let id = entry.entry_id.clone();
        self.index.audit.push(entry);
        Ok(id)
    }

    /// Audit entries are never removed.
    pub fn delete_audit(&mut self, _entry_id: &str) -> Result<(), StoreError> {
        Err(StoreError::Unsupported("audit entries are append-only"))
    }

    pub fn audit_entries(&self) -> &[AuditEntry] {
        &self.index.audit
    }

    /// Admins read everything; students read entries that target them.
    pub fn audit_for(&self, requester: &Requester) -> Result<Vec<&AuditEntry>, StoreError> {
        match requester.role {
            Role::Admin => Ok(self.index.audit.iter().collect()),
            Role::Student => Ok(self
                .index
                .audit
                .iter()
                .filter(|e| e.target.student_ref == requester.subject)
                .collect()),
            Role::Instructor => Err(StoreError::Forbidden("audit log is admin or student only".into())),
        }
    }

    /// Current sharing policy; `summary_only` when never set.
    pub fn sharing_policy(&self, student_ref: &str) -> SharingPolicy {
        self.index
            .sharing
            .get(student_ref)
            .cloned()
            .unwrap_or_else(|| SharingPolicy {
                student_ref: student_ref.to_string(),
                level: SharingLevel::default(),
                updated_at: None,
            })
    }

    /// Only the student themself or an admin may change the level; every
    /// change is audited.
    pub fn set_sharing_policy(
        &mut self,
        requester: &Requester,
        student_ref: &str,
        level: SharingLevel,
        now: DateTime<Utc>,
    ) -> Result<SharingPolicy, StoreError> {
        let allowed = match requester.role {
            Role::Admin => true,
            Role::Student => requester.subject == student_ref,
            Role::Instructor => false,
        };
        if !allowed {
            return Err(StoreError::Forbidden(
                "sharing level can only be set by the student or an admin".into(),
            ));
        }
        let previous = self.sharing_policy(student_ref).level;
        let policy = SharingPolicy {
            student_ref: student_ref.to_string(),
            level,
            updated_at: Some(now),
        };
        let rec = PolicyRecord::Sharing(policy.clone());
        self.policy_log.append(&encode(&rec))?;
        self.index.apply_policy(rec);
        self.record_audit(AuditDraft {
            actor: Actor {
                role: requester.role,
                principal: requester.subject.clone(),
            },
            action: AuditAction::ChangeSharing,
            target: AuditTarget {
                student_ref: student_ref.to_string(),
                session_id: None,
            },
            timestamp: now,
            justification: None,
            outcome: AuditOutcome::Allowed,
            detail: Some(format!(
                "{} -> {}",
                serde_json::to_string(&previous).unwrap_or_default().trim_matches('"'),
                serde_json::to_string(&level).unwrap_or_default().trim_matches('"')
            )),
        })?;
        Ok(policy)
    }

    pub fn add_grant(&mut self, grant: EvidenceGrant) -> Result<(), StoreError> {
        let rec = PolicyRecord::Grant(grant);
        self.policy_log.append(&encode(&rec))?;
        self.index.apply_policy(rec);
        Ok(())
    }

    pub fn next_grant_id(&self) -> String {
        format!("grant-{:06}", self.index.grants.len() + 1)
    }

    /// An unexpired grant for this instructor and session.
    pub fn active_grant(
        &self,
        instructor_id: &str,
        session_id: &str,
        now: DateTime<Utc>,
    ) -> Option<&EvidenceGrant> {
        self.index
            .grants
            .iter()
            .rev()
            .find(|g| g.instructor_id == instructor_id && g.session_id == session_id && now < g.expires_at)
    }

    pub fn grants(&self) -> &[EvidenceGrant] {
        &self.index.grants
    }
}

/// Students may access only their own sessions; instructors only sessions of
/// their course; admins everything.
pub fn check_session_access(
    requester: &Requester,
    student_ref: &str,
    course_id: &str,
) -> Result<(), StoreError> {
    let ok = match requester.role {
        Role::Admin => true,
        Role::Instructor => requester.course_id == course_id,
        Role::Student => requester.subject == student_ref,
    };
    if ok {
        Ok(())
    } else {
        Err(StoreError::Forbidden(format!(
            "{} `{}` may not access this session",
            requester.role, requester.subject
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Author;
    use chrono::{TimeDelta, TimeZone};

    fn session(id: &str, student: &str) -> Session {
        let t = Utc.with_ymd_and_hms(2024, 9, 2, 9, 0, 0).unwrap();
        Session {
            session_id: id.into(),
            student_ref: student.into(),
            course_id: "cs101".into(),
            week_tag: None,
            topic_tag: None,
            logging_policy: LoggingPolicy::RedactedLog,
            messages: vec![Message {
                message_id: format!("{id}-m000"),
                author: Author::Student,
                timestamp: t,
                text: "hello".into(),
                redactions: vec![],
                code_blocks: 0,
                token_count: 1,
            }],
            started_at: t,
            ended_at: t,
        }
    }

    fn requester(subject: &str, role: Role) -> Requester {
        Requester {
            subject: subject.into(),
            role,
            course_id: "cs101".into(),
        }
    }

    fn now() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 9, 3, 9, 0, 0).unwrap()
    }

    fn opts() -> StoreOptions {
        StoreOptions { sync: false }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = Store::open_with(dir.path(), opts()).unwrap();
            assert_eq!(store.append_session(session("s1", "stu-a")).unwrap(), "s1");
            assert!(matches!(
                store.append_session(session("s1", "stu-a")),
                Err(StoreError::Duplicate(_))
            ));
            assert_eq!(store.sessions().count(), 1);
        }
        let store = Store::open_with(dir.path(), opts()).unwrap();
        assert_eq!(store.session("s1").unwrap(), &session("s1", "stu-a"));
    }

    #[test]
    fn odd_course_ids_are_safe_file_names() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session("s1", "stu-a");
        s.course_id = "../CS 101/fall".into();
        {
            let mut store = Store::open_with(dir.path(), opts()).unwrap();
            store.append_session(s.clone()).unwrap();
        }
        let store = Store::open_with(dir.path(), opts()).unwrap();
        assert_eq!(store.session("s1").unwrap().course_id, "../CS 101/fall");
    }

    #[test]
    fn live_messages_extend_a_session() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open_with(dir.path(), opts()).unwrap();
        let base = session("live", "stu-a");
        for i in 0..3 {
            let mut m = base.messages[0].clone();
            m.message_id = format!("live-m{i:03}");
            m.timestamp += TimeDelta::minutes(i);
            store
                .append_live_message("live", "cs101", "stu-a", None, None, LoggingPolicy::RedactedLog, m)
                .unwrap();
        }
        drop(store);
        let store = Store::open_with(dir.path(), opts()).unwrap();
        let s = store.session("live").unwrap();
        assert_eq!(s.messages.len(), 3);
        assert_eq!(s.ended_at - s.started_at, TimeDelta::minutes(2));
        s.validate().unwrap();
    }

    #[test]
    fn audit_is_append_only_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open_with(dir.path(), opts()).unwrap();
        let draft = |t: DateTime<Utc>| AuditDraft {
            actor: Actor { role: Role::Instructor, principal: "prof".into() },
            action: AuditAction::GrantEvidence,
            target: AuditTarget { student_ref: "stu-a".into(), session_id: Some("s1".into()) },
            timestamp: t,
            justification: Some("follow-up".into()),
            outcome: AuditOutcome::Allowed,
            detail: None,
        };
        let a = store.record_audit(draft(now())).unwrap();
        let b = store.record_audit(draft(now() - TimeDelta::hours(1))).unwrap();
        assert_ne!(a, b);
        let entries = store.audit_entries();
        assert_eq!(entries[0].entry_id, a);
        assert!(entries[1].timestamp >= entries[0].timestamp);
        assert!(matches!(store.delete_audit(&a), Err(StoreError::Unsupported(_))));
        assert_eq!(store.audit_entries().len(), 2);

        assert_eq!(store.audit_for(&requester("stu-a", Role::Student)).unwrap().len(), 2);
        assert!(store.audit_for(&requester("stu-b", Role::Student)).unwrap().is_empty());
        assert!(store.audit_for(&requester("prof", Role::Instructor)).is_err());
        drop(store);
        let store = Store::open_with(dir.path(), opts()).unwrap();
        assert_eq!(store.audit_entries().len(), 2);
        assert_eq!(store.audit_entries()[0].action, AuditAction::GrantEvidence);
    }

    #[test]
    fn sharing_policy_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open_with(dir.path(), opts()).unwrap();
        assert_eq!(store.sharing_policy("stu-a").level, SharingLevel::SummaryOnly);
        let p = store
            .set_sharing_policy(&requester("stu-a", Role::Student), "stu-a", SharingLevel::RiskEvidenceOk, now())
            .unwrap();
        assert_eq!(p.level, SharingLevel::RiskEvidenceOk);
        assert_eq!(store.sharing_policy("stu-a").level, SharingLevel::RiskEvidenceOk);
        assert_eq!(store.audit_entries().last().unwrap().action, AuditAction::ChangeSharing);
        assert!(matches!(
            store.set_sharing_policy(&requester("prof", Role::Instructor), "stu-a", SharingLevel::FullRedactedOk, now()),
            Err(StoreError::Forbidden(_))
        ));
        assert!(store
            .set_sharing_policy(&requester("stu-b", Role::Student), "stu-a", SharingLevel::SummaryOnly, now())
            .is_err());
        store
            .set_sharing_policy(&requester("root", Role::Admin), "stu-a", SharingLevel::SummaryOnly, now())
            .unwrap();
        drop(store);
        let store = Store::open_with(dir.path(), opts()).unwrap();
        assert_eq!(store.sharing_policy("stu-a").level, SharingLevel::SummaryOnly);
        assert_eq!(store.audit_entries().len(), 2);
    }

    #[test]
    fn report_access() {
        use crate::classify::default_taxonomy;
        use crate::reflect::{build_session_report, ReportBackends};
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open_with(dir.path(), opts()).unwrap();
        let s = session("s1", "stu-a");
        store.append_session(s.clone()).unwrap();
        let r = build_session_report(&s, &default_taxonomy(), &ReportBackends::default(), s.ended_at).unwrap();
        assert!(store.put_report(r.clone()).unwrap());
        assert!(!store.put_report(r.clone()).unwrap());
        assert_eq!(store.report_versions("s1").len(), 1);

        let sharing = store.sharing_policy("stu-a");
        let view = store.get_report("s1", &requester("prof", Role::Instructor), &sharing).unwrap();
        assert!(!serde_json::to_string(&view).unwrap().contains("hello"));
        assert!(store.get_report("s1", &requester("stu-a", Role::Student), &sharing).is_ok());
        assert!(matches!(
            store.get_report("s1", &requester("stu-b", Role::Student), &sharing),
            Err(StoreError::Forbidden(_))
        ));
        assert!(matches!(
            store.get_report("nope", &requester("prof", Role::Instructor), &sharing),
            Err(StoreError::NotFound(_))
        ));
        let mut other_course = requester("prof2", Role::Instructor);
        other_course.course_id = "cs999".into();
        assert!(store.get_report("s1", &other_course, &sharing).is_err());
    }

    #[test]
    fn grants_expire() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open_with(dir.path(), opts()).unwrap();
        let g = EvidenceGrant {
            grant_id: store.next_grant_id(),
            session_id: "s1".into(),
            instructor_id: "prof".into(),
            reason: "check-in".into(),
            granted_at: now(),
            expires_at: now() + TimeDelta::hours(24),
            scope: EvidenceScope::RiskEvidenceSpans,
        };
        store.add_grant(g).unwrap();
        assert!(store.active_grant("prof", "s1", now()).is_some());
        assert!(store.active_grant("prof", "s1", now() + TimeDelta::hours(25)).is_none());
        assert!(store.active_grant("other", "s1", now()).is_none());
    }
}
