//! Router, shared state and request handlers.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::trace::TraceLayer;
use tutorlens_core::analytics::{
    class_overview, iso_week_label, rank_students, roster, RankDimension, ReportFilter, Window,
};
use tutorlens_core::config::ServiceSection;
use tutorlens_core::pipeline::{derived_session_id, message_id, PipelineConfig};
use tutorlens_core::privacy::{filter_message, PseudonymMap};
use tutorlens_core::reflect::{build_session_report, SessionMeta, SessionReport};
use tutorlens_core::risk::RiskKind;
use tutorlens_core::store::{
    Actor, AuditAction, AuditDraft, AuditEntry, AuditOutcome, AuditTarget, EvidenceGrant, EvidenceScope,
    Requester, SharingLevel, SharingPolicy, Store, StoreError,
};
use tutorlens_core::{timefmt, Author, LoggingPolicy, Role};

use crate::auth::{bearer, issue_token, parse_launch, verify_launch, verify_token, AuthError, Principal};
use crate::tutor::{Clock, TutorBackend};

/// Sent to the student when the tutor backend fails or times out.
pub const CANNED_REPLY: &str =
    "Sorry, the tutor is not available right now. Your message was saved; please try again in a moment.";

#[derive(Debug, Clone)]
pub struct CourseSettings {
    pub launch_key: Vec<u8>,
    pub policy: LoggingPolicy,
}

#[derive(Debug, Clone)]
pub struct ServiceSettings {
    pub token_secret: Vec<u8>,
    pub token_ttl: TimeDelta,
    pub grant_ttl: TimeDelta,
    pub tutor_timeout: Duration,
    pub courses: BTreeMap<String, CourseSettings>,
    /// Upper bound on concurrent report rebuilds.
    pub report_workers: usize,
}

impl ServiceSettings {
    pub fn from_section(section: &ServiceSection, token_secret: Vec<u8>, default_policy: LoggingPolicy) -> Self {
        Self {
            token_secret,
            token_ttl: TimeDelta::minutes(section.token_ttl_minutes.max(1)),
            grant_ttl: TimeDelta::hours(section.grant_ttl_hours.max(1)),
            tutor_timeout: Duration::from_millis(section.tutor_timeout_ms.max(1)),
            courses: section
                .courses
                .iter()
                .map(|c| {
                    (
                        c.course_id.clone(),
                        CourseSettings {
                            launch_key: c.launch_key.clone().into_bytes(),
                            policy: c.policy.unwrap_or(default_policy),
                        },
                    )
                })
                .collect(),
            report_workers: 4,
        }
    }
}

pub struct AppState {
    store: Mutex<Store>,
    settings: ServiceSettings,
    pipeline: PipelineConfig,
    clock: Arc<dyn Clock>,
    tutor: Arc<dyn TutorBackend>,
    pseudonyms: Mutex<BTreeMap<String, Arc<PseudonymMap>>>,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(
        store: Store,
        settings: ServiceSettings,
        pipeline: PipelineConfig,
        clock: Arc<dyn Clock>,
        tutor: Arc<dyn TutorBackend>,
    ) -> Self {
        let workers = Arc::new(Semaphore::new(settings.report_workers.max(1)));
        Self {
            store: Mutex::new(store),
            settings,
            pipeline,
            clock,
            tutor,
            pseudonyms: Mutex::new(BTreeMap::new()),
            workers,
        }
    }

    pub fn store(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    fn pseudonym(&self, course_id: &str, raw: &str) -> Result<String, ApiError> {
        let map = {
            let mut maps = self.pseudonyms.lock().unwrap_or_else(|e| e.into_inner());
            match maps.get(course_id) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(
                        PseudonymMap::for_course(&self.pipeline.master_salt, course_id)
                            .map_err(|e| ApiError::internal(e.to_string()))?,
                    );
                    maps.insert(course_id.to_string(), m.clone());
                    m
                }
            }
        };
        map.pseudonymize_id(raw)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
    }

    fn course_known(&self, course_id: &str) -> bool {
        self.settings.courses.contains_key(course_id)
            || self.store().sessions().any(|s| s.course_id == course_id)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/lti/launch", post(launch))
        .route("/chat", post(chat))
        .route("/courses/{course}/overview", get(overview))
        .route("/courses/{course}/students", get(students))
        .route("/students/{student}/sessions", get(student_sessions))
        .route("/students/{student}/sharing", put(set_sharing))
        .route("/sessions/{session}/report", get(session_report))
        .route("/sessions/{session}/evidence-request", post(request_evidence))
        .route("/sessions/{session}/evidence", get(view_evidence))
        .route("/audit", get(audit))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(status = %self.status, error = %self.message, "request failed");
        }
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Forbidden(_) => StatusCode::FORBIDDEN,
            StoreError::Duplicate(_) => StatusCode::CONFLICT,
            StoreError::Unsupported(_) => StatusCode::METHOD_NOT_ALLOWED,
            StoreError::InvalidSession(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, e.to_string())
    }
}

/// A request's verified principal.
pub struct Auth(pub Principal);

impl FromRequestParts<Arc<AppState>> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let value = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        let token = bearer(value)?;
        let principal = verify_token(&state.settings.token_secret, token, state.clock.now())?;
        Ok(Auth(principal))
    }
}

impl Auth {
    fn requester(&self) -> Requester {
        Requester {
            subject: self.0.subject.clone(),
            role: self.0.role,
            course_id: self.0.course_id.clone(),
        }
    }

    fn actor(&self) -> Actor {
        Actor {
            role: self.0.role,
            principal: self.0.subject.clone(),
        }
    }

    /// Course-scope views: instructors of the course and admins.
    fn require_course_staff(&self, course_id: &str) -> Result<(), ApiError> {
        match self.0.role {
            Role::Admin => Ok(()),
            Role::Instructor if self.0.course_id == course_id => Ok(()),
            Role::Instructor => Err(ApiError::forbidden("not an instructor of this course")),
            Role::Student => Err(ApiError::forbidden("course views require an instructor")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaunchResponse {
    pub token: String,
    pub principal: Principal,
}

async fn launch(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<LaunchResponse>, ApiError> {
    let payload = parse_launch(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let course = state
        .settings
        .courses
        .get(&payload.claims.course_id)
        .ok_or_else(|| ApiError::not_found("unknown course"))?;
    let now = state.clock.now();
    verify_launch(&course.launch_key, &payload, now)?;
    let claims = payload.claims;
    let subject = match claims.role {
        Role::Student => state.pseudonym(&claims.course_id, &claims.subject)?,
        _ => claims.subject,
    };
    let principal = Principal {
        subject,
        role: claims.role,
        course_id: claims.course_id,
        expires_at: now + state.settings.token_ttl,
    };
    tracing::info!(role = %principal.role, course = %principal.course_id, "launch accepted");
    Ok(Json(LaunchResponse {
        token: issue_token(&state.settings.token_secret, &principal),
        principal,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub text: String,
    #[serde(default)]
    pub topic_tag: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatResponse {
    pub session_id: String,
    pub message_id: String,
    /// The reply as filtered for storage.
    pub reply: String,
    /// True when the tutor failed and the canned reply was sent instead.
    pub degraded: bool,
}

async fn chat(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Json(req): Json<ChatRequest>,
) -> Result<Json<ChatResponse>, ApiError> {
    let p = &auth.0;
    if p.role != Role::Student {
        return Err(ApiError::forbidden("only students chat with the tutor"));
    }
    let policy = state
        .settings
        .courses
        .get(&p.course_id)
        .map(|c| c.policy)
        .unwrap_or_else(|| state.pipeline.redaction.policy());
    let rules = state.pipeline.redaction.clone().with_policy(policy);
    let now = state.clock.now();

    let (session_id, student_mid, forwarded) = {
        let mut store = state.store();
        let current = store
            .latest_session_for(&p.course_id, &p.subject)
            .filter(|s| now - s.ended_at <= state.pipeline.idle_gap)
            .map(|s| (s.session_id.clone(), s.messages.len(), s.topic_tag.clone()));
        let (session_id, index, topic) = match current {
            Some((id, n, topic)) => (id, n, topic.or(req.topic_tag.clone())),
            None => (derived_session_id(&p.course_id, &p.subject, now), 0, req.topic_tag.clone()),
        };
        let mid = message_id(&session_id, index);
        let (message, redacted) = filter_message(Author::Student, now, &req.text, mid.clone(), &rules);
        store.append_live_message(
            &session_id,
            &p.course_id,
            &p.subject,
            topic,
            Some(iso_week_label(now)),
            policy,
            message,
        )?;
        (session_id, mid, redacted)
    };

    let (reply, degraded) = match tokio::time::timeout(state.settings.tutor_timeout, state.tutor.reply(&forwarded)).await {
        Ok(Ok(r)) => (r, false),
        Ok(Err(e)) => {
            tracing::warn!(error = %e, "tutor backend failed; sending canned reply");
            (CANNED_REPLY.to_string(), true)
        }
        Err(_) => {
            tracing::warn!("tutor backend timed out; sending canned reply");
            (CANNED_REPLY.to_string(), true)
        }
    };

    let reply_at = state.clock.now().max(now);
    let stored_reply = {
        let mut store = state.store();
        let session = store
            .session(&session_id)
            .ok_or_else(|| ApiError::internal("live session vanished"))?;
        let mid = message_id(&session_id, session.messages.len());
        let (topic, week) = (session.topic_tag.clone(), session.week_tag.clone());
        let (message, redacted) = filter_message(Author::Assistant, reply_at, &reply, mid, &rules);
        store.append_live_message(&session_id, &p.course_id, &p.subject, topic, week, policy, message)?;
        redacted
    };

    rebuild_report(&state, &session_id, reply_at).await?;
    Ok(Json(ChatResponse {
        session_id,
        message_id: student_mid,
        reply: stored_reply,
        degraded,
    }))
}

/// Rebuilds the session's report on the worker pool and stores it unless a
/// report of a longer session already landed.
async fn rebuild_report(state: &Arc<AppState>, session_id: &str, at: DateTime<Utc>) -> Result<(), ApiError> {
    let _permit = state
        .workers
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::internal("worker pool closed"))?;
    let session = state
        .store()
        .session(session_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("unknown session"))?;
    let pipeline = state.pipeline.clone();
    let report = tokio::task::spawn_blocking(move || {
        let mut backends = pipeline.backends();
        backends.redaction = backends.redaction.with_policy(session.logging_policy);
        build_session_report(&session, &pipeline.taxonomy, &backends, at)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut store = state.store();
    let stale = store
        .latest_report(session_id)
        .is_some_and(|r| r.session.message_count > report.session.message_count);
    if !stale {
        store.put_report(report)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FilterQuery {
    pub week: Option<String>,
    pub topic: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub sort: Option<String>,
}

impl FilterQuery {
    fn filter(&self) -> Result<ReportFilter, ApiError> {
        let parse = |v: &Option<String>| {
            v.as_deref()
                .map(timefmt::parse)
                .transpose()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("bad timestamp: {e}")))
        };
        Ok(ReportFilter {
            window: Window {
                from: parse(&self.from)?,
                to: parse(&self.to)?,
            },
            week: self.week.clone(),
            topic: self.topic.clone(),
        })
    }
}

fn course_reports(state: &AppState, course_id: &str, filter: &ReportFilter) -> Vec<SessionReport> {
    state
        .store()
        .reports_for_course(course_id)
        .into_iter()
        .filter(|r| filter.matches(r))
        .cloned()
        .collect()
}

async fn overview(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Path(course): Path<String>,
    Query(q): Query<FilterQuery>,
) -> Result<Response, ApiError> {
    auth.require_course_staff(&course)?;
    if !state.course_known(&course) {
        return Err(ApiError::not_found("unknown course"));
    }
    let filter = q.filter()?;
    let reports = course_reports(&state, &course, &filter);
    let refs: Vec<&SessionReport> = reports.iter().collect();
    let ov = class_overview(
        &course,
        &refs,
        &filter.window,
        &state.pipeline.taxonomy,
        &state.pipeline.overview,
    );
    Ok(Json(ov).into_response())
}

async fn students(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Path(course): Path<String>,
    Query(q): Query<FilterQuery>,
) -> Result<Response, ApiError> {
    auth.require_course_staff(&course)?;
    if !state.course_known(&course) {
        return Err(ApiError::not_found("unknown course"));
    }
    let filter = q.filter()?;
    let reports = course_reports(&state, &course, &filter);
    let refs: Vec<&SessionReport> = reports.iter().collect();
    let rows = match &q.sort {
        Some(dim) => {
            let dim: RankDimension = dim
                .parse()
                .map_err(|e: tutorlens_core::analytics::UnknownDimension| {
                    ApiError::new(StatusCode::BAD_REQUEST, e.to_string())
                })?;
            rank_students(&refs, dim, &state.pipeline.taxonomy)
        }
        None => roster(&refs, &state.pipeline.taxonomy),
    };
    Ok(Json(rows).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionListing {
    pub session: SessionMeta,
    pub risk_kinds: Vec<RiskKind>,
    pub has_warn: bool,
}

async fn student_sessions(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Path(student): Path<String>,
    Query(q): Query<FilterQuery>,
) -> Result<Response, ApiError> {
    let filter = q.filter()?;
    let store = state.store();
    let visible: Vec<&SessionReport> = store
        .sessions_for_student(&student)
        .filter(|s| match auth.0.role {
            Role::Admin => true,
            Role::Instructor => s.course_id == auth.0.course_id,
            Role::Student => true,
        })
        .filter_map(|s| store.latest_report(&s.session_id))
        .collect();
    match auth.0.role {
        Role::Student if auth.0.subject != student => {
            return Err(ApiError::forbidden("students may only list their own sessions"));
        }
        Role::Instructor | Role::Admin if visible.is_empty() => {
            return Err(ApiError::not_found("unknown student"));
        }
        _ => {}
    }
    let rows: Vec<SessionListing> = visible
        .into_iter()
        .filter(|r| filter.matches(r))
        .map(|r| SessionListing {
            session: r.session.clone(),
            risk_kinds: r.risks.iter().map(|s| s.kind).collect(),
            has_warn: r.has_warn(),
        })
        .collect();
    Ok(Json(rows).into_response())
}

async fn session_report(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Path(session_id): Path<String>,
) -> Result<Response, ApiError> {
    let mut store = state.store();
    let student_ref = store
        .latest_report(&session_id)
        .map(|r| r.session.student_ref.clone())
        .ok_or_else(|| ApiError::not_found("unknown session"))?;
    let sharing = store.sharing_policy(&student_ref);
    let result = store.get_report(&session_id, &auth.requester(), &sharing);
    if auth.0.role != Role::Student {
        store.record_audit(AuditDraft {
            actor: auth.actor(),
            action: AuditAction::ViewSummary,
            target: AuditTarget {
                student_ref,
                session_id: Some(session_id.clone()),
            },
            timestamp: state.clock.now(),
            justification: None,
            outcome: if result.is_ok() { AuditOutcome::Allowed } else { AuditOutcome::Denied },
            detail: None,
        })?;
    }
    Ok(Json(result?).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvidenceRequest {
    pub reason: String,
}

async fn request_evidence(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Path(session_id): Path<String>,
    Json(req): Json<EvidenceRequest>,
) -> Result<Response, ApiError> {
    let now = state.clock.now();
    let mut store = state.store();
    let report = store
        .latest_report(&session_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("unknown session"))?;
    let student_ref = report.session.student_ref.clone();
    let sharing = store.sharing_policy(&student_ref);
    let reason = req.reason.trim().to_string();
    let decision: Result<Option<&str>, ApiError> = match auth.0.role {
        Role::Student => Err(ApiError::forbidden("evidence requests are for instructors")),
        Role::Instructor if auth.0.course_id != report.session.course_id => {
            Err(ApiError::forbidden("not an instructor of this course"))
        }
        _ if reason.is_empty() => Err(ApiError::new(StatusCode::BAD_REQUEST, "a reason is required")),
        Role::Admin => Ok(Some("admin override")),
        Role::Instructor if !report.has_warn() => Err(ApiError::new(StatusCode::CONFLICT, "not at-risk")),
        Role::Instructor if !sharing.level.permits_evidence() => {
            Err(ApiError::forbidden("student sharing policy"))
        }
        Role::Instructor => Ok(None),
    };
    let target = AuditTarget {
        student_ref,
        session_id: Some(session_id.clone()),
    };
    let justification = (!reason.is_empty()).then(|| reason.clone());
    let note = match &decision {
        Ok(note) => note.map(String::from),
        Err(e) => Some(e.message.clone()),
    };
    store.record_audit(AuditDraft {
        actor: auth.actor(),
        action: AuditAction::RequestEvidence,
        target: target.clone(),
        timestamp: now,
        justification: justification.clone(),
        outcome: if decision.is_ok() { AuditOutcome::Allowed } else { AuditOutcome::Denied },
        detail: note,
    })?;
    let override_note = decision?;
    let grant = EvidenceGrant {
        grant_id: store.next_grant_id(),
        session_id: session_id.clone(),
        instructor_id: auth.0.subject.clone(),
        reason,
        granted_at: now,
        expires_at: now + state.settings.grant_ttl,
        scope: EvidenceScope::RiskEvidenceSpans,
    };
    store.add_grant(grant.clone())?;
    store.record_audit(AuditDraft {
        actor: auth.actor(),
        action: AuditAction::GrantEvidence,
        target,
        timestamp: now,
        justification,
        outcome: AuditOutcome::Allowed,
        detail: Some(match override_note {
            Some(n) => format!("{} ({n})", grant.grant_id),
            None => grant.grant_id.clone(),
        }),
    })?;
    Ok((StatusCode::CREATED, Json(grant)).into_response())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub message_id: String,
    pub author: Author,
    #[serde(with = "timefmt")]
    pub timestamp: DateTime<Utc>,
    /// Redacted text of the referenced span.
    pub text: String,
    pub risk_kinds: Vec<RiskKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceView {
    pub session_id: String,
    pub grant_id: String,
    #[serde(with = "timefmt")]
    pub expires_at: DateTime<Utc>,
    pub items: Vec<EvidenceItem>,
}

async fn view_evidence(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Path(session_id): Path<String>,
) -> Result<Response, ApiError> {
    let now = state.clock.now();
    let mut store = state.store();
    let report = store
        .latest_report(&session_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("unknown session"))?;
    let grant = match auth.0.role {
        Role::Student => Err(ApiError::forbidden("evidence is for instructors")),
        Role::Instructor if auth.0.course_id != report.session.course_id => {
            Err(ApiError::forbidden("not an instructor of this course"))
        }
        _ => store
            .active_grant(&auth.0.subject, &session_id, now)
            .cloned()
            .ok_or_else(|| ApiError::forbidden("no active evidence grant")),
    };
    let target = AuditTarget {
        student_ref: report.session.student_ref.clone(),
        session_id: Some(session_id.clone()),
    };
    store.record_audit(AuditDraft {
        actor: auth.actor(),
        action: AuditAction::ViewEvidence,
        target,
        timestamp: now,
        justification: None,
        outcome: if grant.is_ok() { AuditOutcome::Allowed } else { AuditOutcome::Denied },
        detail: match &grant {
            Ok(g) => Some(g.grant_id.clone()),
            Err(e) => Some(e.message.clone()),
        },
    })?;
    let grant = grant?;
    let session = store
        .session(&session_id)
        .ok_or_else(|| ApiError::not_found("unknown session"))?;
    let mut by_message: BTreeMap<(String, usize, usize), Vec<RiskKind>> = BTreeMap::new();
    for signal in &report.risks {
        for ev in &signal.evidence {
            let Some(m) = session.message(&ev.message_id) else { continue };
            let (start, end) = match &ev.span {
                Some(s) => (s.start, s.end),
                None => (0, m.text.len()),
            };
            let kinds = by_message.entry((ev.message_id.clone(), start, end)).or_default();
            if !kinds.contains(&signal.kind) {
                kinds.push(signal.kind);
            }
        }
    }
    let items = by_message
        .into_iter()
        .filter_map(|((mid, start, end), risk_kinds)| {
            let m = session.message(&mid)?;
            let text = m.text.get(start..end.min(m.text.len()))?.to_string();
            Some(EvidenceItem {
                message_id: mid,
                author: m.author,
                timestamp: m.timestamp,
                text,
                risk_kinds,
            })
        })
        .collect();
    Ok(Json(EvidenceView {
        session_id,
        grant_id: grant.grant_id,
        expires_at: grant.expires_at,
        items,
    })
    .into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharingUpdate {
    pub level: SharingLevel,
}

async fn set_sharing(
    State(state): State<Arc<AppState>>,
    auth: Auth,
    Path(student): Path<String>,
    Json(update): Json<SharingUpdate>,
) -> Result<Json<SharingPolicy>, ApiError> {
    let now = state.clock.now();
    let policy = state
        .store()
        .set_sharing_policy(&auth.requester(), &student, update.level, now)?;
    Ok(Json(policy))
}

async fn audit(State(state): State<Arc<AppState>>, auth: Auth) -> Result<Json<Vec<AuditEntry>>, ApiError> {
    let store = state.store();
    let entries = store.audit_for(&auth.requester())?.into_iter().cloned().collect();
    Ok(Json(entries))
}
