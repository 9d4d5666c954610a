use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::{DateTime, TimeDelta, TimeZone, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use tutorlens_core::pipeline::PipelineConfig;
use tutorlens_core::store::Store;
use tutorlens_core::{LoggingPolicy, Role};
use tutorlens_service::{
    router, sign_launch, AppState, CourseSettings, LaunchClaims, ManualClock, OfflineTutor, ScriptedTutor,
    ServiceSettings, SlowTutor, TutorBackend, CANNED_REPLY,
};

const KEY: &[u8] = b"cs101-launch-key";

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 10, 1, 12, 0, 0).unwrap()
}

struct Harness {
    app: Router,
    state: Arc<AppState>,
    clock: Arc<ManualClock>,
    _dir: tempfile::TempDir,
}

fn harness_with(tutor: Arc<dyn TutorBackend>, policy: LoggingPolicy) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut courses = BTreeMap::new();
    courses.insert(
        "cs101".to_string(),
        CourseSettings {
            launch_key: KEY.to_vec(),
            policy,
        },
    );
    courses.insert(
        "ma201".to_string(),
        CourseSettings {
            launch_key: b"ma201-key".to_vec(),
            policy,
        },
    );
    let settings = ServiceSettings {
        token_secret: b"token-secret".to_vec(),
        token_ttl: TimeDelta::days(30),
        grant_ttl: TimeDelta::hours(24),
        tutor_timeout: Duration::from_millis(200),
        courses,
        report_workers: 2,
    };
    let clock = Arc::new(ManualClock::new(t0()));
    let state = Arc::new(AppState::new(store, settings, PipelineConfig::default(), clock.clone(), tutor));
    Harness {
        app: router(state.clone()),
        state,
        clock,
        _dir: dir,
    }
}

fn harness() -> Harness {
    harness_with(
        Arc::new(ScriptedTutor::new(vec![
            "Think about the base case first.".into(),
            "Try a smaller example and trace it.".into(),
        ])),
        LoggingPolicy::RedactedLog,
    )
}

impl Harness {
    async fn call(&self, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(serde_json::to_vec(&b).unwrap())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        let value = serde_json::from_str(&text).unwrap_or(Value::Null);
        (status, value, text)
    }

    async fn launch_in(&self, course: &str, key: &[u8], subject: &str, role: Role) -> (String, String) {
        let payload = sign_launch(
            key,
            LaunchClaims {
                subject: subject.into(),
                role,
                course_id: course.into(),
                expires_at: self.clock_now() + TimeDelta::minutes(5),
            },
        );
        let (status, body, _) = self
            .call(Method::POST, "/lti/launch", None, Some(serde_json::to_value(&payload).unwrap()))
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        (
            body["token"].as_str().unwrap().to_string(),
            body["principal"]["subject"].as_str().unwrap().to_string(),
        )
    }

    async fn launch(&self, subject: &str, role: Role) -> (String, String) {
        self.launch_in("cs101", KEY, subject, role).await
    }

    fn clock_now(&self) -> DateTime<Utc> {
        use tutorlens_service::Clock;
        self.clock.now()
    }

    async fn chat(&self, token: &str, text: &str) -> Value {
        let (status, body, _) = self.call(Method::POST, "/chat", Some(token), Some(json!({ "text": text }))).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        body
    }

    /// A session whose prompts all ask for finished answers (warn signal).
    async fn warn_session(&self, token: &str) -> String {
        let mut sid = String::new();
        for _ in 0..4 {
            sid = self.chat(token, "Just give me the full code for this assignment.").await["session_id"]
                .as_str()
                .unwrap()
                .to_string();
            self.clock.advance(TimeDelta::minutes(2));
        }
        sid
    }

    async fn clean_session(&self, token: &str) -> String {
        let sid = self.chat(token, "Can you explain recursion to me?").await["session_id"]
            .as_str()
            .unwrap()
            .to_string();
        self.clock.advance(TimeDelta::hours(2));
        sid
    }
}

#[tokio::test]
async fn launch_verification() {
    let h = harness();
    let (token, subject) = h.launch("inst-1", Role::Instructor).await;
    assert!(!token.is_empty());
    assert_eq!(subject, "inst-1");

    let (_, student) = h.launch("1TE23001", Role::Student).await;
    assert!(student.starts_with("stu-"));
    assert!(!student.contains("1TE23001"));

    let claims = LaunchClaims {
        subject: "inst-1".into(),
        role: Role::Student,
        course_id: "cs101".into(),
        expires_at: t0() + TimeDelta::minutes(5),
    };
    let mut tampered = serde_json::to_value(sign_launch(KEY, claims.clone())).unwrap();
    tampered["claims"]["role"] = json!("admin");
    let (status, _, _) = h.call(Method::POST, "/lti/launch", None, Some(tampered)).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let expired = sign_launch(
        KEY,
        LaunchClaims {
            expires_at: t0() - TimeDelta::seconds(1),
            ..claims.clone()
        },
    );
    let (status, _, _) = h
        .call(Method::POST, "/lti/launch", None, Some(serde_json::to_value(expired).unwrap()))
        .await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);

    let unknown = sign_launch(
        KEY,
        LaunchClaims {
            course_id: "zz999".into(),
            ..claims
        },
    );
    let (status, _, _) = h
        .call(Method::POST, "/lti/launch", None, Some(serde_json::to_value(unknown).unwrap()))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _, _) = h.call(Method::POST, "/lti/launch", None, Some(json!({"nope": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn tokens_are_required_and_expire() {
    let h = harness();
    let (status, _, _) = h.call(Method::GET, "/audit", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _, _) = h.call(Method::GET, "/audit", Some("garbage"), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (token, _) = h.launch("admin-1", Role::Admin).await;
    let (status, _, _) = h.call(Method::GET, "/audit", Some(&token), None).await;
    assert_eq!(status, StatusCode::OK);
    h.clock.advance(TimeDelta::days(31));
    let (status, _, _) = h.call(Method::GET, "/audit", Some(&token), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn chat_filters_before_storing() {
    let h = harness_with(Arc::new(tutorlens_service::EchoTutor), LoggingPolicy::RedactedLog);
    let (token, student) = h.launch("1TE23001", Role::Student).await;
    let body = h.chat(&token, "My email is ada@uni.example.edu, why does my loop fail?").await;
    assert!(!body["reply"].as_str().unwrap().contains("ada@uni"));
    let sid = body["session_id"].as_str().unwrap();
    let store = h.state.store();
    let session = store.session(sid).unwrap();
    assert_eq!(session.student_ref, student);
    assert_eq!(session.messages.len(), 2);
    assert!(session.messages[0].text.contains("[EMAIL]"));
    assert!(!session.messages[0].text.contains("ada@"));
    assert!(store.latest_report(sid).is_some());
}

#[tokio::test]
async fn gap_rule_splits_live_sessions() {
    let h = harness();
    let (token, student) = h.launch("1TE23001", Role::Student).await;
    let a = h.chat(&token, "first question").await["session_id"].clone();
    h.clock.advance(TimeDelta::minutes(10));
    let b = h.chat(&token, "still the same session").await["session_id"].clone();
    assert_eq!(a, b);
    h.clock.advance(TimeDelta::minutes(45));
    let c = h.chat(&token, "a new session").await["session_id"].clone();
    assert_ne!(a, c);
    assert_eq!(h.state.store().sessions_for_student(&student).count(), 2);
    let session = h.state.store().session(a.as_str().unwrap()).unwrap().clone();
    assert_eq!(session.messages.len(), 4);
    session.validate().unwrap();
}

#[tokio::test]
async fn backend_down_or_slow_gets_canned_reply() {
    for tutor in [
        Arc::new(OfflineTutor) as Arc<dyn TutorBackend>,
        Arc::new(SlowTutor(Duration::from_secs(5))),
    ] {
        let h = harness_with(tutor, LoggingPolicy::RedactedLog);
        let (token, _) = h.launch("1TE23001", Role::Student).await;
        let body = h.chat(&token, "Is this correct?").await;
        assert_eq!(body["reply"], CANNED_REPLY);
        assert_eq!(body["degraded"], true);
        let store = h.state.store();
        let session = store.session(body["session_id"].as_str().unwrap()).unwrap();
        assert_eq!(session.messages[0].text, "Is this correct?");
    }
}

#[tokio::test]
async fn report_access_rules() {
    let h = harness();
    let (alice, _) = h.launch("1TE23001", Role::Student).await;
    let (bob, _) = h.launch("1TE23002", Role::Student).await;
    let (inst, _) = h.launch("inst-1", Role::Instructor).await;
    let (other_inst, _) = h.launch_in("ma201", b"ma201-key", "inst-9", Role::Instructor).await;
    let sid = h.clean_session(&alice).await;
    let uri = format!("/sessions/{sid}/report");

    let (status, body, first) = h.call(Method::GET, &uri, Some(&alice), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["sharing_level"], "summary_only");
    assert_eq!(body["evidence_requestable"], false);
    let (_, _, second) = h.call(Method::GET, &uri, Some(&alice), None).await;
    assert_eq!(first, second);

    assert_eq!(h.call(Method::GET, &uri, Some(&bob), None).await.0, StatusCode::FORBIDDEN);
    assert_eq!(h.call(Method::GET, &uri, Some(&inst), None).await.0, StatusCode::OK);
    assert_eq!(h.call(Method::GET, &uri, Some(&other_inst), None).await.0, StatusCode::FORBIDDEN);
    assert_eq!(
        h.call(Method::GET, "/sessions/nope/report", Some(&inst), None).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn course_views_and_filters() {
    let h = harness();
    let (alice, alice_ref) = h.launch("1TE23001", Role::Student).await;
    let (inst, _) = h.launch("inst-1", Role::Instructor).await;
    h.warn_session(&alice).await;
    h.clock.advance(TimeDelta::hours(3));
    h.clean_session(&alice).await;

    let (status, ov, _) = h.call(Method::GET, "/courses/cs101/overview", Some(&inst), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ov["student_count"], 1);
    assert_eq!(ov["session_count"], 2);
    assert_eq!(ov["at_risk_students"][0]["student_ref"], alice_ref.as_str());

    let (status, ov, _) = h
        .call(Method::GET, "/courses/cs101/overview?week=1999-W01", Some(&inst), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ov["session_count"], 0);
    assert_eq!(ov["student_count"], 0);
    assert!(ov["aggregate_distribution"]["counts"]
        .as_object()
        .unwrap()
        .values()
        .all(|v| v == 0));

    let (status, rows, _) = h
        .call(Method::GET, "/courses/cs101/students?sort=warn_signals", Some(&inst), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rows[0]["sessions"], 2);
    assert_eq!(
        h.call(Method::GET, "/courses/cs101/students?sort=bogus", Some(&inst), None).await.0,
        StatusCode::BAD_REQUEST
    );

    assert_eq!(
        h.call(Method::GET, "/courses/cs101/overview", Some(&alice), None).await.0,
        StatusCode::FORBIDDEN
    );
    assert_eq!(
        h.call(Method::GET, "/courses/ma201/overview", Some(&inst), None).await.0,
        StatusCode::FORBIDDEN
    );
    let (admin, _) = h.launch("admin-1", Role::Admin).await;
    assert_eq!(
        h.call(Method::GET, "/courses/zz999/overview", Some(&admin), None).await.0,
        StatusCode::NOT_FOUND
    );

    let uri = format!("/students/{alice_ref}/sessions");
    let (status, list, _) = h.call(Method::GET, &uri, Some(&alice), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 2);
    let (bob, _) = h.launch("1TE23002", Role::Student).await;
    assert_eq!(h.call(Method::GET, &uri, Some(&bob), None).await.0, StatusCode::FORBIDDEN);
    assert_eq!(h.call(Method::GET, &uri, Some(&inst), None).await.0, StatusCode::OK);
    assert_eq!(
        h.call(Method::GET, "/students/stu-00000000/sessions", Some(&inst), None).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn evidence_workflow() {
    let h = harness();
    let (alice, alice_ref) = h.launch("1TE23001", Role::Student).await;
    let (inst, _) = h.launch("inst-1", Role::Instructor).await;
    let warn = h.warn_session(&alice).await;
    h.clock.advance(TimeDelta::hours(2));
    let clean = h.clean_session(&alice).await;
    let reason = json!({ "reason": "student asked for help in office hours" });

    // Default policy is summary_only: denied and audited.
    let req_uri = format!("/sessions/{warn}/evidence-request");
    let (status, body, _) = h.call(Method::POST, &req_uri, Some(&inst), Some(reason.clone())).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "student sharing policy");
    let denied = h
        .state
        .store()
        .audit_entries()
        .iter()
        .filter(|e| e.outcome == tutorlens_core::store::AuditOutcome::Denied)
        .count();
    assert_eq!(denied, 1);

    let (status, _, _) = h
        .call(Method::PUT, &format!("/students/{alice_ref}/sharing"), Some(&inst), Some(json!({"level": "risk_evidence_ok"})))
        .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, policy, _) = h
        .call(Method::PUT, &format!("/students/{alice_ref}/sharing"), Some(&alice), Some(json!({"level": "risk_evidence_ok"})))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(policy["level"], "risk_evidence_ok");

    let (status, body, _) = h
        .call(Method::POST, &format!("/sessions/{clean}/evidence-request"), Some(&inst), Some(reason.clone()))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "not at-risk");

    let ev_uri = format!("/sessions/{warn}/evidence");
    assert_eq!(h.call(Method::GET, &ev_uri, Some(&inst), None).await.0, StatusCode::FORBIDDEN);

    let (status, grant, _) = h.call(Method::POST, &req_uri, Some(&inst), Some(json!({"reason": "  "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{grant}");
    let (status, grant, _) = h.call(Method::POST, &req_uri, Some(&inst), Some(reason.clone())).await;
    assert_eq!(status, StatusCode::CREATED, "{grant}");
    let grant_id = grant["grant_id"].as_str().unwrap().to_string();

    let (status, view, _) = h.call(Method::GET, &ev_uri, Some(&inst), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["grant_id"], grant_id.as_str());
    let items = view["items"].as_array().unwrap();
    assert!(!items.is_empty());
    let session = h.state.store().session(&warn).unwrap().clone();
    // Only referenced student prompts, never the whole transcript.
    assert!(items.len() < session.messages.len());
    assert!(items.iter().all(|i| i["author"] == "student"));

    // Lowering the level blocks new grants but the existing one runs its course.
    h.call(Method::PUT, &format!("/students/{alice_ref}/sharing"), Some(&alice), Some(json!({"level": "summary_only"})))
        .await;
    assert_eq!(h.call(Method::POST, &req_uri, Some(&inst), Some(reason.clone())).await.0, StatusCode::FORBIDDEN);
    assert_eq!(h.call(Method::GET, &ev_uri, Some(&inst), None).await.0, StatusCode::OK);
    h.clock.advance(TimeDelta::hours(24));
    assert_eq!(h.call(Method::GET, &ev_uri, Some(&inst), None).await.0, StatusCode::FORBIDDEN);

    // Admin override ignores both conditions.
    let (admin, _) = h.launch("admin-1", Role::Admin).await;
    assert_eq!(h.call(Method::POST, &req_uri, Some(&admin), Some(reason.clone())).await.0, StatusCode::CREATED);
    assert_eq!(h.call(Method::GET, &ev_uri, Some(&admin), None).await.0, StatusCode::OK);
    assert_eq!(h.call(Method::POST, &req_uri, Some(&alice), Some(reason)).await.0, StatusCode::FORBIDDEN);

    // Every allowed evidence view follows a grant for the same actor and session.
    let store = h.state.store();
    let entries = store.audit_entries();
    use tutorlens_core::store::{AuditAction, AuditOutcome};
    for (i, e) in entries.iter().enumerate() {
        if e.action == AuditAction::ViewEvidence && e.outcome == AuditOutcome::Allowed {
            let gid = e.detail.clone().unwrap();
            assert!(entries[..i].iter().any(|g| g.action == AuditAction::GrantEvidence
                && g.actor == e.actor
                && g.target == e.target
                && g.detail.as_deref().is_some_and(|d| d.starts_with(&gid))));
        }
    }
}

#[tokio::test]
async fn audit_visibility() {
    let h = harness();
    let (alice, alice_ref) = h.launch("1TE23001", Role::Student).await;
    let (bob, _) = h.launch("1TE23002", Role::Student).await;
    let (inst, _) = h.launch("inst-1", Role::Instructor).await;
    let (admin, _) = h.launch("admin-1", Role::Admin).await;
    h.call(Method::PUT, &format!("/students/{alice_ref}/sharing"), Some(&alice), Some(json!({"level": "full_redacted_ok"})))
        .await;
    let (_, mine, _) = h.call(Method::GET, "/audit", Some(&alice), None).await;
    assert_eq!(mine.as_array().unwrap().len(), 1);
    assert_eq!(mine[0]["action"], "change_sharing");
    let (_, theirs, _) = h.call(Method::GET, "/audit", Some(&bob), None).await;
    assert!(theirs.as_array().unwrap().is_empty());
    assert_eq!(h.call(Method::GET, "/audit", Some(&inst), None).await.0, StatusCode::FORBIDDEN);
    let (_, all, _) = h.call(Method::GET, "/audit", Some(&admin), None).await;
    assert_eq!(all.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn counts_only_courses_keep_no_text() {
    let h = harness_with(Arc::new(tutorlens_service::EchoTutor), LoggingPolicy::CountsOnly);
    let (token, _) = h.launch("1TE23001", Role::Student).await;
    let body = h.chat(&token, "Why does this print twice?").await;
    let store = h.state.store();
    let session = store.session(body["session_id"].as_str().unwrap()).unwrap();
    assert!(session.messages.iter().all(|m| m.text.is_empty() && m.token_count > 0));
}
