//! HTTP API over the analytics pipeline: signed launches, the tutor relay,
//! dashboard views and the evidence-on-request workflow.

pub mod app;
pub mod auth;
pub mod tutor;

pub use app::{router, AppState, CourseSettings, ServiceSettings, CANNED_REPLY};
pub use auth::{issue_token, sign_launch, verify_token, LaunchClaims, LaunchPayload, Principal};
pub use tutor::{Clock, EchoTutor, ManualClock, OfflineTutor, ScriptedTutor, SlowTutor, SystemClock, TutorBackend};
