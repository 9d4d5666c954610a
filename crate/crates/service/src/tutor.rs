//! Pluggable tutor backends and the service clock.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, TimeDelta, Utc};
use thiserror::Error;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        tutorlens_core::timefmt::truncate(Utc::now())
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(at: DateTime<Utc>) -> Self {
        Self(Mutex::new(at))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock().expect("clock lock") = at;
    }

    pub fn advance(&self, by: TimeDelta) {
        *self.0.lock().expect("clock lock") += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, Error)]
pub enum TutorError {
    #[error("tutor backend unavailable: {0}")]
    Unavailable(String),
}

/// The assistant students talk to. It only ever sees filtered text.
#[async_trait]
pub trait TutorBackend: Send + Sync {
    async fn reply(&self, prompt: &str) -> Result<String, TutorError>;
}

/// Repeats the prompt back.
#[derive(Debug, Default)]
pub struct EchoTutor;

#[async_trait]
impl TutorBackend for EchoTutor {
    async fn reply(&self, prompt: &str) -> Result<String, TutorError> {
        Ok(format!("You asked: {prompt}"))
    }
}

/// Plays a fixed list of replies in order, cycling at the end.
#[derive(Debug)]
pub struct ScriptedTutor {
    replies: Vec<String>,
    next: AtomicUsize,
}

impl ScriptedTutor {
    pub fn new(replies: Vec<String>) -> Self {
        Self {
            replies,
            next: AtomicUsize::new(0),
        }
    }
}

#[async_trait]
impl TutorBackend for ScriptedTutor {
    async fn reply(&self, _prompt: &str) -> Result<String, TutorError> {
        if self.replies.is_empty() {
            return Err(TutorError::Unavailable("empty script".into()));
        }
        let i = self.next.fetch_add(1, Ordering::Relaxed) % self.replies.len();
        Ok(self.replies[i].clone())
    }
}

/// Always fails; stands in for a backend that is down.
#[derive(Debug, Default)]
pub struct OfflineTutor;

#[async_trait]
impl TutorBackend for OfflineTutor {
    async fn reply(&self, _prompt: &str) -> Result<String, TutorError> {
        Err(TutorError::Unavailable("backend offline".into()))
    }
}

/// Sleeps before answering; used to exercise the relay timeout.
#[derive(Debug)]
pub struct SlowTutor(pub Duration);

#[async_trait]
impl TutorBackend for SlowTutor {
    async fn reply(&self, prompt: &str) -> Result<String, TutorError> {
        tokio::time::sleep(self.0).await;
        Ok(format!("Eventually: {prompt}"))
    }
}
