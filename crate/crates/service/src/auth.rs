//! Signed LMS launches and the bearer tokens issued for them.
//!
//! A launch carries claims signed with the course's shared key
//! (HMAC-SHA256 over the claims' JSON encoding). The service answers with a
//! bearer token `base64url(claims) "." base64url(hmac)` under its own secret.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;
use tutorlens_core::{timefmt, Role};

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("malformed credential: {0}")]
    Malformed(String),
    #[error("bad signature")]
    BadSignature,
    #[error("credential expired")]
    Expired,
    #[error("missing bearer token")]
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchClaims {
    pub subject: String,
    pub role: Role,
    pub course_id: String,
    #[serde(with = "timefmt")]
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchPayload {
    pub claims: LaunchClaims,
    /// Lowercase hex HMAC of the claims' JSON encoding.
    pub signature: String,
}

/// The verified identity behind a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub subject: String,
    pub role: Role,
    pub course_id: String,
    #[serde(with = "timefmt")]
    pub expires_at: DateTime<Utc>,
}

fn mac(key: &[u8], msg: &[u8]) -> HmacSha256 {
    let mut m = <HmacSha256 as KeyInit>::new_from_slice(key).expect("hmac accepts any key length");
    m.update(msg);
    m
}

fn claims_bytes(claims: &LaunchClaims) -> Vec<u8> {
    serde_json::to_vec(claims).expect("claims serialize")
}

/// Builds a launch as an LMS would.
pub fn sign_launch(key: &[u8], claims: LaunchClaims) -> LaunchPayload {
    let sig = mac(key, &claims_bytes(&claims)).finalize().into_bytes();
    LaunchPayload {
        claims,
        signature: hex::encode(sig),
    }
}

pub fn parse_launch(body: &[u8]) -> Result<LaunchPayload, AuthError> {
    serde_json::from_slice(body).map_err(|e| AuthError::Malformed(e.to_string()))
}

/// Checks signature and expiry of a launch.
pub fn verify_launch(key: &[u8], payload: &LaunchPayload, now: DateTime<Utc>) -> Result<(), AuthError> {
    let sig = hex::decode(&payload.signature).map_err(|_| AuthError::BadSignature)?;
    mac(key, &claims_bytes(&payload.claims))
        .verify_slice(&sig)
        .map_err(|_| AuthError::BadSignature)?;
    if payload.claims.expires_at <= now {
        return Err(AuthError::Expired);
    }
    Ok(())
}

pub fn issue_token(secret: &[u8], principal: &Principal) -> String {
    let body = serde_json::to_vec(principal).expect("principal serializes");
    let sig = mac(secret, &body).finalize().into_bytes();
    format!("{}.{}", URL_SAFE_NO_PAD.encode(&body), URL_SAFE_NO_PAD.encode(sig))
}

pub fn verify_token(secret: &[u8], token: &str, now: DateTime<Utc>) -> Result<Principal, AuthError> {
    let (body, sig) = token
        .split_once('.')
        .ok_or_else(|| AuthError::Malformed("token has no signature part".into()))?;
    let body = URL_SAFE_NO_PAD
        .decode(body)
        .map_err(|_| AuthError::Malformed("token body is not base64url".into()))?;
    let sig = URL_SAFE_NO_PAD
        .decode(sig)
        .map_err(|_| AuthError::Malformed("token signature is not base64url".into()))?;
    mac(secret, &body)
        .verify_slice(&sig)
        .map_err(|_| AuthError::BadSignature)?;
    let principal: Principal =
        serde_json::from_slice(&body).map_err(|e| AuthError::Malformed(e.to_string()))?;
    if principal.expires_at <= now {
        return Err(AuthError::Expired);
    }
    Ok(principal)
}

/// Pulls the token out of an `Authorization` header value.
pub fn bearer(header: Option<&str>) -> Result<&str, AuthError> {
    let value = header.ok_or(AuthError::Missing)?;
    let (scheme, token) = value.trim().split_once(' ').ok_or(AuthError::Missing)?;
    if !scheme.eq_ignore_ascii_case("bearer") || token.trim().is_empty() {
        return Err(AuthError::Missing);
    }
    Ok(token.trim())
}
