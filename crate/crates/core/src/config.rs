//! Deployment configuration file (TOML). Secrets come from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DEFAULT_IDLE_GAP_MINUTES;
use crate::model::LoggingPolicy;
use crate::privacy::RuleSpec;
use crate::risk::RiskThresholds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub ingest: IngestSection,
    pub privacy: PrivacySection,
    pub taxonomy: TaxonomySection,
    pub risk: RiskSection,
    pub analyze: AnalyzeSection,
    pub service: ServiceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub idle_gap_minutes: i64,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            idle_gap_minutes: DEFAULT_IDLE_GAP_MINUTES,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub policy: LoggingPolicy,
    pub roster_names: Vec<String>,
    /// Replaces the bundled rules when present.
    pub rules: Option<Vec<RuleSpec>>,
    /// A versioned rule-set file; takes precedence over `rules`.
    pub rules_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomySection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    pub thresholds: Option<RiskThresholds>,
    pub templates_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub max_reject_rate: f64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            max_reject_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseEntry {
    pub course_id: String,
    /// Shared key the LMS signs launches with.
    pub launch_key: String,
    #[serde(default)]
    pub policy: Option<LoggingPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub token_ttl_minutes: i64,
    pub grant_ttl_hours: i64,
    pub tutor_timeout_ms: u64,
    pub courses: Vec<CourseEntry>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            token_ttl_minutes: 60,
            grant_ttl_hours: 24,
            tutor_timeout_ms: 10_000,
            courses: Vec::new(),
        }
    }
}

impl AppConfig {
    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(raw)?)
    }

    /// Loads the file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&raw)?;
        if let Some(base) = path.parent() {
            for p in [
                &mut cfg.privacy.rules_path,
                &mut cfg.taxonomy.path,
                &mut cfg.risk.templates_path,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}
