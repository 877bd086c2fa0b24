//! Pipeline configuration: one TOML file plus `key=value` overrides.
//!
//! ```toml
//! data_dir = "data"
//! mode = "fixture"          # or "live"
//! fixture_dir = "fixture"   # fixture mode: recorded HTTP + mock_users.json
//!
//! [feeds]
//! poll_interval_secs = 300
//! [feeds.sections]
//! S = "SPORTS"
//!
//! [social]
//! backend = "mock"          # or "http"
//! requests_per_window = 900
//!
//! [scheduler]
//! policy = "epoch"
//! ```
//!
//! Unknown keys anywhere are rejected. An override such as
//! `scheduler.seed=7` or `feeds.sections.B=BUSINESS` is parsed as a TOML
//! value when possible and as a bare string otherwise.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use url::Url;

use crate::analytics::AnalyticsConfig;
use crate::feed::FeedConfig;
use crate::fetch::FetchConfig;
use crate::scheduler::SchedulerConfig;

pub const BEARER_ENV: &str = "NT_API_BEARER";
pub const KEY_ENV: &str = "NT_API_KEY";
pub const SECRET_ENV: &str = "NT_API_SECRET";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Feeds and pages come from recorded responses under `fixture_dir`.
    #[default]
    Fixture,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// In-process mock reading `mock_users.json`.
    #[default]
    Mock,
    /// The v1.1-style HTTP API at `base_url` (live, or `nt mock-serve`).
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SocialConfig {
    pub backend: BackendKind,
    /// Defaults to `<fixture_dir>/mock_users.json`.
    pub mock_users: Option<PathBuf>,
    pub base_url: String,
    pub requests_per_window: u32,
    pub window_secs: u32,
    pub retry_attempts: u32,
    pub retry_initial_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for SocialConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            mock_users: None,
            base_url: "https://api.twitter.com".into(),
            requests_per_window: 900,
            window_secs: 900,
            retry_attempts: 3,
            retry_initial_backoff_ms: 2000,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub mode: Mode,
    pub fixture_dir: PathBuf,
    pub log_level: String,
    pub feeds: FeedConfig,
    pub fetch: FetchConfig,
    pub social: SocialConfig,
    pub scheduler: SchedulerConfig,
    pub analytics: AnalyticsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            mode: Mode::Fixture,
            fixture_dir: PathBuf::from("fixture"),
            log_level: "info".into(),
            feeds: FeedConfig::default(),
            fetch: FetchConfig::default(),
            social: SocialConfig::default(),
            scheduler: SchedulerConfig::default(),
            analytics: AnalyticsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Load `path` (if given), apply overrides, validate.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.data_dir.as_os_str().is_empty() {
            return bad("data_dir is empty".into());
        }
        if self.feeds.sections.is_empty() {
            return bad("feeds.sections lists no sections".into());
        }
        if let Some((s, _)) = self.feeds.sections.iter().find(|(_, t)| t.trim().is_empty()) {
            return bad(format!("feeds.sections.{} has an empty token", s.code()));
        }
        if !self.feeds.path_archetype.contains("{section}") {
            return bad("feeds.path_archetype must contain {section}".into());
        }
        Url::parse(&self.feeds.base_url).map_err(|e| ConfigError::Invalid(format!("feeds.base_url: {e}")))?;
        if self.feeds.poll_interval_secs == 0 {
            return bad("feeds.poll_interval_secs must be positive".into());
        }
        if self.fetch.parallelism == 0 {
            return bad("fetch.parallelism must be positive".into());
        }
        if self.fetch.timeout_secs == 0 {
            return bad("fetch.timeout_secs must be positive".into());
        }
        if self.social.window_secs == 0 || self.scheduler.window_secs == 0 {
            return bad("window_secs must be positive".into());
        }
        if self.social.retry_attempts == 0 {
            return bad("social.retry_attempts must be at least 1".into());
        }
        if self.scheduler.batch_size == 0 {
            return bad("scheduler.batch_size must be positive".into());
        }
        if self.social.backend == BackendKind::Http {
            Url::parse(&self.social.base_url).map_err(|e| ConfigError::Invalid(format!("social.base_url: {e}")))?;
        }
        if !matches!(
            self.log_level.as_str(),
            "trace" | "debug" | "info" | "warn" | "error" | "off"
        ) {
            return bad(format!(
                "log_level {:?} (trace|debug|info|warn|error|off)",
                self.log_level
            ));
        }
        Ok(())
    }

    pub fn mock_users_path(&self) -> PathBuf {
        self.social
            .mock_users
            .clone()
            .unwrap_or_else(|| self.fixture_dir.join("mock_users.json"))
    }

    pub fn http_fixture_dir(&self) -> PathBuf {
        self.fixture_dir.join("http")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Set `dotted.key = value` inside `table`, creating intermediate tables.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Override(format!("{spec} ({p} is not a table)")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
