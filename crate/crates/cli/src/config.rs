//! JSE configuration file.
//!
//! ```toml
//! listen = "0.0.0.0:7745"
//! catalog = "/var/lib/geps/catalog"
//! poll_ms = 500
//! staleness_ms = 10000
//! retry_limit = 3
//! backoff_initial_ms = 100
//! backoff_max_ms = 2000
//! claim_limit = 64
//! sync = true
//! ```
//!
//! Every key is optional; command-line flags override the file.

use crate::error::CliError;
use geps_core::jse::JseConfig;
use serde::Deserialize;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JseFile {
    pub listen: Option<SocketAddr>,
    pub catalog: Option<PathBuf>,
    pub poll_ms: Option<u64>,
    pub staleness_ms: Option<u64>,
    pub retry_limit: Option<u32>,
    pub backoff_initial_ms: Option<u64>,
    pub backoff_max_ms: Option<u64>,
    pub claim_limit: Option<usize>,
    pub sync: Option<bool>,
}

impl JseFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Fills a [`JseConfig`]; `overrides` wins over `self`.
    pub fn merge(&self, overrides: &JseFile) -> Result<JseConfig, CliError> {
        let catalog = overrides
            .catalog
            .clone()
            .or_else(|| self.catalog.clone())
            .ok_or_else(|| CliError::Usage("no catalog directory given".into()))?;
        let mut cfg = JseConfig::new(catalog);
        macro_rules! pick {
            ($field:ident) => {
                overrides.$field.clone().or_else(|| self.$field.clone())
            };
        }
        if let Some(v) = pick!(listen) {
            cfg.listen = v;
        }
        if let Some(v) = pick!(poll_ms) {
            cfg.poll_interval = Duration::from_millis(v);
        }
        if let Some(v) = pick!(staleness_ms) {
            cfg.staleness = Duration::from_millis(v);
        }
        if let Some(v) = pick!(retry_limit) {
            cfg.retry_limit = v;
        }
        if let Some(v) = pick!(backoff_initial_ms) {
            cfg.backoff_initial = Duration::from_millis(v);
        }
        if let Some(v) = pick!(backoff_max_ms) {
            cfg.backoff_max = Duration::from_millis(v);
        }
        if let Some(v) = pick!(claim_limit) {
            cfg.claim_limit = v;
        }
        if let Some(v) = pick!(sync) {
            cfg.sync = v;
        }
        cfg.validate().map_err(CliError::Usage)?;
        Ok(cfg)
    }
}
