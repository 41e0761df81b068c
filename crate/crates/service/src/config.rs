use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use darts_core::aggregation::AggregationPolicy;
use darts_core::pipeline::PipelineConfig;
use darts_core::sim::AxisDirection;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Operator {
    pub username: String,
    pub password: String,
    #[serde(default = "default_ttl")]
    pub token_ttl_s: u64,
}

fn default_ttl() -> u64 {
    3600
}

/// Lane layout. Lane `k` starts `k * stagger_s` after the first record and
/// cuts consecutive segments of `segment_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneConfig {
    pub count: u8,
    pub stagger_s: f64,
    pub segment_s: f64,
}

impl Default for LaneConfig {
    fn default() -> Self {
        Self { count: 3, stagger_s: 40.0, segment_s: 120.0 }
    }
}

impl LaneConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.count == 0 {
            return Err(ServiceError::Config("at least one lane is required".into()));
        }
        if !(self.segment_s.is_finite() && self.segment_s > 0.0) {
            return Err(ServiceError::Config("segment length must be positive".into()));
        }
        if !(self.stagger_s.is_finite() && self.stagger_s >= 0.0) {
            return Err(ServiceError::Config("lane stagger must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    /// Model checkpoint; relative paths resolve against the config file.
    pub checkpoint: PathBuf,
    pub operator: Operator,
    /// Shared key the drone-side replayer presents on `POST /feed`.
    pub feed_key: String,
    #[serde(default)]
    pub policy: AggregationPolicy,
    /// Overrides the pipeline stored in the checkpoint.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    #[serde(default)]
    pub lanes: LaneConfig,
    /// Patrol direction used by the opposing-lane filter.
    #[serde(default = "default_direction")]
    pub direction: AxisDirection,
}

fn default_bind() -> SocketAddr {
    "127.0.0.1:8080".parse().unwrap()
}

fn default_direction() -> AxisDirection {
    AxisDirection::Increasing
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let config: ServiceConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Read a config file and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.checkpoint.is_relative() {
            config.checkpoint = base.join(&config.checkpoint);
        }
        if config.data_dir.is_relative() {
            config.data_dir = base.join(&config.data_dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.operator.username.is_empty() || self.operator.password.is_empty() {
            return Err(ServiceError::Config("operator credentials must be non-empty".into()));
        }
        if self.operator.token_ttl_s == 0 {
            return Err(ServiceError::Config("token lifetime must be positive".into()));
        }
        if self.feed_key.is_empty() {
            return Err(ServiceError::Config("feed key must be non-empty".into()));
        }
        AggregationPolicy::new(self.policy.incident_threshold, self.policy.normal_threshold)
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        if let Some(p) = &self.pipeline {
            p.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        }
        self.lanes.validate()
    }
}
