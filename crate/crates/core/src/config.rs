//! Run configuration: JSON schema, defaults and cross-field validation.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control_plane::ApplicationSpec;
use crate::data_plane::{BEST_EFFORT, DEFAULT_QUEUE_DEPTH_LIMIT};
use crate::policy::{parse_policy, validate_policy, ParseError, PolicyStatement};
use crate::{AppId, ServerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub id: ServerId,
    pub phys_limit_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalProcess {
    Deterministic { rate_mbps: f64 },
    Poisson { mean_rate_mbps: f64 },
}

impl ArrivalProcess {
    pub fn rate_mbps(&self) -> f64 {
        match self {
            ArrivalProcess::Deterministic { rate_mbps } => *rate_mbps,
            ArrivalProcess::Poisson { mean_rate_mbps } => *mean_rate_mbps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMapping {
    RoundRobin,
    UniformRandom,
    /// One weight per server, in `servers` order.
    StaticWeights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadStream {
    pub app_id: AppId,
    #[serde(default)]
    pub source_node: u32,
    pub arrival_process: ArrivalProcess,
    pub request_size_bytes: u64,
    pub server_mapping: ServerMapping,
}

fn d_tick() -> f64 {
    0.1
}
fn d_epoch() -> f64 {
    0.1
}
fn d_window() -> f64 {
    1.0
}
fn d_warmup() -> f64 {
    1.0
}
fn d_seed() -> u64 {
    42
}
fn d_true() -> bool {
    true
}
fn d_bytes_per_token() -> u64 {
    1_000_000
}
fn d_depth() -> usize {
    DEFAULT_QUEUE_DEPTH_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    #[serde(default = "d_tick")]
    pub tick_s: f64,
    #[serde(default = "d_epoch")]
    pub epoch_s: f64,
    /// Reporting window and sliding satisfaction window.
    #[serde(default = "d_window")]
    pub window_s: f64,
    #[serde(default = "d_warmup")]
    pub warmup_s: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            tick_s: d_tick(),
            epoch_s: d_epoch(),
            window_s: d_window(),
            warmup_s: d_warmup(),
        }
    }
}

impl Timing {
    /// Ticks per epoch; valid after [`SimConfig::validate`].
    pub fn ticks_per_epoch(&self) -> u64 {
        (self.epoch_s / self.tick_s).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub servers: Vec<ServerConfig>,
    #[serde(default)]
    pub apps: Vec<ApplicationSpec>,
    #[serde(default)]
    pub streams: Vec<WorkloadStream>,
    #[serde(default)]
    pub policies: Vec<String>,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_true")]
    pub borrowing_enabled: bool,
    #[serde(default = "d_bytes_per_token")]
    pub bytes_per_token: u64,
    #[serde(default = "d_depth")]
    pub queue_depth_limit: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            servers: Vec::new(),
            apps: Vec::new(),
            streams: Vec::new(),
            policies: Vec::new(),
            timing: Timing::default(),
            seed: d_seed(),
            borrowing_enabled: d_true(),
            bytes_per_token: d_bytes_per_token(),
            queue_depth_limit: d_depth(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("policies[{index}]: {error}")]
    PolicySyntax { index: usize, error: ParseError },
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(schema(path, format!("must be positive, got {v}")))
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parses the embedded policy strings.
    pub fn parsed_policies(&self) -> Result<Vec<PolicyStatement>, ConfigError> {
        self.policies
            .iter()
            .enumerate()
            .map(|(index, text)| parse_policy(text).map_err(|error| ConfigError::PolicySyntax { index, error }))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.servers.is_empty() {
            return Err(schema("servers", "at least one server is required"));
        }
        let mut server_ids = BTreeSet::new();
        for (i, s) in self.servers.iter().enumerate() {
            positive(&format!("servers[{i}].phys_limit_mbps"), s.phys_limit_mbps)?;
            if !server_ids.insert(s.id) {
                return Err(schema(format!("servers[{i}].id"), format!("duplicate server id {}", s.id)));
            }
        }

        let mut app_ids = BTreeSet::new();
        for (i, a) in self.apps.iter().enumerate() {
            let p = format!("apps[{i}]");
            let id = a.app_id.as_str();
            if id.is_empty() || !id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
                return Err(schema(format!("{p}.app_id"), format!("invalid application id `{id}`")));
            }
            if id == BEST_EFFORT {
                return Err(schema(format!("{p}.app_id"), "`best-effort` is reserved"));
            }
            if !app_ids.insert(a.app_id.clone()) {
                return Err(schema(format!("{p}.app_id"), format!("duplicate application `{id}`")));
            }
            positive(&format!("{p}.desired_mbps"), a.desired_mbps)?;
            positive(&format!("{p}.delay_target_s"), a.delay_target_s)?;
            if !(a.delay_violation_prob > 0.0 && a.delay_violation_prob < 1.0) {
                return Err(schema(format!("{p}.delay_violation_prob"), "must lie in (0, 1)"));
            }
            if let Some(t) = a.borrow_threshold {
                if !a.borrow_allowed {
                    return Err(schema(format!("{p}.borrow_threshold"), "requires borrow_allowed"));
                }
                if !(t > 0.0 && t <= 1.0) {
                    return Err(schema(format!("{p}.borrow_threshold"), "must lie in (0, 1]"));
                }
            }
        }

        for (i, s) in self.streams.iter().enumerate() {
            let p = format!("streams[{i}]");
            if !app_ids.contains(&s.app_id) {
                return Err(schema(format!("{p}.app_id"), format!("unknown application `{}`", s.app_id)));
            }
            positive(&format!("{p}.arrival_process"), s.arrival_process.rate_mbps())?;
            if s.request_size_bytes == 0 {
                return Err(schema(format!("{p}.request_size_bytes"), "must be at least 1"));
            }
            if let ServerMapping::StaticWeights(w) = &s.server_mapping {
                let p = format!("{p}.server_mapping.static_weights");
                if w.len() != self.servers.len() {
                    return Err(schema(p, format!("expected {} weights, got {}", self.servers.len(), w.len())));
                }
                if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                    return Err(schema(p, "weights must be non-negative"));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(schema(p, format!("weights must sum to 1, got {sum}")));
                }
            }
        }

        let t = &self.timing;
        positive("timing.tick_s", t.tick_s)?;
        positive("timing.epoch_s", t.epoch_s)?;
        positive("timing.window_s", t.window_s)?;
        if !(t.warmup_s >= 0.0 && t.warmup_s.is_finite()) {
            return Err(schema("timing.warmup_s", "must be non-negative"));
        }
        let ratio = t.epoch_s / t.tick_s;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(schema("timing.epoch_s", format!("must be an integer multiple of tick_s ({})", t.tick_s)));
        }
        if self.bytes_per_token == 0 {
            return Err(schema("bytes_per_token", "must be at least 1"));
        }
        if self.queue_depth_limit == 0 {
            return Err(schema("queue_depth_limit", "must be at least 1"));
        }

        for (index, stmt) in self.parsed_policies()?.iter().enumerate() {
            let violations = validate_policy(stmt);
            if let Some(v) = violations.first() {
                return Err(schema(format!("policies[{index}]"), v.to_string()));
            }
            if !app_ids.contains(&stmt.app_id) {
                return Err(schema(format!("policies[{index}]"), format!("unknown application `{}`", stmt.app_id)));
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = fs::read_to_string(path)?;
    SimConfig::from_json(&text)
}

/// Scenarios shipped with the crate.
pub mod bundled {
    use super::SimConfig;

    /// One application issuing unbalanced IO over three servers.
    pub const FIG2_JSON: &str = include_str!("../scenarios/fig2.json");
    /// Two applications saturating a single server.
    pub const SATURATION2_JSON: &str = include_str!("../scenarios/saturation2.json");
    /// The same unbalanced demand from deterministic, server-pinned streams,
    /// governed by a `thres` borrowing policy.
    pub const THRES_JSON: &str = include_str!("../scenarios/thres.json");

    pub const ALL: [(&str, &str); 3] = [
        ("fig2.json", FIG2_JSON),
        ("saturation2.json", SATURATION2_JSON),
        ("thres.json", THRES_JSON),
    ];

    pub fn fig2() -> SimConfig {
        SimConfig::from_json(FIG2_JSON).expect("bundled fig2.json is valid")
    }

    pub fn saturation2() -> SimConfig {
        SimConfig::from_json(SATURATION2_JSON).expect("bundled saturation2.json is valid")
    }

    pub fn thres() -> SimConfig {
        SimConfig::from_json(THRES_JSON).expect("bundled thres.json is valid")
    }

    /// Absolute path of a bundled scenario file.
    pub fn path(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
    }
}
