//! Software-defined QoS control for HPC storage clusters, as a deterministic
//! discrete-event simulator.
//!
//! The crate models a cluster of storage servers, each running a *data plane*
//! (per-application queues, virtual token buckets and a traffic shaper bounded
//! by the server's physical bandwidth), governed by a logically centralized
//! *control plane* that turns desired bandwidth into per-server token shares,
//! lets an application's queue borrow unused tokens from its queues on other
//! servers, and enforces operator policies written in a small DSL such as
//! `<app-1, borrow=TRUE, thres=0.8>`.
//!
//! Each server picks the next queue to serve with an extended M-LWDF rule in
//! which borrowed tokens raise an application's priority.
//!
//! The usual entry point is [`sim::Simulation`] driven by a [`config::SimConfig`]
//! (see [`config::bundled`] for the shipped scenarios). The `examples/`
//! directory has one runnable program per capability.

pub mod cli;
pub mod config;
pub mod control_plane;
pub mod data_plane;
pub mod metrics;
pub mod policy;
pub mod scheduler;
pub mod sim;

use std::borrow::Borrow;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Bytes in one MB. Rates are decimal: 1 MB/s = 10^6 bytes per second.
pub const BYTES_PER_MB: f64 = 1_000_000.0;

/// Application identifier, the abstracted IO header used for classification.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AppId(String);

impl AppId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AppId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for AppId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl Borrow<str> for AppId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Storage server identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
