//! Extended M-LWDF queue selection.
//!
//! Each serviceable queue gets priority `gamma * W * rho` where
//! `gamma = -ln(delta) / T` comes from the application's delay target `T` and
//! tolerated violation probability `delta`, `W` is the head-of-line delay and
//! `rho` is the token-richness ratio `bucket level / base allotment`.
//!
//! Without borrowing `rho` hovers around a constant and the rule behaves like
//! plain M-LWDF. Tokens borrowed from other servers raise `rho`, so a queue
//! that borrowed gets served ahead of its peers and takes a larger share of a
//! saturated server.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::data_plane::{AppQueue, QueueSelector, ServerState, TokenBucket};
use crate::{AppId, ServerId};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("gamma requires 0 < delta < 1 and T > 0 (got delta={delta}, T={target})")]
pub struct DomainError {
    pub delta: f64,
    pub target: f64,
}

/// `-ln(delta) / target`.
pub fn gamma(delta: f64, target: f64) -> Result<f64, DomainError> {
    if !(delta > 0.0 && delta < 1.0 && target > 0.0 && target.is_finite()) {
        return Err(DomainError { delta, target });
    }
    Ok(-delta.ln() / target)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SchedWeights {
    pub gamma: BTreeMap<AppId, f64>,
    /// Tokens per epoch each (app, server) bucket receives without borrowing.
    pub base_allotment: BTreeMap<(AppId, ServerId), f64>,
}

impl SchedWeights {
    fn gamma_of(&self, app: &AppId) -> f64 {
        self.gamma.get(app).copied().unwrap_or(0.0)
    }

    fn allotment_of(&self, app: &AppId, server: ServerId) -> f64 {
        self.base_allotment
            .get(&(app.clone(), server))
            .copied()
            .unwrap_or(0.0)
    }

    /// Multiplies every gamma by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            gamma: self.gamma.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
            base_allotment: self.base_allotment.clone(),
        }
    }
}

/// Priority of one queue; zero when it is empty or cannot pay for its head.
pub fn priority(queue: &AppQueue, bucket: &TokenBucket, gamma: f64, base_allotment: f64, now: f64) -> f64 {
    let Some(head) = queue.head() else {
        return 0.0;
    };
    if bucket.level() < bucket.cost(head.size_bytes) as f64 {
        return 0.0;
    }
    let hol_delay = (now - head.arrival_time).max(0.0);
    // An app with no regular allotment (e.g. the best-effort class) is
    // measured against a single token.
    let richness = bucket.level() / if base_allotment > 0.0 { base_allotment } else { 1.0 };
    gamma * hol_delay * richness
}

/// The M-LWDF selector bound to one set of weights.
#[derive(Debug, Clone, Default)]
pub struct MLwdf {
    pub weights: SchedWeights,
}

impl MLwdf {
    pub fn new(weights: SchedWeights) -> Self {
        Self { weights }
    }

    pub fn priority_of(&self, server: &ServerState, app: &AppId, now: f64) -> f64 {
        server.slot(app.as_str()).map_or(0.0, |slot| {
            priority(
                &slot.queue,
                &slot.bucket,
                self.weights.gamma_of(app),
                self.weights.allotment_of(app, server.id()),
                now,
            )
        })
    }
}

/// Picks the serviceable app with the highest priority; ties go to the longer
/// head-of-line delay, then to the smaller app id.
pub fn select_next(server: &ServerState, weights: &SchedWeights, now: f64) -> Option<AppId> {
    let mut best: Option<(&AppId, f64, f64)> = None;
    for (app, slot) in server.apps() {
        if server.check_head(app.as_str()).is_err() {
            continue;
        }
        let hol = now - slot.queue.hol_since().expect("serviceable queue has a head");
        let p = priority(
            &slot.queue,
            &slot.bucket,
            weights.gamma_of(app),
            weights.allotment_of(app, server.id()),
            now,
        );
        // Apps iterate in id order, so keeping the incumbent on a full tie
        // implements the id tie-break.
        let better = match best {
            None => true,
            Some((_, bp, bhol)) => p > bp || (p == bp && hol > bhol),
        };
        if better {
            best = Some((app, p, hol));
        }
    }
    best.map(|(app, _, _)| app.clone())
}

impl QueueSelector for MLwdf {
    fn select_next(&self, server: &ServerState, now: f64) -> Option<AppId> {
        select_next(server, &self.weights, now)
    }
}
