//! The discrete-event loop.
//!
//! Time advances over four event kinds. At an epoch boundary the control
//! plane re-syncs QoS if policies changed, refills every bucket and runs one
//! borrowing round; at a server tick the traffic shaper serves what the
//! scheduler selects within the tick's byte budget; arrivals are classified
//! and queued; flushes seal reporting windows. Events sharing a timestamp run
//! in that kind order, then in scheduling order.

pub mod event;
pub mod workload;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use event::{EventKind, EventQueue, SimEvent, TimeTravel};
pub use workload::{substream, StreamState};

use crate::config::{ConfigError, SimConfig};
use crate::control_plane::{
    borrowing_round, distribute_tokens, satisfaction, BorrowTransfer, ControlError, ControlPlane,
};
use crate::data_plane::{classify, Cluster, ServerState, TokenBucket, BEST_EFFORT};
use crate::metrics::{MetricsCollector, MetricsReport, MetricsSample, RunInfo};
use crate::policy::{PolicyRegistry, PolicyStatement, ValidationFailed};
use crate::scheduler::MLwdf;
use crate::{AppId, ServerId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Policy(#[from] ValidationFailed),
    #[error(transparent)]
    TimeTravel(#[from] TimeTravel),
    #[error("duration must be positive and finite, got {0}")]
    Duration(f64),
}

/// Token bookkeeping for one application at one epoch boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochAudit {
    pub time: f64,
    /// Epochs completed including this one.
    pub epochs: u64,
    pub app_id: AppId,
    pub tokens_before_borrow: f64,
    pub tokens_after_borrow: f64,
    /// Tokens admitted into buckets by refills so far (after clamping).
    pub granted_total: f64,
    /// Rate-implied tokens for the elapsed epochs.
    pub rate_bound: f64,
    /// Sum of the app's bucket capacities.
    pub capacity_slack: f64,
}

/// One simulation run over a validated configuration.
#[derive(Debug)]
pub struct Simulation {
    config: SimConfig,
    duration: f64,
    queue: EventQueue,
    cluster: Cluster,
    registry: PolicyRegistry,
    control: ControlPlane,
    scheduler: MLwdf,
    streams: Vec<StreamState>,
    /// Time of each stream's next request after the one already queued.
    pending_next: Vec<f64>,
    metrics: MetricsCollector,
    registered: BTreeSet<AppId>,
    /// Largest request cost (tokens) seen per app, so buckets can hold one.
    max_cost: BTreeMap<AppId, u64>,
    granted: BTreeMap<AppId, f64>,
    audit: Vec<EpochAudit>,
    transfers: Vec<(f64, BorrowTransfer)>,
    epochs_done: u64,
}

impl Simulation {
    pub fn new(config: SimConfig, duration: f64) -> Result<Self, SimError> {
        config.validate()?;
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(SimError::Duration(duration));
        }
        let mut registry = PolicyRegistry::new();
        for stmt in config.parsed_policies()? {
            registry.apply(&stmt)?;
        }

        let server_ids: Vec<ServerId> = config.servers.iter().map(|s| s.id).collect();
        let mut sorted_ids = server_ids.clone();
        sorted_ids.sort();
        let mut control = ControlPlane::new(config.apps.clone(), sorted_ids.clone(), config.timing.epoch_s, config.bytes_per_token)?;
        control.sync(&registry)?;

        let registered: BTreeSet<AppId> = config.apps.iter().map(|a| a.app_id.clone()).collect();
        let mut max_cost: BTreeMap<AppId, u64> = registered.iter().map(|a| (a.clone(), 1)).collect();
        for s in &config.streams {
            let cost = s.request_size_bytes.div_ceil(config.bytes_per_token);
            let e = max_cost.entry(s.app_id.clone()).or_insert(1);
            *e = (*e).max(cost);
        }

        let servers = config
            .servers
            .iter()
            .map(|sc| {
                let mut server = ServerState::new(sc.id, sc.phys_limit_mbps);
                for app in &registered {
                    let cap = control.bucket_capacity(app.as_str(), max_cost[app]);
                    server.add_app(app.clone(), TokenBucket::new(cap, config.bytes_per_token), config.queue_depth_limit);
                }
                server.add_app(
                    AppId::from(BEST_EFFORT),
                    TokenBucket::new(1.0, config.bytes_per_token),
                    config.queue_depth_limit,
                );
                server
            })
            .collect();

        let streams = config
            .streams
            .iter()
            .enumerate()
            .map(|(i, s)| StreamState::new(s.clone(), i, server_ids.clone(), config.seed))
            .collect();

        let metrics = MetricsCollector::new(config.timing.window_s, registered.iter().cloned(), sorted_ids);
        let scheduler = MLwdf::new(control.weights().clone());

        let mut sim = Self {
            duration,
            queue: EventQueue::new(),
            cluster: Cluster::new(servers),
            registry,
            control,
            scheduler,
            streams,
            pending_next: Vec::new(),
            metrics,
            registered,
            max_cost,
            granted: BTreeMap::new(),
            audit: Vec::new(),
            transfers: Vec::new(),
            epochs_done: 0,
            config,
        };
        sim.prime()?;
        Ok(sim)
    }

    fn prime(&mut self) -> Result<(), SimError> {
        self.queue.schedule(0.0, EventKind::EpochBoundary)?;
        for id in self.cluster.ids() {
            self.queue.schedule(0.0, EventKind::ServerTick(id))?;
        }
        for i in 0..self.streams.len() {
            let t = self.streams[i].first_arrival();
            if t < self.duration {
                let (request, next) = self.streams[i].next_arrival(t);
                self.pending_next.push(next);
                self.queue.schedule(t, EventKind::Arrival { stream: i, request })?;
            } else {
                self.pending_next.push(f64::INFINITY);
            }
        }
        let w = self.config.timing.window_s;
        if w < self.duration {
            self.queue.schedule(w, EventKind::MetricsFlush)?;
        }
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.queue.clock()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn control(&self) -> &ControlPlane {
        &self.control
    }

    pub fn registry(&self) -> &PolicyRegistry {
        &self.registry
    }

    pub fn metrics(&self) -> &MetricsCollector {
        &self.metrics
    }

    pub fn audit(&self) -> &[EpochAudit] {
        &self.audit
    }

    /// Every executed transfer with the epoch time it happened at.
    pub fn transfers(&self) -> &[(f64, BorrowTransfer)] {
        &self.transfers
    }

    /// Hands a statement to the policy enforcer; it takes effect at the next
    /// epoch boundary.
    pub fn apply_policy(&mut self, stmt: &PolicyStatement) -> Result<(), SimError> {
        if !self.registered.contains(&stmt.app_id) {
            return Err(ConfigError::Schema {
                path: "policies".into(),
                message: format!("unknown application `{}`", stmt.app_id),
            }
            .into());
        }
        self.registry.apply(stmt)?;
        Ok(())
    }

    /// Processes the next event. Returns false once the run is complete.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some(ev) = self.queue.pop() else {
            return Ok(false);
        };
        match ev.kind {
            EventKind::EpochBoundary => self.on_epoch(ev.time)?,
            EventKind::ServerTick(id) => self.on_tick(id, ev.time)?,
            EventKind::Arrival { stream, request } => self.on_arrival(stream, request)?,
            EventKind::MetricsFlush => self.on_flush(ev.time)?,
        }
        Ok(true)
    }

    /// Processes every event strictly before `t`.
    pub fn run_until(&mut self, t: f64) -> Result<(), SimError> {
        while matches!(self.queue.peek_time(), Some(next) if next < t) {
            self.step()?;
        }
        Ok(())
    }

    /// Runs to the configured duration and builds the report.
    pub fn run(mut self) -> Result<(MetricsReport, Self), SimError> {
        while self.step()? {}
        self.metrics.seal_until(self.duration);
        let report = self.report();
        Ok((report, self))
    }

    pub fn report(&self) -> MetricsReport {
        let desired: BTreeMap<AppId, f64> = self
            .control
            .effective()
            .iter()
            .map(|(id, spec)| (id.clone(), spec.desired_mbps))
            .collect();
        self.metrics.report(
            &desired,
            RunInfo {
                seed: self.config.seed,
                duration_s: self.duration,
                warmup_s: self.config.timing.warmup_s,
                window_s: self.config.timing.window_s,
            },
        )
    }

    /// Longest current head-of-line wait of any queued request.
    pub fn max_queued_wait(&self) -> f64 {
        let now = self.now();
        self.cluster
            .servers()
            .iter()
            .flat_map(|s| s.apps().filter_map(|(_, slot)| slot.queue.hol_since()))
            .map(|t| now - t)
            .fold(0.0, f64::max)
    }

    fn on_epoch(&mut self, now: f64) -> Result<(), SimError> {
        if self.control.sync(&self.registry)? {
            self.scheduler = MLwdf::new(self.control.weights().clone());
            for server in self.cluster.servers_mut() {
                let sid = server.id();
                for (app, slot) in server.apps_mut() {
                    let Some(min) = self.max_cost.get(app) else {
                        continue;
                    };
                    let excess = slot.bucket.set_capacity(self.control.bucket_capacity(app.as_str(), *min));
                    self.metrics.record_waste(now, app, sid, excess);
                }
            }
        }

        let shares = self.control.next_epoch_shares();
        for ((app, _), share) in &shares {
            *self.granted.entry(app.clone()).or_insert(0.0) += *share as f64;
        }
        for w in distribute_tokens(&mut self.cluster, &shares) {
            *self.granted.get_mut(&w.app_id).expect("granted above") -= w.tokens;
            self.metrics.record_waste(now, &w.app_id, w.server, w.tokens);
        }
        self.epochs_done += 1;

        let effective = self.control.effective().clone();
        let round = if self.config.borrowing_enabled {
            let metrics = &self.metrics;
            let window = self.config.timing.window_s;
            borrowing_round(&mut self.cluster, &effective, |spec| {
                satisfaction(metrics, spec.app_id.as_str(), spec.desired_mbps, window, now)
            })?
        } else {
            let tokens: BTreeMap<AppId, f64> = effective
                .keys()
                .map(|a| (a.clone(), self.cluster.app_tokens(a.as_str())))
                .collect();
            crate::control_plane::BorrowRound {
                transfers: Vec::new(),
                tokens_before: tokens.clone(),
                tokens_after: tokens,
            }
        };
        for t in round.transfers {
            self.metrics.record_borrow(now, &t.app_id, t.to_server, t.tokens);
            self.transfers.push((now, t));
        }

        let epoch_len = self.config.timing.epoch_s;
        for (app, spec) in &effective {
            let capacity_slack = self
                .cluster
                .servers()
                .iter()
                .filter_map(|s| s.slot(app.as_str()))
                .map(|slot| slot.bucket.capacity())
                .sum();
            self.audit.push(EpochAudit {
                time: now,
                epochs: self.epochs_done,
                app_id: app.clone(),
                tokens_before_borrow: round.tokens_before[app],
                tokens_after_borrow: round.tokens_after[app],
                granted_total: self.granted.get(app).copied().unwrap_or(0.0),
                rate_bound: crate::control_plane::tokens_per_second(spec.desired_mbps, self.config.bytes_per_token)
                    * self.epochs_done as f64
                    * epoch_len,
                capacity_slack,
            });
        }

        let next = (self.epochs_done * self.config.timing.ticks_per_epoch()) as f64 * self.config.timing.tick_s;
        if next < self.duration {
            self.queue.schedule(next, EventKind::EpochBoundary)?;
        }
        Ok(())
    }

    fn on_tick(&mut self, id: ServerId, now: f64) -> Result<(), SimError> {
        let tick = self.config.timing.tick_s;
        let server = self.cluster.get_mut(id).expect("tick for known server");
        for c in server.tick(&self.scheduler, now, tick) {
            self.metrics.record_delay(&c.request.app_id, now - c.request.arrival_time);
            self.metrics.record_service(MetricsSample {
                time: now,
                app_id: c.request.app_id,
                server_id: id,
                bytes_served: c.request.size_bytes,
            });
        }
        let index = (now / tick).round() as u64 + 1;
        let next = index as f64 * tick;
        if next < self.duration {
            self.queue.schedule(next, EventKind::ServerTick(id))?;
        }
        Ok(())
    }

    fn on_arrival(&mut self, stream: usize, request: crate::data_plane::IoRequest) -> Result<(), SimError> {
        let now = request.arrival_time;
        let app = classify(&request, &self.registered);
        self.metrics.record_arrival(&app, now);
        let server = self.cluster.get_mut(request.target_server).expect("stream targets known server");
        if server.enqueue(&app, request).is_err() {
            self.metrics.record_rejection(&app);
        }
        let next = self.pending_next[stream];
        if next < self.duration {
            let (request, after) = self.streams[stream].next_arrival(next);
            self.pending_next[stream] = after;
            self.queue.schedule(next, EventKind::Arrival { stream, request })?;
        }
        Ok(())
    }

    fn on_flush(&mut self, now: f64) -> Result<(), SimError> {
        self.metrics.seal_until(now);
        let w = self.config.timing.window_s;
        let next = ((now / w).round() + 1.0) * w;
        if next < self.duration {
            self.queue.schedule(next, EventKind::MetricsFlush)?;
        }
        Ok(())
    }
}

/// Runs `config` for `duration` simulated seconds.
pub fn run(config: SimConfig, duration: f64) -> Result<MetricsReport, SimError> {
    Ok(Simulation::new(config, duration)?.run()?.0)
}
