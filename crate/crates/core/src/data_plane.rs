//! Per-server machinery: IO classification, per-application FIFO queues,
//! virtual token buckets and the traffic shaper that bounds each tick by the
//! server's physical bandwidth.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::{AppId, ServerId, BYTES_PER_MB};

/// Reserved class for requests whose application is not registered.
pub const BEST_EFFORT: &str = "best-effort";

pub const DEFAULT_QUEUE_DEPTH_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct IoRequest {
    pub id: u64,
    pub app_id: AppId,
    pub size_bytes: u64,
    /// Simulated seconds.
    pub arrival_time: f64,
    pub source_node: u32,
    pub target_server: ServerId,
}

/// Maps a request to its queue: the registered application, or the
/// best-effort class.
pub fn classify(request: &IoRequest, registered: &BTreeSet<AppId>) -> AppId {
    if registered.contains(&request.app_id) {
        request.app_id.clone()
    } else {
        AppId::from(BEST_EFFORT)
    }
}

#[derive(Debug, Clone)]
pub struct AppQueue {
    pending: VecDeque<IoRequest>,
    depth_limit: usize,
}

impl AppQueue {
    pub fn new(depth_limit: usize) -> Self {
        Self {
            pending: VecDeque::new(),
            depth_limit,
        }
    }

    /// Arrival time of the head-of-line request.
    pub fn hol_since(&self) -> Option<f64> {
        self.pending.front().map(|r| r.arrival_time)
    }

    pub fn head(&self) -> Option<&IoRequest> {
        self.pending.front()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &IoRequest> {
        self.pending.iter()
    }

    pub fn depth_limit(&self) -> usize {
        self.depth_limit
    }

    /// Appends at the tail; hands the request back when the queue is full.
    pub fn push(&mut self, request: IoRequest) -> Result<(), IoRequest> {
        if self.pending.len() >= self.depth_limit {
            return Err(request);
        }
        self.pending.push_back(request);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    level: f64,
    capacity: f64,
    bytes_per_token: u64,
}

impl TokenBucket {
    pub fn new(capacity: f64, bytes_per_token: u64) -> Self {
        assert!(capacity > 0.0, "bucket capacity must be positive");
        assert!(bytes_per_token > 0, "bytes_per_token must be positive");
        Self {
            level: 0.0,
            capacity,
            bytes_per_token,
        }
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn bytes_per_token(&self) -> u64 {
        self.bytes_per_token
    }

    /// Tokens needed to serve `size_bytes`, rounded up.
    pub fn cost(&self, size_bytes: u64) -> u64 {
        size_bytes.div_ceil(self.bytes_per_token)
    }

    /// Adds tokens up to capacity and returns how many overflowed.
    pub fn refill(&mut self, tokens: f64) -> f64 {
        debug_assert!(tokens >= 0.0);
        let room = (self.capacity - self.level).max(0.0);
        let admitted = tokens.min(room);
        self.level += admitted;
        tokens - admitted
    }

    /// Adds borrowed tokens. These bypass the capacity clamp so a transfer
    /// never destroys tokens.
    pub fn deposit_borrowed(&mut self, tokens: f64) {
        self.level += tokens;
    }

    /// Removes `tokens`; callers check the level first.
    pub fn withdraw(&mut self, tokens: f64) {
        assert!(
            tokens <= self.level,
            "withdrawing {tokens} tokens from a bucket holding {}",
            self.level
        );
        self.level -= tokens;
    }

    /// Changes capacity, discarding any excess above it. Returns the excess.
    pub fn set_capacity(&mut self, capacity: f64) -> f64 {
        assert!(capacity > 0.0, "bucket capacity must be positive");
        self.capacity = capacity;
        let excess = (self.level - capacity).max(0.0);
        self.level -= excess;
        excess
    }
}

#[derive(Debug, Clone)]
pub struct AppSlot {
    pub queue: AppQueue,
    pub bucket: TokenBucket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockReason {
    EmptyQueue,
    NoTokens,
    NoCapacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub request: IoRequest,
    pub server: ServerId,
    pub served_at: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServeOutcome {
    Served(Completion),
    Blocked(BlockReason),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataPlaneError {
    #[error("application `{0}` is not present on server {1}")]
    UnknownApp(AppId, ServerId),
    #[error("queue for `{app}` on server {server} is full ({limit} requests)")]
    QueueOverflow {
        app: AppId,
        server: ServerId,
        limit: usize,
    },
    #[error("request targets server {target} but was delivered to server {server}")]
    WrongServer { target: ServerId, server: ServerId },
}

/// Bytes a server can move in `tick_len` seconds.
pub fn tick_budget_bytes(phys_limit_mbps: f64, tick_len: f64) -> u64 {
    let exact = phys_limit_mbps * BYTES_PER_MB * tick_len;
    let rounded = exact.round();
    // Absorb float noise like 500 * 0.1 * 1e6 = 50_000_000.000000004.
    if (exact - rounded).abs() < 1e-6 {
        rounded as u64
    } else {
        exact.floor() as u64
    }
}

/// Decides which queue a server serves next.
pub trait QueueSelector {
    fn select_next(&self, server: &ServerState, now: f64) -> Option<AppId>;
}

#[derive(Debug, Clone)]
pub struct ServerState {
    id: ServerId,
    phys_limit_mbps: f64,
    apps: BTreeMap<AppId, AppSlot>,
    budget_bytes: u64,
}

impl ServerState {
    pub fn new(id: ServerId, phys_limit_mbps: f64) -> Self {
        assert!(phys_limit_mbps > 0.0, "physical limit must be positive");
        Self {
            id,
            phys_limit_mbps,
            apps: BTreeMap::new(),
            budget_bytes: 0,
        }
    }

    pub fn id(&self) -> ServerId {
        self.id
    }

    pub fn phys_limit_mbps(&self) -> f64 {
        self.phys_limit_mbps
    }

    pub fn budget_bytes(&self) -> u64 {
        self.budget_bytes
    }

    pub fn set_budget_bytes(&mut self, bytes: u64) {
        self.budget_bytes = bytes;
    }

    /// Registers an application with an empty queue and bucket. No-op if present.
    pub fn add_app(&mut self, app: AppId, bucket: TokenBucket, depth_limit: usize) {
        self.apps.entry(app).or_insert_with(|| AppSlot {
            queue: AppQueue::new(depth_limit),
            bucket,
        });
    }

    pub fn slot(&self, app: &str) -> Option<&AppSlot> {
        self.apps.get(app)
    }

    pub fn slot_mut(&mut self, app: &str) -> Option<&mut AppSlot> {
        self.apps.get_mut(app)
    }

    pub fn apps(&self) -> impl Iterator<Item = (&AppId, &AppSlot)> {
        self.apps.iter()
    }

    pub fn apps_mut(&mut self) -> impl Iterator<Item = (&AppId, &mut AppSlot)> {
        self.apps.iter_mut()
    }

    pub fn queued(&self) -> usize {
        self.apps.values().map(|s| s.queue.len()).sum()
    }

    /// Token cost of everything queued for `app`.
    pub fn backlog_tokens(&self, app: &str) -> u64 {
        self.apps.get(app).map_or(0, |slot| {
            slot.queue
                .iter()
                .map(|r| slot.bucket.cost(r.size_bytes))
                .sum()
        })
    }

    /// Appends an already-classified request to its application's queue.
    pub fn enqueue(&mut self, app: &AppId, request: IoRequest) -> Result<(), DataPlaneError> {
        if request.target_server != self.id {
            return Err(DataPlaneError::WrongServer {
                target: request.target_server,
                server: self.id,
            });
        }
        let slot = self
            .apps
            .get_mut(app)
            .ok_or_else(|| DataPlaneError::UnknownApp(app.clone(), self.id))?;
        slot.queue.push(request).map_err(|_| DataPlaneError::QueueOverflow {
            app: app.clone(),
            server: self.id,
            limit: slot.queue.depth_limit,
        })
    }

    /// Whether the head of `app`'s queue could be served right now.
    pub fn check_head(&self, app: &str) -> Result<(), BlockReason> {
        let Some(slot) = self.apps.get(app) else {
            return Err(BlockReason::EmptyQueue);
        };
        let Some(head) = slot.queue.head() else {
            return Err(BlockReason::EmptyQueue);
        };
        if slot.bucket.level() < slot.bucket.cost(head.size_bytes) as f64 {
            return Err(BlockReason::NoTokens);
        }
        if self.budget_bytes < head.size_bytes {
            return Err(BlockReason::NoCapacity);
        }
        Ok(())
    }

    /// Serves the head request of `app` if tokens and capacity allow.
    pub fn try_serve_head(&mut self, app: &str, now: f64) -> Result<ServeOutcome, DataPlaneError> {
        if !self.apps.contains_key(app) {
            return Err(DataPlaneError::UnknownApp(AppId::from(app), self.id));
        }
        if let Err(reason) = self.check_head(app) {
            return Ok(ServeOutcome::Blocked(reason));
        }
        let slot = self.apps.get_mut(app).expect("checked above");
        let request = slot.queue.pending.pop_front().expect("checked above");
        let tokens = slot.bucket.cost(request.size_bytes);
        slot.bucket.withdraw(tokens as f64);
        self.budget_bytes -= request.size_bytes;
        Ok(ServeOutcome::Served(Completion {
            request,
            server: self.id,
            served_at: now,
            tokens,
        }))
    }

    /// One shaping round: resets the capacity budget and serves whatever the
    /// selector picks until nothing is serviceable. Completions are returned
    /// in service order.
    pub fn tick(&mut self, selector: &impl QueueSelector, now: f64, tick_len: f64) -> Vec<Completion> {
        assert!(tick_len > 0.0, "tick length must be positive");
        self.budget_bytes = tick_budget_bytes(self.phys_limit_mbps, tick_len);
        let mut done = Vec::new();
        while let Some(app) = selector.select_next(self, now) {
            match self.try_serve_head(app.as_str(), now) {
                Ok(ServeOutcome::Served(c)) => done.push(c),
                // The selector only offers serviceable queues; stop rather
                // than spin if one disagrees.
                _ => break,
            }
        }
        done
    }
}

/// All servers, ordered by id.
#[derive(Debug, Clone, Default)]
pub struct Cluster {
    servers: Vec<ServerState>,
}

impl Cluster {
    pub fn new(mut servers: Vec<ServerState>) -> Self {
        servers.sort_by_key(|s| s.id());
        Self { servers }
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn servers_mut(&mut self) -> &mut [ServerState] {
        &mut self.servers
    }

    pub fn ids(&self) -> Vec<ServerId> {
        self.servers.iter().map(|s| s.id()).collect()
    }

    pub fn get(&self, id: ServerId) -> Option<&ServerState> {
        self.servers
            .binary_search_by_key(&id, |s| s.id())
            .ok()
            .map(|i| &self.servers[i])
    }

    pub fn get_mut(&mut self, id: ServerId) -> Option<&mut ServerState> {
        self.servers
            .binary_search_by_key(&id, |s| s.id())
            .ok()
            .map(|i| &mut self.servers[i])
    }

    /// Sum of `app`'s bucket levels across all servers.
    pub fn app_tokens(&self, app: &str) -> f64 {
        self.servers
            .iter()
            .filter_map(|s| s.slot(app))
            .map(|slot| slot.bucket.level())
            .sum()
    }

    pub fn queued(&self) -> usize {
        self.servers.iter().map(|s| s.queued()).sum()
    }
}
