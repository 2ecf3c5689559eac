//! The logically centralized control plane.
//!
//! Each epoch it re-syncs desired QoS with the policy registry when policies
//! changed, turns desired bandwidth into per-application token rates, splits
//! every application's epoch allotment equally over the servers, and then
//! runs one borrowing round in which a queue short on tokens may take unused
//! tokens from the same application's queues on other servers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_plane::{Cluster, ServerState};
use crate::metrics::MetricsCollector;
use crate::policy::PolicyRegistry;
use crate::scheduler::{gamma, DomainError, SchedWeights};
use crate::{AppId, ServerId, BYTES_PER_MB};

pub const DEFAULT_DELAY_TARGET_S: f64 = 1.0;
pub const DEFAULT_DELAY_VIOLATION_PROB: f64 = 0.05;

fn default_delay_target() -> f64 {
    DEFAULT_DELAY_TARGET_S
}

fn default_violation_prob() -> f64 {
    DEFAULT_DELAY_VIOLATION_PROB
}

/// An application's Desired QoS plus its scheduling weight inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplicationSpec {
    pub app_id: AppId,
    pub desired_mbps: f64,
    #[serde(default)]
    pub borrow_allowed: bool,
    #[serde(default)]
    pub borrow_threshold: Option<f64>,
    #[serde(default = "default_delay_target")]
    pub delay_target_s: f64,
    #[serde(default = "default_violation_prob")]
    pub delay_violation_prob: f64,
}

impl ApplicationSpec {
    pub fn new(app_id: impl Into<AppId>, desired_mbps: f64) -> Self {
        Self {
            app_id: app_id.into(),
            desired_mbps,
            borrow_allowed: false,
            borrow_threshold: None,
            delay_target_s: DEFAULT_DELAY_TARGET_S,
            delay_violation_prob: DEFAULT_DELAY_VIOLATION_PROB,
        }
    }
}

/// Spec after policies have been applied.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSpec {
    pub app_id: AppId,
    pub desired_mbps: f64,
    pub borrow_allowed: bool,
    pub borrow_threshold: Option<f64>,
    pub delay_target_s: f64,
    pub delay_violation_prob: f64,
}

pub type EffectiveTable = BTreeMap<AppId, EffectiveSpec>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("application `{0}` is specified twice")]
    DuplicateApp(AppId),
    #[error("no servers to distribute tokens to")]
    NoServers,
    #[error("epoch length must be positive")]
    BadEpoch,
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("transfer of {tokens} tokens of `{app}` from server {from} exceeds its level {level}")]
    InsufficientDonor {
        app: AppId,
        from: ServerId,
        tokens: f64,
        level: f64,
    },
}

/// Merges Desired QoS with enforced policy: a policy rate overrides the
/// spec's, and policy borrow settings override the spec's.
pub fn sync_desired_qos(specs: &[ApplicationSpec], registry: &PolicyRegistry) -> Result<EffectiveTable, ControlError> {
    let mut out = EffectiveTable::new();
    for spec in specs {
        let mut eff = EffectiveSpec {
            app_id: spec.app_id.clone(),
            desired_mbps: spec.desired_mbps,
            borrow_allowed: spec.borrow_allowed,
            borrow_threshold: if spec.borrow_allowed { spec.borrow_threshold } else { None },
            delay_target_s: spec.delay_target_s,
            delay_violation_prob: spec.delay_violation_prob,
        };
        if let Some(p) = registry.get(spec.app_id.as_str()) {
            if let Some(rate) = p.rate_mbps {
                eff.desired_mbps = rate;
            }
            eff.borrow_allowed = p.borrow_allowed;
            eff.borrow_threshold = p.borrow_threshold;
        }
        if out.insert(spec.app_id.clone(), eff).is_some() {
            return Err(ControlError::DuplicateApp(spec.app_id.clone()));
        }
    }
    Ok(out)
}

/// Splits `total` units proportionally to integer `weights` by largest
/// remainder. Remainder ties go to the first index at or after `offset`
/// (cyclically). Zero weights receive nothing.
pub fn split_largest_remainder(total: u64, weights: &[u64], offset: usize) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|w| *w as u128).sum();
    if sum == 0 || weights.is_empty() {
        return vec![0; weights.len()];
    }
    let n = weights.len();
    let mut shares: Vec<u64> = Vec::with_capacity(n);
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(n);
    for (i, w) in weights.iter().enumerate() {
        let num = total as u128 * *w as u128;
        shares.push((num / sum) as u64);
        rems.push((num % sum, i));
    }
    let leftover = total - shares.iter().sum::<u64>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(((a.1 + n - offset % n) % n).cmp(&((b.1 + n - offset % n) % n))));
    for (_, i) in rems.into_iter().take(leftover as usize) {
        shares[i] += 1;
    }
    shares
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRateTable {
    pub epoch_len_s: f64,
    /// Tokens per second.
    pub per_app_rate: BTreeMap<AppId, f64>,
    /// Tokens per epoch.
    pub per_server_share: BTreeMap<(AppId, ServerId), u64>,
}

impl TokenRateTable {
    pub fn share(&self, app: &str, server: ServerId) -> u64 {
        self.per_server_share
            .get(&(AppId::from(app), server))
            .copied()
            .unwrap_or(0)
    }

    /// Unrounded tokens per epoch per server.
    pub fn nominal_share(&self, app: &str, servers: usize) -> f64 {
        self.per_app_rate.get(app).copied().unwrap_or(0.0) * self.epoch_len_s / servers as f64
    }
}

/// Whole tokens per epoch for a rate, ignoring float noise just below an integer.
fn whole_tokens(exact: f64) -> u64 {
    (exact + 1e-9).floor().max(0.0) as u64
}

pub fn tokens_per_second(desired_mbps: f64, bytes_per_token: u64) -> f64 {
    desired_mbps * BYTES_PER_MB / bytes_per_token as f64
}

/// Token rate per application and its equal split over `servers` for one epoch.
pub fn generate_token_rates(
    specs: &EffectiveTable,
    servers: &[ServerId],
    epoch_len: f64,
    bytes_per_token: u64,
) -> Result<TokenRateTable, ControlError> {
    if servers.is_empty() {
        return Err(ControlError::NoServers);
    }
    if epoch_len.is_nan() || epoch_len <= 0.0 {
        return Err(ControlError::BadEpoch);
    }
    let mut table = TokenRateTable {
        epoch_len_s: epoch_len,
        per_app_rate: BTreeMap::new(),
        per_server_share: BTreeMap::new(),
    };
    let ones = vec![1u64; servers.len()];
    for (app, spec) in specs {
        let rate = tokens_per_second(spec.desired_mbps, bytes_per_token);
        table.per_app_rate.insert(app.clone(), rate);
        let shares = split_largest_remainder(whole_tokens(rate * epoch_len), &ones, 0);
        for (server, share) in servers.iter().zip(shares) {
            table.per_server_share.insert((app.clone(), *server), share);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WasteRecord {
    pub app_id: AppId,
    pub server: ServerId,
    pub tokens: f64,
}

/// Refills every (app, server) bucket by its share.
pub fn distribute_tokens(cluster: &mut Cluster, shares: &BTreeMap<(AppId, ServerId), u64>) -> Vec<WasteRecord> {
    let mut waste = Vec::new();
    for ((app, server_id), share) in shares {
        let Some(server) = cluster.get_mut(*server_id) else {
            continue;
        };
        let Some(slot) = server.slot_mut(app.as_str()) else {
            continue;
        };
        let wasted = slot.bucket.refill(*share as f64);
        if wasted > 0.0 {
            waste.push(WasteRecord {
                app_id: app.clone(),
                server: *server_id,
                tokens: wasted,
            });
        }
    }
    waste
}

/// Fraction of desired bandwidth served over the sliding window ending at
/// `now`, clamped to `[0, 1]`.
///
/// An app with no arrivals in the window is satisfied. So is one whose
/// first arrival falls inside the window: until a full window has been
/// observed the measurement would count time before the app existed.
pub fn satisfaction(metrics: &MetricsCollector, app: &str, desired_mbps: f64, window: f64, now: f64) -> f64 {
    assert!(window > 0.0, "window must be positive");
    // Samples sit exactly on tick times; shift the bounds so a tick at
    // `now - window` is inside and the (not yet run) tick at `now` is not.
    let t0 = now - window - 1e-9;
    let t1 = now - 1e-9;
    if metrics.arrivals_between(app, t0, t1) == 0 {
        return 1.0;
    }
    match metrics.first_arrival(app) {
        Some(first) if first > t0 => return 1.0,
        _ => {}
    }
    let served_mbps = metrics.served_bytes_between(app, t0, t1) as f64 / window / BYTES_PER_MB;
    (served_mbps / desired_mbps).clamp(0.0, 1.0)
}

/// Whether `spec`'s queue on a server with `local_deficit` may borrow now.
pub fn borrow_eligible(spec: &EffectiveSpec, sat: f64, local_deficit: u64) -> bool {
    spec.borrow_allowed && local_deficit > 0 && spec.borrow_threshold.is_none_or(|thres| sat < thres)
}

/// Tokens `app` needs on `server` beyond what its bucket holds.
pub fn deficit(server: &ServerState, app: &str) -> u64 {
    let Some(slot) = server.slot(app) else {
        return 0;
    };
    let need = server.backlog_tokens(app) as f64 - slot.bucket.level();
    if need > 0.0 {
        need.ceil() as u64
    } else {
        0
    }
}

/// Whole tokens `app` holds on `server` beyond its local backlog.
pub fn surplus(server: &ServerState, app: &str) -> u64 {
    let Some(slot) = server.slot(app) else {
        return 0;
    };
    let spare = slot.bucket.level().floor() - server.backlog_tokens(app) as f64;
    if spare > 0.0 {
        spare as u64
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BorrowTransfer {
    pub app_id: AppId,
    pub from_server: ServerId,
    pub to_server: ServerId,
    pub tokens: f64,
}

/// Plans how `to_server` covers `deficit` tokens of `app` from other servers'
/// surplus, proportionally to surplus, in server-id order.
pub fn plan_borrow(cluster: &Cluster, app: &str, to_server: ServerId, deficit: u64) -> Vec<BorrowTransfer> {
    let donors: Vec<(ServerId, u64)> = cluster
        .servers()
        .iter()
        .filter(|s| s.id() != to_server)
        .map(|s| (s.id(), surplus(s, app)))
        .filter(|(_, surplus)| *surplus > 0)
        .collect();
    let available: u64 = donors.iter().map(|(_, s)| s).sum();
    let total = deficit.min(available);
    if total == 0 {
        return Vec::new();
    }
    let weights: Vec<u64> = donors.iter().map(|(_, s)| *s).collect();
    let shares = split_largest_remainder(total, &weights, 0);
    donors
        .into_iter()
        .zip(shares)
        .filter(|(_, share)| *share > 0)
        .map(|((from, _), share)| BorrowTransfer {
            app_id: AppId::from(app),
            from_server: from,
            to_server,
            tokens: share as f64,
        })
        .collect()
}

/// Moves tokens between buckets. Borrowed tokens are never clamped away.
pub fn execute_transfers(cluster: &mut Cluster, transfers: &[BorrowTransfer]) -> Result<(), ControlError> {
    for t in transfers {
        assert_ne!(t.from_server, t.to_server, "self-transfer");
        let donor = cluster
            .get_mut(t.from_server)
            .and_then(|s| s.slot_mut(t.app_id.as_str()))
            .expect("donor exists");
        if donor.bucket.level() < t.tokens {
            return Err(ControlError::InsufficientDonor {
                app: t.app_id.clone(),
                from: t.from_server,
                tokens: t.tokens,
                level: donor.bucket.level(),
            });
        }
        donor.bucket.withdraw(t.tokens);
        cluster
            .get_mut(t.to_server)
            .and_then(|s| s.slot_mut(t.app_id.as_str()))
            .expect("borrower exists")
            .bucket
            .deposit_borrowed(t.tokens);
    }
    Ok(())
}

/// Per-app token totals across the cluster before and after a borrowing round.
#[derive(Debug, Clone, PartialEq)]
pub struct BorrowRound {
    pub transfers: Vec<BorrowTransfer>,
    pub tokens_before: BTreeMap<AppId, f64>,
    pub tokens_after: BTreeMap<AppId, f64>,
}

/// One borrowing round: for each app allowed to borrow, each server with a
/// deficit (in id order) plans and executes its transfers before the next
/// server plans, so donors are never double-counted.
pub fn borrowing_round(
    cluster: &mut Cluster,
    specs: &EffectiveTable,
    satisfaction_of: impl Fn(&EffectiveSpec) -> f64,
) -> Result<BorrowRound, ControlError> {
    let tokens_before: BTreeMap<AppId, f64> = specs.keys().map(|a| (a.clone(), cluster.app_tokens(a.as_str()))).collect();
    let mut transfers = Vec::new();
    for (app, spec) in specs {
        if !spec.borrow_allowed {
            continue;
        }
        let sat = satisfaction_of(spec);
        for server_id in cluster.ids() {
            let need = deficit(cluster.get(server_id).expect("listed"), app.as_str());
            if !borrow_eligible(spec, sat, need) {
                continue;
            }
            let plan = plan_borrow(cluster, app.as_str(), server_id, need);
            execute_transfers(cluster, &plan)?;
            transfers.extend(plan);
        }
    }
    let tokens_after = specs.keys().map(|a| (a.clone(), cluster.app_tokens(a.as_str()))).collect();
    Ok(BorrowRound {
        transfers,
        tokens_before,
        tokens_after,
    })
}

/// Control-plane state carried across epochs.
#[derive(Debug, Clone)]
pub struct ControlPlane {
    specs: Vec<ApplicationSpec>,
    servers: Vec<ServerId>,
    epoch_len: f64,
    bytes_per_token: u64,
    synced_revision: Option<u64>,
    effective: EffectiveTable,
    table: TokenRateTable,
    weights: SchedWeights,
    /// Fractional tokens owed per app, carried into the next epoch.
    carry: BTreeMap<AppId, f64>,
    /// Per app, the server first in line for the next rounding remainder.
    cursor: BTreeMap<AppId, usize>,
    epoch: u64,
}

impl ControlPlane {
    pub fn new(specs: Vec<ApplicationSpec>, servers: Vec<ServerId>, epoch_len: f64, bytes_per_token: u64) -> Result<Self, ControlError> {
        if servers.is_empty() {
            return Err(ControlError::NoServers);
        }
        let ids: BTreeSet<&AppId> = specs.iter().map(|s| &s.app_id).collect();
        if ids.len() != specs.len() {
            let mut seen = BTreeSet::new();
            let dup = specs.iter().find(|s| !seen.insert(&s.app_id)).expect("duplicate exists");
            return Err(ControlError::DuplicateApp(dup.app_id.clone()));
        }
        Ok(Self {
            specs,
            servers,
            epoch_len,
            bytes_per_token,
            synced_revision: None,
            effective: EffectiveTable::new(),
            table: TokenRateTable {
                epoch_len_s: epoch_len,
                per_app_rate: BTreeMap::new(),
                per_server_share: BTreeMap::new(),
            },
            weights: SchedWeights::default(),
            carry: BTreeMap::new(),
            cursor: BTreeMap::new(),
            epoch: 0,
        })
    }

    /// Re-syncs with the registry if it changed since the last sync.
    /// Returns whether anything was recomputed.
    pub fn sync(&mut self, registry: &PolicyRegistry) -> Result<bool, ControlError> {
        if self.synced_revision == Some(registry.revision()) {
            return Ok(false);
        }
        self.effective = sync_desired_qos(&self.specs, registry)?;
        self.table = generate_token_rates(&self.effective, &self.servers, self.epoch_len, self.bytes_per_token)?;
        let n = self.servers.len();
        let mut weights = SchedWeights::default();
        for (app, spec) in &self.effective {
            weights
                .gamma
                .insert(app.clone(), gamma(spec.delay_violation_prob, spec.delay_target_s)?);
            let nominal = self.table.nominal_share(app.as_str(), n);
            for server in &self.servers {
                weights.base_allotment.insert((app.clone(), *server), nominal);
            }
        }
        self.weights = weights;
        self.synced_revision = Some(registry.revision());
        Ok(true)
    }

    pub fn effective(&self) -> &EffectiveTable {
        &self.effective
    }

    pub fn table(&self) -> &TokenRateTable {
        &self.table
    }

    pub fn weights(&self) -> &SchedWeights {
        &self.weights
    }

    pub fn servers(&self) -> &[ServerId] {
        &self.servers
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Bucket capacity for `app`: two epochs of its per-server allotment, and
    /// never less than `min_tokens` so its largest request stays servable.
    pub fn bucket_capacity(&self, app: &str, min_tokens: u64) -> f64 {
        let nominal = self.table.nominal_share(app, self.servers.len());
        (2.0 * nominal).max(min_tokens as f64).max(1.0)
    }

    /// Shares for the next epoch. Fractional allotments are carried forward
    /// and the server receiving a rounding remainder rotates round-robin, so
    /// long-run grants match the rate and stay equal across servers.
    pub fn next_epoch_shares(&mut self) -> BTreeMap<(AppId, ServerId), u64> {
        let n = self.servers.len();
        let ones = vec![1u64; n];
        let mut out = BTreeMap::new();
        for (app, rate) in &self.table.per_app_rate {
            let carry = self.carry.entry(app.clone()).or_insert(0.0);
            let owed = rate * self.epoch_len + *carry;
            let whole = whole_tokens(owed);
            *carry = (owed - whole as f64).max(0.0);
            let cursor = self.cursor.entry(app.clone()).or_insert(0);
            let offset = *cursor;
            *cursor = (*cursor + (whole % n as u64) as usize) % n;
            for (server, share) in self.servers.iter().zip(split_largest_remainder(whole, &ones, offset)) {
                out.insert((app.clone(), *server), share);
            }
        }
        self.epoch += 1;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_plane::{IoRequest, TokenBucket};
    use crate::policy::parse_policy;

    const MB: u64 = 1_000_000;

    fn eff(app: &str, mbps: f64) -> EffectiveSpec {
        EffectiveSpec {
            app_id: app.into(),
            desired_mbps: mbps,
            borrow_allowed: false,
            borrow_threshold: None,
            delay_target_s: 1.0,
            delay_violation_prob: 0.05,
        }
    }

    fn table_of(specs: &[EffectiveSpec]) -> EffectiveTable {
        specs.iter().map(|s| (s.app_id.clone(), s.clone())).collect()
    }

    fn ids(n: u32) -> Vec<ServerId> {
        (1..=n).map(ServerId).collect()
    }

    /// Servers 1..=n each holding `levels[i]` tokens of "app-1" and
    /// `queued[i]` one-MB requests.
    fn cluster(levels: &[f64], queued: &[u64]) -> Cluster {
        let servers = levels
            .iter()
            .zip(queued)
            .enumerate()
            .map(|(i, (level, q))| {
                let id = ServerId(i as u32 + 1);
                let mut s = ServerState::new(id, 500.0);
                s.add_app("app-1".into(), TokenBucket::new(200.0, MB), 100_000);
                s.slot_mut("app-1").unwrap().bucket.refill(*level);
                for r in 0..*q {
                    s.enqueue(
                        &"app-1".into(),
                        IoRequest {
                            id: r,
                            app_id: "app-1".into(),
                            size_bytes: MB,
                            arrival_time: 0.0,
                            source_node: 0,
                            target_server: id,
                        },
                    )
                    .unwrap();
                }
                s
            })
            .collect();
        Cluster::new(servers)
    }

    #[test]
    fn sync_applies_overrides() {
        let specs = vec![ApplicationSpec::new("app-1", 300.0)];
        let t = sync_desired_qos(&specs, &PolicyRegistry::new()).unwrap();
        assert_eq!(t["app-1"].desired_mbps, 300.0);

        let mut reg = PolicyRegistry::new();
        reg.apply(&parse_policy("<app-1, rate=100 MB/s>").unwrap()).unwrap();
        assert_eq!(sync_desired_qos(&specs, &reg).unwrap()["app-1"].desired_mbps, 100.0);

        let specs = vec![ApplicationSpec::new("app-i", 300.0)];
        let mut reg = PolicyRegistry::new();
        reg.apply(&parse_policy("<app-i, borrow=TRUE, thres=0.8>").unwrap()).unwrap();
        let t = sync_desired_qos(&specs, &reg).unwrap();
        assert!(t["app-i"].borrow_allowed);
        assert_eq!(t["app-i"].borrow_threshold, Some(0.8));
        assert_eq!(t["app-i"].desired_mbps, 300.0);

        let dup = vec![ApplicationSpec::new("a", 1.0), ApplicationSpec::new("a", 2.0)];
        assert_eq!(
            sync_desired_qos(&dup, &PolicyRegistry::new()),
            Err(ControlError::DuplicateApp("a".into()))
        );
    }

    #[test]
    fn largest_remainder_split() {
        assert_eq!(split_largest_remainder(100, &[1, 1, 1], 0), vec![34, 33, 33]);
        assert_eq!(split_largest_remainder(100, &[1, 1, 1], 1), vec![33, 34, 33]);
        assert_eq!(split_largest_remainder(101, &[1, 1, 1], 2), vec![34, 33, 34]);
        assert_eq!(split_largest_remainder(50, &[30, 30], 0), vec![25, 25]);
        assert_eq!(split_largest_remainder(50, &[0, 50], 0), vec![0, 50]);
        assert_eq!(split_largest_remainder(7, &[0, 0], 0), vec![0, 0]);
        assert_eq!(split_largest_remainder(10, &[1, 2, 7], 0), vec![1, 2, 7]);
    }

    #[test]
    fn token_rates_split_equally() {
        let t = generate_token_rates(&table_of(&[eff("app-1", 300.0)]), &ids(3), 1.0, MB).unwrap();
        assert_eq!(t.per_app_rate["app-1"], 300.0);
        for s in ids(3) {
            assert_eq!(t.share("app-1", s), 100);
        }
        let t = generate_token_rates(&table_of(&[eff("app-1", 100.0)]), &ids(1), 1.0, MB).unwrap();
        assert_eq!(t.share("app-1", ServerId(1)), 100);
        let t = generate_token_rates(&table_of(&[eff("app-1", 100.0)]), &ids(3), 1.0, MB).unwrap();
        let shares: Vec<u64> = ids(3).into_iter().map(|s| t.share("app-1", s)).collect();
        assert_eq!(shares, vec![34, 33, 33]);
        assert_eq!(
            generate_token_rates(&table_of(&[eff("a", 1.0)]), &[], 1.0, MB),
            Err(ControlError::NoServers)
        );
    }

    #[test]
    fn distribution_refills_and_clamps() {
        let mut c = cluster(&[0.0, 150.0, 0.0], &[0, 0, 0]);
        let shares: BTreeMap<_, _> = ids(3).into_iter().map(|s| (("app-1".into(), s), 100)).collect();
        let waste = distribute_tokens(&mut c, &shares);
        assert_eq!(c.get(ServerId(1)).unwrap().slot("app-1").unwrap().bucket.level(), 100.0);
        assert_eq!(c.get(ServerId(2)).unwrap().slot("app-1").unwrap().bucket.level(), 200.0);
        assert_eq!(
            waste,
            vec![WasteRecord {
                app_id: "app-1".into(),
                server: ServerId(2),
                tokens: 50.0
            }]
        );
    }

    #[test]
    fn eligibility() {
        let mut spec = eff("app-1", 300.0);
        assert!(!borrow_eligible(&spec, 0.0, 50));
        spec.borrow_allowed = true;
        assert!(borrow_eligible(&spec, 0.9, 50));
        assert!(!borrow_eligible(&spec, 0.9, 0));
        spec.borrow_threshold = Some(0.8);
        assert!(!borrow_eligible(&spec, 250.0 / 300.0, 50));
        spec.borrow_threshold = Some(0.9);
        assert!(borrow_eligible(&spec, 250.0 / 300.0, 50));
    }

    #[test]
    fn plan_uses_unused_tokens() {
        // Demands 150/100/50 against 100 tokens each: server 3 has 50 spare.
        let c = cluster(&[100.0, 100.0, 100.0], &[150, 100, 50]);
        assert_eq!(deficit(c.get(ServerId(1)).unwrap(), "app-1"), 50);
        assert_eq!(surplus(c.get(ServerId(2)).unwrap(), "app-1"), 0);
        assert_eq!(surplus(c.get(ServerId(3)).unwrap(), "app-1"), 50);
        let plan = plan_borrow(&c, "app-1", ServerId(1), 50);
        assert_eq!(
            plan,
            vec![BorrowTransfer {
                app_id: "app-1".into(),
                from_server: ServerId(3),
                to_server: ServerId(1),
                tokens: 50.0
            }]
        );
    }

    #[test]
    fn plan_splits_proportionally_and_is_bounded() {
        let c = cluster(&[0.0, 30.0, 30.0], &[50, 0, 0]);
        let plan = plan_borrow(&c, "app-1", ServerId(1), 50);
        let amounts: Vec<(ServerId, f64)> = plan.iter().map(|t| (t.from_server, t.tokens)).collect();
        assert_eq!(amounts, vec![(ServerId(2), 25.0), (ServerId(3), 25.0)]);

        let plan = plan_borrow(&c, "app-1", ServerId(1), 500);
        assert_eq!(plan.iter().map(|t| t.tokens).sum::<f64>(), 60.0);

        let c = cluster(&[0.0, 10.0, 5.0], &[50, 10, 5]);
        assert!(plan_borrow(&c, "app-1", ServerId(1), 50).is_empty());
    }

    #[test]
    fn transfers_conserve_tokens() {
        let mut c = cluster(&[0.0, 100.0, 50.0], &[50, 100, 0]);
        let before = c.app_tokens("app-1");
        let t = BorrowTransfer {
            app_id: "app-1".into(),
            from_server: ServerId(3),
            to_server: ServerId(1),
            tokens: 50.0,
        };
        execute_transfers(&mut c, std::slice::from_ref(&t)).unwrap();
        assert_eq!(c.get(ServerId(3)).unwrap().slot("app-1").unwrap().bucket.level(), 0.0);
        assert_eq!(c.get(ServerId(1)).unwrap().slot("app-1").unwrap().bucket.level(), 50.0);
        assert_eq!(c.app_tokens("app-1"), before);

        execute_transfers(&mut c, &[]).unwrap();
        assert_eq!(c.app_tokens("app-1"), before);

        let half = BorrowTransfer {
            tokens: 25.0,
            from_server: ServerId(2),
            ..t.clone()
        };
        execute_transfers(&mut c, &[half.clone(), half]).unwrap();
        assert_eq!(c.get(ServerId(1)).unwrap().slot("app-1").unwrap().bucket.level(), 100.0);

        let too_much = BorrowTransfer { tokens: 1000.0, ..t };
        assert!(matches!(
            execute_transfers(&mut c, &[too_much]),
            Err(ControlError::InsufficientDonor { .. })
        ));
    }

    #[test]
    fn borrowed_tokens_exceed_capacity() {
        let mut c = cluster(&[200.0, 200.0], &[400, 0]);
        let plan = plan_borrow(&c, "app-1", ServerId(1), 200);
        execute_transfers(&mut c, &plan).unwrap();
        let b = &c.get(ServerId(1)).unwrap().slot("app-1").unwrap().bucket;
        assert_eq!(b.level(), 400.0);
        assert!(b.level() > b.capacity());
    }

    #[test]
    fn borrowing_round_respects_policy_and_conserves() {
        let mut specs = table_of(&[eff("app-1", 300.0)]);
        let mut c = cluster(&[100.0, 100.0, 100.0], &[150, 100, 50]);
        let round = borrowing_round(&mut c, &specs, |_| 0.5).unwrap();
        assert!(round.transfers.is_empty());

        specs.get_mut("app-1").unwrap().borrow_allowed = true;
        let round = borrowing_round(&mut c, &specs, |_| 0.5).unwrap();
        assert_eq!(round.transfers.len(), 1);
        assert_eq!(round.tokens_before, round.tokens_after);
        assert_eq!(deficit(c.get(ServerId(1)).unwrap(), "app-1"), 0);
    }

    #[test]
    fn control_plane_carries_fractions_and_rotates() {
        let mut cp = ControlPlane::new(vec![ApplicationSpec::new("a", 7.0)], ids(3), 0.1, MB).unwrap();
        assert!(cp.sync(&PolicyRegistry::new()).unwrap());
        assert!(!cp.sync(&PolicyRegistry::new()).unwrap());
        let mut per_server = [0u64; 3];
        for _ in 0..100 {
            let shares = cp.next_epoch_shares();
            for (i, s) in ids(3).into_iter().enumerate() {
                per_server[i] += shares[&("a".into(), s)];
            }
        }
        // 7 MB/s over 10 s.
        assert_eq!(per_server.iter().sum::<u64>(), 70);
        assert!(per_server.iter().max().unwrap() - per_server.iter().min().unwrap() <= 1);
        assert!((cp.weights().gamma["a"] - 2.995_732_273_553_991).abs() < 1e-12);
    }

    #[test]
    fn satisfaction_window() {
        let mut m = MetricsCollector::new(1.0, ["a".into()], [ServerId(1)]);
        // Idle.
        assert_eq!(satisfaction(&m, "a", 300.0, 1.0, 5.0), 1.0);
        for i in 0..50 {
            m.record_arrival(&"a".into(), i as f64 * 0.1);
        }
        // Demand but nothing served.
        assert_eq!(satisfaction(&m, "a", 300.0, 1.0, 5.0), 0.0);
        for i in 40..50 {
            m.record_service(crate::metrics::MetricsSample {
                time: i as f64 * 0.1,
                app_id: "a".into(),
                server_id: ServerId(1),
                bytes_served: 25 * MB,
            });
        }
        let s = satisfaction(&m, "a", 300.0, 1.0, 5.0);
        assert!((s - 250.0 / 300.0).abs() < 1e-12);
        // Window reaching before the first arrival is not judged yet.
        let mut fresh = MetricsCollector::new(1.0, ["a".into()], [ServerId(1)]);
        fresh.record_arrival(&"a".into(), 0.05);
        assert_eq!(satisfaction(&fresh, "a", 300.0, 1.0, 0.5), 1.0);
    }
}
