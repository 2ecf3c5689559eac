//! Service records, windowed bandwidth, satisfaction and fairness, plus the
//! `timeseries.csv` / `summary.json` exports.
//!
//! Steady-state figures cover the whole reporting windows that start at or
//! after the warm-up and end by the run duration.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{AppId, ServerId, BYTES_PER_MB};

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_HEADER: &str = "time_s,app_id,server_id,mb_served,tokens_borrowed,tokens_wasted";

/// Slack for comparing event times computed as `index * step`.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSample {
    pub time: f64,
    pub app_id: AppId,
    pub server_id: ServerId,
    pub bytes_served: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Cell {
    bytes: u64,
    borrowed: f64,
    wasted: f64,
}

#[derive(Debug, Clone, Default)]
struct AppSeries {
    /// (tick time, cumulative bytes served up to and including that tick).
    served: Vec<(f64, u64)>,
    arrivals: Vec<f64>,
    served_requests: u64,
    rejected: u64,
    delay_sum: f64,
    max_delay: f64,
}

impl AppSeries {
    fn cumulative_before(&self, t: f64) -> u64 {
        let idx = self.served.partition_point(|(time, _)| *time < t);
        if idx == 0 {
            0
        } else {
            self.served[idx - 1].1
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("Jain index is undefined when every value is zero")]
    AllZero,
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected CSV header `{0}`")]
    Header(String),
}

/// `(sum x)^2 / (n * sum x^2)`.
pub fn jain_index(values: &[f64]) -> Result<f64, MetricsError> {
    let sum: f64 = values.iter().sum();
    let sum_sq: f64 = values.iter().map(|x| x * x).sum();
    if values.is_empty() || sum_sq == 0.0 {
        return Err(MetricsError::AllZero);
    }
    Ok(sum * sum / (values.len() as f64 * sum_sq))
}

/// Identifies a run in exported files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub window_s: f64,
}

impl RunInfo {
    /// Half-open range of reporting-window indices counted as steady state.
    pub fn steady_windows(&self) -> std::ops::Range<u64> {
        let first = (self.warmup_s / self.window_s - TIME_EPS).ceil().max(0.0) as u64;
        let end = (self.duration_s / self.window_s + TIME_EPS).floor().max(0.0) as u64;
        first..end.max(first)
    }

    /// Number of windows the time series covers, including a trailing partial one.
    pub fn total_windows(&self) -> u64 {
        (self.duration_s / self.window_s - TIME_EPS).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Default)]
pub struct MetricsCollector {
    window_s: f64,
    servers: BTreeSet<ServerId>,
    apps: BTreeMap<AppId, AppSeries>,
    cells: BTreeMap<(u64, AppId, ServerId), Cell>,
    samples: Vec<MetricsSample>,
    borrowed_total: f64,
    wasted_total: f64,
    sealed_windows: u64,
}

impl MetricsCollector {
    pub fn new(window_s: f64, apps: impl IntoIterator<Item = AppId>, servers: impl IntoIterator<Item = ServerId>) -> Self {
        assert!(window_s > 0.0, "window must be positive");
        Self {
            window_s,
            servers: servers.into_iter().collect(),
            apps: apps.into_iter().map(|a| (a, AppSeries::default())).collect(),
            ..Self::default()
        }
    }

    pub fn window_s(&self) -> f64 {
        self.window_s
    }

    fn window_index(&self, time: f64) -> u64 {
        (time / self.window_s + TIME_EPS).floor().max(0.0) as u64
    }

    fn series(&mut self, app: &AppId) -> &mut AppSeries {
        self.apps.entry(app.clone()).or_default()
    }

    fn cell(&mut self, time: f64, app: &AppId, server: ServerId) -> &mut Cell {
        let idx = self.window_index(time);
        self.servers.insert(server);
        self.apps.entry(app.clone()).or_default();
        self.cells.entry((idx, app.clone(), server)).or_default()
    }

    /// Records one served request. Samples must arrive in time order.
    pub fn record_service(&mut self, sample: MetricsSample) {
        self.cell(sample.time, &sample.app_id, sample.server_id).bytes += sample.bytes_served;
        let series = self.series(&sample.app_id);
        series.served_requests += 1;
        match series.served.last_mut() {
            Some((t, cum)) if *t == sample.time => *cum += sample.bytes_served,
            last => {
                let cum = last.map_or(0, |(_, c)| *c) + sample.bytes_served;
                series.served.push((sample.time, cum));
            }
        }
        self.samples.push(sample);
    }

    pub fn record_delay(&mut self, app: &AppId, delay_s: f64) {
        let s = self.series(app);
        s.delay_sum += delay_s;
        s.max_delay = s.max_delay.max(delay_s);
    }

    pub fn record_arrival(&mut self, app: &AppId, time: f64) {
        self.series(app).arrivals.push(time);
    }

    pub fn record_rejection(&mut self, app: &AppId) {
        self.series(app).rejected += 1;
    }

    pub fn record_waste(&mut self, time: f64, app: &AppId, server: ServerId, tokens: f64) {
        if tokens > 0.0 {
            self.cell(time, app, server).wasted += tokens;
            self.wasted_total += tokens;
        }
    }

    /// Records tokens received by `server` through borrowing.
    pub fn record_borrow(&mut self, time: f64, app: &AppId, server: ServerId, tokens: f64) {
        self.cell(time, app, server).borrowed += tokens;
        self.borrowed_total += tokens;
    }

    /// Marks every window ending at or before `time` as complete.
    pub fn seal_until(&mut self, time: f64) {
        self.sealed_windows = self.sealed_windows.max(self.window_index(time));
    }

    pub fn sealed_windows(&self) -> u64 {
        self.sealed_windows
    }

    pub fn samples(&self) -> &[MetricsSample] {
        &self.samples
    }

    pub fn borrowed_total(&self) -> f64 {
        self.borrowed_total
    }

    pub fn wasted_total(&self) -> f64 {
        self.wasted_total
    }

    pub fn arrivals(&self, app: &str) -> u64 {
        self.apps.get(app).map_or(0, |s| s.arrivals.len() as u64)
    }

    pub fn served_requests(&self, app: &str) -> u64 {
        self.apps.get(app).map_or(0, |s| s.served_requests)
    }

    pub fn rejected(&self, app: &str) -> u64 {
        self.apps.get(app).map_or(0, |s| s.rejected)
    }

    pub fn rejected_total(&self) -> u64 {
        self.apps.values().map(|s| s.rejected).sum()
    }

    pub fn max_delay(&self, app: &str) -> f64 {
        self.apps.get(app).map_or(0.0, |s| s.max_delay)
    }

    pub fn first_arrival(&self, app: &str) -> Option<f64> {
        self.apps.get(app).and_then(|s| s.arrivals.first().copied())
    }

    /// Bytes served to `app` by ticks in `[t0, t1)`.
    pub fn served_bytes_between(&self, app: &str, t0: f64, t1: f64) -> u64 {
        self.apps.get(app).map_or(0, |s| {
            s.cumulative_before(t1).saturating_sub(s.cumulative_before(t0))
        })
    }

    pub fn arrivals_between(&self, app: &str, t0: f64, t1: f64) -> usize {
        self.apps.get(app).map_or(0, |s| {
            s.arrivals.partition_point(|t| *t < t1) - s.arrivals.partition_point(|t| *t < t0)
        })
    }

    /// MB/s served to `app` over `[t0, t1)`.
    pub fn window_bandwidth(&self, app: &str, t0: f64, t1: f64) -> f64 {
        assert!(t1 > t0, "empty window");
        self.served_bytes_between(app, t0, t1) as f64 / (t1 - t0) / BYTES_PER_MB
    }

    /// MB/s served to `app` by one server over `[t0, t1)`.
    pub fn window_bandwidth_on(&self, app: &str, server: ServerId, t0: f64, t1: f64) -> f64 {
        assert!(t1 > t0, "empty window");
        let bytes: u64 = self
            .samples
            .iter()
            .filter(|s| s.app_id.as_str() == app && s.server_id == server && s.time >= t0 && s.time < t1)
            .map(|s| s.bytes_served)
            .sum();
        bytes as f64 / (t1 - t0) / BYTES_PER_MB
    }

    /// Rows of the time series in (time, app, server) order.
    pub fn rows(&self, run: &RunInfo) -> Vec<TimeseriesRow> {
        let mut rows = Vec::new();
        for idx in 0..run.total_windows() {
            for app in self.apps.keys() {
                for server in &self.servers {
                    let cell = self
                        .cells
                        .get(&(idx, app.clone(), *server))
                        .copied()
                        .unwrap_or_default();
                    rows.push(TimeseriesRow {
                        time_s: idx as f64 * self.window_s,
                        app_id: app.clone(),
                        server_id: *server,
                        mb_served: cell.bytes as f64 / BYTES_PER_MB,
                        tokens_borrowed: cell.borrowed,
                        tokens_wasted: cell.wasted,
                    });
                }
            }
        }
        rows
    }

    /// Builds the end-of-run report. `desired` lists the configured
    /// applications and their effective desired rates.
    pub fn report(&self, desired: &BTreeMap<AppId, f64>, run: RunInfo) -> MetricsReport {
        let steady = run.steady_windows();
        let steady_len = (steady.end - steady.start) as f64 * run.window_s;
        let t0 = steady.start as f64 * run.window_s;
        let t1 = steady.end as f64 * run.window_s;
        let per_cell = steady_bytes(
            self.cells
                .iter()
                .map(|((idx, app, server), cell)| (*idx, app, *server, cell.bytes)),
            &steady,
        );
        let mut apps = BTreeMap::new();
        for (app, desired_mbps) in desired {
            let per_server: BTreeMap<ServerId, f64> = self
                .servers
                .iter()
                .map(|s| {
                    let bytes = per_cell.get(&(app.clone(), *s)).copied().unwrap_or(0);
                    (*s, mbps(bytes, steady_len))
                })
                .collect();
            let bytes: u64 = self
                .servers
                .iter()
                .map(|s| per_cell.get(&(app.clone(), *s)).copied().unwrap_or(0))
                .sum();
            let achieved = mbps(bytes, steady_len);
            let idle = steady_len <= 0.0 || self.arrivals_between(app.as_str(), t0 - TIME_EPS, t1 - TIME_EPS) == 0;
            let series = self.apps.get(app);
            let served = series.map_or(0, |s| s.served_requests);
            apps.insert(
                app.clone(),
                AppReport {
                    desired_mbps: *desired_mbps,
                    achieved_mbps: achieved,
                    satisfaction: satisfaction_ratio(achieved, *desired_mbps, idle),
                    per_server_mbps: per_server,
                    mean_delay_s: series
                        .filter(|s| s.served_requests > 0)
                        .map_or(0.0, |s| s.delay_sum / s.served_requests as f64),
                    max_delay_s: series.map_or(0.0, |s| s.max_delay),
                    arrived: series.map_or(0, |s| s.arrivals.len() as u64),
                    served,
                    rejected: series.map_or(0, |s| s.rejected),
                },
            );
        }
        let sats: Vec<f64> = apps.values().map(|a| a.satisfaction).collect();
        MetricsReport {
            run,
            fairness_jain: jain_index(&sats).ok(),
            apps,
            borrowed_tokens: self.borrowed_total,
            wasted_tokens: self.wasted_total,
            rejected: self.rejected_total(),
        }
    }

    /// Writes `timeseries.csv` and `summary.json` into `out_dir`.
    pub fn export(&self, report: &MetricsReport, out_dir: &Path) -> Result<(), MetricsError> {
        fs::create_dir_all(out_dir)?;
        let mut w = csv::Writer::from_path(out_dir.join(TIMESERIES_FILE))?;
        w.write_record(CSV_HEADER.split(','))?;
        for row in self.rows(&report.run) {
            w.write_record([
                row.time_s.to_string(),
                row.app_id.to_string(),
                row.server_id.to_string(),
                row.mb_served.to_string(),
                row.tokens_borrowed.to_string(),
                row.tokens_wasted.to_string(),
            ])?;
        }
        w.flush()?;
        let summary = Summary::from(report);
        fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(())
    }
}

fn mbps(bytes: u64, seconds: f64) -> f64 {
    if seconds > 0.0 {
        bytes as f64 / seconds / BYTES_PER_MB
    } else {
        0.0
    }
}

fn satisfaction_ratio(achieved: f64, desired: f64, idle: bool) -> f64 {
    if idle {
        1.0
    } else {
        (achieved / desired).clamp(0.0, 1.0)
    }
}

fn steady_bytes<'a>(
    cells: impl Iterator<Item = (u64, &'a AppId, ServerId, u64)>,
    steady: &std::ops::Range<u64>,
) -> BTreeMap<(AppId, ServerId), u64> {
    let mut out = BTreeMap::new();
    for (idx, app, server, bytes) in cells {
        if steady.contains(&idx) {
            *out.entry((app.clone(), server)).or_insert(0) += bytes;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub time_s: f64,
    pub app_id: AppId,
    pub server_id: ServerId,
    pub mb_served: f64,
    pub tokens_borrowed: f64,
    pub tokens_wasted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppReport {
    pub desired_mbps: f64,
    pub achieved_mbps: f64,
    pub satisfaction: f64,
    pub per_server_mbps: BTreeMap<ServerId, f64>,
    pub mean_delay_s: f64,
    pub max_delay_s: f64,
    pub arrived: u64,
    pub served: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub run: RunInfo,
    pub apps: BTreeMap<AppId, AppReport>,
    /// Over per-app satisfaction ratios; `None` without applications.
    pub fairness_jain: Option<f64>,
    pub borrowed_tokens: f64,
    pub wasted_tokens: f64,
    pub rejected: u64,
}

impl MetricsReport {
    pub fn aggregate_mbps(&self) -> f64 {
        self.apps.values().map(|a| a.achieved_mbps).sum()
    }

    pub fn app(&self, app: &str) -> Option<&AppReport> {
        self.apps.get(app)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryApp {
    pub desired_mbps: f64,
    pub achieved_mbps: f64,
    pub satisfaction: f64,
    pub mean_delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTotals {
    pub borrowed_tokens: f64,
    pub wasted_tokens: f64,
    pub rejected: u64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run: RunInfo,
    pub apps: BTreeMap<AppId, SummaryApp>,
    pub fairness_jain: Option<f64>,
    pub totals: SummaryTotals,
}

impl From<&MetricsReport> for Summary {
    fn from(r: &MetricsReport) -> Self {
        Self {
            run: r.run,
            apps: r
                .apps
                .iter()
                .map(|(id, a)| {
                    (
                        id.clone(),
                        SummaryApp {
                            desired_mbps: a.desired_mbps,
                            achieved_mbps: a.achieved_mbps,
                            satisfaction: a.satisfaction,
                            mean_delay_s: a.mean_delay_s,
                        },
                    )
                })
                .collect(),
            fairness_jain: r.fairness_jain,
            totals: SummaryTotals {
                borrowed_tokens: r.borrowed_tokens,
                wasted_tokens: r.wasted_tokens,
                rejected: r.rejected,
            },
        }
    }
}

pub fn read_summary(dir: &Path) -> Result<Summary, MetricsError> {
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_timeseries(dir: &Path) -> Result<Vec<TimeseriesRow>, MetricsError> {
    let mut r = csv::Reader::from_path(dir.join(TIMESERIES_FILE))?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(MetricsError::Header(header));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Re-derives per-app steady-state bandwidth (MB/s) from time-series rows.
pub fn steady_state_from_rows(rows: &[TimeseriesRow], run: &RunInfo) -> BTreeMap<AppId, f64> {
    let steady = run.steady_windows();
    let steady_len = (steady.end - steady.start) as f64 * run.window_s;
    let mut bytes: BTreeMap<AppId, u64> = BTreeMap::new();
    for row in rows {
        let idx = (row.time_s / run.window_s + TIME_EPS).floor() as u64;
        let entry = bytes.entry(row.app_id.clone()).or_insert(0);
        if steady.contains(&idx) {
            *entry += (row.mb_served * BYTES_PER_MB).round() as u64;
        }
    }
    bytes.into_iter().map(|(app, b)| (app, mbps(b, steady_len))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, app: &str, server: u32, bytes: u64) -> MetricsSample {
        MetricsSample {
            time: t,
            app_id: app.into(),
            server_id: ServerId(server),
            bytes_served: bytes,
        }
    }

    fn run(duration: f64, warmup: f64) -> RunInfo {
        RunInfo {
            seed: 1,
            duration_s: duration,
            warmup_s: warmup,
            window_s: 1.0,
        }
    }

    #[test]
    fn jain_values() {
        assert_eq!(jain_index(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(jain_index(&[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(jain_index(&[250.0, 250.0]).unwrap(), 1.0);
        assert!(matches!(jain_index(&[0.0, 0.0]), Err(MetricsError::AllZero)));
        assert!(jain_index(&[]).is_err());
    }

    #[test]
    fn window_bandwidth_basics() {
        let mut c = MetricsCollector::new(1.0, ["a".into()], [ServerId(1), ServerId(2)]);
        assert_eq!(c.window_bandwidth("a", 0.0, 1.0), 0.0);
        c.record_service(sample(0.1, "a", 1, 4_000_000));
        assert_eq!(c.window_bandwidth("a", 0.0, 1.0), 4.0);
        for i in 0..10 {
            c.record_service(sample(1.0 + i as f64 * 0.1, "a", 1 + (i % 2), 25_000_000));
        }
        assert!((c.window_bandwidth("a", 1.0, 2.0) - 250.0).abs() < 1e-9);
        let whole = c.window_bandwidth("a", 1.0, 2.0);
        let halves = c.window_bandwidth("a", 1.0, 1.5) * 0.5 + c.window_bandwidth("a", 1.5, 2.0) * 0.5;
        assert!((whole - halves).abs() < 1e-9);
        let split = c.window_bandwidth_on("a", ServerId(1), 1.0, 2.0) + c.window_bandwidth_on("a", ServerId(2), 1.0, 2.0);
        assert!((whole - split).abs() < 1e-9);
    }

    #[test]
    fn empty_report_is_all_zero() {
        let c = MetricsCollector::new(1.0, ["a".into()], [ServerId(1)]);
        let desired = BTreeMap::from([(AppId::from("a"), 300.0)]);
        let r = c.report(&desired, run(10.0, 1.0));
        let a = r.app("a").unwrap();
        assert_eq!(a.achieved_mbps, 0.0);
        // Idle app counts as satisfied.
        assert_eq!(a.satisfaction, 1.0);
        assert_eq!(r.borrowed_tokens, 0.0);
        assert_eq!(r.rejected, 0);
    }

    #[test]
    fn steady_windows_skip_warmup_and_partial_tail() {
        assert_eq!(run(10.0, 1.0).steady_windows(), 1..10);
        assert_eq!(run(10.5, 1.0).steady_windows(), 1..10);
        assert_eq!(run(10.5, 1.0).total_windows(), 11);
        assert_eq!(run(0.5, 1.0).steady_windows(), 1..1);
        let r = RunInfo {
            window_s: 0.1,
            ..run(3.0, 0.3)
        };
        assert_eq!(r.steady_windows(), 3..30);
    }

    #[test]
    fn report_sums_servers() {
        let mut c = MetricsCollector::new(1.0, ["a".into()], [ServerId(1), ServerId(2)]);
        c.record_arrival(&"a".into(), 0.5);
        c.record_arrival(&"a".into(), 1.5);
        c.record_service(sample(1.2, "a", 1, 100_000_000));
        c.record_service(sample(1.2, "a", 2, 50_000_000));
        c.record_service(sample(0.5, "a", 2, 7_000_000));
        let desired = BTreeMap::from([(AppId::from("a"), 300.0)]);
        let r = c.report(&desired, run(2.0, 1.0));
        let a = r.app("a").unwrap();
        assert_eq!(a.achieved_mbps, 150.0);
        assert_eq!(a.per_server_mbps[&ServerId(1)], 100.0);
        assert_eq!(a.per_server_mbps[&ServerId(2)], 50.0);
        assert_eq!(a.satisfaction, 0.5);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = MetricsCollector::new(1.0, ["a".into(), "b".into()], [ServerId(1)]);
        c.record_arrival(&"a".into(), 1.0);
        c.record_service(sample(1.3, "a", 1, 1_234_567));
        c.record_service(sample(2.7, "b", 1, 3_000_001));
        c.record_borrow(1.0, &"a".into(), ServerId(1), 5.0);
        c.record_waste(2.0, &"b".into(), ServerId(1), 2.5);
        let desired = BTreeMap::from([(AppId::from("a"), 10.0), (AppId::from("b"), 10.0)]);
        let info = run(3.0, 1.0);
        let r = c.report(&desired, info);
        c.export(&r, dir.path()).unwrap();

        let text = fs::read_to_string(dir.path().join(TIMESERIES_FILE)).unwrap();
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        let rows = read_timeseries(dir.path()).unwrap();
        let again = steady_state_from_rows(&rows, &info);
        for (app, a) in &r.apps {
            assert_eq!(again[app], a.achieved_mbps);
        }
        let summary = read_summary(dir.path()).unwrap();
        assert_eq!(summary, Summary::from(&r));
        assert_eq!(summary.totals.borrowed_tokens, 5.0);
    }

    #[test]
    fn empty_collector_exports_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let c = MetricsCollector::new(1.0, Vec::<AppId>::new(), Vec::<ServerId>::new());
        let r = c.report(&BTreeMap::new(), run(5.0, 1.0));
        c.export(&r, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(TIMESERIES_FILE)).unwrap();
        assert_eq!(text.trim_end(), CSV_HEADER);
        let s = read_summary(dir.path()).unwrap();
        assert!(s.apps.is_empty());
        assert_eq!(s.fairness_jain, None);
        assert_eq!(s.totals.rejected, 0);
    }
}
