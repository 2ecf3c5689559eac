use std::collections::BTreeMap;

use proptest::prelude::*;

use sdqos::config::{bundled, ArrivalProcess, ServerConfig, ServerMapping, SimConfig, WorkloadStream};
use sdqos::control_plane::ApplicationSpec;
use sdqos::data_plane::{tick_budget_bytes, IoRequest, ServerState, TokenBucket};
use sdqos::scheduler::{MLwdf, SchedWeights};
use sdqos::sim::Simulation;
use sdqos::{AppId, ServerId};

fn poisson(app: &str, node: u32, mbps: f64, mapping: ServerMapping) -> WorkloadStream {
    WorkloadStream {
        app_id: app.into(),
        source_node: node,
        arrival_process: ArrivalProcess::Poisson { mean_rate_mbps: mbps },
        request_size_bytes: 1_000_000,
        server_mapping: mapping,
    }
}

fn bundled_all() -> Vec<(&'static str, SimConfig)> {
    let mut off = bundled::fig2();
    off.borrowing_enabled = false;
    vec![
        ("fig2", bundled::fig2()),
        ("fig2-no-borrow", off),
        ("thres", bundled::thres()),
        ("saturation2", bundled::saturation2()),
    ]
}

#[test]
fn flow_is_conserved() {
    for (name, config) in bundled_all() {
        let (_, sim) = Simulation::new(config, 20.0).unwrap().run().unwrap();
        let m = sim.metrics();
        let mut total = (0, 0);
        for app in sim.control().effective().keys() {
            let queued: u64 = sim
                .cluster()
                .servers()
                .iter()
                .filter_map(|s| s.slot(app.as_str()))
                .map(|slot| slot.queue.len() as u64)
                .sum();
            let arrived = m.arrivals(app.as_str());
            assert_eq!(
                arrived,
                m.served_requests(app.as_str()) + queued + m.rejected(app.as_str()),
                "{name}/{app}"
            );
            total.0 += arrived;
            total.1 += m.served_requests(app.as_str()) + queued + m.rejected(app.as_str());
        }
        assert_eq!(total.0, total.1, "{name}");
        assert!(total.0 > 0, "{name}");
    }
}

#[test]
fn clock_never_goes_backwards() {
    for (name, config) in bundled_all() {
        let mut sim = Simulation::new(config, 10.0).unwrap();
        let mut last = 0.0;
        while sim.step().unwrap() {
            assert!(sim.now() >= last, "{name}: {} after {last}", sim.now());
            last = sim.now();
        }
        assert!(last < 10.0);
    }
}

#[test]
fn shaping_bound_holds_every_tick() {
    for (name, config) in bundled_all() {
        let tick = config.timing.tick_s;
        let limits: BTreeMap<ServerId, f64> = config.servers.iter().map(|s| (s.id, s.phys_limit_mbps)).collect();
        let (_, sim) = Simulation::new(config, 20.0).unwrap().run().unwrap();
        let mut per_tick: BTreeMap<(u64, ServerId), u64> = BTreeMap::new();
        for s in sim.metrics().samples() {
            *per_tick.entry(((s.time / tick).round() as u64, s.server_id)).or_default() += s.bytes_served;
        }
        for ((t, server), bytes) in per_tick {
            assert!(bytes <= tick_budget_bytes(limits[&server], tick), "{name}: tick {t} server {server}: {bytes}");
        }
    }
}

#[test]
fn same_seed_same_outputs() {
    for (name, config) in bundled_all() {
        let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
        for dir in &dirs {
            let (report, sim) = Simulation::new(config.clone(), 15.0).unwrap().run().unwrap();
            sim.metrics().export(&report, dir.path()).unwrap();
        }
        for file in ["timeseries.csv", "summary.json"] {
            let a = std::fs::read(dirs[0].path().join(file)).unwrap();
            let b = std::fs::read(dirs[1].path().join(file)).unwrap();
            assert!(a == b, "{name}/{file} differs");
        }
    }
}

#[test]
fn steady_state_is_stable_across_durations() {
    let mut off = bundled::fig2();
    off.borrowing_enabled = false;
    for (name, config) in [("fig2", bundled::fig2()), ("fig2-no-borrow", off), ("saturation2", bundled::saturation2())] {
        let short = sdqos::sim::run(config.clone(), 15.0).unwrap();
        let long = sdqos::sim::run(config, 60.0).unwrap();
        for (app, a) in &short.apps {
            let b = &long.apps[app];
            let rel = (a.achieved_mbps - b.achieved_mbps).abs() / b.achieved_mbps;
            assert!(rel < 0.02, "{name}/{app}: {} vs {}", a.achieved_mbps, b.achieved_mbps);
        }
    }
}

/// Two apps whose token rates (150 and 450 MB/s) together exceed a 400 MB/s
/// server, each offering 1.5x its token rate. Queues never fill, so the
/// backlog keeps growing for the whole run.
fn overload(seed: u64) -> SimConfig {
    SimConfig {
        servers: vec![ServerConfig {
            id: ServerId(1),
            phys_limit_mbps: 400.0,
        }],
        apps: vec![ApplicationSpec::new("a", 150.0), ApplicationSpec::new("b", 450.0)],
        streams: vec![
            poisson("a", 1, 225.0, ServerMapping::RoundRobin),
            poisson("b", 2, 675.0, ServerMapping::RoundRobin),
        ],
        seed,
        queue_depth_limit: 100_000,
        ..SimConfig::default()
    }
}

#[test]
fn overload_degrades_in_proportion_to_tokens() {
    let report = sdqos::sim::run(overload(42), 40.0).unwrap();
    let a = report.apps[&AppId::from("a")].achieved_mbps;
    let b = report.apps[&AppId::from("b")].achieved_mbps;
    let served_ratio = b / a;
    let token_ratio = 450.0 / 150.0;
    assert!(
        (served_ratio - token_ratio).abs() / token_ratio < 0.10,
        "a={a} b={b} ratio={served_ratio}"
    );
    assert!((a + b - 400.0).abs() < 400.0 * 0.01, "server should stay saturated: {}", a + b);
}

#[test]
fn zero_streams_serve_nothing() {
    let mut config = bundled::fig2();
    config.streams.clear();
    let (report, sim) = Simulation::new(config, 5.0).unwrap().run().unwrap();
    assert_eq!(report.aggregate_mbps(), 0.0);
    assert_eq!(sim.metrics().served_requests("app-1"), 0);
}

#[test]
fn demand_limited_app_gets_its_demand() {
    let config = SimConfig {
        servers: vec![ServerConfig {
            id: ServerId(1),
            phys_limit_mbps: 500.0,
        }],
        apps: vec![ApplicationSpec::new("app-1", 300.0)],
        streams: vec![poisson("app-1", 1, 100.0, ServerMapping::RoundRobin)],
        ..SimConfig::default()
    };
    let report = sdqos::sim::run(config, 60.0).unwrap();
    let got = report.apps[&AppId::from("app-1")].achieved_mbps;
    assert!((got - 100.0).abs() < 2.0, "{got}");
}

fn request(id: u64, app: &str, size: u64, at: f64) -> IoRequest {
    IoRequest {
        id,
        app_id: app.into(),
        size_bytes: size,
        arrival_time: at,
        source_node: 0,
        target_server: ServerId(1),
    }
}

proptest! {
    #[test]
    fn each_app_is_served_in_fifo_order(
        reqs in prop::collection::vec((0usize..3, 1u64..3_000_000, 0.0f64..1.0), 1..200),
        levels in prop::collection::vec(0u32..200, 3),
        limit in 1.0f64..2_000.0,
    ) {
        let apps = ["a", "b", "c"];
        let mut server = ServerState::new(ServerId(1), limit);
        let mut weights = SchedWeights::default();
        for (app, level) in apps.iter().zip(&levels) {
            let mut bucket = TokenBucket::new(f64::from(*level).max(1.0), 1_000_000);
            bucket.refill(f64::from(*level));
            server.add_app((*app).into(), bucket, 10_000);
            weights.gamma.insert((*app).into(), 3.0);
            weights.base_allotment.insert(((*app).into(), ServerId(1)), 10.0);
        }
        let mut sorted = reqs.clone();
        sorted.sort_by(|x, y| x.2.total_cmp(&y.2));
        for (i, (app, size, at)) in sorted.into_iter().enumerate() {
            server.enqueue(&apps[app].into(), request(i as u64, apps[app], size, at)).unwrap();
        }
        let selector = MLwdf::new(weights);
        let mut last: BTreeMap<AppId, u64> = BTreeMap::new();
        for k in 0..20 {
            let budget = tick_budget_bytes(limit, 0.1);
            let done = server.tick(&selector, 1.0 + k as f64 * 0.1, 0.1);
            let bytes: u64 = done.iter().map(|c| c.request.size_bytes).sum();
            prop_assert!(bytes <= budget);
            for c in done {
                if let Some(prev) = last.insert(c.request.app_id.clone(), c.request.id) {
                    prop_assert!(c.request.id > prev);
                }
            }
        }
    }
}
