// The unbalanced workload again, now allowed to borrow: at each epoch the
// queue on server 1 takes idle tokens of the same application from the
// other servers.
//
//     cargo run --example token_borrowing

use std::collections::BTreeMap;

use sdqos::config::bundled;
use sdqos::sim::Simulation;
use sdqos::ServerId;

pub fn run() -> f64 {
    let (report, sim) = Simulation::new(bundled::fig2(), 30.0)
        .and_then(Simulation::run)
        .expect("bundled scenario runs");

    let mut flows: BTreeMap<(ServerId, ServerId), f64> = BTreeMap::new();
    for (_, t) in sim.transfers() {
        *flows.entry((t.from_server, t.to_server)).or_default() += t.tokens;
    }
    for ((from, to), tokens) in &flows {
        println!("server {from} -> server {to}: {:.1} tokens/s", tokens / 30.0);
    }

    let app = report.app("app-1").unwrap();
    for (server, mbps) in &app.per_server_mbps {
        println!("server {server} served {mbps:.1} MB/s");
    }
    println!("aggregate {:.1} MB/s, satisfaction {:.3}", app.achieved_mbps, app.satisfaction);
    app.achieved_mbps
}

#[allow(dead_code)]
fn main() {
    run();
}
