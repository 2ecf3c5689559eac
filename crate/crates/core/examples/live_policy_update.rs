// Policies can change while the simulation runs; the control plane picks
// them up at the next epoch boundary.
//
//     cargo run --example live_policy_update

use sdqos::config::bundled;
use sdqos::policy::parse_policy;
use sdqos::sim::Simulation;

pub fn run() -> (f64, f64) {
    let mut config = bundled::fig2();
    config.policies = vec!["<app-1, borrow=FALSE>".into()];
    let mut sim = Simulation::new(config, 40.0).unwrap();

    sim.run_until(20.0).unwrap();
    sim.apply_policy(&parse_policy("<app-1, borrow=TRUE>").unwrap()).unwrap();
    while sim.step().unwrap() {}

    let before = sim.metrics().window_bandwidth("app-1", 5.0, 20.0);
    let after = sim.metrics().window_bandwidth("app-1", 25.0, 40.0);
    println!("borrowing prohibited: {before:.1} MB/s");
    println!("borrowing allowed:    {after:.1} MB/s");
    println!("first transfer at t={:.1}s", sim.transfers().first().map_or(f64::NAN, |(t, _)| *t));
    (before, after)
}

#[allow(dead_code)]
fn main() {
    run();
}
