// Two applications each want 300 MB/s from a single 500 MB/s server. The
// shortfall is shared evenly.
//
//     cargo run --example fair_degradation

use sdqos::config::bundled;
use sdqos::metrics::jain_index;
use sdqos::sim;

pub fn run() -> f64 {
    let report = sim::run(bundled::saturation2(), 30.0).unwrap();
    for (app, a) in &report.apps {
        println!(
            "{app}: {:.1}/{:.0} MB/s, satisfaction {:.3}, mean delay {:.2}s, {} rejected",
            a.achieved_mbps, a.desired_mbps, a.satisfaction, a.mean_delay_s, a.rejected
        );
    }
    let ratios: Vec<f64> = report.apps.values().map(|a| a.satisfaction).collect();
    let jain = jain_index(&ratios).unwrap();
    println!("Jain index over satisfaction: {jain:.5}");
    jain
}

#[allow(dead_code)]
fn main() {
    run();
}
