// One application spreads IO unevenly over three servers (150/100/50 MB/s of
// demand against 100 MB/s of tokens per server). Without borrowing, server 1
// is token-starved while server 3 wastes half its tokens.
//
//     cargo run --example unbalanced_io

use sdqos::config::bundled;
use sdqos::metrics::MetricsReport;
use sdqos::sim;

pub fn run() -> MetricsReport {
    let mut config = bundled::fig2();
    config.borrowing_enabled = false;
    let report = sim::run(config, 30.0).expect("bundled scenario runs");

    let app = report.app("app-1").unwrap();
    println!("server  served MB/s");
    for (server, mbps) in &app.per_server_mbps {
        println!("{server:>6}  {mbps:>11.1}");
    }
    println!(
        "aggregate {:.1} of {:.0} MB/s desired (satisfaction {:.3}); {:.0} tokens wasted",
        app.achieved_mbps, app.desired_mbps, app.satisfaction, report.wasted_tokens
    );
    report
}

#[allow(dead_code)]
fn main() {
    run();
}
