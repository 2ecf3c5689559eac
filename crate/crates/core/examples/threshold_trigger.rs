// `thres` makes borrowing conditional: the application may only borrow while
// its measured satisfaction is below the threshold. Without borrowing this
// workload sits at 250/300 = 0.833.
//
//     cargo run --example threshold_trigger

use sdqos::config::bundled;
use sdqos::policy::parse_policy;
use sdqos::sim::Simulation;

pub fn run() -> Vec<(f64, usize, f64)> {
    let mut rows = Vec::new();
    for thres in [0.8, 0.9, 1.0] {
        let mut sim = Simulation::new(bundled::thres(), 30.0).unwrap();
        let stmt = parse_policy(&format!("<app-1, borrow=TRUE, thres={thres}>")).unwrap();
        sim.apply_policy(&stmt).unwrap();
        let (report, sim) = sim.run().unwrap();
        let achieved = report.aggregate_mbps();
        println!(
            "thres={thres:<4} transfers={:<4} aggregate={achieved:.1} MB/s",
            sim.transfers().len()
        );
        rows.push((thres, sim.transfers().len(), achieved));
    }
    rows
}

#[allow(dead_code)]
fn main() {
    run();
}
