// Write a run's timeseries.csv and summary.json, then rebuild the per-app
// table from the CSV alone.
//
//     cargo run --example export_and_report

use std::path::PathBuf;

use sdqos::cli::{build_report, ReportTable};
use sdqos::config::bundled;
use sdqos::sim::Simulation;

pub fn run() -> ReportTable {
    let dir: PathBuf = std::env::temp_dir().join(format!("sdqos-example-{}", std::process::id()));
    let (report, sim) = Simulation::new(bundled::saturation2(), 20.0).unwrap().run().unwrap();
    sim.metrics().export(&report, &dir).unwrap();
    println!("wrote {}", dir.display());

    let table = build_report(&dir).unwrap();
    for (app, row) in &table.rows {
        println!(
            "{app}: desired {:.0}, achieved {:.3} (summary {:.3}), satisfaction {:.4}",
            row.desired_mbps, row.achieved_mbps, report.apps[app].achieved_mbps, row.satisfaction
        );
    }
    println!("jain {:?}", table.fairness_jain);
    std::fs::remove_dir_all(&dir).ok();
    table
}

#[allow(dead_code)]
fn main() {
    run();
}
