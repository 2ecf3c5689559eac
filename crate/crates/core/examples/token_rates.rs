// How desired bandwidth turns into per-server token grants, including the
// fractional carry for rates that do not divide evenly.
//
//     cargo run --example token_rates

use sdqos::control_plane::{ApplicationSpec, ControlPlane};
use sdqos::policy::{parse_policy, PolicyRegistry};
use sdqos::ServerId;

pub fn run() -> ControlPlane {
    let servers: Vec<ServerId> = (1..=3).map(ServerId).collect();
    let specs = vec![
        ApplicationSpec::new("app-1", 300.0),
        ApplicationSpec::new("app-2", 7.0),
    ];
    let mut cp = ControlPlane::new(specs, servers.clone(), 0.1, 1_000_000).unwrap();

    // A rate policy overrides the desired rate from the workload config.
    let mut registry = PolicyRegistry::new();
    registry.apply(&parse_policy("<app-1, rate=240 MB/s>").unwrap()).unwrap();
    cp.sync(&registry).unwrap();

    for (app, rate) in &cp.table().per_app_rate {
        println!("{app}: {rate} tokens/s, gamma {:.4}", cp.weights().gamma[app]);
    }

    println!("epoch  app-2 grants per server");
    let mut totals = [0u64; 3];
    for epoch in 0..6 {
        let shares = cp.next_epoch_shares();
        let row: Vec<u64> = servers.iter().map(|s| shares[&("app-2".into(), *s)]).collect();
        for (t, r) in totals.iter_mut().zip(&row) {
            *t += r;
        }
        println!("{epoch:>5}  {row:?}");
    }
    println!("after 0.6 s: {totals:?} (7 MB/s x 0.6 s = 4.2 tokens)");
    cp
}

#[allow(dead_code)]
fn main() {
    run();
}
