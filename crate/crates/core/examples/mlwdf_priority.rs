// Queue selection on one server. Priority is gamma x head-of-line delay x
// (bucket level / regular allotment), so borrowed tokens lift a queue ahead
// of an otherwise identical one.
//
//     cargo run --example mlwdf_priority

use sdqos::data_plane::{tick_budget_bytes, IoRequest, ServerState, TokenBucket};
use sdqos::scheduler::{gamma, select_next, MLwdf, SchedWeights};
use sdqos::{AppId, ServerId};

fn request(id: u64, app: &str, at: f64) -> IoRequest {
    IoRequest {
        id,
        app_id: app.into(),
        size_bytes: 1_000_000,
        arrival_time: at,
        source_node: 0,
        target_server: ServerId(1),
    }
}

pub fn run() -> Option<AppId> {
    let g = gamma(0.05, 1.0).unwrap();
    let mut weights = SchedWeights::default();
    let mut server = ServerState::new(ServerId(1), 500.0);
    // What a tick would grant; selection skips heads the budget cannot cover.
    server.set_budget_bytes(tick_budget_bytes(500.0, 0.1));
    for app in ["app-1", "app-2"] {
        let mut bucket = TokenBucket::new(20.0, 1_000_000);
        bucket.refill(10.0);
        server.add_app(app.into(), bucket, 100);
        server.enqueue(&app.into(), request(0, app, 0.8)).unwrap();
        weights.gamma.insert(app.into(), g);
        weights.base_allotment.insert((app.into(), ServerId(1)), 10.0);
    }
    let now = 1.0;
    let scheduler = MLwdf::new(weights.clone());
    let show = |server: &ServerState| {
        for app in ["app-1", "app-2"] {
            println!("  {app}: priority {:.4}", scheduler.priority_of(server, &app.into(), now));
        }
    };

    println!("equal state, the smaller id wins the tie:");
    show(&server);
    println!("  -> {:?}", select_next(&server, &weights, now));

    server.slot_mut("app-2").unwrap().bucket.deposit_borrowed(5.0);
    println!("after app-2 borrows 5 tokens:");
    show(&server);
    let pick = select_next(&server, &weights, now);
    println!("  -> {pick:?}");
    pick
}

#[allow(dead_code)]
fn main() {
    run();
}
