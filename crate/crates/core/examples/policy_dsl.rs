// Parse, render, validate and apply policy statements.
//
//     cargo run --example policy_dsl

use sdqos::policy::{parse_policy, render_policy, validate_policy, PolicyRegistry};

pub fn run() -> PolicyRegistry {
    let statements = [
        "<app-1, rate=100 MB/s>",
        "<app-2, borrow=FALSE>",
        "< app-3 , BORROW = true , thres = 0.80 >",
    ];
    let mut registry = PolicyRegistry::new();
    for text in statements {
        let stmt = parse_policy(text).expect("valid statement");
        println!("{text:<42} -> {}", render_policy(&stmt));
        registry.apply(&stmt).expect("passes validation");
    }

    // Parses, but thres without borrow=TRUE is rejected by validation.
    let contradictory = parse_policy("<app-4, borrow=FALSE, thres=0.8>").unwrap();
    println!("violations: {:?}", validate_policy(&contradictory));

    match parse_policy("<app-1 rate=100>") {
        Err(e) => println!("{e}\n  <app-1 rate=100>\n  {}^", " ".repeat(e.position())),
        Ok(_) => unreachable!(),
    }

    // Last writer wins per key; the threshold goes away with borrowing.
    registry.apply(&parse_policy("<app-3, borrow=FALSE>").unwrap()).unwrap();
    for (app, policy) in registry.iter() {
        println!("{app}: {policy:?}");
    }
    println!("registry revision {}", registry.revision());
    registry
}

#[allow(dead_code)]
fn main() {
    run();
}
