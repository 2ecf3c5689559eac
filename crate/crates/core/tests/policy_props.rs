use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdqos::policy::{
    apply_policy, parse_policy, render_policy, validate_policy, ParseError, PolicyKey, PolicyRegistry, PolicyStatement,
    PolicyValue,
};

fn app_id() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_-]{1,12}"
}

fn rate() -> impl Strategy<Value = f64> {
    prop_oneof![
        (1u32..100_000).prop_map(f64::from),
        (1e-6f64..1e6),
        (f64::MIN_POSITIVE..f64::MAX),
    ]
}

fn fraction() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), (1u32..=100).prop_map(|p| f64::from(p) / 100.0), (1e-9f64..1.0)]
}

/// Valid statements: each key at most once, thres only next to borrow=TRUE.
fn valid_statement() -> impl Strategy<Value = PolicyStatement> {
    (
        app_id(),
        proptest::option::of(rate()),
        proptest::option::of(any::<bool>()),
        proptest::option::of(fraction()),
        any::<prop::sample::Index>(),
    )
        .prop_filter("at least one key", |(_, r, b, t, _)| r.is_some() || b.is_some() || t.is_some())
        .prop_map(|(id, rate, borrow, thres, order)| {
            let mut entries = Vec::new();
            if let Some(r) = rate {
                entries.push((PolicyKey::Rate, PolicyValue::Rate(r)));
            }
            match (borrow, thres) {
                (_, Some(t)) => {
                    entries.push((PolicyKey::Borrow, PolicyValue::Flag(true)));
                    entries.push((PolicyKey::Thres, PolicyValue::Fraction(t)));
                }
                (Some(b), None) => entries.push((PolicyKey::Borrow, PolicyValue::Flag(b))),
                (None, None) => {}
            }
            let k = order.index(entries.len());
            entries.rotate_left(k);
            PolicyStatement { app_id: id.into(), entries }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn render_then_parse_is_identity(stmt in valid_statement()) {
        prop_assert!(validate_policy(&stmt).is_empty());
        let text = render_policy(&stmt);
        let back = parse_policy(&text).unwrap();
        prop_assert_eq!(&back, &stmt);
        prop_assert_eq!(render_policy(&back), text);
    }

    #[test]
    fn whitespace_and_case_do_not_matter(stmt in valid_statement()) {
        let noisy = render_policy(&stmt)
            .replace(", ", " ,\t")
            .replace('=', " = ")
            .replace("borrow", "BoRrOw")
            .replace("TRUE", "true");
        prop_assert_eq!(parse_policy(&format!("  {noisy} ")).unwrap(), stmt);
    }

    #[test]
    fn applying_twice_is_idempotent(stmt in valid_statement()) {
        let once = apply_policy(PolicyRegistry::new(), &stmt).unwrap();
        let twice = apply_policy(once.clone(), &stmt).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.revision(), twice.revision());
    }

    #[test]
    fn disjoint_key_sets_commute(r in rate(), b in any::<bool>()) {
        let a = PolicyStatement::new("app-1").with(PolicyKey::Rate, PolicyValue::Rate(r));
        let c = PolicyStatement::new("app-1").with(PolicyKey::Borrow, PolicyValue::Flag(b));
        let ac = apply_policy(apply_policy(PolicyRegistry::new(), &a).unwrap(), &c).unwrap();
        let ca = apply_policy(apply_policy(PolicyRegistry::new(), &c).unwrap(), &a).unwrap();
        prop_assert_eq!(ac, ca);
    }

    #[test]
    fn error_positions_stay_in_bounds(text in ".{0,40}") {
        if let Err(e) = parse_policy(&text) {
            prop_assert!(e.position() <= text.len());
        }
    }
}

#[test]
fn random_bytes_never_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5d_9005);
    let alphabet: &[u8] = b"<>,= .0123456789MBs/aprtebowhTRUEFALS-_\t";
    let mut parsed = 0;
    for i in 0..100_000 {
        let len = rng.random_range(0..48);
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..len).map(|_| rng.random()).collect()
        } else {
            // Biased toward grammar symbols so deeper parser states are hit.
            (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        let text = String::from_utf8_lossy(&bytes);
        if parse_policy(&text).is_ok() {
            parsed += 1;
        }
    }
    assert!(parsed < 100_000);
}

#[test]
fn documented_forms() {
    assert_eq!(
        parse_policy("<app-1, rate=100 MB/s>").unwrap(),
        PolicyStatement::new("app-1").with(PolicyKey::Rate, PolicyValue::Rate(100.0))
    );
    assert_eq!(
        parse_policy("<app-i, borrow=FALSE>").unwrap(),
        PolicyStatement::new("app-i").with(PolicyKey::Borrow, PolicyValue::Flag(false))
    );
    assert_eq!(
        parse_policy("<app-i, borrow=TRUE>").unwrap(),
        PolicyStatement::new("app-i").with(PolicyKey::Borrow, PolicyValue::Flag(true))
    );
    assert_eq!(
        parse_policy("<app-i, borrow=TRUE, thres=0.8>").unwrap(),
        PolicyStatement::new("app-i")
            .with(PolicyKey::Borrow, PolicyValue::Flag(true))
            .with(PolicyKey::Thres, PolicyValue::Fraction(0.8))
    );
}

#[test]
fn missing_comma_is_reported_where_it_belongs() {
    match parse_policy("<app-1 rate=100>") {
        Err(ParseError::Syntax { pos, expected }) => {
            assert_eq!(pos, 7);
            assert_eq!(expected, "`,`");
        }
        other => panic!("{other:?}"),
    }
}
