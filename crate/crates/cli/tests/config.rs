use piezobeam_cli::config::{RunConfig, Strategy};
use proptest::prelude::*;

#[test]
fn defaults_round_trip() {
    let cfg = RunConfig::default();
    let text = cfg.to_json();
    let again = RunConfig::from_json(&text).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.to_json(), text);
}

proptest! {
    #[test]
    fn round_trip_is_idempotent(
        seed in any::<u64>(),
        dt in 1e-6f64..1e-3,
        n_steps in 1usize..10_000,
        gamma in 1.0f64..1e4,
        cmaes in any::<bool>(),
        window in proptest::option::of((0.0f64..0.01, 0.02f64..0.05)),
    ) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.time.dt = dt;
        cfg.time.n_steps = n_steps;
        cfg.nitsche_gamma = gamma;
        cfg.identification.strategy = if cmaes { Strategy::Cmaes } else { Strategy::Sequential };
        cfg.identification.window = window.map(|(a, b)| [a, b]);
        let text = cfg.to_json();
        let parsed = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_json(), text);
        prop_assert_eq!(parsed.hash(), cfg.hash());
    }
}
