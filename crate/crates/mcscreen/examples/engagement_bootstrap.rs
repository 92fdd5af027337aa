//! Stage-two screening: behavioural item difficulty from the honest cell,
//! the difficulty-accuracy Spearman correlation with a seeded bootstrap
//! confidence interval, and the content-engagement verdict.
//!
//! Run: cargo run -p mcscreen --example engagement_bootstrap

use mcscreen::corpus::default_registry;
use mcscreen::engagement::{compute_difficulty, engage, BootstrapConfig};
use mcscreen::simulate::{simulate_cell, synthetic_item_bank, RegimeSpec};

fn main() {
    let registry = default_registry();
    let items = synthetic_item_bank(2000, 42);

    let honest = simulate_cell(&RegimeSpec::honest(0.8, 0.5, 1), &items, "demo", "H").unwrap();
    let difficulty = compute_difficulty(&[&honest], &registry).unwrap();
    println!(
        "difficulty profile: {} items ({:?}), {} excluded",
        difficulty.values.len(),
        difficulty.source,
        difficulty.excluded_items.len()
    );

    let bootstrap = BootstrapConfig {
        resamples: 10_000,
        level: 0.95,
        seed: 42,
    };

    // a shortcut responder that keeps partial content engagement, and a
    // fully content-blind one
    let cells = [
        ("mixture w=0.6 g=0.6", RegimeSpec::attractor_mixture(8, 0.6, 0.6, 0.5, 2)),
        ("fixed position I", RegimeSpec::fixed_position(8, 3)),
    ];
    for (name, spec) in cells {
        let cell = simulate_cell(&spec, &items, "demo", "S2").unwrap();
        let result = engage(&difficulty, &cell, &bootstrap, 0.05).unwrap();
        match (result.rho.rho(), result.interval) {
            (Some(rho), Some(interval)) => println!(
                "{name}: rho {rho:+.3}, 95% CI [{:+.3}, {:+.3}] over {} items -> {:?}",
                interval.low, interval.high, result.n_items, result.verdict
            ),
            _ => println!("{name}: rho undefined -> {:?}", result.verdict),
        }
    }
}
