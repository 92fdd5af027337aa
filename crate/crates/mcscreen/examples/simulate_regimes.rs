//! Response-regime simulator: the four regime kinds, their exact expected
//! statistics, and the match between simulated and expected histograms.
//!
//! Run: cargo run -p mcscreen --example simulate_regimes

use mcscreen::distribution::{normalized_entropy, position_histogram};
use mcscreen::simulate::{expected_statistics, simulate_cell, synthetic_item_bank, RegimeSpec};

fn main() {
    let items = synthetic_item_bank(5000, 42);

    let regimes = [
        ("honest g=0.8", RegimeSpec::honest(0.8, 0.5, 1)),
        ("uniform", RegimeSpec::uniform(2)),
        ("mixture w=0.5 g=0.6", RegimeSpec::attractor_mixture(4, 0.5, 0.6, 0.5, 3)),
        ("fixed at I", RegimeSpec::fixed_position(8, 4)),
    ];

    println!(
        "{:<22} {:>9} {:>9} {:>10} {:>12}  association",
        "regime", "entropy", "acc(exp)", "acc(sim)", "phi(exact)"
    );
    for (name, spec) in regimes {
        let expected = expected_statistics(&spec, &items).unwrap();
        let cell = simulate_cell(&spec, &items, "demo", "X").unwrap();
        let hist = position_histogram(&cell).unwrap();
        let simulated_accuracy = cell
            .entries
            .iter()
            .filter(|e| e.correct() == Some(true))
            .count() as f64
            / cell.n_parsed as f64;
        println!(
            "{:<22} {:>9.3} {:>9.3} {:>10.3} {:>12}  {:?}",
            name,
            normalized_entropy(&hist),
            expected.accuracy,
            simulated_accuracy,
            expected
                .population_phi
                .map(|phi| format!("{phi:+.3}"))
                .unwrap_or_else(|| "-".into()),
            expected.association_class,
        );
    }

    // the expected histogram is exact; the simulated one converges to it
    let spec = RegimeSpec::attractor_mixture(4, 0.5, 0.6, 0.5, 9);
    let expected = expected_statistics(&spec, &items).unwrap();
    let cell = simulate_cell(&spec, &items, "demo", "X").unwrap();
    let observed = position_histogram(&cell).unwrap();
    println!("\nmixture w=0.5: expected vs simulated proportions");
    for (position, (e, o)) in expected
        .proportions
        .iter()
        .zip(observed.proportions().iter())
        .enumerate()
    {
        println!(
            "  {} {:>7.4} {:>7.4}",
            mcscreen::position_letter(position),
            e,
            o
        );
    }
}
