//! Stage-one screening of a single cell: position histogram, normalised
//! entropy, concentration, divergence from the honest baseline, and the
//! distributional verdict.
//!
//! Run: cargo run -p mcscreen --example screen_cell

use mcscreen::distribution::{
    concentration, distributional_verdict, divergence_from_baseline, normalized_entropy,
    position_histogram, LogBase, ScreenThresholds,
};
use mcscreen::position_letter;
use mcscreen::simulate::{simulate_cell, synthetic_item_bank, RegimeSpec};

fn main() {
    let items = synthetic_item_bank(2000, 42);

    // an honest responder and a shortcut responder that answers position I
    // 60% of the time
    let honest_spec = RegimeSpec::honest(0.8, 0.5, 7);
    let shortcut_spec = RegimeSpec::attractor_mixture(8, 0.6, 0.6, 0.5, 8);
    let honest = simulate_cell(&honest_spec, &items, "demo", "H").unwrap();
    let shortcut = simulate_cell(&shortcut_spec, &items, "demo", "S2").unwrap();

    let honest_dist = position_histogram(&honest).unwrap();
    let shortcut_dist = position_histogram(&shortcut).unwrap();

    println!("position histogram (shortcut cell):");
    for (position, proportion) in shortcut_dist.proportions().iter().enumerate() {
        let bar = "#".repeat((proportion * 120.0).round() as usize);
        println!("  {} {:>6.3} {}", position_letter(position), proportion, bar);
    }

    let entropy = normalized_entropy(&shortcut_dist);
    let conc = concentration(&shortcut_dist);
    let divergence = divergence_from_baseline(&shortcut_dist, &honest_dist, LogBase::Nats);
    println!("\nnormalized entropy: {entropy:.3}");
    println!(
        "modal position: {} ({:.1}% of responses), top-3 {:.1}%",
        position_letter(conc.modal_position),
        conc.modal_concentration * 100.0,
        conc.top3_concentration * 100.0
    );
    println!(
        "divergence from honest: JS {:.3} nats, TV {:.3}",
        divergence.js, divergence.tv
    );

    let thresholds = ScreenThresholds::default();
    let verdict = distributional_verdict(entropy, conc.modal_concentration, &thresholds);
    println!(
        "\nscreen (entropy < {}, modal > {}): {verdict:?}",
        thresholds.entropy, thresholds.modal
    );
}
