//! Ladder inference: Spearman trend test across an ordered instruction
//! ladder and paired bootstrap contrasts between adjacent conditions.
//!
//! Run: cargo run -p mcscreen --example trend_and_contrasts

use mcscreen::corpus::Cell;
use mcscreen::distribution::{normalized_entropy, position_histogram};
use mcscreen::engagement::BootstrapConfig;
use mcscreen::inference::{
    adjacent_contrasts, entropy_statistic, spearman_trend, spearman_trend_exact_p, PairingMode,
};
use mcscreen::simulate::{simulate_cell, synthetic_item_bank, RegimeSpec};

fn main() {
    let items = synthetic_item_bank(2000, 42);

    // a six-step ladder whose middle step collapses hard, like a responder
    // that drops to a positional default at one instruction level
    let weights = [0.1, 0.4, 0.5, 0.3, 0.95, 0.35];
    let cells: Vec<Cell> = weights
        .iter()
        .enumerate()
        .map(|(rank, &w)| {
            let spec = RegimeSpec::attractor_mixture(8, w, 0.6, 0.5, rank as u64 + 10);
            simulate_cell(&spec, &items, "demo", &format!("S{}", rank + 1)).unwrap()
        })
        .collect();

    let entropies: Vec<f64> = cells
        .iter()
        .map(|c| normalized_entropy(&position_histogram(c).unwrap()))
        .collect();
    println!("ladder entropies: {entropies:.3?}");

    let trend = spearman_trend(&entropies, "normalized_entropy").unwrap();
    println!(
        "trend: rho {:+.3}, p {:.3} (t-approximation, n = {})",
        trend.rho, trend.p_value, trend.n_conditions
    );
    let exact = spearman_trend_exact_p(&entropies).unwrap();
    println!("exact permutation p (720 permutations): {exact:.3}");

    let refs: Vec<&Cell> = cells.iter().collect();
    let config = BootstrapConfig {
        resamples: 2000,
        level: 0.95,
        seed: 42,
    };
    let contrasts = adjacent_contrasts(&refs, entropy_statistic, &config, PairingMode::Paired)
        .unwrap();
    println!("\nadjacent entropy contrasts (paired item resampling):");
    for c in &contrasts {
        println!(
            "  {} -> {}: delta {:+.3}, 95% CI [{:+.3}, {:+.3}]{}",
            c.earlier,
            c.later,
            c.delta,
            c.ci_low,
            c.ci_high,
            if c.excludes_zero { "  *" } else { "" }
        );
    }
}
