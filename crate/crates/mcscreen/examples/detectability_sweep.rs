//! Empirical power analysis of the two-stage screen: how the distributional
//! flag rate and the content-blind rate move across the (mixture weight,
//! engagement strength) grid. The discordance corner - flagged but still
//! content-engaged - is the regime the screen exists to expose.
//!
//! Run: cargo run -p mcscreen --example detectability_sweep

use mcscreen::simulate::{detectability_sweep, SweepConfig};

fn main() {
    let config = SweepConfig {
        n_items: 500,
        replications: 40,
        seed: 42,
        ..Default::default()
    };
    let w_values = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let g_values = [0.2, 0.6];

    let points = detectability_sweep(&w_values, &g_values, &config).unwrap();
    println!(
        "{:>6} {:>6} {:>11} {:>12}",
        "w", "g", "flag rate", "blind rate"
    );
    for point in &points {
        println!(
            "{:>6.2} {:>6.2} {:>11.2} {:>12.2}",
            point.mixture_weight,
            point.engagement_strength,
            point.flag_rate,
            point.content_blind_rate
        );
    }
    println!(
        "\nflag rate is monotone in w; blind rate only saturates when the\n\
         attractor fully displaces content (w -> 1), which is the paper-style\n\
         discordance window at intermediate w."
    );
}
