//! Two-stage concordance: cross-tabulates the distributional and engagement
//! verdicts over a simulated ladder, sweeps the threshold bands, audits null
//! baselines for false positives, and matches the adversarial attractor
//! against the content-absent null's mode.
//!
//! Run: cargo run -p mcscreen --example concordance_audit

use mcscreen::concordance::{
    attractor_match, concordance_table, null_screen_audit, threshold_sensitivity,
    ConditionScreenStats, ThresholdGrid,
};
use mcscreen::corpus::{default_registry, NullContent};
use mcscreen::distribution::{
    concentration, normalized_entropy, position_histogram, ScreenThresholds,
};
use mcscreen::engagement::{compute_difficulty, difficulty_accuracy_rho};
use mcscreen::simulate::{simulate_cell, synthetic_item_bank, RegimeSpec};

fn main() {
    let registry = default_registry();
    let thresholds = ScreenThresholds::default();
    let items = synthetic_item_bank(2000, 42);

    let honest = simulate_cell(&RegimeSpec::honest(0.8, 0.5, 1), &items, "demo", "H").unwrap();
    let difficulty = compute_difficulty(&[&honest], &registry).unwrap();

    // a ladder that mixes engaged, shortcut, and collapsed regimes
    let ladder = [
        ("S1", RegimeSpec::attractor_mixture(8, 0.1, 0.8, 0.5, 11)),
        ("S2", RegimeSpec::attractor_mixture(8, 0.5, 0.6, 0.5, 12)),
        ("S3", RegimeSpec::attractor_mixture(8, 0.6, 0.4, 0.5, 13)),
        ("S4", RegimeSpec::attractor_mixture(8, 0.3, 0.7, 0.5, 14)),
        ("S5", RegimeSpec::fixed_position(8, 15)),
        ("S6", RegimeSpec::attractor_mixture(8, 0.4, 0.6, 0.5, 16)),
    ];

    let mut stats = Vec::new();
    let mut s5_cell = None;
    for (label, spec) in &ladder {
        let cell = simulate_cell(spec, &items, "demo", label).unwrap();
        let hist = position_histogram(&cell).unwrap();
        stats.push(ConditionScreenStats {
            condition: label.to_string(),
            normalized_entropy: normalized_entropy(&hist),
            modal_concentration: concentration(&hist).modal_concentration,
            rho: difficulty_accuracy_rho(&difficulty, &cell),
        });
        if *label == "S5" {
            s5_cell = Some(cell);
        }
    }

    let pairs: Vec<_> = stats.iter().map(|s| s.verdicts(&thresholds, 0.05)).collect();
    for pair in &pairs {
        println!(
            "{}: {:?} / {:?}{}",
            pair.condition,
            pair.distributional,
            pair.engagement,
            match pair.concordant() {
                Some(true) => "  (concordant)",
                Some(false) => "  (discordant)",
                None => "  (indeterminate)",
            }
        );
    }
    let table = concordance_table(&pairs).unwrap();
    println!(
        "\nagreement: {}/{} = {:.0}%",
        table.concordant,
        table.total,
        table.agreement * 100.0
    );

    let sweep = threshold_sensitivity(&stats, &ThresholdGrid::default()).unwrap();
    println!(
        "sensitivity over {} grid points: agreement ranges {:.0}%-{:.0}%",
        sweep.points.len(),
        sweep.min_agreement * 100.0,
        sweep.max_agreement * 100.0
    );

    // null audit: two content-absent positive controls, two content-present
    let nulls = [
        ("N1", NullContent::ContentAbsent, RegimeSpec::fixed_position(4, 21)),
        ("N2", NullContent::ContentPresent, RegimeSpec::uniform(22)),
        ("N3", NullContent::ContentAbsent, RegimeSpec::fixed_position(8, 23)),
        ("N4", NullContent::ContentPresent, RegimeSpec::uniform(24)),
    ];
    let sub = &items[..200];
    let mut audit_inputs = Vec::new();
    let mut n3_cell = None;
    for (label, content, spec) in nulls {
        let cell = simulate_cell(&spec, sub, "demo", label).unwrap();
        let hist = position_histogram(&cell).unwrap();
        audit_inputs.push((
            label.to_string(),
            content,
            normalized_entropy(&hist),
            concentration(&hist).modal_concentration,
        ));
        if label == "N3" {
            n3_cell = Some(cell);
        }
    }
    let audit = null_screen_audit(&audit_inputs, &thresholds);
    println!(
        "\nnull audit: {} false positives over {} content-present nulls",
        audit.false_positives, audit.content_present_total
    );

    let s5_hist = position_histogram(&s5_cell.unwrap()).unwrap();
    let n3_hist = position_histogram(&n3_cell.unwrap()).unwrap();
    let matched = attractor_match(&s5_hist, &n3_hist);
    println!(
        "attractor match S5 vs N3: same mode = {}, overlap = {:.3}",
        matched.same_mode, matched.overlap
    );
}
