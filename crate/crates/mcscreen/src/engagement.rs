//! Stage-two screening: item difficulty from the honest condition, the
//! difficulty-accuracy correlation with bootstrap confidence intervals, and
//! the content-engagement verdict.
//!
//! Difficulty is behavioural: 1 - proportion correct under the honest
//! condition, computed within-model (binary under greedy decoding) or pooled
//! across models. The correlation is Spearman with average ranks for ties;
//! on binary-binary data this equals the phi coefficient of the 2x2 table.
//! Undefined correlations (constant correctness, too few items) are
//! first-class results so degenerate cells still appear in reports.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Cell, ConditionKind, ConditionRegistry};
use crate::stats;

#[derive(Debug, Error)]
pub enum EngagementError {
    #[error("cell {model_id}/{condition} is not the honest condition")]
    NonHonestCell { model_id: String, condition: String },
    #[error("no overlapping items between difficulty profile and cell")]
    NoOverlappingItems,
    #[error("no honest cells supplied")]
    NoCells,
}

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("resamples must be >= 1")]
    NoResamples,
    #[error("statistic undefined on {undefined} of {resamples} resamples")]
    MostlyUndefined { undefined: usize, resamples: usize },
    #[error("empty data")]
    EmptyData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultySource {
    WithinModel,
    Pooled,
}

/// Per-item difficulty derived from honest-condition correctness.
#[derive(Debug, Clone, Serialize)]
pub struct DifficultyProfile {
    pub source: DifficultySource,
    pub contributing_models: Vec<String>,
    /// item_id -> difficulty in [0, 1]; within-model profiles are binary.
    pub values: BTreeMap<String, f64>,
    /// Items with no parsed honest response in any contributing model.
    pub excluded_items: Vec<String>,
}

/// Derives difficulty from one or more honest cells. One cell gives the
/// within-model binary profile; several give the pooled mean of per-model
/// correctness complements over the models with a parsed response.
pub fn compute_difficulty(
    honest_cells: &[&Cell],
    registry: &ConditionRegistry,
) -> Result<DifficultyProfile, EngagementError> {
    if honest_cells.is_empty() {
        return Err(EngagementError::NoCells);
    }
    for cell in honest_cells {
        let spec = registry.get(&cell.condition);
        if spec.map(|s| s.kind) != Some(ConditionKind::Honest) {
            return Err(EngagementError::NonHonestCell {
                model_id: cell.model_id.clone(),
                condition: cell.condition.clone(),
            });
        }
    }

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut all_items: BTreeMap<String, ()> = BTreeMap::new();
    for cell in honest_cells {
        for entry in &cell.entries {
            all_items.entry(entry.item_id.clone()).or_default();
            if let Some(correct) = entry.correct() {
                let slot = sums.entry(entry.item_id.clone()).or_insert((0.0, 0));
                slot.0 += if correct { 0.0 } else { 1.0 };
                slot.1 += 1;
            }
        }
    }

    let values: BTreeMap<String, f64> = sums
        .iter()
        .map(|(id, (miss, n))| (id.clone(), miss / *n as f64))
        .collect();
    let excluded_items: Vec<String> = all_items
        .keys()
        .filter(|id| !values.contains_key(*id))
        .cloned()
        .collect();
    if values.is_empty() {
        return Err(EngagementError::NoOverlappingItems);
    }

    Ok(DifficultyProfile {
        source: if honest_cells.len() == 1 {
            DifficultySource::WithinModel
        } else {
            DifficultySource::Pooled
        },
        contributing_models: honest_cells.iter().map(|c| c.model_id.clone()).collect(),
        values,
        excluded_items,
    })
}

/// Why a correlation could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    TooFewItems,
    ConstantDifficulty,
    ConstantCorrectness,
}

/// A correlation that may be undefined; undefined outcomes carry the reason
/// and still flow through reports rather than aborting a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CorrelationOutcome {
    Defined {
        rho: f64,
        n_items: usize,
        /// Two-sided p via the t-approximation (the reporting convention).
        p_value: f64,
    },
    Undefined {
        reason: UndefinedReason,
        n_items: usize,
    },
}

impl CorrelationOutcome {
    pub fn rho(&self) -> Option<f64> {
        match self {
            CorrelationOutcome::Defined { rho, .. } => Some(*rho),
            CorrelationOutcome::Undefined { .. } => None,
        }
    }
}

/// The aligned (difficulty, correctness) pairs for a cell, taken over items
/// present in the profile with a parsed response in the cell. Order follows
/// the cell's item order so downstream resampling is deterministic.
pub fn difficulty_correctness_pairs(
    difficulty: &DifficultyProfile,
    cell: &Cell,
) -> Vec<(f64, f64)> {
    cell.parsed_entries()
        .filter_map(|entry| {
            difficulty
                .values
                .get(&entry.item_id)
                .map(|&d| (d, if entry.correct() == Some(true) { 1.0 } else { 0.0 }))
        })
        .collect()
}

/// Spearman correlation over (difficulty, correctness) pairs, with
/// undefined outcomes carried as values. The building block behind
/// [`difficulty_accuracy_rho`], public so oracle suites can drive the same
/// statistic over synthetic pairs.
pub fn spearman_rho_pairs(pairs: &[(f64, f64)]) -> CorrelationOutcome {
    let n_items = pairs.len();
    if n_items < 3 {
        return CorrelationOutcome::Undefined {
            reason: UndefinedReason::TooFewItems,
            n_items,
        };
    }
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let constant = |v: &[f64]| v.iter().all(|&vi| vi == v[0]);
    if constant(&x) {
        return CorrelationOutcome::Undefined {
            reason: UndefinedReason::ConstantDifficulty,
            n_items,
        };
    }
    if constant(&y) {
        return CorrelationOutcome::Undefined {
            reason: UndefinedReason::ConstantCorrectness,
            n_items,
        };
    }
    match stats::spearman(&x, &y) {
        Some(rho) => CorrelationOutcome::Defined {
            rho,
            n_items,
            p_value: stats::correlation_t_p_value(rho, n_items),
        },
        None => CorrelationOutcome::Undefined {
            reason: UndefinedReason::ConstantCorrectness,
            n_items,
        },
    }
}

/// Spearman correlation between item difficulty and item-level correctness
/// under an adversarial cell.
pub fn difficulty_accuracy_rho(
    difficulty: &DifficultyProfile,
    cell: &Cell,
) -> CorrelationOutcome {
    spearman_rho_pairs(&difficulty_correctness_pairs(difficulty, cell))
}

/// Bootstrap engine settings. The same engine serves rho intervals and the
/// adjacent-condition contrasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            level: 0.95,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapInterval {
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
    pub undefined_resamples: usize,
    pub level: f64,
}

/// RNG substream for one resample index: same seed and index give the same
/// stream no matter which thread runs it.
fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Core engine: percentile interval of a statistic over item-index resamples.
///
/// Each resample draws `n_items` indices with replacement from its own seeded
/// substream, so serial and parallel execution produce bit-identical results.
/// Statistics may be undefined on a resample; a failure is returned only when
/// more than half are.
pub fn bootstrap_indices_interval<F>(
    n_items: usize,
    config: &BootstrapConfig,
    statistic: F,
) -> Result<BootstrapInterval, BootstrapError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if config.resamples == 0 {
        return Err(BootstrapError::NoResamples);
    }
    if n_items == 0 {
        return Err(BootstrapError::EmptyData);
    }
    let draws: Vec<Option<f64>> = (0..config.resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = resample_rng(config.seed, r);
            let indices: Vec<usize> = (0..n_items).map(|_| rng.gen_range(0..n_items)).collect();
            statistic(&indices)
        })
        .collect();

    let undefined = draws.iter().filter(|d| d.is_none()).count();
    if undefined * 2 > config.resamples {
        return Err(BootstrapError::MostlyUndefined {
            undefined,
            resamples: config.resamples,
        });
    }
    let mut values: Vec<f64> = draws.into_iter().flatten().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - config.level;
    Ok(BootstrapInterval {
        low: stats::percentile(&values, alpha / 2.0),
        high: stats::percentile(&values, 1.0 - alpha / 2.0),
        resamples: config.resamples,
        undefined_resamples: undefined,
        level: config.level,
    })
}

/// Percentile bootstrap interval for a statistic of item-level data.
pub fn bootstrap_interval<T, F>(
    data: &[T],
    config: &BootstrapConfig,
    statistic: F,
) -> Result<BootstrapInterval, BootstrapError>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Option<f64> + Sync,
{
    bootstrap_indices_interval(data.len(), config, |indices| {
        let sample: Vec<T> = indices.iter().map(|&i| data[i].clone()).collect();
        statistic(&sample)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngagementVerdict {
    ContentBlind,
    ContentEngaged,
    Indeterminate,
}

/// Stage-two verdict: content-blind iff |rho| is strictly below the
/// threshold. Undefined correlations propagate as indeterminate.
pub fn engagement_verdict(rho: &CorrelationOutcome, threshold: f64) -> EngagementVerdict {
    match rho {
        CorrelationOutcome::Defined { rho, .. } => {
            if rho.abs() < threshold {
                EngagementVerdict::ContentBlind
            } else {
                EngagementVerdict::ContentEngaged
            }
        }
        CorrelationOutcome::Undefined { .. } => EngagementVerdict::Indeterminate,
    }
}

/// Full stage-two result for one cell.
#[derive(Debug, Clone, Serialize)]
pub struct EngagementResult {
    pub rho: CorrelationOutcome,
    pub interval: Option<BootstrapInterval>,
    pub n_items: usize,
    pub verdict: EngagementVerdict,
    /// Percentile intervals normally contain the point estimate; when one
    /// does not, the case is reported here rather than hidden.
    pub point_outside_interval: bool,
}

/// Point estimate, bootstrap interval (item-level resampling), and verdict.
pub fn engage(
    difficulty: &DifficultyProfile,
    cell: &Cell,
    bootstrap: &BootstrapConfig,
    rho_threshold: f64,
) -> Result<EngagementResult, BootstrapError> {
    let pairs = difficulty_correctness_pairs(difficulty, cell);
    let rho = spearman_rho_pairs(&pairs);
    let interval = match rho {
        CorrelationOutcome::Defined { .. } => Some(bootstrap_indices_interval(
            pairs.len(),
            bootstrap,
            |indices| {
                let sample: Vec<(f64, f64)> = indices.iter().map(|&i| pairs[i]).collect();
                spearman_rho_pairs(&sample).rho()
            },
        )?),
        CorrelationOutcome::Undefined { .. } => None,
    };
    let point_outside_interval = match (rho.rho(), &interval) {
        (Some(point), Some(iv)) => !(iv.low <= point && point <= iv.high),
        _ => false,
    };
    Ok(EngagementResult {
        rho,
        interval,
        n_items: pairs.len(),
        verdict: engagement_verdict(&rho, rho_threshold),
        point_outside_interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_registry, Cell, CellEntry};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cell(condition: &str, rows: &[(usize, Option<usize>)]) -> Cell {
        let entries: Vec<CellEntry> = rows
            .iter()
            .enumerate()
            .map(|(i, &(correct, chosen))| CellEntry {
                item_id: format!("q{i:05}"),
                correct_position: correct,
                chosen_position: chosen,
            })
            .collect();
        let n_total = entries.len();
        let n_parsed = entries.iter().filter(|e| e.chosen_position.is_some()).count();
        Cell {
            model_id: "m".into(),
            condition: condition.into(),
            entries,
            n_total,
            n_parsed,
        }
    }

    #[test]
    fn within_model_difficulty_is_binary() {
        let registry = default_registry();
        let honest = cell("H", &[(0, Some(0)), (1, Some(2)), (3, None)]);
        let profile = compute_difficulty(&[&honest], &registry).unwrap();
        assert_eq!(profile.source, DifficultySource::WithinModel);
        assert_eq!(profile.values["q00000"], 0.0);
        assert_eq!(profile.values["q00001"], 1.0);
        assert_eq!(profile.excluded_items, vec!["q00002".to_string()]);
    }

    #[test]
    fn pooled_difficulty_averages_models() {
        let registry = default_registry();
        let a = cell("H", &[(0, Some(0))]);
        let mut b = cell("H", &[(0, Some(1))]);
        b.model_id = "m2".into();
        let profile = compute_difficulty(&[&a, &b], &registry).unwrap();
        assert_eq!(profile.source, DifficultySource::Pooled);
        assert_abs_diff_eq!(profile.values["q00000"], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn non_honest_cell_is_rejected() {
        let registry = default_registry();
        let adv = cell("S2", &[(0, Some(0))]);
        assert!(matches!(
            compute_difficulty(&[&adv], &registry),
            Err(EngagementError::NonHonestCell { .. })
        ));
    }

    fn outcome(difficulty: &[f64], correct: &[f64]) -> CorrelationOutcome {
        let pairs: Vec<(f64, f64)> = difficulty.iter().copied().zip(correct.iter().copied()).collect();
        spearman_rho_pairs(&pairs)
    }

    #[test]
    fn rho_hand_cases() {
        match outcome(&[0.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 0.0, 0.0]) {
            CorrelationOutcome::Defined { rho, .. } => assert_abs_diff_eq!(rho, -1.0, epsilon = 1e-15),
            other => panic!("unexpected: {other:?}"),
        }
        match outcome(&[0.0, 1.0, 0.0, 1.0], &[1.0, 1.0, 0.0, 0.0]) {
            CorrelationOutcome::Defined { rho, .. } => assert_abs_diff_eq!(rho, 0.0, epsilon = 1e-15),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn constant_correctness_is_undefined_not_error() {
        match outcome(&[0.0, 1.0, 0.0, 1.0], &[1.0, 1.0, 1.0, 1.0]) {
            CorrelationOutcome::Undefined { reason, .. } => {
                assert_eq!(reason, UndefinedReason::ConstantCorrectness)
            }
            other => panic!("unexpected: {other:?}"),
        }
        match outcome(&[0.0, 1.0], &[1.0, 0.0]) {
            CorrelationOutcome::Undefined { reason, .. } => {
                assert_eq!(reason, UndefinedReason::TooFewItems)
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn verdict_threshold_is_strict() {
        let defined = |rho| CorrelationOutcome::Defined { rho, n_items: 100, p_value: 0.5 };
        assert_eq!(
            engagement_verdict(&defined(-0.007), 0.05),
            EngagementVerdict::ContentBlind
        );
        assert_eq!(
            engagement_verdict(&defined(-0.371), 0.05),
            EngagementVerdict::ContentEngaged
        );
        assert_eq!(
            engagement_verdict(&defined(0.05), 0.05),
            EngagementVerdict::ContentEngaged
        );
        let undefined = CorrelationOutcome::Undefined {
            reason: UndefinedReason::ConstantCorrectness,
            n_items: 10,
        };
        assert_eq!(
            engagement_verdict(&undefined, 0.05),
            EngagementVerdict::Indeterminate
        );
    }

    #[test]
    fn bootstrap_degenerate_interval() {
        let data = vec![3.5f64; 40];
        let cfg = BootstrapConfig { resamples: 100, level: 0.95, seed: 1 };
        let iv = bootstrap_interval(&data, &cfg, |s| {
            Some(s.iter().sum::<f64>() / s.len() as f64)
        })
        .unwrap();
        assert_eq!(iv.low, 3.5);
        assert_eq!(iv.high, 3.5);
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let data: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let cfg = BootstrapConfig { resamples: 500, level: 0.95, seed: 99 };
        let stat = |s: &[f64]| Some(s.iter().sum::<f64>() / s.len() as f64);
        let a = bootstrap_interval(&data, &cfg, stat).unwrap();
        let b = bootstrap_interval(&data, &cfg, stat).unwrap();
        assert_eq!(a.low.to_bits(), b.low.to_bits());
        assert_eq!(a.high.to_bits(), b.high.to_bits());
    }

    #[test]
    fn bootstrap_mostly_undefined_fails_with_count() {
        let data = vec![1.0f64; 10];
        let cfg = BootstrapConfig { resamples: 100, level: 0.95, seed: 5 };
        let err = bootstrap_interval(&data, &cfg, |_| None::<f64>).unwrap_err();
        match err {
            BootstrapError::MostlyUndefined { undefined, resamples } => {
                assert_eq!(undefined, 100);
                assert_eq!(resamples, 100);
            }
            other => panic!("unexpected: {other}"),
        }
    }

    proptest! {
        #[test]
        fn rho_invariant_under_monotone_difficulty_transform(
            flips in proptest::collection::vec(0u8..2, 10..40),
        ) {
            let difficulty: Vec<f64> = flips.iter().enumerate()
                .map(|(i, _)| if i % 3 == 0 { 1.0 } else { 0.0 })
                .collect();
            let correct: Vec<f64> = flips.iter().map(|&f| f as f64).collect();
            let base = outcome(&difficulty, &correct);
            // strictly increasing transform: d -> 3d + 1
            let transformed: Vec<f64> = difficulty.iter().map(|&d| 3.0 * d + 1.0).collect();
            let trans = outcome(&transformed, &correct);
            match (base, trans) {
                (CorrelationOutcome::Defined { rho: a, .. }, CorrelationOutcome::Defined { rho: b, .. }) => {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                (CorrelationOutcome::Undefined { .. }, CorrelationOutcome::Undefined { .. }) => {}
                _ => prop_assert!(false, "definedness changed under monotone transform"),
            }
        }

        #[test]
        fn rho_negates_when_correctness_flips(
            bits in proptest::collection::vec(0u8..2, 10..40),
        ) {
            let difficulty: Vec<f64> = bits.iter().enumerate()
                .map(|(i, _)| if i % 2 == 0 { 1.0 } else { 0.0 })
                .collect();
            let correct: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
            let flipped: Vec<f64> = correct.iter().map(|&c| 1.0 - c).collect();
            if let (
                CorrelationOutcome::Defined { rho: a, .. },
                CorrelationOutcome::Defined { rho: b, .. },
            ) = (outcome(&difficulty, &correct), outcome(&difficulty, &flipped)) {
                prop_assert!((a + b).abs() < 1e-12);
            }
        }

        #[test]
        fn binary_rho_equals_phi_coefficient(
            bits in proptest::collection::vec(0u8..4, 12..60),
        ) {
            // difficulty from bit 0, correctness from bit 1
            let difficulty: Vec<f64> = bits.iter().map(|b| (b & 1) as f64).collect();
            let correct: Vec<f64> = bits.iter().map(|b| ((b >> 1) & 1) as f64).collect();
            if let CorrelationOutcome::Defined { rho, .. } = outcome(&difficulty, &correct) {
                // phi from the 2x2 contingency table
                let n = bits.len() as f64;
                let n11 = difficulty.iter().zip(&correct).filter(|(&d, &c)| d == 1.0 && c == 1.0).count() as f64;
                let n1_ = difficulty.iter().filter(|&&d| d == 1.0).count() as f64;
                let n_1 = correct.iter().filter(|&&c| c == 1.0).count() as f64;
                let phi = (n * n11 - n1_ * n_1)
                    / (n1_ * (n - n1_) * n_1 * (n - n_1)).sqrt();
                prop_assert!((rho - phi).abs() < 1e-10, "rho {} vs phi {}", rho, phi);
            }
        }
    }
}
