//! Trend tests across the instruction ladder, adjacent-condition bootstrap
//! contrasts, and accuracy-by-correct-position slopes.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Cell, CellEntry};
use crate::distribution::PositionDistribution;
use crate::engagement::{bootstrap_indices_interval, BootstrapConfig, BootstrapError};
use crate::stats;
use crate::OPTION_COUNT;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("trend test needs at least 3 conditions, got {0}")]
    TooFewConditions(usize),
    #[error("adjacent contrasts need at least 2 cells")]
    TooFewCells,
    #[error("cells {0} and {1} are not item-aligned")]
    MisalignedCells(String, String),
    #[error("statistic undefined on the full cell {0}")]
    UndefinedStatistic(String),
    #[error("accuracy-by-position needs >= 2 distinct correct positions with parsed responses")]
    DegenerateBank,
    #[error("exact permutation p-value only supported up to 8 conditions, got {0}")]
    PermutationTooLarge(usize),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendResult {
    pub statistic_name: String,
    pub rho: f64,
    /// Two-sided p via t = rho * sqrt((n-2)/(1-rho^2)) on n-2 df.
    pub p_value: f64,
    pub n_conditions: usize,
}

/// Spearman trend test of one value per ladder condition against ladder rank.
///
/// Values must be aligned to ladder order (rank 1 first) with no gaps.
pub fn spearman_trend(values: &[f64], statistic_name: &str) -> Result<TrendResult, InferenceError> {
    let n = values.len();
    if n < 3 {
        return Err(InferenceError::TooFewConditions(n));
    }
    let ranks: Vec<f64> = (1..=n).map(|r| r as f64).collect();
    let rho = stats::spearman(&ranks, values).expect("ladder ranks are never constant");
    Ok(TrendResult {
        statistic_name: statistic_name.to_string(),
        rho,
        p_value: stats::correlation_t_p_value(rho, n),
        n_conditions: n,
    })
}

/// Exact two-sided permutation p-value for the trend: the share of rank
/// permutations with |rho| at least as large as observed. A cross-check for
/// the t-approximation, feasible for small ladders only.
pub fn spearman_trend_exact_p(values: &[f64]) -> Result<f64, InferenceError> {
    let n = values.len();
    if n < 3 {
        return Err(InferenceError::TooFewConditions(n));
    }
    if n > 8 {
        return Err(InferenceError::PermutationTooLarge(n));
    }
    let ranks: Vec<f64> = (1..=n).map(|r| r as f64).collect();
    let observed = stats::spearman(&ranks, values)
        .expect("ladder ranks are never constant")
        .abs();

    let mut perm: Vec<f64> = values.to_vec();
    let mut count = 0usize;
    let mut total = 0usize;
    permute(&mut perm, 0, &mut |candidate| {
        total += 1;
        if let Some(rho) = stats::spearman(&ranks, candidate) {
            if rho.abs() >= observed - 1e-12 {
                count += 1;
            }
        }
    });
    Ok(count as f64 / total as f64)
}

fn permute<F: FnMut(&[f64])>(values: &mut [f64], k: usize, visit: &mut F) {
    if k == values.len() {
        visit(values);
        return;
    }
    for i in k..values.len() {
        values.swap(k, i);
        permute(values, k + 1, visit);
        values.swap(k, i);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastResult {
    pub earlier: String,
    pub later: String,
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub excludes_zero: bool,
}

/// Whether a contrast pair resamples both cells with the same item indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// One index stream per pair, applied to both cells (the within-item
    /// repeated-measures design).
    Paired,
    /// Separate index streams per cell, for sensitivity analysis.
    Independent,
}

fn check_alignment(a: &Cell, b: &Cell) -> Result<(), InferenceError> {
    let aligned = a.entries.len() == b.entries.len()
        && a.entries
            .iter()
            .zip(&b.entries)
            .all(|(x, y)| x.item_id == y.item_id);
    if aligned {
        Ok(())
    } else {
        Err(InferenceError::MisalignedCells(
            format!("{}/{}", a.model_id, a.condition),
            format!("{}/{}", b.model_id, b.condition),
        ))
    }
}

fn gather_stat<F>(entries: &[CellEntry], indices: &[usize], statistic: &F) -> Option<f64>
where
    F: Fn(&[CellEntry]) -> Option<f64>,
{
    let sample: Vec<CellEntry> = indices.iter().map(|&i| entries[i].clone()).collect();
    statistic(&sample)
}

/// Bootstrap contrasts stat(later) - stat(earlier) for each adjacent pair of
/// ladder-ordered cells, with percentile intervals from item resampling.
pub fn adjacent_contrasts<F>(
    cells: &[&Cell],
    statistic: F,
    config: &BootstrapConfig,
    pairing: PairingMode,
) -> Result<Vec<ContrastResult>, InferenceError>
where
    F: Fn(&[CellEntry]) -> Option<f64> + Sync,
{
    if cells.len() < 2 {
        return Err(InferenceError::TooFewCells);
    }
    let mut results = Vec::with_capacity(cells.len() - 1);
    for (pair_idx, pair) in cells.windows(2).enumerate() {
        let (earlier, later) = (pair[0], pair[1]);
        check_alignment(earlier, later)?;
        let n_items = earlier.entries.len();
        let full = |cell: &Cell| {
            statistic(&cell.entries).ok_or_else(|| {
                InferenceError::UndefinedStatistic(format!("{}/{}", cell.model_id, cell.condition))
            })
        };
        let delta = full(later)? - full(earlier)?;
        // one substream family per pair so pairs are independent
        let pair_config = BootstrapConfig {
            seed: config.seed.wrapping_add(pair_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..*config
        };
        let interval = match pairing {
            PairingMode::Paired => {
                bootstrap_indices_interval(n_items, &pair_config, |indices| {
                    let e = gather_stat(&earlier.entries, indices, &statistic)?;
                    let l = gather_stat(&later.entries, indices, &statistic)?;
                    Some(l - e)
                })?
            }
            PairingMode::Independent => {
                // second stream offset past the first to keep draws disjoint
                let later_config = BootstrapConfig {
                    seed: pair_config.seed ^ 0x5851_F42D_4C95_7F2D,
                    ..pair_config
                };
                let earlier_iv = bootstrap_stats(earlier, &pair_config, &statistic)?;
                let later_iv = bootstrap_stats(later, &later_config, &statistic)?;
                let mut deltas: Vec<f64> = later_iv
                    .iter()
                    .zip(&earlier_iv)
                    .filter_map(|(l, e)| match (l, e) {
                        (Some(l), Some(e)) => Some(l - e),
                        _ => None,
                    })
                    .collect();
                if deltas.len() * 2 < config.resamples {
                    return Err(InferenceError::Bootstrap(BootstrapError::MostlyUndefined {
                        undefined: config.resamples - deltas.len(),
                        resamples: config.resamples,
                    }));
                }
                deltas.sort_by(|a, b| a.total_cmp(b));
                let alpha = 1.0 - config.level;
                crate::engagement::BootstrapInterval {
                    low: crate::stats::percentile(&deltas, alpha / 2.0),
                    high: crate::stats::percentile(&deltas, 1.0 - alpha / 2.0),
                    resamples: config.resamples,
                    undefined_resamples: config.resamples - deltas.len(),
                    level: config.level,
                }
            }
        };
        results.push(ContrastResult {
            earlier: earlier.condition.clone(),
            later: later.condition.clone(),
            delta,
            ci_low: interval.low,
            ci_high: interval.high,
            excludes_zero: !(interval.low <= 0.0 && 0.0 <= interval.high),
        });
    }
    Ok(results)
}

fn bootstrap_stats<F>(
    cell: &Cell,
    config: &BootstrapConfig,
    statistic: &F,
) -> Result<Vec<Option<f64>>, InferenceError>
where
    F: Fn(&[CellEntry]) -> Option<f64> + Sync,
{
    use rand::Rng;
    use rand::SeedableRng;
    use rayon::prelude::*;
    let n_items = cell.entries.len();
    Ok((0..config.resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64 + 1);
            let indices: Vec<usize> = (0..n_items).map(|_| rng.gen_range(0..n_items)).collect();
            gather_stat(&cell.entries, &indices, statistic)
        })
        .collect())
}

/// Normalised entropy of a gathered sample's chosen positions; the standard
/// statistic for ladder contrasts.
pub fn entropy_statistic(entries: &[CellEntry]) -> Option<f64> {
    let mut counts = [0u64; OPTION_COUNT];
    for e in entries {
        if let Some(p) = e.chosen_position {
            counts[p] += 1;
        }
    }
    PositionDistribution::from_counts(counts).map(|d| crate::distribution::normalized_entropy(&d))
}

/// Accuracy of a gathered sample over parsed responses.
pub fn accuracy_statistic(entries: &[CellEntry]) -> Option<f64> {
    let mut correct = 0usize;
    let mut parsed = 0usize;
    for e in entries {
        if let Some(c) = e.correct() {
            parsed += 1;
            if c {
                correct += 1;
            }
        }
    }
    if parsed == 0 {
        None
    } else {
        Some(correct as f64 / parsed as f64)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PositionAccuracyProfile {
    /// Accuracy per correct-answer position; None where no items landed.
    pub accuracy: Vec<Option<f64>>,
    /// Parsed responses per correct-answer position.
    pub counts: Vec<u64>,
    pub ols_slope: f64,
    pub ols_intercept: f64,
}

/// Accuracy stratified by which position holds the correct answer, with the
/// unweighted OLS slope of accuracy on position index.
pub fn accuracy_by_position(cell: &Cell) -> Result<PositionAccuracyProfile, InferenceError> {
    let mut correct = [0u64; OPTION_COUNT];
    let mut totals = [0u64; OPTION_COUNT];
    for entry in cell.parsed_entries() {
        totals[entry.correct_position] += 1;
        if entry.correct() == Some(true) {
            correct[entry.correct_position] += 1;
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let accuracy: Vec<Option<f64>> = (0..OPTION_COUNT)
        .map(|p| {
            if totals[p] == 0 {
                None
            } else {
                let acc = correct[p] as f64 / totals[p] as f64;
                xs.push(p as f64);
                ys.push(acc);
                Some(acc)
            }
        })
        .collect();
    let (slope, intercept) = stats::ols(&xs, &ys).ok_or(InferenceError::DegenerateBank)?;
    Ok(PositionAccuracyProfile {
        accuracy,
        counts: totals.to_vec(),
        ols_slope: slope,
        ols_intercept: intercept,
    })
}
