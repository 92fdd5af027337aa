//! Synthetic response regimes: parametric generators for honest, attractor-
//! mixture, fixed-position, and uniform responders, with exact expected
//! statistics. The simulator is the ground-truth oracle for the screening
//! pipeline: regimes with known parameters say what the verdicts should be.
//!
//! Engagement is modelled with a two-class item bank (easy/hard): a
//! non-attractor emission answers an easy item correctly with probability
//! `engagement_strength` and a hard item at chance (1/10). Within-model
//! difficulty under greedy decoding is binary, so the two-class generator
//! matches the structure of real runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    default_registry, Cell, CellEntry, ConditionRegistry, ItemRef, ResponseRecord,
};
use crate::distribution::{
    concentration, distributional_verdict, normalized_entropy, position_histogram,
    DistributionalVerdict, ScreenThresholds,
};
use crate::engagement::{compute_difficulty, difficulty_accuracy_rho, engagement_verdict,
    EngagementVerdict};
use crate::glmm::{build_design, GlmmDesign, GlmmError};
use crate::OPTION_COUNT;

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    #[error("empty item bank")]
    EmptyBank,
    #[error(transparent)]
    Glmm(#[from] GlmmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    Honest,
    AttractorMixture,
    FixedPosition,
    Uniform,
}

/// Generative parameters for one synthetic responder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    /// Required for attractor_mixture and fixed_position.
    pub attractor_position: Option<usize>,
    /// Probability of emitting the attractor position per trial.
    pub mixture_weight: f64,
    /// Probability a non-attractor emission answers an easy item correctly.
    pub engagement_strength: f64,
    /// Share of the item bank treated as easy (by item index).
    pub easy_fraction: f64,
    pub seed: u64,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(SimulateError::InvalidRegime(format!("{name} {v} outside [0,1]")))
            }
        };
        unit("mixture_weight", self.mixture_weight)?;
        unit("engagement_strength", self.engagement_strength)?;
        unit("easy_fraction", self.easy_fraction)?;
        let needs_attractor = matches!(
            self.kind,
            RegimeKind::AttractorMixture | RegimeKind::FixedPosition
        );
        match (needs_attractor, self.attractor_position) {
            (true, None) => Err(SimulateError::InvalidRegime(
                "attractor_position required for this kind".into(),
            )),
            (false, Some(_)) => Err(SimulateError::InvalidRegime(
                "attractor_position only allowed for attractor kinds".into(),
            )),
            (true, Some(a)) if a >= OPTION_COUNT => Err(SimulateError::InvalidRegime(
                format!("attractor_position {a} out of range"),
            )),
            _ => Ok(()),
        }
    }

    pub fn honest(engagement_strength: f64, easy_fraction: f64, seed: u64) -> Self {
        Self {
            kind: RegimeKind::Honest,
            attractor_position: None,
            mixture_weight: 0.0,
            engagement_strength,
            easy_fraction,
            seed,
        }
    }

    pub fn attractor_mixture(
        attractor: usize,
        mixture_weight: f64,
        engagement_strength: f64,
        easy_fraction: f64,
        seed: u64,
    ) -> Self {
        Self {
            kind: RegimeKind::AttractorMixture,
            attractor_position: Some(attractor),
            mixture_weight,
            engagement_strength,
            easy_fraction,
            seed,
        }
    }

    pub fn fixed_position(attractor: usize, seed: u64) -> Self {
        Self {
            kind: RegimeKind::FixedPosition,
            attractor_position: Some(attractor),
            mixture_weight: 1.0,
            engagement_strength: 0.0,
            easy_fraction: 0.0,
            seed,
        }
    }

    pub fn uniform(seed: u64) -> Self {
        Self {
            kind: RegimeKind::Uniform,
            attractor_position: None,
            mixture_weight: 0.0,
            engagement_strength: 0.0,
            easy_fraction: 0.0,
            seed,
        }
    }
}

const DOMAINS: [&str; 4] = ["physics", "law", "psychology", "economics"];

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of ids.
pub fn mix_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A synthetic item bank: ids item_00000.., domains cycling the four strata.
/// Correct positions are a seeded shuffle of a balanced layout within each
/// index half, so a half-split easy/hard design sees the same key
/// distribution in both classes and purely positional regimes carry no
/// key-placement association by construction.
pub fn synthetic_item_bank(n_items: usize, seed: u64) -> Vec<ItemRef> {
    let half = n_items / 2;
    let mut positions = Vec::with_capacity(n_items);
    for (part, len) in [(0u64, half), (1u64, n_items - half)] {
        let mut block: Vec<usize> = (0..len).map(|i| i % OPTION_COUNT).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(part + 1);
        // Fisher-Yates
        for i in (1..block.len()).rev() {
            let j = rng.gen_range(0..=i);
            block.swap(i, j);
        }
        positions.extend(block);
    }
    (0..n_items)
        .map(|i| ItemRef {
            item_id: format!("item_{i:05}"),
            domain: DOMAINS[i % DOMAINS.len()].to_string(),
            option_count: OPTION_COUNT,
            correct_position: positions[i],
        })
        .collect()
}

/// Easy/hard class by item index: the first `round(easy_fraction * n)` items
/// are easy. Two regimes with the same easy_fraction agree on every item's
/// class, which is what ties the honest and adversarial cells together.
pub fn is_easy(item_index: usize, n_items: usize, easy_fraction: f64) -> bool {
    item_index < (easy_fraction * n_items as f64).round() as usize
}

/// Exact per-item emission distribution over the 10 positions.
fn emission_probabilities(
    spec: &RegimeSpec,
    item_index: usize,
    n_items: usize,
    correct_position: usize,
) -> [f64; OPTION_COUNT] {
    let mut p = [0.0; OPTION_COUNT];
    match spec.kind {
        RegimeKind::Uniform => {
            p = [1.0 / OPTION_COUNT as f64; OPTION_COUNT];
        }
        RegimeKind::FixedPosition => {
            p[spec.attractor_position.expect("validated")] = 1.0;
        }
        RegimeKind::Honest => {
            honest_emission(&mut p, spec, item_index, n_items, correct_position);
        }
        RegimeKind::AttractorMixture => {
            let w = spec.mixture_weight;
            honest_emission(&mut p, spec, item_index, n_items, correct_position);
            for v in p.iter_mut() {
                *v *= 1.0 - w;
            }
            p[spec.attractor_position.expect("validated")] += w;
        }
    }
    p
}

fn honest_emission(
    p: &mut [f64; OPTION_COUNT],
    spec: &RegimeSpec,
    item_index: usize,
    n_items: usize,
    correct_position: usize,
) {
    let correct_prob = if is_easy(item_index, n_items, spec.easy_fraction) {
        spec.engagement_strength
    } else {
        1.0 / OPTION_COUNT as f64 // hard items answered at chance
    };
    let wrong_prob = (1.0 - correct_prob) / (OPTION_COUNT - 1) as f64;
    for (i, v) in p.iter_mut().enumerate() {
        *v = if i == correct_position { correct_prob } else { wrong_prob };
    }
}

fn sample_position(probs: &[f64; OPTION_COUNT], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return i;
        }
    }
    OPTION_COUNT - 1
}

/// Simulates one cell. Each item draws from its own seed substream, so the
/// same spec produces the identical cell regardless of parallelism.
pub fn simulate_cell(
    spec: &RegimeSpec,
    items: &[ItemRef],
    model_id: &str,
    condition: &str,
) -> Result<Cell, SimulateError> {
    spec.validate()?;
    if items.is_empty() {
        return Err(SimulateError::EmptyBank);
    }
    let n_items = items.len();
    let entries: Vec<CellEntry> = items
        .par_iter()
        .enumerate()
        .map(|(index, item)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index as u64 + 1);
            let probs = emission_probabilities(spec, index, n_items, item.correct_position);
            CellEntry {
                item_id: item.item_id.clone(),
                correct_position: item.correct_position,
                chosen_position: Some(sample_position(&probs, &mut rng)),
            }
        })
        .collect();
    let mut entries = entries;
    entries.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let n_total = entries.len();
    Ok(Cell {
        model_id: model_id.to_string(),
        condition: condition.to_string(),
        entries,
        n_total,
        n_parsed: n_total,
    })
}

/// Serializes a simulated cell to corpus response records so the full
/// pipeline can run end-to-end on synthetic data.
pub fn cell_records(cell: &Cell, items: &[ItemRef]) -> Vec<ResponseRecord> {
    let lookup: std::collections::BTreeMap<&str, &ItemRef> =
        items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    cell.entries
        .iter()
        .filter_map(|entry| {
            lookup.get(entry.item_id.as_str()).map(|item| ResponseRecord {
                model_id: cell.model_id.clone(),
                condition: cell.condition.clone(),
                item: (*item).clone(),
                chosen_position: entry.chosen_position,
                raw_answer: None,
            })
        })
        .collect()
}

/// Structural sign of the difficulty-accuracy association a regime induces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationClass {
    /// Emission independent of content (w = 1, uniform, fixed position).
    Zero,
    /// Easy items answered better than hard ones.
    Negative,
    /// Easy items answered worse than chance (pathological parameters).
    Positive,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpectedStatistics {
    pub proportions: [f64; OPTION_COUNT],
    pub accuracy: f64,
    pub association_class: AssociationClass,
    /// Exact population phi between item class (hard = 1) and correctness on
    /// this bank; None when a class is empty or correctness is degenerate.
    pub population_phi: Option<f64>,
}

/// Exact expected statistics by enumerating each item's emission
/// distribution.
pub fn expected_statistics(
    spec: &RegimeSpec,
    items: &[ItemRef],
) -> Result<ExpectedStatistics, SimulateError> {
    spec.validate()?;
    if items.is_empty() {
        return Err(SimulateError::EmptyBank);
    }
    let n = items.len();
    let mut proportions = [0.0; OPTION_COUNT];
    let mut accuracy = 0.0;
    let mut easy_correct = (0.0, 0usize);
    let mut hard_correct = (0.0, 0usize);
    for (index, item) in items.iter().enumerate() {
        let probs = emission_probabilities(spec, index, n, item.correct_position);
        for (slot, p) in proportions.iter_mut().zip(probs.iter()) {
            *slot += p / n as f64;
        }
        let pc = probs[item.correct_position];
        accuracy += pc / n as f64;
        if is_easy(index, n, spec.easy_fraction) {
            easy_correct.0 += pc;
            easy_correct.1 += 1;
        } else {
            hard_correct.0 += pc;
            hard_correct.1 += 1;
        }
    }

    let content_blind = matches!(spec.kind, RegimeKind::Uniform | RegimeKind::FixedPosition)
        || (spec.kind == RegimeKind::AttractorMixture && spec.mixture_weight >= 1.0);
    let chance = 1.0 / OPTION_COUNT as f64;
    let association_class = if content_blind
        || spec.easy_fraction == 0.0
        || spec.easy_fraction == 1.0
        || spec.engagement_strength == chance
    {
        AssociationClass::Zero
    } else if spec.engagement_strength > chance {
        AssociationClass::Negative
    } else {
        AssociationClass::Positive
    };

    // phi of (hard-class, correctness) on this bank, items equally weighted
    let population_phi = if easy_correct.1 == 0 || hard_correct.1 == 0 {
        None
    } else {
        let pe = easy_correct.1 as f64 / n as f64;
        let ph = 1.0 - pe;
        let ce = easy_correct.0 / easy_correct.1 as f64;
        let ch = hard_correct.0 / hard_correct.1 as f64;
        let mean = pe * ce + ph * ch;
        let denom = (pe * ph * mean * (1.0 - mean)).sqrt();
        if denom == 0.0 {
            None
        } else {
            Some(pe * ph * (ch - ce) / denom)
        }
    };

    Ok(ExpectedStatistics {
        proportions,
        accuracy,
        association_class,
        population_phi,
    })
}

/// One grid point of a detectability sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub mixture_weight: f64,
    pub engagement_strength: f64,
    pub replications: usize,
    pub flag_rate: f64,
    pub content_blind_rate: f64,
    pub indeterminate: usize,
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n_items: usize,
    pub replications: usize,
    pub thresholds: ScreenThresholds,
    pub rho_threshold: f64,
    /// Engagement strength of the honest run that defines difficulty.
    pub honest_engagement: f64,
    pub easy_fraction: f64,
    pub attractor_position: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_items: 500,
            replications: 50,
            thresholds: ScreenThresholds::default(),
            rho_threshold: 0.05,
            honest_engagement: 0.8,
            easy_fraction: 0.5,
            attractor_position: 8,
            seed: 42,
        }
    }
}

/// Empirical power analysis of the two-stage screen: for each (w, g) grid
/// point, simulate paired honest/adversarial cells and report the rates of
/// distributional flags and content-blind verdicts.
pub fn detectability_sweep(
    w_values: &[f64],
    g_values: &[f64],
    config: &SweepConfig,
) -> Result<Vec<SweepPoint>, SimulateError> {
    if w_values.is_empty() || g_values.is_empty() {
        return Err(SimulateError::InvalidRegime("empty sweep grid".into()));
    }
    let registry = default_registry();
    let mut points = Vec::new();
    for (wi, &w) in w_values.iter().enumerate() {
        for (gi, &g) in g_values.iter().enumerate() {
            let point_seed = mix_seed(config.seed, &[wi as u64, gi as u64]);
            let outcomes: Vec<(bool, Option<bool>)> = (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    replicate_once(w, g, config, &registry, mix_seed(point_seed, &[rep as u64]))
                })
                .collect();
            let flags = outcomes.iter().filter(|(f, _)| *f).count();
            let blind = outcomes
                .iter()
                .filter(|(_, b)| *b == Some(true))
                .count();
            let indeterminate = outcomes.iter().filter(|(_, b)| b.is_none()).count();
            points.push(SweepPoint {
                mixture_weight: w,
                engagement_strength: g,
                replications: config.replications,
                flag_rate: flags as f64 / config.replications as f64,
                content_blind_rate: blind as f64 / config.replications as f64,
                indeterminate,
            });
        }
    }
    Ok(points)
}

fn replicate_once(
    w: f64,
    g: f64,
    config: &SweepConfig,
    registry: &ConditionRegistry,
    seed: u64,
) -> (bool, Option<bool>) {
    let items = synthetic_item_bank(config.n_items, mix_seed(seed, &[1]));
    let honest_spec = RegimeSpec::honest(
        config.honest_engagement,
        config.easy_fraction,
        mix_seed(seed, &[2]),
    );
    let adversarial_spec = RegimeSpec::attractor_mixture(
        config.attractor_position,
        w,
        g,
        config.easy_fraction,
        mix_seed(seed, &[3]),
    );
    let honest = simulate_cell(&honest_spec, &items, "sim", "H").expect("valid spec");
    let adversarial = simulate_cell(&adversarial_spec, &items, "sim", "S2").expect("valid spec");

    let hist = position_histogram(&adversarial).expect("non-empty");
    let entropy = normalized_entropy(&hist);
    let modal = concentration(&hist).modal_concentration;
    let flagged =
        distributional_verdict(entropy, modal, &config.thresholds) == DistributionalVerdict::Flagged;

    let difficulty = compute_difficulty(&[&honest], registry).expect("honest cell");
    let rho = difficulty_accuracy_rho(&difficulty, &adversarial);
    let blind = match engagement_verdict(&rho, config.rho_threshold) {
        EngagementVerdict::ContentBlind => Some(true),
        EngagementVerdict::ContentEngaged => Some(false),
        EngagementVerdict::Indeterminate => None,
    };
    (flagged, blind)
}

/// Ground-truth parameters for a synthetic random-intercept logistic dataset.
#[derive(Debug, Clone)]
pub struct GlmmTruth {
    pub intercept: f64,
    pub position_slope: f64,
    /// (condition label, main effect, position interaction); the reference
    /// condition is "H" with both zero.
    pub condition_effects: Vec<(String, f64, f64)>,
    pub sigma: f64,
}

impl GlmmTruth {
    /// True coefficients in the column order `build_design` produces.
    pub fn coefficient_vector(&self) -> Vec<f64> {
        let mut labels: Vec<&String> = self.condition_effects.iter().map(|(l, _, _)| l).collect();
        labels.sort();
        let mut beta = vec![self.intercept, self.position_slope];
        for label in &labels {
            let (_, main, _) = self
                .condition_effects
                .iter()
                .find(|(l, _, _)| l == *label)
                .expect("label present");
            beta.push(*main);
        }
        for label in &labels {
            let (_, _, interaction) = self
                .condition_effects
                .iter()
                .find(|(l, _, _)| l == *label)
                .expect("label present");
            beta.push(*interaction);
        }
        beta
    }
}

/// Draws correctness from the random-intercept logistic model and returns
/// one cell per condition (reference "H" plus each listed condition),
/// ready for `build_design`.
pub fn simulate_glmm_cells(
    truth: &GlmmTruth,
    items: &[ItemRef],
    seed: u64,
) -> Result<Vec<Cell>, SimulateError> {
    use crate::glmm::logistic::sigmoid;
    if items.is_empty() {
        return Err(SimulateError::EmptyBank);
    }
    let mut conditions: Vec<(String, f64, f64)> = vec![("H".to_string(), 0.0, 0.0)];
    conditions.extend(self::sorted_effects(truth));

    let per_item: Vec<Vec<CellEntry>> = items
        .par_iter()
        .enumerate()
        .map(|(index, item)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64 + 1);
            let u: f64 = sample_standard_normal(&mut rng);
            let position = item.correct_position as f64;
            conditions
                .iter()
                .map(|(_, main, interaction)| {
                    let eta = truth.intercept
                        + truth.position_slope * position
                        + main
                        + interaction * position
                        + truth.sigma * u;
                    let correct = rng.gen::<f64>() < sigmoid(eta);
                    CellEntry {
                        item_id: item.item_id.clone(),
                        correct_position: item.correct_position,
                        chosen_position: Some(if correct {
                            item.correct_position
                        } else {
                            (item.correct_position + 1) % OPTION_COUNT
                        }),
                    }
                })
                .collect()
        })
        .collect();

    let cells = conditions
        .iter()
        .enumerate()
        .map(|(ci, (label, _, _))| {
            let mut entries: Vec<CellEntry> =
                per_item.iter().map(|row| row[ci].clone()).collect();
            entries.sort_by(|a, b| a.item_id.cmp(&b.item_id));
            let n_total = entries.len();
            Cell {
                model_id: "sim".to_string(),
                condition: label.clone(),
                entries,
                n_total,
                n_parsed: n_total,
            }
        })
        .collect();
    Ok(cells)
}

fn sorted_effects(truth: &GlmmTruth) -> Vec<(String, f64, f64)> {
    let mut effects = truth.condition_effects.clone();
    effects.sort_by(|a, b| a.0.cmp(&b.0));
    effects
}

/// Builds the design for a simulated dataset in one call.
pub fn simulate_glmm_design(
    truth: &GlmmTruth,
    items: &[ItemRef],
    seed: u64,
) -> Result<GlmmDesign, SimulateError> {
    let cells = simulate_glmm_cells(truth, items, seed)?;
    let refs: Vec<&Cell> = cells.iter().collect();
    Ok(build_design(&refs, "H")?)
}

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
