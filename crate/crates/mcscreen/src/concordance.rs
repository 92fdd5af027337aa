//! Cross-tabulation of the two screening verdicts, threshold sensitivity
//! sweeps, null-baseline audits, and attractor-position matching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NullContent;
use crate::distribution::{
    concentration, distributional_verdict, DistributionalVerdict, PositionDistribution,
    ScreenThresholds,
};
use crate::engagement::{engagement_verdict, CorrelationOutcome, EngagementVerdict};

#[derive(Debug, Error)]
pub enum ConcordanceError {
    #[error("empty verdict list")]
    Empty,
    #[error("threshold grid invalid: {0}")]
    InvalidGrid(String),
}

/// The two screening verdicts for one condition's cell.
#[derive(Debug, Clone, Serialize)]
pub struct VerdictPair {
    pub condition: String,
    pub distributional: DistributionalVerdict,
    pub engagement: EngagementVerdict,
}

impl VerdictPair {
    /// Concordant iff flagged with content-blind or clear with
    /// content-engaged. Indeterminate pairs are neither.
    pub fn concordant(&self) -> Option<bool> {
        match self.engagement {
            EngagementVerdict::Indeterminate => None,
            EngagementVerdict::ContentBlind => {
                Some(self.distributional == DistributionalVerdict::Flagged)
            }
            EngagementVerdict::ContentEngaged => {
                Some(self.distributional == DistributionalVerdict::Clear)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcordanceTable {
    pub concordant: usize,
    pub total: usize,
    pub agreement: f64,
    /// Indeterminate pairs, excluded from the agreement denominator.
    pub indeterminate: usize,
    pub flagged_blind: usize,
    pub flagged_engaged: usize,
    pub clear_blind: usize,
    pub clear_engaged: usize,
}

/// Agreement rate and cross-tab counts over verdict pairs.
pub fn concordance_table(pairs: &[VerdictPair]) -> Result<ConcordanceTable, ConcordanceError> {
    if pairs.is_empty() {
        return Err(ConcordanceError::Empty);
    }
    let mut table = ConcordanceTable {
        concordant: 0,
        total: 0,
        agreement: 0.0,
        indeterminate: 0,
        flagged_blind: 0,
        flagged_engaged: 0,
        clear_blind: 0,
        clear_engaged: 0,
    };
    for pair in pairs {
        match (pair.distributional, pair.engagement) {
            (_, EngagementVerdict::Indeterminate) => {
                table.indeterminate += 1;
                continue;
            }
            (DistributionalVerdict::Flagged, EngagementVerdict::ContentBlind) => {
                table.flagged_blind += 1
            }
            (DistributionalVerdict::Flagged, EngagementVerdict::ContentEngaged) => {
                table.flagged_engaged += 1
            }
            (DistributionalVerdict::Clear, EngagementVerdict::ContentBlind) => {
                table.clear_blind += 1
            }
            (DistributionalVerdict::Clear, EngagementVerdict::ContentEngaged) => {
                table.clear_engaged += 1
            }
        }
        table.total += 1;
        if pair.concordant() == Some(true) {
            table.concordant += 1;
        }
    }
    table.agreement = if table.total == 0 {
        f64::NAN
    } else {
        table.concordant as f64 / table.total as f64
    };
    Ok(table)
}

/// The screening inputs one condition contributes to a sensitivity sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionScreenStats {
    pub condition: String,
    pub normalized_entropy: f64,
    pub modal_concentration: f64,
    pub rho: CorrelationOutcome,
}

impl ConditionScreenStats {
    pub fn verdicts(&self, thresholds: &ScreenThresholds, rho_threshold: f64) -> VerdictPair {
        VerdictPair {
            condition: self.condition.clone(),
            distributional: distributional_verdict(
                self.normalized_entropy,
                self.modal_concentration,
                thresholds,
            ),
            engagement: engagement_verdict(&self.rho, rho_threshold),
        }
    }
}

/// Threshold bands swept by the sensitivity analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub entropy: Vec<f64>,
    pub modal: Vec<f64>,
    pub rho: Vec<f64>,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            entropy: vec![0.85, 0.90, 0.95],
            modal: vec![0.35, 0.40, 0.45, 0.50],
            rho: vec![0.03, 0.05, 0.07],
        }
    }
}

impl ThresholdGrid {
    pub fn validate(&self) -> Result<(), ConcordanceError> {
        let check = |name: &str, values: &[f64]| {
            if values.is_empty() {
                return Err(ConcordanceError::InvalidGrid(format!("{name} band empty")));
            }
            if values.windows(2).any(|w| w[0] > w[1]) {
                return Err(ConcordanceError::InvalidGrid(format!("{name} band unsorted")));
            }
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ConcordanceError::InvalidGrid(format!(
                    "{name} band outside [0,1]"
                )));
            }
            Ok(())
        };
        check("entropy", &self.entropy)?;
        check("modal", &self.modal)?;
        check("rho", &self.rho)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityPoint {
    pub entropy_threshold: f64,
    pub modal_threshold: f64,
    pub rho_threshold: f64,
    pub concordant: usize,
    pub total: usize,
    pub agreement: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityResult {
    pub points: Vec<SensitivityPoint>,
    pub min_agreement: f64,
    pub max_agreement: f64,
}

/// Recomputes both verdicts and the agreement rate at every grid triple.
pub fn threshold_sensitivity(
    stats: &[ConditionScreenStats],
    grid: &ThresholdGrid,
) -> Result<SensitivityResult, ConcordanceError> {
    grid.validate()?;
    if stats.is_empty() {
        return Err(ConcordanceError::Empty);
    }
    let mut points = Vec::new();
    for &entropy in &grid.entropy {
        for &modal in &grid.modal {
            for &rho in &grid.rho {
                let thresholds = ScreenThresholds { entropy, modal };
                let pairs: Vec<VerdictPair> = stats
                    .iter()
                    .map(|s| s.verdicts(&thresholds, rho))
                    .collect();
                let table = concordance_table(&pairs)?;
                points.push(SensitivityPoint {
                    entropy_threshold: entropy,
                    modal_threshold: modal,
                    rho_threshold: rho,
                    concordant: table.concordant,
                    total: table.total,
                    agreement: table.agreement,
                });
            }
        }
    }
    let min_agreement = points
        .iter()
        .map(|p| p.agreement)
        .fold(f64::INFINITY, f64::min);
    let max_agreement = points
        .iter()
        .map(|p| p.agreement)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SensitivityResult {
        points,
        min_agreement,
        max_agreement,
    })
}

/// One null cell under audit.
#[derive(Debug, Clone, Serialize)]
pub struct NullCellVerdict {
    pub condition: String,
    pub content: NullContent,
    pub normalized_entropy: f64,
    pub modal_concentration: f64,
    pub verdict: DistributionalVerdict,
    /// Content-absent nulls are expected to flag (positive controls).
    pub expected_flag: bool,
    pub false_positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NullAudit {
    pub cells: Vec<NullCellVerdict>,
    /// Flags raised on content-present nulls.
    pub false_positives: usize,
    /// Number of content-present null cells audited.
    pub content_present_total: usize,
    pub false_positive_rate: f64,
}

/// Audits null-baseline cells: content-absent nulls should flag; false
/// positives are counted only over content-present nulls.
pub fn null_screen_audit(
    cells: &[(String, NullContent, f64, f64)],
    thresholds: &ScreenThresholds,
) -> NullAudit {
    let mut audited = Vec::new();
    let mut false_positives = 0usize;
    let mut content_present_total = 0usize;
    for (condition, content, entropy, modal) in cells {
        let verdict = distributional_verdict(*entropy, *modal, thresholds);
        let expected_flag = *content == NullContent::ContentAbsent;
        let false_positive =
            *content == NullContent::ContentPresent && verdict == DistributionalVerdict::Flagged;
        if *content == NullContent::ContentPresent {
            content_present_total += 1;
            if false_positive {
                false_positives += 1;
            }
        }
        audited.push(NullCellVerdict {
            condition: condition.clone(),
            content: *content,
            normalized_entropy: *entropy,
            modal_concentration: *modal,
            verdict,
            expected_flag,
            false_positive,
        });
    }
    NullAudit {
        cells: audited,
        false_positives,
        content_present_total,
        false_positive_rate: if content_present_total == 0 {
            0.0
        } else {
            false_positives as f64 / content_present_total as f64
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttractorMatch {
    pub adversarial_mode: usize,
    pub null_mode: usize,
    pub same_mode: bool,
    /// Adversarial mass at the null baseline's modal position.
    pub overlap: f64,
}

/// Compares an adversarial cell's modal position against a content-absent
/// null baseline's, and reports how much adversarial mass sits on the null's
/// mode.
pub fn attractor_match(
    adversarial: &PositionDistribution,
    null_baseline: &PositionDistribution,
) -> AttractorMatch {
    let adv_mode = concentration(adversarial).modal_position;
    let null_mode = concentration(null_baseline).modal_position;
    let overlap = adversarial.proportions()[null_mode];
    AttractorMatch {
        adversarial_mode: adv_mode,
        null_mode,
        same_mode: adv_mode == null_mode,
        overlap,
    }
}
