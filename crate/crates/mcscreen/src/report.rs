//! Pipeline orchestration: one config file in, a machine-readable report
//! bundle out. The bundle reproduces the per-cell summary table, trend and
//! contrast statistics, GLMM summaries, concordance and sensitivity outputs,
//! the null audit, attractor matches, and plot-data series, and is fully
//! determined by (records, config).
//!
//! Emission is byte-stable: struct field order is fixed, maps are sorted,
//! CSVs format table values at three decimals, and the JSON files carry full
//! precision.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::concordance::{
    attractor_match, concordance_table, null_screen_audit, threshold_sensitivity, AttractorMatch,
    ConcordanceError, ConcordanceTable, ConditionScreenStats, NullAudit, SensitivityResult,
    ThresholdGrid, VerdictPair,
};
use crate::corpus::{
    condition_labels, default_registry, ingest_records, model_ids, partition_cells,
    read_item_bank, validate_run, write_records_jsonl, Cell, ConditionRegistry, ConditionSpec,
    CorpusError, ItemRef, RecordFormat, ResponseRecord, ValidationReport,
};
use crate::distribution::{
    distributional_stats, distributional_verdict, position_histogram, DistributionError,
    DistributionalStats, DistributionalVerdict, LogBase, PositionDistribution, ScreenThresholds,
};
use crate::engagement::{
    compute_difficulty, engage, BootstrapConfig, BootstrapError, CorrelationOutcome,
    DifficultyProfile, EngagementError, EngagementResult, EngagementVerdict,
};
use crate::glmm::{
    build_design, fit_random_intercept_logit, wald_summary, GlmmError, GlmmFit, GlmmOptions,
    SigmaMode, WaldSummary,
};
use crate::inference::{
    accuracy_by_position, adjacent_contrasts, entropy_statistic, spearman_trend, ContrastResult,
    InferenceError, PairingMode, TrendResult,
};
use crate::simulate::{
    cell_records, simulate_cell, synthetic_item_bank, RegimeKind, RegimeSpec, SimulateError,
};
use crate::position_letter;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run failed validation: {0} (rerun with allow_nonconforming = true to override)")]
    Validation(String),
    #[error("pipeline error: {0}")]
    Pipeline(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Engagement(#[from] EngagementError),
    #[error(transparent)]
    Bootstrap(#[from] BootstrapError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Concordance(#[from] ConcordanceError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ReportError {
    /// Process exit code contract: 0 success, 2 validation failure,
    /// 3 configuration error, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReportError::Config(_) => 3,
            ReportError::Validation(_) => 2,
            _ => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub inputs: InputsConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub thresholds: ThresholdsConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub glmm: GlmmConfig,
    #[serde(default)]
    pub sensitivity: ThresholdGrid,
    #[serde(default)]
    pub bands: BandsConfig,
    #[serde(default)]
    pub attractor: AttractorConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputsConfig {
    pub records: PathBuf,
    #[serde(default = "default_format")]
    pub format: RecordFormat,
    #[serde(default)]
    pub items: Option<PathBuf>,
    #[serde(default)]
    pub conditions: Option<PathBuf>,
}

fn default_format() -> RecordFormat {
    RecordFormat::Jsonl
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Models to analyse; discovered from the records when empty.
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default = "default_parse_fail_rate")]
    pub max_parse_fail_rate: f64,
    #[serde(default)]
    pub allow_nonconforming: bool,
}

fn default_parse_fail_rate() -> f64 {
    0.05
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            models: Vec::new(),
            max_parse_fail_rate: default_parse_fail_rate(),
            allow_nonconforming: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdsConfig {
    #[serde(default = "default_entropy_threshold")]
    pub entropy: f64,
    #[serde(default = "default_modal_threshold")]
    pub modal: f64,
    #[serde(default = "default_rho_threshold")]
    pub rho: f64,
}

fn default_entropy_threshold() -> f64 {
    0.90
}
fn default_modal_threshold() -> f64 {
    0.40
}
fn default_rho_threshold() -> f64 {
    0.05
}

impl Default for ThresholdsConfig {
    fn default() -> Self {
        Self {
            entropy: default_entropy_threshold(),
            modal: default_modal_threshold(),
            rho: default_rho_threshold(),
        }
    }
}

impl ThresholdsConfig {
    pub fn screen(&self) -> ScreenThresholds {
        ScreenThresholds {
            entropy: self.entropy,
            modal: self.modal,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmmConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_rel_tolerance")]
    pub rel_tolerance: f64,
    #[serde(default = "default_grad_tolerance")]
    pub grad_tolerance: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_true() -> bool {
    true
}
fn default_quad_nodes() -> usize {
    10
}
fn default_max_iterations() -> usize {
    200
}
fn default_rel_tolerance() -> f64 {
    1e-8
}
fn default_grad_tolerance() -> f64 {
    1e-5
}
fn default_alpha() -> f64 {
    0.01
}

impl Default for GlmmConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            quad_nodes: default_quad_nodes(),
            max_iterations: default_max_iterations(),
            rel_tolerance: default_rel_tolerance(),
            grad_tolerance: default_grad_tolerance(),
            alpha: default_alpha(),
        }
    }
}

impl GlmmConfig {
    fn options(&self) -> GlmmOptions {
        GlmmOptions {
            quad_nodes: self.quad_nodes,
            max_iterations: self.max_iterations,
            rel_tolerance: self.rel_tolerance,
            grad_tolerance: self.grad_tolerance,
            sigma: SigmaMode::Free,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandsConfig {
    #[serde(default = "default_imitation_condition")]
    pub imitation_condition: String,
    /// Accuracy band the imitation condition is expected to land in.
    #[serde(default = "default_imitation_band")]
    pub imitation_accuracy: [f64; 2],
}

fn default_imitation_condition() -> String {
    "S3".to_string()
}
fn default_imitation_band() -> [f64; 2] {
    [0.05, 0.20]
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self {
            imitation_condition: default_imitation_condition(),
            imitation_accuracy: default_imitation_band(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractorConfig {
    /// (adversarial condition, content-absent null) pairs to compare.
    #[serde(default = "default_attractor_pairs")]
    pub pairs: Vec<(String, String)>,
}

fn default_attractor_pairs() -> Vec<(String, String)> {
    vec![("S5".to_string(), "N3".to_string())]
}

impl Default for AttractorConfig {
    fn default() -> Self {
        Self {
            pairs: default_attractor_pairs(),
        }
    }
}

/// Settings for the `simulate` subcommand: regime, bank size, labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub kind: RegimeKind,
    #[serde(default)]
    pub attractor_position: Option<usize>,
    #[serde(default)]
    pub mixture_weight: f64,
    #[serde(default)]
    pub engagement_strength: f64,
    #[serde(default = "default_easy_fraction")]
    pub easy_fraction: f64,
    #[serde(default = "default_sim_items")]
    pub n_items: usize,
    #[serde(default = "default_sim_model")]
    pub model_id: String,
    #[serde(default = "default_sim_condition")]
    pub condition: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_easy_fraction() -> f64 {
    0.5
}
fn default_sim_items() -> usize {
    2000
}
fn default_sim_model() -> String {
    "sim".to_string()
}
fn default_sim_condition() -> String {
    "S2".to_string()
}
fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub js_log_base: LogBase,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            js_log_base: LogBase::Nats,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ReportError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| ReportError::Config(format!("cannot parse {}: {e}", path.display())))?;
        // input paths are relative to the config file
        if let Some(base) = path.parent() {
            config.inputs.records = base.join(&config.inputs.records);
            config.inputs.items = config.inputs.items.map(|p| base.join(p));
            config.inputs.conditions = config.inputs.conditions.map(|p| base.join(p));
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if !self.inputs.records.exists() {
            return Err(ReportError::Config(format!(
                "records file {} does not exist",
                self.inputs.records.display()
            )));
        }
        for path in [&self.inputs.items, &self.inputs.conditions].into_iter().flatten() {
            if !path.exists() {
                return Err(ReportError::Config(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
        }
        if self.bootstrap.resamples < 1 {
            return Err(ReportError::Config("bootstrap.resamples must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&(1.0 - self.bootstrap.level)) || self.bootstrap.level <= 0.0 {
            return Err(ReportError::Config("bootstrap.level must be in (0, 1)".into()));
        }
        let [low, high] = self.bands.imitation_accuracy;
        if low >= high {
            return Err(ReportError::Config(
                "bands.imitation_accuracy must satisfy low < high".into(),
            ));
        }
        self.sensitivity
            .validate()
            .map_err(|e| ReportError::Config(e.to_string()))?;
        if self.glmm.quad_nodes == 0 {
            return Err(ReportError::Config("glmm.quad_nodes must be >= 1".into()));
        }
        Ok(())
    }

    fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// Reads a conditions file: TOML with a `[[condition]]` array of
/// ConditionSpec fields.
pub fn read_condition_registry(path: &Path) -> Result<ConditionRegistry, ReportError> {
    #[derive(Deserialize)]
    struct ConditionsFile {
        condition: Vec<ConditionSpec>,
    }
    let text = fs::read_to_string(path)
        .map_err(|e| ReportError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: ConditionsFile = toml::from_str(&text)
        .map_err(|e| ReportError::Config(format!("cannot parse {}: {e}", path.display())))?;
    ConditionRegistry::new(file.condition).map_err(|e| ReportError::Config(e.to_string()))
}

// ---------------------------------------------------------------------------
// Bundle schema
// ---------------------------------------------------------------------------

/// Numerical conventions used by every statistic in the bundle.
#[derive(Debug, Clone, Serialize)]
pub struct Conventions {
    pub js_log_base: LogBase,
    pub bootstrap_method: String,
    pub bootstrap_resampling_unit: String,
    pub rho_p_value_method: String,
    pub trend_p_value_method: String,
    pub glmm_estimator: String,
    pub glmm_position_coding: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub resamples: usize,
    /// Set when the bootstrap resample count is too small for stable
    /// percentile intervals.
    pub low_precision_bootstrap: bool,
    pub validation_conforming: bool,
    pub validation_overridden: bool,
    pub models: Vec<String>,
    pub conventions: Conventions,
}

/// One row of the per-cell summary table.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub model: String,
    pub condition: String,
    pub n_total: usize,
    pub n_parsed: usize,
    pub accuracy: f64,
    pub normalized_entropy: f64,
    pub modal_concentration: f64,
    pub top3_concentration: f64,
    pub js_divergence: f64,
    pub tv_distance: f64,
    pub mode: String,
    pub modal_tie: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_undefined_reason: Option<String>,
    pub distributional_verdict: Option<DistributionalVerdict>,
    pub engagement_verdict: Option<EngagementVerdict>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrendEntry {
    pub model: String,
    #[serde(flatten)]
    pub result: TrendResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastEntry {
    pub model: String,
    pub statistic: String,
    pub results: Vec<ContrastResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GlmmReport {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<GlmmFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wald: Option<WaldSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelConcordance {
    pub model: String,
    pub pairs: Vec<VerdictPair>,
    pub table: ConcordanceTable,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSensitivity {
    pub model: String,
    #[serde(flatten)]
    pub result: SensitivityResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelNullAudit {
    pub model: String,
    #[serde(flatten)]
    pub audit: NullAudit,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttractorEntry {
    pub model: String,
    pub adversarial_condition: String,
    pub null_condition: String,
    #[serde(flatten)]
    pub result: AttractorMatch,
    pub adversarial_mode_letter: String,
    pub null_mode_letter: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandCheck {
    pub model: String,
    pub condition: String,
    pub accuracy: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DifficultySensitivityRow {
    pub model: String,
    pub condition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_within: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_pooled: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositionSlopeRow {
    pub model: String,
    pub condition: String,
    pub slope: f64,
    pub intercept: f64,
    pub accuracy_by_position: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientPoint {
    pub model: String,
    pub measure: String,
    pub condition: String,
    pub ladder_rank: u32,
    pub value: f64,
    /// Pre-registered threshold reference line, where one applies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramSeries {
    pub model: String,
    pub condition: String,
    pub counts: Vec<u64>,
    pub proportions: Vec<f64>,
    pub modal_position: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlotData {
    pub gradient: Vec<GradientPoint>,
    pub histograms: Vec<HistogramSeries>,
    /// Chance accuracy reference for the accuracy-by-position panels.
    pub chance_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub metadata: RunMetadata,
    pub validation: ValidationReport,
    pub summary: Vec<SummaryRow>,
    pub trends: Vec<TrendEntry>,
    pub contrasts: Vec<ContrastEntry>,
    pub glmm: Vec<GlmmReport>,
    pub concordance: Vec<ModelConcordance>,
    pub sensitivity: Vec<ModelSensitivity>,
    pub null_audit: Vec<ModelNullAudit>,
    pub attractor_matches: Vec<AttractorEntry>,
    pub band_checks: Vec<BandCheck>,
    pub difficulty_sensitivity: Vec<DifficultySensitivityRow>,
    pub max_difficulty_delta: Vec<(String, f64)>,
    pub position_slopes: Vec<PositionSlopeRow>,
    pub plots: PlotData,
}

/// Which pipeline stages to execute; lighter subcommands switch parts off.
#[derive(Debug, Clone, Copy)]
pub struct StageSelection {
    pub engagement: bool,
    pub inference: bool,
    pub glmm: bool,
    pub concordance: bool,
}

impl StageSelection {
    pub fn all() -> Self {
        Self {
            engagement: true,
            inference: true,
            glmm: true,
            concordance: true,
        }
    }

    pub fn screen_only() -> Self {
        Self {
            engagement: false,
            inference: false,
            glmm: false,
            concordance: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Records, registry, and validation state shared by every stage.
pub struct LoadedRun {
    pub records: Vec<ResponseRecord>,
    pub registry: ConditionRegistry,
    pub items: Option<Vec<ItemRef>>,
    pub validation: ValidationReport,
    pub ingest_issues: usize,
}

/// Ingests and validates the configured record file.
pub fn load_run(config: &PipelineConfig) -> Result<LoadedRun, ReportError> {
    config.validate()?;
    let registry = match &config.inputs.conditions {
        Some(path) => read_condition_registry(path)?,
        None => default_registry(),
    };
    let file = fs::File::open(&config.inputs.records)?;
    let (records, diagnostics) = ingest_records(file, config.inputs.format)?;
    let items = match &config.inputs.items {
        Some(path) => Some(read_item_bank(fs::File::open(path)?)?),
        None => None,
    };
    let validation = validate_run(&records, &registry, config.run.max_parse_fail_rate);
    Ok(LoadedRun {
        records,
        registry,
        items,
        validation,
        ingest_issues: diagnostics.issues.len(),
    })
}

struct ModelCells {
    model: String,
    honest: Cell,
    honest_dist: PositionDistribution,
    /// Ladder cells in rank order, with their registry spec.
    ladder: Vec<(ConditionSpec, Cell)>,
    nulls: Vec<(ConditionSpec, Cell)>,
}

fn collect_model_cells(
    run: &LoadedRun,
    model: &str,
) -> Result<ModelCells, ReportError> {
    let present = condition_labels(
        &run.records
            .iter()
            .filter(|r| r.model_id == model)
            .cloned()
            .collect::<Vec<_>>(),
    );
    let honest_label = run.registry.honest().label.clone();
    if !present.contains(&honest_label) {
        return Err(ReportError::Pipeline(format!(
            "model {model} has no {honest_label} (honest) cell"
        )));
    }
    let honest = partition_cells(&run.records, &run.registry, model, &honest_label)?;
    let honest_dist = position_histogram(&honest)?;
    let mut ladder = Vec::new();
    for spec in run.registry.ladder() {
        if present.contains(&spec.label) {
            let cell = partition_cells(&run.records, &run.registry, model, &spec.label)?;
            ladder.push((spec.clone(), cell));
        }
    }
    let mut nulls = Vec::new();
    for spec in run.registry.nulls() {
        if present.contains(&spec.label) {
            let cell = partition_cells(&run.records, &run.registry, model, &spec.label)?;
            nulls.push((spec.clone(), cell));
        }
    }
    Ok(ModelCells {
        model: model.to_string(),
        honest,
        honest_dist,
        ladder,
        nulls,
    })
}

fn summary_row(
    model: &str,
    condition: &str,
    cell: &Cell,
    stats: &DistributionalStats,
    engagement: Option<&EngagementResult>,
    thresholds: &ScreenThresholds,
    include_verdict: bool,
) -> SummaryRow {
    let (rho, rho_p, reason) = match engagement.map(|e| e.rho) {
        Some(CorrelationOutcome::Defined { rho, p_value, .. }) => (Some(rho), Some(p_value), None),
        Some(CorrelationOutcome::Undefined { reason, .. }) => {
            (None, None, Some(format!("{reason:?}")))
        }
        None => (None, None, None),
    };
    let interval = engagement.and_then(|e| e.interval);
    SummaryRow {
        model: model.to_string(),
        condition: condition.to_string(),
        n_total: cell.n_total,
        n_parsed: cell.n_parsed,
        accuracy: stats.accuracy,
        normalized_entropy: stats.normalized_entropy,
        modal_concentration: stats.modal_concentration,
        top3_concentration: stats.top3_concentration,
        js_divergence: stats.js_divergence_from_honest,
        tv_distance: stats.tv_distance_from_honest,
        mode: position_letter(stats.modal_position).to_string(),
        modal_tie: stats.modal_tie,
        rho,
        rho_ci_low: interval.map(|i| i.low),
        rho_ci_high: interval.map(|i| i.high),
        rho_p_value: rho_p,
        rho_undefined_reason: reason,
        distributional_verdict: include_verdict.then(|| {
            distributional_verdict(stats.normalized_entropy, stats.modal_concentration, thresholds)
        }),
        engagement_verdict: engagement.map(|e| e.verdict),
    }
}

/// Runs the selected pipeline stages over a loaded run.
pub fn run_pipeline_stages(
    config: &PipelineConfig,
    run: &LoadedRun,
    stages: StageSelection,
) -> Result<ReportBundle, ReportError> {
    if !run.validation.conforming && !config.run.allow_nonconforming {
        let detail = if run.validation.duplicate_keys.is_empty() {
            "parse-failure rate above threshold"
        } else {
            "duplicate record keys"
        };
        return Err(ReportError::Validation(detail.to_string()));
    }

    let models = if config.run.models.is_empty() {
        model_ids(&run.records)
    } else {
        config.run.models.clone()
    };
    let thresholds = config.thresholds.screen();
    let log_base = config.output.js_log_base;

    // pooled difficulty over every model's honest cell, for the sensitivity
    // comparison against within-model difficulty
    let mut honest_cells_all: Vec<Cell> = Vec::new();
    let mut model_cells: Vec<ModelCells> = Vec::new();
    for model in &models {
        let cells = collect_model_cells(run, model)?;
        honest_cells_all.push(cells.honest.clone());
        model_cells.push(cells);
    }
    let pooled_difficulty: Option<DifficultyProfile> = if stages.engagement
        && honest_cells_all.len() > 1
    {
        let refs: Vec<&Cell> = honest_cells_all.iter().collect();
        Some(compute_difficulty(&refs, &run.registry)?)
    } else {
        None
    };

    let mut bundle = ReportBundle {
        metadata: RunMetadata {
            config_hash: config.config_hash(),
            seed: config.bootstrap.seed,
            resamples: config.bootstrap.resamples,
            low_precision_bootstrap: config.bootstrap.resamples < 100,
            validation_conforming: run.validation.conforming,
            validation_overridden: !run.validation.conforming && config.run.allow_nonconforming,
            models: models.clone(),
            conventions: Conventions {
                js_log_base: log_base,
                bootstrap_method: "percentile".to_string(),
                bootstrap_resampling_unit: "item".to_string(),
                rho_p_value_method: "t-approximation".to_string(),
                trend_p_value_method: "t-approximation".to_string(),
                glmm_estimator: format!(
                    "adaptive Gauss-Hermite quadrature ({} nodes)",
                    config.glmm.quad_nodes
                ),
                glmm_position_coding: "0-based, uncentered".to_string(),
            },
        },
        validation: run.validation.clone(),
        summary: Vec::new(),
        trends: Vec::new(),
        contrasts: Vec::new(),
        glmm: Vec::new(),
        concordance: Vec::new(),
        sensitivity: Vec::new(),
        null_audit: Vec::new(),
        attractor_matches: Vec::new(),
        band_checks: Vec::new(),
        difficulty_sensitivity: Vec::new(),
        max_difficulty_delta: Vec::new(),
        position_slopes: Vec::new(),
        plots: PlotData {
            gradient: Vec::new(),
            histograms: Vec::new(),
            chance_accuracy: 0.10,
        },
    };

    for cells in &model_cells {
        analyse_model(
            config,
            run,
            cells,
            pooled_difficulty.as_ref(),
            stages,
            &thresholds,
            log_base,
            &mut bundle,
        )?;
    }
    Ok(bundle)
}

#[allow(clippy::too_many_arguments)]
fn analyse_model(
    config: &PipelineConfig,
    run: &LoadedRun,
    cells: &ModelCells,
    pooled_difficulty: Option<&DifficultyProfile>,
    stages: StageSelection,
    thresholds: &ScreenThresholds,
    log_base: LogBase,
    bundle: &mut ReportBundle,
) -> Result<(), ReportError> {
    let model = &cells.model;
    let difficulty = if stages.engagement {
        Some(compute_difficulty(&[&cells.honest], &run.registry)?)
    } else {
        None
    };

    // honest row (divergence from itself is zero; no engagement rho)
    let honest_stats = distributional_stats(&cells.honest, &cells.honest_dist, log_base)?;
    bundle.summary.push(summary_row(
        model,
        &cells.honest.condition,
        &cells.honest,
        &honest_stats,
        None,
        thresholds,
        false,
    ));
    push_plot_series(bundle, model, &cells.honest, &honest_stats, None)?;
    if stages.inference {
        push_position_slope(bundle, model, &cells.honest)?;
    }

    let mut screen_stats: Vec<ConditionScreenStats> = Vec::new();
    let mut verdict_pairs: Vec<VerdictPair> = Vec::new();
    let mut entropy_ladder: Vec<f64> = Vec::new();
    let mut rho_ladder: Vec<Option<f64>> = Vec::new();

    for (spec, cell) in &cells.ladder {
        let stats = distributional_stats(cell, &cells.honest_dist, log_base)?;
        let engagement = match &difficulty {
            Some(profile) => Some(engage(
                profile,
                cell,
                &config.bootstrap,
                config.thresholds.rho,
            )?),
            None => None,
        };
        let row = summary_row(
            model,
            &spec.label,
            cell,
            &stats,
            engagement.as_ref(),
            thresholds,
            true,
        );
        entropy_ladder.push(stats.normalized_entropy);
        rho_ladder.push(row.rho);
        push_plot_series(bundle, model, cell, &stats, spec.ladder_rank)?;
        if stages.inference {
            push_position_slope(bundle, model, cell)?;
        }

        if let Some(engagement) = &engagement {
            screen_stats.push(ConditionScreenStats {
                condition: spec.label.clone(),
                normalized_entropy: stats.normalized_entropy,
                modal_concentration: stats.modal_concentration,
                rho: engagement.rho,
            });
            verdict_pairs.push(VerdictPair {
                condition: spec.label.clone(),
                distributional: distributional_verdict(
                    stats.normalized_entropy,
                    stats.modal_concentration,
                    thresholds,
                ),
                engagement: engagement.verdict,
            });
            // within- vs pooled-difficulty sensitivity
            if let Some(pooled) = pooled_difficulty {
                let rho_pooled =
                    crate::engagement::difficulty_accuracy_rho(pooled, cell).rho();
                let rho_within = engagement.rho.rho();
                let delta = match (rho_within, rho_pooled) {
                    (Some(a), Some(b)) => Some((a - b).abs()),
                    _ => None,
                };
                bundle.difficulty_sensitivity.push(DifficultySensitivityRow {
                    model: model.clone(),
                    condition: spec.label.clone(),
                    rho_within,
                    rho_pooled,
                    delta,
                });
            }
        }

        if spec.label == config.bands.imitation_condition {
            let [low, high] = config.bands.imitation_accuracy;
            bundle.band_checks.push(BandCheck {
                model: model.clone(),
                condition: spec.label.clone(),
                accuracy: stats.accuracy,
                band_low: low,
                band_high: high,
                within_band: (low..=high).contains(&stats.accuracy),
            });
        }
        bundle.summary.push(row);
    }

    if let Some(pooled) = pooled_difficulty {
        let max_delta = bundle
            .difficulty_sensitivity
            .iter()
            .filter(|r| r.model == *model)
            .filter_map(|r| r.delta)
            .fold(0.0f64, f64::max);
        let _ = pooled;
        bundle.max_difficulty_delta.push((model.clone(), max_delta));
    }

    // null cells: summary rows only (no ladder statistics)
    let mut null_inputs = Vec::new();
    for (spec, cell) in &cells.nulls {
        let stats = distributional_stats(cell, &cells.honest_dist, log_base)?;
        bundle.summary.push(summary_row(
            model,
            &spec.label,
            cell,
            &stats,
            None,
            thresholds,
            true,
        ));
        push_plot_series(bundle, model, cell, &stats, None)?;
        if let Some(content) = spec.null_content {
            null_inputs.push((
                spec.label.clone(),
                content,
                stats.normalized_entropy,
                stats.modal_concentration,
            ));
        }
    }

    if stages.inference && cells.ladder.len() >= 3 {
        bundle.trends.push(TrendEntry {
            model: model.clone(),
            result: spearman_trend(&entropy_ladder, "normalized_entropy")?,
        });
        if rho_ladder.iter().all(|r| r.is_some()) {
            let values: Vec<f64> = rho_ladder.iter().map(|r| r.unwrap()).collect();
            bundle.trends.push(TrendEntry {
                model: model.clone(),
                result: spearman_trend(&values, "difficulty_accuracy_rho")?,
            });
        }
    }

    if stages.inference && cells.ladder.len() >= 2 {
        let ladder_refs: Vec<&Cell> = cells.ladder.iter().map(|(_, c)| c).collect();
        let aligned = ladder_refs.windows(2).all(|w| {
            w[0].entries.len() == w[1].entries.len()
                && w[0]
                    .entries
                    .iter()
                    .zip(&w[1].entries)
                    .all(|(a, b)| a.item_id == b.item_id)
        });
        if aligned {
            bundle.contrasts.push(ContrastEntry {
                model: model.clone(),
                statistic: "normalized_entropy".to_string(),
                results: adjacent_contrasts(
                    &ladder_refs,
                    entropy_statistic,
                    &config.bootstrap,
                    PairingMode::Paired,
                )?,
            });
        }
    }

    if stages.glmm && config.glmm.enabled && !cells.ladder.is_empty() {
        let mut glmm_cells: Vec<&Cell> = vec![&cells.honest];
        glmm_cells.extend(cells.ladder.iter().map(|(_, c)| c));
        let report = match build_design(&glmm_cells, &cells.honest.condition)
            .and_then(|design| fit_random_intercept_logit(&design, &config.glmm.options()))
        {
            Ok(fit) => {
                let wald = if fit.converged {
                    Some(wald_summary(&fit, config.glmm.alpha).expect("converged fit"))
                } else {
                    None
                };
                let error = (!fit.converged).then(|| {
                    GlmmError::NonConvergence {
                        iterations: fit.iterations,
                        gradient_norm: fit.gradient_norm,
                    }
                    .to_string()
                });
                GlmmReport {
                    model: model.clone(),
                    fit: Some(fit),
                    wald,
                    error,
                }
            }
            // non-convergence and degeneracy are recorded, not fatal
            Err(e) => GlmmReport {
                model: model.clone(),
                fit: None,
                wald: None,
                error: Some(e.to_string()),
            },
        };
        bundle.glmm.push(report);
    }

    if stages.concordance && !verdict_pairs.is_empty() {
        bundle.concordance.push(ModelConcordance {
            model: model.clone(),
            table: concordance_table(&verdict_pairs)?,
            pairs: verdict_pairs,
        });
        bundle.sensitivity.push(ModelSensitivity {
            model: model.clone(),
            result: threshold_sensitivity(&screen_stats, &config.sensitivity)?,
        });
    }

    if stages.concordance && !null_inputs.is_empty() {
        bundle.null_audit.push(ModelNullAudit {
            model: model.clone(),
            audit: null_screen_audit(&null_inputs, thresholds),
        });
    }

    if stages.concordance {
        for (adversarial_label, null_label) in &config.attractor.pairs {
            let adversarial = cells
                .ladder
                .iter()
                .find(|(s, _)| &s.label == adversarial_label)
                .map(|(_, c)| c);
            let null = cells
                .nulls
                .iter()
                .find(|(s, _)| &s.label == null_label)
                .map(|(_, c)| c);
            if let (Some(adv), Some(null)) = (adversarial, null) {
                let adv_dist = position_histogram(adv)?;
                let null_dist = position_histogram(null)?;
                let result = attractor_match(&adv_dist, &null_dist);
                bundle.attractor_matches.push(AttractorEntry {
                    model: model.clone(),
                    adversarial_condition: adversarial_label.clone(),
                    null_condition: null_label.clone(),
                    adversarial_mode_letter: position_letter(result.adversarial_mode).to_string(),
                    null_mode_letter: position_letter(result.null_mode).to_string(),
                    result,
                });
            }
        }
    }

    Ok(())
}

fn push_plot_series(
    bundle: &mut ReportBundle,
    model: &str,
    cell: &Cell,
    stats: &DistributionalStats,
    ladder_rank: Option<u32>,
) -> Result<(), ReportError> {
    let dist = position_histogram(cell)?;
    bundle.plots.histograms.push(HistogramSeries {
        model: model.to_string(),
        condition: cell.condition.clone(),
        counts: dist.counts().to_vec(),
        proportions: dist.proportions().to_vec(),
        modal_position: stats.modal_position,
    });
    if let Some(rank) = ladder_rank {
        let points = [
            ("accuracy", stats.accuracy, None),
            ("normalized_entropy", stats.normalized_entropy, Some(0.90)),
            ("modal_concentration", stats.modal_concentration, Some(0.40)),
            ("js_divergence", stats.js_divergence_from_honest, None),
            ("tv_distance", stats.tv_distance_from_honest, None),
        ];
        for (measure, value, reference) in points {
            bundle.plots.gradient.push(GradientPoint {
                model: model.to_string(),
                measure: measure.to_string(),
                condition: cell.condition.clone(),
                ladder_rank: rank,
                value,
                reference,
            });
        }
    }
    Ok(())
}

fn push_position_slope(
    bundle: &mut ReportBundle,
    model: &str,
    cell: &Cell,
) -> Result<(), ReportError> {
    let profile = accuracy_by_position(cell)?;
    bundle.position_slopes.push(PositionSlopeRow {
        model: model.to_string(),
        condition: cell.condition.clone(),
        slope: profile.ols_slope,
        intercept: profile.ols_intercept,
        accuracy_by_position: profile.accuracy,
        counts: profile.counts,
    });
    Ok(())
}

/// Executes the full pipeline: ingest, validate, per-cell statistics,
/// engagement, trends and contrasts, GLMM, concordance, sensitivity, null
/// audit, attractor matches, and band checks. Deterministic given config.
pub fn run_pipeline(config: &PipelineConfig) -> Result<ReportBundle, ReportError> {
    let run = load_run(config)?;
    run_pipeline_stages(config, &run, StageSelection::all())
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| ReportError::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt3_opt(v: Option<f64>) -> String {
    v.map(fmt3).unwrap_or_default()
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

/// Emits the bundle: `summary.(json|csv)`, `trend.json`, `contrasts.json`,
/// `glmm_<model>.json`, `concordance.json`, `sensitivity.csv`,
/// `null_audit.json`. CSV table values are fixed at three decimals; the
/// JSON files carry full precision. Same bundle, same bytes.
pub fn emit_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    #[derive(Serialize)]
    struct SummaryFile<'a> {
        metadata: &'a RunMetadata,
        validation: &'a ValidationReport,
        band_checks: &'a [BandCheck],
        difficulty_sensitivity: &'a [DifficultySensitivityRow],
        max_difficulty_delta: &'a [(String, f64)],
        position_slopes: &'a [PositionSlopeRow],
        attractor_matches: &'a [AttractorEntry],
        rows: &'a [SummaryRow],
    }
    let summary_json = dir.join("summary.json");
    write_json(
        &summary_json,
        &SummaryFile {
            metadata: &bundle.metadata,
            validation: &bundle.validation,
            band_checks: &bundle.band_checks,
            difficulty_sensitivity: &bundle.difficulty_sensitivity,
            max_difficulty_delta: &bundle.max_difficulty_delta,
            position_slopes: &bundle.position_slopes,
            attractor_matches: &bundle.attractor_matches,
            rows: &bundle.summary,
        },
    )?;
    written.push(summary_json);

    let mut csv = String::from(
        "model,condition,n_total,n_parsed,accuracy,entropy,modal_pct,top3_pct,js,tv,rho,rho_ci_low,rho_ci_high,mode,distributional_verdict,engagement_verdict\n",
    );
    for row in &bundle.summary {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.model,
            row.condition,
            row.n_total,
            row.n_parsed,
            fmt3(row.accuracy),
            fmt3(row.normalized_entropy),
            fmt3(row.modal_concentration),
            fmt3(row.top3_concentration),
            fmt3(row.js_divergence),
            fmt3(row.tv_distance),
            fmt3_opt(row.rho),
            fmt3_opt(row.rho_ci_low),
            fmt3_opt(row.rho_ci_high),
            row.mode,
            row.distributional_verdict
                .map(|v| format!("{v:?}").to_lowercase())
                .unwrap_or_default(),
            row.engagement_verdict
                .map(|v| format!("{v:?}"))
                .unwrap_or_default(),
        ));
    }
    let summary_csv = dir.join("summary.csv");
    fs::write(&summary_csv, csv)?;
    written.push(summary_csv);

    let trend_json = dir.join("trend.json");
    write_json(&trend_json, &bundle.trends)?;
    written.push(trend_json);

    let contrasts_json = dir.join("contrasts.json");
    write_json(&contrasts_json, &bundle.contrasts)?;
    written.push(contrasts_json);

    for report in &bundle.glmm {
        let path = dir.join(format!("glmm_{}.json", sanitize(&report.model)));
        write_json(&path, report)?;
        written.push(path);
    }

    let concordance_json = dir.join("concordance.json");
    write_json(&concordance_json, &bundle.concordance)?;
    written.push(concordance_json);

    let mut sensitivity_csv = String::from(
        "model,entropy_threshold,modal_threshold,rho_threshold,concordant,total,agreement\n",
    );
    for model_sensitivity in &bundle.sensitivity {
        for point in &model_sensitivity.result.points {
            sensitivity_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                model_sensitivity.model,
                fmt3(point.entropy_threshold),
                fmt3(point.modal_threshold),
                fmt3(point.rho_threshold),
                point.concordant,
                point.total,
                fmt3(point.agreement),
            ));
        }
    }
    let sensitivity_path = dir.join("sensitivity.csv");
    fs::write(&sensitivity_path, sensitivity_csv)?;
    written.push(sensitivity_path);

    let null_audit_json = dir.join("null_audit.json");
    write_json(&null_audit_json, &bundle.null_audit)?;
    written.push(null_audit_json);

    Ok(written)
}

/// Emits the plot-data series under `<dir>/plots/`: the gradient series per
/// measure with threshold reference lines, per-cell position histograms with
/// the modal position marked, and accuracy-by-position series with the 0.10
/// chance line. Data files only; rendering is external.
pub fn emit_plot_series(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let mut written = Vec::new();

    let mut gradient = String::from("model,measure,condition,ladder_rank,value,reference\n");
    for point in &bundle.plots.gradient {
        gradient.push_str(&format!(
            "{},{},{},{},{},{}\n",
            point.model,
            point.measure,
            point.condition,
            point.ladder_rank,
            fmt3(point.value),
            fmt3_opt(point.reference),
        ));
    }
    let gradient_path = plots.join("gradient.csv");
    fs::write(&gradient_path, gradient)?;
    written.push(gradient_path);

    for series in &bundle.plots.histograms {
        let mut text = String::from("position,letter,count,proportion,is_mode\n");
        for (position, (&count, &proportion)) in series
            .counts
            .iter()
            .zip(series.proportions.iter())
            .enumerate()
        {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                position,
                position_letter(position),
                count,
                fmt3(proportion),
                position == series.modal_position,
            ));
        }
        let path = plots.join(format!(
            "positions_{}_{}.csv",
            sanitize(&series.model),
            sanitize(&series.condition)
        ));
        fs::write(&path, text)?;
        written.push(path);
    }

    for row in &bundle.position_slopes {
        let mut text = String::from("position,letter,count,accuracy,chance\n");
        for position in 0..row.accuracy_by_position.len() {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                position,
                position_letter(position),
                row.counts[position],
                fmt3_opt(row.accuracy_by_position[position]),
                fmt3(bundle.plots.chance_accuracy),
            ));
        }
        let path = plots.join(format!(
            "accuracy_by_position_{}_{}.csv",
            sanitize(&row.model),
            sanitize(&row.condition)
        ));
        fs::write(&path, text)?;
        written.push(path);
    }

    Ok(written)
}

// ---------------------------------------------------------------------------
// Simulation entry point (the `simulate` subcommand)
// ---------------------------------------------------------------------------

/// Generates a synthetic run from the config's `[simulate]` section and
/// writes `records.jsonl` plus `items.jsonl` under the output directory.
/// An honest companion cell is always generated so the two-stage screen can
/// run end-to-end on the synthetic records.
pub fn run_simulate(config: &PipelineConfig) -> Result<Vec<PathBuf>, ReportError> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| ReportError::Config("missing [simulate] section".into()))?;
    let spec = RegimeSpec {
        kind: sim.kind,
        attractor_position: sim.attractor_position,
        mixture_weight: sim.mixture_weight,
        engagement_strength: sim.engagement_strength,
        easy_fraction: sim.easy_fraction,
        seed: sim.seed,
    };
    spec.validate()?;
    let items = synthetic_item_bank(sim.n_items, crate::simulate::mix_seed(sim.seed, &[1]));
    let honest_spec = RegimeSpec::honest(
        0.8,
        sim.easy_fraction,
        crate::simulate::mix_seed(sim.seed, &[2]),
    );
    let honest_label = default_registry().honest().label.clone();
    let honest = simulate_cell(&honest_spec, &items, &sim.model_id, &honest_label)?;
    let target = simulate_cell(&spec, &items, &sim.model_id, &sim.condition)?;

    let mut records = cell_records(&honest, &items);
    records.extend(cell_records(&target, &items));

    let dir = &config.output.dir;
    fs::create_dir_all(dir)?;
    let records_path = dir.join("records.jsonl");
    let file = fs::File::create(&records_path)?;
    write_records_jsonl(file, &records)?;

    let items_path = dir.join("items.jsonl");
    let mut file = fs::File::create(&items_path)?;
    for item in &items {
        let line = serde_json::json!({
            "item_id": item.item_id,
            "domain": item.domain,
            "option_count": item.option_count,
            "correct_position": position_letter(item.correct_position).to_string(),
        });
        writeln!(file, "{line}")?;
    }
    Ok(vec![records_path, items_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{mix_seed, RegimeSpec};
    use tempfile::TempDir;

    fn write_synthetic_run(dir: &Path, n_items: usize, seed: u64) -> PathBuf {
        let items = synthetic_item_bank(n_items, mix_seed(seed, &[1]));
        let mut records = Vec::new();
        for model in ["model-a", "model-b"] {
            let model_seed = mix_seed(seed, &[model.len() as u64]);
            let honest = simulate_cell(
                &RegimeSpec::honest(0.8, 0.5, mix_seed(model_seed, &[2])),
                &items,
                model,
                "H",
            )
            .unwrap();
            records.extend(cell_records(&honest, &items));
            for (rank, (w, g)) in [(0.1, 0.8), (0.5, 0.6), (0.6, 0.4), (0.3, 0.7), (1.0, 0.0), (0.4, 0.6)]
                .iter()
                .enumerate()
            {
                let spec = if *w >= 1.0 {
                    RegimeSpec::fixed_position(8, mix_seed(model_seed, &[rank as u64 + 3]))
                } else {
                    RegimeSpec::attractor_mixture(8, *w, *g, 0.5, mix_seed(model_seed, &[rank as u64 + 3]))
                };
                let cell = simulate_cell(&spec, &items, model, &format!("S{}", rank + 1)).unwrap();
                records.extend(cell_records(&cell, &items));
            }
            // null baselines on a smaller subset
            let sub = &items[..n_items / 4];
            for (label, spec) in [
                ("N1", RegimeSpec::fixed_position(4, mix_seed(model_seed, &[20]))),
                ("N2", RegimeSpec::uniform(mix_seed(model_seed, &[21]))),
                ("N3", RegimeSpec::fixed_position(8, mix_seed(model_seed, &[22]))),
                ("N4", RegimeSpec::uniform(mix_seed(model_seed, &[23]))),
            ] {
                let cell = simulate_cell(&spec, sub, model, label).unwrap();
                records.extend(cell_records(&cell, sub));
            }
        }
        let path = dir.join("records.jsonl");
        let file = fs::File::create(&path).unwrap();
        write_records_jsonl(file, &records).unwrap();
        path
    }

    fn base_config(records: PathBuf, out: PathBuf) -> PipelineConfig {
        PipelineConfig {
            inputs: InputsConfig {
                records,
                format: RecordFormat::Jsonl,
                items: None,
                conditions: None,
            },
            run: RunConfig::default(),
            thresholds: ThresholdsConfig::default(),
            bootstrap: BootstrapConfig {
                resamples: 200,
                level: 0.95,
                seed: 42,
            },
            glmm: GlmmConfig {
                enabled: false,
                ..Default::default()
            },
            sensitivity: ThresholdGrid::default(),
            bands: BandsConfig::default(),
            attractor: AttractorConfig::default(),
            simulate: None,
            output: OutputConfig {
                dir: out,
                js_log_base: LogBase::Nats,
            },
        }
    }

    #[test]
    fn pipeline_is_deterministic_and_emission_byte_stable() {
        let tmp = TempDir::new().unwrap();
        let records = write_synthetic_run(tmp.path(), 160, 5);
        let config = base_config(records, tmp.path().join("out"));
        let bundle_a = run_pipeline(&config).unwrap();
        let bundle_b = run_pipeline(&config).unwrap();
        let json_a = serde_json::to_string(&bundle_a).unwrap();
        let json_b = serde_json::to_string(&bundle_b).unwrap();
        assert_eq!(json_a, json_b);

        let dir_a = tmp.path().join("a");
        let dir_b = tmp.path().join("b");
        emit_report(&bundle_a, &dir_a).unwrap();
        emit_report(&bundle_a, &dir_b).unwrap();
        for name in ["summary.json", "summary.csv", "trend.json", "sensitivity.csv"] {
            let a = fs::read(dir_a.join(name)).unwrap();
            let b = fs::read(dir_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} not byte-stable");
        }
    }

    #[test]
    fn summary_csv_has_table_schema() {
        let tmp = TempDir::new().unwrap();
        let records = write_synthetic_run(tmp.path(), 120, 9);
        let config = base_config(records, tmp.path().join("out"));
        let bundle = run_pipeline(&config).unwrap();
        let out = tmp.path().join("out");
        emit_report(&bundle, &out).unwrap();
        let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        for column in ["model", "condition", "accuracy", "entropy", "modal_pct", "js", "tv", "rho", "mode"] {
            assert!(header.contains(column), "missing column {column}");
        }
        // one row per model x condition: 2 models x (H + S1..S6 + N1..N4)
        assert_eq!(csv.lines().count() - 1, 2 * 11);
    }

    #[test]
    fn small_resample_count_is_flagged_low_precision() {
        let tmp = TempDir::new().unwrap();
        let records = write_synthetic_run(tmp.path(), 80, 11);
        let mut config = base_config(records, tmp.path().join("out"));
        config.bootstrap.resamples = 1;
        let bundle = run_pipeline(&config).unwrap();
        assert!(bundle.metadata.low_precision_bootstrap);
        // degenerate CIs still produced
        let row = bundle
            .summary
            .iter()
            .find(|r| r.condition == "S1" && r.rho.is_some())
            .unwrap();
        assert_eq!(row.rho_ci_low, row.rho_ci_high);
    }

    #[test]
    fn empty_records_emit_header_only_files() {
        let tmp = TempDir::new().unwrap();
        let records = tmp.path().join("records.jsonl");
        fs::write(&records, "").unwrap();
        let config = base_config(records, tmp.path().join("out"));
        let bundle = run_pipeline(&config).unwrap();
        assert!(bundle.summary.is_empty());
        let out = tmp.path().join("out");
        emit_report(&bundle, &out).unwrap();
        let csv = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn nonconforming_run_errors_without_override() {
        let tmp = TempDir::new().unwrap();
        let records = tmp.path().join("records.jsonl");
        // every record a parse failure
        let mut lines = String::new();
        for i in 0..10 {
            lines.push_str(&format!(
                r#"{{"model":"m","condition":"H","item_id":"q{i}","domain":"law","option_count":10,"correct_position":"A","chosen_position":null}}"#
            ));
            lines.push('\n');
        }
        fs::write(&records, lines).unwrap();
        let mut config = base_config(records, tmp.path().join("out"));
        let err = run_pipeline(&config).unwrap_err();
        assert!(matches!(err, ReportError::Validation(_)));
        assert_eq!(err.exit_code(), 2);

        config.run.allow_nonconforming = true;
        // still fails later (no parsed honest responses), but not on validation
        let err = run_pipeline(&config).unwrap_err();
        assert!(!matches!(err, ReportError::Validation(_)));
    }

    #[test]
    fn config_errors_use_exit_code_three() {
        let config = base_config(PathBuf::from("/nonexistent/records.jsonl"), PathBuf::from("out"));
        let err = run_pipeline(&config).unwrap_err();
        assert!(matches!(err, ReportError::Config(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn simulate_subcommand_round_trips_through_pipeline() {
        let tmp = TempDir::new().unwrap();
        let out = tmp.path().join("sim");
        let mut config = base_config(PathBuf::from("unused"), out.clone());
        config.simulate = Some(SimulateConfig {
            kind: RegimeKind::FixedPosition,
            attractor_position: Some(8),
            mixture_weight: 1.0,
            engagement_strength: 0.0,
            easy_fraction: 0.5,
            n_items: 2000,
            model_id: "sim".into(),
            condition: "S5".into(),
            seed: 42,
        });
        let written = run_simulate(&config).unwrap();
        assert_eq!(written.len(), 2);

        let mut config2 = base_config(out.join("records.jsonl"), tmp.path().join("out2"));
        config2.inputs.items = Some(out.join("items.jsonl"));
        let bundle = run_pipeline(&config2).unwrap();
        let s5 = bundle
            .summary
            .iter()
            .find(|r| r.condition == "S5")
            .unwrap();
        assert_eq!(s5.mode, "I");
        assert_eq!(s5.normalized_entropy, 0.0);
        assert_eq!(s5.distributional_verdict, Some(DistributionalVerdict::Flagged));
        assert_eq!(s5.engagement_verdict, Some(EngagementVerdict::ContentBlind));
    }

    #[test]
    fn toml_config_parses_with_defaults() {
        let tmp = TempDir::new().unwrap();
        let records = tmp.path().join("records.jsonl");
        fs::write(&records, "").unwrap();
        let config_path = tmp.path().join("config.toml");
        fs::write(
            &config_path,
            "[inputs]\nrecords = \"records.jsonl\"\n\n[bootstrap]\nresamples = 50\nseed = 7\nlevel = 0.95\n",
        )
        .unwrap();
        let config = PipelineConfig::load(&config_path).unwrap();
        assert_eq!(config.bootstrap.resamples, 50);
        assert_eq!(config.thresholds.entropy, 0.90);
        assert_eq!(config.bands.imitation_accuracy, [0.05, 0.20]);
        assert!(config.validate().is_ok());
    }
}
