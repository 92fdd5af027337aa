//! Thin CLI over the mcscreen library: each subcommand loads the same config
//! file, runs the corresponding pipeline stage, and writes the stage's
//! outputs. Exit codes: 0 success, 2 validation failure, 3 config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcscreen::report::{
    emit_plot_series, emit_report, load_run, run_pipeline_stages, run_simulate, PipelineConfig,
    ReportBundle, ReportError, StageSelection,
};

#[derive(Parser)]
#[command(name = "mcscreen")]
#[command(about = "Two-stage validity screening for multiple-choice response logs")]
#[command(version)]
struct Cli {
    /// Pipeline config file (TOML)
    #[arg(long, global = true, default_value = "mcscreen.toml")]
    config: PathBuf,

    /// Override the bootstrap seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the bootstrap resample count
    #[arg(long, global = true)]
    resamples: Option<usize>,

    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the record file and print the validation report
    Validate,
    /// Per-cell distributional statistics and stage-one verdicts
    Screen,
    /// Difficulty-accuracy correlations with bootstrap CIs and stage-two verdicts
    Engage,
    /// Spearman trend tests and adjacent-condition bootstrap contrasts
    Trend,
    /// Random-intercept logistic regression per model
    Glmm,
    /// Concordance, threshold sensitivity, null audit, and attractor matches
    Concord,
    /// Generate a synthetic run from the config's [simulate] section
    Simulate,
    /// Full pipeline: report bundle plus plot-data series
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, ReportError> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.bootstrap.seed = seed;
    }
    if let Some(resamples) = cli.resamples {
        config.bootstrap.resamples = resamples;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| ReportError::Io(std::io::Error::new(std::io::ErrorKind::Other, e)))?;
    println!("{text}");
    Ok(())
}

fn run_stages(config: &PipelineConfig, stages: StageSelection) -> Result<ReportBundle, ReportError> {
    let run = load_run(config)?;
    run_pipeline_stages(config, &run, stages)
}

fn run(cli: &Cli) -> Result<(), ReportError> {
    let config = load_config(cli)?;
    match cli.command {
        Command::Validate => {
            let run = load_run(&config)?;
            print_json(&run.validation)?;
            if !run.validation.conforming {
                return Err(ReportError::Validation(
                    "run is non-conforming (see report above)".into(),
                ));
            }
            Ok(())
        }
        Command::Screen => {
            let bundle = run_stages(&config, StageSelection::screen_only())?;
            print_json(&bundle.summary)
        }
        Command::Engage => {
            let stages = StageSelection {
                engagement: true,
                inference: false,
                glmm: false,
                concordance: false,
            };
            let bundle = run_stages(&config, stages)?;
            print_json(&bundle.summary)
        }
        Command::Trend => {
            let stages = StageSelection {
                engagement: true,
                inference: true,
                glmm: false,
                concordance: false,
            };
            let bundle = run_stages(&config, stages)?;
            #[derive(serde::Serialize)]
            struct TrendOut<'a> {
                trends: &'a [mcscreen::report::TrendEntry],
                contrasts: &'a [mcscreen::report::ContrastEntry],
            }
            print_json(&TrendOut {
                trends: &bundle.trends,
                contrasts: &bundle.contrasts,
            })
        }
        Command::Glmm => {
            let stages = StageSelection {
                engagement: false,
                inference: false,
                glmm: true,
                concordance: false,
            };
            let bundle = run_stages(&config, stages)?;
            let dir = &config.output.dir;
            std::fs::create_dir_all(dir)?;
            for report in &bundle.glmm {
                print_json(report)?;
            }
            emit_report(&bundle, dir).map(|_| ())
        }
        Command::Concord => {
            let stages = StageSelection {
                engagement: true,
                inference: false,
                glmm: false,
                concordance: true,
            };
            let bundle = run_stages(&config, stages)?;
            #[derive(serde::Serialize)]
            struct ConcordOut<'a> {
                concordance: &'a [mcscreen::report::ModelConcordance],
                sensitivity: &'a [mcscreen::report::ModelSensitivity],
                null_audit: &'a [mcscreen::report::ModelNullAudit],
                attractor_matches: &'a [mcscreen::report::AttractorEntry],
            }
            print_json(&ConcordOut {
                concordance: &bundle.concordance,
                sensitivity: &bundle.sensitivity,
                null_audit: &bundle.null_audit,
                attractor_matches: &bundle.attractor_matches,
            })
        }
        Command::Simulate => {
            let written = run_simulate(&config)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Report => {
            let bundle = run_stages(&config, StageSelection::all())?;
            let mut written = emit_report(&bundle, &config.output.dir)?;
            written.extend(emit_plot_series(&bundle, &config.output.dir)?);
            for path in written {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}
