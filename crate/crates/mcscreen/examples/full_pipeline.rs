//! End-to-end pipeline on synthetic data: simulate a two-model run (honest,
//! six-step ladder, four null baselines), write it as a JSON-lines record
//! file, run the full config-driven pipeline, and emit the report bundle and
//! plot series.
//!
//! Run: cargo run -p mcscreen --example full_pipeline

use std::fs;

use mcscreen::corpus::write_records_jsonl;
use mcscreen::report::{
    emit_plot_series, emit_report, run_pipeline, InputsConfig, OutputConfig, PipelineConfig,
};
use mcscreen::simulate::{cell_records, mix_seed, simulate_cell, synthetic_item_bank, RegimeSpec};

fn main() {
    let dir = std::env::temp_dir().join("mcscreen_full_pipeline");
    fs::create_dir_all(&dir).unwrap();

    // simulate a run: each model gets an honest cell, a six-step ladder with
    // one fully collapsed step, and four null baselines on a 200-item subset
    let items = synthetic_item_bank(1000, 42);
    let subset = &items[..200];
    let mut records = Vec::new();
    for (model, base_seed) in [("model-a", 100u64), ("model-b", 200u64)] {
        let honest = RegimeSpec::honest(0.8, 0.5, mix_seed(base_seed, &[0]));
        records.extend(cell_records(
            &simulate_cell(&honest, &items, model, "H").unwrap(),
            &items,
        ));
        let ladder = [
            (0.1, 0.8),
            (0.5, 0.6),
            (0.6, 0.4),
            (0.3, 0.7),
            (1.0, 0.0),
            (0.4, 0.6),
        ];
        for (rank, (w, g)) in ladder.iter().enumerate() {
            let seed = mix_seed(base_seed, &[rank as u64 + 1]);
            let spec = if *w >= 1.0 {
                RegimeSpec::fixed_position(8, seed)
            } else {
                RegimeSpec::attractor_mixture(8, *w, *g, 0.5, seed)
            };
            let cell = simulate_cell(&spec, &items, model, &format!("S{}", rank + 1)).unwrap();
            records.extend(cell_records(&cell, &items));
        }
        for (label, spec) in [
            ("N1", RegimeSpec::fixed_position(4, mix_seed(base_seed, &[20]))),
            ("N2", RegimeSpec::uniform(mix_seed(base_seed, &[21]))),
            ("N3", RegimeSpec::fixed_position(8, mix_seed(base_seed, &[22]))),
            ("N4", RegimeSpec::uniform(mix_seed(base_seed, &[23]))),
        ] {
            let cell = simulate_cell(&spec, subset, model, label).unwrap();
            records.extend(cell_records(&cell, subset));
        }
    }
    let records_path = dir.join("records.jsonl");
    write_records_jsonl(fs::File::create(&records_path).unwrap(), &records).unwrap();
    println!("wrote {} records to {}", records.len(), records_path.display());

    let config = PipelineConfig {
        inputs: InputsConfig {
            records: records_path,
            format: mcscreen::corpus::RecordFormat::Jsonl,
            items: None,
            conditions: None,
        },
        run: Default::default(),
        thresholds: Default::default(),
        bootstrap: mcscreen::engagement::BootstrapConfig {
            resamples: 2000,
            level: 0.95,
            seed: 42,
        },
        glmm: Default::default(),
        sensitivity: Default::default(),
        bands: Default::default(),
        attractor: Default::default(),
        simulate: None,
        output: OutputConfig {
            dir: dir.join("out"),
            js_log_base: Default::default(),
        },
    };

    let bundle = run_pipeline(&config).unwrap();
    println!("\nsummary rows:");
    for row in &bundle.summary {
        println!(
            "  {:<8} {:<3} acc {:.3} entropy {:.3} modal {:.3} mode {} {}",
            row.model,
            row.condition,
            row.accuracy,
            row.normalized_entropy,
            row.modal_concentration,
            row.mode,
            row.engagement_verdict
                .map(|v| format!("{v:?}"))
                .unwrap_or_default()
        );
    }
    for concordance in &bundle.concordance {
        println!(
            "concordance {}: {}/{}",
            concordance.model, concordance.table.concordant, concordance.table.total
        );
    }

    let mut written = emit_report(&bundle, &config.output.dir).unwrap();
    written.extend(emit_plot_series(&bundle, &config.output.dir).unwrap());
    println!("\nwrote {} report files under {}", written.len(), config.output.dir.display());
}
