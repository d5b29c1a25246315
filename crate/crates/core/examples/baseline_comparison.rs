//! Compares the full pipeline with drop-row, mean-value and last-value
//! pipelines, overall and on test rows that carry a missing value.

use relearn::dataset::stratified_group_split;
use relearn::experiment::{run_baseline_comparison, ExperimentConfig};
use relearn::synth::{generate, GeneratorConfig};

fn main() -> relearn::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed is an integer"));
    let (data, _) = generate(&GeneratorConfig { seed, ..Default::default() })?;
    let (train, test) = stratified_group_split(&data, 0.7, seed)?;
    let config = ExperimentConfig { latency_calls: 200, ..Default::default() };
    let report = run_baseline_comparison(&train, &test, &config, seed);
    report.write_csv(std::io::stdout(), None)?;
    for row in &report.rows {
        let missing = row.inference_missing.map_or("N/A".to_string(), |v| format!("{v:.3}"));
        println!(
            "{:<11} abstained on {:>3} of {} test rows, missing-only accuracy {missing}",
            row.label, row.abstained, row.test_rows
        );
    }
    Ok(())
}
