//! Compares the initial data handler, fitted on complete rows only, with the
//! handler retrained on complete plus recovered rows, at each threshold.

use relearn::dataset::stratified_group_split;
use relearn::experiment::{run_handler_comparison, ExperimentConfig};
use relearn::synth::{generate, GeneratorConfig};

fn main() -> relearn::Result<()> {
    let (data, _) = generate(&GeneratorConfig::default())?;
    let (train, test) = stratified_group_split(&data, 0.7, 0)?;
    let config = ExperimentConfig {
        thresholds: vec![0.3, 0.4, 0.5, 0.6],
        latency_calls: 200,
        ..Default::default()
    };
    let report = run_handler_comparison(&train, &test, &config, 0);
    report.write_csv(std::io::stdout(), None)?;
    Ok(())
}
