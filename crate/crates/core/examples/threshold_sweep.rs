//! Trains one pipeline per pruning threshold and prints the resulting table
//! of feature counts, complete samples and per-sample latency.

use relearn::dataset::stratified_group_split;
use relearn::experiment::{run_threshold_sweep, ExperimentConfig};
use relearn::synth::{generate, GeneratorConfig};

fn main() -> relearn::Result<()> {
    let (data, _) = generate(&GeneratorConfig::default())?;
    let (train, test) = stratified_group_split(&data, 0.7, 0)?;
    let config = ExperimentConfig { latency_calls: 500, ..Default::default() };
    let report = run_threshold_sweep(&train, &test, &config, 0);
    report.write_csv(std::io::stdout(), None)?;
    for row in &report.rows {
        println!("{:>4}: cv {:.3}, inference {:.3} +/- {:.3}", row.label, row.cv_mean, row.inference_mean, row.inference_std);
    }
    Ok(())
}
