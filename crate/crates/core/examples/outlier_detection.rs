//! Scores rows with an isolation forest and checks how well the scores
//! separate injected whole-row outliers from clean rows.

use relearn::synth::{generate, GeneratorConfig, OutlierUnit};
use relearn::tree::isolation::{fit_isolation_forest, score_outliers, IsolationConfig};

fn main() -> relearn::Result<()> {
    let config = GeneratorConfig {
        missing_rates: vec![0.0; 24],
        burst_prob: 0.0,
        outlier_rate: 0.05,
        outlier_unit: OutlierUnit::Row,
        ..Default::default()
    };
    let (data, truth) = generate(&config)?;
    let forest = fit_isolation_forest(data.features(), &IsolationConfig::default(), 0)?;
    let (scores, inliers) = score_outliers(&forest, data.features())?;
    let is_outlier = truth.outlier_rows();

    let flagged = inliers.iter().filter(|&&i| !i).count();
    let caught = inliers.iter().zip(&is_outlier).filter(|(&i, &o)| !i && o).count();
    let total = is_outlier.iter().filter(|&&o| o).count();
    println!("score threshold {:.4}", forest.score_threshold);
    println!("flagged {flagged} rows, {caught} of {total} injected outliers among them");

    let mean = |pick: bool| {
        let v: Vec<f64> = scores.iter().zip(&is_outlier).filter(|(_, &o)| o == pick).map(|(s, _)| *s).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!("mean score: outliers {:.3}, clean rows {:.3}", mean(true), mean(false));
    Ok(())
}
