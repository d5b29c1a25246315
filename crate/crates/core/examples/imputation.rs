//! Compares the iterative imputer against mean and last-value filling on
//! cells hidden from latent-factor data, where the true values are known.

use relearn::dataset::FeatureMatrix;
use relearn::impute::{fit_baseline, fit_iterative_imputer, masked_rmse, transform_baseline, BaselineKind, ImputerConfig};
use relearn::synth::{generate, GeneratorConfig};

fn main() -> relearn::Result<()> {
    let config = GeneratorConfig {
        n_features: 40,
        latent_dim: 4,
        missing_rates: vec![0.2; 40],
        missing_coupling: 0.0,
        burst_prob: 0.0,
        outlier_rate: 0.0,
        stress_missing_multiplier: 1.0,
        ..Default::default()
    };
    let (data, truth) = generate(&config)?;
    let fm = data.features();
    let hidden = fm.mask();

    let iterative = fit_iterative_imputer(fm, &ImputerConfig::default())?;
    println!("iterative imputer: {} sweeps, converged {}", iterative.n_iter, iterative.converged);
    let filled = iterative.transform(fm)?;
    println!("{:<12} rmse {:.3}", "iterative", masked_rmse(&filled, truth.values.values(), hidden));

    for kind in [BaselineKind::Mean, BaselineKind::LastValue] {
        let model = fit_baseline(&data, kind)?;
        let out = transform_baseline(&model, &data)?;
        let rmse = rmse_on_kept(out.data.features(), &out.kept_rows, fm, truth.values.values());
        println!("{:<12} rmse {rmse:.3}", format!("{kind:?}").to_lowercase());
    }
    Ok(())
}

/// RMSE over hidden cells of the rows a baseline kept.
fn rmse_on_kept(out: &FeatureMatrix, kept: &[usize], original: &FeatureMatrix, truth: &[f64]) -> f64 {
    let d = original.n_cols();
    let (mut se, mut n) = (0.0, 0usize);
    for (i, &r) in kept.iter().enumerate() {
        for c in 0..d {
            if !original.is_observed(r, c) {
                se += (out.get(i, c).unwrap() - truth[r * d + c]).powi(2);
                n += 1;
            }
        }
    }
    (se / n.max(1) as f64).sqrt()
}
