//! Fits a Bayesian ridge regression by evidence maximization and compares
//! the recovered weights with the generating ones.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relearn::linear::{fit_bayesian_ridge, posterior_mean, BayesianRidgeConfig};

fn main() -> relearn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, d) = (200, 5);
    let true_w = [1.5, -2.0, 0.0, 0.5, 3.0];
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| 4.0 + x[i * d..(i + 1) * d].iter().zip(&true_w).map(|(a, w)| a * w).sum::<f64>() + rng.random_range(-0.5..0.5))
        .collect();

    let model = fit_bayesian_ridge(&x, d, &y, BayesianRidgeConfig::default())?;
    println!("converged {} after {} iterations", model.converged, model.n_iter);
    println!("noise precision {:.3}, weight precision {:.4}", model.alpha, model.lambda);
    for (j, (w, t)) in model.weights.iter().zip(&true_w).enumerate() {
        println!("w{j}: {w:+.4} (true {t:+.1})");
    }
    println!("intercept {:.4} (true 4.0)", model.intercept);

    // With the precisions fixed, the posterior mean is a ridge solution.
    let (w, b) = posterior_mean(&x, d, &y, model.alpha, model.lambda)?;
    let gap = w.iter().zip(&model.weights).map(|(a, b)| (a - b).abs()).fold((b - model.intercept).abs(), f64::max);
    println!("posterior mean at the fitted precisions differs by {gap:.2e}");
    Ok(())
}
