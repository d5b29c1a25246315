//! Grid search over gradient-boosted tree settings with subject-wise folds.

use relearn::dataset::split_complete_rows;
use relearn::eval::{grid_search, CvConfig, GbtGrid};
use relearn::synth::{generate, GeneratorConfig};

fn main() -> relearn::Result<()> {
    let (data, _) = generate(&GeneratorConfig::default())?;
    let (complete, _) = split_complete_rows(&data);
    let grid = GbtGrid {
        max_depth: vec![2, 3],
        n_rounds: vec![50, 100],
        learning_rate: vec![0.1, 0.3],
        subsample: vec![1.0],
    };
    let result = grid_search(&complete, &grid, &CvConfig { k: 5, seed: 0 }, 0)?;
    for cell in &result.cells {
        println!(
            "depth {} rounds {:>3} lr {:.1}  cv {:.3} +/- {:.3}",
            cell.params.max_depth, cell.params.n_rounds, cell.params.learning_rate, cell.mean, cell.std
        );
    }
    println!(
        "best: depth {} rounds {} lr {} ({:.3})",
        result.best.max_depth, result.best.n_rounds, result.best.learning_rate, result.cv_mean
    );
    Ok(())
}
