//! Recursive feature elimination with grouped cross-validation on the
//! complete rows of a synthetic dataset.

use relearn::dataset::split_complete_rows;
use relearn::eval::CvConfig;
use relearn::selection::{fit_rfecv, RfecvConfig};
use relearn::synth::{generate, GeneratorConfig};
use relearn::tree::forest::ForestConfig;

fn main() -> relearn::Result<()> {
    let (data, truth) = generate(&GeneratorConfig::default())?;
    let (complete, _) = split_complete_rows(&data);
    println!("{} complete rows of {}", complete.n_rows(), data.n_rows());

    let config = RfecvConfig {
        step: 2,
        forest: ForestConfig { n_trees: 30, max_depth: 8, ..Default::default() },
    };
    let mask = fit_rfecv(&complete, &config, &CvConfig { k: 5, seed: 0 }, 0)?;
    for point in &mask.cv_curve {
        println!("{:>3} features  cv {:.3} +/- {:.3}", point.n_features, point.mean, point.std);
    }
    let selected = mask.selected_names();
    let hits = selected.iter().filter(|n| truth.informative.contains(n)).count();
    println!("selected {}: {}", selected.len(), selected.join(", "));
    println!("{hits} of {} informative features kept", truth.informative.len());
    Ok(())
}
