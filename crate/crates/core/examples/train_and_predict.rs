//! Trains the full pipeline on a synthetic training split, saves the
//! artifact and predicts the held-out subjects, missing values included.

use relearn::dataset::stratified_group_split;
use relearn::eval::balanced_accuracy;
use relearn::pipeline::{predict, train_relearn, PipelineConfig, TrainedPipeline};
use relearn::synth::{generate, GeneratorConfig};

fn main() -> relearn::Result<()> {
    let (data, _) = generate(&GeneratorConfig::default())?;
    let (train, test) = stratified_group_split(&data, 0.7, 0)?;

    let pipeline = train_relearn(&train, &PipelineConfig::default(), 0)?;
    let s = &pipeline.summary;
    println!("kept {} of {} features after pruning", s.pruned_features, train.n_features());
    println!(
        "complete rows {}, rows with gaps {}, recovered by the handler {}",
        s.v1_rows, s.v2_rows, s.v2_enhanced_rows
    );
    println!("features: {} initially selected, {} after retraining", s.initial_features, s.final_features);
    println!(
        "cv balanced accuracy {:.3} +/- {:.3} with {:?}",
        pipeline.cv_summary.mean, pipeline.cv_summary.std, pipeline.chosen_hyperparams
    );

    let path = std::env::temp_dir().join("relearn_pipeline.json");
    pipeline.save(&path)?;
    let loaded = TrainedPipeline::load(&path)?;
    println!("artifact {} ({})", path.display(), &loaded.digest()?[..16]);

    let out = predict(&loaded, test.features())?;
    let imputed = out.rows.iter().filter(|r| !r.imputed_features.is_empty()).count();
    let flagged = out.rows.iter().filter(|r| r.outlier_flag).count();
    println!(
        "predicted {} test rows ({imputed} needed imputation, {flagged} flagged as outliers)",
        out.rows.len()
    );
    println!("test balanced accuracy {:.3}", balanced_accuracy(test.labels(), &out.labels())?);
    if let Some(row) = out.rows.iter().find(|r| !r.imputed_features.is_empty()) {
        println!("e.g. p = {:.3}, imputed {}", row.probability, row.imputed_features.join(", "));
    }
    Ok(())
}
