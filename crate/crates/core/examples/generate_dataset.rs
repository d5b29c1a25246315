//! Generates a synthetic physiological dataset, prints its missingness and
//! writes it with a subject-disjoint train/test split.
//!
//! cargo run --release --example generate_dataset -- [out_dir] [seed]

use std::path::PathBuf;

use relearn::cli::MissingnessSummary;
use relearn::csv_io::write_dataset;
use relearn::dataset::stratified_group_split;
use relearn::synth::{generate, GeneratorConfig};

fn main() -> relearn::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/example_data".into()));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed is an integer"));

    let config = GeneratorConfig { seed, ..Default::default() };
    let (data, truth) = generate(&config)?;
    print!("{}", MissingnessSummary::of(&data).render());
    println!("informative features: {}", truth.informative.join(", "));
    println!("injected outlier cells: {}", truth.outlier_cells.len());

    let (train, test) = stratified_group_split(&data, 0.7, seed)?;
    println!(
        "train {} rows / {} subjects, test {} rows / {} subjects",
        train.n_rows(),
        train.subjects().len(),
        test.n_rows(),
        test.subjects().len()
    );
    std::fs::create_dir_all(&out)?;
    write_dataset(&out.join("train.csv"), &train, Some(&format!("seed: {seed}")))?;
    write_dataset(&out.join("test.csv"), &test, Some(&format!("seed: {seed}")))?;
    println!("wrote {}", out.display());
    Ok(())
}
