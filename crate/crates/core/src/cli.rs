//! Command implementations behind the `relearn` binary. Each writes its
//! outputs under the configured output directory and returns a summary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::csv_io::{read_dataset, read_table, write_dataset, Table};
use crate::dataset::{stratified_group_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentKind, ExperimentReport};
use crate::pipeline::{predict, sha256_hex, train_relearn, TrainedPipeline};
use crate::synth::generate;

fn digest_header(config: &RunConfig) -> String {
    format!("config_digest: {}\nseed: {}", config.digest(), config.seed)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Realized missingness of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingnessSummary {
    pub rows: usize,
    pub features: usize,
    pub missing_cell_fraction: f64,
    pub rows_with_missing: usize,
    pub per_feature: Vec<f64>,
}

impl MissingnessSummary {
    pub fn of(data: &LabeledDataset) -> Self {
        let fm = data.features();
        let cells = (fm.n_rows() * fm.n_cols()).max(1);
        Self {
            rows: fm.n_rows(),
            features: fm.n_cols(),
            missing_cell_fraction: fm.missing_cells() as f64 / cells as f64,
            rows_with_missing: (0..fm.n_rows()).filter(|&r| !fm.row_is_complete(r)).count(),
            per_feature: (0..fm.n_cols()).map(|c| fm.missing_fraction(c)).collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let (lo, hi) = self
            .per_feature
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let _ = writeln!(s, "rows {}, features {}", self.rows, self.features);
        let _ = writeln!(s, "missing cells {:.2}%", 100.0 * self.missing_cell_fraction);
        let _ = writeln!(
            s,
            "rows with a missing value {} ({:.2}%)",
            self.rows_with_missing,
            100.0 * self.rows_with_missing as f64 / self.rows.max(1) as f64
        );
        let _ = writeln!(s, "per-feature missing rate min {:.3}, max {:.3}", lo, hi);
        for t in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6] {
            let kept = self.per_feature.iter().filter(|&&f| f <= t).count();
            let _ = writeln!(s, "  features with rate <= {t:.1}: {kept}");
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    config_digest: String,
    generator: &'a crate::synth::GeneratorConfig,
    informative: &'a [String],
    outlier_cells: usize,
    outlier_rows: usize,
    train_subjects: Vec<u32>,
    test_subjects: Vec<u32>,
    missingness: &'a MissingnessSummary,
    files: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub dataset: PathBuf,
    pub truth: PathBuf,
    pub manifest: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub summary: MissingnessSummary,
}

/// Writes `dataset.csv`, `truth.csv` (uncorrupted, complete values),
/// `train.csv`/`test.csv` (subject-disjoint split) and `manifest.json`.
pub fn cmd_generate(config: &RunConfig) -> Result<GenerateOutput> {
    let gen = config.generator_config();
    let (data, truth) = generate(&gen)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let header = digest_header(config);
    let dataset = dir.join("dataset.csv");
    let truth_path = dir.join("truth.csv");
    let train_path = dir.join("train.csv");
    let test_path = dir.join("test.csv");
    write_dataset(&dataset, &data, Some(&header))?;
    write_dataset(&truth_path, &data.with_features(truth.values.clone()), Some(&header))?;
    let (train, test) = stratified_group_split(&data, 1.0 - config.test_fraction, config.seed)?;
    write_dataset(&train_path, &train, Some(&header))?;
    write_dataset(&test_path, &test, Some(&header))?;
    let summary = MissingnessSummary::of(&data);
    let mut files = Vec::new();
    for p in [&dataset, &truth_path, &train_path, &test_path] {
        let name = p.file_name().expect("file name").to_string_lossy().into_owned();
        files.push((name, file_digest(p)?));
    }
    let manifest = Manifest {
        config_digest: config.digest(),
        generator: &gen,
        informative: &truth.informative,
        outlier_cells: truth.outlier_cells.len(),
        outlier_rows: truth.outlier_rows().len(),
        train_subjects: train.subjects(),
        test_subjects: test.subjects(),
        missingness: &summary,
        files,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Artifact(e.to_string()))?;
    fs::write(&manifest_path, json)?;
    Ok(GenerateOutput {
        dataset,
        truth: truth_path,
        manifest: manifest_path,
        train: train_path,
        test: test_path,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub pipeline_path: PathBuf,
    pub cv_report: PathBuf,
    pub pipeline: TrainedPipeline,
}

/// Trains on `train_data` and writes `pipeline.json` plus `cv_report.csv`.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutput> {
    let train = read_dataset(&config.train_path())?;
    let pipeline = train_relearn(&train, &config.pipeline, config.seed)?;
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let pipeline_path = dir.join("pipeline.json");
    pipeline.save(&pipeline_path)?;
    let cv_report = dir.join("cv_report.csv");
    let mut w = BufWriter::new(File::create(&cv_report)?);
    writeln!(w, "# {}", digest_header(config).replace('\n', "\n# "))?;
    writeln!(w, "# artifact_digest: {}", pipeline.digest()?)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["fold", "balanced_accuracy"])?;
    for (i, s) in pipeline.cv_summary.fold_scores.iter().enumerate() {
        csv.write_record([i.to_string(), s.to_string()])?;
    }
    csv.write_record(["mean".to_string(), pipeline.cv_summary.mean.to_string()])?;
    csv.write_record(["std".to_string(), pipeline.cv_summary.std.to_string()])?;
    csv.flush()?;
    Ok(TrainOutput {
        pipeline_path,
        cv_report,
        pipeline,
    })
}

/// Writes one prediction per input row: label, probability, outlier flag
/// and the `;`-separated names of imputed features.
pub fn cmd_predict(pipeline_path: &Path, data_path: &Path, output: &Path) -> Result<usize> {
    let pipeline = TrainedPipeline::load(pipeline_path)?;
    let table: Table = read_table(data_path)?;
    let out = predict(&pipeline, &table.features)?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let mut w = BufWriter::new(File::create(output)?);
    writeln!(w, "# config_digest: {}", pipeline.config_digest)?;
    writeln!(w, "# artifact_digest: {}", pipeline.digest()?)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["row", "label", "probability", "outlier_flag", "imputed_features"])?;
    for (i, p) in out.rows.iter().enumerate() {
        csv.write_record([
            i.to_string(),
            p.label.to_string(),
            p.probability.to_string(),
            p.outlier_flag.to_string(),
            p.imputed_features.join(";"),
        ])?;
    }
    csv.flush()?;
    Ok(out.rows.len())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report_path: PathBuf,
    pub plot_path: PathBuf,
    pub report: ExperimentReport,
}

fn kind_name(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Sweep => "sweep",
        ExperimentKind::Handlers => "handlers",
        ExperimentKind::Baselines => "baselines",
    }
}

/// Runs one study on `train_data`/`test_data` and writes
/// `<kind>_report.csv` and `<kind>_plot.csv`.
pub fn cmd_experiment(kind: &str, config: &RunConfig) -> Result<ExperimentOutput> {
    let kind: ExperimentKind = kind.parse()?;
    let train = read_dataset(&config.train_path())?;
    let test = read_dataset(&config.test_path())?;
    let report = run_experiment(kind, &train, &test, &config.experiment_config(), config.seed);
    let dir = &config.output_dir;
    ensure_dir(dir)?;
    let header = digest_header(config);
    let report_path = dir.join(format!("{}_report.csv", kind_name(kind)));
    let plot_path = dir.join(format!("{}_plot.csv", kind_name(kind)));
    report.write_csv(BufWriter::new(File::create(&report_path)?), Some(&header))?;
    report.write_plot_csv(BufWriter::new(File::create(&plot_path)?), Some(&header))?;
    Ok(ExperimentOutput {
        report_path,
        plot_path,
        report,
    })
}
