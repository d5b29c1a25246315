//! The three comparison studies: pruning-threshold sweep, initial versus
//! retrained handler, and ReLearn against conventional missing-data
//! baselines. Each produces an [`ExperimentReport`] that renders to a
//! table-shaped CSV plus a plot-data CSV.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::csv_io::format_value;
use crate::dataset::{prune_features, FeatureMatrix, LabeledDataset, PruneReport};
use crate::error::{Error, Result, StageExt};
use crate::eval::{balanced_accuracy, grid_search, mean_std, per_subject_accuracy};
use crate::impute::{fit_baseline, transform_baseline, BaselineImputerModel, BaselineKind, SigmaFilter};
use crate::pipeline::{predict, train_relearn, train_relearn_both, HandlerStage, PipelineConfig, TrainedPipeline};
use crate::rng::derive_seed;
use crate::selection::{apply_mask, fit_rfecv, FeatureMask};
use crate::tree::boosting::{fit_gbt, predict_proba, GradientBoostedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sweep,
    Handlers,
    Baselines,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sweep" => Ok(Self::Sweep),
            "handlers" => Ok(Self::Handlers),
            "baselines" => Ok(Self::Baselines),
            other => Err(Error::invalid(format!(
                "unknown experiment kind `{other}` (expected sweep, handlers or baselines)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub thresholds: Vec<f64>,
    /// Single-row predictions timed per configuration.
    pub latency_calls: usize,
    /// Band half-width, in SDs, of the outlier filter in the row-dropping
    /// baseline.
    pub sigma: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            thresholds: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            latency_calls: 1000,
            sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    DropNan,
    MeanValue,
    LastValue,
    ReLearn,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::DropNan => "Drop NaN",
            Method::MeanValue => "Mean value",
            Method::LastValue => "Last Value",
            Method::ReLearn => "ReLearn",
        }
    }
}

/// One configuration's results. Accuracies are fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub threshold: f64,
    pub handler: Option<HandlerStage>,
    pub method: Option<Method>,
    pub pruned_features: usize,
    pub complete_samples: usize,
    pub final_features: usize,
    pub cv_mean: f64,
    pub cv_std: f64,
    pub cv_folds: Vec<f64>,
    /// Mean and population SD of per-subject balanced accuracy.
    pub inference_mean: f64,
    pub inference_std: f64,
    /// Pooled balanced accuracy on test rows with a missing pruned feature.
    pub inference_missing: Option<f64>,
    /// Same, excluding rows flagged as outliers.
    pub inference_missing_inliers: Option<f64>,
    pub test_rows: usize,
    pub abstained: usize,
    pub per_subject: Vec<(u32, f64)>,
    /// Median wall-clock milliseconds per single-row prediction.
    pub latency_ms: f64,
    pub error: Option<String>,
}

impl ReportRow {
    fn failed(label: String, threshold: f64, error: &Error) -> Self {
        Self {
            label,
            threshold,
            handler: None,
            method: None,
            pruned_features: 0,
            complete_samples: 0,
            final_features: 0,
            cv_mean: f64::NAN,
            cv_std: f64::NAN,
            cv_folds: Vec::new(),
            inference_mean: f64::NAN,
            inference_std: f64::NAN,
            inference_missing: None,
            inference_missing_inliers: None,
            test_rows: 0,
            abstained: 0,
            per_subject: Vec::new(),
            latency_ms: f64::NAN,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub rows: Vec<ReportRow>,
}

/// Test metrics shared by every method.
struct Inference {
    mean: f64,
    std: f64,
    missing: Option<f64>,
    missing_inliers: Option<f64>,
    abstained: usize,
    per_subject: Vec<(u32, f64)>,
}

/// Scores predictions; `None` marks an abstention.
fn score(test: &LabeledDataset, preds: &[Option<u8>], flags: Option<&[bool]>, missing_rows: &[bool], missing_applies: bool) -> Result<Inference> {
    let answered: Vec<usize> = (0..test.n_rows()).filter(|&r| preds[r].is_some()).collect();
    let pick = |rows: &[usize]| -> (Vec<u8>, Vec<u8>, Vec<u32>) {
        (
            rows.iter().map(|&r| test.labels()[r]).collect(),
            rows.iter().map(|&r| preds[r].expect("answered")).collect(),
            rows.iter().map(|&r| test.groups()[r]).collect(),
        )
    };
    let (t, p, g) = pick(&answered);
    let per_subject = if answered.is_empty() {
        Vec::new()
    } else {
        per_subject_accuracy(&t, &p, &g)?
    };
    let accs: Vec<f64> = per_subject.iter().map(|&(_, a)| a).collect();
    let (mean, std) = mean_std(&accs);
    let pooled = |rows: Vec<usize>| -> Result<Option<f64>> {
        if rows.is_empty() {
            return Ok(None);
        }
        let (t, p, _) = pick(&rows);
        balanced_accuracy(&t, &p).map(Some)
    };
    let (missing, missing_inliers) = if missing_applies {
        let rows: Vec<usize> = answered.iter().copied().filter(|&r| missing_rows[r]).collect();
        let inl: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&r| flags.is_none_or(|f| !f[r]))
            .collect();
        (pooled(rows)?, pooled(inl)?)
    } else {
        (None, None)
    };
    Ok(Inference {
        mean,
        std,
        missing,
        missing_inliers,
        abstained: test.n_rows() - answered.len(),
        per_subject,
    })
}

/// Rows with at least one missing cell among `columns`.
fn rows_with_missing(data: &FeatureMatrix, columns: &[String]) -> Result<Vec<bool>> {
    let cols = data.resolve_columns(columns)?;
    Ok((0..data.n_rows())
        .map(|r| cols.iter().any(|&c| !data.is_observed(r, c)))
        .collect())
}

/// Median per-call latency in milliseconds over `calls` single-row calls,
/// after a short warm-up.
fn median_latency<F: FnMut(usize) -> Result<()>>(n_rows: usize, calls: usize, mut f: F) -> Result<f64> {
    if n_rows == 0 || calls == 0 {
        return Ok(0.0);
    }
    for i in 0..calls.min(50) {
        f(i % n_rows)?;
    }
    let mut times = Vec::with_capacity(calls);
    for i in 0..calls {
        let t0 = Instant::now();
        f(i % n_rows)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(if calls % 2 == 1 {
        times[calls / 2]
    } else {
        (times[calls / 2 - 1] + times[calls / 2]) / 2.0
    })
}

fn single_rows(data: &FeatureMatrix) -> Vec<FeatureMatrix> {
    (0..data.n_rows()).map(|r| data.select_rows(&[r])).collect()
}

fn relearn_row(label: String, p: &TrainedPipeline, test: &LabeledDataset, config: &ExperimentConfig) -> Result<ReportRow> {
    let out = predict(p, test.features()).stage("predict")?;
    let preds: Vec<Option<u8>> = out.rows.iter().map(|r| Some(r.label)).collect();
    let flags: Vec<bool> = out.rows.iter().map(|r| r.outlier_flag).collect();
    let missing_rows = rows_with_missing(test.features(), &p.prune_report.kept)?;
    let inf = score(test, &preds, Some(&flags), &missing_rows, true)?;
    let singles = single_rows(test.features());
    let latency_ms = median_latency(singles.len(), config.latency_calls, |r| predict(p, &singles[r]).map(|_| ()))?;
    Ok(ReportRow {
        label,
        threshold: p.config.threshold,
        handler: Some(p.handler.stage),
        method: Some(Method::ReLearn),
        pruned_features: p.summary.pruned_features,
        complete_samples: p.summary.v1_rows,
        final_features: p.summary.final_features,
        cv_mean: p.cv_summary.mean,
        cv_std: p.cv_summary.std,
        cv_folds: p.cv_summary.fold_scores.clone(),
        inference_mean: inf.mean,
        inference_std: inf.std,
        inference_missing: inf.missing,
        inference_missing_inliers: inf.missing_inliers,
        test_rows: test.n_rows(),
        abstained: inf.abstained,
        per_subject: inf.per_subject,
        latency_ms,
        error: None,
    })
}

fn with_threshold(config: &ExperimentConfig, threshold: f64) -> PipelineConfig {
    PipelineConfig {
        threshold,
        ..config.pipeline.clone()
    }
}

fn pct_label(threshold: f64) -> String {
    format!("{}%", (threshold * 100.0).round())
}

/// Trains and evaluates the full pipeline at each pruning threshold. A
/// failing threshold yields a row carrying the error.
pub fn run_threshold_sweep(train: &LabeledDataset, test: &LabeledDataset, config: &ExperimentConfig, seed: u64) -> ExperimentReport {
    let rows = config
        .thresholds
        .iter()
        .map(|&t| {
            let label = pct_label(t);
            train_relearn(train, &with_threshold(config, t), seed)
                .and_then(|p| relearn_row(label.clone(), &p, test, config))
                .unwrap_or_else(|e| ReportRow::failed(label, t, &e))
        })
        .collect();
    ExperimentReport {
        kind: ExperimentKind::Sweep,
        rows,
    }
}

/// Paired rows per threshold: classifier deployed behind the initial handler
/// and behind the retrained handler.
pub fn run_handler_comparison(train: &LabeledDataset, test: &LabeledDataset, config: &ExperimentConfig, seed: u64) -> ExperimentReport {
    let mut rows = Vec::new();
    for &t in &config.thresholds {
        let base = pct_label(t);
        let pair = train_relearn_both(train, &with_threshold(config, t), seed).and_then(|(initial, retrained)| {
            Ok([
                relearn_row(format!("{base} initial"), &initial, test, config)?,
                relearn_row(format!("{base} retrained"), &retrained, test, config)?,
            ])
        });
        match pair {
            Ok(pair) => rows.extend(pair),
            Err(e) => {
                for stage in [HandlerStage::Initial, HandlerStage::Retrained] {
                    let name = if stage == HandlerStage::Initial { "initial" } else { "retrained" };
                    let mut row = ReportRow::failed(format!("{base} {name}"), t, &e);
                    row.handler = Some(stage);
                    rows.push(row);
                }
            }
        }
    }
    ExperimentReport {
        kind: ExperimentKind::Handlers,
        rows,
    }
}

/// A conventional pipeline: prune, fill or drop, select, classify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselinePipeline {
    pub kind: BaselineKind,
    pub prune_report: PruneReport,
    pub sigma_filter: Option<SigmaFilter>,
    pub imputer: BaselineImputerModel,
    pub mask: FeatureMask,
    pub classifier: GradientBoostedModel,
    pub cv_mean: f64,
    pub cv_std: f64,
    pub cv_folds: Vec<f64>,
    pub complete_samples: usize,
}

pub fn train_baseline(train: &LabeledDataset, kind: BaselineKind, config: &ExperimentConfig, seed: u64) -> Result<BaselinePipeline> {
    let pc = &config.pipeline;
    let (pruned, prune_report) = prune_features(train, pc.threshold).stage("prune")?;
    let complete_samples = (0..pruned.n_rows())
        .filter(|&r| pruned.features().row_is_complete(r))
        .count();
    let (filled, sigma_filter, imputer) = (|| -> Result<_> {
        let (input, filter) = if kind == BaselineKind::Drop {
            let filter = SigmaFilter::fit(pruned.features(), config.sigma)?;
            let (masked, _) = filter.apply(pruned.features())?;
            (pruned.with_features(masked), Some(filter))
        } else {
            (pruned.clone(), None)
        };
        let imputer = fit_baseline(&input, kind)?;
        let out = transform_baseline(&imputer, &input)?;
        Ok((out.data, filter, imputer))
    })()
    .stage("baseline_impute")?;
    let mask = fit_rfecv(&filled, &pc.handler.rfecv, &pc.cv, derive_seed(seed, 2)).stage("feature_selection")?;
    let selected = apply_mask(&mask, &filled).stage("feature_selection")?;
    let grid = grid_search(&selected, &pc.grid, &pc.cv, derive_seed(seed, 4)).stage("grid_search")?;
    let classifier = fit_gbt(selected.features(), selected.labels(), &grid.best, derive_seed(seed, 5)).stage("classifier")?;
    Ok(BaselinePipeline {
        kind,
        prune_report,
        sigma_filter,
        imputer,
        mask,
        classifier,
        cv_mean: grid.cv_mean,
        cv_std: grid.cv_std,
        cv_folds: grid.fold_scores,
        complete_samples,
    })
}

/// Predictions for each test row; `None` where the drop baseline abstains.
/// Last-value filling uses each test subject's own earlier windows.
pub fn predict_baseline(model: &BaselinePipeline, test: &LabeledDataset) -> Result<Vec<Option<u8>>> {
    let pruned = model.prune_report.apply(test)?;
    let out = transform_baseline(&model.imputer, &pruned)?;
    let selected = apply_mask(&model.mask, &out.data)?;
    let proba = predict_proba(&model.classifier, selected.features())?;
    let mut preds = vec![None; test.n_rows()];
    for (&r, p) in out.kept_rows.iter().zip(proba) {
        preds[r] = Some(u8::from(p >= 0.5));
    }
    Ok(preds)
}

fn baseline_row(train: &LabeledDataset, test: &LabeledDataset, kind: BaselineKind, config: &ExperimentConfig, seed: u64) -> Result<ReportRow> {
    let method = match kind {
        BaselineKind::Drop => Method::DropNan,
        BaselineKind::Mean => Method::MeanValue,
        BaselineKind::LastValue => Method::LastValue,
    };
    let model = train_baseline(train, kind, config, seed)?;
    let preds = predict_baseline(&model, test).stage("predict")?;
    let missing_rows = rows_with_missing(test.features(), &model.prune_report.kept)?;
    let inf = score(test, &preds, None, &missing_rows, kind != BaselineKind::Drop)?;
    let singles: Vec<LabeledDataset> = (0..test.n_rows()).map(|r| test.select_rows(&[r])).collect();
    let latency_ms = median_latency(singles.len(), config.latency_calls, |r| {
        predict_baseline(&model, &singles[r]).map(|_| ())
    })?;
    Ok(ReportRow {
        label: method.label().to_string(),
        threshold: config.pipeline.threshold,
        handler: None,
        method: Some(method),
        pruned_features: model.prune_report.kept.len(),
        complete_samples: model.complete_samples,
        final_features: model.mask.n_selected(),
        cv_mean: model.cv_mean,
        cv_std: model.cv_std,
        cv_folds: model.cv_folds,
        inference_mean: inf.mean,
        inference_std: inf.std,
        inference_missing: inf.missing,
        inference_missing_inliers: inf.missing,
        test_rows: test.n_rows(),
        abstained: inf.abstained,
        per_subject: inf.per_subject,
        latency_ms,
        error: None,
    })
}

/// Drop NaN, Mean value, Last Value and ReLearn at the configured threshold,
/// each with its own feature selection and grid search.
pub fn run_baseline_comparison(train: &LabeledDataset, test: &LabeledDataset, config: &ExperimentConfig, seed: u64) -> ExperimentReport {
    let mut rows = Vec::new();
    for kind in [BaselineKind::Drop, BaselineKind::Mean, BaselineKind::LastValue] {
        let row = baseline_row(train, test, kind, config, seed).unwrap_or_else(|e| {
            let mut row = ReportRow::failed(String::new(), config.pipeline.threshold, &e);
            let method = match kind {
                BaselineKind::Drop => Method::DropNan,
                BaselineKind::Mean => Method::MeanValue,
                BaselineKind::LastValue => Method::LastValue,
            };
            row.label = method.label().to_string();
            row.method = Some(method);
            row
        });
        rows.push(row);
    }
    let relearn = train_relearn(train, &config.pipeline, seed)
        .and_then(|p| relearn_row(Method::ReLearn.label().to_string(), &p, test, config))
        .unwrap_or_else(|e| {
            let mut row = ReportRow::failed(Method::ReLearn.label().to_string(), config.pipeline.threshold, &e);
            row.method = Some(Method::ReLearn);
            row
        });
    rows.push(relearn);
    ExperimentReport {
        kind: ExperimentKind::Baselines,
        rows,
    }
}

pub fn run_experiment(kind: ExperimentKind, train: &LabeledDataset, test: &LabeledDataset, config: &ExperimentConfig, seed: u64) -> ExperimentReport {
    match kind {
        ExperimentKind::Sweep => run_threshold_sweep(train, test, config, seed),
        ExperimentKind::Handlers => run_handler_comparison(train, test, config, seed),
        ExperimentKind::Baselines => run_baseline_comparison(train, test, config, seed),
    }
}

const NA: &str = "NA";

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        NA.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), num)
}

fn count(row: &ReportRow, v: usize) -> String {
    if row.error.is_some() {
        NA.to_string()
    } else {
        v.to_string()
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl ExperimentReport {
    pub fn columns(&self) -> &'static [&'static str] {
        match self.kind {
            ExperimentKind::Sweep => &[
                "threshold_pct",
                "features_after_pruning",
                "samples_without_missing",
                "features_final",
                "overhead_ms",
            ],
            ExperimentKind::Handlers => &[
                "threshold_pct",
                "handler",
                "cv_mean",
                "cv_std",
                "inference_mean",
                "inference_std",
                "features_final",
                "overhead_ms",
            ],
            ExperimentKind::Baselines => &[
                "method",
                "cv_mean",
                "cv_std",
                "inference_all_mean",
                "inference_all_std",
                "inference_missing",
                "n_features",
            ],
        }
    }

    fn cells(&self, row: &ReportRow) -> Vec<String> {
        let pct = (row.threshold * 100.0).round().to_string();
        match self.kind {
            ExperimentKind::Sweep => vec![
                pct,
                count(row, row.pruned_features),
                count(row, row.complete_samples),
                count(row, row.final_features),
                num(row.latency_ms),
            ],
            ExperimentKind::Handlers => vec![
                pct,
                match row.handler {
                    Some(HandlerStage::Initial) => "initial".into(),
                    Some(HandlerStage::Retrained) => "retrained".into(),
                    None => NA.into(),
                },
                num(row.cv_mean),
                num(row.cv_std),
                num(row.inference_mean),
                num(row.inference_std),
                count(row, row.final_features),
                num(row.latency_ms),
            ],
            ExperimentKind::Baselines => vec![
                row.label.clone(),
                num(row.cv_mean),
                num(row.cv_std),
                num(row.inference_mean),
                num(row.inference_std),
                if row.error.is_some() { NA.into() } else { opt(row.inference_missing) },
                count(row, row.final_features),
            ],
        }
    }

    /// Table-shaped CSV. `comment` lines and per-row errors are written as
    /// `#` lines before the header.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        let mut head = String::new();
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(head, "# {line}").expect("string write");
            }
        }
        for row in &self.rows {
            if let Some(e) = &row.error {
                writeln!(head, "# error {}: {}", row.label, e.replace('\n', " ")).expect("string write");
            }
        }
        w.write_all(head.as_bytes())?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(self.columns())?;
        for row in &self.rows {
            csv.write_record(self.cells(row))?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Curve and box-plot data: CV summary with fold quartiles, feature
    /// counts, latency, and the extra inference metrics.
    pub fn write_plot_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "label",
            "threshold",
            "cv_mean",
            "cv_std",
            "cv_min",
            "cv_q1",
            "cv_median",
            "cv_q3",
            "cv_max",
            "inference_mean",
            "inference_std",
            "inference_missing",
            "inference_missing_inliers",
            "features_after_pruning",
            "features_final",
            "overhead_ms",
            "abstained_fraction",
        ])?;
        for row in &self.rows {
            let mut folds = row.cv_folds.clone();
            folds.sort_by(f64::total_cmp);
            let abstained = if row.test_rows == 0 {
                f64::NAN
            } else {
                row.abstained as f64 / row.test_rows as f64
            };
            csv.write_record([
                row.label.clone(),
                format_value(row.threshold),
                num(row.cv_mean),
                num(row.cv_std),
                num(quantile(&folds, 0.0)),
                num(quantile(&folds, 0.25)),
                num(quantile(&folds, 0.5)),
                num(quantile(&folds, 0.75)),
                num(quantile(&folds, 1.0)),
                num(row.inference_mean),
                num(row.inference_std),
                opt(row.inference_missing),
                opt(row.inference_missing_inliers),
                count(row, row.pruned_features),
                count(row, row.final_features),
                num(row.latency_ms),
                num(abstained),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}
