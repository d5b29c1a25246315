//! End-to-end training and inference.
//!
//! Training prunes sparse features, fits a data handler on the complete rows
//! (v1), uses it to repair the incomplete rows (v2), joins both into v3,
//! refits the handler on v3 and trains the boosted classifier on the cleaned
//! v3. Inference answers every row: missing cells are imputed and outliers
//! are flagged, never dropped.
//!
//! A data handler is fitted in five steps: isolation forest on the input,
//! drop flagged rows, RFECV on the clean rows, iterative imputer on the
//! selected columns, and a second isolation forest on the imputed selection.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{prune_features, split_complete_rows, FeatureMatrix, LabeledDataset, PruneReport};
use crate::error::{Error, Result, StageExt};
use crate::eval::{grid_search, CvConfig, GbtGrid};
use crate::impute::{fit_iterative_imputer, ImputerConfig, IterativeImputerModel};
use crate::rng::derive_seed;
use crate::selection::{apply_mask, fit_rfecv, FeatureMask, RfecvConfig};
use crate::tree::boosting::{fit_gbt, predict_proba, GbtParams, GradientBoostedModel};
use crate::tree::isolation::{fit_isolation_forest, score_outliers, IsolationConfig, IsolationForestModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandlerConfig {
    pub isolation: IsolationConfig,
    pub rfecv: RfecvConfig,
    pub imputer: ImputerConfig,
}

impl Default for HandlerConfig {
    fn default() -> Self {
        Self {
            isolation: IsolationConfig::default(),
            rfecv: RfecvConfig::default(),
            // The handler imputer is fitted on complete rows, so every
            // feature needs its own regressor.
            imputer: ImputerConfig {
                skip_complete: false,
                ..ImputerConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Features whose training missing fraction exceeds this are pruned.
    pub threshold: f64,
    pub handler: HandlerConfig,
    pub cv: CvConfig,
    pub grid: GbtGrid,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            handler: HandlerConfig::default(),
            cv: CvConfig::default(),
            grid: GbtGrid::default(),
        }
    }
}

impl PipelineConfig {
    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandlerStage {
    Initial,
    Retrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataHandlerModel {
    pub stage: HandlerStage,
    /// Isolation forest on the selected, imputed representation.
    pub outlier_model: IsolationForestModel,
    pub feature_mask: FeatureMask,
    pub imputer: IterativeImputerModel,
    /// Rows used to fit, and how many the first outlier pass removed.
    pub fit_rows: usize,
    pub dropped_outliers: usize,
}

/// Handler output for a batch of rows.
#[derive(Debug, Clone)]
pub struct HandledRows {
    /// Selected columns, fully imputed.
    pub features: FeatureMatrix,
    pub inlier: Vec<bool>,
    /// Per row, indices (into the selected columns) that were imputed.
    pub imputed: Vec<Vec<usize>>,
}

impl DataHandlerModel {
    pub fn selected_features(&self) -> Vec<String> {
        self.feature_mask.selected_names()
    }

    /// Select, impute and score `data`. Extra columns are ignored.
    pub fn transform(&self, data: &FeatureMatrix) -> Result<HandledRows> {
        let sel = data.select_named(&self.selected_features())?;
        let imputed = (0..sel.n_rows())
            .map(|r| (0..sel.n_cols()).filter(|&c| !sel.is_observed(r, c)).collect())
            .collect();
        let features = self.imputer.transform(&sel)?;
        let (_, inlier) = score_outliers(&self.outlier_model, &features)?;
        Ok(HandledRows {
            features,
            inlier,
            imputed,
        })
    }
}

pub fn fit_initial_handler(v1: &LabeledDataset, config: &HandlerConfig, cv: &CvConfig, seed: u64) -> Result<DataHandlerModel> {
    fit_handler(v1, config, cv, seed, HandlerStage::Initial)
}

pub fn retrain_handler(v3: &LabeledDataset, config: &HandlerConfig, cv: &CvConfig, seed: u64) -> Result<DataHandlerModel> {
    fit_handler(v3, config, cv, seed, HandlerStage::Retrained)
}

fn fit_handler(
    data: &LabeledDataset,
    config: &HandlerConfig,
    cv: &CvConfig,
    seed: u64,
    stage: HandlerStage,
) -> Result<DataHandlerModel> {
    let missing = data.features().missing_cells();
    if missing > 0 {
        return Err(Error::IncompleteData(missing));
    }
    let needed = 10 * cv.k;
    if data.n_rows() < needed {
        return Err(Error::TooFewRows(format!(
            "{} complete rows, need at least 10*K = {needed}; raise the pruning threshold or supply more data",
            data.n_rows()
        )));
    }
    let first = fit_isolation_forest(data.features(), &config.isolation, derive_seed(seed, 1))?;
    let (_, inlier) = score_outliers(&first, data.features())?;
    let keep: Vec<usize> = (0..data.n_rows()).filter(|&r| inlier[r]).collect();
    let clean = data.select_rows(&keep);
    let mask = fit_rfecv(&clean, &config.rfecv, cv, derive_seed(seed, 2))?;
    let selected = apply_mask(&mask, &clean)?;
    let imputer = fit_iterative_imputer(selected.features(), &config.imputer)?;
    let imputed = imputer.transform(selected.features())?;
    let outlier_model = fit_isolation_forest(&imputed, &config.isolation, derive_seed(seed, 3))?;
    Ok(DataHandlerModel {
        stage,
        outlier_model,
        feature_mask: mask,
        imputer,
        fit_rows: data.n_rows(),
        dropped_outliers: data.n_rows() - keep.len(),
    })
}

/// Repairs incomplete rows: select, impute, then drop rows flagged as
/// outliers. The output is complete.
pub fn enhance(handler: &DataHandlerModel, v2: &LabeledDataset) -> Result<LabeledDataset> {
    let selected = handler.selected_features();
    if v2.is_empty() {
        return v2.select_named(&selected);
    }
    let handled = handler.transform(v2.features())?;
    let keep: Vec<usize> = (0..v2.n_rows()).filter(|&r| handled.inlier[r]).collect();
    Ok(v2.with_features(handled.features).select_rows(&keep))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    pub fold_scores: Vec<f64>,
}

/// Row and column counts at each training stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub train_rows: usize,
    pub pruned_features: usize,
    pub v1_rows: usize,
    pub v2_rows: usize,
    pub v2_enhanced_rows: usize,
    pub v3_rows: usize,
    pub classifier_rows: usize,
    pub initial_features: usize,
    pub final_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPipeline {
    pub format_version: u32,
    pub seed: u64,
    pub config_digest: String,
    pub config: PipelineConfig,
    pub prune_report: PruneReport,
    pub handler: DataHandlerModel,
    pub classifier: GradientBoostedModel,
    pub chosen_hyperparams: GbtParams,
    pub cv_summary: CvSummary,
    pub summary: TrainingSummary,
}

struct Prepared {
    prune_report: PruneReport,
    initial: DataHandlerModel,
    v3: LabeledDataset,
    summary: TrainingSummary,
}

fn prepare(train: &LabeledDataset, config: &PipelineConfig, seed: u64) -> Result<Prepared> {
    let (pruned, prune_report) = prune_features(train, config.threshold).stage("prune")?;
    let (v1, v2) = split_complete_rows(&pruned);
    let initial = fit_initial_handler(&v1, &config.handler, &config.cv, seed).stage("initial_handler")?;
    let enhanced = enhance(&initial, &v2).stage("enhance")?;
    let v3 = v1
        .select_named(&initial.selected_features())
        .and_then(|v1| v1.concat(&enhanced))
        .stage("enhance")?;
    let missing = v3.features().missing_cells();
    if missing > 0 {
        return Err(Error::IncompleteData(missing)).stage("enhance");
    }
    let summary = TrainingSummary {
        train_rows: train.n_rows(),
        pruned_features: pruned.n_features(),
        v1_rows: v1.n_rows(),
        v2_rows: v2.n_rows(),
        v2_enhanced_rows: enhanced.n_rows(),
        v3_rows: v3.n_rows(),
        classifier_rows: 0,
        initial_features: initial.feature_mask.n_selected(),
        final_features: 0,
    };
    Ok(Prepared {
        prune_report,
        initial,
        v3,
        summary,
    })
}

fn finish(prep: &Prepared, stage: HandlerStage, config: &PipelineConfig, seed: u64) -> Result<TrainedPipeline> {
    let handler = match stage {
        HandlerStage::Initial => prep.initial.clone(),
        HandlerStage::Retrained => {
            retrain_handler(&prep.v3, &config.handler, &config.cv, seed).stage("retrain_handler")?
        }
    };
    let handled = handler.transform(prep.v3.features()).stage("classifier")?;
    let keep: Vec<usize> = (0..prep.v3.n_rows()).filter(|&r| handled.inlier[r]).collect();
    let train_set = prep.v3.with_features(handled.features).select_rows(&keep);
    let grid = grid_search(&train_set, &config.grid, &config.cv, derive_seed(seed, 4)).stage("grid_search")?;
    let classifier = fit_gbt(
        train_set.features(),
        train_set.labels(),
        &grid.best,
        derive_seed(seed, 5),
    )
    .stage("classifier")?;
    let summary = TrainingSummary {
        classifier_rows: train_set.n_rows(),
        final_features: handler.feature_mask.n_selected(),
        ..prep.summary.clone()
    };
    Ok(TrainedPipeline {
        format_version: FORMAT_VERSION,
        seed,
        config_digest: config.digest(),
        config: config.clone(),
        prune_report: prep.prune_report.clone(),
        handler,
        classifier,
        chosen_hyperparams: grid.best,
        cv_summary: CvSummary {
            mean: grid.cv_mean,
            std: grid.cv_std,
            fold_scores: grid.fold_scores,
        },
        summary,
    })
}

/// Full training protocol with the retrained handler deployed.
pub fn train_relearn(train: &LabeledDataset, config: &PipelineConfig, seed: u64) -> Result<TrainedPipeline> {
    let prep = prepare(train, config, seed)?;
    finish(&prep, HandlerStage::Retrained, config, seed)
}

/// Trains two pipelines sharing one v3: one deploying the initial handler
/// and one deploying the retrained handler.
pub fn train_relearn_both(
    train: &LabeledDataset,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(TrainedPipeline, TrainedPipeline)> {
    let prep = prepare(train, config, seed)?;
    Ok((
        finish(&prep, HandlerStage::Initial, config, seed)?,
        finish(&prep, HandlerStage::Retrained, config, seed)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
    pub outlier_flag: bool,
    pub imputed_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutput {
    pub rows: Vec<Prediction>,
}

impl PredictionOutput {
    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|r| r.label).collect()
    }
}

/// Predicts every row of `data`; columns are matched by name and every
/// pruned-set column must be present.
pub fn predict(pipeline: &TrainedPipeline, data: &FeatureMatrix) -> Result<PredictionOutput> {
    data.resolve_columns(&pipeline.prune_report.kept)?;
    let handled = pipeline.handler.transform(data)?;
    let proba = predict_proba(&pipeline.classifier, &handled.features)?;
    let names = handled.features.feature_names();
    let rows = proba
        .into_iter()
        .zip(handled.inlier)
        .zip(handled.imputed)
        .map(|((p, inlier), imputed)| Prediction {
            label: u8::from(p >= 0.5),
            probability: p,
            outlier_flag: !inlier,
            imputed_features: imputed.into_iter().map(|c| names[c].clone()).collect(),
        })
        .collect();
    Ok(PredictionOutput { rows })
}

impl TrainedPipeline {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::Artifact(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Artifact(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Artifact(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized artifact.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};
    use crate::tree::forest::ForestConfig;

    fn fast_config() -> PipelineConfig {
        PipelineConfig {
            threshold: 0.5,
            handler: HandlerConfig {
                isolation: IsolationConfig {
                    n_trees: 50,
                    ..Default::default()
                },
                rfecv: RfecvConfig {
                    step: 2,
                    forest: ForestConfig {
                        n_trees: 15,
                        max_depth: 6,
                        ..Default::default()
                    },
                },
                ..Default::default()
            },
            cv: CvConfig { k: 4, seed: 0 },
            grid: GbtGrid {
                max_depth: vec![2, 3],
                n_rounds: vec![30, 60],
                learning_rate: vec![0.3],
                subsample: vec![1.0],
            },
        }
    }

    fn data(seed: u64) -> LabeledDataset {
        let config = GeneratorConfig {
            n_subjects: 16,
            windows_per_subject: 20,
            n_features: 12,
            n_informative: 4,
            seed,
            ..Default::default()
        };
        generate(&config).unwrap().0
    }

    #[test]
    fn trains_and_predicts_every_row() {
        let train = data(1);
        let test = data(2);
        let p = train_relearn(&train, &fast_config(), 3).unwrap();
        assert_eq!(p.handler.stage, HandlerStage::Retrained);
        assert_eq!(p.classifier.n_features, p.handler.feature_mask.n_selected());
        assert!(p.config.grid.contains(&p.chosen_hyperparams));
        assert!(p.summary.final_features <= p.summary.initial_features);
        assert!(p.summary.initial_features <= p.summary.pruned_features);
        let out = predict(&p, test.features()).unwrap();
        assert_eq!(out.rows.len(), test.n_rows());
        for (r, row) in out.rows.iter().enumerate() {
            assert!(row.probability > 0.0 && row.probability < 1.0);
            let selected = p.handler.selected_features();
            let expected: Vec<String> = selected
                .iter()
                .filter(|n| {
                    let c = test.features().column_index(n).unwrap();
                    !test.features().is_observed(r, c)
                })
                .cloned()
                .collect();
            assert_eq!(row.imputed_features, expected);
        }
    }

    #[test]
    fn artifact_round_trip_is_exact() {
        let p = train_relearn(&data(4), &fast_config(), 0).unwrap();
        let json = p.to_json().unwrap();
        let back = TrainedPipeline::from_json(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json().unwrap(), json);
        let bumped = json.replacen("\"format_version\":1", "\"format_version\":99", 1);
        assert!(matches!(TrainedPipeline::from_json(&bumped), Err(Error::Artifact(_))));
    }

    #[test]
    fn too_few_complete_rows_is_a_stage_error() {
        let mut config = fast_config();
        config.cv.k = 10;
        let small = GeneratorConfig {
            n_subjects: 12,
            windows_per_subject: 6,
            n_features: 6,
            n_informative: 2,
            ..Default::default()
        };
        let err = train_relearn(&generate(&small).unwrap().0, &config, 0).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "initial_handler", .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn enhance_empty_and_shapes() {
        let train = data(5);
        let config = fast_config();
        let (pruned, _) = prune_features(&train, 0.5).unwrap();
        let (v1, v2) = split_complete_rows(&pruned);
        let h = fit_initial_handler(&v1, &config.handler, &config.cv, 0).unwrap();
        assert!(h.feature_mask.n_selected() <= pruned.n_features());
        let empty = v2.select_rows(&[]);
        assert_eq!(enhance(&h, &empty).unwrap().n_rows(), 0);
        let out = enhance(&h, &v2).unwrap();
        assert!(out.features().is_complete());
        assert!(out.n_rows() <= v2.n_rows());
        assert_eq!(out.feature_names(), h.selected_features().as_slice());
    }

    #[test]
    fn missing_required_column_is_rejected() {
        let train = data(6);
        let p = train_relearn(&train, &fast_config(), 0).unwrap();
        let name = p.prune_report.kept[0].clone();
        let others: Vec<String> = train.feature_names().iter().filter(|n| **n != name).cloned().collect();
        let cut = train.features().select_named(&others).unwrap();
        assert!(matches!(predict(&p, &cut), Err(Error::MissingColumn(_))));
    }
}
