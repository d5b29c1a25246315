//! Missing-value imputation.
//!
//! [`fit_iterative_imputer`] models each feature as a Bayesian ridge
//! regression on all other features and refines the missing cells in
//! round-robin sweeps. The conventional baselines (training mean, last
//! observed value of the same subject, and row dropping) live in
//! [`fit_baseline`] / [`transform_baseline`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::linear::{fit_bayesian_ridge, BayesianRidgeConfig, BayesianRidgeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputerConfig {
    /// Maximum round-robin sweeps at fit time and passes at transform time.
    pub max_iter: usize,
    /// Stop when the largest change of an imputed cell falls below
    /// `tol * max observed feature SD`.
    pub tol: f64,
    /// Fit regressors only for features that have missing cells at fit time.
    /// When false every feature gets a regressor, so an imputer fitted on
    /// complete data can still fill any feature later.
    pub skip_complete: bool,
    pub regressor: BayesianRidgeConfig,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            max_iter: 10,
            tol: 1e-3,
            skip_complete: true,
            regressor: BayesianRidgeConfig::default(),
        }
    }
}

/// Regression of one feature on every other feature (in column order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegressor {
    pub feature: usize,
    pub model: BayesianRidgeModel,
}

impl FeatureRegressor {
    fn predict(&self, row: &[f64]) -> f64 {
        let w = &self.model.weights;
        let (before, after) = row.split_at(self.feature);
        let head: f64 = before.iter().zip(w).map(|(x, w)| x * w).sum();
        let tail: f64 = after[1..].iter().zip(&w[self.feature..]).map(|(x, w)| x * w).sum();
        self.model.intercept + head + tail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeImputerModel {
    pub feature_names: Vec<String>,
    /// Regressors in visiting order.
    pub regressors: Vec<FeatureRegressor>,
    pub feature_means: Vec<f64>,
    /// Columns in ascending order of fit-time missing count.
    pub fit_feature_order: Vec<usize>,
    pub max_iter: usize,
    pub tol: f64,
    /// Largest observed feature SD; scales the stopping tolerance.
    pub scale: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Largest imputed-cell change during the final fit sweep.
    pub final_change: f64,
}

pub fn fit_iterative_imputer(train: &FeatureMatrix, config: &ImputerConfig) -> Result<IterativeImputerModel> {
    let n = train.n_rows();
    let d = train.n_cols();
    if n < 2 {
        return Err(Error::TooFewRows(format!("imputer needs at least 2 rows, got {n}")));
    }
    let means = observed_means(train)?;
    let scale = train
        .column_sds()
        .into_iter()
        .flatten()
        .fold(0.0f64, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let missing: Vec<usize> = (0..d).map(|c| train.missing_count(c)).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by_key(|&c| (missing[c], c));
    let visit: Vec<usize> = order
        .iter()
        .copied()
        // A column needs two observed values to fit a regressor; otherwise
        // its mean fill stands.
        .filter(|&c| d > 1 && n - missing[c] >= 2 && (!config.skip_complete || missing[c] > 0))
        .collect();

    let mut current = mean_filled(train, &means);
    let mut regressors: Vec<FeatureRegressor> = Vec::with_capacity(visit.len());
    let mut n_iter = 0;
    let mut converged = visit.is_empty();
    let mut final_change = 0.0;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for sweep in 1..=config.max_iter.max(1) {
        if visit.is_empty() {
            break;
        }
        n_iter = sweep;
        regressors.clear();
        let mut max_change = 0.0f64;
        for &j in &visit {
            x.clear();
            y.clear();
            for r in (0..n).filter(|&r| train.is_observed(r, j)) {
                let row = &current[r * d..(r + 1) * d];
                x.extend(row.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, v)| *v));
                y.push(row[j]);
            }
            let reg = FeatureRegressor {
                feature: j,
                model: fit_bayesian_ridge(&x, d - 1, &y, config.regressor)?,
            };
            for r in (0..n).filter(|&r| !train.is_observed(r, j)) {
                let row = &mut current[r * d..(r + 1) * d];
                let pred = reg.predict(row);
                max_change = max_change.max((pred - row[j]).abs());
                row[j] = pred;
            }
            regressors.push(reg);
        }
        final_change = max_change;
        if max_change < config.tol * scale {
            converged = true;
            break;
        }
    }

    Ok(IterativeImputerModel {
        feature_names: train.feature_names().to_vec(),
        regressors,
        feature_means: means,
        fit_feature_order: order,
        max_iter: config.max_iter,
        tol: config.tol,
        scale,
        n_iter,
        converged,
        final_change,
    })
}

impl IterativeImputerModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Fills the masked cells of one row in place; `observed[c]` marks the
    /// cells that must be left untouched.
    pub fn fill_row(&self, row: &mut [f64], observed: &[bool]) {
        let mut any = false;
        for (c, v) in row.iter_mut().enumerate() {
            if !observed[c] {
                *v = self.feature_means[c];
                any = true;
            }
        }
        if !any {
            return;
        }
        let active: Vec<&FeatureRegressor> = self.regressors.iter().filter(|r| !observed[r.feature]).collect();
        if active.is_empty() {
            return;
        }
        for _ in 0..self.max_iter.max(1) {
            let mut max_change = 0.0f64;
            for reg in &active {
                let pred = reg.predict(row);
                max_change = max_change.max((pred - row[reg.feature]).abs());
                row[reg.feature] = pred;
            }
            if max_change < self.tol * self.scale {
                break;
            }
        }
    }

    /// Imputes every masked cell; observed cells are copied bit-exactly.
    pub fn transform(&self, data: &FeatureMatrix) -> Result<FeatureMatrix> {
        let data = align_columns(&self.feature_names, data)?;
        let d = data.n_cols();
        let mut values = data.values().to_vec();
        for r in 0..data.n_rows() {
            if !data.row_is_complete(r) {
                self.fill_row(&mut values[r * d..(r + 1) * d], data.row_mask(r));
            }
        }
        FeatureMatrix::new(data.feature_names().to_vec(), data.n_rows(), values, vec![true; d * data.n_rows()])
    }
}

/// Reorders `data` to `names`; errors on absent or unexpected columns.
fn align_columns(names: &[String], data: &FeatureMatrix) -> Result<FeatureMatrix> {
    if data.feature_names() == names {
        return Ok(data.clone());
    }
    if let Some(extra) = data.feature_names().iter().find(|n| !names.contains(n)) {
        return Err(Error::invalid(format!("column `{extra}` was not seen at fit time")));
    }
    data.select_named(names)
}

fn observed_means(data: &FeatureMatrix) -> Result<Vec<f64>> {
    data.column_means()
        .into_iter()
        .zip(data.feature_names())
        .map(|(m, name)| m.ok_or_else(|| Error::Unimputable(name.clone())))
        .collect()
}

fn mean_filled(data: &FeatureMatrix, means: &[f64]) -> Vec<f64> {
    let d = data.n_cols();
    data.values()
        .iter()
        .zip(data.mask())
        .enumerate()
        .map(|(i, (&v, &m))| if m { v } else { means[i % d] })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Mean,
    LastValue,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineImputerModel {
    pub kind: BaselineKind,
    pub feature_names: Vec<String>,
    /// Training means of observed cells; the last-value fallback.
    pub feature_means: Vec<f64>,
}

/// Result of a baseline transform.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    /// Complete rows (all rows for mean/last value).
    pub data: LabeledDataset,
    /// Input row index of every output row.
    pub kept_rows: Vec<usize>,
    /// Input rows with no output (drop only).
    pub abstained: Vec<usize>,
}

pub fn fit_baseline(train: &LabeledDataset, kind: BaselineKind) -> Result<BaselineImputerModel> {
    Ok(BaselineImputerModel {
        kind,
        feature_names: train.feature_names().to_vec(),
        feature_means: observed_means(train.features())?,
    })
}

pub fn transform_baseline(model: &BaselineImputerModel, data: &LabeledDataset) -> Result<BaselineOutput> {
    let fm = align_columns(&model.feature_names, data.features())?;
    let data = data.with_features(fm);
    let n = data.n_rows();
    match model.kind {
        BaselineKind::Drop => {
            let (kept, abstained): (Vec<usize>, Vec<usize>) =
                (0..n).partition(|&r| data.features().row_is_complete(r));
            Ok(BaselineOutput {
                data: data.select_rows(&kept),
                kept_rows: kept,
                abstained,
            })
        }
        BaselineKind::Mean => {
            let filled = mean_filled(data.features(), &model.feature_means);
            let fm = FeatureMatrix::new(model.feature_names.clone(), n, filled, vec![true; n * model.feature_names.len()])?;
            Ok(BaselineOutput {
                data: data.with_features(fm),
                kept_rows: (0..n).collect(),
                abstained: Vec::new(),
            })
        }
        BaselineKind::LastValue => {
            let fm = last_value_fill(&data, &model.feature_means)?;
            Ok(BaselineOutput {
                data: data.with_features(fm),
                kept_rows: (0..n).collect(),
                abstained: Vec::new(),
            })
        }
    }
}

/// Carries each subject's most recent observed value forward in time; never
/// crosses subjects; falls back to the training mean.
fn last_value_fill(data: &LabeledDataset, means: &[f64]) -> Result<FeatureMatrix> {
    let fm = data.features();
    let d = fm.n_cols();
    let mut by_subject: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (r, &g) in data.groups().iter().enumerate() {
        by_subject.entry(g).or_default().push(r);
    }
    let mut values = fm.values().to_vec();
    for rows in by_subject.values_mut() {
        rows.sort_by_key(|&r| data.order()[r]);
        let mut last: Vec<Option<f64>> = vec![None; d];
        for &r in rows.iter() {
            for c in 0..d {
                match fm.get(r, c) {
                    Some(v) => last[c] = Some(v),
                    None => values[r * d + c] = last[c].unwrap_or(means[c]),
                }
            }
        }
    }
    FeatureMatrix::new(fm.feature_names().to_vec(), fm.n_rows(), values, vec![true; fm.n_rows() * d])
}

/// Per-feature `mean ± k·SD` band fitted on training cells; values outside
/// become missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFilter {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub k: f64,
}

impl SigmaFilter {
    pub fn fit(train: &FeatureMatrix, k: f64) -> Result<Self> {
        let means = observed_means(train)?;
        let sds = train.column_sds().into_iter().map(|s| s.unwrap_or(0.0)).collect();
        Ok(Self {
            feature_names: train.feature_names().to_vec(),
            means,
            sds,
            k,
        })
    }

    /// Masks out-of-band cells; returns the new matrix and how many were masked.
    pub fn apply(&self, data: &FeatureMatrix) -> Result<(FeatureMatrix, usize)> {
        let mut out = align_columns(&self.feature_names, data)?;
        let mut removed = 0;
        for r in 0..out.n_rows() {
            for c in 0..out.n_cols() {
                if let Some(v) = out.get(r, c) {
                    if (v - self.means[c]).abs() > self.k * self.sds[c] {
                        out.unset(r, c);
                        removed += 1;
                    }
                }
            }
        }
        Ok((out, removed))
    }
}

/// Root mean squared error over the cells where `mask` is false.
pub fn masked_rmse(imputed: &FeatureMatrix, truth: &[f64], mask: &[bool]) -> f64 {
    let (sum, count) = imputed
        .values()
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &m)| !m)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| (s + (a - b).powi(2), n + 1));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}
