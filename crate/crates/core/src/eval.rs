//! Scoring, subject-grouped cross-validation and classifier grid search.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream};
use crate::tree::boosting::{self, GbtParams, GradientBoostedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { k: 10, seed: 0 }
    }
}

/// Mean of the per-class recalls over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::invalid("balanced accuracy of an empty label vector"));
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t > 1 || p > 1 {
            return Err(Error::invalid(format!("labels must be 0 or 1, got {t} / {p}")));
        }
        totals[t as usize] += 1;
        hits[t as usize] += usize::from(t == p);
    }
    let recalls: Vec<f64> = (0..2)
        .filter(|&c| totals[c] > 0)
        .map(|c| hits[c] as f64 / totals[c] as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Mean and population standard deviation (n denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Balanced accuracy per subject, ordered by subject id.
pub fn per_subject_accuracy(y_true: &[u8], y_pred: &[u8], groups: &[u32]) -> Result<Vec<(u32, f64)>> {
    let mut by: BTreeMap<u32, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    for ((&t, &p), &g) in y_true.iter().zip(y_pred).zip(groups) {
        let e = by.entry(g).or_default();
        e.0.push(t);
        e.1.push(p);
    }
    by.into_iter()
        .map(|(g, (t, p))| Ok((g, balanced_accuracy(&t, &p)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Subject-disjoint K-fold split.
///
/// Groups are visited largest first (ties in a seeded random order) and each
/// joins the validation fold with the fewest rows so far (lowest index on
/// ties). Index lists are ascending.
pub fn group_kfold(groups: &[u32], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for &g in groups {
        *sizes.entry(g).or_default() += 1;
    }
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    if k > sizes.len() {
        return Err(Error::TooFewGroups(format!(
            "{k} folds requested but only {} subjects available",
            sizes.len()
        )));
    }
    let mut order: Vec<(u32, usize)> = sizes.into_iter().collect();
    order.shuffle(&mut substream(seed, 0));
    order.sort_by(|a, b| b.1.cmp(&a.1));
    let mut fold_of: BTreeMap<u32, usize> = BTreeMap::new();
    let mut load = vec![0usize; k];
    for (g, size) in order {
        let target = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
        load[target] += size;
        fold_of.insert(g, target);
    }
    let mut folds = vec![
        Fold {
            train: Vec::new(),
            validation: Vec::new()
        };
        k
    ];
    for (i, g) in groups.iter().enumerate() {
        let f = fold_of[g];
        for (j, fold) in folds.iter_mut().enumerate() {
            if j == f {
                fold.validation.push(i);
            } else {
                fold.train.push(i);
            }
        }
    }
    Ok(folds)
}

/// Hyperparameter grid for the boosted classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtGrid {
    pub max_depth: Vec<usize>,
    pub n_rounds: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub subsample: Vec<f64>,
}

impl Default for GbtGrid {
    fn default() -> Self {
        Self {
            max_depth: vec![2, 3, 4],
            n_rounds: vec![50, 100, 200],
            learning_rate: vec![0.1, 0.3],
            subsample: vec![0.8, 1.0],
        }
    }
}

impl GbtGrid {
    pub fn single(params: &GbtParams) -> Self {
        Self {
            max_depth: vec![params.max_depth],
            n_rounds: vec![params.n_rounds],
            learning_rate: vec![params.learning_rate],
            subsample: vec![params.subsample],
        }
    }

    pub fn len(&self) -> usize {
        self.max_depth.len() * self.n_rounds.len() * self.learning_rate.len() * self.subsample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: &GbtParams) -> bool {
        self.max_depth.contains(&p.max_depth)
            && self.n_rounds.contains(&p.n_rounds)
            && self.learning_rate.contains(&p.learning_rate)
            && self.subsample.contains(&p.subsample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub params: GbtParams,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GbtParams,
    pub cv_mean: f64,
    pub cv_std: f64,
    pub fold_scores: Vec<f64>,
    pub cells: Vec<GridCell>,
}

/// Seed of the classifier fitted on fold `fold`.
fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, fold as u64)
}

/// Fold scores of one hyperparameter setting, seeded exactly as in
/// [`grid_search`].
pub fn cross_validate_gbt(data: &LabeledDataset, params: &GbtParams, cv: &CvConfig, seed: u64) -> Result<Vec<f64>> {
    let r = grid_search(data, &GbtGrid::single(params), cv, seed)?;
    Ok(r.fold_scores)
}

/// Exhaustive grid search by subject-grouped balanced accuracy.
///
/// The best cell has the highest mean; ties go to fewer rounds, then
/// shallower trees, then earlier grid entries. For each (depth, rate,
/// subsample) one model per fold is boosted to the largest round count and
/// truncated for the smaller ones, which equals separate fits.
pub fn grid_search(data: &LabeledDataset, grid: &GbtGrid, cv: &CvConfig, seed: u64) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let folds = group_kfold(data.groups(), cv.k, cv.seed)?;
    let x = data.features().to_dense()?;
    let d = data.n_features();
    let y = data.labels();
    let mut rounds = grid.n_rounds.clone();
    rounds.sort_unstable();
    rounds.dedup();
    let max_rounds = *rounds.last().expect("non-empty");

    let mut families = Vec::new();
    for &depth in &grid.max_depth {
        for &lr in &grid.learning_rate {
            for &sub in &grid.subsample {
                families.push(GbtParams {
                    max_depth: depth,
                    n_rounds: max_rounds,
                    learning_rate: lr,
                    subsample: sub,
                    ..GbtParams::default()
                });
            }
        }
    }
    // scores[family][rounds_idx][fold]
    let scores: Vec<Vec<Vec<f64>>> = families
        .iter()
        .map(|family| {
            let per_fold: Vec<Vec<f64>> = folds
                .par_iter()
                .enumerate()
                .map(|(fi, fold)| -> Result<Vec<f64>> {
                    let xt = gather(&x, d, &fold.train);
                    let yt: Vec<u8> = fold.train.iter().map(|&i| y[i]).collect();
                    let yv: Vec<u8> = fold.validation.iter().map(|&i| y[i]).collect();
                    let xv = gather(&x, d, &fold.validation);
                    let full = boosting::fit_dense(&xt, d, &yt, family, fold_seed(seed, fi))?;
                    rounds
                        .iter()
                        .map(|&r| {
                            let pred = predict_labels(&full.truncated(r), &xv);
                            balanced_accuracy(&yv, &pred)
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            Ok((0..rounds.len()).map(|ri| per_fold.iter().map(|f| f[ri]).collect()).collect())
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::with_capacity(grid.len());
    let mut best: Option<usize> = None;
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (fi, family) in families.iter().enumerate() {
        for (ri, _) in rounds.iter().enumerate() {
            candidates.push((ri, family.max_depth, fi));
        }
    }
    // Visiting order encodes the tie-break: fewer rounds, then shallower.
    candidates.sort_by_key(|&(ri, depth, fi)| (ri, depth, fi));
    for (ri, _, fi) in candidates {
        let fold_scores = scores[fi][ri].clone();
        let (mean, std) = mean_std(&fold_scores);
        let params = GbtParams {
            n_rounds: rounds[ri],
            ..families[fi]
        };
        cells.push(GridCell {
            params,
            fold_scores,
            mean,
            std,
        });
        let idx = cells.len() - 1;
        if best.is_none_or(|b| mean > cells[b].mean) {
            best = Some(idx);
        }
    }
    let b = cells[best.expect("non-empty grid")].clone();
    Ok(GridResult {
        best: b.params,
        cv_mean: b.mean,
        cv_std: b.std,
        fold_scores: b.fold_scores,
        cells,
    })
}

pub(crate) fn gather(x: &[f64], d: usize, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * d);
    for &r in rows {
        out.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    out
}

fn predict_labels(model: &GradientBoostedModel, x: &[f64]) -> Vec<u8> {
    model
        .predict_proba_dense(x)
        .into_iter()
        .map(|p| u8::from(p >= 0.5))
        .collect()
}
