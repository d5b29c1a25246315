//! Recursive feature elimination with subject-grouped cross-validation,
//! ranked by random-forest importances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{balanced_accuracy, gather, group_kfold, mean_std, CvConfig};
use crate::rng::derive_seed;
use crate::tree::forest::{self, ForestConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfecvConfig {
    /// Features removed per elimination round.
    pub step: usize,
    pub forest: ForestConfig,
}

impl Default for RfecvConfig {
    fn default() -> Self {
        Self {
            step: 1,
            forest: ForestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_features: usize,
    pub mean: f64,
    pub std: f64,
}

/// Outcome of feature selection, keyed by feature name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub feature_names: Vec<String>,
    pub selected: Vec<bool>,
    /// Elimination rank: 1 for the last surviving feature, `d` for the first
    /// one removed.
    pub ranking: Vec<usize>,
    /// CV score per evaluated feature count, largest count first.
    pub cv_curve: Vec<CurvePoint>,
}

impl FeatureMask {
    /// Mask that keeps every feature.
    pub fn all(names: &[String]) -> Self {
        Self {
            feature_names: names.to_vec(),
            selected: vec![true; names.len()],
            ranking: vec![1; names.len()],
            cv_curve: Vec::new(),
        }
    }

    pub fn selected_names(&self) -> Vec<String> {
        self.feature_names
            .iter()
            .zip(&self.selected)
            .filter(|(_, &s)| s)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn n_selected(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Recursive feature elimination.
///
/// Starting from every column, the current set is scored by grouped K-fold
/// balanced accuracy of a random forest, then the `step` columns with the
/// lowest importance (forest fitted on all rows) are removed, down to one
/// column. The kept count maximises the mean CV score, ties to fewer columns.
pub fn fit_rfecv(data: &LabeledDataset, config: &RfecvConfig, cv: &CvConfig, seed: u64) -> Result<FeatureMask> {
    let d = data.n_features();
    let names = data.feature_names().to_vec();
    if d < 2 {
        return Ok(FeatureMask::all(&names));
    }
    if config.step == 0 {
        return Err(Error::invalid("RFECV step must be at least 1"));
    }
    let x = data.features().to_dense()?;
    let y = data.labels();
    let folds = group_kfold(data.groups(), cv.k, cv.seed)?;
    let fold_data: Vec<(Vec<usize>, Vec<u8>, Vec<u8>)> = folds
        .iter()
        .map(|f| {
            (
                f.train.clone(),
                f.train.iter().map(|&i| y[i]).collect(),
                f.validation.iter().map(|&i| y[i]).collect(),
            )
        })
        .collect();

    let mut current: Vec<usize> = (0..d).collect();
    let mut ranking = vec![0usize; d];
    let mut curve = Vec::new();
    let mut next_rank = d;
    loop {
        let xs = select_columns(&x, d, &current);
        let k = current.len();
        let scores: Vec<f64> = folds
            .par_iter()
            .zip(&fold_data)
            .enumerate()
            .map(|(fi, (fold, (_, yt, yv)))| -> Result<f64> {
                let xt = gather(&xs, k, &fold.train);
                let xv = gather(&xs, k, &fold.validation);
                let model = forest::fit_dense(&xt, k, yt, &config.forest, derive_seed(seed, fi as u64))?;
                balanced_accuracy(yv, &model.predict_dense(&xv))
            })
            .collect::<Result<_>>()?;
        let (mean, std) = mean_std(&scores);
        curve.push(CurvePoint {
            n_features: k,
            mean,
            std,
        });
        if k == 1 {
            ranking[current[0]] = 1;
            break;
        }
        let full = forest::fit_dense(&xs, k, y, &config.forest, derive_seed(seed, u64::MAX))?;
        let mut order: Vec<usize> = (0..k).collect();
        // Weakest first; on equal importance the later column goes first.
        order.sort_by(|&a, &b| {
            full.feature_importances[a]
                .total_cmp(&full.feature_importances[b])
                .then(b.cmp(&a))
        });
        let n_drop = config.step.min(k - 1);
        let mut drop: Vec<usize> = order[..n_drop].to_vec();
        for &pos in &drop {
            ranking[current[pos]] = next_rank;
            next_rank -= 1;
        }
        drop.sort_unstable();
        current = current
            .iter()
            .enumerate()
            .filter(|(pos, _)| drop.binary_search(pos).is_err())
            .map(|(_, &c)| c)
            .collect();
    }

    let best = curve
        .iter()
        .min_by(|a, b| b.mean.total_cmp(&a.mean).then(a.n_features.cmp(&b.n_features)))
        .expect("non-empty curve")
        .n_features;
    Ok(FeatureMask {
        feature_names: names,
        selected: ranking.iter().map(|&r| r <= best).collect(),
        ranking,
        cv_curve: curve,
    })
}

/// Keeps the selected columns, in mask order, looked up by name.
pub fn apply_mask(mask: &FeatureMask, data: &LabeledDataset) -> Result<LabeledDataset> {
    data.select_named(&mask.selected_names())
}

fn select_columns(x: &[f64], d: usize, cols: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() / d.max(1) * cols.len());
    for row in x.chunks_exact(d) {
        out.extend(cols.iter().map(|&c| row[c]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureMatrix;
    use crate::synth::{generate, GeneratorConfig};

    fn small_config() -> RfecvConfig {
        RfecvConfig {
            step: 1,
            forest: ForestConfig {
                n_trees: 20,
                max_depth: 6,
                ..Default::default()
            },
        }
    }

    #[test]
    fn finds_informative_features() {
        let mut hits = 0;
        for seed in 0..10 {
            let config = GeneratorConfig {
                n_subjects: 16,
                windows_per_subject: 20,
                n_features: 10,
                n_informative: 3,
                latent_dim: 2,
                missing_rates: vec![0.0; 10],
                burst_prob: 0.0,
                outlier_rate: 0.0,
                class_shift: 1.5,
                seed,
                ..Default::default()
            };
            let (data, truth) = generate(&config).unwrap();
            let mask = fit_rfecv(&data, &small_config(), &CvConfig { k: 4, seed }, seed).unwrap();
            let chosen = mask.selected_names();
            if truth.informative.iter().all(|f| chosen.contains(f)) {
                hits += 1;
            }
            let mut ranks = mask.ranking.clone();
            ranks.sort_unstable();
            assert_eq!(ranks, (1..=10).collect::<Vec<_>>());
            assert_eq!(mask.cv_curve.len(), 10);
            let best = mask
                .cv_curve
                .iter()
                .map(|p| p.mean)
                .fold(f64::NEG_INFINITY, f64::max);
            let chosen_point = mask.cv_curve.iter().find(|p| p.n_features == mask.n_selected()).unwrap();
            assert_eq!(chosen_point.mean, best);
            assert!(mask
                .cv_curve
                .iter()
                .filter(|p| p.mean == best)
                .all(|p| p.n_features >= mask.n_selected()));
        }
        assert!(hits >= 9, "{hits}");
    }

    #[test]
    fn single_feature_is_trivial() {
        let fm = FeatureMatrix::from_dense(vec!["a".into()], 2, vec![1.0, 2.0]).unwrap();
        let data = LabeledDataset::new(fm, vec![0, 1], vec![0, 1], vec![0, 0]).unwrap();
        let mask = fit_rfecv(&data, &small_config(), &CvConfig::default(), 0).unwrap();
        assert_eq!(mask.selected, vec![true]);
        assert_eq!(mask.ranking, vec![1]);
    }

    #[test]
    fn apply_mask_by_name() {
        let names: Vec<String> = ["f1", "f2", "f3"].iter().map(|s| s.to_string()).collect();
        let fm = FeatureMatrix::from_dense(names.clone(), 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let data = LabeledDataset::new(fm, vec![0, 1], vec![0, 1], vec![0, 0]).unwrap();
        let mask = FeatureMask {
            feature_names: names.clone(),
            selected: vec![true, false, true],
            ranking: vec![1, 3, 2],
            cv_curve: Vec::new(),
        };
        let out = apply_mask(&mask, &data).unwrap();
        assert_eq!(out.feature_names(), &["f1".to_string(), "f3".to_string()]);
        assert_eq!(out.n_rows(), 2);
        assert_eq!(apply_mask(&mask, &out).unwrap(), out);
        assert_eq!(apply_mask(&FeatureMask::all(&names), &data).unwrap(), data);
        let short = data.select_named(&["f1"]).unwrap();
        assert!(apply_mask(&mask, &short).is_err());
    }
}
