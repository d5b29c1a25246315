//! Random forest classifier with Gini impurity and bootstrap sampling.
//!
//! Importances are the impurity decrease per feature, normalized within each
//! tree, averaged over trees and renormalized to sum to one.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_width, dense, midpoint, DecisionTree, Node};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Compute the out-of-bag accuracy after fitting.
    pub oob_score: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 10,
            min_samples_split: 2,
            oob_score: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub feature_importances: Vec<f64>,
    pub n_features: usize,
    pub oob_score: Option<f64>,
}

impl RandomForestModel {
    /// Mean over trees of the leaf class-1 frequency.
    pub fn predict_proba_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, data: &FeatureMatrix) -> Result<Vec<u8>> {
        check_width(self.n_features, data)?;
        let x = dense(data)?;
        Ok(self.predict_dense(&x))
    }

    pub(crate) fn predict_dense(&self, x: &[f64]) -> Vec<u8> {
        x.chunks_exact(self.n_features.max(1))
            .map(|row| u8::from(self.predict_proba_row(row) >= 0.5))
            .collect()
    }
}

/// Fits a forest on a fully observed matrix.
pub fn fit_random_forest(data: &FeatureMatrix, labels: &[u8], config: &ForestConfig, seed: u64) -> Result<RandomForestModel> {
    if labels.len() != data.n_rows() {
        return Err(Error::Shape {
            expected: data.n_rows(),
            got: labels.len(),
        });
    }
    let x = dense(data)?;
    fit_dense(&x, data.n_cols(), labels, config, seed)
}

pub(crate) fn fit_dense(x: &[f64], n_cols: usize, y: &[u8], config: &ForestConfig, seed: u64) -> Result<RandomForestModel> {
    let n = y.len();
    if n == 0 {
        return Err(Error::TooFewRows("random forest needs at least one row".into()));
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == n {
        return Ok(RandomForestModel {
            trees: vec![DecisionTree::constant(if positives == n { 1.0 } else { 0.0 })],
            feature_importances: vec![0.0; n_cols],
            n_features: n_cols,
            oob_score: None,
        });
    }
    let mtry = ((n_cols as f64).sqrt().floor() as usize).max(1);
    let fitted: Vec<(DecisionTree, Vec<f64>, Vec<usize>)> = (0..config.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t as u64);
            let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = GiniBuilder {
                x,
                n_cols,
                y,
                mtry,
                config,
                rng,
                nodes: Vec::new(),
                importance: vec![0.0; n_cols],
            };
            builder.build(sample.clone());
            let tree = DecisionTree {
                nodes: builder.nodes,
                max_depth: config.max_depth,
            };
            (tree, builder.importance, sample)
        })
        .collect();

    let mut importances = vec![0.0; n_cols];
    for (_, imp, _) in &fitted {
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            for (acc, v) in importances.iter_mut().zip(imp) {
                *acc += v / total;
            }
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        importances.iter_mut().for_each(|v| *v /= total);
    }

    let oob_score = config.oob_score.then(|| oob_accuracy(x, n_cols, y, &fitted)).flatten();
    Ok(RandomForestModel {
        trees: fitted.into_iter().map(|(t, _, _)| t).collect(),
        feature_importances: importances,
        n_features: n_cols,
        oob_score,
    })
}

fn oob_accuracy(x: &[f64], n_cols: usize, y: &[u8], fitted: &[(DecisionTree, Vec<f64>, Vec<usize>)]) -> Option<f64> {
    let n = y.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (tree, _, sample) in fitted {
        let mut in_bag = vec![false; n];
        sample.iter().for_each(|&i| in_bag[i] = true);
        for i in (0..n).filter(|&i| !in_bag[i]) {
            sum[i] += tree.predict_row(&x[i * n_cols..(i + 1) * n_cols]);
            count[i] += 1;
        }
    }
    let scored: Vec<usize> = (0..n).filter(|&i| count[i] > 0).collect();
    if scored.is_empty() {
        return None;
    }
    let correct = scored
        .iter()
        .filter(|&&i| u8::from(sum[i] / count[i] as f64 >= 0.5) == y[i])
        .count();
    Some(correct as f64 / scored.len() as f64)
}

struct GiniBuilder<'a> {
    x: &'a [f64],
    n_cols: usize,
    y: &'a [u8],
    mtry: usize,
    config: &'a ForestConfig,
    rng: Rng,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

/// Sum of squared class counts over node size: n - n * gini.
fn purity(pos: f64, n: f64) -> f64 {
    let neg = n - pos;
    (pos * pos + neg * neg) / n
}

impl GiniBuilder<'_> {
    fn build(&mut self, root: Vec<usize>) {
        self.nodes.push(Node::leaf(0.0));
        let mut stack = vec![(0usize, root, 0usize)];
        let mut pairs: Vec<(f64, u8)> = Vec::new();
        while let Some((id, samples, depth)) = stack.pop() {
            let n = samples.len();
            let pos = samples.iter().filter(|&&i| self.y[i] == 1).count();
            self.nodes[id] = Node::leaf(pos as f64 / n as f64);
            if pos == 0 || pos == n || n < self.config.min_samples_split || depth >= self.config.max_depth {
                continue;
            }
            let mut features = index::sample(&mut self.rng, self.n_cols, self.mtry).into_vec();
            features.sort_unstable();
            let parent = purity(pos as f64, n as f64);
            let mut best: Option<(f64, usize, f64)> = None;
            for &f in &features {
                pairs.clear();
                pairs.extend(samples.iter().map(|&i| (self.x[i * self.n_cols + f], self.y[i])));
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut left_pos = 0.0;
                for k in 0..n - 1 {
                    left_pos += f64::from(pairs[k].1);
                    if pairs[k].0 == pairs[k + 1].0 {
                        continue;
                    }
                    let nl = (k + 1) as f64;
                    let nr = (n - k - 1) as f64;
                    let gain = purity(left_pos, nl) + purity(pos as f64 - left_pos, nr) - parent;
                    if best.is_none_or(|(g, _, _)| gain > g) {
                        best = Some((gain, f, midpoint(pairs[k].0, pairs[k + 1].0)));
                    }
                }
            }
            let Some((gain, feature, threshold)) = best else { continue };
            if gain <= 1e-12 {
                continue;
            }
            self.importance[feature] += gain;
            let (left, right): (Vec<usize>, Vec<usize>) = samples
                .into_iter()
                .partition(|&i| self.x[i * self.n_cols + feature] < threshold);
            let l = self.nodes.len();
            self.nodes.push(Node::leaf(0.0));
            self.nodes.push(Node::leaf(0.0));
            self.nodes[id] = Node {
                feature: Some(feature as u32),
                threshold,
                left: l as u32,
                right: l as u32 + 1,
                value: 0.0,
            };
            stack.push((l + 1, right, depth + 1));
            stack.push((l, left, depth + 1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matrix(n_cols: usize, values: Vec<f64>) -> FeatureMatrix {
        let names = (0..n_cols).map(|i| format!("x{i}")).collect();
        FeatureMatrix::from_dense(names, values.len() / n_cols, values).unwrap()
    }

    #[test]
    fn pure_node_does_not_split() {
        let fm = matrix(1, vec![1.0, 2.0, 3.0]);
        let m = fit_random_forest(&fm, &[1, 1, 1], &ForestConfig::default(), 0).unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(m.feature_importances, vec![0.0]);
        assert_eq!(m.predict(&fm).unwrap(), vec![1, 1, 1]);
    }

    /// Oracle: an exhaustive single-threshold search finds a perfect split on
    /// this data, so a depth-2 forest must fit it exactly.
    #[test]
    fn separable_data_is_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..60 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if (a + 0.3).abs() < 0.05 {
                continue;
            }
            values.extend([a, b]);
            labels.push(u8::from(a > -0.3));
        }
        let perfect = (0..2).any(|f| {
            let mut col: Vec<f64> = values.iter().skip(f).step_by(2).copied().collect();
            col.sort_by(f64::total_cmp);
            col.windows(2).any(|w| {
                let t = (w[0] + w[1]) / 2.0;
                values
                    .chunks(2)
                    .zip(&labels)
                    .all(|(r, &l)| u8::from(r[f] >= t) == l)
            })
        });
        assert!(perfect);
        let fm = matrix(2, values);
        let config = ForestConfig {
            max_depth: 2,
            ..Default::default()
        };
        let m = fit_random_forest(&fm, &labels, &config, 1).unwrap();
        assert_eq!(m.predict(&fm).unwrap(), labels);
    }

    fn informative_problem(seed: u64) -> (FeatureMatrix, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let mut values = Vec::with_capacity(n * 10);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.random_range(0..2u8);
            values.push(f64::from(y) * 1.5 + rng.random_range(-1.0..1.0));
            values.extend((0..9).map(|_| rng.random_range(-1.0..1.0)));
            labels.push(y);
        }
        (matrix(10, values), labels)
    }

    #[test]
    fn informative_feature_has_top_importance() {
        let hits = (0..10)
            .filter(|&seed| {
                let (fm, y) = informative_problem(seed);
                let m = fit_random_forest(&fm, &y, &ForestConfig::default(), seed).unwrap();
                let top = (0..10)
                    .max_by(|&a, &b| m.feature_importances[a].total_cmp(&m.feature_importances[b]))
                    .unwrap();
                top == 0
            })
            .count();
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn importances_normalized_and_deterministic() {
        let (fm, y) = informative_problem(4);
        let config = ForestConfig {
            oob_score: true,
            ..Default::default()
        };
        let a = fit_random_forest(&fm, &y, &config, 9).unwrap();
        let b = fit_random_forest(&fm, &y, &config, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.feature_importances.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.feature_importances.iter().all(|&v| v >= 0.0));
        assert!(a.trees.iter().all(DecisionTree::validate));
        let oob = a.oob_score.unwrap();
        assert!((0.0..=1.0).contains(&oob) && oob > 0.7);
    }

    #[test]
    fn importances_follow_feature_permutation() {
        // With every feature sampled at each split the fit is a deterministic
        // function of column content, so permuting columns permutes importances.
        let (fm, y) = informative_problem(2);
        let fm3 = fm.select_columns(&[0, 1, 2]);
        let perm = [2usize, 0, 1];
        let permuted = fm3.select_columns(&perm);
        let config = ForestConfig {
            n_trees: 1,
            max_depth: 4,
            ..Default::default()
        };
        // sqrt(3) rounds down to one feature per split; widen to all three.
        let full = |m: &FeatureMatrix| {
            let x = m.to_dense().unwrap();
            fit_full_mtry(&x, 3, &y, &config)
        };
        let a = full(&fm3);
        let b = full(&permuted);
        for (j, &src) in perm.iter().enumerate() {
            assert!((b[j] - a[src]).abs() < 1e-12);
        }
    }

    fn fit_full_mtry(x: &[f64], n_cols: usize, y: &[u8], config: &ForestConfig) -> Vec<f64> {
        let n = y.len();
        let mut builder = GiniBuilder {
            x,
            n_cols,
            y,
            mtry: n_cols,
            config,
            rng: substream(0, 0),
            nodes: Vec::new(),
            importance: vec![0.0; n_cols],
        };
        builder.build((0..n).collect());
        builder.importance
    }
}
