//! Isolation forest outlier detection.
//!
//! Each tree isolates a random subsample with uniformly random feature and
//! threshold choices, up to depth `ceil(log2(subsample))`. A leaf stores the
//! path length it represents: its depth plus `c(size)` for the unresolved
//! points. The anomaly score is `2^(-E[h(x)] / c(subsample))`.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_width, dense, DecisionTree, Node};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsolationConfig {
    pub n_trees: usize,
    pub subsample: usize,
    /// Fraction of training rows flagged as outliers.
    pub contamination: f64,
}

impl Default for IsolationConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: 256,
            contamination: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<DecisionTree>,
    pub subsample_size: usize,
    pub score_threshold: f64,
    pub contamination: f64,
    pub n_features: usize,
}

/// Average unsuccessful-search path length in a binary search tree of `n`
/// points: `2 H(n-1) - 2 (n-1) / n`, with `c(0) = c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let m = n - 1;
    let harmonic = if m <= 100_000 {
        (1..=m).map(|i| 1.0 / i as f64).sum::<f64>()
    } else {
        let m = m as f64;
        m.ln() + 0.577_215_664_901_532_9 + 1.0 / (2.0 * m) - 1.0 / (12.0 * m * m)
    };
    2.0 * harmonic - 2.0 * m as f64 / n as f64
}

impl IsolationForestModel {
    pub fn score_row(&self, row: &[f64]) -> f64 {
        let mean_path = self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64;
        2f64.powf(-mean_path / average_path_length(self.subsample_size))
    }

    pub fn is_inlier_row(&self, row: &[f64]) -> bool {
        self.score_row(row) < self.score_threshold
    }
}

/// Fits an isolation forest; `subsample` is clamped to the row count.
pub fn fit_isolation_forest(data: &FeatureMatrix, config: &IsolationConfig, seed: u64) -> Result<IsolationForestModel> {
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::TooFewRows(format!("isolation forest needs at least 2 rows, got {n}")));
    }
    if !(0.0..=0.5).contains(&config.contamination) {
        return Err(Error::invalid(format!(
            "contamination must lie in [0, 0.5], got {}",
            config.contamination
        )));
    }
    let x = dense(data)?;
    let d = data.n_cols();
    let psi = config.subsample.clamp(2, n);
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees: Vec<DecisionTree> = (0..config.n_trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, t as u64);
            let sample = index::sample(&mut rng, n, psi).into_vec();
            let mut b = IsolationBuilder {
                x: &x,
                n_cols: d,
                limit: height_limit,
                rng,
                nodes: Vec::new(),
            };
            b.build(sample);
            DecisionTree {
                nodes: b.nodes,
                max_depth: height_limit,
            }
        })
        .collect();
    let mut model = IsolationForestModel {
        trees,
        subsample_size: psi,
        score_threshold: 0.5,
        contamination: config.contamination,
        n_features: d,
    };
    let scores: Vec<f64> = x.chunks_exact(d.max(1)).map(|r| model.score_row(r)).collect();
    model.score_threshold = contamination_threshold(&scores, config.contamination);
    Ok(model)
}

/// Threshold so that `round(contamination * n)` of `scores` lie at or above
/// it (exactly, unless scores tie at the cut).
fn contamination_threshold(scores: &[f64], contamination: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let k = (contamination * n as f64).round() as usize;
    if k == 0 {
        (sorted[0] + 1.0) / 2.0
    } else if k >= n {
        sorted[n - 1] / 2.0
    } else if sorted[k - 1] > sorted[k] {
        super::midpoint(sorted[k], sorted[k - 1])
    } else {
        sorted[k - 1]
    }
}

/// Anomaly scores and inlier flags (`score < threshold`) for each row.
pub fn score_outliers(model: &IsolationForestModel, data: &FeatureMatrix) -> Result<(Vec<f64>, Vec<bool>)> {
    if data.n_rows() == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    check_width(model.n_features, data)?;
    let x = dense(data)?;
    let scores: Vec<f64> = x.chunks_exact(model.n_features.max(1)).map(|r| model.score_row(r)).collect();
    let inliers = scores.iter().map(|&s| s < model.score_threshold).collect();
    Ok((scores, inliers))
}

struct IsolationBuilder<'a> {
    x: &'a [f64],
    n_cols: usize,
    limit: usize,
    rng: Rng,
    nodes: Vec<Node>,
}

impl IsolationBuilder<'_> {
    fn build(&mut self, root: Vec<usize>) {
        self.nodes.push(Node::leaf(0.0));
        let mut stack = vec![(0usize, root, 0usize)];
        let mut spans: Vec<(usize, f64, f64)> = Vec::with_capacity(self.n_cols);
        while let Some((id, samples, depth)) = stack.pop() {
            let leaf = Node::leaf(depth as f64 + average_path_length(samples.len()));
            if depth >= self.limit || samples.len() <= 1 {
                self.nodes[id] = leaf;
                continue;
            }
            spans.clear();
            for f in 0..self.n_cols {
                let (lo, hi) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.x[i * self.n_cols + f];
                    (lo.min(v), hi.max(v))
                });
                if hi > lo {
                    spans.push((f, lo, hi));
                }
            }
            if spans.is_empty() {
                self.nodes[id] = leaf;
                continue;
            }
            let (feature, lo, hi) = spans[self.rng.random_range(0..spans.len())];
            let mut threshold = self.rng.random_range(lo..hi);
            if threshold <= lo {
                threshold = super::midpoint(lo, hi);
            }
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
    use rand_distr::{Distribution, StandardNormal};

    /// Direct harmonic-number evaluation.
    fn c_oracle(n: usize) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        let h: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
        2.0 * h - 2.0 * (n as f64 - 1.0) / n as f64
    }

    #[test]
    fn normalizer_small_values() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(0), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        for n in [3, 10, 256, 1000] {
            assert!((average_path_length(n) - c_oracle(n)).abs() < 1e-12);
        }
    }

    fn cluster(seed: u64, n: usize, d: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
    }

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn far_point_scores_highest() {
        let hits = (0..10)
            .filter(|&seed| {
                let mut v = cluster(seed, 300, 3);
                v.extend([10.0, 10.0, 10.0]);
                let fm = FeatureMatrix::from_dense(names(3), 301, v).unwrap();
                let m = fit_isolation_forest(&fm, &IsolationConfig::default(), seed).unwrap();
                let (s, _) = score_outliers(&m, &fm).unwrap();
                s[..300].iter().all(|&c| c < s[300])
            })
            .count();
        assert!(hits >= 9);
    }

    #[test]
    fn contamination_flags_exact_count() {
        let fm = FeatureMatrix::from_dense(names(4), 1000, cluster(1, 1000, 4)).unwrap();
        let m = fit_isolation_forest(&fm, &IsolationConfig::default(), 2).unwrap();
        let (scores, inliers) = score_outliers(&m, &fm).unwrap();
        assert_eq!(inliers.iter().filter(|&&i| !i).count(), 50);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
        assert!(m.score_threshold > 0.0 && m.score_threshold < 1.0);
        assert!(m.trees.iter().all(|t| t.depth() <= 8));
    }

    #[test]
    fn empty_input_and_shape_checks() {
        let fm = FeatureMatrix::from_dense(names(2), 50, cluster(1, 50, 2)).unwrap();
        let m = fit_isolation_forest(&fm, &IsolationConfig::default(), 0).unwrap();
        assert_eq!(m.subsample_size, 50);
        let empty = FeatureMatrix::empty(names(2)).unwrap();
        assert_eq!(score_outliers(&m, &empty).unwrap(), (vec![], vec![]));
        let wrong = FeatureMatrix::from_dense(names(3), 1, vec![0.0; 3]).unwrap();
        assert!(score_outliers(&m, &wrong).is_err());
    }

    #[test]
    fn identical_points_stay_in_bounds() {
        let fm = FeatureMatrix::from_dense(names(2), 10, vec![1.0; 20]).unwrap();
        let m = fit_isolation_forest(&fm, &IsolationConfig::default(), 0).unwrap();
        let (s, _) = score_outliers(&m, &fm).unwrap();
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(contamination_threshold(&[0.9, 0.1, 0.5, 0.3], 0.25), 0.7);
        assert!(contamination_threshold(&[0.9, 0.1], 0.0) > 0.9);
    }
}
