//! Decision trees and the three ensembles built on them.
//!
//! All trees share one flat layout: a node array where node 0 is the root.
//! A row goes to `left` when `row[feature] < threshold`, otherwise `right`.
//! Serialized, every node is the 5-tuple
//! `[feature, threshold, left, right, value]` with `feature = -1` marking a
//! leaf (its `value` is the tree output; `threshold`, `left`, `right` are 0).

pub mod boosting;
pub mod forest;
pub mod isolation;

use serde::{Deserialize, Serialize};

pub use boosting::{fit_gbt, fit_gbt_staged, predict_proba, GbtParams, GradientBoostedModel};
pub use forest::{fit_random_forest, ForestConfig, RandomForestModel};
pub use isolation::{average_path_length, fit_isolation_forest, score_outliers, IsolationConfig, IsolationForestModel};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "NodeRepr", into = "NodeRepr")]
pub struct Node {
    /// Split feature, `None` for a leaf.
    pub feature: Option<u32>,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

type NodeRepr = (i64, f64, u32, u32, f64);

impl From<NodeRepr> for Node {
    fn from((f, threshold, left, right, value): NodeRepr) -> Self {
        Node {
            feature: u32::try_from(f).ok(),
            threshold,
            left,
            right,
            value,
        }
    }
}

impl From<Node> for NodeRepr {
    fn from(n: Node) -> Self {
        (n.feature.map_or(-1, i64::from), n.threshold, n.left, n.right, n.value)
    }
}

impl Node {
    pub fn leaf(value: f64) -> Self {
        Node {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl DecisionTree {
    pub fn constant(value: f64) -> Self {
        DecisionTree {
            nodes: vec![Node::leaf(value)],
            max_depth: 0,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return node.value,
                Some(f) => {
                    i = if row[f as usize] < node.threshold {
                        node.left as usize
                    } else {
                        node.right as usize
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Depth of the deepest leaf (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left as usize).max(walk(t, n.right as usize))
            }
        }
        walk(self, 0)
    }

    /// Checks the structural invariants: children exist, leaves finite.
    pub fn validate(&self) -> bool {
        let n = self.nodes.len() as u32;
        !self.nodes.is_empty()
            && self.nodes.iter().all(|node| match node.feature {
                None => node.value.is_finite(),
                Some(_) => node.left < n && node.right < n && node.left != 0 && node.right != 0,
            })
    }
}

/// Split point strictly above `lo` and at most `hi`, for `lo < hi`.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m <= lo || !m.is_finite() {
        hi
    } else {
        m
    }
}

/// Dense row-major copy of a fully observed matrix.
pub(crate) fn dense(data: &FeatureMatrix) -> Result<Vec<f64>> {
    data.to_dense()
}

pub(crate) fn check_width(expected: usize, data: &FeatureMatrix) -> Result<()> {
    if data.n_cols() != expected {
        return Err(Error::Shape {
            expected,
            got: data.n_cols(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_serializes_as_tuple() {
        let t = DecisionTree {
            nodes: vec![
                Node {
                    feature: Some(2),
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    value: 0.0,
                },
                Node::leaf(-1.0),
                Node::leaf(1.0),
            ],
            max_depth: 1,
        };
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"nodes":[[2,0.5,1,2,0.0],[-1,0.0,0,0,-1.0],[-1,0.0,0,0,1.0]],"max_depth":1}"#);
        let back: DecisionTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(back.validate());
        assert_eq!(back.predict_row(&[0.0, 0.0, 0.4]), -1.0);
        assert_eq!(back.predict_row(&[0.0, 0.0, 0.5]), 1.0);
        assert_eq!(back.depth(), 1);
    }

    #[test]
    fn midpoint_separates_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a < m && m <= b);
        assert_eq!(midpoint(1.0, 3.0), 2.0);
    }
}
