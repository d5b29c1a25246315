//! Gradient-boosted regression trees on the logistic loss.
//!
//! Each round fits a tree to the gradients `p - y` with Newton leaf values
//! `-G / (H + reg_lambda)`, grown level by level with exact split search over
//! presorted feature columns. Per-round row subsampling draws from the
//! substream of the round index, so a model fitted for `r` rounds is exactly
//! the `r`-tree prefix of any longer fit with the same seed.

use serde::{Deserialize, Serialize};

use super::{check_width, dense, midpoint, DecisionTree, Node};
use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::substream;

const MARGIN_CLIP: f64 = 30.0;
const PREVALENCE_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtParams {
    pub max_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    /// Fraction of rows sampled (without replacement) for each round.
    pub subsample: f64,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            n_rounds: 100,
            learning_rate: 0.1,
            subsample: 1.0,
            reg_lambda: 1.0,
            min_child_weight: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostedModel {
    pub trees: Vec<DecisionTree>,
    pub learning_rate: f64,
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    pub n_rounds: usize,
    pub params: GbtParams,
    pub n_features: usize,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z.clamp(-MARGIN_CLIP, MARGIN_CLIP)).exp())
}

impl GradientBoostedModel {
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    /// Probability of class 1, strictly inside (0, 1).
    pub fn predict_proba_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin_row(row))
    }

    pub(crate) fn predict_proba_dense(&self, x: &[f64]) -> Vec<f64> {
        x.chunks_exact(self.n_features.max(1))
            .map(|r| self.predict_proba_row(r))
            .collect()
    }

    /// The model after its first `rounds` boosting rounds.
    pub fn truncated(&self, rounds: usize) -> Self {
        let keep = rounds.min(self.trees.len());
        let mut m = self.clone();
        m.trees.truncate(keep);
        m.n_rounds = keep;
        m.params.n_rounds = keep;
        m
    }
}

pub fn predict_proba(model: &GradientBoostedModel, data: &FeatureMatrix) -> Result<Vec<f64>> {
    if data.n_rows() == 0 {
        return Ok(Vec::new());
    }
    check_width(model.n_features, data)?;
    Ok(model.predict_proba_dense(&dense(data)?))
}

fn validate(params: &GbtParams) -> Result<()> {
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::invalid(format!("learning rate must lie in (0, 1], got {}", params.learning_rate)));
    }
    if !(params.subsample > 0.0 && params.subsample <= 1.0) {
        return Err(Error::invalid(format!("subsample must lie in (0, 1], got {}", params.subsample)));
    }
    if params.reg_lambda < 0.0 || params.min_child_weight < 0.0 {
        return Err(Error::invalid("regularization terms must be non-negative"));
    }
    Ok(())
}

pub fn fit_gbt(data: &FeatureMatrix, labels: &[u8], params: &GbtParams, seed: u64) -> Result<GradientBoostedModel> {
    if labels.len() != data.n_rows() {
        return Err(Error::Shape {
            expected: data.n_rows(),
            got: labels.len(),
        });
    }
    fit_dense(&dense(data)?, data.n_cols(), labels, params, seed)
}

/// One fit per checkpoint round count, all prefixes of a single fit.
pub fn fit_gbt_staged(
    data: &FeatureMatrix,
    labels: &[u8],
    params: &GbtParams,
    seed: u64,
    checkpoints: &[usize],
) -> Result<Vec<GradientBoostedModel>> {
    let longest = checkpoints.iter().copied().max().unwrap_or(0);
    let full = fit_gbt(data, labels, &GbtParams { n_rounds: longest, ..*params }, seed)?;
    Ok(checkpoints.iter().map(|&r| full.truncated(r)).collect())
}

pub(crate) fn fit_dense(x: &[f64], n_cols: usize, y: &[u8], params: &GbtParams, seed: u64) -> Result<GradientBoostedModel> {
    validate(params)?;
    let n = y.len();
    if n == 0 {
        return Err(Error::TooFewRows("boosting needs at least one row".into()));
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    let prevalence = (positives as f64 / n as f64).clamp(PREVALENCE_CLIP, 1.0 - PREVALENCE_CLIP);
    let base_score = (prevalence / (1.0 - prevalence)).ln();
    let mut model = GradientBoostedModel {
        trees: Vec::new(),
        learning_rate: params.learning_rate,
        base_score,
        n_rounds: 0,
        params: *params,
        n_features: n_cols,
    };
    if positives == 0 || positives == n {
        model.params.n_rounds = 0;
        return Ok(model);
    }

    let sorted: Vec<Vec<u32>> = (0..n_cols)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize * n_cols + f].total_cmp(&x[b as usize * n_cols + f]));
            idx
        })
        .collect();
    let mut margin = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let n_sample = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let mut builder = LevelBuilder::new(x, n, n_cols, &sorted, params);
    for round in 0..params.n_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let in_sample: Option<Vec<bool>> = (n_sample < n).then(|| {
            let mut rng = substream(seed, round as u64);
            let mut mask = vec![false; n];
            rand::seq::index::sample(&mut rng, n, n_sample)
                .into_iter()
                .for_each(|i| mask[i] = true);
            mask
        });
        let tree = builder.build(&grad, &hess, in_sample.as_deref());
        for (i, m) in margin.iter_mut().enumerate() {
            *m += params.learning_rate * tree.predict_row(&x[i * n_cols..(i + 1) * n_cols]);
        }
        model.trees.push(tree);
    }
    model.n_rounds = model.trees.len();
    Ok(model)
}

#[derive(Clone, Copy, Default)]
struct ScanState {
    g_left: f64,
    h_left: f64,
    last: f64,
    seen: bool,
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
    g_left: f64,
    h_left: f64,
}

struct LevelBuilder<'a> {
    x: &'a [f64],
    n_cols: usize,
    sorted: &'a [Vec<u32>],
    params: &'a GbtParams,
    node_of: Vec<u32>,
}

const INACTIVE: u32 = u32::MAX;

impl<'a> LevelBuilder<'a> {
    fn new(x: &'a [f64], n_rows: usize, n_cols: usize, sorted: &'a [Vec<u32>], params: &'a GbtParams) -> Self {
        Self {
            x,
            n_cols,
            sorted,
            params,
            node_of: vec![INACTIVE; n_rows],
        }
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.reg_lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.reg_lambda)
    }

    fn build(&mut self, grad: &[f64], hess: &[f64], in_sample: Option<&[bool]>) -> DecisionTree {
        let n = grad.len();
        let (mut g_root, mut h_root) = (0.0, 0.0);
        for i in 0..n {
            if in_sample.is_none_or(|m| m[i]) {
                self.node_of[i] = 0;
                g_root += grad[i];
                h_root += hess[i];
            } else {
                self.node_of[i] = INACTIVE;
            }
        }
        let mut nodes = vec![Node::leaf(self.leaf_value(g_root, h_root))];
        let mut stats = vec![(g_root, h_root)];
        let mut frontier = vec![0u32];
        let mut slot_of: Vec<u32> = Vec::new();
        let mut states: Vec<ScanState> = Vec::new();
        let mut best: Vec<Option<Best>> = Vec::new();

        for _depth in 0..self.params.max_depth {
            if frontier.is_empty() || self.n_cols == 0 {
                break;
            }
            slot_of.clear();
            slot_of.resize(nodes.len(), INACTIVE);
            for (s, &id) in frontier.iter().enumerate() {
                slot_of[id as usize] = s as u32;
            }
            best.clear();
            best.resize(frontier.len(), None);
            for f in 0..self.n_cols {
                states.clear();
                states.resize(frontier.len(), ScanState::default());
                for &i in &self.sorted[f] {
                    let i = i as usize;
                    let id = self.node_of[i];
                    if id == INACTIVE {
                        continue;
                    }
                    let slot = slot_of[id as usize];
                    if slot == INACTIVE {
                        continue;
                    }
                    let slot = slot as usize;
                    let v = self.x[i * self.n_cols + f];
                    let st = states[slot];
                    if st.seen && v > st.last {
                        let (g, h) = stats[frontier[slot] as usize];
                        let (gl, hl) = (st.g_left, st.h_left);
                        let (gr, hr) = (g - gl, h - hl);
                        if hl >= self.params.min_child_weight && hr >= self.params.min_child_weight {
                            let gain = self.score(gl, hl) + self.score(gr, hr) - self.score(g, h);
                            if best[slot].is_none_or(|b| gain > b.gain) {
                                best[slot] = Some(Best {
                                    gain,
                                    feature: f,
                                    threshold: midpoint(st.last, v),
                                    g_left: gl,
                                    h_left: hl,
                                });
                            }
                        }
                    }
                    let st = &mut states[slot];
                    st.g_left += grad[i];
                    st.h_left += hess[i];
                    st.last = v;
                    st.seen = true;
                }
            }

            let mut next = Vec::new();
            for (slot, &id) in frontier.iter().enumerate() {
                let Some(b) = best[slot] else { continue };
                if b.gain <= 1e-12 {
                    continue;
                }
                let (g, h) = stats[id as usize];
                let l = nodes.len() as u32;
                nodes.push(Node::leaf(self.leaf_value(b.g_left, b.h_left)));
                nodes.push(Node::leaf(self.leaf_value(g - b.g_left, h - b.h_left)));
                stats.push((b.g_left, b.h_left));
                stats.push((g - b.g_left, h - b.h_left));
                nodes[id as usize] = Node {
                    feature: Some(b.feature as u32),
                    threshold: b.threshold,
                    left: l,
                    right: l + 1,
                    value: 0.0,
                };
                next.push(l);
                next.push(l + 1);
            }
            if next.is_empty() {
                break;
            }
            for i in 0..n {
                let id = self.node_of[i];
                if id == INACTIVE {
                    continue;
                }
                let node = nodes[id as usize];
                if let Some(f) = node.feature {
                    self.node_of[i] = if self.x[i * self.n_cols + f as usize] < node.threshold {
                        node.left
                    } else {
                        node.right
                    };
                }
            }
            frontier = next;
        }
        DecisionTree {
            nodes,
            max_depth: self.params.max_depth,
        }
    }
}

/// Mean logistic loss of a model on dense data.
pub fn log_loss(model: &GradientBoostedModel, data: &FeatureMatrix, labels: &[u8]) -> Result<f64> {
    let p = predict_proba(model, data)?;
    Ok(p.iter()
        .zip(labels)
        .map(|(&p, &y)| if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / labels.len().max(1) as f64)
}
