//! Missingness-aware tabular data.
//!
//! A [`FeatureMatrix`] carries an explicit per-cell observation mask; masked
//! cells hold `NaN` as payload and are never read by any statistic. A
//! [`LabeledDataset`] adds binary labels, subject identifiers and a per-subject
//! time index. This module also hosts feature pruning, the complete/incomplete
//! row split, and the subject-disjoint stratified train/test split.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Rectangular table of real-valued features with a missingness mask.
///
/// Equality compares names, shape, mask and the bits of observed cells.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    names: Vec<String>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl PartialEq for FeatureMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.names == other.names
            && self.mask == other.mask
            && self
                .values
                .iter()
                .zip(&other.values)
                .zip(&self.mask)
                .all(|((a, b), &m)| !m || a.to_bits() == b.to_bits())
    }
}

impl FeatureMatrix {
    /// Builds a matrix from row-major values and a mask (`true` = observed).
    ///
    /// Observed cells must be finite. The payload of masked cells is discarded.
    pub fn new(names: Vec<String>, n_rows: usize, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n_cols = names.len();
        check_unique(&names)?;
        if values.len() != n_rows * n_cols {
            return Err(Error::Shape {
                expected: n_rows * n_cols,
                got: values.len(),
            });
        }
        if mask.len() != values.len() {
            return Err(Error::Shape {
                expected: values.len(),
                got: mask.len(),
            });
        }
        let mut values = values;
        for (i, (v, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if m {
                if !v.is_finite() {
                    return Err(Error::Parse {
                        record: i / n_cols.max(1),
                        message: format!("non-finite observed value in column `{}`", names[i % n_cols]),
                    });
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            names,
            values,
            mask,
        })
    }

    /// Builds a matrix where `NaN` marks a missing cell.
    pub fn from_dense(names: Vec<String>, n_rows: usize, values: Vec<f64>) -> Result<Self> {
        let mask = values.iter().map(|v| !v.is_nan()).collect();
        Self::new(names, n_rows, values, mask)
    }

    /// Builds a matrix from rows of optional values.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n_cols = names.len();
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        let mut mask = Vec::with_capacity(rows.len() * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::Shape {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            for cell in row {
                values.push(cell.unwrap_or(f64::NAN));
                mask.push(cell.is_some());
            }
        }
        Self::new(names, rows.len(), values, mask)
    }

    /// Matrix with no rows.
    pub fn empty(names: Vec<String>) -> Result<Self> {
        Self::new(names, 0, Vec::new(), Vec::new())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// The observed value of a cell, or `None` when masked.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.n_cols + col;
        self.mask[i].then_some(self.values[i])
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.n_cols + col]
    }

    /// Raw row payload; masked cells read as `NaN`.
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        &self.mask[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn row_is_complete(&self, row: usize) -> bool {
        self.row_mask(row).iter().all(|&m| m)
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn missing_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    pub fn missing_count(&self, col: usize) -> usize {
        (0..self.n_rows).filter(|&r| !self.is_observed(r, col)).count()
    }

    /// Fraction of rows where the column is masked (0 for an empty matrix).
    pub fn missing_fraction(&self, col: usize) -> f64 {
        if self.n_rows == 0 {
            0.0
        } else {
            self.missing_count(col) as f64 / self.n_rows as f64
        }
    }

    /// Observed values of one column, in row order.
    pub fn observed_column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).filter_map(|r| self.get(r, col)).collect()
    }

    /// Mean of observed cells per column; `None` for never-observed columns.
    pub fn column_means(&self) -> Vec<Option<f64>> {
        (0..self.n_cols)
            .map(|c| {
                let obs = self.observed_column(c);
                (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
            })
            .collect()
    }

    /// Population standard deviation of observed cells per column.
    pub fn column_sds(&self) -> Vec<Option<f64>> {
        self.column_means()
            .into_iter()
            .enumerate()
            .map(|(c, mean)| {
                let mean = mean?;
                let obs = self.observed_column(c);
                let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / obs.len() as f64;
                Some(var.sqrt())
            })
            .collect()
    }

    pub(crate) fn unset(&mut self, row: usize, col: usize) {
        let i = row * self.n_cols + col;
        self.values[i] = f64::NAN;
        self.mask[i] = false;
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        let mut mask = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
            mask.extend_from_slice(self.row_mask(r));
        }
        Self {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            names: self.names.clone(),
            values,
            mask,
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let n_cols = cols.len();
        let mut values = Vec::with_capacity(self.n_rows * n_cols);
        let mut mask = Vec::with_capacity(self.n_rows * n_cols);
        for r in 0..self.n_rows {
            let base = r * self.n_cols;
            for &c in cols {
                values.push(self.values[base + c]);
                mask.push(self.mask[base + c]);
            }
        }
        Self {
            n_rows: self.n_rows,
            n_cols,
            names: cols.iter().map(|&c| self.names[c].clone()).collect(),
            values,
            mask,
        }
    }

    /// Column indices of `names`, failing on the first absent one.
    pub fn resolve_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        // Common case: `names` is an ordered subsequence of the columns.
        let mut cols = Vec::with_capacity(names.len());
        let mut next = 0;
        for n in names {
            match self.names[next..].iter().position(|c| c == n.as_ref()) {
                Some(i) => {
                    cols.push(next + i);
                    next += i + 1;
                }
                None => break,
            }
        }
        if cols.len() == names.len() {
            return Ok(cols);
        }
        let lookup: HashMap<&str, usize> = self.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        names
            .iter()
            .map(|n| {
                lookup
                    .get(n.as_ref())
                    .copied()
                    .ok_or_else(|| Error::MissingColumn(n.as_ref().to_string()))
            })
            .collect()
    }

    /// Columns selected by name, in the order given.
    pub fn select_named<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        let cols = self.resolve_columns(names)?;
        Ok(self.select_columns(&cols))
    }

    /// Appends the rows of `other`, which must have identical column names.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.names != other.names {
            return Err(Error::invalid("cannot stack matrices with different columns"));
        }
        let mut out = self.clone();
        out.values.extend_from_slice(&other.values);
        out.mask.extend_from_slice(&other.mask);
        out.n_rows += other.n_rows;
        Ok(out)
    }

    /// Dense copy of the values, failing if any cell is masked.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let missing = self.missing_cells();
        if missing > 0 {
            return Err(Error::IncompleteData(missing));
        }
        Ok(self.values.clone())
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateColumn(n.clone()));
        }
    }
    Ok(())
}

/// Feature matrix plus labels (stress = 1, control = 0), subject ids and a
/// per-subject time index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    labels: Vec<u8>,
    groups: Vec<u32>,
    order: Vec<i64>,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Vec<u8>, groups: Vec<u32>, order: Vec<i64>) -> Result<Self> {
        let n = features.n_rows();
        for len in [labels.len(), groups.len(), order.len()] {
            if len != n {
                return Err(Error::Shape { expected: n, got: len });
            }
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Parse {
                record: i,
                message: format!("label must be 0 or 1, got {}", labels[i]),
            });
        }
        let mut seen: HashSet<(u32, i64)> = HashSet::with_capacity(n);
        for (i, (&g, &t)) in groups.iter().zip(&order).enumerate() {
            if !seen.insert((g, t)) {
                return Err(Error::Parse {
                    record: i,
                    message: format!("time index {t} repeated for subject {g}"),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            groups,
            order,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn order(&self) -> &[i64] {
        &self.order
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_cols()
    }

    pub fn feature_names(&self) -> &[String] {
        self.features.feature_names()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }

    /// Distinct subject ids in ascending order.
    pub fn subjects(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.groups.clone();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            groups: rows.iter().map(|&r| self.groups[r]).collect(),
            order: rows.iter().map(|&r| self.order[r]).collect(),
        }
    }

    pub fn select_named<S: AsRef<str>>(&self, names: &[S]) -> Result<Self> {
        Ok(self.with_features(self.features.select_named(names)?))
    }

    /// Same rows with a replacement feature matrix.
    ///
    /// # Panics
    /// If the row count differs.
    pub fn with_features(&self, features: FeatureMatrix) -> Self {
        assert_eq!(features.n_rows(), self.n_rows(), "row count must be preserved");
        Self {
            features,
            labels: self.labels.clone(),
            groups: self.groups.clone(),
            order: self.order.clone(),
        }
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut groups = self.groups.clone();
        groups.extend_from_slice(&other.groups);
        let mut order = self.order.clone();
        order.extend_from_slice(&other.order);
        Self::new(self.features.vstack(&other.features)?, labels, groups, order)
    }
}

/// Outcome of feature pruning on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub threshold: f64,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    /// Missing fraction of every input feature, keyed by name.
    pub missing_fraction: BTreeMap<String, f64>,
}

impl PruneReport {
    /// Restricts any dataset to the kept columns by name.
    pub fn apply(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        data.select_named(&self.kept)
    }
}

/// Drops features whose missing fraction on `data` exceeds `threshold`.
///
/// A feature with exactly `threshold` missing is kept.
pub fn prune_features(data: &LabeledDataset, threshold: f64) -> Result<(LabeledDataset, PruneReport)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("pruning threshold must lie in (0, 1], got {threshold}")));
    }
    if data.is_empty() {
        return Err(Error::TooFewRows("cannot prune an empty dataset".into()));
    }
    let fm = data.features();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut missing_fraction = BTreeMap::new();
    for (c, name) in fm.feature_names().iter().enumerate() {
        let frac = fm.missing_fraction(c);
        missing_fraction.insert(name.clone(), frac);
        if frac > threshold {
            dropped.push(name.clone());
        } else {
            kept.push(name.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyFeatureSet { threshold });
    }
    let report = PruneReport {
        threshold,
        kept,
        dropped,
        missing_fraction,
    };
    Ok((report.apply(data)?, report))
}

/// Splits rows into fully observed and partially observed parts.
pub fn split_complete_rows(data: &LabeledDataset) -> (LabeledDataset, LabeledDataset) {
    let (complete, incomplete): (Vec<usize>, Vec<usize>) =
        (0..data.n_rows()).partition(|&r| data.features().row_is_complete(r));
    (data.select_rows(&complete), data.select_rows(&incomplete))
}

/// Subject-disjoint train/test split stratified by each subject's majority label.
///
/// The train part receives `floor(n_subjects * train_fraction)` subjects
/// (clamped to leave both parts non-empty), apportioned across classes by
/// largest remainder. Within a class, subjects are visited largest first
/// (seeded shuffle breaks size ties) and each goes to the side whose row
/// count lags its target most.
pub fn stratified_group_split(
    data: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut stats: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (&g, &l) in data.groups().iter().zip(data.labels()) {
        let e = stats.entry(g).or_default();
        if l == 1 {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    let n_subjects = stats.len();
    if n_subjects < 2 {
        return Err(Error::TooFewGroups(format!(
            "a subject-level split needs at least 2 subjects, found {n_subjects}"
        )));
    }
    let target = ((n_subjects as f64 * train_fraction + 1e-9).floor() as usize).clamp(1, n_subjects - 1);

    let mut rng = substream(seed, 0x5751_7);
    let mut by_class: [Vec<(u32, usize)>; 2] = [Vec::new(), Vec::new()];
    for (&g, &(neg, pos)) in &stats {
        let class = usize::from(pos >= neg && pos > 0);
        by_class[class].push((g, neg + pos));
    }

    // Largest-remainder apportionment of the train subject count.
    let exact: Vec<f64> = by_class
        .iter()
        .map(|c| c.len() as f64 * target as f64 / n_subjects as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = target - quota.iter().sum::<usize>();
    let mut classes = [0usize, 1];
    classes.shuffle(&mut rng);
    classes.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &c in classes.iter().cycle().take(4) {
        if leftover == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            leftover -= 1;
        }
    }

    let mut train_subjects = HashSet::new();
    for (class, subjects) in by_class.iter_mut().enumerate() {
        subjects.shuffle(&mut rng);
        subjects.sort_by(|a, b| b.1.cmp(&a.1));
        let total_rows: usize = subjects.iter().map(|s| s.1).sum();
        let n_train = quota[class];
        let n_test = subjects.len() - n_train;
        let (mut train_left, mut test_left) = (n_train, n_test);
        let (mut train_rows, mut test_rows) = (0usize, 0usize);
        for &(g, size) in subjects.iter() {
            let train_deficit = train_fraction * total_rows as f64 - train_rows as f64;
            let test_deficit = (1.0 - train_fraction) * total_rows as f64 - test_rows as f64;
            let to_train = test_left == 0 || (train_left > 0 && train_deficit >= test_deficit);
            if to_train {
                train_subjects.insert(g);
                train_left -= 1;
                train_rows += size;
            } else {
                test_left -= 1;
                test_rows += size;
            }
        }
    }

    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) =
        (0..data.n_rows()).partition(|&r| train_subjects.contains(&data.groups()[r]));
    Ok((data.select_rows(&train_rows), data.select_rows(&test_rows)))
}
