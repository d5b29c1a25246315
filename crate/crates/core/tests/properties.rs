use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use relearn::dataset::{prune_features, split_complete_rows, stratified_group_split, FeatureMatrix, LabeledDataset};
use relearn::eval::{balanced_accuracy, group_kfold, mean_std};
use relearn::impute::{fit_baseline, fit_iterative_imputer, transform_baseline, BaselineKind, ImputerConfig};
use relearn::linear::posterior_mean;
use relearn::selection::{apply_mask, fit_rfecv, RfecvConfig};
use relearn::synth::{generate, GeneratorConfig, OutlierUnit};
use relearn::tree::boosting::{fit_gbt, log_loss, GbtParams};
use relearn::tree::forest::{fit_random_forest, ForestConfig};
use relearn::tree::isolation::{fit_isolation_forest, score_outliers, IsolationConfig};

fn names(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

/// A labeled dataset with `n_subj` subjects of `w` rows each and the given
/// cells hidden.
fn dataset(values: Vec<f64>, hidden: Vec<bool>, d: usize, n_subj: usize) -> LabeledDataset {
    let n = values.len() / d;
    let fm = FeatureMatrix::new(names(d), n, values, hidden.iter().map(|h| !h).collect()).unwrap();
    let labels = (0..n).map(|r| (r % 2) as u8).collect();
    let groups = (0..n).map(|r| (r % n_subj) as u32).collect();
    let order = (0..n).map(|r| (r / n_subj) as i64).collect();
    LabeledDataset::new(fm, labels, groups, order).unwrap()
}

fn matrix_strategy(max_rows: usize, max_cols: usize, hide: f64) -> impl Strategy<Value = (Vec<f64>, Vec<bool>, usize)> {
    (4..=max_rows, 1..=max_cols).prop_flat_map(move |(n, d)| {
        (
            prop::collection::vec(-100.0..100.0f64, n * d),
            prop::collection::vec(prop::bool::weighted(hide), n * d),
            Just(d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pruning_is_monotone_in_threshold((values, hidden, d) in matrix_strategy(30, 8, 0.4), t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
        let data = dataset(values, hidden, d, 4);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = prune_features(&data, lo);
        let b = prune_features(&data, hi);
        if let Ok((pa, ra)) = a {
            let (pb, rb) = b.expect("a larger threshold keeps at least as much");
            let kept_b: BTreeSet<_> = rb.kept.iter().collect();
            prop_assert!(ra.kept.iter().all(|k| kept_b.contains(k)));
            let complete = |p: &LabeledDataset| (0..p.n_rows()).filter(|&r| p.features().row_is_complete(r)).count();
            prop_assert!(complete(&pa) >= complete(&pb));
        }
    }

    #[test]
    fn complete_split_partitions_rows((values, hidden, d) in matrix_strategy(30, 6, 0.2)) {
        let data = dataset(values, hidden, d, 3);
        let (v1, v2) = split_complete_rows(&data);
        prop_assert_eq!(v1.n_rows() + v2.n_rows(), data.n_rows());
        prop_assert!(v1.features().is_complete());
        prop_assert!((0..v2.n_rows()).all(|r| !v2.features().row_is_complete(r)));
        let key = |p: &LabeledDataset, r: usize| (p.groups()[r], p.order()[r]);
        let mut got: Vec<_> = (0..v1.n_rows()).map(|r| key(&v1, r)).chain((0..v2.n_rows()).map(|r| key(&v2, r))).collect();
        let mut want: Vec<_> = (0..data.n_rows()).map(|r| key(&data, r)).collect();
        got.sort_unstable();
        want.sort_unstable();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn group_split_is_subject_disjoint(n_subj in 2usize..30, w in 1usize..6, frac in 0.05..0.95f64, seed in any::<u64>()) {
        let n = n_subj * w;
        let data = dataset(vec![0.0; n], vec![false; n], 1, n_subj);
        let (train, test) = stratified_group_split(&data, frac, seed).unwrap();
        let a: BTreeSet<u32> = train.subjects().into_iter().collect();
        let b: BTreeSet<u32> = test.subjects().into_iter().collect();
        prop_assert!(a.is_disjoint(&b));
        prop_assert_eq!(a.len() + b.len(), n_subj);
        prop_assert_eq!(train.n_rows() + test.n_rows(), n);
    }

    #[test]
    fn group_kfold_partitions(groups in prop::collection::vec(0u32..25, 2..200), k in 2usize..8, seed in any::<u64>()) {
        let n_groups = groups.iter().collect::<BTreeSet<_>>().len();
        let folds = group_kfold(&groups, k, seed);
        if k > n_groups {
            prop_assert!(folds.is_err());
            return Ok(());
        }
        let folds = folds.unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0usize; groups.len()];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.validation.len(), groups.len());
            let vg: BTreeSet<u32> = f.validation.iter().map(|&i| groups[i]).collect();
            let tg: BTreeSet<u32> = f.train.iter().map(|&i| groups[i]).collect();
            prop_assert!(vg.is_disjoint(&tg));
            for &i in &f.validation {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn balanced_accuracy_identities(y in prop::collection::vec(0u8..2, 1..300), p in prop::collection::vec(0u8..2, 300)) {
        let p = &p[..y.len()];
        prop_assert_eq!(balanced_accuracy(&y, &y).unwrap(), 1.0);
        let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
        prop_assert_eq!(balanced_accuracy(&y, p).unwrap(), balanced_accuracy(&flip(&y), &flip(p)).unwrap());
    }

    #[test]
    fn std_is_population_formula(v in prop::collection::vec(0.0..1.0f64, 1..20)) {
        let (m, s) = mean_std(&v);
        let n = v.len() as f64;
        let oracle = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        prop_assert!((s - oracle).abs() <= 1e-15);
    }

    #[test]
    fn imputers_preserve_observed_and_complete((values, hidden, d) in matrix_strategy(40, 5, 0.25)) {
        let data = dataset(values, hidden, d, 4);
        let fm = data.features();
        if fm.column_means().iter().any(|m| m.is_none()) {
            return Ok(());
        }
        let it = fit_iterative_imputer(fm, &ImputerConfig::default()).unwrap();
        let a = it.transform(fm).unwrap();
        prop_assert!(a.is_complete());
        prop_assert_eq!(it.transform(&a).unwrap(), a.clone());
        for kind in [BaselineKind::Mean, BaselineKind::LastValue, BaselineKind::Drop] {
            let model = fit_baseline(&data, kind).unwrap();
            let out = transform_baseline(&model, &data).unwrap();
            prop_assert!(out.data.features().is_complete());
            if kind == BaselineKind::Mean {
                let again = transform_baseline(&model, &out.data).unwrap();
                prop_assert_eq!(again.data.features(), out.data.features());
            }
            if kind == BaselineKind::Drop {
                prop_assert_eq!(out.kept_rows.len() + out.abstained.len(), data.n_rows());
            }
            for (i, &r) in out.kept_rows.iter().enumerate() {
                for c in 0..d {
                    if fm.is_observed(r, c) {
                        prop_assert_eq!(out.data.features().get(i, c).unwrap().to_bits(), fm.get(r, c).unwrap().to_bits());
                    }
                }
            }
        }
        for r in 0..fm.n_rows() {
            for c in 0..d {
                if let Some(v) = fm.get(r, c) {
                    prop_assert_eq!(a.get(r, c).unwrap().to_bits(), v.to_bits());
                }
            }
        }
    }

    #[test]
    fn ridge_matches_direct_solve(n in 3usize..30, d in 1usize..6, seed in any::<u64>(), alpha in 0.01..100.0f64, lambda in 0.01..100.0f64) {
        let (x, y) = random_problem(n, d, seed);
        let (w, b) = posterior_mean(&x, d, &y, alpha, lambda).unwrap();
        let (ow, ob) = ridge_oracle(&x, d, &y, lambda / alpha);
        for (a, o) in w.iter().zip(&ow) {
            prop_assert!((a - o).abs() <= 1e-8 * o.abs().max(1.0), "{a} vs {o}");
        }
        prop_assert!((b - ob).abs() <= 1e-8 * ob.abs().max(1.0));
    }

    #[test]
    fn ridge_shrinks_with_lambda(n in 3usize..30, d in 1usize..6, seed in any::<u64>(), alpha in 0.1..10.0f64, l1 in 0.01..100.0f64, l2 in 0.01..100.0f64) {
        let (x, y) = random_problem(n, d, seed);
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let norm = |l: f64| posterior_mean(&x, d, &y, alpha, l).unwrap().0.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm(hi) <= norm(lo) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn isolation_scores_in_open_interval((values, _, d) in matrix_strategy(60, 4, 0.0), seed in any::<u64>()) {
        let fm = FeatureMatrix::from_dense(names(d), values.len() / d, values).unwrap();
        let model = fit_isolation_forest(&fm, &IsolationConfig { n_trees: 20, ..Default::default() }, seed).unwrap();
        let (scores, _) = score_outliers(&model, &fm).unwrap();
        prop_assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn boosting_train_loss_never_rises(seed in any::<u64>(), lr in 0.01..0.3f64, depth in 1usize..4) {
        let (x, yr) = random_problem(80, 3, seed);
        let y: Vec<u8> = yr.iter().map(|v| u8::from(*v > 0.0)).collect();
        let fm = FeatureMatrix::from_dense(names(3), 80, x).unwrap();
        let params = GbtParams { max_depth: depth, n_rounds: 30, learning_rate: lr, reg_lambda: 1.0, ..Default::default() };
        let model = fit_gbt(&fm, &y, &params, seed).unwrap();
        let mut prev = f64::INFINITY;
        for r in 0..=30 {
            let loss = log_loss(&model.truncated(r), &fm, &y).unwrap();
            prop_assert!(loss <= prev + 1e-12, "round {r}: {loss} > {prev}");
            prev = loss;
        }
    }

    #[test]
    fn fits_are_reproducible(seed in any::<u64>()) {
        let (x, yr) = random_problem(60, 4, seed);
        let y: Vec<u8> = yr.iter().map(|v| u8::from(*v > 0.0)).collect();
        let fm = FeatureMatrix::from_dense(names(4), 60, x).unwrap();
        let fc = ForestConfig { n_trees: 10, ..Default::default() };
        prop_assert_eq!(fit_random_forest(&fm, &y, &fc, seed).unwrap(), fit_random_forest(&fm, &y, &fc, seed).unwrap());
        let ic = IsolationConfig { n_trees: 10, ..Default::default() };
        prop_assert_eq!(fit_isolation_forest(&fm, &ic, seed).unwrap(), fit_isolation_forest(&fm, &ic, seed).unwrap());
        let gp = GbtParams { n_rounds: 10, subsample: 0.7, ..Default::default() };
        prop_assert_eq!(fit_gbt(&fm, &y, &gp, seed).unwrap(), fit_gbt(&fm, &y, &gp, seed).unwrap());
    }

    #[test]
    fn iterative_fit_ignores_row_order(seed in any::<u64>()) {
        let config = GeneratorConfig {
            n_subjects: 6,
            windows_per_subject: 10,
            n_features: 5,
            n_informative: 2,
            missing_rates: vec![0.2; 5],
            outlier_rate: 0.0,
            seed,
            ..Default::default()
        };
        let (data, _) = generate(&config).unwrap();
        let fm = data.features();
        if fm.column_means().iter().any(|m| m.is_none()) {
            return Ok(());
        }
        let rev: Vec<usize> = (0..fm.n_rows()).rev().collect();
        let a = fit_iterative_imputer(fm, &ImputerConfig::default()).unwrap();
        let b = fit_iterative_imputer(&fm.select_rows(&rev), &ImputerConfig::default()).unwrap();
        prop_assert_eq!(a.regressors.len(), b.regressors.len());
        for (ra, rb) in a.regressors.iter().zip(&b.regressors) {
            for (wa, wb) in ra.model.weights.iter().zip(&rb.model.weights) {
                prop_assert!((wa - wb).abs() <= 1e-8 * wa.abs().max(1.0), "{wa} vs {wb}");
            }
        }
    }

    #[test]
    fn generator_is_deterministic_and_consistent(seed in any::<u64>(), unit in prop_oneof![Just(OutlierUnit::Cell), Just(OutlierUnit::Row)]) {
        let config = GeneratorConfig {
            n_subjects: 5,
            windows_per_subject: 8,
            n_features: 6,
            n_informative: 2,
            outlier_rate: 0.05,
            outlier_unit: unit,
            seed,
            ..Default::default()
        };
        let (a, ta) = generate(&config).unwrap();
        let (b, tb) = generate(&config).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&ta.values, &tb.values);
        prop_assert!(ta.values.is_complete());
        prop_assert!(ta.values.values().iter().all(|v| v.is_finite()));
        for &(r, c) in &ta.outlier_cells {
            prop_assert!(a.features().is_observed(r, c));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn rfecv_ranking_and_mask(seed in any::<u64>(), step in 1usize..4) {
        let config = GeneratorConfig {
            n_subjects: 8,
            windows_per_subject: 10,
            n_features: 6,
            n_informative: 2,
            missing_rates: vec![0.0; 6],
            outlier_rate: 0.0,
            seed,
            ..Default::default()
        };
        let (data, _) = generate(&config).unwrap();
        let rc = RfecvConfig { step, forest: ForestConfig { n_trees: 8, max_depth: 5, ..Default::default() } };
        let mask = fit_rfecv(&data, &rc, &relearn::eval::CvConfig { k: 3, seed }, seed).unwrap();
        let mut ranks = mask.ranking.clone();
        ranks.sort_unstable();
        prop_assert_eq!(ranks, (1..=6).collect::<Vec<_>>());
        let expected_points = {
            let mut k = 6usize;
            let mut n = 1;
            while k > 1 {
                k -= step.min(k - 1);
                n += 1;
            }
            n
        };
        prop_assert_eq!(mask.cv_curve.len(), expected_points);
        prop_assert!(mask.cv_curve.iter().all(|p| (0.0..=1.0).contains(&p.mean)));
        let once = apply_mask(&mask, &data).unwrap();
        prop_assert_eq!(apply_mask(&mask, &once).unwrap(), once);
    }

    #[test]
    fn forest_importances_follow_column_permutation(seed in any::<u64>()) {
        let (x, yr) = random_problem(80, 4, seed);
        let y: Vec<u8> = yr.iter().map(|v| u8::from(*v > 0.0)).collect();
        let fm = FeatureMatrix::from_dense(names(4), 80, x).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pm = fm.select_columns(&perm);
        let fc = ForestConfig { n_trees: 200, ..Default::default() };
        let a = fit_random_forest(&fm, &y, &fc, seed).unwrap();
        let b = fit_random_forest(&pm, &y, &fc, seed).unwrap();
        for (j, &src) in perm.iter().enumerate() {
            prop_assert!((b.feature_importances[j] - a.feature_importances[src]).abs() < 0.05);
        }
    }
}

/// Random regression problem with a linear signal plus noise.
fn random_problem(n: usize, d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    use rand::{Rng as _, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let w: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..n)
        .map(|i| x[i * d..(i + 1) * d].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.5..0.5))
        .collect();
    (x, y)
}

/// Ridge on centered data via a dense normal-equation solve.
fn ridge_oracle(x: &[f64], d: usize, y: &[f64], penalty: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let xm = DMatrix::from_row_slice(n, d, x);
    let means: Vec<f64> = (0..d).map(|j| xm.column(j).mean()).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| xm[(i, j)] - means[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let a = xc.transpose() * &xc + DMatrix::identity(d, d) * penalty;
    let w = a.lu().solve(&(xc.transpose() * yc)).expect("regularized system is invertible");
    let b = ym - means.iter().zip(w.iter()).map(|(m, w)| m * w).sum::<f64>();
    (w.iter().copied().collect(), b)
}
