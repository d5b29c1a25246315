use std::collections::BTreeSet;

use relearn::dataset::{prune_features, split_complete_rows, stratified_group_split, LabeledDataset};
use relearn::eval::{balanced_accuracy, group_kfold, mean_std, CvConfig, GbtGrid};
use relearn::linear::{fit_bayesian_ridge, BayesianRidgeConfig};
use relearn::experiment::{run_baseline_comparison, run_handler_comparison, run_threshold_sweep, ExperimentConfig};
use relearn::pipeline::{predict, train_relearn, HandlerConfig, PipelineConfig, TrainedPipeline};
use relearn::selection::RfecvConfig;
use relearn::synth::{generate, GeneratorConfig};
use relearn::tree::forest::ForestConfig;
use relearn::tree::isolation::IsolationConfig;
use relearn::Error;

fn fast_pipeline() -> PipelineConfig {
    PipelineConfig {
        threshold: 0.5,
        handler: HandlerConfig {
            isolation: IsolationConfig {
                n_trees: 40,
                ..Default::default()
            },
            rfecv: RfecvConfig {
                step: 2,
                forest: ForestConfig {
                    n_trees: 12,
                    max_depth: 6,
                    ..Default::default()
                },
            },
            ..Default::default()
        },
        cv: CvConfig { k: 4, seed: 0 },
        grid: GbtGrid {
            max_depth: vec![2, 3],
            n_rounds: vec![20, 40],
            learning_rate: vec![0.3],
            subsample: vec![1.0],
        },
    }
}

fn small(seed: u64) -> (LabeledDataset, LabeledDataset) {
    let config = GeneratorConfig {
        n_subjects: 16,
        windows_per_subject: 16,
        n_features: 10,
        n_informative: 3,
        seed,
        ..Default::default()
    };
    let (data, _) = generate(&config).unwrap();
    stratified_group_split(&data, 0.75, seed).unwrap()
}

/// A linear discriminant (ridge regression on the 0/1 label) scored with
/// grouped K-fold.
fn linear_cv(data: &LabeledDataset, k: usize, seed: u64) -> f64 {
    let d = data.n_features();
    let x = data.features().to_dense().unwrap();
    let y: Vec<f64> = data.labels().iter().map(|&l| f64::from(l)).collect();
    let mut scores = Vec::new();
    for fold in group_kfold(data.groups(), k, seed).unwrap() {
        let rows = |idx: &[usize]| idx.iter().flat_map(|&i| x[i * d..(i + 1) * d].to_vec()).collect::<Vec<f64>>();
        let yt: Vec<f64> = fold.train.iter().map(|&i| y[i]).collect();
        let model = fit_bayesian_ridge(&rows(&fold.train), d, &yt, BayesianRidgeConfig::default()).unwrap();
        let pred: Vec<u8> = model.predict(&rows(&fold.validation)).unwrap().iter().map(|&p| u8::from(p >= 0.5)).collect();
        let truth: Vec<u8> = fold.validation.iter().map(|&i| data.labels()[i]).collect();
        scores.push(balanced_accuracy(&truth, &pred).unwrap());
    }
    mean_std(&scores).0
}

#[test]
fn task_is_learnable_from_clean_truth() {
    for seed in 0..3 {
        let config = GeneratorConfig {
            n_subjects: 20,
            windows_per_subject: 20,
            class_shift: 1.0,
            seed,
            ..Default::default()
        };
        let (data, truth) = generate(&config).unwrap();
        let clean = data.with_features(truth.values.clone());
        let score = linear_cv(&clean, 5, seed);
        assert!(score >= 0.9, "seed {seed}: {score}");
    }
}

#[test]
fn training_is_bit_reproducible_and_round_trips() {
    let (train, test) = small(3);
    let a = train_relearn(&train, &fast_pipeline(), 11).unwrap();
    let b = train_relearn(&train, &fast_pipeline(), 11).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    let back = TrainedPipeline::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);
    let pa = predict(&a, test.features()).unwrap();
    let pb = predict(&back, test.features()).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn predicts_every_row_and_reports_imputations() {
    let (train, test) = small(5);
    let p = train_relearn(&train, &fast_pipeline(), 0).unwrap();
    let out = predict(&p, test.features()).unwrap();
    assert_eq!(out.rows.len(), test.n_rows());
    let selected = p.handler.selected_features();
    let cols = test.features().resolve_columns(&selected).unwrap();
    for (r, row) in out.rows.iter().enumerate() {
        assert!((0.0..=1.0).contains(&row.probability));
        assert_eq!(row.label, u8::from(row.probability >= 0.5));
        let missing: Vec<&String> = cols
            .iter()
            .zip(&selected)
            .filter(|(&c, _)| !test.features().is_observed(r, c))
            .map(|(_, n)| n)
            .collect();
        assert_eq!(row.imputed_features.iter().collect::<Vec<_>>(), missing);
    }
    assert!(out.rows.iter().any(|r| !r.imputed_features.is_empty()));
}

#[test]
fn summary_counts_are_consistent() {
    let (train, _) = small(7);
    let p = train_relearn(&train, &fast_pipeline(), 2).unwrap();
    let s = &p.summary;
    let (pruned, _) = prune_features(&train, 0.5).unwrap();
    let (v1, v2) = split_complete_rows(&pruned);
    assert_eq!(s.train_rows, train.n_rows());
    assert_eq!(s.pruned_features, pruned.n_features());
    assert_eq!((s.v1_rows, s.v2_rows), (v1.n_rows(), v2.n_rows()));
    assert_eq!(s.v3_rows, s.v1_rows + s.v2_enhanced_rows);
    assert!(s.classifier_rows <= s.v3_rows);
    assert!(s.v2_enhanced_rows <= s.v2_rows);
    assert_eq!(s.final_features, p.handler.feature_mask.n_selected());
    assert_eq!(p.cv_summary.fold_scores.len(), 4);
}

#[test]
fn grid_folds_never_share_subjects() {
    let (train, _) = small(9);
    let cv = fast_pipeline().cv;
    for fold in group_kfold(train.groups(), cv.k, cv.seed).unwrap() {
        let a: BTreeSet<u32> = fold.train.iter().map(|&i| train.groups()[i]).collect();
        let b: BTreeSet<u32> = fold.validation.iter().map(|&i| train.groups()[i]).collect();
        assert!(a.is_disjoint(&b));
    }
}

#[test]
fn empty_pruning_fails_in_prune_stage() {
    let config = GeneratorConfig {
        n_subjects: 8,
        windows_per_subject: 10,
        n_features: 4,
        n_informative: 2,
        missing_rates: vec![0.3; 4],
        ..Default::default()
    };
    let (data, _) = generate(&config).unwrap();
    let mut pipeline = fast_pipeline();
    pipeline.threshold = 0.05;
    let err = train_relearn(&data, &pipeline, 0).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(*stage, "prune");
            assert!(matches!(**source, Error::EmptyFeatureSet { .. }));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(err.to_string().contains("prune"));
}

#[test]
fn too_few_complete_rows_fail_in_initial_handler() {
    let config = GeneratorConfig {
        n_subjects: 8,
        windows_per_subject: 6,
        n_features: 6,
        n_informative: 2,
        missing_rates: vec![0.45; 6],
        missing_coupling: 0.0,
        ..Default::default()
    };
    let (data, _) = generate(&config).unwrap();
    let err = train_relearn(&data, &fast_pipeline(), 0).unwrap_err();
    match err {
        Error::Stage { stage, .. } => assert_eq!(stage, "initial_handler"),
        other => panic!("unexpected {other}"),
    }
}

fn strip_latency(csv: &str, column: &str) -> String {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == column);
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| Some(*i) != idx)
                .map(|(_, c)| c)
                .collect::<Vec<_>>()
                .join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn reports_are_stable_apart_from_timing() {
    let (train, test) = small(4);
    let config = ExperimentConfig {
        pipeline: fast_pipeline(),
        thresholds: vec![0.3, 0.5],
        latency_calls: 20,
        sigma: 3.0,
    };
    let render = |r: &relearn::experiment::ExperimentReport| {
        let mut buf = Vec::new();
        r.write_csv(&mut buf, Some("digest")).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let a = run_threshold_sweep(&train, &test, &config, 1);
    let b = run_threshold_sweep(&train, &test, &config, 1);
    assert_eq!(strip_latency(&render(&a), "overhead_ms"), strip_latency(&render(&b), "overhead_ms"));
    assert!(render(&a).starts_with("# digest\n"));

    let h = run_handler_comparison(&train, &test, &config, 1);
    assert_eq!(h.rows.len(), 4);
    for pair in h.rows.chunks(2) {
        assert_eq!(pair[0].threshold, pair[1].threshold);
        assert_ne!(pair[0].handler, pair[1].handler);
    }

    let base = run_baseline_comparison(&train, &test, &config, 1);
    let again = run_baseline_comparison(&train, &test, &config, 1);
    assert_eq!(render(&base), render(&again));
    for row in &base.rows {
        assert!(row.error.is_none(), "{:?}", row.error);
        let (_, std) = mean_std(&row.cv_folds);
        assert_eq!(row.cv_std, std);
        assert!((0.0..=1.0).contains(&row.cv_mean));
        assert!((0.0..=1.0).contains(&row.inference_mean));
    }
}

#[test]
fn failed_threshold_becomes_an_error_row() {
    let (train, test) = small(2);
    let config = ExperimentConfig {
        pipeline: fast_pipeline(),
        thresholds: vec![0.0, 0.5],
        latency_calls: 5,
        sigma: 3.0,
    };
    let report = run_threshold_sweep(&train, &test, &config, 0);
    assert_eq!(report.rows.len(), 2);
    let mut buf = Vec::new();
    report.write_csv(&mut buf, None).unwrap();
    let text = String::from_utf8(buf).unwrap();
    if report.rows[0].error.is_some() {
        assert!(text.contains("# error 0%"));
        assert!(text.contains("\n0,NA,NA,NA,NA\n"));
    }
    assert!(report.rows[1].error.is_none());
}
