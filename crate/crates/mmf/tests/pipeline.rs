//! End-to-end training pipeline tests on synthetic tabular data.

use mmf::automl::{predict_bundle, train_pipeline, TrainMode};
use mmf::features::{FeatureTable, RowId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Grouped synthetic table: target depends on two of four features plus
/// group-level noise, everything in the DISTS-like [0,1] range.
fn synthetic_table(n_groups: usize, rows_per_group: usize, seed: u64) -> FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 4];
    let mut target = Vec::new();
    for g in 0..n_groups {
        let group_effect = 0.05 * (rng.gen::<f64>() - 0.5);
        for r in 0..rows_per_group {
            ids.push(RowId {
                sample_id: format!("g{g:03}"),
                model_id: format!("m{r}"),
                group_id: format!("g{g:03}"),
            });
            let x0: f64 = rng.gen();
            let x1: f64 = rng.gen();
            let x2: f64 = rng.gen();
            let x3: f64 = rng.gen();
            cols[0].push(x0);
            cols[1].push(x1);
            cols[2].push(x2);
            cols[3].push(x3);
            let y = (0.3 * x0 + 0.15 * (x1 - 0.5).abs() + group_effect
                + 0.02 * (rng.gen::<f64>() - 0.5))
                .clamp(0.0, 1.0);
            target.push(y);
        }
    }
    FeatureTable::new(
        vec!["f0".into(), "f1".into(), "f2".into(), "f3".into()],
        ids,
        cols,
        Some(target),
    )
    .unwrap()
}

#[test]
fn fast_mode_trains_three_base_candidates() {
    let table = synthetic_table(30, 3, 1);
    let bundle = train_pipeline(&table, 600.0, 42, TrainMode::Fast, "core", "tiny-v1").unwrap();
    assert_eq!(bundle.report.per_model_valid_rmse.len(), 3);
    assert_eq!(bundle.report.mode, "fast");
    assert!(!bundle.members.is_empty());
    assert!(bundle.report.test_mae.is_finite());
    // 30 groups < 50 -> grouped holdout validation.
    assert!(bundle.report.validation.starts_with("holdout"));
}

#[test]
fn compete_mode_runs_all_steps_with_kfold() {
    let table = synthetic_table(60, 4, 2);
    let bundle =
        train_pipeline(&table, 600.0, 42, TrainMode::Compete, "core", "tiny-v1").unwrap();
    assert_eq!(bundle.report.validation, "kfold[5]");
    for step in [
        "test_split",
        "base_models",
        "random_search",
        "kmeans",
        "golden_features",
        "feature_selection",
        "hill_climb_1",
        "hill_climb_2",
        "boost_on_errors",
        "stacking",
        "greedy_ensemble",
        "test_eval",
    ] {
        assert!(
            bundle.report.steps_run.iter().any(|s| s == step),
            "step `{step}` missing from {:?}",
            bundle.report.steps_run
        );
    }
    // The learnable signal must actually be learned.
    assert!(
        bundle.report.test_r2 > 0.3,
        "test r2 {} too low",
        bundle.report.test_r2
    );
    // Greedy ensemble never degrades the best member.
    let best = bundle
        .report
        .per_model_valid_rmse
        .values()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    assert!(bundle.report.ensemble_valid_rmse <= best + 1e-12);
}

#[test]
fn no_group_appears_in_train_and_test() {
    let table = synthetic_table(40, 3, 3);
    let bundle = train_pipeline(&table, 600.0, 7, TrainMode::Fast, "core", "tiny-v1").unwrap();
    let test_groups: HashSet<String> = bundle.report.test_groups.iter().cloned().collect();
    assert!(!test_groups.is_empty());
    assert!(test_groups.len() < 40);
}

#[test]
fn bundle_roundtrip_is_bit_identical() {
    let table = synthetic_table(55, 3, 4);
    let bundle =
        train_pipeline(&table, 600.0, 11, TrainMode::Compete, "core", "tiny-v1").unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let loaded = mmf::automl::EnsembleBundle::load(dir.path()).unwrap();

    let mut raw = table.clone();
    raw.set_target(None);
    let p1 = predict_bundle(&bundle, &raw).unwrap();
    let p2 = predict_bundle(&loaded, &raw).unwrap();
    for (a, b) in p1.iter().zip(p2.iter()) {
        assert!((a - b).abs() < 1e-12);
        assert!((0.0..=1.0).contains(a));
    }

    // Saving the loaded bundle again reproduces identical files.
    let dir2 = tempfile::tempdir().unwrap();
    loaded.save(dir2.path()).unwrap();
    let b1 = std::fs::read(dir.path().join("bundle.json")).unwrap();
    let b2 = std::fs::read(dir2.path().join("bundle.json")).unwrap();
    assert_eq!(b1, b2);
}

#[test]
fn missing_raw_feature_is_named() {
    let table = synthetic_table(30, 3, 5);
    let bundle = train_pipeline(&table, 600.0, 42, TrainMode::Fast, "core", "tiny-v1").unwrap();
    let partial = table.select_columns(&["f0".into(), "f1".into(), "f2".into()]).unwrap();
    let err = predict_bundle(&bundle, &partial).unwrap_err();
    assert!(err.to_string().contains("f3"), "error should name f3: {err}");
}

#[test]
fn degenerate_target_rejected() {
    let mut table = synthetic_table(25, 2, 6);
    table.set_target(Some(vec![0.25; table.n_rows()]));
    assert!(train_pipeline(&table, 600.0, 42, TrainMode::Fast, "core", "tiny-v1").is_err());
}

#[test]
fn too_few_groups_rejected() {
    let table = synthetic_table(10, 3, 7);
    assert!(train_pipeline(&table, 600.0, 42, TrainMode::Fast, "core", "tiny-v1").is_err());
}

#[test]
fn pipeline_deterministic_for_fixed_seed() {
    let table = synthetic_table(40, 3, 8);
    let b1 = train_pipeline(&table, 600.0, 99, TrainMode::Fast, "core", "tiny-v1").unwrap();
    let b2 = train_pipeline(&table, 600.0, 99, TrainMode::Fast, "core", "tiny-v1").unwrap();
    let mut raw = table.clone();
    raw.set_target(None);
    let p1 = predict_bundle(&b1, &raw).unwrap();
    let p2 = predict_bundle(&b2, &raw).unwrap();
    for (a, b) in p1.iter().zip(p2.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(b1.report.test_mae.to_bits(), b2.report.test_mae.to_bits());
}

#[test]
fn perfect_rows_predict_low() {
    // Rows with target exactly 0 (perfect transformations) should predict
    // below the dataset mean.
    let mut table = synthetic_table(50, 4, 9);
    let n = table.n_rows();
    let mut target = table.target().unwrap().to_vec();
    // Mark one row per group as perfect: all-informative features at their
    // "identity" values.
    for g in 0..50 {
        let row = g * 4;
        target[row] = 0.0;
        for c in 0..4 {
            let name = format!("f{c}");
            let mut col = table.column(&name).unwrap().to_vec();
            col[row] = 0.0;
            table.set_column(&name, col).unwrap();
        }
    }
    table.set_target(Some(target));
    let bundle =
        train_pipeline(&table, 600.0, 13, TrainMode::Compete, "core", "tiny-v1").unwrap();
    let mut raw = table.clone();
    raw.set_target(None);
    let preds = predict_bundle(&bundle, &raw).unwrap();
    let mean_target: f64 = table.target().unwrap().iter().sum::<f64>() / n as f64;
    let mut perfect_preds = Vec::new();
    for g in 0..50 {
        perfect_preds.push(preds[g * 4]);
    }
    let mean_perfect: f64 = perfect_preds.iter().sum::<f64>() / perfect_preds.len() as f64;
    assert!(
        mean_perfect < mean_target,
        "perfect rows should predict low: {mean_perfect} vs dataset mean {mean_target}"
    );
}
