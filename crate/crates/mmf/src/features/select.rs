//! Permutation feature selection against injected-noise baselines.

use super::FeatureTable;
use crate::error::{Error, Result};
use crate::gbdt::{rmse, GbdtModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of injected uniform-noise columns.
pub const NOISE_COLUMNS: usize = 3;
const SHUFFLE_REPEATS: usize = 3;
const MIN_RETAINED: usize = 3;

pub fn noise_column_name(i: usize) -> String {
    format!("noise_{i}")
}

/// Appends `noise_0..noise_2` uniform [0,1] columns, seeded.
pub fn inject_noise_columns(table: &mut FeatureTable, seed: u64) -> Result<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = table.n_rows();
    let mut names = Vec::with_capacity(NOISE_COLUMNS);
    for i in 0..NOISE_COLUMNS {
        let name = noise_column_name(i);
        table.push_column(name.clone(), (0..n).map(|_| rng.gen::<f64>()).collect())?;
        names.push(name);
    }
    Ok(names)
}

/// Mean increase in validation RMSE over seeded shuffles of each model
/// feature, in `model.feature_names` order.
pub fn permutation_importance(
    model: &GbdtModel,
    valid: &FeatureTable,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let target = valid
        .target()
        .ok_or_else(|| Error::FeatureTable("permutation importance needs a target".into()))?;
    let baseline = rmse(&valid.predict_with(model)?, target, None);
    let n = valid.n_rows();

    let mut out = Vec::with_capacity(model.feature_names.len());
    for (f_idx, name) in model.feature_names.iter().enumerate() {
        let original = valid.column(name)?.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (f_idx as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut delta_sum = 0.0;
        let mut shuffled_table = valid.clone();
        for _ in 0..SHUFFLE_REPEATS {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<f64> = perm.iter().map(|&i| original[i]).collect();
            shuffled_table.set_column(name, shuffled)?;
            let shuffled_rmse = rmse(&shuffled_table.predict_with(model)?, target, None);
            delta_sum += shuffled_rmse - baseline;
        }
        shuffled_table.set_column(name, original)?;
        out.push((name.clone(), delta_sum / SHUFFLE_REPEATS as f64));
    }
    Ok(out)
}

/// Retains real columns whose importance exceeds the best noise column's;
/// always keeps at least 3 (top by importance). Returned names preserve
/// the model's feature order.
pub fn select_features(
    valid: &FeatureTable,
    model: &GbdtModel,
    seed: u64,
) -> Result<Vec<String>> {
    let importances = permutation_importance(model, valid, seed)?;
    let noise_max = importances
        .iter()
        .filter(|(n, _)| n.starts_with("noise_"))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !noise_max.is_finite() {
        return Err(Error::FeatureTable(
            "selection model was not trained with injected noise columns".into(),
        ));
    }
    let real: Vec<&(String, f64)> = importances
        .iter()
        .filter(|(n, _)| !n.starts_with("noise_"))
        .collect();
    let mut retained: Vec<String> = real
        .iter()
        .filter(|(_, imp)| *imp > noise_max)
        .map(|(n, _)| n.clone())
        .collect();
    if retained.len() < MIN_RETAINED {
        let mut ranked = real.clone();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        retained = ranked
            .iter()
            .take(MIN_RETAINED.min(ranked.len()))
            .map(|(n, _)| n.clone())
            .collect();
        // Back to model feature order for determinism downstream.
        retained.sort_by_key(|n| {
            model
                .feature_names
                .iter()
                .position(|m| m == n)
                .expect("retained from model features")
        });
    }
    Ok(retained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RowId;
    use crate::gbdt::{fit, DataView, GbdtConfig, GrowthStrategy};

    fn table_with_signal(n: usize, seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sig: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let junk1: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let junk2: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let target = sig.clone();
        let ids = (0..n)
            .map(|i| RowId {
                sample_id: format!("s{i}"),
                model_id: "m".into(),
                group_id: format!("s{i}"),
            })
            .collect();
        FeatureTable::new(
            vec!["signal".into(), "junk1".into(), "junk2".into()],
            ids,
            vec![sig, junk1, junk2],
            Some(target),
        )
        .unwrap()
    }

    fn train(table: &FeatureTable) -> GbdtModel {
        let view: DataView = table.train_view().unwrap();
        let mut cfg = GbdtConfig::defaults(GrowthStrategy::LevelWise);
        cfg.max_trees = 80;
        cfg.early_stopping_rounds = 80;
        fit(view, view, &cfg, None).unwrap()
    }

    #[test]
    fn planted_signal_is_retained() {
        let mut table = table_with_signal(300, 21);
        inject_noise_columns(&mut table, 99).unwrap();
        let model = train(&table);
        let retained = select_features(&table, &model, 5).unwrap();
        assert!(
            retained.iter().any(|n| n == "signal"),
            "signal missing from {retained:?}"
        );
        assert!(retained.iter().all(|n| !n.starts_with("noise_")));
    }

    #[test]
    fn constant_model_keeps_top3_floor() {
        let mut table = table_with_signal(100, 22);
        table.set_target(Some(vec![1.0; 100]));
        inject_noise_columns(&mut table, 99).unwrap();
        let model = train(&table); // constant target -> zero trees
        assert!(model.trees.is_empty());
        let retained = select_features(&table, &model, 5).unwrap();
        assert_eq!(retained.len(), 3);
        assert!(retained.iter().all(|n| !n.starts_with("noise_")));
    }

    #[test]
    fn unused_feature_scores_zero() {
        let mut table = table_with_signal(300, 23);
        inject_noise_columns(&mut table, 99).unwrap();
        let model = train(&table);
        let importances = permutation_importance(&model, &table, 5).unwrap();
        let signal = importances.iter().find(|(n, _)| n == "signal").unwrap().1;
        for (name, imp) in &importances {
            if name != "signal" {
                assert!(imp.abs() < signal.max(1e-9), "{name} importance {imp}");
            }
        }
        assert!(signal > 0.0);
    }
}
