//! Training orchestration: group-aware validation, hyperparameter search,
//! the staged training pipeline and the self-contained model bundle.

mod bundle;
mod ensemble;
mod pipeline;

pub use bundle::{
    predict_bundle, BundlePreprocessing, EnsembleBundle, MemberRef, SavedModel, TrainingReport,
};
pub use ensemble::greedy_ensemble;
pub use pipeline::{train_pipeline, TrainMode};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::gbdt::{GbdtConfig, GrowthStrategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Group-aware validation regime.
#[derive(Debug, Clone, Copy)]
pub enum ValidationPlan {
    KFold { k: usize, seed: u64 },
    Holdout { train_fraction: f64, seed: u64 },
}

impl ValidationPlan {
    pub fn describe(&self) -> String {
        match self {
            ValidationPlan::KFold { k, .. } => format!("kfold[{k}]"),
            ValidationPlan::Holdout { train_fraction, .. } => {
                format!("holdout[{train_fraction}]")
            }
        }
    }
}

/// Fold assignments as (train rows, validation rows) index pairs; groups
/// never straddle a boundary.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    pub folds: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Shuffles groups with the plan's seed and partitions them; every row of a
/// group lands on exactly one side per fold, fold sizes balanced by group
/// count within 1.
pub fn split_groups(table: &FeatureTable, plan: &ValidationPlan) -> Result<FoldAssignment> {
    let mut groups = table.group_ids();
    let n_groups = groups.len();
    let folds = match *plan {
        ValidationPlan::KFold { k, seed } => {
            if k < 2 {
                return Err(Error::InvalidArgument("kfold needs k >= 2".into()));
            }
            if n_groups < k {
                return Err(Error::Train(format!(
                    "{n_groups} groups cannot support {k}-fold validation"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            groups.shuffle(&mut rng);
            let mut fold_groups: Vec<Vec<String>> = vec![Vec::new(); k];
            for (i, g) in groups.into_iter().enumerate() {
                fold_groups[i % k].push(g);
            }
            let mut folds = Vec::with_capacity(k);
            for f in 0..k {
                let valid_set: HashSet<String> = fold_groups[f].iter().cloned().collect();
                let valid_rows = table.rows_of_groups(&valid_set);
                let train_set: HashSet<String> = fold_groups
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != f)
                    .flat_map(|(_, g)| g.iter().cloned())
                    .collect();
                let train_rows = table.rows_of_groups(&train_set);
                folds.push((train_rows, valid_rows));
            }
            folds
        }
        ValidationPlan::Holdout { train_fraction, seed } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::InvalidArgument(
                    "holdout train fraction must be in (0,1)".into(),
                ));
            }
            if n_groups < 2 {
                return Err(Error::Train("holdout needs at least 2 groups".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::seq::SliceRandom;
            groups.shuffle(&mut rng);
            let n_train = ((train_fraction * n_groups as f64).round() as usize)
                .clamp(1, n_groups - 1);
            let train_set: HashSet<String> = groups[..n_train].iter().cloned().collect();
            let valid_set: HashSet<String> = groups[n_train..].iter().cloned().collect();
            vec![(
                table.rows_of_groups(&train_set),
                table.rows_of_groups(&valid_set),
            )]
        }
    };
    // Group-leakage assertion on every run.
    for (train_rows, valid_rows) in &folds {
        let train_groups: HashSet<&str> = train_rows
            .iter()
            .map(|&r| table.ids()[r].group_id.as_str())
            .collect();
        for &r in valid_rows {
            if train_groups.contains(table.ids()[r].group_id.as_str()) {
                return Err(Error::Train(format!(
                    "group `{}` leaked across a fold boundary",
                    table.ids()[r].group_id
                )));
            }
        }
    }
    Ok(FoldAssignment { folds })
}

/// Random-search sampling rules for GBDT hyperparameters.
pub fn sample_config(strategy: GrowthStrategy, rng: &mut ChaCha8Rng) -> GbdtConfig {
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        (rng.gen::<f64>() * (hi.ln() - lo.ln()) + lo.ln()).exp()
    };
    let mut cfg = GbdtConfig::defaults(strategy);
    cfg.learning_rate = log_uniform(rng, 0.01, 0.3);
    cfg.max_leaves = rng.gen_range(15..=63);
    cfg.max_depth = rng.gen_range(3..=8);
    cfg.min_samples_leaf = rng.gen_range(1..=30);
    cfg.l2_reg = log_uniform(rng, 1e-3, 10.0);
    cfg.subsample_rows = rng.gen_range(0.7..=1.0);
    cfg.subsample_cols = rng.gen_range(0.6..=1.0);
    cfg.max_trees = 1000;
    cfg.early_stopping_rounds = 50;
    cfg.seed = rng.gen();
    cfg
}

/// Single-parameter hill-climb neighborhood: +-1 on each integer
/// hyperparameter, x1.5 and /1.5 on each real one, all clamped to the
/// config's legal ranges.
pub fn hill_climb_neighbors(cfg: &GbdtConfig) -> Vec<GbdtConfig> {
    let mut out = Vec::new();
    let mut push = |c: GbdtConfig| {
        if c.validate().is_ok() && c.identity() != cfg.identity() {
            out.push(c);
        }
    };
    match cfg.strategy {
        GrowthStrategy::LeafWise => {
            for delta in [-1i64, 1] {
                let mut c = cfg.clone();
                c.max_leaves = (cfg.max_leaves as i64 + delta).max(2) as usize;
                push(c);
            }
        }
        GrowthStrategy::LevelWise | GrowthStrategy::Oblivious => {
            for delta in [-1i64, 1] {
                let mut c = cfg.clone();
                c.max_depth = (cfg.max_depth as i64 + delta).max(1) as usize;
                push(c);
            }
        }
    }
    for delta in [-1i64, 1] {
        let mut c = cfg.clone();
        c.min_samples_leaf = (cfg.min_samples_leaf as i64 + delta).max(1) as usize;
        push(c);
    }
    for factor in [1.0 / 1.5, 1.5] {
        let mut c = cfg.clone();
        c.learning_rate = (cfg.learning_rate * factor).clamp(1e-4, 1.0);
        push(c);

        let mut c = cfg.clone();
        c.l2_reg = (cfg.l2_reg * factor).clamp(1e-6, 100.0);
        push(c);

        let mut c = cfg.clone();
        c.subsample_rows = (cfg.subsample_rows * factor).clamp(0.05, 1.0);
        push(c);

        let mut c = cfg.clone();
        c.subsample_cols = (cfg.subsample_cols * factor).clamp(0.05, 1.0);
        push(c);
    }
    out
}
