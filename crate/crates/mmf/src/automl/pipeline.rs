//! The staged training pipeline: outer test split, base + random models
//! per strategy, K-Means/golden-feature/selection retrains, hill-climb,
//! boost-on-errors, stacking, greedy ensemble and the final test report.

use super::bundle::{
    predict_bundle, BundlePreprocessing, EnsembleBundle, MemberRef, SavedModel, TrainingReport,
};
use super::ensemble::greedy_ensemble;
use super::{hill_climb_neighbors, sample_config, split_groups, FoldAssignment, ValidationPlan};
use crate::error::{Error, Result};
use crate::features::{
    golden_features, inject_noise_columns, kmeans_augment, select_features, FeatureTable,
    GoldenFeatureDef, KMeansAugmentation, GOLDEN_TOP_N_DEFAULT, TARGET_COLUMN,
};
use crate::gbdt::{fit, rmse, DataView, GbdtConfig, GbdtModel, GrowthStrategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

const RANDOM_MODELS_PER_STRATEGY: usize = 4;
const RETRAIN_TOP_N: usize = 3;
const HILL_CLIMB_ROUNDS: usize = 2;
const STACK_TOP_N: usize = 5;
const KFOLD_MIN_GROUPS: usize = 50;
const MIN_GROUPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// The full staged regimen.
    Compete,
    /// Base models, greedy ensemble and test evaluation only.
    Fast,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "compete" => Ok(TrainMode::Compete),
            "fast" => Ok(TrainMode::Fast),
            other => Err(Error::InvalidArgument(format!(
                "unknown mode `{other}` (expected compete|fast)"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            TrainMode::Compete => "compete",
            TrainMode::Fast => "fast",
        }
    }
}

struct Candidate {
    label: String,
    cfg: GbdtConfig,
    feature_names: Vec<String>,
    weights: Option<Vec<f64>>,
    uses_stack: bool,
}

struct TrainedModel {
    id: String,
    cfg: GbdtConfig,
    feature_names: Vec<String>,
    fold_models: Vec<GbdtModel>,
    /// Out-of-fold predictions, meaningful on `eval_rows` only.
    oof: Vec<f64>,
    valid_rmse: f64,
    uses_stack: bool,
}

struct PipelineState {
    dev: FeatureTable,
    folds: FoldAssignment,
    /// Rows with out-of-fold coverage, ascending.
    eval_rows: Vec<usize>,
    eval_targets: Vec<f64>,
    models: Vec<TrainedModel>,
    seen: HashSet<String>,
    seq: usize,
    started: Instant,
    budget: f64,
    steps_run: Vec<String>,
    steps_skipped: Vec<String>,
}

impl PipelineState {
    fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Optional steps are skipped (never truncated mid-model) once the
    /// elapsed fraction of the budget passes the step's guard.
    fn budget_allows(&mut self, step: &str, fraction: f64) -> bool {
        if self.elapsed() <= self.budget * fraction {
            true
        } else {
            self.steps_skipped.push(step.to_string());
            false
        }
    }

    fn candidate_identity(c: &Candidate) -> String {
        format!(
            "{}|{}|{}",
            c.cfg.identity(),
            c.feature_names.join(","),
            c.weights.is_some()
        )
    }

    /// Trains candidates across folds (parallel over candidates, ordered
    /// results), deduplicating configurations already in the pool.
    fn train_batch(&mut self, step: &str, candidates: Vec<Candidate>) -> Result<()> {
        let fresh: Vec<Candidate> = candidates
            .into_iter()
            .filter(|c| self.seen.insert(Self::candidate_identity(c)))
            .collect();
        if fresh.is_empty() {
            return Ok(());
        }
        let dev = &self.dev;
        let folds = &self.folds;
        let eval_rows = &self.eval_rows;
        let eval_targets = &self.eval_targets;
        let trained: Vec<Result<(Vec<GbdtModel>, Vec<f64>, f64)>> = fresh
            .par_iter()
            .map(|c| train_one(dev, folds, eval_rows, eval_targets, c))
            .collect();
        for (c, t) in fresh.into_iter().zip(trained) {
            let (fold_models, oof, valid_rmse) = t?;
            let id = format!("m{:03}_{}_{}", self.seq, c.label, c.cfg.strategy.name());
            self.seq += 1;
            self.models.push(TrainedModel {
                id,
                cfg: c.cfg,
                feature_names: c.feature_names,
                fold_models,
                oof,
                valid_rmse,
                uses_stack: c.uses_stack,
            });
        }
        if !self.steps_run.iter().any(|s| s == step) {
            self.steps_run.push(step.to_string());
        }
        Ok(())
    }

    /// Indices of the best `n` models by validation RMSE (ties: earliest).
    fn top_models(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.models.len()).collect();
        order.sort_by(|&a, &b| {
            self.models[a]
                .valid_rmse
                .total_cmp(&self.models[b].valid_rmse)
                .then(a.cmp(&b))
        });
        order.truncate(n);
        order
    }
}

fn train_one(
    dev: &FeatureTable,
    folds: &FoldAssignment,
    eval_rows: &[usize],
    eval_targets: &[f64],
    c: &Candidate,
) -> Result<(Vec<GbdtModel>, Vec<f64>, f64)> {
    let mut fold_models = Vec::with_capacity(folds.folds.len());
    let mut oof = vec![f64::NAN; dev.n_rows()];
    for (f, (train_rows, valid_rows)) in folds.folds.iter().enumerate() {
        let train_table = dev.select_rows(train_rows).select_columns(&c.feature_names)?;
        let valid_table = dev.select_rows(valid_rows).select_columns(&c.feature_names)?;
        let mut train_sub = train_table.clone();
        train_sub.set_target(Some(
            train_rows
                .iter()
                .map(|&r| dev.target().expect("target checked")[r])
                .collect(),
        ));
        let mut valid_sub = valid_table;
        valid_sub.set_target(Some(
            valid_rows
                .iter()
                .map(|&r| dev.target().expect("target checked")[r])
                .collect(),
        ));
        let weights: Option<Vec<f64>> = c
            .weights
            .as_ref()
            .map(|w| train_rows.iter().map(|&r| w[r]).collect());

        let mut cfg = c.cfg.clone();
        cfg.seed = cfg.seed.wrapping_add(f as u64);
        let train_view: DataView = train_sub.train_view()?;
        let valid_view: DataView = valid_sub.train_view()?;
        let model = fit(train_view, valid_view, &cfg, weights.as_deref())?;

        let preds = valid_sub.predict_with(&model)?;
        for (&r, p) in valid_rows.iter().zip(preds) {
            // Out-of-fold bookkeeping: this row was never in the fold's
            // training split (enforced by the grouped fold construction).
            debug_assert!(oof[r].is_nan(), "row {r} validated twice");
            oof[r] = p;
        }
        fold_models.push(model);
    }
    let oof_eval: Vec<f64> = eval_rows.iter().map(|&r| oof[r]).collect();
    let valid_rmse = rmse(&oof_eval, eval_targets, None);
    Ok((fold_models, oof, valid_rmse))
}

/// Runs the staged regimen and emits a self-contained bundle.
pub fn train_pipeline(
    table: &FeatureTable,
    budget_seconds: f64,
    seed: u64,
    mode: TrainMode,
    tier_name: &str,
    extractor_provenance: &str,
) -> Result<EnsembleBundle> {
    let started = Instant::now();
    let target = table
        .target()
        .ok_or_else(|| Error::FeatureTable("training needs a target column".into()))?;
    if budget_seconds <= 0.0 {
        return Err(Error::InvalidArgument("budget must be positive".into()));
    }
    let groups = table.group_ids();
    if groups.len() < MIN_GROUPS {
        return Err(Error::Train(format!(
            "training needs at least {MIN_GROUPS} groups, got {}",
            groups.len()
        )));
    }
    let t_mean = target.iter().sum::<f64>() / target.len() as f64;
    let t_var = target.iter().map(|t| (t - t_mean) * (t - t_mean)).sum::<f64>();
    if t_var <= 0.0 {
        return Err(Error::Train("target has zero variance".into()));
    }

    // Step 1: outer test split, 10% of groups.
    let outer = split_groups(table, &ValidationPlan::Holdout { train_fraction: 0.9, seed })?;
    let (dev_rows, test_rows) = &outer.folds[0];
    let dev = table.select_rows(dev_rows);
    let raw_test = table.select_rows(test_rows);
    let base_features = table.feature_names().to_vec();

    // Inner validation: grouped 5-fold CV when enough groups, else 80/20.
    let dev_groups = dev.group_ids().len();
    let plan = if dev_groups >= KFOLD_MIN_GROUPS {
        ValidationPlan::KFold { k: 5, seed: seed.wrapping_add(1) }
    } else {
        ValidationPlan::Holdout { train_fraction: 0.8, seed: seed.wrapping_add(1) }
    };
    let folds = split_groups(&dev, &plan)?;
    let is_kfold = matches!(plan, ValidationPlan::KFold { .. });

    let mut eval_rows: Vec<usize> = folds
        .folds
        .iter()
        .flat_map(|(_, valid)| valid.iter().copied())
        .collect();
    eval_rows.sort_unstable();
    eval_rows.dedup();
    let dev_target = dev.target().expect("target checked").to_vec();
    let eval_targets: Vec<f64> = eval_rows.iter().map(|&r| dev_target[r]).collect();

    let mut state = PipelineState {
        dev,
        folds,
        eval_rows,
        eval_targets,
        models: Vec::new(),
        seen: HashSet::new(),
        seq: 0,
        started,
        budget: budget_seconds,
        steps_run: vec!["test_split".into()],
        steps_skipped: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));

    // Step 2: one base model per strategy (the hard minimum).
    let base_candidates: Vec<Candidate> = GrowthStrategy::ALL
        .iter()
        .map(|&s| {
            let mut cfg = GbdtConfig::defaults(s);
            cfg.seed = seed.wrapping_add(10 + s.name().len() as u64);
            Candidate {
                label: "base".into(),
                cfg,
                feature_names: base_features.clone(),
                weights: None,
                uses_stack: false,
            }
        })
        .collect();
    state.train_batch("base_models", base_candidates)?;

    // Step 3: random search per strategy; count shrinks under budget
    // pressure, models are never truncated mid-fit.
    if mode == TrainMode::Compete {
        let mut random_candidates = Vec::new();
        for _ in 0..RANDOM_MODELS_PER_STRATEGY {
            for strategy in GrowthStrategy::ALL {
                let cfg = sample_config(strategy, &mut rng);
                random_candidates.push(Candidate {
                    label: "rand".into(),
                    cfg,
                    feature_names: base_features.clone(),
                    weights: None,
                    uses_stack: false,
                });
            }
        }
        let mut batch = Vec::new();
        for cand in random_candidates {
            if state.elapsed() > state.budget * 0.4 {
                break;
            }
            batch.push(cand);
        }
        if batch.is_empty() {
            state.steps_skipped.push("random_search".into());
        } else {
            state.train_batch("random_search", batch)?;
        }
    } else {
        state.steps_skipped.push("random_search".into());
    }

    // Preprocessing artifacts accumulated for the bundle.
    let mut kmeans_fit: Option<KMeansAugmentation> = None;
    let mut golden_defs: Vec<GoldenFeatureDef> = Vec::new();
    let mut selected: Option<Vec<String>> = None;
    let mut stack_inputs: Vec<String> = Vec::new();

    if mode == TrainMode::Compete {
        // Step 4: K-Means augmentation, retrain the current best 3 configs.
        if state.budget_allows("kmeans", 0.45) {
            let k = crate::features::default_k(state.dev.n_rows()).min(state.dev.n_rows());
            let aug = kmeans_augment(&mut state.dev, k, seed.wrapping_add(3))?;
            let with_km: Vec<String> = state.dev.feature_names().to_vec();
            let retrain: Vec<Candidate> = state
                .top_models(RETRAIN_TOP_N)
                .into_iter()
                .map(|i| Candidate {
                    label: "kmeans".into(),
                    cfg: state.models[i].cfg.clone(),
                    feature_names: with_km.clone(),
                    weights: None,
                    uses_stack: false,
                })
                .collect();
            kmeans_fit = Some(aug);
            state.train_batch("kmeans", retrain)?;
        }

        // Step 5: golden features from the base columns, retrain best 3.
        if state.budget_allows("golden_features", 0.55) {
            let base_view = state.dev.select_columns(&base_features)?;
            let defs = golden_features(&base_view, GOLDEN_TOP_N_DEFAULT, seed.wrapping_add(4))?;
            crate::features::apply_golden_features(&mut state.dev, &defs)?;
            golden_defs = defs;
            let with_all: Vec<String> = state.dev.feature_names().to_vec();
            let retrain: Vec<Candidate> = state
                .top_models(RETRAIN_TOP_N)
                .into_iter()
                .map(|i| Candidate {
                    label: "golden".into(),
                    cfg: state.models[i].cfg.clone(),
                    feature_names: with_all.clone(),
                    weights: None,
                    uses_stack: false,
                })
                .collect();
            state.train_batch("golden_features", retrain)?;
        }

        // Step 6: permutation feature selection against noise baselines on
        // the first fold, retrain best 3 on the retained set.
        if state.budget_allows("feature_selection", 0.65) {
            let mut noised = state.dev.clone();
            let _ = inject_noise_columns(&mut noised, seed.wrapping_add(5))?;
            let (train_rows, valid_rows) = &state.folds.folds[0];
            let probe_train = noised.select_rows(train_rows);
            let probe_valid = noised.select_rows(valid_rows);
            let mut probe_cfg = GbdtConfig::defaults(GrowthStrategy::LeafWise);
            probe_cfg.seed = seed.wrapping_add(6);
            let probe = fit(
                probe_train.train_view()?,
                probe_valid.train_view()?,
                &probe_cfg,
                None,
            )?;
            let retained = select_features(&probe_valid, &probe, seed.wrapping_add(7))?;
            let retrain: Vec<Candidate> = state
                .top_models(RETRAIN_TOP_N)
                .into_iter()
                .map(|i| Candidate {
                    label: "select".into(),
                    cfg: state.models[i].cfg.clone(),
                    feature_names: retained.clone(),
                    weights: None,
                    uses_stack: false,
                })
                .collect();
            selected = Some(retained);
            state.train_batch("feature_selection", retrain)?;
        }

        // Step 7: hill-climb rounds over the current top 3 configs.
        for round in 0..HILL_CLIMB_ROUNDS {
            let step = format!("hill_climb_{}", round + 1);
            if !state.budget_allows(&step, 0.70 + 0.10 * round as f64) {
                continue;
            }
            let mut climbs = Vec::new();
            for i in state.top_models(RETRAIN_TOP_N) {
                let parent = &state.models[i];
                for cfg in hill_climb_neighbors(&parent.cfg) {
                    climbs.push(Candidate {
                        label: "hill".into(),
                        cfg,
                        feature_names: parent.feature_names.clone(),
                        weights: None,
                        uses_stack: false,
                    });
                }
            }
            state.train_batch(&step, climbs)?;
        }

        // Step 8: boost-on-errors from the best model's out-of-fold
        // residuals (needs full OOF coverage, so k-fold only).
        if is_kfold && state.budget_allows("boost_on_errors", 0.85) {
            let best = state.top_models(1)[0];
            let oof = &state.models[best].oof;
            let mut abs_res: Vec<f64> = vec![0.0; state.dev.n_rows()];
            let mut mean_abs = 0.0;
            for (r, res) in abs_res.iter_mut().enumerate() {
                *res = (dev_target[r] - oof[r]).abs();
                mean_abs += *res;
            }
            mean_abs /= state.dev.n_rows() as f64;
            if mean_abs > 0.0 {
                let weights: Vec<f64> = abs_res.iter().map(|r| 1.0 + r / mean_abs).collect();
                let cand = Candidate {
                    label: "boost".into(),
                    cfg: state.models[best].cfg.clone(),
                    feature_names: state.models[best].feature_names.clone(),
                    weights: Some(weights),
                    uses_stack: false,
                };
                state.train_batch("boost_on_errors", vec![cand])?;
            }
        } else if !is_kfold {
            state.steps_skipped.push("boost_on_errors(holdout)".into());
        }

        // Step 9: stacking on the top 5 models' out-of-fold predictions
        // (k-fold only: holdout rows lack OOF coverage).
        if is_kfold && state.budget_allows("stacking", 0.90) {
            let top = state.top_models(STACK_TOP_N);
            let mut ids = Vec::new();
            for &i in &top {
                let id = state.models[i].id.clone();
                let col = state.models[i].oof.clone();
                state.dev.push_column(format!("stack_{id}"), col)?;
                ids.push(id);
            }
            stack_inputs = ids;
            let with_stack: Vec<String> = state.dev.feature_names().to_vec();
            let stack_candidates: Vec<Candidate> = GrowthStrategy::ALL
                .iter()
                .map(|&s| {
                    let mut cfg = GbdtConfig::defaults(s);
                    cfg.seed = seed.wrapping_add(20 + s.name().len() as u64);
                    Candidate {
                        label: "stack".into(),
                        cfg,
                        feature_names: with_stack.clone(),
                        weights: None,
                        uses_stack: true,
                    }
                })
                .collect();
            state.train_batch("stacking", stack_candidates)?;
        } else if !is_kfold {
            state.steps_skipped.push("stacking(holdout)".into());
        }
    }

    // Step 10: greedy ensemble over every trained model's OOF predictions.
    let oof_preds: Vec<Vec<f64>> = state
        .models
        .iter()
        .map(|m| state.eval_rows.iter().map(|&r| m.oof[r]).collect())
        .collect();
    let selection = greedy_ensemble(&oof_preds, &state.eval_targets, seed.wrapping_add(8))?;
    state.steps_run.push("greedy_ensemble".into());

    let members: Vec<MemberRef> = selection
        .counts
        .iter()
        .map(|(&idx, &reps)| MemberRef {
            model_id: state.models[idx].id.clone(),
            repetitions: reps,
        })
        .collect();
    let members_use_stack = selection
        .counts
        .keys()
        .any(|&idx| state.models[idx].uses_stack);
    let bundle_stack_inputs = if members_use_stack { stack_inputs } else { Vec::new() };

    // Serialize members plus any stacking inputs they depend on.
    let mut models: BTreeMap<String, SavedModel> = BTreeMap::new();
    for m in &state.models {
        let needed = selection
            .counts
            .keys()
            .any(|&idx| state.models[idx].id == m.id)
            || bundle_stack_inputs.contains(&m.id);
        if needed {
            models.insert(
                m.id.clone(),
                SavedModel {
                    fold_models: m.fold_models.clone(),
                },
            );
        }
    }

    let per_model_valid_rmse: BTreeMap<String, f64> = state
        .models
        .iter()
        .map(|m| (m.id.clone(), m.valid_rmse))
        .collect();

    let mut bundle = EnsembleBundle {
        members,
        preprocessing: BundlePreprocessing {
            tier: tier_name.to_string(),
            extractor_provenance: extractor_provenance.to_string(),
            raw_features: base_features.clone(),
            kmeans: kmeans_fit,
            golden: golden_defs,
            selected_features: selected,
            stack_inputs: bundle_stack_inputs,
        },
        target_name: TARGET_COLUMN.to_string(),
        models,
        report: TrainingReport {
            mode: mode.name().to_string(),
            validation: plan.describe(),
            seed,
            budget_seconds,
            elapsed_seconds: 0.0,
            steps_run: state.steps_run.clone(),
            steps_skipped: state.steps_skipped.clone(),
            per_model_valid_rmse,
            ensemble_valid_rmse: selection.valid_rmse,
            test_mae: 0.0,
            test_r2: 0.0,
            test_rmse: 0.0,
            train_table_mae: 0.0,
            n_test_rows: raw_test.n_rows(),
            test_groups: {
                let mut g = raw_test.group_ids();
                g.sort();
                g
            },
        },
    };

    // Step 11: evaluate on the outer test groups via the replay path the
    // bundle itself uses at inference.
    let raw_test_features = raw_test.select_columns(&base_features)?;
    let test_preds = predict_bundle(&bundle, &raw_test_features)?;
    let test_target = raw_test.target().expect("target checked");
    let n_test = test_target.len() as f64;
    let mae = test_preds
        .iter()
        .zip(test_target.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n_test;
    let test_rmse = rmse(&test_preds, test_target, None);
    let test_mean = test_target.iter().sum::<f64>() / n_test;
    let ss_tot: f64 = test_target.iter().map(|t| (t - test_mean) * (t - test_mean)).sum();
    let ss_res: f64 = test_preds
        .iter()
        .zip(test_target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };

    bundle.report.test_mae = mae;
    bundle.report.test_rmse = test_rmse;
    bundle.report.test_r2 = r2;

    // Full-input-table MAE through the final bundle, for report-consistency
    // checks on prediction outputs.
    let full_raw = table.select_columns(&base_features)?;
    let full_preds = predict_bundle(&bundle, &full_raw)?;
    bundle.report.train_table_mae = full_preds
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / target.len() as f64;

    bundle.report.steps_run.push("test_eval".into());
    bundle.report.elapsed_seconds = state.elapsed();
    bundle.validate()?;
    Ok(bundle)
}
