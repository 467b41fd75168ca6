//! Gradient-boosted regression trees, implemented natively with three
//! tree-growth strategies (leaf-wise, level-wise, oblivious) standing in
//! for the usual library trio.
//!
//! Squared-error objective only; split finding scans 256-bin quantile
//! histograms; the exact-split learner in [`single_tree_fit`] backs the
//! golden-feature probes.

mod exact;
mod train;

pub use exact::single_tree_fit;
pub use train::DataView;
pub use train::fit;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// How trees grow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthStrategy {
    /// Expand the highest-gain leaf until `max_leaves`.
    LeafWise,
    /// Expand every frontier node per depth until `max_depth`.
    LevelWise,
    /// One (feature, threshold) per depth, applied to every frontier node.
    Oblivious,
}

impl GrowthStrategy {
    pub const ALL: [GrowthStrategy; 3] = [
        GrowthStrategy::LeafWise,
        GrowthStrategy::LevelWise,
        GrowthStrategy::Oblivious,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GrowthStrategy::LeafWise => "leaf_wise",
            GrowthStrategy::LevelWise => "level_wise",
            GrowthStrategy::Oblivious => "oblivious",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub strategy: GrowthStrategy,
    pub learning_rate: f64,
    pub max_trees: usize,
    /// Read for `leaf_wise`.
    pub max_leaves: usize,
    /// Read for `level_wise` and `oblivious`.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub l2_reg: f64,
    pub subsample_rows: f64,
    pub subsample_cols: f64,
    pub early_stopping_rounds: usize,
    pub seed: u64,
}

impl GbdtConfig {
    pub fn defaults(strategy: GrowthStrategy) -> GbdtConfig {
        GbdtConfig {
            strategy,
            learning_rate: 0.1,
            max_trees: 1000,
            max_leaves: 31,
            max_depth: 6,
            min_samples_leaf: 5,
            l2_reg: 1.0,
            subsample_rows: 1.0,
            subsample_cols: 1.0,
            early_stopping_rounds: 50,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0,1]", self.learning_rate));
        }
        if self.max_trees == 0 {
            return bad("max_trees must be positive".into());
        }
        if self.max_leaves < 2 {
            return bad("max_leaves must be at least 2".into());
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive".into());
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be positive".into());
        }
        if self.l2_reg < 0.0 {
            return bad("l2_reg must be non-negative".into());
        }
        for (name, v) in [
            ("subsample_rows", self.subsample_rows),
            ("subsample_cols", self.subsample_cols),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} {v} outside (0,1]"));
            }
        }
        Ok(())
    }

    /// Stable identity string covering every hyperparameter.
    pub fn identity(&self) -> String {
        format!(
            "{}-lr{:.6}-t{}-lv{}-d{}-ml{}-l2{:.6}-sr{:.4}-sc{:.4}-es{}-s{}",
            self.strategy.name(),
            self.learning_rate,
            self.max_trees,
            self.max_leaves,
            self.max_depth,
            self.min_samples_leaf,
            self.l2_reg,
            self.subsample_rows,
            self.subsample_cols,
            self.early_stopping_rounds,
            self.seed
        )
    }
}

/// Flat tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn max_abs_leaf(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Leaf { value } => Some(value.abs()),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    /// Nested-object dump: `{feature, threshold, left, right}` | `{leaf: value}`.
    pub fn to_json(&self, feature_names: &[String]) -> serde_json::Value {
        fn walk(tree: &Tree, idx: usize, names: &[String]) -> serde_json::Value {
            match &tree.nodes[idx] {
                TreeNode::Leaf { value } => serde_json::json!({ "leaf": value }),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => serde_json::json!({
                    "feature": names[*feature],
                    "threshold": threshold,
                    "left": walk(tree, *left, names),
                    "right": walk(tree, *right, names),
                }),
            }
        }
        walk(self, 0, feature_names)
    }

    pub fn from_json(value: &serde_json::Value, feature_names: &[String]) -> Result<Tree> {
        fn walk(
            value: &serde_json::Value,
            names: &[String],
            nodes: &mut Vec<TreeNode>,
        ) -> Result<usize> {
            let obj = value
                .as_object()
                .ok_or_else(|| Error::Bundle("tree node must be an object".into()))?;
            let idx = nodes.len();
            if let Some(leaf) = obj.get("leaf") {
                let v = leaf
                    .as_f64()
                    .ok_or_else(|| Error::Bundle("leaf value must be a number".into()))?;
                nodes.push(TreeNode::Leaf { value: v });
                return Ok(idx);
            }
            let name = obj
                .get("feature")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Bundle("split node missing feature".into()))?;
            let feature = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
            let threshold = obj
                .get("threshold")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::Bundle("split node missing threshold".into()))?;
            nodes.push(TreeNode::Split {
                feature,
                threshold,
                left: 0,
                right: 0,
            });
            let left = walk(
                obj.get("left")
                    .ok_or_else(|| Error::Bundle("split node missing left".into()))?,
                names,
                nodes,
            )?;
            let right = walk(
                obj.get("right")
                    .ok_or_else(|| Error::Bundle("split node missing right".into()))?,
                names,
                nodes,
            )?;
            if let TreeNode::Split {
                left: l, right: r, ..
            } = &mut nodes[idx]
            {
                *l = left;
                *r = right;
            }
            Ok(idx)
        }
        let mut nodes = Vec::new();
        walk(value, feature_names, &mut nodes)?;
        Ok(Tree { nodes })
    }
}

/// One train/validation RMSE sample per boosting iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationStats {
    pub train_rmse: f64,
    pub valid_rmse: f64,
}

#[derive(Debug, Clone)]
pub struct GbdtModel {
    pub base_prediction: f64,
    pub trees: Vec<Tree>,
    pub config: GbdtConfig,
    pub feature_names: Vec<String>,
    pub train_history: Vec<IterationStats>,
}

impl GbdtModel {
    /// Predicts rows given column-major features aligned with
    /// `feature_names` (callers resolve name -> column order).
    pub fn predict_columns(&self, columns: &[Vec<f64>]) -> Vec<f64> {
        let n = columns.first().map_or(0, |c| c.len());
        let mut row = vec![0.0; columns.len()];
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            for (j, col) in columns.iter().enumerate() {
                row[j] = col[i];
            }
            out.push(self.predict_row(&row));
        }
        out
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut pred = self.base_prediction;
        for tree in &self.trees {
            pred += self.config.learning_rate * tree.predict_row(row);
        }
        pred
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "base_prediction": self.base_prediction,
            "config": serde_json::to_value(&self.config).expect("serializable config"),
            "feature_names": self.feature_names,
            "train_history": serde_json::to_value(&self.train_history).expect("serializable"),
            "trees": self
                .trees
                .iter()
                .map(|t| t.to_json(&self.feature_names))
                .collect::<Vec<_>>(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<GbdtModel> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Bundle("model must be an object".into()))?;
        let base_prediction = obj
            .get("base_prediction")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Bundle("model missing base_prediction".into()))?;
        let config: GbdtConfig = serde_json::from_value(
            obj.get("config")
                .cloned()
                .ok_or_else(|| Error::Bundle("model missing config".into()))?,
        )?;
        let feature_names: Vec<String> = serde_json::from_value(
            obj.get("feature_names")
                .cloned()
                .ok_or_else(|| Error::Bundle("model missing feature_names".into()))?,
        )?;
        let train_history: Vec<IterationStats> = serde_json::from_value(
            obj.get("train_history").cloned().unwrap_or_else(|| serde_json::json!([])),
        )?;
        let trees = obj
            .get("trees")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Bundle("model missing trees".into()))?
            .iter()
            .map(|t| Tree::from_json(t, &feature_names))
            .collect::<Result<Vec<_>>>()?;
        Ok(GbdtModel {
            base_prediction,
            trees,
            config,
            feature_names,
            train_history,
        })
    }
}

pub(crate) fn rmse(predictions: &[f64], targets: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        None => {
            let sse: f64 = predictions
                .iter()
                .zip(targets.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            (sse / targets.len() as f64).sqrt()
        }
        Some(w) => {
            let mut sse = 0.0;
            let mut wsum = 0.0;
            for ((p, t), wi) in predictions.iter().zip(targets.iter()).zip(w.iter()) {
                sse += wi * (p - t) * (p - t);
                wsum += wi;
            }
            (sse / wsum).sqrt()
        }
    }
}
