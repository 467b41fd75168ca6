//! Boosting loop and histogram-based tree growing.

use super::{rmse, GbdtConfig, GbdtModel, GrowthStrategy, IterationStats, Tree, TreeNode};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MAX_BINS: usize = 256;
const MIN_GAIN: f64 = 1e-12;

/// Borrowed column-major training view.
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a> {
    pub names: &'a [String],
    pub columns: &'a [Vec<f64>],
    pub target: &'a [f64],
}

impl<'a> DataView<'a> {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }
}

struct BinnedFeature {
    /// Split thresholds between adjacent bins, ascending. Bin `i` holds
    /// values in (edges[i-1], edges[i]]; the last bin is open-ended.
    edges: Vec<f64>,
    /// Per-row bin index.
    bins: Vec<u8>,
}

fn bin_feature(values: &[f64]) -> BinnedFeature {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let edges: Vec<f64> = if sorted.len() <= MAX_BINS {
        sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    } else {
        // Quantile cuts over the distinct values.
        let mut edges = Vec::with_capacity(MAX_BINS - 1);
        for k in 1..MAX_BINS {
            let idx = k * sorted.len() / MAX_BINS;
            if idx == 0 || idx >= sorted.len() {
                continue;
            }
            edges.push(0.5 * (sorted[idx - 1] + sorted[idx]));
        }
        edges.dedup_by(|a, b| a == b);
        edges
    };

    let bins = values
        .iter()
        .map(|&v| edges.partition_point(|&e| v > e) as u8)
        .collect();
    BinnedFeature { edges, bins }
}

#[derive(Clone, Copy, Default)]
struct BinStats {
    grad: f64, // sum of weight * residual
    hess: f64, // sum of weight
    count: usize,
}

struct NodeState {
    rows: Vec<u32>,
    grad: f64,
    hess: f64,
    /// Node index in the tree being built.
    tree_index: usize,
}

fn leaf_value(grad: f64, hess: f64, l2: f64) -> f64 {
    if hess + l2 <= 0.0 {
        0.0
    } else {
        grad / (hess + l2)
    }
}

fn node_score(grad: f64, hess: f64, l2: f64) -> f64 {
    grad * grad / (hess + l2)
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

fn histogram(
    node_rows: &[u32],
    binned: &BinnedFeature,
    residuals: &[f64],
    weights: &[f64],
) -> Vec<BinStats> {
    let mut hist = vec![BinStats::default(); binned.edges.len() + 1];
    for &r in node_rows {
        let i = r as usize;
        let b = binned.bins[i] as usize;
        hist[b].grad += weights[i] * residuals[i];
        hist[b].hess += weights[i];
        hist[b].count += 1;
    }
    hist
}

/// Best split for one feature via a left-to-right histogram scan; ties keep
/// the lowest bin.
fn best_feature_split(
    hist: &[BinStats],
    parent_grad: f64,
    parent_hess: f64,
    parent_count: usize,
    min_leaf: usize,
    l2: f64,
) -> Option<(f64, usize)> {
    let parent_score = node_score(parent_grad, parent_hess, l2);
    let mut left = BinStats::default();
    let mut best: Option<(f64, usize)> = None;
    for bin in 0..hist.len().saturating_sub(1) {
        left.grad += hist[bin].grad;
        left.hess += hist[bin].hess;
        left.count += hist[bin].count;
        let right_count = parent_count - left.count;
        if left.count < min_leaf || right_count < min_leaf {
            continue;
        }
        let gain = node_score(left.grad, left.hess, l2)
            + node_score(parent_grad - left.grad, parent_hess - left.hess, l2)
            - parent_score;
        if best.map_or(gain > MIN_GAIN, |(bg, _)| gain > bg) {
            best = Some((gain, bin));
        }
    }
    best
}

fn best_node_split(
    node: &NodeState,
    binned: &[BinnedFeature],
    feature_mask: &[bool],
    residuals: &[f64],
    weights: &[f64],
    min_leaf: usize,
    l2: f64,
) -> Option<SplitCandidate> {
    let mut best: Option<SplitCandidate> = None;
    for (f, bf) in binned.iter().enumerate() {
        if !feature_mask[f] || bf.edges.is_empty() {
            continue;
        }
        let hist = histogram(&node.rows, bf, residuals, weights);
        if let Some((gain, bin)) =
            best_feature_split(&hist, node.grad, node.hess, node.rows.len(), min_leaf, l2)
        {
            if best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(SplitCandidate { gain, feature: f, bin });
            }
        }
    }
    best
}

fn partition_rows(rows: &[u32], binned: &BinnedFeature, bin: usize) -> (Vec<u32>, Vec<u32>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &r in rows {
        if (binned.bins[r as usize] as usize) <= bin {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    (left, right)
}

fn node_sums(rows: &[u32], residuals: &[f64], weights: &[f64]) -> (f64, f64) {
    let mut grad = 0.0;
    let mut hess = 0.0;
    for &r in rows {
        grad += weights[r as usize] * residuals[r as usize];
        hess += weights[r as usize];
    }
    (grad, hess)
}

/// Grows one tree on the given row subset. Returns `None` when no split
/// clears the gain threshold (pure-leaf tree).
fn grow_tree(
    cfg: &GbdtConfig,
    rows: Vec<u32>,
    binned: &[BinnedFeature],
    feature_mask: &[bool],
    residuals: &[f64],
    weights: &[f64],
) -> Option<Tree> {
    let l2 = cfg.l2_reg;
    let (grad, hess) = node_sums(&rows, residuals, weights);
    let mut tree = Tree {
        nodes: vec![TreeNode::Leaf {
            value: leaf_value(grad, hess, l2),
        }],
    };
    let root = NodeState {
        rows,
        grad,
        hess,
        tree_index: 0,
    };

    let split_node = |tree: &mut Tree,
                      node: &NodeState,
                      cand: &SplitCandidate,
                      binned: &[BinnedFeature]|
     -> (NodeState, NodeState) {
        let bf = &binned[cand.feature];
        let (lrows, rrows) = partition_rows(&node.rows, bf, cand.bin);
        let (lg, lh) = node_sums(&lrows, residuals, weights);
        let (rg, rh) = (node.grad - lg, node.hess - lh);
        let li = tree.nodes.len();
        tree.nodes.push(TreeNode::Leaf {
            value: leaf_value(lg, lh, l2),
        });
        let ri = tree.nodes.len();
        tree.nodes.push(TreeNode::Leaf {
            value: leaf_value(rg, rh, l2),
        });
        tree.nodes[node.tree_index] = TreeNode::Split {
            feature: cand.feature,
            threshold: bf.edges[cand.bin],
            left: li,
            right: ri,
        };
        (
            NodeState { rows: lrows, grad: lg, hess: lh, tree_index: li },
            NodeState { rows: rrows, grad: rg, hess: rh, tree_index: ri },
        )
    };

    let mut any_split = false;
    match cfg.strategy {
        GrowthStrategy::LevelWise => {
            let mut frontier = vec![root];
            for _ in 0..cfg.max_depth {
                let mut next = Vec::new();
                for node in &frontier {
                    if let Some(cand) = best_node_split(
                        node, binned, feature_mask, residuals, weights, cfg.min_samples_leaf, l2,
                    ) {
                        let (l, r) = split_node(&mut tree, node, &cand, binned);
                        next.push(l);
                        next.push(r);
                        any_split = true;
                    }
                }
                if next.is_empty() {
                    break;
                }
                frontier = next;
            }
        }
        GrowthStrategy::LeafWise => {
            // Expandable leaves with cached best candidates; each step takes
            // the highest gain (ties: earliest-created node).
            let mut leaves: Vec<(NodeState, Option<SplitCandidate>)> = Vec::new();
            let cand = best_node_split(
                &root, binned, feature_mask, residuals, weights, cfg.min_samples_leaf, l2,
            );
            leaves.push((root, cand));
            let mut n_leaves = 1;
            while n_leaves < cfg.max_leaves {
                let mut best_idx: Option<usize> = None;
                for (i, (_, cand)) in leaves.iter().enumerate() {
                    if let Some(c) = cand {
                        if best_idx.map_or(true, |bi| {
                            c.gain > leaves[bi].1.as_ref().expect("candidate").gain
                        }) {
                            best_idx = Some(i);
                        }
                    }
                }
                let Some(idx) = best_idx else { break };
                let (node, cand) = leaves.swap_remove(idx);
                let cand = cand.expect("selected candidate");
                let (l, r) = split_node(&mut tree, &node, &cand, binned);
                any_split = true;
                n_leaves += 1;
                for child in [l, r] {
                    let c = best_node_split(
                        &child, binned, feature_mask, residuals, weights, cfg.min_samples_leaf, l2,
                    );
                    leaves.push((child, c));
                }
            }
        }
        GrowthStrategy::Oblivious => {
            let mut frontier = vec![root];
            for _ in 0..cfg.max_depth {
                // Prefix-summed histograms per node, then pick the single
                // (feature, bin) with the best summed gain across the
                // frontier.
                let mut best: Option<(f64, usize, usize)> = None;
                for (f, bf) in binned.iter().enumerate() {
                    if !feature_mask[f] || bf.edges.is_empty() {
                        continue;
                    }
                    let prefix: Vec<Vec<BinStats>> = frontier
                        .iter()
                        .map(|n| {
                            let mut h = histogram(&n.rows, bf, residuals, weights);
                            for b in 1..h.len() {
                                h[b].grad += h[b - 1].grad;
                                h[b].hess += h[b - 1].hess;
                                h[b].count += h[b - 1].count;
                            }
                            h
                        })
                        .collect();
                    for bin in 0..bf.edges.len() {
                        let mut total_gain = 0.0;
                        for (node, pre) in frontier.iter().zip(prefix.iter()) {
                            let left = pre[bin];
                            let right_count = node.rows.len() - left.count;
                            if left.count < cfg.min_samples_leaf
                                || right_count < cfg.min_samples_leaf
                            {
                                continue;
                            }
                            let gain = node_score(left.grad, left.hess, l2)
                                + node_score(node.grad - left.grad, node.hess - left.hess, l2)
                                - node_score(node.grad, node.hess, l2);
                            if gain > 0.0 {
                                total_gain += gain;
                            }
                        }
                        if total_gain > MIN_GAIN
                            && best.map_or(true, |(bg, _, _)| total_gain > bg)
                        {
                            best = Some((total_gain, f, bin));
                        }
                    }
                }
                let Some((_, feature, bin)) = best else { break };
                let mut next = Vec::new();
                for node in &frontier {
                    // Children with no rows inherit the parent's value so
                    // unseen rows routed there stay sane.
                    let parent_value = leaf_value(node.grad, node.hess, l2);
                    let cand = SplitCandidate { gain: 0.0, feature, bin };
                    let (mut l, mut r) = split_node(&mut tree, node, &cand, binned);
                    any_split = true;
                    for child in [&mut l, &mut r] {
                        if child.rows.is_empty() {
                            tree.nodes[child.tree_index] = TreeNode::Leaf { value: parent_value };
                        }
                    }
                    next.push(l);
                    next.push(r);
                }
                frontier = next;
            }
        }
    }

    if any_split {
        Some(tree)
    } else {
        None
    }
}

/// Squared-error boosting with early stopping on validation RMSE.
///
/// The returned model is truncated to the best validation iteration.
pub fn fit(
    train: DataView,
    valid: DataView,
    cfg: &GbdtConfig,
    weights: Option<&[f64]>,
) -> Result<GbdtModel> {
    cfg.validate()?;
    let n = train.n_rows();
    if n == 0 {
        return Err(Error::Train("empty training set".into()));
    }
    if train.names.len() != train.columns.len() {
        return Err(Error::Train("feature name/column count mismatch".into()));
    }
    if valid.names != train.names {
        return Err(Error::Train("validation columns differ from train".into()));
    }
    for col in train.columns {
        if col.len() != n {
            return Err(Error::Train("ragged training columns".into()));
        }
    }
    let weights_vec: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Train("weight length mismatch".into()));
            }
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(Error::Train("weights must be positive and finite".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };

    let wsum: f64 = weights_vec.iter().sum();
    let base_prediction = train
        .target
        .iter()
        .zip(weights_vec.iter())
        .map(|(t, w)| t * w)
        .sum::<f64>()
        / wsum;

    let binned: Vec<BinnedFeature> = train.columns.iter().map(|c| bin_feature(c)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train_pred = vec![base_prediction; n];
    let mut valid_pred = vec![base_prediction; valid.n_rows()];
    let mut residuals = vec![0.0; n];
    let mut trees: Vec<Tree> = Vec::new();
    let mut history: Vec<IterationStats> = Vec::new();
    let mut best_valid = f64::INFINITY;
    let mut best_iter: usize = 0; // number of trees at the best point

    let n_features = train.columns.len();
    let row_count = ((cfg.subsample_rows * n as f64).floor() as usize).clamp(1, n);
    let col_count = ((cfg.subsample_cols * n_features as f64).ceil() as usize).clamp(1, n_features);

    let mut valid_row = vec![0.0; n_features];
    for iter in 0..cfg.max_trees {
        for i in 0..n {
            residuals[i] = train.target[i] - train_pred[i];
        }

        let rows: Vec<u32> = if row_count < n {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.shuffle(&mut rng);
            let mut take = idx[..row_count].to_vec();
            take.sort_unstable();
            take
        } else {
            (0..n as u32).collect()
        };
        let feature_mask: Vec<bool> = if col_count < n_features {
            let mut idx: Vec<usize> = (0..n_features).collect();
            idx.shuffle(&mut rng);
            let mut mask = vec![false; n_features];
            for &f in &idx[..col_count] {
                mask[f] = true;
            }
            mask
        } else {
            vec![true; n_features]
        };

        let Some(tree) = grow_tree(cfg, rows, &binned, &feature_mask, &residuals, &weights_vec)
        else {
            break; // no split clears the gain threshold anywhere
        };

        // Accumulate predictions; rows are scored through the tree directly.
        let mut row_buf = vec![0.0; n_features];
        for i in 0..n {
            for (j, col) in train.columns.iter().enumerate() {
                row_buf[j] = col[i];
            }
            train_pred[i] += cfg.learning_rate * tree.predict_row(&row_buf);
        }
        for i in 0..valid.n_rows() {
            for (j, col) in valid.columns.iter().enumerate() {
                valid_row[j] = col[i];
            }
            valid_pred[i] += cfg.learning_rate * tree.predict_row(&valid_row);
        }
        trees.push(tree);

        let train_rmse = rmse(&train_pred, train.target, Some(&weights_vec));
        let valid_rmse = if valid.n_rows() > 0 {
            rmse(&valid_pred, valid.target, None)
        } else {
            train_rmse
        };
        history.push(IterationStats { train_rmse, valid_rmse });

        if valid_rmse < best_valid {
            best_valid = valid_rmse;
            best_iter = iter + 1;
        } else if iter + 1 - best_iter >= cfg.early_stopping_rounds {
            break;
        }
    }

    trees.truncate(best_iter.max(if trees.is_empty() { 0 } else { 1 }));
    history.truncate(trees.len());

    Ok(GbdtModel {
        base_prediction,
        trees,
        config: cfg.clone(),
        feature_names: train.names.to_vec(),
        train_history: history,
    })
}
