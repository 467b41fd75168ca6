//! Exact-split (non-histogram) level-wise regression tree, used as the
//! golden-feature probe learner.

use super::{Tree, TreeNode};
use crate::error::{Error, Result};

struct ExactNode {
    rows: Vec<u32>,
    tree_index: usize,
}

fn mean_of(rows: &[u32], target: &[f64]) -> f64 {
    rows.iter().map(|&r| target[r as usize]).sum::<f64>() / rows.len() as f64
}

/// Best exact split for one node: scan midpoints between consecutive
/// distinct values per feature, maximizing variance reduction. Ties keep
/// the lowest feature index, then the lowest threshold.
fn best_exact_split(
    rows: &[u32],
    columns: &[Vec<f64>],
    target: &[f64],
    min_leaf: usize,
) -> Option<(f64, usize, f64)> {
    let total_sum: f64 = rows.iter().map(|&r| target[r as usize]).sum();
    let n = rows.len();
    let parent_score = total_sum * total_sum / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;

    for (f, col) in columns.iter().enumerate() {
        let mut order: Vec<u32> = rows.to_vec();
        order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += target[order[i] as usize];
            let v = col[order[i] as usize];
            let next = col[order[i + 1] as usize];
            if v == next {
                continue;
            }
            let left_n = i + 1;
            let right_n = n - left_n;
            if left_n < min_leaf || right_n < min_leaf {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let gain = left_sum * left_sum / left_n as f64
                + right_sum * right_sum / right_n as f64
                - parent_score;
            if best.map_or(gain > 1e-12, |(bg, _, _)| gain > bg) {
                best = Some((gain, f, 0.5 * (v + next)));
            }
        }
    }
    best
}

/// Level-wise exact regression tree of at most `depth` levels. Leaves carry
/// plain mean targets (no regularization).
pub fn single_tree_fit(
    columns: &[Vec<f64>],
    target: &[f64],
    depth: usize,
    min_leaf: usize,
) -> Result<Tree> {
    if target.is_empty() || columns.is_empty() {
        return Err(Error::Train("empty probe-tree input".into()));
    }
    for col in columns {
        if col.len() != target.len() {
            return Err(Error::Train("ragged probe-tree input".into()));
        }
    }
    let all_rows: Vec<u32> = (0..target.len() as u32).collect();
    let mut tree = Tree {
        nodes: vec![TreeNode::Leaf {
            value: mean_of(&all_rows, target),
        }],
    };
    let mut frontier = vec![ExactNode {
        rows: all_rows,
        tree_index: 0,
    }];
    for _ in 0..depth {
        let mut next = Vec::new();
        for node in &frontier {
            let Some((_, feature, threshold)) =
                best_exact_split(&node.rows, columns, target, min_leaf)
            else {
                continue;
            };
            let (mut lrows, mut rrows) = (Vec::new(), Vec::new());
            for &r in &node.rows {
                if columns[feature][r as usize] <= threshold {
                    lrows.push(r);
                } else {
                    rrows.push(r);
                }
            }
            let li = tree.nodes.len();
            tree.nodes.push(TreeNode::Leaf {
                value: mean_of(&lrows, target),
            });
            let ri = tree.nodes.len();
            tree.nodes.push(TreeNode::Leaf {
                value: mean_of(&rrows, target),
            });
            tree.nodes[node.tree_index] = TreeNode::Split {
                feature,
                threshold,
                left: li,
                right: ri,
            };
            next.push(ExactNode { rows: lrows, tree_index: li });
            next.push(ExactNode { rows: rrows, tree_index: ri });
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(tree)
}

/// Mean squared error of a tree on the given data.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn tree_mse(tree: &Tree, columns: &[Vec<f64>], target: &[f64]) -> f64 {
    let n = target.len();
    let mut row = vec![0.0; columns.len()];
    let mut sse = 0.0;
    for i in 0..n {
        for (j, col) in columns.iter().enumerate() {
            row[j] = col[i];
        }
        let p = tree.predict_row(&row);
        sse += (p - target[i]) * (p - target[i]);
    }
    sse / n as f64
}
