//! Golden features: arithmetic combinations of column pairs, ranked by the
//! test MSE of a depth-3 probe tree trained on the single new feature.

use super::FeatureTable;
use crate::error::{Error, Result};
use crate::gbdt::single_tree_fit;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const GOLDEN_TOP_N_DEFAULT: usize = 10;
const PROBE_SUBSAMPLE: usize = 5000;
const PROBE_DEPTH: usize = 3;
const PROBE_MIN_LEAF: usize = 5;
const RATIO_EPS: f64 = 1e-10;
const CLAMP: f64 = 1e15;
const WINSOR_LO_PCT: f64 = 0.1;
const WINSOR_HI_PCT: f64 = 99.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldenOp {
    Subtract,
    Add,
    Multiply,
    Ratio,
}

impl GoldenOp {
    pub fn token(self) -> &'static str {
        match self {
            GoldenOp::Subtract => "sub",
            GoldenOp::Add => "add",
            GoldenOp::Multiply => "mul",
            GoldenOp::Ratio => "div",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        let v = match self {
            GoldenOp::Subtract => a - b,
            GoldenOp::Add => a + b,
            GoldenOp::Multiply => a * b,
            GoldenOp::Ratio => {
                let d = if b.abs() < RATIO_EPS {
                    if b < 0.0 {
                        -RATIO_EPS
                    } else {
                        RATIO_EPS
                    }
                } else {
                    b
                };
                a / d
            }
        };
        if v.is_nan() {
            0.0
        } else {
            v.clamp(-CLAMP, CLAMP)
        }
    }
}

/// One derived feature: `left <op> right`, with its probe score and the
/// winsorization bounds recorded for inference replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenFeatureDef {
    pub left: String,
    pub right: String,
    pub op: GoldenOp,
    /// Probe-tree test MSE (lower ranks first).
    pub score: f64,
    pub winsor_lo: f64,
    pub winsor_hi: f64,
}

impl GoldenFeatureDef {
    pub fn column_name(&self) -> String {
        format!("gf_{}_{}_{}", self.left, self.op.token(), self.right)
    }
}

/// Linear-interpolation percentile of already-sorted values.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = pct / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn raw_column(table: &FeatureTable, left: &str, right: &str, op: GoldenOp) -> Result<Vec<f64>> {
    let a = table.column(left)?;
    let b = table.column(right)?;
    Ok(a.iter().zip(b.iter()).map(|(&x, &y)| op.apply(x, y)).collect())
}

/// Brute-force enumeration over every unordered column pair and every op
/// (ratios in both directions: 5 candidates per pair). Each candidate is
/// scored by a depth-3 probe tree on a seeded half/half subsample split;
/// ties break by derived-column name. Returns the `top_n` best definitions
/// with winsorization bounds computed over the full table.
pub fn golden_features(
    table: &FeatureTable,
    top_n: usize,
    seed: u64,
) -> Result<Vec<GoldenFeatureDef>> {
    let target = table
        .target()
        .ok_or_else(|| Error::FeatureTable("golden features need a target column".into()))?;
    let n = table.n_rows();
    if n < 4 {
        return Err(Error::FeatureTable(format!(
            "golden features need at least 4 rows, got {n}"
        )));
    }

    // Seeded subsample, split half train / half test.
    let m = PROBE_SUBSAMPLE.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let sample = &idx[..m];
    let (train_rows, test_rows) = sample.split_at(m / 2);

    let names = table.feature_names().to_vec();
    let mut candidates: Vec<(String, GoldenFeatureDef)> = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let mut pairs = vec![
                (names[i].clone(), names[j].clone(), GoldenOp::Subtract),
                (names[i].clone(), names[j].clone(), GoldenOp::Add),
                (names[i].clone(), names[j].clone(), GoldenOp::Multiply),
                (names[i].clone(), names[j].clone(), GoldenOp::Ratio),
                (names[j].clone(), names[i].clone(), GoldenOp::Ratio),
            ];
            for (left, right, op) in pairs.drain(..) {
                let column = raw_column(table, &left, &right, op)?;
                let train_col: Vec<f64> = train_rows.iter().map(|&r| column[r]).collect();
                let train_y: Vec<f64> = train_rows.iter().map(|&r| target[r]).collect();
                let tree =
                    single_tree_fit(&[train_col], &train_y, PROBE_DEPTH, PROBE_MIN_LEAF)?;
                let mut sse = 0.0;
                for &r in test_rows {
                    let p = tree.predict_row(&[column[r]]);
                    sse += (p - target[r]) * (p - target[r]);
                }
                let mse = sse / test_rows.len() as f64;
                let def = GoldenFeatureDef {
                    left,
                    right,
                    op,
                    score: mse,
                    winsor_lo: 0.0,
                    winsor_hi: 0.0,
                };
                candidates.push((def.column_name(), def));
            }
        }
    }

    candidates.sort_by(|(name_a, def_a), (name_b, def_b)| {
        def_a
            .score
            .total_cmp(&def_b.score)
            .then_with(|| name_a.cmp(name_b))
    });
    let mut out = Vec::with_capacity(top_n.min(candidates.len()));
    for (_, mut def) in candidates.into_iter().take(top_n) {
        // Winsor bounds over the full training table, persisted for replay.
        let mut col = raw_column(table, &def.left, &def.right, def.op)?;
        col.sort_by(f64::total_cmp);
        def.winsor_lo = percentile(&col, WINSOR_LO_PCT);
        def.winsor_hi = percentile(&col, WINSOR_HI_PCT);
        out.push(def);
    }
    Ok(out)
}

/// Appends the derived columns (clamped then winsorized with the stored
/// bounds) to any table holding the raw columns.
pub fn apply_golden_features(table: &mut FeatureTable, defs: &[GoldenFeatureDef]) -> Result<()> {
    for def in defs {
        let col = raw_column(table, &def.left, &def.right, def.op)?
            .into_iter()
            .map(|v| v.clamp(def.winsor_lo, def.winsor_hi))
            .collect();
        table.push_column(def.column_name(), col)?;
    }
    Ok(())
}
