//! K-Means feature augmentation: distance-to-center columns plus the
//! nearest-center index, fit in standardized feature space and replayable
//! on unseen rows.

use super::FeatureTable;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const MAX_ITERS: usize = 100;
const CENTER_TOL: f64 = 1e-6;
const CONST_STD: f64 = 1e-12;

/// Replayable clustering artifact. Constant columns are excluded from the
/// standardizer; centers live in standardized space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansAugmentation {
    pub used_columns: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
    pub k: usize,
}

/// Default cluster count: round(sqrt(n/2)) clamped to [2, 16].
pub fn default_k(n_rows: usize) -> usize {
    (((n_rows as f64) / 2.0).sqrt().round() as usize).clamp(2, 16)
}

fn standardized_matrix(
    table: &FeatureTable,
    aug: &KMeansAugmentation,
) -> Result<Vec<Vec<f64>>> {
    let n = table.n_rows();
    let mut rows = vec![vec![0.0; aug.used_columns.len()]; n];
    for (j, name) in aug.used_columns.iter().enumerate() {
        let col = table.column(name)?;
        for (i, row) in rows.iter_mut().enumerate() {
            row[j] = (col[i] - aug.means[j]) / aug.stds[j];
        }
    }
    Ok(rows)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(row, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// Lloyd's algorithm with k-means++ initialization. Appends `km_dist_<i>`
/// columns (Euclidean, standardized space) and `km_center`.
pub fn kmeans_augment(
    table: &mut FeatureTable,
    k: usize,
    seed: u64,
) -> Result<KMeansAugmentation> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    let n = table.n_rows();
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {n} rows"
        )));
    }

    let mut used_columns = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for name in table.feature_names() {
        let col = table.column(name)?;
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std > CONST_STD {
            used_columns.push(name.clone());
            means.push(mean);
            stds.push(std);
        }
    }
    if used_columns.is_empty() {
        return Err(Error::FeatureTable(
            "all feature columns are constant; nothing to cluster".into(),
        ));
    }

    let mut aug = KMeansAugmentation {
        used_columns,
        means,
        stds,
        centers: Vec::new(),
        k,
    };
    let rows = standardized_matrix(table, &aug)?;

    // k-means++ seeding.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.gen_range(0..n)].clone());
    let mut min_d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = min_d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut draw = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in min_d2.iter().enumerate() {
                draw -= d;
                if draw <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(rows[next].clone());
        for (i, row) in rows.iter().enumerate() {
            min_d2[i] = min_d2[i].min(sq_dist(row, centers.last().unwrap()));
        }
    }

    // Lloyd iterations.
    let dim = aug.used_columns.len();
    let mut assignment = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        for (i, row) in rows.iter().enumerate() {
            assignment[i] = nearest(row, &centers).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, row) in rows.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (j, v) in row.iter().enumerate() {
                sums[assignment[i]][j] += v;
            }
        }
        let mut movement: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // empty cluster keeps its center
            }
            let new_center: Vec<f64> =
                sums[c].iter().map(|s| s / counts[c] as f64).collect();
            movement = movement.max(sq_dist(&new_center, &centers[c]).sqrt());
            centers[c] = new_center;
        }
        if movement < CENTER_TOL {
            break;
        }
    }
    aug.centers = centers;

    append_kmeans_columns(table, &aug)?;
    Ok(aug)
}

/// Replays a fitted augmentation on any table with the raw columns present.
pub fn append_kmeans_columns(table: &mut FeatureTable, aug: &KMeansAugmentation) -> Result<()> {
    let rows = standardized_matrix(table, aug)?;
    let mut dist_cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); aug.k];
    let mut center_col = Vec::with_capacity(rows.len());
    for row in &rows {
        for (c, col) in dist_cols.iter_mut().enumerate() {
            col.push(sq_dist(row, &aug.centers[c]).sqrt());
        }
        center_col.push(nearest(row, &aug.centers).0 as f64);
    }
    for (c, col) in dist_cols.into_iter().enumerate() {
        table.push_column(format!("km_dist_{c}"), col)?;
    }
    table.push_column("km_center".into(), center_col)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RowId;

    fn blob_table(n_per: usize) -> FeatureTable {
        // Two well-separated blobs around (0,0) and (10,10).
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ids = Vec::new();
        for i in 0..2 * n_per {
            let offset = if i < n_per { 0.0 } else { 10.0 };
            xs.push(offset + 0.1 * (rng.gen::<f64>() - 0.5));
            ys.push(offset + 0.1 * (rng.gen::<f64>() - 0.5));
            ids.push(RowId {
                sample_id: format!("s{i}"),
                model_id: "m".into(),
                group_id: format!("s{i}"),
            });
        }
        FeatureTable::new(vec!["x".into(), "y".into()], ids, vec![xs, ys], None).unwrap()
    }

    #[test]
    fn k_below_two_rejected() {
        let mut table = blob_table(10);
        assert!(kmeans_augment(&mut table, 1, 42).is_err());
        assert!(kmeans_augment(&mut table, 21, 42).is_err());
    }

    #[test]
    fn two_blobs_recovered() {
        let mut table = blob_table(25);
        let aug = kmeans_augment(&mut table, 2, 42).unwrap();
        // Oracle: blob means standardize to roughly (+-1, +-1); centers must
        // land within 0.1 of them.
        for center in &aug.centers {
            let near_low = center.iter().all(|v| (v + 1.0).abs() < 0.1);
            let near_high = center.iter().all(|v| (v - 1.0).abs() < 0.1);
            assert!(near_low || near_high, "center {center:?} not near a blob");
        }
        assert!(table.column("km_dist_0").is_ok());
        assert!(table.column("km_dist_1").is_ok());
        assert!(table.column("km_center").is_ok());
    }

    #[test]
    fn replay_matches_fit() {
        let mut table = blob_table(20);
        let pristine = table.clone();
        let aug = kmeans_augment(&mut table, 3, 7).unwrap();

        let mut replay = pristine;
        append_kmeans_columns(&mut replay, &aug).unwrap();
        for name in ["km_dist_0", "km_dist_1", "km_dist_2", "km_center"] {
            let a = table.column(name).unwrap();
            let b = replay.column(name).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn constant_matrix_rejected() {
        let ids = (0..5)
            .map(|i| RowId {
                sample_id: format!("s{i}"),
                model_id: "m".into(),
                group_id: format!("s{i}"),
            })
            .collect();
        let mut table = FeatureTable::new(
            vec!["c".into()],
            ids,
            vec![vec![3.0; 5]],
            None,
        )
        .unwrap();
        assert!(kmeans_augment(&mut table, 2, 1).is_err());
    }

    #[test]
    fn default_k_heuristic() {
        assert_eq!(default_k(8), 2);
        assert_eq!(default_k(50), 5);
        assert_eq!(default_k(1080), 16);
    }
}
