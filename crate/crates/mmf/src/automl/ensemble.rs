//! Greedy forward ensemble selection with replacement over bagged
//! candidate subsets.

use crate::error::{Error, Result};
use crate::gbdt::rmse;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

const MAX_STEPS: usize = 50;
const STALL_LIMIT: usize = 5;
const BAG_FRACTION: f64 = 0.5;

/// Repetition counts per model index plus the achieved validation RMSE.
#[derive(Debug, Clone)]
pub struct EnsembleSelection {
    pub counts: BTreeMap<usize, usize>,
    pub valid_rmse: f64,
}

/// Starts from the single best model, then repeatedly adds (with
/// replacement) the model from a seeded 50% bag that minimizes the RMSE of
/// the repetition-weighted mean; stops after 5 consecutive non-improving
/// steps and returns the best ensemble seen.
pub fn greedy_ensemble(
    predictions: &[Vec<f64>],
    targets: &[f64],
    seed: u64,
) -> Result<EnsembleSelection> {
    if predictions.is_empty() {
        return Err(Error::Train("greedy ensemble needs at least one model".into()));
    }
    let n = targets.len();
    for (i, p) in predictions.iter().enumerate() {
        if p.len() != n {
            return Err(Error::Train(format!(
                "model {i} predictions misaligned with targets"
            )));
        }
    }

    // Initialize with the best single model (ties: lowest index).
    let mut best_single = 0;
    let mut best_single_rmse = f64::INFINITY;
    for (i, p) in predictions.iter().enumerate() {
        let r = rmse(p, targets, None);
        if r < best_single_rmse {
            best_single_rmse = r;
            best_single = i;
        }
    }

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    counts.insert(best_single, 1);
    let mut sum: Vec<f64> = predictions[best_single].clone();
    let mut members = 1usize;
    let mut current_rmse = best_single_rmse;

    let mut best_counts = counts.clone();
    let mut best_rmse = current_rmse;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bag_size = ((predictions.len() as f64 * BAG_FRACTION).ceil() as usize)
        .clamp(1, predictions.len());
    let mut stall = 0usize;
    let mut mean_buf = vec![0.0; n];

    for _ in 0..MAX_STEPS {
        let mut indices: Vec<usize> = (0..predictions.len()).collect();
        indices.shuffle(&mut rng);
        let mut bag = indices[..bag_size].to_vec();
        bag.sort_unstable();

        let mut best_add: Option<(f64, usize)> = None;
        for &cand in &bag {
            for i in 0..n {
                mean_buf[i] = (sum[i] + predictions[cand][i]) / (members + 1) as f64;
            }
            let r = rmse(&mean_buf, targets, None);
            if best_add.map_or(true, |(br, _)| r < br) {
                best_add = Some((r, cand));
            }
        }
        let Some((r, cand)) = best_add else { break };
        for i in 0..n {
            sum[i] += predictions[cand][i];
        }
        members += 1;
        *counts.entry(cand).or_insert(0) += 1;
        current_rmse = r;

        if current_rmse < best_rmse - 1e-15 {
            best_rmse = current_rmse;
            best_counts = counts.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_LIMIT {
                break;
            }
        }
    }

    Ok(EnsembleSelection {
        counts: best_counts,
        valid_rmse: best_rmse,
    })
}

/// Repetition-weighted mean of member predictions.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn weighted_mean(
    counts: &BTreeMap<usize, usize>,
    predictions: &[Vec<f64>],
    n: usize,
) -> Vec<f64> {
    let total: usize = counts.values().sum();
    let mut out = vec![0.0; n];
    for (&idx, &reps) in counts {
        for i in 0..n {
            out[i] += predictions[idx][i] * reps as f64;
        }
    }
    for v in &mut out {
        *v /= total as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn singleton_pool() {
        let preds = vec![vec![1.0, 2.0, 3.0]];
        let targets = vec![1.1, 2.1, 3.1];
        let sel = greedy_ensemble(&preds, &targets, 1).unwrap();
        assert_eq!(sel.counts.len(), 1);
        assert_eq!(sel.counts[&0], 1);
    }

    #[test]
    fn anti_correlated_pair_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let targets: Vec<f64> = (0..100).map(|_| rng.gen::<f64>()).collect();
        let errs: Vec<f64> = (0..100).map(|_| rng.gen::<f64>() - 0.5).collect();
        let a: Vec<f64> = targets.iter().zip(errs.iter()).map(|(t, e)| t + e).collect();
        let b: Vec<f64> = targets.iter().zip(errs.iter()).map(|(t, e)| t - e).collect();
        let best_single = rmse(&a, &targets, None).min(rmse(&b, &targets, None));
        let sel = greedy_ensemble(&[a, b], &targets, 3).unwrap();
        assert_eq!(sel.counts.len(), 2, "both models must be selected");
        assert!(
            sel.valid_rmse < 0.1 * best_single,
            "ensemble {} vs best single {best_single}",
            sel.valid_rmse
        );
    }

    #[test]
    fn never_degrades_best_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let targets: Vec<f64> = (0..60).map(|_| rng.gen::<f64>()).collect();
        for seed in 0..20u64 {
            let mut preds = Vec::new();
            for _ in 0..6 {
                preds.push(
                    targets
                        .iter()
                        .map(|t| t + 0.3 * (rng.gen::<f64>() - 0.5))
                        .collect::<Vec<f64>>(),
                );
            }
            let best_single = preds
                .iter()
                .map(|p| rmse(p, &targets, None))
                .fold(f64::INFINITY, f64::min);
            let sel = greedy_ensemble(&preds, &targets, seed).unwrap();
            assert!(
                sel.valid_rmse <= best_single + 1e-12,
                "seed {seed}: {} > {best_single}",
                sel.valid_rmse
            );
            // Reported RMSE must match recomputation from the counts.
            let mean = weighted_mean(&sel.counts, &preds, targets.len());
            assert!((rmse(&mean, &targets, None) - sel.valid_rmse).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(greedy_ensemble(&[], &[1.0], 0).is_err());
    }
}
