//! Wall-clock and score-distribution benchmarking over triplet manifests,
//! plus the accuracy/time trade-off comparison between two trained bundles.

use crate::automl::{predict_bundle, EnsembleBundle};
use crate::deepsim::FeatureExtractor;
use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::imgio::{decode, ImageTensor};
use crate::metrics::{compute_metric, descriptor, tier_metrics, BatteryTier};
use std::time::Instant;

/// Published per-metric wall-clock baselines in milliseconds, measured on
/// different hardware with different implementations. Informational only.
pub fn reference_ms(name: &str) -> Option<f64> {
    Some(match name {
        "psnr" => 0.315,
        "tv_ratio" => 0.850,
        "mae" => 0.448,
        "ssim" => 1.018,
        "ms_ssim" => 3.597,
        "fsim" => 121.504,
        "vsi" => 15.862,
        "gmsd" => 0.989,
        "nlpd" => 5.384,
        "mad" => 179.336,
        "vif" => 74.309,
        "vif_s" => 6.159,
        "lpips" => 28.924,
        "dists" => 28.860,
        _ => return None,
    })
}

/// Reference line for the combined per-pair budget: the full battery is
/// expected to stay under a third of a second per image pair.
pub const COMBINED_BUDGET_MS: f64 = 1000.0 / 3.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

fn stats(samples: &[f64]) -> Stats {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Stats { mean, std: var.sqrt() }
}

/// The three pairings of a triplet, in report order.
pub const PAIRINGS: [&str; 3] = [
    "original vs ground truth",
    "original vs translated",
    "translated vs ground truth",
];

#[derive(Debug, Clone)]
pub struct MetricBenchRow {
    pub name: String,
    pub arrow: char,
    /// Timing over (triplet x rep) samples; `None` for score-only runs.
    pub time_ms: Option<Stats>,
    pub reference_ms: Option<f64>,
    /// Score stats per pairing, [orig-gt, orig-translated, translated-gt].
    pub pairings: [Stats; 3],
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<MetricBenchRow>,
    pub reps: usize,
    pub n_triplets: usize,
    pub tier: BatteryTier,
    /// Sum of measured per-metric mean times (core battery cost per pair).
    pub combined_ms: Option<f64>,
    pub environment: String,
}

fn environment_string() -> String {
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{} {} ({cores} cores)",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Scores (and optionally times) every implemented metric in the tier over
/// complete triplets. Timing uses a monotonic clock on the source/translated
/// pairing, one untimed warm-up, timed section single-threaded.
pub fn run_bench(
    manifest: &crate::features::TripletManifest,
    reps: usize,
    tier: BatteryTier,
    fx: &FeatureExtractor,
    timed: bool,
) -> Result<BenchReport> {
    if timed && reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if !manifest.has_ground_truth()? {
        return Err(Error::Manifest(
            "benchmarking needs complete triplets with ground truth".into(),
        ));
    }
    if manifest.records.is_empty() {
        return Err(Error::Manifest("empty manifest".into()));
    }

    // Pairs pre-loaded; decode time is excluded from all timings.
    let mut triplets: Vec<(ImageTensor, ImageTensor, ImageTensor)> = Vec::new();
    for r in &manifest.records {
        triplets.push((
            decode(&r.source)?,
            decode(&r.translated)?,
            decode(r.ground_truth.as_ref().expect("checked"))?,
        ));
    }

    let names = tier_metrics(tier);
    let mut rows = Vec::with_capacity(names.len());
    for name in &names {
        let d = descriptor(name)?;
        let mut per_pairing: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (src, tr, gt) in &triplets {
            per_pairing[0].push(compute_metric(name, src, gt, fx)?);
            per_pairing[1].push(compute_metric(name, src, tr, fx)?);
            per_pairing[2].push(compute_metric(name, tr, gt, fx)?);
        }

        let time_ms = if timed {
            // Warm-up rep, untimed.
            let (src, tr, _) = &triplets[0];
            let _ = compute_metric(name, src, tr, fx)?;
            let mut samples = Vec::with_capacity(reps * triplets.len());
            for _ in 0..reps {
                for (src, tr, _) in &triplets {
                    let t0 = Instant::now();
                    let _ = compute_metric(name, src, tr, fx)?;
                    samples.push(t0.elapsed().as_secs_f64() * 1e3);
                }
            }
            Some(stats(&samples))
        } else {
            None
        };

        rows.push(MetricBenchRow {
            name: name.to_string(),
            arrow: d.polarity.arrow(),
            time_ms,
            reference_ms: reference_ms(name),
            pairings: [
                stats(&per_pairing[0]),
                stats(&per_pairing[1]),
                stats(&per_pairing[2]),
            ],
        });
    }

    let combined_ms = timed.then(|| {
        rows.iter()
            .filter_map(|r| r.time_ms.as_ref().map(|t| t.mean))
            .sum()
    });
    Ok(BenchReport {
        rows,
        reps,
        n_triplets: triplets.len(),
        tier,
        combined_ms,
        environment: environment_string(),
    })
}

impl BenchReport {
    /// Human-readable table in the shape of the published benchmark: one
    /// row per metric with polarity arrow, timing and the three pairing
    /// score columns.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# metric benchmark: {} triplet(s), {} rep(s), {}\n",
            self.n_triplets, self.reps, self.environment
        ));
        out.push_str(&format!(
            "{:<11} {:>20} {:>10} {:>19} {:>19} {:>19}\n",
            "metric", "time ms (mean±std)", "ref ms*", PAIRINGS_SHORT[0], PAIRINGS_SHORT[1], PAIRINGS_SHORT[2]
        ));
        for r in &self.rows {
            let time = match &r.time_ms {
                Some(t) => format!("{:.3} ± {:.3}", t.mean, t.std),
                None => "-".into(),
            };
            let refm = r
                .reference_ms
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<9} {} {:>20} {:>10} {:>19} {:>19} {:>19}\n",
                r.name,
                r.arrow,
                time,
                refm,
                format!("{:.3} ± {:.3}", r.pairings[0].mean, r.pairings[0].std),
                format!("{:.3} ± {:.3}", r.pairings[1].mean, r.pairings[1].std),
                format!("{:.3} ± {:.3}", r.pairings[2].mean, r.pairings[2].std),
            ));
        }
        if let Some(combined) = self.combined_ms {
            out.push_str(&format!(
                "combined per-pair time: {combined:.1} ms (reference context: under {COMBINED_BUDGET_MS:.0} ms per pair)\n"
            ));
        }
        out.push_str("* reference timings come from a published baseline on different hardware; informational only\n");
        out
    }

    /// Machine-readable CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "metric,polarity,time_ms_mean,time_ms_std,reference_ms,orig_gt_mean,orig_gt_std,orig_tr_mean,orig_tr_std,tr_gt_mean,tr_gt_std\n",
        );
        for r in &self.rows {
            let (tm, ts) = match &r.time_ms {
                Some(t) => (format!("{}", t.mean), format!("{}", t.std)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.name,
                r.arrow,
                tm,
                ts,
                r.reference_ms.map(|v| v.to_string()).unwrap_or_default(),
                r.pairings[0].mean,
                r.pairings[0].std,
                r.pairings[1].mean,
                r.pairings[1].std,
                r.pairings[2].mean,
                r.pairings[2].std,
            ));
        }
        out
    }

    pub fn metric_mean_ms(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.name == name)
            .and_then(|r| r.time_ms.as_ref().map(|t| t.mean))
    }
}

const PAIRINGS_SHORT: [&str; 3] = ["orig-vs-gt", "orig-vs-tr", "tr-vs-gt"];

#[derive(Debug, Clone)]
pub struct TradeoffSide {
    pub label: String,
    pub features: Vec<String>,
    pub test_mae: f64,
    pub test_r2: f64,
    pub summed_metric_ms: f64,
}

/// Side-by-side accuracy/time comparison of a full bundle against one
/// trained without the slow metrics.
#[derive(Debug, Clone)]
pub struct TradeoffReport {
    pub full: TradeoffSide,
    pub reduced: TradeoffSide,
}

impl TradeoffReport {
    pub fn mae_delta(&self) -> f64 {
        self.reduced.test_mae - self.full.test_mae
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>10} {:>10} {:>16} {:>10}\n",
            "variant", "test MAE", "test r2", "metric ms/pair", "features"
        ));
        for side in [&self.full, &self.reduced] {
            out.push_str(&format!(
                "{:<10} {:>10.4} {:>10.4} {:>16.2} {:>10}\n",
                side.label,
                side.test_mae,
                side.test_r2,
                side.summed_metric_ms,
                side.features.len()
            ));
        }
        out.push_str(&format!(
            "MAE delta (reduced - full): {:+.4}; wall-clock saving: {:.2} ms/pair\n",
            self.mae_delta(),
            self.full.summed_metric_ms - self.reduced.summed_metric_ms
        ));
        out
    }
}

fn side_stats(
    label: &str,
    bundle: &EnsembleBundle,
    test: &FeatureTable,
    bench: &BenchReport,
) -> Result<TradeoffSide> {
    let target = test
        .target()
        .ok_or_else(|| Error::FeatureTable("trade-off test table needs targets".into()))?;
    let raw = test.select_columns(&bundle.preprocessing.raw_features)?;
    let preds = predict_bundle(bundle, &raw)?;
    let n = target.len() as f64;
    let mae = preds
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    let mean_t = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|t| (t - mean_t) * (t - mean_t)).sum();
    let ss_res: f64 = preds
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let summed: f64 = bundle
        .preprocessing
        .raw_features
        .iter()
        .map(|f| bench.metric_mean_ms(f).unwrap_or(0.0))
        .sum();
    Ok(TradeoffSide {
        label: label.into(),
        features: bundle.preprocessing.raw_features.clone(),
        test_mae: mae,
        test_r2: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 },
        summed_metric_ms: summed,
    })
}

/// Compares two bundles trained over the same group splits. The reduced
/// bundle must show a strictly lower summed per-pair metric cost.
pub fn tradeoff_report(
    bundle_full: &EnsembleBundle,
    bundle_reduced: &EnsembleBundle,
    test: &FeatureTable,
    bench: &BenchReport,
) -> Result<TradeoffReport> {
    if bundle_full.report.test_groups != bundle_reduced.report.test_groups {
        return Err(Error::Bundle(
            "bundles were trained on different group splits".into(),
        ));
    }
    let full = side_stats("full", bundle_full, test, bench)?;
    let reduced = side_stats("reduced", bundle_reduced, test, bench)?;
    Ok(TradeoffReport { full, reduced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{PairRecord, TripletManifest};
    use crate::imgio::encode_png;
    use rand::{Rng, SeedableRng};
    use std::path::Path;

    fn write_noise_png(path: &Path, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = ImageTensor::new(64, 64, 3, (0..64 * 64 * 3).map(|_| rng.gen()).collect())
            .unwrap();
        encode_png(&img, path).unwrap();
    }

    fn manifest(dir: &Path, n: usize, identical: bool) -> TripletManifest {
        let mut records = Vec::new();
        for i in 0..n {
            let src = dir.join(format!("s{i}.png"));
            write_noise_png(&src, i as u64 * 3);
            let (tr, gt) = if identical {
                (src.clone(), src.clone())
            } else {
                let tr = dir.join(format!("t{i}.png"));
                let gt = dir.join(format!("g{i}.png"));
                write_noise_png(&tr, i as u64 * 3 + 1);
                write_noise_png(&gt, i as u64 * 3 + 2);
                (tr, gt)
            };
            records.push(PairRecord {
                sample_id: format!("s{i}"),
                model_id: "m".into(),
                source: src,
                translated: tr,
                ground_truth: Some(gt),
            });
        }
        TripletManifest::new(records).unwrap()
    }

    #[test]
    fn report_shape_and_sanity() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path(), 3, false);
        let fx = FeatureExtractor::tiny_v1();
        let report = run_bench(&m, 1, BatteryTier::Core, &fx, true).unwrap();
        assert_eq!(report.rows.len(), 10);
        assert_eq!(report.n_triplets, 3);
        for row in &report.rows {
            let t = row.time_ms.as_ref().unwrap();
            assert!(t.mean > 0.0 && t.std >= 0.0, "{}", row.name);
            for p in &row.pairings {
                assert!(p.mean.is_finite() && p.std >= 0.0);
            }
        }
        assert!(report.combined_ms.unwrap() > 0.0);
        let table = report.render_table();
        assert!(table.contains('↑') && table.contains('↓'));
        assert!(table.contains("psnr") && table.contains("dists"));
    }

    #[test]
    fn identical_triplets_have_zero_translated_gt_dists() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path(), 2, true);
        let fx = FeatureExtractor::tiny_v1();
        let report = run_bench(&m, 1, BatteryTier::Core, &fx, false).unwrap();
        let dists_row = report.rows.iter().find(|r| r.name == "dists").unwrap();
        assert!(dists_row.time_ms.is_none());
        assert!(dists_row.pairings[2].mean.abs() < 1e-9);
        assert!(dists_row.pairings[2].std.abs() < 1e-9);
    }

    #[test]
    fn missing_ground_truth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.png");
        let tr = dir.path().join("t.png");
        write_noise_png(&src, 1);
        write_noise_png(&tr, 2);
        let m = TripletManifest::new(vec![PairRecord {
            sample_id: "a".into(),
            model_id: "m".into(),
            source: src,
            translated: tr,
            ground_truth: None,
        }])
        .unwrap();
        let fx = FeatureExtractor::tiny_v1();
        assert!(run_bench(&m, 1, BatteryTier::Core, &fx, true).is_err());
    }

    #[test]
    fn score_stats_independent_of_reps() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(dir.path(), 2, false);
        let fx = FeatureExtractor::tiny_v1();
        let r1 = run_bench(&m, 1, BatteryTier::Core, &fx, true).unwrap();
        let r3 = run_bench(&m, 3, BatteryTier::Core, &fx, true).unwrap();
        for (a, b) in r1.rows.iter().zip(r3.rows.iter()) {
            for (pa, pb) in a.pairings.iter().zip(b.pairings.iter()) {
                assert_eq!(pa.mean.to_bits(), pb.mean.to_bits());
                assert_eq!(pa.std.to_bits(), pb.std.to_bits());
            }
        }
    }
}
