//! Command-line wiring: score -> train -> predict -> gate, plus the
//! maps/bench/stats/synth utilities.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 strict-gate rejection,
//! 3 runtime failure. Logs go to stderr; machine-readable output goes to
//! files or stdout only.

use crate::automl::{predict_bundle, train_pipeline, EnsembleBundle, TrainMode};
use crate::bench::{run_bench, tradeoff_report};
use crate::deepsim::{FeatureExtractor, TINY_V1_PROVENANCE};
use crate::error::{Error, Result};
use crate::features::{build_feature_table, FeatureTable, TripletManifest};
use crate::imgio::decode;
use crate::metrics::{registry, tier_metrics, BatteryTier};
use crate::synthgen::{generate, SynthSpec};
use crate::vismaps::{all_maps, write_map};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::PathBuf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_GATE_REJECT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (bundled extractor tiny-v1)"
);

#[derive(Parser)]
#[command(name = "mmf", version = VERSION)]
#[command(about = "Multi-method fusion quality gating for image-to-image translation")]
pub struct Cli {
    /// RNG seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads (0 = auto). Falls back to MMF_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone)]
pub struct ExtractorArg {
    /// Feature extractor weights file (MMFX); defaults to the bundled
    /// tiny-v1 fixture.
    #[arg(long)]
    pub extractor: Option<PathBuf>,
}

impl ExtractorArg {
    fn load(&self) -> Result<FeatureExtractor> {
        match &self.extractor {
            Some(path) => FeatureExtractor::load(path),
            None => Ok(FeatureExtractor::tiny_v1()),
        }
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Inspect the metric registry.
    Metrics {
        #[command(subcommand)]
        action: MetricsAction,
    },
    /// Score a manifest's source/translated pairs into a feature CSV.
    Score {
        /// JSON-lines triplet manifest.
        manifest: PathBuf,
        /// Metric tier: core|full.
        #[arg(long, default_value = "core")]
        tier: String,
        #[command(flatten)]
        extractor: ExtractorArg,
        /// Output CSV path.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the MMF ensemble on a feature CSV with targets.
    Train {
        /// Feature CSV produced by `score`.
        features: PathBuf,
        /// Wall-clock budget in seconds.
        #[arg(long, default_value_t = 600.0)]
        budget: f64,
        /// Pipeline mode: compete|fast.
        #[arg(long, default_value = "compete")]
        mode: String,
        /// Output bundle directory.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Predict DISTS for a feature CSV or a manifest through a bundle.
    Predict {
        /// Feature CSV or JSON-lines manifest.
        input: PathBuf,
        /// Trained bundle directory.
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        extractor: ExtractorArg,
        /// Output CSV path (input columns plus `predicted_dists`).
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Threshold predicted DISTS to accept or reject translations.
    Gate {
        /// JSON-lines manifest (ground truth not required).
        manifest: PathBuf,
        /// Trained bundle directory.
        #[arg(long)]
        bundle: PathBuf,
        /// Accept iff predicted DISTS <= threshold (in [0,1]).
        #[arg(long)]
        threshold: f64,
        /// Exit with code 2 when any record is rejected.
        #[arg(long)]
        strict: bool,
        #[command(flatten)]
        extractor: ExtractorArg,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write SSIM/MAE/TV-Ratio error visibility maps (darker = more error).
    Maps {
        /// JSON-lines manifest; maps cover the source/translated pair.
        manifest: PathBuf,
        /// Output directory for `<sample_id>_<metric>.png` files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-metric wall-clock and score-distribution benchmark.
    Bench {
        /// JSON-lines manifest with complete triplets.
        manifest: PathBuf,
        /// Timed repetitions per metric.
        #[arg(long, default_value_t = 50)]
        reps: usize,
        #[arg(long, default_value = "core")]
        tier: String,
        #[command(flatten)]
        extractor: ExtractorArg,
        /// Also write the machine-readable CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score-distribution statistics (no timing).
    Stats {
        /// JSON-lines manifest with complete triplets.
        manifest: PathBuf,
        #[arg(long, default_value = "core")]
        tier: String,
        #[command(flatten)]
        extractor: ExtractorArg,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Accuracy/time trade-off between a full and a reduced bundle.
    Tradeoff {
        /// Bundle trained on the full feature set.
        #[arg(long)]
        full: PathBuf,
        /// Bundle trained without the slow metrics.
        #[arg(long)]
        reduced: PathBuf,
        /// Feature CSV with targets covering the full feature set.
        #[arg(long)]
        test: PathBuf,
        /// Manifest for measuring per-metric wall clock.
        #[arg(long)]
        manifest: PathBuf,
        /// Timed repetitions for the wall-clock measurement.
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[command(flatten)]
        extractor: ExtractorArg,
    },
    /// Generate a deterministic synthetic triplet dataset.
    Synth {
        /// Number of source images.
        #[arg(long, default_value_t = 120)]
        sources: usize,
        /// Number of simulated translation models (model_00 is perfect).
        #[arg(long, default_value_t = 8)]
        models: usize,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Output directory; the manifest lands at <out_dir>/manifest.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum MetricsAction {
    /// Print name, polarity, tier and nominal cost for every metric.
    List,
}

/// Per-record gating outcome; accept iff predicted <= threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateEntry {
    pub sample_id: String,
    pub model_id: String,
    pub predicted_dists: f64,
    pub decision: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateSummary {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub mean_predicted: f64,
    pub std_predicted: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateReport {
    pub threshold: f64,
    pub bundle: String,
    pub extractor_provenance: String,
    pub entries: Vec<GateEntry>,
    pub summary: GateSummary,
}

impl GateReport {
    pub fn build(
        ids: Vec<(String, String)>,
        predictions: &[f64],
        threshold: f64,
        bundle: String,
        extractor_provenance: String,
    ) -> GateReport {
        let entries: Vec<GateEntry> = ids
            .into_iter()
            .zip(predictions.iter())
            .map(|((sample_id, model_id), &p)| GateEntry {
                sample_id,
                model_id,
                predicted_dists: p,
                decision: if p <= threshold { "accept" } else { "reject" }.into(),
            })
            .collect();
        let accepted = entries.iter().filter(|e| e.decision == "accept").count();
        let n = predictions.len() as f64;
        let mean = predictions.iter().sum::<f64>() / n;
        let var = predictions.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
        GateReport {
            threshold,
            bundle,
            extractor_provenance,
            summary: GateSummary {
                total: entries.len(),
                accepted,
                rejected: entries.len() - accepted,
                mean_predicted: mean,
                std_predicted: var.sqrt(),
            },
            entries,
        }
    }
}

fn configure_threads(threads: Option<usize>) {
    let n = threads.or_else(|| {
        std::env::var("MMF_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = n {
        if n > 0 {
            // Ignore failure: the global pool may already exist in-process.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

/// Scores a manifest into a feature table through the bundle's tier.
fn score_for_bundle(
    manifest: &TripletManifest,
    bundle: &EnsembleBundle,
    fx: &FeatureExtractor,
) -> Result<FeatureTable> {
    let tier = BatteryTier::parse(&bundle.preprocessing.tier).unwrap_or(BatteryTier::Core);
    if fx.provenance() != bundle.preprocessing.extractor_provenance {
        eprintln!(
            "warning: extractor provenance `{}` differs from the bundle's `{}`",
            fx.provenance(),
            bundle.preprocessing.extractor_provenance
        );
    }
    // Gating manifests need no ground truth; drop it so scoring skips the
    // target pass entirely.
    let stripped = TripletManifest::new(
        manifest
            .records
            .iter()
            .cloned()
            .map(|mut r| {
                r.ground_truth = None;
                r
            })
            .collect(),
    )?;
    build_feature_table(&stripped, tier, fx)
}

fn infer_tier_name(columns: &[String]) -> String {
    let names: Vec<&str> = columns.iter().map(String::as_str).collect();
    if names == tier_metrics(BatteryTier::Core) {
        "core".into()
    } else if names == tier_metrics(BatteryTier::Full) {
        "full".into()
    } else {
        "custom".into()
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    configure_threads(cli.threads);
    match cli.command {
        Command::Metrics { action: MetricsAction::List } => {
            println!(
                "{:<10} {:<9} {:<9} {:>12} {:>12}",
                "name", "polarity", "tier", "nominal cost", "implemented"
            );
            for d in registry() {
                println!(
                    "{:<10} {:<9} {:<9} {:>12.1} {:>12}",
                    d.name,
                    d.polarity.arrow(),
                    format!("{:?}", d.tier).to_lowercase(),
                    d.nominal_cost,
                    if d.implemented { "yes" } else { "no" }
                );
            }
            Ok(EXIT_OK)
        }

        Command::Score { manifest, tier, extractor, out } => {
            let tier = BatteryTier::parse(&tier)?;
            let fx = extractor.load()?;
            let manifest = TripletManifest::load(&manifest)?;
            let table = build_feature_table(&manifest, tier, &fx)?;
            table.to_csv(&out)?;
            eprintln!(
                "scored {} pair(s) x {} metric(s){} -> {}",
                table.n_rows(),
                table.feature_names().len(),
                if table.target().is_some() { " with targets" } else { "" },
                out.display()
            );
            Ok(EXIT_OK)
        }

        Command::Train { features, budget, mode, out } => {
            let mode = TrainMode::parse(&mode)?;
            let table = FeatureTable::from_csv(&features)?;
            let tier_name = infer_tier_name(table.feature_names());
            let bundle = train_pipeline(
                &table,
                budget,
                cli.seed,
                mode,
                &tier_name,
                TINY_V1_PROVENANCE,
            )?;
            bundle.save(&out)?;
            println!(
                "test MAE {:.6}  test r2 {:.4}  (ensemble of {} member(s), {} model(s) trained)",
                bundle.report.test_mae,
                bundle.report.test_r2,
                bundle.members.len(),
                bundle.report.per_model_valid_rmse.len()
            );
            eprintln!("bundle written to {}", out.display());
            Ok(EXIT_OK)
        }

        Command::Predict { input, bundle, extractor, out } => {
            let bundle = EnsembleBundle::load(&bundle)?;
            let is_manifest = input
                .extension()
                .map(|e| e == "jsonl" || e == "json")
                .unwrap_or(false);
            let table = if is_manifest {
                let manifest = TripletManifest::load(&input)?;
                let fx = extractor.load()?;
                score_for_bundle(&manifest, &bundle, &fx)?
            } else {
                FeatureTable::from_csv(&input)?
            };
            let raw = table.select_columns(&bundle.preprocessing.raw_features)?;
            let preds = predict_bundle(&bundle, &raw)?;
            let mut out_table = table.clone();
            out_table.push_column("predicted_dists".into(), preds)?;
            out_table.to_csv(&out)?;
            eprintln!("predictions for {} row(s) -> {}", out_table.n_rows(), out.display());
            Ok(EXIT_OK)
        }

        Command::Gate { manifest, bundle, threshold, strict, extractor, out } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::InvalidArgument(format!(
                    "threshold {threshold} outside [0,1]"
                )));
            }
            let bundle_path = bundle.display().to_string();
            let bundle = EnsembleBundle::load(&bundle)?;
            let fx = extractor.load()?;
            let manifest = TripletManifest::load(&manifest)?;
            let table = score_for_bundle(&manifest, &bundle, &fx)?;
            let raw = table.select_columns(&bundle.preprocessing.raw_features)?;
            let preds = predict_bundle(&bundle, &raw)?;
            let ids: Vec<(String, String)> = table
                .ids()
                .iter()
                .map(|id| (id.sample_id.clone(), id.model_id.clone()))
                .collect();
            let report = GateReport::build(
                ids,
                &preds,
                threshold,
                bundle_path,
                bundle.preprocessing.extractor_provenance.clone(),
            );
            let json = serde_json::to_string_pretty(&serde_json::to_value(&report)?)?;
            match &out {
                Some(path) => std::fs::write(path, json.as_bytes())
                    .map_err(|e| Error::io(path.display().to_string(), e))?,
                None => println!("{json}"),
            }
            eprintln!(
                "gate: {}/{} accepted at threshold {}",
                report.summary.accepted, report.summary.total, threshold
            );
            if strict && report.summary.rejected > 0 {
                return Ok(EXIT_GATE_REJECT);
            }
            Ok(EXIT_OK)
        }

        Command::Maps { manifest, out_dir } => {
            let manifest = TripletManifest::load(&manifest)?;
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
            let unique_samples = manifest
                .records
                .iter()
                .map(|r| r.sample_id.as_str())
                .collect::<HashSet<_>>()
                .len()
                == manifest.records.len();
            let mut written = 0usize;
            for record in &manifest.records {
                let a = decode(&record.source)?;
                let b = decode(&record.translated)?;
                let pair_id = format!("{}/{}", record.sample_id, record.model_id);
                let stem = if unique_samples {
                    record.sample_id.clone()
                } else {
                    format!("{}_{}", record.sample_id, record.model_id)
                };
                for map in all_maps(&a, &b, &pair_id)? {
                    let path = out_dir.join(format!("{stem}_{}.png", map.metric));
                    write_map(&map, &path)?;
                    written += 1;
                }
            }
            eprintln!("{written} map(s) -> {}", out_dir.display());
            Ok(EXIT_OK)
        }

        Command::Bench { manifest, reps, tier, extractor, csv } => {
            let tier = BatteryTier::parse(&tier)?;
            let fx = extractor.load()?;
            let manifest = TripletManifest::load(&manifest)?;
            let report = run_bench(&manifest, reps, tier, &fx, true)?;
            print!("{}", report.render_table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            Ok(EXIT_OK)
        }

        Command::Stats { manifest, tier, extractor, csv } => {
            let tier = BatteryTier::parse(&tier)?;
            let fx = extractor.load()?;
            let manifest = TripletManifest::load(&manifest)?;
            let report = run_bench(&manifest, 1, tier, &fx, false)?;
            print!("{}", report.render_table());
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv())
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            Ok(EXIT_OK)
        }

        Command::Tradeoff { full, reduced, test, manifest, reps, extractor } => {
            let full = EnsembleBundle::load(&full)?;
            let reduced = EnsembleBundle::load(&reduced)?;
            let test = FeatureTable::from_csv(&test)?;
            let fx = extractor.load()?;
            let manifest = TripletManifest::load(&manifest)?;
            let bench = run_bench(&manifest, reps, BatteryTier::Full, &fx, true)?;
            let report = tradeoff_report(&full, &reduced, &test, &bench)?;
            print!("{}", report.render());
            Ok(EXIT_OK)
        }

        Command::Synth { sources, models, size, out_dir } => {
            let mut spec = SynthSpec::with_default_models(sources, models, cli.seed);
            spec.size = size;
            let manifest = generate(&spec, &out_dir)?;
            eprintln!(
                "{} record(s) ({} source(s) x {} model(s) + perfect rows) -> {}",
                manifest.records.len(),
                sources,
                models,
                out_dir.join("manifest.jsonl").display()
            );
            println!("{}", out_dir.join("manifest.jsonl").display());
            Ok(EXIT_OK)
        }
    }
}

/// Maps an error to the documented exit code.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::UnknownMetric(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                EXIT_OK
            } else {
                EXIT_USAGE
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
