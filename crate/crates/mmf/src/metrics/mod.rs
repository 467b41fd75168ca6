//! The full-reference IQA metric battery: each metric maps an image pair
//! to one scalar, registered under a canonical name, polarity and tier.
//!
//! Scores are canonical-formula values computed on unit-range pixels; the
//! per-metric constants live next to each implementation. MAE is reported
//! on the 8-bit scale in feature batteries.

mod basic;
mod fft2;
mod fsim;
mod gmsd;
mod nlpd;
mod ssim;
mod vif;
mod vsi;

pub use basic::{mae, psnr, total_variation, tv_ratio, MaeScale, PSNR_CAP_DB, TV_EPSILON};
pub use fsim::fsim;
pub use gmsd::{gmsd, GMSD_C};
pub use nlpd::{nlpd, NLPD_SIGMA0};
pub use ssim::{ms_ssim, ssim, MS_SSIM_WEIGHTS, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use vif::{vif_spatial, VIF_NOISE_VAR, VIF_SCALES};
pub use vsi::vsi;

pub(crate) use ssim::ssim_index_map;

use crate::deepsim::{dists_from_features, lpips_from_features, FeatureExtractor};
use crate::error::{Error, Result};
use crate::imgio::{check_same_shape, ImageTensor};
use serde::{Deserialize, Serialize};

/// Direction in which a metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    HigherIsBetter,
    LowerIsBetter,
}

impl Polarity {
    pub fn arrow(self) -> char {
        match self {
            Polarity::HigherIsBetter => '↑',
            Polarity::LowerIsBetter => '↓',
        }
    }
}

/// Cost/coverage tier a metric belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tier {
    Core,
    Extended,
}

/// Registry entry for one metric.
#[derive(Debug, Clone)]
pub struct MetricDescriptor {
    pub name: &'static str,
    pub polarity: Polarity,
    pub tier: Tier,
    /// Coarse relative compute weight of this implementation (unitless).
    pub nominal_cost: f64,
    pub implemented: bool,
    /// Documented inclusive score range.
    pub range: (f64, f64),
}

/// Canonical registry, fixed order. `vif` is reserved for a
/// steerable-pyramid variant and `mad` is registered unimplemented.
pub fn registry() -> &'static [MetricDescriptor] {
    use Polarity::*;
    use Tier::*;
    static REGISTRY: &[MetricDescriptor] = &[
        MetricDescriptor { name: "psnr", polarity: HigherIsBetter, tier: Core, nominal_cost: 0.1, implemented: true, range: (0.0, 100.0) },
        MetricDescriptor { name: "mae", polarity: LowerIsBetter, tier: Core, nominal_cost: 0.1, implemented: true, range: (0.0, 255.0) },
        MetricDescriptor { name: "tv_ratio", polarity: HigherIsBetter, tier: Core, nominal_cost: 0.2, implemented: true, range: (0.0, f64::INFINITY) },
        MetricDescriptor { name: "ssim", polarity: HigherIsBetter, tier: Core, nominal_cost: 1.0, implemented: true, range: (-1.0, 1.0) },
        MetricDescriptor { name: "ms_ssim", polarity: HigherIsBetter, tier: Core, nominal_cost: 3.0, implemented: true, range: (0.0, 1.0) },
        MetricDescriptor { name: "gmsd", polarity: LowerIsBetter, tier: Core, nominal_cost: 0.5, implemented: true, range: (0.0, 0.5) },
        MetricDescriptor { name: "nlpd", polarity: LowerIsBetter, tier: Core, nominal_cost: 3.0, implemented: true, range: (0.0, 10.0) },
        MetricDescriptor { name: "vif_s", polarity: HigherIsBetter, tier: Core, nominal_cost: 2.0, implemented: true, range: (0.0, 2.0) },
        MetricDescriptor { name: "vif", polarity: HigherIsBetter, tier: Extended, nominal_cost: 60.0, implemented: false, range: (0.0, 2.0) },
        MetricDescriptor { name: "fsim", polarity: HigherIsBetter, tier: Extended, nominal_cost: 40.0, implemented: true, range: (0.0, 1.0) },
        MetricDescriptor { name: "vsi", polarity: HigherIsBetter, tier: Extended, nominal_cost: 30.0, implemented: true, range: (0.0, 1.0) },
        MetricDescriptor { name: "lpips", polarity: LowerIsBetter, tier: Core, nominal_cost: 8.0, implemented: true, range: (0.0, 12.0) },
        MetricDescriptor { name: "dists", polarity: LowerIsBetter, tier: Core, nominal_cost: 8.0, implemented: true, range: (0.0, 1.0) },
        MetricDescriptor { name: "mad", polarity: LowerIsBetter, tier: Extended, nominal_cost: 80.0, implemented: false, range: (0.0, 255.0) },
    ];
    REGISTRY
}

pub fn descriptor(name: &str) -> Result<&'static MetricDescriptor> {
    registry()
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::UnknownMetric(name.to_string()))
}

/// One computed score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricScore {
    pub name: String,
    pub value: f64,
    pub pair_id: String,
}

/// Which slice of the registry a battery run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatteryTier {
    /// Every implemented metric except the extended (time-expensive) ones.
    Core,
    /// All implemented metrics.
    Full,
}

impl BatteryTier {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "core" => Ok(BatteryTier::Core),
            "full" => Ok(BatteryTier::Full),
            other => Err(Error::InvalidArgument(format!(
                "unknown tier `{other}` (expected core|full)"
            ))),
        }
    }
}

/// Metric names included in a tier, in registry order.
pub fn tier_metrics(tier: BatteryTier) -> Vec<&'static str> {
    registry()
        .iter()
        .filter(|d| d.implemented)
        .filter(|d| match tier {
            BatteryTier::Core => d.tier == Tier::Core,
            BatteryTier::Full => true,
        })
        .map(|d| d.name)
        .collect()
}

/// Computes one metric by registry name.
pub fn compute_metric(
    name: &str,
    a: &ImageTensor,
    b: &ImageTensor,
    fx: &FeatureExtractor,
) -> Result<f64> {
    match name {
        "psnr" => psnr(a, b),
        "mae" => mae(a, b, MaeScale::Byte),
        "tv_ratio" => tv_ratio(a, b),
        "ssim" => ssim(a, b),
        "ms_ssim" => ms_ssim(a, b),
        "gmsd" => gmsd(a, b),
        "nlpd" => nlpd(a, b),
        "vif_s" => vif_spatial(a, b),
        "fsim" => fsim(a, b),
        "vsi" => vsi(a, b),
        "lpips" => crate::deepsim::lpips_like(&ensure_rgb(a), &ensure_rgb(b), fx),
        "dists" => crate::deepsim::dists(&ensure_rgb(a), &ensure_rgb(b), fx),
        "vif" | "mad" => Err(Error::MetricNotImplemented(name.to_string())),
        other => Err(Error::UnknownMetric(other.to_string())),
    }
}

/// Replicates grayscale input to RGB for the deep metrics.
fn ensure_rgb(img: &ImageTensor) -> ImageTensor {
    if img.channels() == 3 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.data().len() * 3);
    for &v in img.data() {
        data.extend_from_slice(&[v, v, v]);
    }
    ImageTensor::new(img.height(), img.width(), 3, data).expect("tripled channels")
}

/// Runs every metric in the tier on one pair, in registry order. The deep
/// metrics share one extractor forward pass per image. Any metric failure
/// aborts the pair with an error naming the metric.
pub fn compute_battery(
    a: &ImageTensor,
    b: &ImageTensor,
    tier: BatteryTier,
    fx: &FeatureExtractor,
    pair_id: &str,
) -> Result<Vec<MetricScore>> {
    check_same_shape(a, b)?;
    if a.height() < 16 || a.width() < 16 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} below the 16px metric minimum",
            a.height(),
            a.width()
        )));
    }
    let names = tier_metrics(tier);
    let needs_deep = names.iter().any(|&n| n == "lpips" || n == "dists");
    let deep_features = if needs_deep {
        let ra = ensure_rgb(a);
        let rb = ensure_rgb(b);
        Some((fx.forward(&ra)?, fx.forward(&rb)?))
    } else {
        None
    };

    let mut scores = Vec::with_capacity(names.len());
    for name in names {
        let value = match (name, &deep_features) {
            ("lpips", Some((fa, fb))) => lpips_from_features(fa, fb),
            ("dists", Some((fa, fb))) => dists_from_features(fa, fb),
            _ => compute_metric(name, a, b, fx),
        }
        .map_err(|e| Error::FeatureTable(format!("metric `{name}` failed on `{pair_id}`: {e}")))?;
        if !value.is_finite() {
            return Err(Error::FeatureTable(format!(
                "metric `{name}` produced a non-finite value on `{pair_id}`"
            )));
        }
        scores.push(MetricScore {
            name: name.to_string(),
            value,
            pair_id: pair_id.to_string(),
        });
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rgb_noise(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn registry_invariants() {
        let names: Vec<&str> = registry().iter().map(|d| d.name).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), names.len(), "registry names must be unique");
        assert_eq!(registry().len(), 14);

        use Polarity::*;
        for (name, polarity) in [
            ("psnr", HigherIsBetter),
            ("tv_ratio", HigherIsBetter),
            ("ssim", HigherIsBetter),
            ("ms_ssim", HigherIsBetter),
            ("fsim", HigherIsBetter),
            ("vsi", HigherIsBetter),
            ("vif", HigherIsBetter),
            ("vif_s", HigherIsBetter),
            ("mae", LowerIsBetter),
            ("gmsd", LowerIsBetter),
            ("nlpd", LowerIsBetter),
            ("lpips", LowerIsBetter),
            ("dists", LowerIsBetter),
            ("mad", LowerIsBetter),
        ] {
            assert_eq!(descriptor(name).unwrap().polarity, polarity, "{name}");
        }
    }

    #[test]
    fn tier_contents() {
        let core = tier_metrics(BatteryTier::Core);
        assert_eq!(
            core,
            vec!["psnr", "mae", "tv_ratio", "ssim", "ms_ssim", "gmsd", "nlpd", "vif_s", "lpips", "dists"]
        );
        let full = tier_metrics(BatteryTier::Full);
        assert_eq!(full.len(), 12);
        assert!(full.contains(&"fsim") && full.contains(&"vsi"));
        assert!(!full.contains(&"mad") && !full.contains(&"vif"));
    }

    #[test]
    fn unimplemented_metrics_error() {
        let img = rgb_noise(64, 64, 1);
        let fx = crate::deepsim::FeatureExtractor::tiny_v1();
        assert!(matches!(
            compute_metric("mad", &img, &img, &fx),
            Err(Error::MetricNotImplemented(_))
        ));
        assert!(matches!(
            compute_metric("vif", &img, &img, &fx),
            Err(Error::MetricNotImplemented(_))
        ));
        assert!(matches!(
            compute_metric("nope", &img, &img, &fx),
            Err(Error::UnknownMetric(_))
        ));
    }

    #[test]
    fn identity_battery() {
        let img = rgb_noise(64, 64, 2);
        let fx = crate::deepsim::FeatureExtractor::tiny_v1();
        let scores = compute_battery(&img, &img, BatteryTier::Core, &fx, "p0").unwrap();
        let get = |name: &str| scores.iter().find(|s| s.name == name).unwrap().value;
        assert_eq!(get("psnr"), 100.0);
        assert_eq!(get("mae"), 0.0);
        assert!((get("tv_ratio") - 1.0).abs() < 1e-9);
        assert!((get("ssim") - 1.0).abs() < 1e-9);
        assert!((get("ms_ssim") - 1.0).abs() < 1e-9);
        assert!(get("gmsd").abs() < 1e-9);
        assert!(get("nlpd").abs() < 1e-9);
        assert!((get("vif_s") - 1.0).abs() < 1e-6);
        assert!(get("lpips").abs() < 1e-6);
        assert!(get("dists").abs() < 1e-6);
    }

    #[test]
    fn battery_scores_in_documented_ranges() {
        let fx = crate::deepsim::FeatureExtractor::tiny_v1();
        let a = rgb_noise(64, 64, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let b_data: Vec<f64> = a
            .data()
            .iter()
            .map(|v| (v + 0.2 * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0))
            .collect();
        let b = ImageTensor::new(64, 64, 3, b_data).unwrap();
        let scores = compute_battery(&a, &b, BatteryTier::Full, &fx, "p1").unwrap();
        assert_eq!(scores.len(), 12);
        for s in &scores {
            let d = descriptor(&s.name).unwrap();
            assert!(
                s.value >= d.range.0 - 1e-9 && s.value <= d.range.1 + 1e-9,
                "{} = {} outside [{}, {}]",
                s.name,
                s.value,
                d.range.0,
                d.range.1
            );
        }
    }

    #[test]
    fn battery_rejects_mismatched_shapes() {
        let fx = crate::deepsim::FeatureExtractor::tiny_v1();
        let a = rgb_noise(64, 64, 5);
        let b = rgb_noise(32, 64, 6);
        assert!(compute_battery(&a, &b, BatteryTier::Core, &fx, "p2").is_err());
    }

    #[test]
    fn battery_deterministic() {
        let fx = crate::deepsim::FeatureExtractor::tiny_v1();
        let a = rgb_noise(64, 64, 7);
        let b = rgb_noise(64, 64, 8);
        let s1 = compute_battery(&a, &b, BatteryTier::Core, &fx, "p3").unwrap();
        let s2 = compute_battery(&a, &b, BatteryTier::Core, &fx, "p3").unwrap();
        for (x, y) in s1.iter().zip(s2.iter()) {
            assert_eq!(x.value.to_bits(), y.value.to_bits(), "{}", x.name);
        }
    }
}
