//! Deterministic synthetic triplet generator: procedural source images, a
//! flattening ground-truth transform (per-region mean color), and a ladder
//! of simulated translation models that degrade the ground truth.

use crate::error::{Error, Result};
use crate::features::{PairRecord, TripletManifest};
use crate::imgio::{convolve_same, encode_png, gaussian_kernel, Border, ImageTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;

/// Per-model degradation strengths; all zero means a perfect model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Severity {
    pub gaussian_blur: f64,
    pub additive_noise: f64,
    pub color_shift: f64,
    pub contrast: f64,
    pub patch_dropout: f64,
}

impl Severity {
    pub fn is_zero(&self) -> bool {
        self.gaussian_blur == 0.0
            && self.additive_noise == 0.0
            && self.color_shift == 0.0
            && self.contrast == 0.0
            && self.patch_dropout == 0.0
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gaussian_blur", self.gaussian_blur),
            ("additive_noise", self.additive_noise),
            ("color_shift", self.color_shift),
            ("contrast", self.contrast),
            ("patch_dropout", self.patch_dropout),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "severity {name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthModel {
    pub id: String,
    pub severity: Severity,
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_sources: usize,
    pub models: Vec<SynthModel>,
    pub seed: u64,
    pub size: usize,
}

impl SynthSpec {
    /// Standard model ladder: `model_00` is perfect, the rest escalate
    /// through the distortion families.
    pub fn with_default_models(n_sources: usize, n_models: usize, seed: u64) -> SynthSpec {
        let mut models = Vec::with_capacity(n_models);
        for i in 0..n_models {
            let t = i as f64;
            let severity = match i {
                0 => Severity::default(),
                1 => Severity { gaussian_blur: 0.6, ..Default::default() },
                2 => Severity { additive_noise: 0.04, ..Default::default() },
                3 => Severity { color_shift: 0.06, ..Default::default() },
                4 => Severity { contrast: 0.35, ..Default::default() },
                5 => Severity { patch_dropout: 0.08, ..Default::default() },
                6 => Severity {
                    gaussian_blur: 1.2,
                    additive_noise: 0.08,
                    ..Default::default()
                },
                7 => Severity {
                    gaussian_blur: 2.0,
                    additive_noise: 0.12,
                    color_shift: 0.10,
                    patch_dropout: 0.15,
                    ..Default::default()
                },
                _ => Severity {
                    gaussian_blur: 0.5 * t,
                    additive_noise: 0.02 * t,
                    color_shift: 0.02 * t,
                    patch_dropout: 0.02 * t,
                    ..Default::default()
                },
            };
            models.push(SynthModel {
                id: format!("model_{i:02}"),
                severity,
            });
        }
        SynthSpec {
            n_sources,
            models,
            seed,
            size: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.models.is_empty() {
            return Err(Error::InvalidArgument(
                "spec needs at least one source and one model".into(),
            ));
        }
        if self.size < 64 {
            return Err(Error::InvalidArgument(format!(
                "image size must be at least 64, got {}",
                self.size
            )));
        }
        for m in &self.models {
            m.severity.validate()?;
        }
        if !self.models.iter().any(|m| m.severity.is_zero()) {
            return Err(Error::InvalidArgument(
                "at least one model must have all-zero severity".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Shape {
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
    Circle { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Circle { cy, cx, r } => {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                dy * dy + dx * dx <= r * r
            }
        }
    }
}

/// Procedural source plus a region map (0 = background, i+1 = shape i).
fn generate_base(size: usize, rng: &mut ChaCha8Rng) -> (ImageTensor, Vec<u16>) {
    let n = size * size;
    let c_top: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c_bottom: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];

    let n_shapes = rng.gen_range(5..=9);
    let mut shapes = Vec::with_capacity(n_shapes);
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let shape = if rng.gen_bool(0.5) {
            let h = rng.gen_range(size / 8..size / 2);
            let w = rng.gen_range(size / 8..size / 2);
            let y0 = rng.gen_range(0..size - h);
            let x0 = rng.gen_range(0..size - w);
            Shape::Rect { y0, x0, y1: y0 + h, x1: x0 + w }
        } else {
            Shape::Circle {
                cy: rng.gen_range(0.0..size as f64),
                cx: rng.gen_range(0.0..size as f64),
                r: rng.gen_range(size as f64 / 12.0..size as f64 / 4.0),
            }
        };
        shapes.push(shape);
        colors.push([rng.gen(), rng.gen(), rng.gen()]);
    }

    // Lighting ramp and texture parameters.
    let light_angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (la_s, la_c) = light_angle.sin_cos();
    let tex_fy = rng.gen_range(0.05..0.3);
    let tex_fx = rng.gen_range(0.05..0.3);

    let mut data = Vec::with_capacity(n * 3);
    let mut regions = vec![0u16; n];
    for y in 0..size {
        for x in 0..size {
            let t = y as f64 / (size - 1) as f64;
            let mut px = [
                c_top[0] * (1.0 - t) + c_bottom[0] * t,
                c_top[1] * (1.0 - t) + c_bottom[1] * t,
                c_top[2] * (1.0 - t) + c_bottom[2] * t,
            ];
            for (si, shape) in shapes.iter().enumerate() {
                if shape.contains(y, x) {
                    px = colors[si];
                    regions[y * size + x] = (si + 1) as u16;
                }
            }
            // Lighting: directional ramp, 0.65..1.15.
            let proj = (y as f64 * la_s + x as f64 * la_c) / size as f64;
            let light = 0.9 + 0.25 * proj.sin();
            // Texture: low-amplitude plaid plus pixel noise.
            let tex = 0.04 * ((y as f64 * tex_fy).sin() * (x as f64 * tex_fx).cos());
            let noise = 0.03 * (rng.gen::<f64>() - 0.5);
            for v in &mut px {
                *v = (*v * light + tex + noise).clamp(0.0, 1.0);
            }
            data.extend_from_slice(&px);
        }
    }
    (
        ImageTensor::new(size, size, 3, data).expect("valid dims"),
        regions,
    )
}

/// Ground truth: every region collapsed to its mean color (lighting and
/// texture removed), which keeps the ground-truth TV below the source TV.
fn flatten_regions(img: &ImageTensor, regions: &[u16]) -> ImageTensor {
    let n = img.height() * img.width();
    let n_regions = regions.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut sums = vec![[0.0f64; 3]; n_regions];
    let mut counts = vec![0usize; n_regions];
    for px in 0..n {
        let r = regions[px] as usize;
        counts[r] += 1;
        for c in 0..3 {
            sums[r][c] += img.data()[px * 3 + c];
        }
    }
    let mut data = Vec::with_capacity(n * 3);
    for px in 0..n {
        let r = regions[px] as usize;
        for c in 0..3 {
            data.push(sums[r][c] / counts[r] as f64);
        }
    }
    ImageTensor::new(img.height(), img.width(), 3, data).expect("valid dims")
}

fn gaussian_sample(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn degrade(gt: &ImageTensor, severity: &Severity, rng: &mut ChaCha8Rng) -> ImageTensor {
    let mut img = gt.clone();
    if severity.gaussian_blur > 0.0 {
        let radius = (2.0 * severity.gaussian_blur).ceil() as usize;
        let ksize = (2 * radius + 1).max(3);
        let k = gaussian_kernel(ksize, severity.gaussian_blur).expect("valid kernel");
        img = convolve_same(&img, &k, Border::Reflect).expect("kernel fits");
    }
    if severity.contrast > 0.0 {
        let gamma = 1.0 + severity.contrast;
        img = img.map(|v| v.powf(gamma));
    }
    if severity.color_shift > 0.0 {
        let delta: [f64; 3] = [
            rng.gen_range(-severity.color_shift..=severity.color_shift),
            rng.gen_range(-severity.color_shift..=severity.color_shift),
            rng.gen_range(-severity.color_shift..=severity.color_shift),
        ];
        let data: Vec<f64> = img
            .data()
            .chunks_exact(3)
            .flat_map(|px| [px[0] + delta[0], px[1] + delta[1], px[2] + delta[2]])
            .collect();
        img = ImageTensor::new(img.height(), img.width(), 3, data).expect("valid dims");
    }
    if severity.additive_noise > 0.0 {
        let data: Vec<f64> = img
            .data()
            .iter()
            .map(|v| v + severity.additive_noise * gaussian_sample(rng))
            .collect();
        img = ImageTensor::new(img.height(), img.width(), 3, data).expect("valid dims");
    }
    if severity.patch_dropout > 0.0 {
        let block = 16usize;
        let mut img2 = img.clone();
        for by in 0..img.height().div_ceil(block) {
            for bx in 0..img.width().div_ceil(block) {
                if rng.gen::<f64>() < severity.patch_dropout {
                    for y in by * block..((by + 1) * block).min(img.height()) {
                        for x in bx * block..((bx + 1) * block).min(img.width()) {
                            for c in 0..3 {
                                img2.set(y, x, c, 0.0);
                            }
                        }
                    }
                }
            }
        }
        img = img2;
    }
    img.map(|v| v.clamp(0.0, 1.0))
}

/// Generates the dataset: per source a PNG triplet set plus manifest rows
/// for every (source, model) pair and one perfect-transformation row whose
/// translated path is the ground-truth file itself. The manifest is written
/// to `<out_dir>/manifest.jsonl`.
pub fn generate(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<TripletManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let records: Vec<Vec<PairRecord>> = (0..spec.n_sources)
        .into_par_iter()
        .map(|i| -> Result<Vec<PairRecord>> {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(i as u64));
            let (source, regions) = generate_base(spec.size, &mut rng);
            let gt = flatten_regions(&source, &regions);

            let sample_id = format!("src{i:04}");
            let source_path = out_dir.join(format!("{sample_id}_source.png"));
            let gt_path = out_dir.join(format!("{sample_id}_gt.png"));
            encode_png(&source, &source_path)?;
            encode_png(&gt, &gt_path)?;

            let mut rows = Vec::with_capacity(spec.models.len() + 1);
            for model in &spec.models {
                let translated = degrade(&gt, &model.severity, &mut rng);
                let tr_path = out_dir.join(format!("{sample_id}_{}.png", model.id));
                encode_png(&translated, &tr_path)?;
                rows.push(PairRecord {
                    sample_id: sample_id.clone(),
                    model_id: model.id.clone(),
                    source: source_path.clone(),
                    translated: tr_path,
                    ground_truth: Some(gt_path.clone()),
                });
            }
            rows.push(PairRecord {
                sample_id: sample_id.clone(),
                model_id: "perfect".into(),
                source: source_path.clone(),
                translated: gt_path.clone(),
                ground_truth: Some(gt_path.clone()),
            });
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = TripletManifest::new(records.into_iter().flatten().collect())?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deepsim::{dists, FeatureExtractor};
    use crate::imgio::decode;
    use crate::metrics::{total_variation, tv_ratio};

    fn small_spec(n_sources: usize, n_models: usize) -> SynthSpec {
        let mut spec = SynthSpec::with_default_models(n_sources, n_models, 42);
        spec.size = 64;
        spec
    }

    #[test]
    fn record_count_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&small_spec(2, 3), dir.path()).unwrap();
        assert_eq!(manifest.records.len(), 2 * 3 + 2);
    }

    #[test]
    fn perfect_records_have_zero_dists() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&small_spec(1, 2), dir.path()).unwrap();
        let fx = FeatureExtractor::tiny_v1();
        for r in manifest.records.iter().filter(|r| r.model_id == "perfect") {
            assert_eq!(r.translated, *r.ground_truth.as_ref().unwrap());
            let tr = decode(&r.translated).unwrap();
            let gt = decode(r.ground_truth.as_ref().unwrap()).unwrap();
            assert!(dists(&tr, &gt, &fx).unwrap() < 1e-9);
        }
        // The zero-severity model writes a separate file with identical
        // content.
        for r in manifest.records.iter().filter(|r| r.model_id == "model_00") {
            let tr = decode(&r.translated).unwrap();
            let gt = decode(r.ground_truth.as_ref().unwrap()).unwrap();
            assert_eq!(tr.data(), gt.data());
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&small_spec(2, 2), d1.path()).unwrap();
        generate(&small_spec(2, 2), d2.path()).unwrap();
        for name in ["src0000_source.png", "src0001_gt.png", "src0000_model_01.png"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between runs");
        }
    }

    #[test]
    fn flattening_reduces_total_variation() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&small_spec(3, 1), dir.path()).unwrap();
        let mut ratios = Vec::new();
        for r in manifest.records.iter().filter(|r| r.model_id == "perfect") {
            let src = decode(&r.source).unwrap();
            let gt = decode(r.ground_truth.as_ref().unwrap()).unwrap();
            assert!(total_variation(&gt) < total_variation(&src));
            ratios.push(tv_ratio(&src, &gt).unwrap());
        }
        let mean: f64 = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(mean > 1.0, "mean tv_ratio(source, gt) = {mean}");
    }

    #[test]
    fn noise_severity_monotone_in_dists() {
        // Two models identical except noise sigma; more noise must raise
        // the mean DISTS against ground truth.
        let mut spec = SynthSpec::with_default_models(50, 1, 7);
        spec.size = 64;
        spec.models = vec![
            SynthModel {
                id: "model_00".into(),
                severity: Severity::default(),
            },
            SynthModel {
                id: "noise_lo".into(),
                severity: Severity { additive_noise: 0.04, ..Default::default() },
            },
            SynthModel {
                id: "noise_hi".into(),
                severity: Severity { additive_noise: 0.08, ..Default::default() },
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&spec, dir.path()).unwrap();
        let fx = FeatureExtractor::tiny_v1();
        let mean_dists = |model: &str| -> f64 {
            let rows: Vec<f64> = manifest
                .records
                .iter()
                .filter(|r| r.model_id == model)
                .map(|r| {
                    let tr = decode(&r.translated).unwrap();
                    let gt = decode(r.ground_truth.as_ref().unwrap()).unwrap();
                    dists(&tr, &gt, &fx).unwrap()
                })
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        let lo = mean_dists("noise_lo");
        let hi = mean_dists("noise_hi");
        assert!(lo < hi, "noise severity must order dists: {lo} !< {hi}");
        assert!(lo > 0.0);
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec(1, 2);
        spec.models[0].severity.gaussian_blur = -1.0;
        assert!(spec.validate().is_err());

        let mut spec = small_spec(1, 2);
        spec.models.remove(0); // drops the perfect model
        assert!(spec.validate().is_err());
    }
}
