//! Deep-feature perceptual metrics over a pluggable convolutional
//! extractor: the DISTS target metric and an LPIPS-style distance.
//!
//! Extractor weights live in a small binary container (magic `MMFX`): a
//! JSON header describing stages followed by a raw little-endian f32
//! payload. The repo bundles the deterministic `tiny-v1` fixture; any
//! compliant weights file can be swapped in via `--extractor`.

mod tiny;

pub use tiny::{tiny_v1_bytes, TINY_V1_PROVENANCE};

use crate::error::{Error, Result};
use crate::imgio::{check_same_shape, ImageTensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MMFX_MAGIC: &[u8; 4] = b"MMFX";
pub const MMFX_VERSION: u16 = 1;

pub const DISTS_C1: f64 = 1e-6;
pub const DISTS_C2: f64 = 1e-6;
const LPIPS_NORM_EPS: f64 = 1e-10;

/// One convolutional stage: `out x in x k x k` kernels, bias, rectifier,
/// optional 2x2 average pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub pool: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExtractorHeader {
    provenance: String,
    input_mean: [f64; 3],
    input_std: [f64; 3],
    stages: Vec<StageSpec>,
}

/// Weights for one stage, flattened `[out][in][ky][kx]`.
#[derive(Debug, Clone)]
pub struct Stage {
    pub spec: StageSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    provenance: String,
    input_mean: [f64; 3],
    input_std: [f64; 3],
    stages: Vec<Stage>,
}

/// Multi-channel activation map (channel-interleaved, like `ImageTensor`
/// but without its 1-or-3 channel restriction).
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    #[inline]
    fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

impl FeatureExtractor {
    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// The bundled deterministic extractor.
    pub fn tiny_v1() -> FeatureExtractor {
        static BYTES: &[u8] = include_bytes!("../../fixtures/tiny-v1.mmfx");
        FeatureExtractor::from_bytes(BYTES).expect("bundled fixture is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureExtractor> {
        let path = path.as_ref();
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        FeatureExtractor::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureExtractor> {
        let fail = |msg: &str| Error::ExtractorFormat(msg.to_string());
        if bytes.len() < 10 || &bytes[0..4] != MMFX_MAGIC {
            return Err(fail("missing MMFX magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MMFX_VERSION {
            return Err(Error::ExtractorFormat(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        if bytes.len() < 10 + header_len {
            return Err(fail("truncated header"));
        }
        let header: ExtractorHeader = serde_json::from_slice(&bytes[10..10 + header_len])?;

        if header.stages.len() < 2 {
            return Err(fail("extractor needs at least 2 stages"));
        }
        let mut expected_in = 3usize;
        let mut payload_floats = 0usize;
        for (i, s) in header.stages.iter().enumerate() {
            if s.in_channels != expected_in {
                return Err(Error::ExtractorFormat(format!(
                    "stage {i} expects {} input channels, previous stage provides {expected_in}",
                    s.in_channels
                )));
            }
            if s.kernel_size % 2 == 0 || s.kernel_size == 0 || s.out_channels == 0 {
                return Err(fail("stage kernels must be odd-sized and non-empty"));
            }
            payload_floats += s.out_channels * s.in_channels * s.kernel_size * s.kernel_size
                + s.out_channels;
            expected_in = s.out_channels;
        }
        for (i, std) in header.input_std.iter().enumerate() {
            if *std <= 0.0 || !std.is_finite() {
                return Err(Error::ExtractorFormat(format!(
                    "input_std[{i}] must be positive"
                )));
            }
        }

        let payload = &bytes[10 + header_len..];
        if payload.len() != payload_floats * 4 {
            return Err(Error::ExtractorFormat(format!(
                "payload holds {} floats, header describes {payload_floats}",
                payload.len() / 4
            )));
        }
        let mut floats = Vec::with_capacity(payload_floats);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(fail("non-finite weight in payload"));
            }
            floats.push(v as f64);
        }

        let mut stages = Vec::with_capacity(header.stages.len());
        let mut offset = 0usize;
        for spec in header.stages {
            let w_len =
                spec.out_channels * spec.in_channels * spec.kernel_size * spec.kernel_size;
            let weights = floats[offset..offset + w_len].to_vec();
            offset += w_len;
            let bias = floats[offset..offset + spec.out_channels].to_vec();
            offset += spec.out_channels;
            stages.push(Stage {
                spec,
                weights,
                bias,
            });
        }
        Ok(FeatureExtractor {
            provenance: header.provenance,
            input_mean: header.input_mean,
            input_std: header.input_std,
            stages,
        })
    }

    /// Serializes to the MMFX container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ExtractorHeader {
            provenance: self.provenance.clone(),
            input_mean: self.input_mean,
            input_std: self.input_std,
            stages: self.stages.iter().map(|s| s.spec.clone()).collect(),
        };
        let header_json = serde_json::to_vec(&header).expect("serializable header");
        let mut out = Vec::new();
        out.extend_from_slice(MMFX_MAGIC);
        out.extend_from_slice(&MMFX_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&header_json);
        for stage in &self.stages {
            for &w in &stage.weights {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
            for &b in &stage.bias {
                out.extend_from_slice(&(b as f32).to_le_bytes());
            }
        }
        out
    }

    pub(crate) fn assemble(
        provenance: String,
        input_mean: [f64; 3],
        input_std: [f64; 3],
        stages: Vec<Stage>,
    ) -> FeatureExtractor {
        FeatureExtractor {
            provenance,
            input_mean,
            input_std,
            stages,
        }
    }

    /// Runs the stage pipeline; returns stage 0 (the raw RGB input) followed
    /// by every stage activation.
    pub fn forward(&self, img: &ImageTensor) -> Result<Vec<FeatureMap>> {
        if img.channels() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "extractor expects RGB input, got {} channel(s)",
                img.channels()
            )));
        }
        let mut maps = Vec::with_capacity(self.stages.len() + 1);
        maps.push(FeatureMap {
            height: img.height(),
            width: img.width(),
            channels: 3,
            data: img.data().to_vec(),
        });

        let mut current = FeatureMap {
            height: img.height(),
            width: img.width(),
            channels: 3,
            data: img
                .data()
                .chunks_exact(3)
                .flat_map(|px| {
                    [
                        (px[0] - self.input_mean[0]) / self.input_std[0],
                        (px[1] - self.input_mean[1]) / self.input_std[1],
                        (px[2] - self.input_mean[2]) / self.input_std[2],
                    ]
                })
                .collect(),
        };
        for stage in &self.stages {
            current = stage_forward(&current, stage);
            maps.push(current.clone());
        }
        Ok(maps)
    }
}

fn stage_forward(input: &FeatureMap, stage: &Stage) -> FeatureMap {
    let (h, w) = (input.height, input.width);
    let c_in = stage.spec.in_channels;
    let c_out = stage.spec.out_channels;
    let k = stage.spec.kernel_size;
    let half = (k / 2) as isize;
    debug_assert_eq!(input.channels, c_in);

    let reflect = |mut i: isize, n: isize| -> usize {
        while i < 0 || i >= n {
            if i < 0 {
                i = -i - 1;
            }
            if i >= n {
                i = 2 * n - 1 - i;
            }
        }
        i as usize
    };

    let mut conv = vec![0.0; h * w * c_out];
    for y in 0..h {
        for x in 0..w {
            for co in 0..c_out {
                let mut acc = stage.bias[co];
                let w_base = co * c_in * k * k;
                for ci in 0..c_in {
                    for ky in 0..k {
                        let sy = reflect(y as isize + ky as isize - half, h as isize);
                        for kx in 0..k {
                            let sx = reflect(x as isize + kx as isize - half, w as isize);
                            acc += stage.weights[w_base + (ci * k + ky) * k + kx]
                                * input.get(sy, sx, ci);
                        }
                    }
                }
                conv[(y * w + x) * c_out + co] = acc.max(0.0); // rectifier
            }
        }
    }
    let convolved = FeatureMap {
        height: h,
        width: w,
        channels: c_out,
        data: conv,
    };
    if !stage.spec.pool || h < 2 || w < 2 {
        return convolved;
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut pooled = vec![0.0; oh * ow * c_out];
    for y in 0..oh {
        for x in 0..ow {
            for c in 0..c_out {
                let s = convolved.get(2 * y, 2 * x, c)
                    + convolved.get(2 * y, 2 * x + 1, c)
                    + convolved.get(2 * y + 1, 2 * x, c)
                    + convolved.get(2 * y + 1, 2 * x + 1, c);
                pooled[(y * ow + x) * c_out + c] = s * 0.25;
            }
        }
    }
    FeatureMap {
        height: oh,
        width: ow,
        channels: c_out,
        data: pooled,
    }
}

/// Per-channel spatial mean, variance and cross-covariance of two aligned
/// feature maps.
fn channel_stats(fa: &FeatureMap, fb: &FeatureMap, c: usize) -> (f64, f64, f64, f64, f64) {
    let n = (fa.height * fa.width) as f64;
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for px in 0..fa.height * fa.width {
        sum_a += fa.data[px * fa.channels + c];
        sum_b += fb.data[px * fb.channels + c];
    }
    let mu_a = sum_a / n;
    let mu_b = sum_b / n;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for px in 0..fa.height * fa.width {
        let da = fa.data[px * fa.channels + c] - mu_a;
        let db = fb.data[px * fb.channels + c] - mu_b;
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    (mu_a, mu_b, var_a / n, var_b / n, cov / n)
}

/// DISTS over precomputed feature pyramids (stage 0 = raw input included).
pub fn dists_from_features(fa: &[FeatureMap], fb: &[FeatureMap]) -> Result<f64> {
    let total_channels: usize = fa.iter().map(|m| m.channels).sum();
    let weight = 0.5 / total_channels as f64;
    let mut similarity = 0.0;
    for (ma, mb) in fa.iter().zip(fb.iter()) {
        if ma.height != mb.height || ma.width != mb.width || ma.channels != mb.channels {
            return Err(Error::ShapeMismatch("feature map shapes differ".into()));
        }
        for c in 0..ma.channels {
            let (mu_a, mu_b, var_a, var_b, cov) = channel_stats(ma, mb, c);
            let texture = (2.0 * mu_a * mu_b + DISTS_C1) / (mu_a * mu_a + mu_b * mu_b + DISTS_C1);
            let structure = (2.0 * cov + DISTS_C2) / (var_a + var_b + DISTS_C2);
            similarity += weight * (texture + structure);
        }
    }
    Ok((1.0 - similarity).clamp(0.0, 1.0))
}

/// Deep image structure and texture similarity; 0 means identical.
pub fn dists(a: &ImageTensor, b: &ImageTensor, fx: &FeatureExtractor) -> Result<f64> {
    check_same_shape(a, b)?;
    let fa = fx.forward(a)?;
    let fb = fx.forward(b)?;
    dists_from_features(&fa, &fb)
}

/// LPIPS-style distance over precomputed features (extractor stages only).
pub fn lpips_from_features(fa: &[FeatureMap], fb: &[FeatureMap]) -> Result<f64> {
    let mut total = 0.0;
    for (ma, mb) in fa.iter().zip(fb.iter()).skip(1) {
        if ma.height != mb.height || ma.width != mb.width || ma.channels != mb.channels {
            return Err(Error::ShapeMismatch("feature map shapes differ".into()));
        }
        let n_px = ma.height * ma.width;
        let c = ma.channels;
        let mut stage_sum = 0.0;
        for px in 0..n_px {
            let base = px * c;
            let mut norm_a = 0.0;
            let mut norm_b = 0.0;
            for ch in 0..c {
                norm_a += ma.data[base + ch] * ma.data[base + ch];
                norm_b += mb.data[base + ch] * mb.data[base + ch];
            }
            let inv_a = 1.0 / (norm_a.sqrt() + LPIPS_NORM_EPS);
            let inv_b = 1.0 / (norm_b.sqrt() + LPIPS_NORM_EPS);
            for ch in 0..c {
                let d = ma.data[base + ch] * inv_a - mb.data[base + ch] * inv_b;
                stage_sum += d * d;
            }
        }
        total += stage_sum / (n_px * c) as f64;
    }
    Ok(total)
}

/// Channel-normalized deep feature distance; 0 means identical.
pub fn lpips_like(a: &ImageTensor, b: &ImageTensor, fx: &FeatureExtractor) -> Result<f64> {
    check_same_shape(a, b)?;
    let fa = fx.forward(a)?;
    let fb = fx.forward(b)?;
    lpips_from_features(&fa, &fb)
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
    fn tiny_v1_loads() {
        let fx = FeatureExtractor::tiny_v1();
        assert_eq!(fx.provenance(), TINY_V1_PROVENANCE);
        assert_eq!(fx.stages().len(), 3);
        assert_eq!(fx.stages()[0].spec.out_channels, 8);
        assert_eq!(fx.stages()[1].spec.out_channels, 16);
        assert_eq!(fx.stages()[2].spec.out_channels, 32);
    }

    #[test]
    fn bundled_fixture_matches_generator() {
        static BYTES: &[u8] = include_bytes!("../../fixtures/tiny-v1.mmfx");
        assert_eq!(BYTES, tiny_v1_bytes().as_slice());
    }

    #[test]
    fn payload_size_mismatch_rejected() {
        let mut bytes = tiny_v1_bytes();
        bytes.truncate(bytes.len() - 4);
        let err = FeatureExtractor::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::ExtractorFormat(_)));
    }

    #[test]
    fn single_stage_rejected() {
        let fx = FeatureExtractor::tiny_v1();
        let one_stage = FeatureExtractor::assemble(
            "one".into(),
            [0.5; 3],
            [0.5; 3],
            vec![fx.stages()[0].clone()],
        );
        let err = FeatureExtractor::from_bytes(&one_stage.to_bytes()).unwrap_err();
        assert!(matches!(err, Error::ExtractorFormat(_)));
    }

    #[test]
    fn nan_weights_rejected() {
        let fx = FeatureExtractor::tiny_v1();
        let mut bytes = fx.to_bytes();
        let payload_start = bytes.len() - 4;
        bytes[payload_start..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(FeatureExtractor::from_bytes(&bytes).is_err());
    }

    #[test]
    fn dists_identity_and_symmetry() {
        let fx = FeatureExtractor::tiny_v1();
        let a = rgb_noise(32, 32, 1);
        let b = rgb_noise(32, 32, 2);
        assert!(dists(&a, &a, &fx).unwrap() < 1e-6);
        let ab = dists(&a, &b, &fx).unwrap();
        let ba = dists(&b, &a, &fx).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn dists_mean_shift_oracle() {
        // Shift pushes texture terms below 1 while structure stays ~1.
        let fx = FeatureExtractor::tiny_v1();
        let a = rgb_noise(32, 32, 3).map(|v| v * 0.8);
        let b = a.map(|v| (v + 0.1).clamp(0.0, 1.0));
        let score = dists(&a, &b, &fx).unwrap();
        assert!(score > 0.0 && score < 0.5, "mean-shift dists {score}");

        // Oracle: recompute from raw per-channel statistics.
        let fa = fx.forward(&a).unwrap();
        let fb = fx.forward(&b).unwrap();
        let oracle = dists_from_features(&fa, &fb).unwrap();
        assert!((score - oracle).abs() < 1e-12);
    }

    #[test]
    fn dists_constant_extremes_oracle() {
        // Constant inputs propagate in closed form: every feature map is
        // constant, so variances vanish and only texture terms differ.
        let fx = FeatureExtractor::tiny_v1();
        let black = ImageTensor::constant(32, 32, 3, 0.0);
        let white = ImageTensor::constant(32, 32, 3, 1.0);
        let score = dists(&black, &white, &fx).unwrap();

        let fa = fx.forward(&black).unwrap();
        let fb = fx.forward(&white).unwrap();
        let total: usize = fa.iter().map(|m| m.channels).sum();
        let weight = 0.5 / total as f64;
        let mut similarity = 0.0;
        for (ma, mb) in fa.iter().zip(fb.iter()) {
            for c in 0..ma.channels {
                let mu_a = ma.data[c]; // constant map: first pixel is the mean
                let mu_b = mb.data[c];
                let texture =
                    (2.0 * mu_a * mu_b + DISTS_C1) / (mu_a * mu_a + mu_b * mu_b + DISTS_C1);
                similarity += weight * (texture + 1.0);
            }
        }
        let oracle = (1.0 - similarity).clamp(0.0, 1.0);
        assert!((score - oracle).abs() < 1e-12);
        assert!(score > 0.2, "black-vs-white should be large, got {score}");
    }

    #[test]
    fn lpips_identity_and_monotonicity() {
        let fx = FeatureExtractor::tiny_v1();
        let a = rgb_noise(32, 32, 4);
        assert!(lpips_like(&a, &a, &fx).unwrap() < 1e-6);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut perturb = |img: &ImageTensor, amp: f64| {
            let data: Vec<f64> = img
                .data()
                .iter()
                .map(|v| (v + amp * (rng.gen::<f64>() - 0.5)).clamp(0.0, 1.0))
                .collect();
            ImageTensor::new(img.height(), img.width(), 3, data).unwrap()
        };
        let small = perturb(&a, 0.1);
        let large = perturb(&a, 0.2);
        let d_small = lpips_like(&a, &small, &fx).unwrap();
        let d_large = lpips_like(&a, &large, &fx).unwrap();
        assert!(d_large > d_small, "lpips {d_large} !> {d_small}");
    }

    #[test]
    fn lpips_zero_feature_guard() {
        // Black input turns stage activations to zero vectors; the epsilon
        // guard must keep scores finite.
        let fx = FeatureExtractor::tiny_v1();
        let black = ImageTensor::constant(32, 32, 3, 0.0);
        let white = ImageTensor::constant(32, 32, 3, 1.0);
        let d = lpips_like(&black, &white, &fx).unwrap();
        assert!(d.is_finite());
    }

    #[test]
    fn covariance_inequality_holds() {
        let fx = FeatureExtractor::tiny_v1();
        let a = rgb_noise(24, 24, 6);
        let b = rgb_noise(24, 24, 7);
        let fa = fx.forward(&a).unwrap();
        let fb = fx.forward(&b).unwrap();
        for (ma, mb) in fa.iter().zip(fb.iter()) {
            for c in 0..ma.channels {
                let (_, _, var_a, var_b, cov) = channel_stats(ma, mb, c);
                assert!(cov * cov <= var_a * var_b + 1e-6);
            }
        }
    }
}
