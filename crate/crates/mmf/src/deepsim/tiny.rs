//! The bundled `tiny-v1` extractor.
//!
//! Three 3x3 stages (8, 16, 32 channels, each followed by 2x2 average
//! pooling), input normalization mean/std 0.5. Weights are generated
//! deterministically: a ChaCha8 stream seeded with 42 fills each stage's
//! kernel matrix with uniform [-1, 1) draws, rows are Gram-Schmidt
//! orthonormalized and scaled by sqrt(2), biases are zero. The committed
//! fixture bytes are the contract; this generator exists so tests can
//! prove the fixture was produced by the documented procedure.

use super::{FeatureExtractor, Stage, StageSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TINY_V1_PROVENANCE: &str = "tiny-v1";
const TINY_V1_SEED: u64 = 42;
const GAIN: f64 = std::f64::consts::SQRT_2;

/// Gram-Schmidt orthonormalization of `rows` vectors of length `cols`,
/// stored row-major. Requires rows <= cols.
fn orthonormalize(mat: &mut [f64], rows: usize, cols: usize) {
    for r in 0..rows {
        for prev in 0..r {
            let mut dot = 0.0;
            for c in 0..cols {
                dot += mat[r * cols + c] * mat[prev * cols + c];
            }
            for c in 0..cols {
                mat[r * cols + c] -= dot * mat[prev * cols + c];
            }
        }
        let norm = (0..cols)
            .map(|c| mat[r * cols + c] * mat[r * cols + c])
            .sum::<f64>()
            .sqrt();
        for c in 0..cols {
            mat[r * cols + c] /= norm;
        }
    }
}

fn make_stage(rng: &mut ChaCha8Rng, in_channels: usize, out_channels: usize) -> Stage {
    let kernel_size = 3usize;
    let cols = in_channels * kernel_size * kernel_size;
    let mut mat: Vec<f64> = (0..out_channels * cols)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    orthonormalize(&mut mat, out_channels, cols);
    // Round-trip through f32 so in-memory weights equal the file payload.
    let weights: Vec<f64> = mat.iter().map(|&v| (v * GAIN) as f32 as f64).collect();
    Stage {
        spec: StageSpec {
            in_channels,
            out_channels,
            kernel_size,
            pool: true,
        },
        weights,
        bias: vec![0.0; out_channels],
    }
}

/// Builds the tiny-v1 extractor from scratch.
pub fn tiny_v1_generated() -> FeatureExtractor {
    let mut rng = ChaCha8Rng::seed_from_u64(TINY_V1_SEED);
    let stages = vec![
        make_stage(&mut rng, 3, 8),
        make_stage(&mut rng, 8, 16),
        make_stage(&mut rng, 16, 32),
    ];
    FeatureExtractor::assemble(
        TINY_V1_PROVENANCE.to_string(),
        [0.5, 0.5, 0.5],
        [0.5, 0.5, 0.5],
        stages,
    )
}

/// Serialized fixture bytes for tiny-v1.
pub fn tiny_v1_bytes() -> Vec<u8> {
    tiny_v1_generated().to_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        assert_eq!(tiny_v1_bytes(), tiny_v1_bytes());
    }

    // Rewrites the committed fixture from the documented procedure. Run with
    // `REGEN_TINY_V1=1 cargo test -p mmf regenerate_fixture`.
    #[test]
    fn regenerate_fixture_when_requested() {
        if std::env::var("REGEN_TINY_V1").is_err() {
            return;
        }
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/tiny-v1.mmfx");
        std::fs::write(path, tiny_v1_bytes()).unwrap();
    }

    #[test]
    fn stage_rows_orthonormal() {
        let fx = tiny_v1_generated();
        let s = &fx.stages()[0];
        let cols = s.spec.in_channels * s.spec.kernel_size * s.spec.kernel_size;
        for r1 in 0..s.spec.out_channels {
            for r2 in 0..s.spec.out_channels {
                let dot: f64 = (0..cols)
                    .map(|c| s.weights[r1 * cols + c] * s.weights[r2 * cols + c])
                    .sum();
                let expect = if r1 == r2 { GAIN * GAIN } else { 0.0 };
                assert!(
                    (dot - expect).abs() < 1e-5,
                    "rows {r1},{r2} dot {dot} vs {expect}"
                );
            }
        }
    }
}
