//! Gradient magnitude similarity deviation.

use crate::error::Result;
use crate::imgio::{
    check_same_shape, convolve_same, downsample2, to_grayscale, Border, ImageTensor, Kernel2D,
};

/// Stability constant on unit-range data (170 on the squared 8-bit scale).
pub const GMSD_C: f64 = 0.0026;

fn prewitt_x() -> Kernel2D {
    let t = 1.0 / 3.0;
    Kernel2D::new(vec![t, 0.0, -t, t, 0.0, -t, t, 0.0, -t], 3, 3, false).expect("static kernel")
}

fn prewitt_y() -> Kernel2D {
    let t = 1.0 / 3.0;
    Kernel2D::new(vec![t, t, t, 0.0, 0.0, 0.0, -t, -t, -t], 3, 3, false).expect("static kernel")
}

fn gradient_magnitude(img: &ImageTensor) -> Result<ImageTensor> {
    let gx = convolve_same(img, &prewitt_x(), Border::Reflect)?;
    let gy = convolve_same(img, &prewitt_y(), Border::Reflect)?;
    ImageTensor::new(
        img.height(),
        img.width(),
        1,
        gx.data()
            .iter()
            .zip(gy.data().iter())
            .map(|(x, y)| (x * x + y * y).sqrt())
            .collect(),
    )
}

/// Per-pixel gradient magnitude similarity map after 2x2 average pooling.
pub(crate) fn gms_map(a: &ImageTensor, b: &ImageTensor) -> Result<ImageTensor> {
    check_same_shape(a, b)?;
    let ga = downsample2(&to_grayscale(a))?;
    let gb = downsample2(&to_grayscale(b))?;
    let ma = gradient_magnitude(&ga)?;
    let mb = gradient_magnitude(&gb)?;
    ImageTensor::new(
        ma.height(),
        ma.width(),
        1,
        ma.data()
            .iter()
            .zip(mb.data().iter())
            .map(|(x, y)| (2.0 * x * y + GMSD_C) / (x * x + y * y + GMSD_C))
            .collect(),
    )
}

/// Standard deviation of the GMS map; 0 means identical gradient structure.
pub fn gmsd(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let map = gms_map(a, b)?;
    let n = map.data().len() as f64;
    let mean = map.data().iter().sum::<f64>() / n;
    let var = map.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::gaussian_kernel;
    use rand::{Rng, SeedableRng};

    fn noise(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, 1, (0..h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn identity_is_zero() {
        let img = noise(32, 32, 1);
        assert!(gmsd(&img, &img).unwrap().abs() < 1e-9);
    }

    #[test]
    fn constant_pair_is_zero() {
        let a = ImageTensor::constant(16, 16, 1, 0.2);
        let b = ImageTensor::constant(16, 16, 1, 0.8);
        assert!(gmsd(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn blur_matches_naive_oracle() {
        let a = noise(64, 64, 2);
        let k = gaussian_kernel(5, 1.5).unwrap();
        let b = convolve_same(&a, &k, Border::Reflect).unwrap();
        let got = gmsd(&a, &b).unwrap();
        assert!(got > 0.0 && got < 0.35, "gmsd {got}");

        // Oracle: recompute map then std with plain loops.
        let map = gms_map(&a, &b).unwrap();
        let n = map.data().len() as f64;
        let mut mean = 0.0;
        for &v in map.data() {
            mean += v;
        }
        mean /= n;
        let mut var = 0.0;
        for &v in map.data() {
            var += (v - mean) * (v - mean);
        }
        let oracle = (var / n).sqrt();
        assert!((got - oracle).abs() < 1e-9);
    }

    #[test]
    fn symmetry() {
        let a = noise(32, 32, 3);
        let b = noise(32, 32, 4);
        assert!((gmsd(&a, &b).unwrap() - gmsd(&b, &a).unwrap()).abs() < 1e-12);
    }
}
