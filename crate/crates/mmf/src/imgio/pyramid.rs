//! Laplacian pyramid decomposition.
//!
//! Reduce: Gaussian blur then drop odd rows/columns. Expand: nearest-neighbor
//! 2x upsample to the exact target shape followed by the same blur. Each
//! band stores `level - expand(next level)`, so iterative expand-and-add
//! reconstruction is exact up to f64 rounding.

use super::{convolve_same, gaussian_kernel, upsample_nearest, Border, ImageTensor, Kernel2D};
use crate::error::{Error, Result};

fn reduction_kernel() -> Kernel2D {
    gaussian_kernel(5, 1.0).expect("static kernel")
}

fn blur(img: &ImageTensor, k: &Kernel2D) -> ImageTensor {
    convolve_same(img, k, Border::Reflect).expect("kernel fits by construction")
}

fn subsample2(img: &ImageTensor) -> ImageTensor {
    let (oh, ow, c) = (
        (img.height() + 1) / 2,
        (img.width() + 1) / 2,
        img.channels(),
    );
    let mut data = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                data[(y * ow + x) * c + ch] = img.get(2 * y, 2 * x, ch);
            }
        }
    }
    ImageTensor::new(oh, ow, c, data).expect("valid dims")
}

fn expand(img: &ImageTensor, th: usize, tw: usize, k: &Kernel2D) -> ImageTensor {
    blur(&upsample_nearest(img, th, tw), k)
}

/// Decomposes into `levels - 1` band-pass bands plus a final low-pass
/// residual. The coarsest level must be at least 4x4.
pub fn laplacian_pyramid(img: &ImageTensor, levels: usize) -> Result<Vec<ImageTensor>> {
    if levels == 0 {
        return Err(Error::InvalidArgument("pyramid needs at least 1 level".into()));
    }
    let (mut h, mut w) = (img.height(), img.width());
    for _ in 1..levels {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    if h < 4 || w < 4 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} supports fewer than {levels} pyramid levels (coarsest would be {h}x{w})",
            img.height(),
            img.width()
        )));
    }

    let k = reduction_kernel();
    let mut bands = Vec::with_capacity(levels);
    let mut current = img.clone();
    for _ in 0..levels - 1 {
        let next = subsample2(&blur(&current, &k));
        let up = expand(&next, current.height(), current.width(), &k);
        let band_data: Vec<f64> = current
            .data()
            .iter()
            .zip(up.data().iter())
            .map(|(a, b)| a - b)
            .collect();
        bands.push(ImageTensor::new(
            current.height(),
            current.width(),
            current.channels(),
            band_data,
        )?);
        current = next;
    }
    bands.push(current);
    Ok(bands)
}

/// Inverse of [`laplacian_pyramid`].
pub fn laplacian_reconstruct(bands: &[ImageTensor]) -> Result<ImageTensor> {
    if bands.is_empty() {
        return Err(Error::InvalidArgument("empty pyramid".into()));
    }
    let k = reduction_kernel();
    let mut current = bands[bands.len() - 1].clone();
    for band in bands[..bands.len() - 1].iter().rev() {
        let up = expand(&current, band.height(), band.width(), &k);
        let data: Vec<f64> = band
            .data()
            .iter()
            .zip(up.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        current = ImageTensor::new(band.height(), band.width(), band.channels(), data)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_level_is_input() {
        let img = ImageTensor::constant(8, 8, 1, 0.3);
        let bands = laplacian_pyramid(&img, 1).unwrap();
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0], img);
    }

    #[test]
    fn constant_image_has_zero_bands() {
        let img = ImageTensor::constant(32, 32, 1, 0.6);
        let bands = laplacian_pyramid(&img, 3).unwrap();
        for band in &bands[..2] {
            for &v in band.data() {
                assert!(v.abs() < 1e-12);
            }
        }
        for &v in bands[2].data() {
            assert!((v - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..64 * 64).map(|_| rng.gen::<f64>()).collect();
        let img = ImageTensor::new(64, 64, 1, data).unwrap();
        let bands = laplacian_pyramid(&img, 4).unwrap();
        assert_eq!(bands.len(), 4);
        let rec = laplacian_reconstruct(&bands).unwrap();
        let rms = (img
            .data()
            .iter()
            .zip(rec.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / img.data().len() as f64)
            .sqrt();
        assert!(rms < 1e-6, "reconstruction rms {rms}");
    }

    #[test]
    fn odd_dims_reconstruct() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..37 * 45).map(|_| rng.gen::<f64>()).collect();
        let img = ImageTensor::new(37, 45, 1, data).unwrap();
        let bands = laplacian_pyramid(&img, 3).unwrap();
        let rec = laplacian_reconstruct(&bands).unwrap();
        for (a, b) in img.data().iter().zip(rec.data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn too_many_levels_rejected() {
        let img = ImageTensor::constant(16, 16, 1, 0.0);
        assert!(laplacian_pyramid(&img, 4).is_err());
        assert!(laplacian_pyramid(&img, 3).is_ok());
    }
}
