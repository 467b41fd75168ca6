//! Image decoding/encoding, pixel-range normalization, color conversion and
//! the shared signal primitives (kernels, convolution, pyramids) every
//! metric is built on.
//!
//! All pixel math happens on `f64` values in `[0, 1]`. Metrics that are
//! conventionally defined on the 8-bit scale apply their own scale factor
//! internally.

mod pyramid;

pub use pyramid::{laplacian_pyramid, laplacian_reconstruct};

use crate::error::{Error, Result};
use std::path::Path;

/// Decoded image: row-major, channel-interleaved `f64` samples.
///
/// Decoded images are guaranteed to hold finite values in `[0, 1]`.
/// Intermediate tensors produced by filtering (pyramid bands, gradient
/// maps) reuse the type but may leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Wraps raw samples; `data.len()` must equal `height * width * channels`
    /// and `channels` must be 1 or 3.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("zero-dimension image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        ImageTensor {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Extracts one channel as a single-channel tensor.
    pub fn channel(&self, c: usize) -> ImageTensor {
        assert!(c < self.channels);
        let mut data = Vec::with_capacity(self.height * self.width);
        for px in 0..self.height * self.width {
            data.push(self.data[px * self.channels + c]);
        }
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Applies `f` to every sample, yielding a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

pub(crate) fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(())
}

/// Decodes a PNG or JPEG file into unit-range samples.
///
/// 8-bit samples map as v/255, 16-bit as v/65535. Non-RGB/gray layouts
/// (RGBA, palette) are converted; alpha is dropped.
pub fn decode(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let dyn_img = image::ImageReader::open(path)
        .map_err(|e| Error::io(&name, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: name.clone(),
            reason: e.to_string(),
        })?;

    let (w, h) = (dyn_img.width() as usize, dyn_img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Decode {
            path: name,
            reason: "zero-dimension image".into(),
        });
    }

    use image::DynamicImage as D;
    let tensor = match dyn_img {
        D::ImageLuma8(img) => {
            let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            ImageTensor::new(h, w, 1, data)?
        }
        D::ImageLuma16(img) => {
            let data = img.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            ImageTensor::new(h, w, 1, data)?
        }
        D::ImageRgb8(img) => {
            let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            ImageTensor::new(h, w, 3, data)?
        }
        D::ImageRgb16(img) => {
            let data = img.as_raw().iter().map(|&v| v as f64 / 65535.0).collect();
            ImageTensor::new(h, w, 3, data)?
        }
        other => {
            // RGBA and friends: flatten to 8-bit RGB.
            let rgb = other.to_rgb8();
            let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            ImageTensor::new(h, w, 3, data)?
        }
    };
    Ok(tensor)
}

/// Writes an image as an 8-bit PNG (values quantized as round(255*v)).
pub fn encode_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let quant = |v: f64| -> u8 { (v.clamp(0.0, 1.0) * 255.0).round() as u8 };
    let bytes: Vec<u8> = img.data.iter().map(|&v| quant(v)).collect();
    let result = match img.channels {
        1 => image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
            .expect("sized buffer")
            .save_with_format(path, image::ImageFormat::Png),
        3 => image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
            .expect("sized buffer")
            .save_with_format(path, image::ImageFormat::Png),
        _ => unreachable!("ImageTensor enforces 1 or 3 channels"),
    };
    result.map_err(|e| Error::Encode {
        path: name,
        reason: e.to_string(),
    })
}

/// Rec.601 luma. Single-channel input is returned unchanged.
pub fn to_grayscale(img: &ImageTensor) -> ImageTensor {
    if img.channels == 1 {
        return img.clone();
    }
    let mut data = Vec::with_capacity(img.height * img.width);
    for px in 0..img.height * img.width {
        let r = img.data[px * 3];
        let g = img.data[px * 3 + 1];
        let b = img.data[px * 3 + 2];
        data.push(0.299 * r + 0.587 * g + 0.114 * b);
    }
    ImageTensor {
        height: img.height,
        width: img.width,
        channels: 1,
        data,
    }
}

/// Border handling for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Mirror across the edge, edge pixel included: `d c b a | a b c d | d c b a`.
    Reflect,
    /// Clamp to the edge pixel.
    Replicate,
}

#[inline]
fn border_index(i: isize, n: usize, border: Border) -> usize {
    let n = n as isize;
    let mut i = i;
    match border {
        Border::Reflect => {
            // Iterate for kernels wider than the image edge distance.
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i - 1;
                }
                if i >= n {
                    i = 2 * n - 1 - i;
                }
            }
            i as usize
        }
        Border::Replicate => i.clamp(0, n - 1) as usize,
    }
}

/// Odd-sided 2-D convolution kernel.
///
/// A kernel built from an outer product keeps its 1-D factors so
/// convolution can run separably.
#[derive(Debug, Clone)]
pub struct Kernel2D {
    taps: Vec<f64>,
    kh: usize,
    kw: usize,
    separable: Option<(Vec<f64>, Vec<f64>)>,
    sum_to_one: bool,
}

impl Kernel2D {
    pub fn new(taps: Vec<f64>, kh: usize, kw: usize, sum_to_one: bool) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel sides must be odd, got {kh}x{kw}"
            )));
        }
        if taps.len() != kh * kw {
            return Err(Error::InvalidArgument("kernel tap count mismatch".into()));
        }
        if sum_to_one {
            let s: f64 = taps.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "kernel flagged sum-to-one but taps sum to {s}"
                )));
            }
        }
        Ok(Kernel2D {
            taps,
            kh,
            kw,
            separable: None,
            sum_to_one,
        })
    }

    /// Builds `outer(col, row)` with the separable fast path retained.
    pub fn from_separable(col: Vec<f64>, row: Vec<f64>, sum_to_one: bool) -> Result<Self> {
        let kh = col.len();
        let kw = row.len();
        let mut taps = Vec::with_capacity(kh * kw);
        for &c in &col {
            for &r in &row {
                taps.push(c * r);
            }
        }
        let mut k = Kernel2D::new(taps, kh, kw, sum_to_one)?;
        k.separable = Some((col, row));
        Ok(k)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn size(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn sum_to_one(&self) -> bool {
        self.sum_to_one
    }
}

/// Normalized Gaussian window of odd `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel2D> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::InvalidArgument(format!(
            "gaussian kernel size must be odd and positive, got {size}"
        )));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let half = (size / 2) as isize;
    let mut g = Vec::with_capacity(size);
    for i in -half..=half {
        g.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let s: f64 = g.iter().sum();
    for v in &mut g {
        *v /= s;
    }
    Kernel2D::from_separable(g.clone(), g, true)
}

/// Same-shape convolution with the declared border mode.
pub fn convolve_same(img: &ImageTensor, k: &Kernel2D, border: Border) -> Result<ImageTensor> {
    if k.kh > img.height || k.kw > img.width {
        return Err(Error::InvalidArgument(format!(
            "kernel {}x{} larger than image {}x{}",
            k.kh, k.kw, img.height, img.width
        )));
    }
    if let Some((col, row)) = &k.separable {
        let tmp = convolve_rows(img, row, border);
        return Ok(convolve_cols(&tmp, col, border));
    }
    let (h, w, c) = (img.height, img.width, img.channels);
    let half_h = (k.kh / 2) as isize;
    let half_w = (k.kw / 2) as isize;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..k.kh {
                    let sy = border_index(y as isize + ky as isize - half_h, h, border);
                    for kx in 0..k.kw {
                        let sx = border_index(x as isize + kx as isize - half_w, w, border);
                        acc += k.taps[ky * k.kw + kx] * img.get(sy, sx, ch);
                    }
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    Ok(ImageTensor {
        height: h,
        width: w,
        channels: c,
        data: out,
    })
}

fn convolve_rows(img: &ImageTensor, row: &[f64], border: Border) -> ImageTensor {
    let (h, w, c) = (img.height, img.width, img.channels);
    let half = (row.len() / 2) as isize;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, &kv) in row.iter().enumerate() {
                    let sx = border_index(x as isize + ki as isize - half, w, border);
                    acc += kv * img.get(y, sx, ch);
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    ImageTensor {
        height: h,
        width: w,
        channels: c,
        data: out,
    }
}

fn convolve_cols(img: &ImageTensor, col: &[f64], border: Border) -> ImageTensor {
    let (h, w, c) = (img.height, img.width, img.channels);
    let half = (col.len() / 2) as isize;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, &kv) in col.iter().enumerate() {
                    let sy = border_index(y as isize + ki as isize - half, h, border);
                    acc += kv * img.get(sy, x, ch);
                }
                out[(y * w + x) * c + ch] = acc;
            }
        }
    }
    ImageTensor {
        height: h,
        width: w,
        channels: c,
        data: out,
    }
}

/// 2x2 average pooling; output dims are floor(dim/2).
pub fn downsample2(img: &ImageTensor) -> Result<ImageTensor> {
    if img.height < 2 || img.width < 2 {
        return Err(Error::ImageTooSmall(format!(
            "{}x{} cannot be pooled 2x2",
            img.height, img.width
        )));
    }
    let (oh, ow, c) = (img.height / 2, img.width / 2, img.channels);
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let s = img.get(2 * y, 2 * x, ch)
                    + img.get(2 * y, 2 * x + 1, ch)
                    + img.get(2 * y + 1, 2 * x, ch)
                    + img.get(2 * y + 1, 2 * x + 1, ch);
                out[(y * ow + x) * c + ch] = s * 0.25;
            }
        }
    }
    ImageTensor {
        height: oh,
        width: ow,
        channels: c,
        data: out,
    }
    .into_ok()
}

impl ImageTensor {
    fn into_ok(self) -> Result<ImageTensor> {
        Ok(self)
    }
}

/// Nearest-neighbor upsample to an explicit target shape (each source pixel
/// covers a 2x2 block; odd targets reuse the last row/column).
pub fn upsample_nearest(img: &ImageTensor, target_h: usize, target_w: usize) -> ImageTensor {
    let c = img.channels;
    let mut out = vec![0.0; target_h * target_w * c];
    for y in 0..target_h {
        let sy = (y / 2).min(img.height - 1);
        for x in 0..target_w {
            let sx = (x / 2).min(img.width - 1);
            for ch in 0..c {
                out[(y * target_w + x) * c + ch] = img.get(sy, sx, ch);
            }
        }
    }
    ImageTensor {
        height: target_h,
        width: target_w,
        channels: c,
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        let data = (0..h * w).map(|i| i as f64 / (h * w) as f64).collect();
        ImageTensor::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn grayscale_coefficients() {
        let red = ImageTensor::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((to_grayscale(&red).get(0, 0, 0) - 0.299).abs() < 1e-12);
        let gray_px = ImageTensor::new(1, 1, 3, vec![0.42, 0.42, 0.42]).unwrap();
        assert!((to_grayscale(&gray_px).get(0, 0, 0) - 0.42).abs() < 1e-12);
        let single = ramp(4, 4);
        assert_eq!(to_grayscale(&single), single);
    }

    #[test]
    fn grayscale_stays_in_unit_range() {
        let mut data = Vec::new();
        for i in 0..48 {
            data.push(((i * 37) % 256) as f64 / 255.0);
        }
        let img = ImageTensor::new(4, 4, 3, data).unwrap();
        for &v in to_grayscale(&img).data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn gaussian_kernel_degenerate_and_uniform() {
        let k = gaussian_kernel(1, 2.0).unwrap();
        assert_eq!(k.taps(), &[1.0]);
        let k = gaussian_kernel(3, 1e6).unwrap();
        for &t in k.taps() {
            assert!((t - 1.0 / 9.0).abs() < 1e-9);
        }
        assert!(gaussian_kernel(4, 1.0).is_err());
        assert!(gaussian_kernel(3, 0.0).is_err());
    }

    #[test]
    fn gaussian_kernel_matches_closed_form() {
        // Oracle: direct evaluation of exp(-(i^2+j^2)/(2 sigma^2)), normalized.
        let size = 11usize;
        let sigma = 1.5f64;
        let half = (size / 2) as isize;
        let mut oracle = vec![0.0; size * size];
        let mut z = 0.0;
        for i in -half..=half {
            for j in -half..=half {
                let v = (-((i * i + j * j) as f64) / (2.0 * sigma * sigma)).exp();
                oracle[((i + half) as usize) * size + (j + half) as usize] = v;
                z += v;
            }
        }
        for v in &mut oracle {
            *v /= z;
        }
        let k = gaussian_kernel(size, sigma).unwrap();
        for (a, b) in k.taps().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let center = k.taps()[(size / 2) * size + size / 2];
        assert!((center - 0.07076223776394066).abs() < 1e-12);
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convolve_identity_and_dc() {
        let img = ramp(5, 7);
        let ident = Kernel2D::new(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 3, 3, true)
            .unwrap();
        let out = convolve_same(&img, &ident, Border::Reflect).unwrap();
        for (a, b) in out.data().iter().zip(img.data().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let flat = ImageTensor::constant(6, 6, 1, 0.37);
        let box3 = Kernel2D::new(vec![1.0 / 9.0; 9], 3, 3, true).unwrap();
        let out = convolve_same(&flat, &box3, Border::Reflect).unwrap();
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_matches_naive_oracle() {
        // 5x5 ramp, 3x3 box kernel, reflect border, hand-rolled nested loops.
        let img = ramp(5, 5);
        let box3 = Kernel2D::new(vec![1.0 / 9.0; 9], 3, 3, true).unwrap();
        let out = convolve_same(&img, &box3, Border::Reflect).unwrap();
        let reflect = |i: isize, n: isize| -> usize {
            let mut i = i;
            if i < 0 {
                i = -i - 1;
            }
            if i >= n {
                i = 2 * n - 1 - i;
            }
            i as usize
        };
        for y in 0..5usize {
            for x in 0..5usize {
                let mut acc = 0.0;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let sy = reflect(y as isize + dy, 5);
                        let sx = reflect(x as isize + dx, 5);
                        acc += img.get(sy, sx, 0) / 9.0;
                    }
                }
                assert!((out.get(y, x, 0) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_equals_dense() {
        let img = ramp(9, 8);
        let sep = gaussian_kernel(5, 1.2).unwrap();
        let dense = Kernel2D::new(sep.taps().to_vec(), 5, 5, true).unwrap();
        let a = convolve_same(&img, &sep, Border::Reflect).unwrap();
        let b = convolve_same(&img, &dense, Border::Reflect).unwrap();
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_larger_than_image_rejected() {
        let img = ramp(2, 2);
        let box3 = Kernel2D::new(vec![1.0 / 9.0; 9], 3, 3, true).unwrap();
        assert!(convolve_same(&img, &box3, Border::Reflect).is_err());
    }

    #[test]
    fn downsample_cases() {
        let img = ImageTensor::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = downsample2(&img).unwrap();
        assert_eq!(out.height(), 1);
        assert!((out.get(0, 0, 0) - 0.5).abs() < 1e-15);

        let flat = ImageTensor::constant(8, 8, 3, 0.25);
        let out = downsample2(&flat).unwrap();
        assert_eq!((out.height(), out.width()), (4, 4));
        for &v in out.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }

        let mut checker = ImageTensor::constant(4, 4, 1, 0.0);
        for y in 0..4 {
            for x in 0..4 {
                checker.set(y, x, 0, ((x + y) % 2) as f64);
            }
        }
        let out = downsample2(&checker).unwrap();
        for &v in out.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        let tiny = ImageTensor::constant(1, 4, 1, 0.0);
        assert!(downsample2(&tiny).is_err());
    }

    #[test]
    fn decode_errors() {
        assert!(decode("/nonexistent/nope.png").is_err());
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("trunc.png");
        std::fs::write(&bad, [0x89, b'P', b'N', b'G', 0x0d, 0x0a]).unwrap();
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn decode_normalizes_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        image::GrayImage::from_raw(2, 2, vec![0, 128, 255, 64])
            .unwrap()
            .save(&p)
            .unwrap();
        let t = decode(&p).unwrap();
        assert_eq!((t.height(), t.width(), t.channels()), (2, 2, 1));
        let expect = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in t.data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_normalizes_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g16.png");
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
            2,
            1,
            vec![0u16, 65535u16],
        )
        .unwrap();
        image::DynamicImage::ImageLuma16(img).save(&p).unwrap();
        let t = decode(&p).unwrap();
        assert!((t.get(0, 0, 0) - 0.0).abs() < 1e-12);
        assert!((t.get(0, 1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn png_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.png");
        let mut data = Vec::new();
        for i in 0..(8 * 8 * 3) {
            data.push(((i * 53) % 256) as f64 / 255.0);
        }
        let img = ImageTensor::new(8, 8, 3, data).unwrap();
        encode_png(&img, &p).unwrap();
        let back = decode(&p).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn jpeg_decodes_in_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("j.jpg");
        let mut raw = Vec::new();
        for i in 0..(32 * 32 * 3) {
            raw.push(((i * 7) % 256) as u8);
        }
        image::RgbImage::from_raw(32, 32, raw)
            .unwrap()
            .save_with_format(&p, image::ImageFormat::Jpeg)
            .unwrap();
        let t = decode(&p).unwrap();
        assert_eq!((t.height(), t.width(), t.channels()), (32, 32, 3));
        for &v in t.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
