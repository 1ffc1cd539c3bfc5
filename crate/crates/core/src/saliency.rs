//! Log spectral residual saliency and its binarization into a [`BinaryMap`].
//!
//! The pipeline for one frame is
//!
//! 1. `F = DFT(I)` (un-normalized forward transform),
//! 2. `L = ln(|F| + eps)`, `P = arg F`,
//! 3. `R = L - box_n * L`,
//! 4. `S = G_sigma * |IDFT(exp(R + iP))|^2`,
//! 5. `O(x) = S(x) > mean(S) * gamma`.
//!
//! All filters clamp to the edge at the borders.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use thiserror::Error;

use crate::binary_content::BinaryMap;
use crate::filter::{gaussian_weights, separable_clamped};
use crate::image_io::GrayImage;

#[derive(Debug, Error, PartialEq)]
pub enum SaliencyError {
    #[error("average filter size must be odd and >= 1, got {0}")]
    FilterSize(usize),
    #[error("gaussian sigma must be > 0, got {0}")]
    Sigma(f64),
    #[error("gamma must be > 0, got {0}")]
    Gamma(f64),
    #[error("log epsilon must be > 0, got {0}")]
    LogEpsilon(f64),
    #[error("field size mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaliencyParams {
    /// Side of the box filter applied to the log amplitude.
    pub avg_filter_n: usize,
    /// Standard deviation of the smoothing applied to the reconstruction.
    pub gaussian_sigma: f64,
    /// Threshold factor relative to the mean saliency.
    pub gamma: f64,
    /// Added to the amplitude before taking its logarithm.
    pub log_epsilon: f64,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        Self {
            avg_filter_n: 3,
            gaussian_sigma: 2.5,
            gamma: 3.0,
            log_epsilon: 1e-12,
        }
    }
}

impl SaliencyParams {
    pub fn validate(&self) -> Result<(), SaliencyError> {
        if self.avg_filter_n == 0 || self.avg_filter_n.is_multiple_of(2) {
            return Err(SaliencyError::FilterSize(self.avg_filter_n));
        }
        if self.gaussian_sigma.is_nan() || self.gaussian_sigma <= 0.0 {
            return Err(SaliencyError::Sigma(self.gaussian_sigma));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(SaliencyError::Gamma(self.gamma));
        }
        if self.log_epsilon.is_nan() || self.log_epsilon <= 0.0 {
            return Err(SaliencyError::LogEpsilon(self.log_epsilon));
        }
        Ok(())
    }
}

/// A real scalar field on the image grid (or frequency grid).
#[derive(Clone, Debug, PartialEq)]
pub struct RealField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl RealField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height, "field buffer size");
        Self {
            width,
            height,
            values,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn same_shape(&self, other: &RealField) -> Result<(), SaliencyError> {
        if self.width != other.width || self.height != other.height {
            return Err(SaliencyError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Min-max scaled 8-bit rendering, for debug output.
    pub fn to_luma8(&self) -> image::GrayImage {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        let bytes = self
            .values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions")
    }
}

/// A complex field, used both for spectra and for inverse-transformed data.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub width: usize,
    pub height: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    fn from_complex(width: usize, height: usize, buf: &[Complex<f64>]) -> Self {
        Self {
            width,
            height,
            re: buf.iter().map(|z| z.re).collect(),
            im: buf.iter().map(|z| z.im).collect(),
        }
    }

    fn to_complex(&self) -> Vec<Complex<f64>> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&re, &im)| Complex::new(re, im))
            .collect()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Un-normalized 2-D transform of a row-major buffer, in place.
fn fft2_in_place(width: usize, height: usize, buf: &mut [Complex<f64>], direction: FftDirection) {
    let row_fft = plan(width, direction);
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(width) {
        row_fft.process_with_scratch(row, &mut scratch);
    }

    let col_fft = plan(height, direction);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex::default());
    let mut column = vec![Complex::default(); height];
    for c in 0..width {
        for (r, z) in column.iter_mut().enumerate() {
            *z = buf[r * width + c];
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for (r, z) in column.iter().enumerate() {
            buf[r * width + c] = *z;
        }
    }
}

/// Forward 2-D DFT, `F(u,v) = sum I(x,y) e^{-2 pi i (ux/W + vy/H)}`.
pub fn forward_dft(img: &GrayImage) -> Spectrum {
    let (w, h) = (img.width(), img.height());
    let mut buf: Vec<Complex<f64>> = img.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2_in_place(w, h, &mut buf, FftDirection::Forward);
    Spectrum::from_complex(w, h, &buf)
}

/// Inverse 2-D DFT including the `1 / (W H)` factor.
pub fn inverse_dft(spec: &Spectrum) -> Spectrum {
    let mut buf = spec.to_complex();
    fft2_in_place(spec.width, spec.height, &mut buf, FftDirection::Inverse);
    let scale = 1.0 / (spec.width * spec.height) as f64;
    for z in &mut buf {
        *z *= scale;
    }
    Spectrum::from_complex(spec.width, spec.height, &buf)
}

/// Log amplitude `L = ln(|F| + eps)` and phase `P = atan2(im, re)` in `(-pi, pi]`.
pub fn log_amplitude_and_phase(spec: &Spectrum, log_epsilon: f64) -> (RealField, RealField) {
    let n = spec.re.len();
    let mut log_amp = Vec::with_capacity(n);
    let mut phase = Vec::with_capacity(n);
    for (&re, &im) in spec.re.iter().zip(&spec.im) {
        log_amp.push((re.hypot(im) + log_epsilon).ln());
        let p = im.atan2(re);
        phase.push(if p <= -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            p
        });
    }
    (
        RealField::new(spec.width, spec.height, log_amp),
        RealField::new(spec.width, spec.height, phase),
    )
}

/// `n x n` mean filter with clamp-to-edge borders.
pub fn box_filter(field: &RealField, n: usize) -> RealField {
    assert!(n % 2 == 1, "box filter size must be odd");
    if n == 1 {
        return field.clone();
    }
    let weights = vec![1.0 / n as f64; n];
    let values = separable_clamped(&field.values, field.width, field.height, &weights);
    RealField::new(field.width, field.height, values)
}

/// Spectral residual `R = L - box_n * L`.
pub fn spectral_residual(log_amp: &RealField, n: usize) -> RealField {
    let smoothed = box_filter(log_amp, n);
    let values = log_amp
        .values
        .iter()
        .zip(&smoothed.values)
        .map(|(l, m)| l - m)
        .collect();
    RealField::new(log_amp.width, log_amp.height, values)
}

/// Normalized, truncated 1-D Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// Kernel of radius `ceil(3 sigma)`.
    pub fn new(sigma: f64) -> Self {
        Self::with_radius(sigma, (3.0 * sigma).ceil() as usize)
    }

    pub fn with_radius(sigma: f64, radius: usize) -> Self {
        Self {
            weights: gaussian_weights(sigma, radius),
        }
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, field: &RealField) -> RealField {
        if self.weights.len() == 1 {
            return field.clone();
        }
        let values = separable_clamped(&field.values, field.width, field.height, &self.weights);
        RealField::new(field.width, field.height, values)
    }
}

/// `S = G_sigma * |IDFT(exp(R + iP))|^2`.
pub fn reconstruct_saliency(
    residual: &RealField,
    phase: &RealField,
    sigma: f64,
) -> Result<RealField, SaliencyError> {
    reconstruct_saliency_with_kernel(residual, phase, &GaussianKernel::new(sigma))
}

pub fn reconstruct_saliency_with_kernel(
    residual: &RealField,
    phase: &RealField,
    kernel: &GaussianKernel,
) -> Result<RealField, SaliencyError> {
    residual.same_shape(phase)?;
    let (w, h) = (residual.width, residual.height);
    let mut buf: Vec<Complex<f64>> = residual
        .values
        .iter()
        .zip(&phase.values)
        .map(|(&r, &p)| Complex::from_polar(r.exp(), p))
        .collect();
    fft2_in_place(w, h, &mut buf, FftDirection::Inverse);
    let scale = 1.0 / (w * h) as f64;
    let energy = buf.iter().map(|z| (z * scale).norm_sqr()).collect();
    Ok(kernel.apply(&RealField::new(w, h, energy)))
}

/// `O(x) = 1` iff `S(x) > mean(S) * gamma`.
pub fn binarize(saliency: &RealField, gamma: f64) -> BinaryMap {
    let threshold = saliency.mean() * gamma;
    BinaryMap::from_fn(saliency.width, saliency.height, |r, c| {
        saliency.get(r, c) > threshold
    })
    .expect("saliency field is non-empty")
}

/// The smoothed saliency map `S` of an image.
pub fn saliency_map(img: &GrayImage, params: &SaliencyParams) -> Result<RealField, SaliencyError> {
    params.validate()?;
    let spectrum = forward_dft(img);
    let (log_amp, phase) = log_amplitude_and_phase(&spectrum, params.log_epsilon);
    let residual = spectral_residual(&log_amp, params.avg_filter_n);
    reconstruct_saliency(&residual, &phase, params.gaussian_sigma)
}

/// Binary content of an image at working resolution.
pub fn compute_binary_content(
    img: &GrayImage,
    params: &SaliencyParams,
) -> Result<BinaryMap, SaliencyError> {
    Ok(binarize(&saliency_map(img, params)?, params.gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn single_bin(re: f64, im: f64) -> Spectrum {
        Spectrum {
            width: 1,
            height: 1,
            re: vec![re],
            im: vec![im],
        }
    }

    #[test]
    fn dft_of_constant_is_dc_only() {
        let img = GrayImage::constant(6, 4, 0.25).unwrap();
        let spec = forward_dft(&img);
        assert!((spec.re[0] - 0.25 * 24.0).abs() < 1e-12);
        for i in 1..24 {
            assert!(spec.re[i].abs() < 1e-12 && spec.im[i].abs() < 1e-12);
        }
        assert!(spec.im[0].abs() < 1e-12);
    }

    #[test]
    fn dft_of_impulse_is_flat() {
        let img =
            GrayImage::from_fn(5, 3, |r, c| if r == 0 && c == 0 { 1.0 } else { 0.0 }).unwrap();
        let spec = forward_dft(&img);
        for i in 0..15 {
            assert!((spec.re[i] - 1.0).abs() < 1e-12);
            assert!(spec.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn log_amplitude_and_phase_examples() {
        let (l, p) = log_amplitude_and_phase(&single_bin(1.0, 0.0), 1e-12);
        assert!(l.values[0].abs() < 1e-11);
        assert_eq!(p.values[0], 0.0);

        let (_, p) = log_amplitude_and_phase(&single_bin(0.0, 1.0), 1e-12);
        assert!((p.values[0] - PI / 2.0).abs() < 1e-15);

        let (l, p) = log_amplitude_and_phase(&single_bin(0.0, 0.0), 1e-12);
        assert_eq!(l.values[0], (1e-12f64).ln());
        assert_eq!(p.values[0], 0.0);

        let (_, p) = log_amplitude_and_phase(&single_bin(-1.0, -0.0), 1e-12);
        assert_eq!(p.values[0], PI);
    }

    #[test]
    fn residual_of_constant_is_zero() {
        let l = RealField::filled(7, 5, 3.25);
        assert!(spectral_residual(&l, 3)
            .values
            .iter()
            .all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn residual_with_unit_filter_is_zero() {
        let l = RealField::new(3, 2, vec![1.0, -2.0, 5.0, 0.5, 8.0, 13.0]);
        assert!(spectral_residual(&l, 1).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_of_center_spike() {
        let mut values = vec![0.0; 25];
        values[12] = 1.0;
        let r = spectral_residual(&RealField::new(5, 5, values), 3);
        assert!((r.get(2, 2) - 8.0 / 9.0).abs() < 1e-12);
        assert!((r.get(1, 1) + 1.0 / 9.0).abs() < 1e-12);
        assert!(r.get(0, 0).abs() < 1e-12);
    }

    #[test]
    fn box_filter_clamps_borders() {
        // 1-D case on a 3x1 field: left cell sees [a, a, b].
        let f = RealField::new(3, 1, vec![0.0, 3.0, 6.0]);
        let out = box_filter(&f, 3);
        assert!((out.values[0] - 1.0).abs() < 1e-12);
        assert!((out.values[1] - 3.0).abs() < 1e-12);
        assert!((out.values[2] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn flat_spectrum_reconstructs_smoothed_impulse() {
        let (w, h) = (16, 12);
        let zero = RealField::filled(w, h, 0.0);
        let kernel = GaussianKernel::new(2.5);
        let s = reconstruct_saliency_with_kernel(&zero, &zero, &kernel).unwrap();
        // exp(0) on every bin inverts to a unit delta at the origin; with
        // clamped borders the origin collects every tap at offset <= 0 in
        // both directions.
        let half: f64 = kernel.weights()[..=kernel.radius()].iter().sum();
        assert!((s.get(0, 0) - half * half).abs() < 1e-12);
        let (argmax, _) =
            s.values.iter().enumerate().fold(
                (0, f64::MIN),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        assert_eq!(argmax, 0);
    }

    #[test]
    fn zero_radius_kernel_is_identity() {
        let (w, h) = (8, 8);
        let r = RealField::new(
            w,
            h,
            (0..64)
                .map(|i| ((i * 37) % 11) as f64 / 10.0 - 0.5)
                .collect(),
        );
        let p = RealField::new(w, h, (0..64).map(|i| ((i * 13) % 7) as f64 - 3.0).collect());
        let kernel = GaussianKernel::with_radius(2.0, 0);
        let s = reconstruct_saliency_with_kernel(&r, &p, &kernel).unwrap();

        let spec = Spectrum {
            width: w,
            height: h,
            re: r
                .values
                .iter()
                .zip(&p.values)
                .map(|(a, b)| a.exp() * b.cos())
                .collect(),
            im: r
                .values
                .iter()
                .zip(&p.values)
                .map(|(a, b)| a.exp() * b.sin())
                .collect(),
        };
        let spatial = inverse_dft(&spec);
        for i in 0..64 {
            let expected = spatial.re[i].powi(2) + spatial.im[i].powi(2);
            assert!((s.values[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_shape_mismatch() {
        let a = RealField::filled(4, 4, 0.0);
        let b = RealField::filled(4, 3, 0.0);
        assert!(reconstruct_saliency(&a, &b, 1.0).is_err());
    }

    #[test]
    fn gaussian_kernel_is_normalized() {
        let k = GaussianKernel::new(2.5);
        assert_eq!(k.radius(), 8);
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binarize_examples() {
        let uniform = RealField::filled(4, 4, 2.0);
        assert_eq!(binarize(&uniform, 1.5).popcount(), 0);

        let s = RealField::new(2, 2, vec![10.0, 0.0, 0.0, 0.0]);
        let o = binarize(&s, 3.0);
        assert_eq!(o.popcount(), 1);
        assert!(o.get(0, 0));

        let zero = RealField::filled(3, 3, 0.0);
        assert_eq!(binarize(&zero, 0.5).popcount(), 0);
    }

    #[test]
    fn params_validation() {
        assert!(SaliencyParams::default().validate().is_ok());
        let bad = |f: fn(&mut SaliencyParams)| {
            let mut p = SaliencyParams::default();
            f(&mut p);
            p.validate().is_err()
        };
        assert!(bad(|p| p.avg_filter_n = 4));
        assert!(bad(|p| p.avg_filter_n = 0));
        assert!(bad(|p| p.gaussian_sigma = 0.0));
        assert!(bad(|p| p.gamma = -1.0));
        assert!(bad(|p| p.log_epsilon = f64::NAN));
    }
}
