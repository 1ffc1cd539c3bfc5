//! Separable convolution with clamp-to-edge borders.

/// Convolves rows then columns of a row-major `width x height` buffer with a
/// symmetric odd-length kernel.
pub fn separable_clamped(values: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), width * height);
    debug_assert!(kernel.len() % 2 == 1);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (width as isize, height as isize);

    let mut tmp = vec![0.0; values.len()];
    for (src, dst) in values.chunks_exact(width).zip(tmp.chunks_exact_mut(width)) {
        for (c, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &wk) in kernel.iter().enumerate() {
                let cc = (c as isize + k as isize - radius).clamp(0, w - 1) as usize;
                acc += wk * src[cc];
            }
            *d = acc;
        }
    }

    let mut out = vec![0.0; values.len()];
    for r in 0..height {
        let dst = &mut out[r * width..(r + 1) * width];
        for (k, &wk) in kernel.iter().enumerate() {
            let rr = (r as isize + k as isize - radius).clamp(0, h - 1) as usize;
            let src = &tmp[rr * width..(rr + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    out
}

/// Normalized Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_weights(sigma: f64, radius: usize) -> Vec<f64> {
    let mut weights: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Gaussian blur with a kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    if radius == 0 {
        return values.to_vec();
    }
    separable_clamped(values, width, height, &gaussian_weights(sigma, radius))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants() {
        let v = vec![0.7; 30];
        assert!(gaussian_blur(&v, 6, 5, 1.3)
            .iter()
            .all(|x| (x - 0.7).abs() < 1e-12));
    }

    #[test]
    fn separable_matches_direct_2d() {
        let (w, h) = (7, 5);
        let v: Vec<f64> = (0..w * h).map(|i| ((i * 31) % 17) as f64).collect();
        let k = [0.25, 0.5, 0.25];
        let out = separable_clamped(&v, w, h, &k);
        for r in 0..h as isize {
            for c in 0..w as isize {
                let mut acc = 0.0;
                for dr in -1..=1isize {
                    for dc in -1..=1isize {
                        let rr = (r + dr).clamp(0, h as isize - 1) as usize;
                        let cc = (c + dc).clamp(0, w as isize - 1) as usize;
                        acc += k[(dr + 1) as usize] * k[(dc + 1) as usize] * v[rr * w + cc];
                    }
                }
                assert!((out[r as usize * w + c as usize] - acc).abs() < 1e-12);
            }
        }
    }
}
