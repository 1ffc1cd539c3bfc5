#![allow(dead_code)]

use binloop::{BinaryMap, GrayImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-pixel boolean reference for a packed map.
pub fn to_bools(map: &BinaryMap) -> Vec<bool> {
    let mut out = Vec::with_capacity(map.width() * map.height());
    for r in 0..map.height() {
        for c in 0..map.width() {
            out.push(map.get(r, c));
        }
    }
    out
}

pub fn random_map(rng: &mut TestRng, width: usize, height: usize, density: f64) -> BinaryMap {
    let cells: Vec<bool> = (0..width * height)
        .map(|_| rng.random_bool(density))
        .collect();
    BinaryMap::from_bools(width, height, &cells).unwrap()
}

/// A scene of random rectangles and discs over a smooth gradient.
pub fn random_scene(rng: &mut TestRng, width: usize, height: usize) -> GrayImage {
    let (w, h) = (width as f64, height as f64);
    let g0: f64 = rng.random_range(0.3..0.6);
    let gx: f64 = rng.random_range(-0.15..0.15);
    let gy: f64 = rng.random_range(-0.15..0.15);
    let mut data: Vec<f64> = (0..width * height)
        .map(|i| {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            g0 + gx * c / w + gy * r / h
        })
        .collect();
    let shapes = rng.random_range(14..24);
    for _ in 0..shapes {
        let value: f64 = rng.random_range(0.0..1.0);
        let cr = rng.random_range(0.0..h);
        let cc = rng.random_range(0.0..w);
        let size = rng.random_range(0.02..0.12) * w;
        let aspect: f64 = rng.random_range(0.5..2.0);
        let (hr, hc) = (size * aspect.sqrt(), size / aspect.sqrt());
        let disc = rng.random_bool(0.5);
        let r0 = ((cr - hr).floor().max(0.0)) as usize;
        let r1 = ((cr + hr).ceil().min(h - 1.0)) as usize;
        let c0 = ((cc - hc).floor().max(0.0)) as usize;
        let c1 = ((cc + hc).ceil().min(w - 1.0)) as usize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (dr, dc) = ((r as f64 - cr) / hr, (c as f64 - cc) / hc);
                let inside = if disc {
                    dr * dr + dc * dc <= 1.0
                } else {
                    dr.abs() <= 1.0 && dc.abs() <= 1.0
                };
                if inside {
                    data[r * width + c] = value;
                }
            }
        }
    }
    GrayImage::new(width, height, data).unwrap()
}

/// Translates by `(dr, dc)` with clamped borders and adds Gaussian noise.
pub fn shifted_noisy(
    img: &GrayImage,
    dr: isize,
    dc: isize,
    sigma: f64,
    rng: &mut TestRng,
) -> GrayImage {
    let noise = Normal::new(0.0, sigma).unwrap();
    GrayImage::from_fn(img.width(), img.height(), |r, c| {
        img.get_clamped(r as isize - dr, c as isize - dc)
            + if sigma > 0.0 { noise.sample(rng) } else { 0.0 }
    })
    .unwrap()
}

/// Translates with wraparound.
pub fn shifted_wrap(img: &GrayImage, dr: isize, dc: isize) -> GrayImage {
    let (w, h) = (img.width() as isize, img.height() as isize);
    GrayImage::from_fn(img.width(), img.height(), |r, c| {
        img.get(
            (r as isize - dr).rem_euclid(h) as usize,
            (c as isize - dc).rem_euclid(w) as usize,
        )
    })
    .unwrap()
}
