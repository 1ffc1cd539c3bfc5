//! Local-feature confirmation of retrieval candidates.
//!
//! The default extractor, [`HessianFeatures`], finds scale-space extrema of
//! the absolute scale-normalized Hessian determinant and describes each
//! point with a 4x4 grid of gradient sums (`Σdx, Σdy, Σ|dx|, Σ|dy|`), i.e.
//! a 64-dimensional unit vector. Any [`FeatureExtractor`] can replace it.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::filter::gaussian_blur;
use crate::image_io::GrayImage;
use crate::retrieval::LoopCandidate;

#[derive(Debug, Error, PartialEq)]
pub enum VerifyError {
    #[error("descriptor length mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("{points} keypoints but {descriptors} descriptors")]
    LengthMismatch { points: usize, descriptors: usize },
    #[error("descriptor {0} has zero norm")]
    ZeroDescriptor(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub row: f64,
    pub col: f64,
    pub scale: f64,
    /// Radians, counter-clockwise from the +col axis.
    pub orientation: f64,
    pub response: f64,
}

/// Keypoints with one unit-norm descriptor each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeypointSet {
    points: Vec<Keypoint>,
    descriptors: Vec<Vec<f32>>,
}

impl KeypointSet {
    /// Normalizes every descriptor to unit length.
    pub fn new(points: Vec<Keypoint>, mut descriptors: Vec<Vec<f32>>) -> Result<Self, VerifyError> {
        if points.len() != descriptors.len() {
            return Err(VerifyError::LengthMismatch {
                points: points.len(),
                descriptors: descriptors.len(),
            });
        }
        if let Some(first) = descriptors.first() {
            let dim = first.len();
            for d in &descriptors {
                if d.len() != dim {
                    return Err(VerifyError::DimensionMismatch(dim, d.len()));
                }
            }
        }
        for (i, d) in descriptors.iter_mut().enumerate() {
            let norm = d.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm.is_nan() || norm <= 0.0 {
                return Err(VerifyError::ZeroDescriptor(i));
            }
            d.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self {
            points,
            descriptors,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Keypoint] {
        &self.points
    }

    pub fn descriptors(&self) -> &[Vec<f32>] {
        &self.descriptors
    }
}

/// Pluggable detector + descriptor.
pub trait FeatureExtractor: Send + Sync {
    /// At most `max_features` keypoints ranked by detector response.
    /// Must be deterministic.
    fn detect_and_describe(&self, img: &GrayImage, max_features: usize) -> KeypointSet;
}

/// Determinant-of-Hessian blob detector with a gradient-sum descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianFeatures {
    /// Gaussian scales of the stack; extrema are searched on the interior
    /// levels only.
    pub scales: Vec<f64>,
    /// Minimum `|σ⁴ det H|` for a keypoint (intensities in `[0, 1]`).
    pub threshold: f64,
    /// Skip orientation assignment and describe in image axes.
    pub upright: bool,
}

impl Default for HessianFeatures {
    fn default() -> Self {
        Self {
            scales: vec![1.2, 1.7, 2.4, 3.4, 4.8, 6.8],
            threshold: 2e-4,
            upright: true,
        }
    }
}

struct Level {
    sigma: f64,
    smooth: Vec<f64>,
    response: Vec<f64>,
}

/// Bilinear sample with clamped coordinates.
fn sample(values: &[f64], width: usize, height: usize, row: f64, col: f64) -> f64 {
    let r = row.clamp(0.0, (height - 1) as f64);
    let c = col.clamp(0.0, (width - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(height - 1), (c0 + 1).min(width - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    let top = values[r0 * width + c0] * (1.0 - fc) + values[r0 * width + c1] * fc;
    let bottom = values[r1 * width + c0] * (1.0 - fc) + values[r1 * width + c1] * fc;
    top * (1.0 - fr) + bottom * fr
}

fn hessian_response(smooth: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let norm = sigma.powi(4);
    let mut out = vec![0.0; smooth.len()];
    if width < 3 || height < 3 {
        return out;
    }
    for r in 1..height - 1 {
        for c in 1..width - 1 {
            let at = |dr: isize, dc: isize| {
                smooth[(r as isize + dr) as usize * width + (c as isize + dc) as usize]
            };
            let centre = at(0, 0);
            let dxx = at(0, 1) - 2.0 * centre + at(0, -1);
            let dyy = at(1, 0) - 2.0 * centre + at(-1, 0);
            let dxy = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) * 0.25;
            out[r * width + c] = (norm * (dxx * dyy - dxy * dxy)).abs();
        }
    }
    out
}

/// Vertex offset of the parabola through `(-1, a), (0, b), (1, c)`.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::EPSILON {
        0.0
    } else {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    }
}

impl HessianFeatures {
    fn build_levels(&self, img: &GrayImage) -> Vec<Level> {
        let (w, h) = (img.width(), img.height());
        self.scales
            .iter()
            .map(|&sigma| {
                let smooth = gaussian_blur(img.data(), w, h, sigma);
                let response = hessian_response(&smooth, w, h, sigma);
                Level {
                    sigma,
                    smooth,
                    response,
                }
            })
            .collect()
    }

    fn detect(&self, levels: &[Level], width: usize, height: usize) -> Vec<(usize, Keypoint)> {
        let mut found = Vec::new();
        for li in 1..levels.len().saturating_sub(1) {
            let (below, here, above) = (&levels[li - 1], &levels[li], &levels[li + 1]);
            let margin = ((2.0 * here.sigma).ceil() as usize).max(2);
            if width <= 2 * margin || height <= 2 * margin {
                continue;
            }
            for r in margin..height - margin {
                for c in margin..width - margin {
                    let v = here.response[r * width + c];
                    if v <= self.threshold {
                        continue;
                    }
                    let mut is_max = true;
                    // Plateaus keep only their first cell in (level, row, col) order.
                    'scan: for (dl, lvl) in [(-1isize, below), (0, here), (1, above)] {
                        for dr in -1isize..=1 {
                            for dc in -1isize..=1 {
                                if (dl, dr, dc) == (0, 0, 0) {
                                    continue;
                                }
                                let idx =
                                    (r as isize + dr) as usize * width + (c as isize + dc) as usize;
                                let n = lvl.response[idx];
                                if n > v || (n == v && (dl, dr, dc) < (0, 0, 0)) {
                                    is_max = false;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    if !is_max {
                        continue;
                    }
                    let resp = &here.response;
                    let dr =
                        parabolic_offset(resp[(r - 1) * width + c], v, resp[(r + 1) * width + c]);
                    let dc = parabolic_offset(resp[r * width + c - 1], v, resp[r * width + c + 1]);
                    found.push((
                        li,
                        Keypoint {
                            row: r as f64 + dr,
                            col: c as f64 + dc,
                            scale: here.sigma,
                            orientation: 0.0,
                            response: v,
                        },
                    ));
                }
            }
        }
        found.sort_by(|(_, a), (_, b)| {
            b.response
                .total_cmp(&a.response)
                .then(a.row.total_cmp(&b.row))
                .then(a.col.total_cmp(&b.col))
                .then(a.scale.total_cmp(&b.scale))
        });
        found
    }

    fn orientation(&self, level: &Level, width: usize, height: usize, kp: &Keypoint) -> f64 {
        const BINS: usize = 36;
        let s = kp.scale;
        let mut hist = [0.0f64; BINS];
        let steps = 6i32;
        for i in -steps..=steps {
            for j in -steps..=steps {
                if i * i + j * j > steps * steps {
                    continue;
                }
                let (r, c) = (kp.row + i as f64 * s, kp.col + j as f64 * s);
                let gx = sample(&level.smooth, width, height, r, c + 1.0)
                    - sample(&level.smooth, width, height, r, c - 1.0);
                let gy = sample(&level.smooth, width, height, r + 1.0, c)
                    - sample(&level.smooth, width, height, r - 1.0, c);
                let weight = (-((i * i + j * j) as f64) / (2.0 * 2.5 * 2.5)).exp();
                let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let bin = ((angle / std::f64::consts::TAU * BINS as f64) as usize).min(BINS - 1);
                hist[bin] += weight * gx.hypot(gy);
            }
        }
        let smoothed: Vec<f64> = (0..BINS)
            .map(|b| hist[(b + BINS - 1) % BINS] + 2.0 * hist[b] + hist[(b + 1) % BINS])
            .collect();
        let best = (0..BINS).fold(0, |best, b| {
            if smoothed[b] > smoothed[best] {
                b
            } else {
                best
            }
        });
        (best as f64 + 0.5) / BINS as f64 * std::f64::consts::TAU
    }

    fn describe(&self, level: &Level, width: usize, height: usize, kp: &Keypoint) -> Vec<f32> {
        let s = kp.scale;
        let (sin, cos) = kp.orientation.sin_cos();
        let mut desc = vec![0.0f64; 64];
        let weight_sigma = 3.3 * s;
        for i in 0..20 {
            for j in 0..20 {
                // (u, v) in keypoint axes: u along orientation, v perpendicular.
                let u = (j as f64 - 9.5) * s;
                let v = (i as f64 - 9.5) * s;
                let c = kp.col + u * cos - v * sin;
                let r = kp.row + u * sin + v * cos;
                let gx = 0.5
                    * (sample(&level.smooth, width, height, r, c + 1.0)
                        - sample(&level.smooth, width, height, r, c - 1.0));
                let gy = 0.5
                    * (sample(&level.smooth, width, height, r + 1.0, c)
                        - sample(&level.smooth, width, height, r - 1.0, c));
                let du = gx * cos + gy * sin;
                let dv = -gx * sin + gy * cos;
                let w = (-(u * u + v * v) / (2.0 * weight_sigma * weight_sigma)).exp();
                let cell = ((i / 5) * 4 + j / 5) * 4;
                desc[cell] += w * du;
                desc[cell + 1] += w * dv;
                desc[cell + 2] += w * du.abs();
                desc[cell + 3] += w * dv.abs();
            }
        }
        desc.into_iter().map(|v| v as f32).collect()
    }
}

impl FeatureExtractor for HessianFeatures {
    fn detect_and_describe(&self, img: &GrayImage, max_features: usize) -> KeypointSet {
        let (w, h) = (img.width(), img.height());
        let levels = self.build_levels(img);
        let mut points = Vec::new();
        let mut descriptors = Vec::new();
        for (li, mut kp) in self.detect(&levels, w, h) {
            if points.len() >= max_features {
                break;
            }
            if !self.upright {
                kp.orientation = self.orientation(&levels[li], w, h, &kp);
            }
            let desc = self.describe(&levels[li], w, h, &kp);
            if desc.iter().map(|v| v * v).sum::<f32>() > 0.0 {
                points.push(kp);
                descriptors.push(desc);
            }
        }
        KeypointSet::new(points, descriptors).expect("descriptors are nonzero and 64-d")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorMatch {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    pub pairs: Vec<DescriptorMatch>,
}

impl MatchResult {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best and second-best `(index, squared distance)` in an iterator of distances.
fn two_nearest(dists: impl Iterator<Item = f32>) -> Option<((usize, f32), Option<f32>)> {
    let mut best: Option<(usize, f32)> = None;
    let mut second: Option<f32> = None;
    for (i, d) in dists.enumerate() {
        match best {
            Some((_, bd)) if d >= bd => {
                if second.is_none_or(|s| d < s) {
                    second = Some(d);
                }
            }
            _ => {
                second = best.map(|(_, bd)| bd);
                best = Some((i, d));
            }
        }
    }
    best.map(|b| (b, second))
}

fn passes_ratio(best: f32, second: Option<f32>, ratio: f32) -> bool {
    match second {
        // squared distances: d1 < ratio * d2  <=>  d1² < ratio² d2²
        Some(s) => best < ratio * ratio * s,
        None => true,
    }
}

/// Nearest-neighbour matching with a ratio test, kept only for mutual best
/// pairs that pass the ratio test in both directions.
///
/// With a single candidate on the other side the ratio test is waived.
pub fn match_descriptors(
    a: &[Vec<f32>],
    b: &[Vec<f32>],
    ratio: f32,
) -> Result<MatchResult, VerifyError> {
    if a.is_empty() || b.is_empty() {
        return Ok(MatchResult::default());
    }
    let dim = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|d| d.len() != dim) {
        return Err(VerifyError::DimensionMismatch(dim, bad.len()));
    }
    let nb = b.len();
    let dist: Vec<f32> = a
        .iter()
        .flat_map(|da| b.iter().map(move |db| squared_distance(da, db)))
        .collect();

    let backward: Vec<Option<usize>> = (0..nb)
        .map(|j| {
            let (best, second) = two_nearest((0..a.len()).map(|i| dist[i * nb + j]))?;
            passes_ratio(best.1, second, ratio).then_some(best.0)
        })
        .collect();

    let mut pairs = Vec::new();
    for i in 0..a.len() {
        let Some(((j, d), second)) = two_nearest(dist[i * nb..(i + 1) * nb].iter().copied()) else {
            continue;
        };
        if passes_ratio(d, second, ratio) && backward[j] == Some(i) {
            pairs.push(DescriptorMatch {
                index_a: i,
                index_b: j,
                distance: d.sqrt(),
            });
        }
    }
    Ok(MatchResult { pairs })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyParams {
    /// Nearest / second-nearest distance ratio.
    pub ratio: f32,
    pub min_matches: usize,
    pub max_features: usize,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            ratio: 0.7,
            min_matches: 20,
            max_features: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopDetection {
    pub query_id: u64,
    pub match_id: u64,
    pub xi: f64,
    pub match_count: usize,
    pub accepted: bool,
}

pub fn verify_features(
    candidate: &LoopCandidate,
    query: &KeypointSet,
    matched: &KeypointSet,
    params: &VerifyParams,
) -> Result<LoopDetection, VerifyError> {
    let matches = match_descriptors(query.descriptors(), matched.descriptors(), params.ratio)?;
    let match_count = matches.count();
    Ok(LoopDetection {
        query_id: candidate.query_id,
        match_id: candidate.match_id,
        xi: candidate.xi,
        match_count,
        accepted: match_count >= params.min_matches,
    })
}

/// Extracts features from both full-resolution frames and matches them.
pub fn verify(
    candidate: &LoopCandidate,
    img_q: &GrayImage,
    img_m: &GrayImage,
    params: &VerifyParams,
    extractor: &dyn FeatureExtractor,
) -> Result<LoopDetection, VerifyError> {
    let q = extractor.detect_and_describe(img_q, params.max_features);
    let m = extractor.detect_and_describe(img_m, params.max_features);
    verify_features(candidate, &q, &m, params)
}

/// Per-frame memo of extracted features, shareable across worker threads.
#[derive(Default)]
pub struct FeatureCache {
    entries: Mutex<HashMap<u64, Arc<KeypointSet>>>,
}

impl FeatureCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached features for `frame_id`, computing them with `compute` on a miss.
    pub fn get_or_try_insert<E>(
        &self,
        frame_id: u64,
        compute: impl FnOnce() -> Result<KeypointSet, E>,
    ) -> Result<Arc<KeypointSet>, E> {
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&frame_id) {
            return Ok(Arc::clone(hit));
        }
        let fresh = Arc::new(compute()?);
        let mut entries = self.entries.lock().expect("cache lock");
        // Another worker may have raced us; keep whichever landed first.
        Ok(Arc::clone(entries.entry(frame_id).or_insert(fresh)))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evict(&self, frame_id: u64) {
        self.entries.lock().expect("cache lock").remove(&frame_id);
    }
}
