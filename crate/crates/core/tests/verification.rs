mod common;

use binloop::verification::*;
use binloop::{GrayImage, LoopCandidate};
use common::*;

fn candidate() -> LoopCandidate {
    LoopCandidate {
        query_id: 400,
        match_id: 12,
        xi: 0.6,
        centroid_dist: 0.02,
    }
}

fn checkerboard(squares: usize, side: usize) -> GrayImage {
    GrayImage::from_fn(squares * side, squares * side, |r, c| {
        if (r / side + c / side).is_multiple_of(2) {
            0.8
        } else {
            0.2
        }
    })
    .unwrap()
}

#[test]
fn checkerboard_corners_are_detected() {
    let side = 32;
    let img = checkerboard(4, side);
    let set = HessianFeatures::default().detect_and_describe(&img, 500);
    for i in 1..4 {
        for j in 1..4 {
            let (cr, cc) = ((i * side) as f64 - 0.5, (j * side) as f64 - 0.5);
            // corner region: a quarter square around the corner
            let reach = side as f64 / 4.0;
            let near = set
                .points()
                .iter()
                .filter(|p| (p.row - cr).abs() <= reach && (p.col - cc).abs() <= reach)
                .count();
            assert!(near >= 1, "no keypoint near interior corner ({i},{j})");
        }
    }
}

#[test]
fn extraction_is_deterministic() {
    let mut r = rng(4);
    let img = random_scene(&mut r, 200, 150);
    let ext = HessianFeatures::default();
    assert_eq!(
        ext.detect_and_describe(&img, 300),
        ext.detect_and_describe(&img, 300)
    );
    let rotated = HessianFeatures {
        upright: false,
        ..HessianFeatures::default()
    };
    let a = rotated.detect_and_describe(&img, 300);
    assert_eq!(a, rotated.detect_and_describe(&img, 300));
    for d in a.descriptors() {
        let norm: f32 = d.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-4);
        assert_eq!(d.len(), 64);
    }
}

#[test]
fn identical_images_verify() {
    let mut r = rng(6);
    let img = random_scene(&mut r, 256, 192);
    let params = VerifyParams::default();
    let det = verify(
        &candidate(),
        &img,
        &img,
        &params,
        &HessianFeatures::default(),
    )
    .unwrap();
    assert!(det.accepted, "only {} matches", det.match_count);
}

#[test]
fn wraparound_shift_verifies() {
    let ext = HessianFeatures::default();
    let params = VerifyParams::default();
    for seed in [1, 2, 3] {
        let mut r = rng(seed);
        let img = random_scene(&mut r, 256, 192);
        let moved = shifted_wrap(&img, 0, 10);
        let fa = ext.detect_and_describe(&img, params.max_features);
        let fb = ext.detect_and_describe(&moved, params.max_features);
        let det = verify_features(&candidate(), &fa, &fb, &params).unwrap();
        assert!(det.accepted, "seed {seed}: {} matches", det.match_count);
        assert!(
            2 * det.match_count >= fa.len().min(fb.len()),
            "seed {seed}: {} of {}/{}",
            det.match_count,
            fa.len(),
            fb.len()
        );
    }
}

#[test]
fn unrelated_scenes_do_not_verify() {
    let ext = HessianFeatures::default();
    let params = VerifyParams::default();
    let mut r = rng(10);
    let scenes: Vec<GrayImage> = (0..6).map(|_| random_scene(&mut r, 256, 192)).collect();
    let feats: Vec<KeypointSet> = scenes
        .iter()
        .map(|s| ext.detect_and_describe(s, 500))
        .collect();
    for i in 0..feats.len() {
        for j in 0..i {
            let det = verify_features(&candidate(), &feats[i], &feats[j], &params).unwrap();
            assert!(
                !det.accepted,
                "scenes {i},{j} matched {} times",
                det.match_count
            );
        }
    }
}

#[test]
fn match_count_is_symmetric() {
    let ext = HessianFeatures::default();
    let mut r = rng(12);
    let a = random_scene(&mut r, 200, 160);
    let b = shifted_noisy(&a, 3, -4, 0.02, &mut r);
    let c = random_scene(&mut r, 200, 160);
    let fa = ext.detect_and_describe(&a, 500);
    for other in [&b, &c] {
        let fo = ext.detect_and_describe(other, 500);
        let ab = match_descriptors(fa.descriptors(), fo.descriptors(), 0.7).unwrap();
        let ba = match_descriptors(fo.descriptors(), fa.descriptors(), 0.7).unwrap();
        assert_eq!(ab.count(), ba.count());
        let mut fwd: Vec<(usize, usize)> =
            ab.pairs.iter().map(|p| (p.index_a, p.index_b)).collect();
        let mut bwd: Vec<(usize, usize)> =
            ba.pairs.iter().map(|p| (p.index_b, p.index_a)).collect();
        fwd.sort();
        bwd.sort();
        assert_eq!(fwd, bwd);
    }
}

#[test]
fn matches_are_one_to_one() {
    let ext = HessianFeatures::default();
    let mut r = rng(13);
    let a = random_scene(&mut r, 200, 160);
    let b = shifted_noisy(&a, 1, 1, 0.01, &mut r);
    let m = match_descriptors(
        ext.detect_and_describe(&a, 500).descriptors(),
        ext.detect_and_describe(&b, 500).descriptors(),
        0.8,
    )
    .unwrap();
    let mut used_a = std::collections::HashSet::new();
    let mut used_b = std::collections::HashSet::new();
    for p in &m.pairs {
        assert!(used_a.insert(p.index_a) && used_b.insert(p.index_b));
    }
}

#[test]
fn raising_min_matches_never_accepts_more() {
    let ext = HessianFeatures::default();
    let mut r = rng(14);
    let a = random_scene(&mut r, 256, 192);
    let b = shifted_noisy(&a, 2, 2, 2.0 / 255.0, &mut r);
    let (fa, fb) = (
        ext.detect_and_describe(&a, 500),
        ext.detect_and_describe(&b, 500),
    );
    let mut previously_rejected = false;
    for min_matches in [1, 5, 10, 20, 40, 80, 160, 320] {
        let params = VerifyParams {
            min_matches,
            ..VerifyParams::default()
        };
        let det = verify_features(&candidate(), &fa, &fb, &params).unwrap();
        assert_eq!(det.accepted, det.match_count >= min_matches);
        assert!(!(previously_rejected && det.accepted));
        previously_rejected |= !det.accepted;
    }
    assert!(previously_rejected);
}
