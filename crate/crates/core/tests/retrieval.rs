mod common;

use binloop::binary_content::centroid_distance;
use binloop::retrieval::*;
use binloop::BinaryMap;
use common::*;
use rand::Rng;

#[test]
fn popcount_ratio_rejections_are_sound() {
    // Every 3x3 map against every other: 512 x 512 pairs.
    let params = RetrievalParams {
        xi_min: 0.4,
        centroid_max: 1.0,
        temporal_gap: 0,
        max_candidates: 1,
    };
    let maps: Vec<FrameRecord> = (0u32..512)
        .map(|bits| {
            FrameRecord::new(
                bits as u64,
                BinaryMap::from_fn(3, 3, |r, c| bits >> (r * 3 + c) & 1 == 1).unwrap(),
                None,
            )
        })
        .collect();
    let mut rejected = 0;
    for a in &maps {
        for b in &maps {
            if !prefilter(a, b, &params) {
                rejected += 1;
                assert!(a.map().similarity(b.map()).unwrap() < params.xi_min);
            }
        }
    }
    assert!(rejected > 0);
}

fn brute_force(db: &[FrameRecord], q: &FrameRecord, params: &RetrievalParams) -> Vec<(u64, f64)> {
    let mut out: Vec<(u64, f64)> = db
        .iter()
        .filter(|r| {
            r.frame_id() + params.temporal_gap <= q.frame_id() && r.frame_id() != q.frame_id()
        })
        .filter_map(|r| {
            let xi = q.map().similarity(r.map()).unwrap();
            let dist =
                centroid_distance(q.map().centroid(), r.map().centroid(), q.map().diagonal())?;
            (xi >= params.xi_min && dist <= params.centroid_max).then_some((r.frame_id(), xi))
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

#[test]
fn query_equals_brute_force_without_gap() {
    let mut r = rng(17);
    let params = RetrievalParams {
        xi_min: 1e-6,
        centroid_max: 1.0,
        temporal_gap: 0,
        max_candidates: usize::MAX,
    };
    let mut db = FrameDatabase::new();
    let mut recs = Vec::new();
    for id in 0..60 {
        let density = r.random_range(0.0..0.4);
        let rec = FrameRecord::new(id, random_map(&mut r, 24, 16, density), None);
        db.insert(rec.clone()).unwrap();
        recs.push(rec);
    }
    let q = FrameRecord::new(60, random_map(&mut r, 24, 16, 0.3), None);
    let got: Vec<(u64, f64)> = db
        .query(&q, &params)
        .iter()
        .map(|c| (c.match_id, c.xi))
        .collect();
    assert_eq!(got, brute_force(&recs, &q, &params));
    assert!(!got.is_empty());
}

#[test]
fn candidates_respect_invariants() {
    let mut r = rng(23);
    let params = RetrievalParams {
        xi_min: 0.3,
        centroid_max: 0.2,
        temporal_gap: 7,
        max_candidates: 4,
    };
    let mut db = FrameDatabase::new();
    let base = random_map(&mut r, 32, 24, 0.2);
    for id in 0..40u64 {
        let noisy = BinaryMap::from_fn(32, 24, |row, col| base.get(row, col) ^ r.random_bool(0.05))
            .unwrap();
        db.insert(FrameRecord::new(id, noisy, None)).unwrap();
    }
    let q = FrameRecord::new(40, base, None);
    let cands = db.query(&q, &params);
    assert_eq!(cands.len(), 4);
    for c in &cands {
        assert!(c.match_id + params.temporal_gap <= c.query_id);
        assert!(c.xi >= params.xi_min);
        assert!(c.centroid_dist <= params.centroid_max);
    }
    assert!(cands
        .windows(2)
        .all(|w| w[0].xi > w[1].xi || (w[0].xi == w[1].xi && w[0].match_id < w[1].match_id)));
}

#[test]
fn database_file_roundtrip() {
    let mut r = rng(2);
    let mut db = FrameDatabase::new();
    for id in [0u64, 3, 9] {
        db.insert(FrameRecord::new(
            id,
            random_map(&mut r, 65, 3, 0.5),
            Some(format!("img/{id:06}.png").into()),
        ))
        .unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frames.bldb");
    db.save(&path).unwrap();
    let back = FrameDatabase::load(&path).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in db.iter().zip(back.iter()) {
        assert_eq!(a, b);
    }
    let bytes = std::fs::read(&path).unwrap();
    assert!(FrameDatabase::load_from(&bytes[..bytes.len() - 3]).is_err());
}
