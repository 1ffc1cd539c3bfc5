//! Online loop-closure detection: binary content → retrieval → verification.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::binary_content::BinaryMap;
use crate::dataset::{DatasetError, FrameSource};
use crate::evaluation::{StageTimer, TimingSummary};
use crate::image_io::{to_working_resolution, GrayImage, ImageError};
use crate::retrieval::{
    FrameDatabase, FrameRecord, LoopCandidate, RetrievalError, RetrievalParams,
};
use crate::saliency::{
    compute_binary_content, saliency_map, RealField, SaliencyError, SaliencyParams,
};
use crate::verification::{
    verify_features, FeatureCache, FeatureExtractor, HessianFeatures, LoopDetection, VerifyError,
    VerifyParams,
};

pub const STAGE_LOAD: &str = "load";
pub const STAGE_SALIENCY: &str = "saliency";
pub const STAGE_RETRIEVAL: &str = "retrieval";
pub const STAGE_VERIFICATION: &str = "verification";
pub const STAGE_TOTAL: &str = "total";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: expected key=value")]
    Syntax { origin: String, line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Saliency(#[from] SaliencyError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("frame {index} out of range (sequence has {len} frames)")]
    FrameOutOfRange { index: usize, len: usize },
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },
}

/// Every tunable of the detector, the evaluation and the output files.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub saliency: SaliencyParams,
    pub retrieval: RetrievalParams,
    pub verify: VerifyParams,
    pub hessian_threshold: f64,
    pub manifest: Option<PathBuf>,
    /// Longer side of the saliency working resolution.
    pub working_long_side: usize,
    pub d_gt: f64,
    pub min_gap: usize,
    pub frame_tol: usize,
    pub detections_out: PathBuf,
    pub report_out: PathBuf,
    pub timing_out: PathBuf,
    pub debug_dir: PathBuf,
    pub db_out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            saliency: SaliencyParams::default(),
            retrieval: RetrievalParams::default(),
            verify: VerifyParams::default(),
            hessian_threshold: HessianFeatures::default().threshold,
            manifest: None,
            working_long_side: 128,
            d_gt: 10.0,
            min_gap: 100,
            frame_tol: 3,
            detections_out: "detections.csv".into(),
            report_out: "report.csv".into(),
            timing_out: "timing.csv".into(),
            debug_dir: ".".into(),
            db_out: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl PipelineConfig {
    /// Keys accepted by [`PipelineConfig::set`], in documentation order.
    pub const KEYS: &'static [&'static str] = &[
        "avg_filter_n",
        "gaussian_sigma",
        "gamma",
        "log_epsilon",
        "xi_min",
        "centroid_max",
        "temporal_gap",
        "max_candidates",
        "ratio",
        "min_matches",
        "max_features",
        "hessian_threshold",
        "manifest",
        "working_long_side",
        "d_gt",
        "min_gap",
        "frame_tol",
        "detections_out",
        "report_out",
        "timing_out",
        "debug_dir",
        "db_out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "avg_filter_n" => self.saliency.avg_filter_n = parse_value(key, v)?,
            "gaussian_sigma" => self.saliency.gaussian_sigma = parse_value(key, v)?,
            "gamma" => self.saliency.gamma = parse_value(key, v)?,
            "log_epsilon" => self.saliency.log_epsilon = parse_value(key, v)?,
            "xi_min" => self.retrieval.xi_min = parse_value(key, v)?,
            "centroid_max" => self.retrieval.centroid_max = parse_value(key, v)?,
            "temporal_gap" => self.retrieval.temporal_gap = parse_value(key, v)?,
            "max_candidates" => self.retrieval.max_candidates = parse_value(key, v)?,
            "ratio" => self.verify.ratio = parse_value(key, v)?,
            "min_matches" => self.verify.min_matches = parse_value(key, v)?,
            "max_features" => self.verify.max_features = parse_value(key, v)?,
            "hessian_threshold" => self.hessian_threshold = parse_value(key, v)?,
            "manifest" => self.manifest = Some(v.into()),
            "working_long_side" => self.working_long_side = parse_value(key, v)?,
            "d_gt" => self.d_gt = parse_value(key, v)?,
            "min_gap" => self.min_gap = parse_value(key, v)?,
            "frame_tol" => self.frame_tol = parse_value(key, v)?,
            "detections_out" => self.detections_out = v.into(),
            "report_out" => self.report_out = v.into(),
            "timing_out" => self.timing_out = v.into(),
            "debug_dir" => self.debug_dir = v.into(),
            "db_out" => self.db_out = Some(v.into()),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.to_string(),
                line: n + 1,
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Serializes every field as a loadable config file.
    pub fn to_text(&self) -> String {
        let s = &self.saliency;
        let r = &self.retrieval;
        let v = &self.verify;
        let mut out = String::new();
        let mut kv = |k: &str, val: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k} = {val}");
        };
        kv("avg_filter_n", &s.avg_filter_n);
        kv("gaussian_sigma", &s.gaussian_sigma);
        kv("gamma", &s.gamma);
        kv("log_epsilon", &s.log_epsilon);
        kv("xi_min", &r.xi_min);
        kv("centroid_max", &r.centroid_max);
        kv("temporal_gap", &r.temporal_gap);
        kv("max_candidates", &r.max_candidates);
        kv("ratio", &v.ratio);
        kv("min_matches", &v.min_matches);
        kv("max_features", &v.max_features);
        kv("hessian_threshold", &self.hessian_threshold);
        if let Some(m) = &self.manifest {
            kv("manifest", &m.display());
        }
        kv("working_long_side", &self.working_long_side);
        kv("d_gt", &self.d_gt);
        kv("min_gap", &self.min_gap);
        kv("frame_tol", &self.frame_tol);
        kv("detections_out", &self.detections_out.display());
        kv("report_out", &self.report_out.display());
        kv("timing_out", &self.timing_out.display());
        kv("debug_dir", &self.debug_dir.display());
        if let Some(db) = &self.db_out {
            kv("db_out", &db.display());
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        self.saliency
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let r = &self.retrieval;
        if !(r.xi_min > 0.0 && r.xi_min <= 1.0) {
            return invalid("xi_min must lie in (0, 1]");
        }
        if !(r.centroid_max > 0.0 && r.centroid_max <= 1.0) {
            return invalid("centroid_max must lie in (0, 1]");
        }
        if r.max_candidates == 0 {
            return invalid("max_candidates must be positive");
        }
        let v = &self.verify;
        if !(v.ratio > 0.0 && v.ratio < 1.0) {
            return invalid("ratio must lie in (0, 1)");
        }
        if v.min_matches == 0 || v.max_features == 0 {
            return invalid("min_matches and max_features must be positive");
        }
        if self.hessian_threshold.is_nan() || self.hessian_threshold < 0.0 {
            return invalid("hessian_threshold must be >= 0");
        }
        if self.working_long_side < 2 {
            return invalid("working_long_side must be >= 2");
        }
        if self.d_gt.is_nan() || self.d_gt <= 0.0 {
            return invalid("d_gt must be > 0");
        }
        if self.min_gap == 0 {
            return invalid("min_gap must be >= 1");
        }
        Ok(())
    }

    pub fn extractor(&self) -> HessianFeatures {
        HessianFeatures {
            threshold: self.hessian_threshold,
            ..HessianFeatures::default()
        }
    }
}

/// Result of one pass over a sequence.
#[derive(Debug)]
pub struct DetectionRun {
    /// Accepted detections in frame order.
    pub detections: Vec<LoopDetection>,
    /// Every verified candidate, accepted or not.
    pub verified: Vec<LoopDetection>,
    pub timing: TimingSummary,
    pub database: FrameDatabase,
    pub frames: usize,
}

/// Binary content of one full-resolution frame.
pub fn frame_binary_content(
    img: &GrayImage,
    config: &PipelineConfig,
) -> Result<BinaryMap, PipelineError> {
    let small = to_working_resolution(img, config.working_long_side)?;
    Ok(compute_binary_content(&small, &config.saliency)?)
}

/// Processes frames strictly in order. Frame `t` is queried against frames
/// `0..t` and inserted afterwards.
pub fn run_detection(
    source: &dyn FrameSource,
    config: &PipelineConfig,
    extractor: &dyn FeatureExtractor,
    mut progress: impl FnMut(usize, usize, &[LoopDetection]),
) -> Result<DetectionRun, PipelineError> {
    config.validate()?;
    let timer = StageTimer::new();
    let cache = FeatureCache::new();
    let mut db = FrameDatabase::new();
    let mut detections = Vec::new();
    let mut verified = Vec::new();
    let n = source.len();

    for t in 0..n {
        let frame_start = Instant::now();
        let (img, _) = timer.time_stage(STAGE_LOAD, || source.load(t));
        let img = img?;
        let (map, _) = timer.time_stage(STAGE_SALIENCY, || frame_binary_content(&img, config));
        let rec = FrameRecord::new(t as u64, map?, source.path(t));
        let (candidates, _) =
            timer.time_stage(STAGE_RETRIEVAL, || db.query(&rec, &config.retrieval));
        let (results, _) = timer.time_stage(STAGE_VERIFICATION, || {
            verify_candidates(&candidates, &img, source, config, extractor, &cache)
        });
        let results = results?;
        let accepted: Vec<LoopDetection> = results.iter().copied().filter(|d| d.accepted).collect();
        db.insert(rec)?;
        timer.record(STAGE_TOTAL, frame_start.elapsed().as_secs_f64() * 1e3);
        progress(t, n, &accepted);
        verified.extend(results);
        detections.extend(accepted);
    }

    Ok(DetectionRun {
        detections,
        verified,
        timing: timer.summary(),
        database: db,
        frames: n,
    })
}

fn verify_candidates(
    candidates: &[LoopCandidate],
    query_img: &GrayImage,
    source: &dyn FrameSource,
    config: &PipelineConfig,
    extractor: &dyn FeatureExtractor,
    cache: &FeatureCache,
) -> Result<Vec<LoopDetection>, PipelineError> {
    let gap = config.retrieval.temporal_gap;
    let admissible: Vec<&LoopCandidate> = candidates
        .iter()
        .filter(|c| c.match_id + gap <= c.query_id && c.match_id != c.query_id)
        .collect();
    if admissible.is_empty() {
        return Ok(Vec::new());
    }
    let max_features = config.verify.max_features;
    let query_id = admissible[0].query_id;
    let query_feats = cache.get_or_try_insert(query_id, || {
        Ok::<_, PipelineError>(extractor.detect_and_describe(query_img, max_features))
    })?;
    admissible
        .par_iter()
        .map(|cand| {
            let match_feats = cache.get_or_try_insert(cand.match_id, || {
                let img = source.load(cand.match_id as usize)?;
                Ok::<_, PipelineError>(extractor.detect_and_describe(&img, max_features))
            })?;
            Ok(verify_features(
                cand,
                &query_feats,
                &match_feats,
                &config.verify,
            )?)
        })
        .collect()
}

pub const DETECTIONS_HEADER: &str = "query_id,match_id,xi,match_count";

pub fn detections_csv(detections: &[LoopDetection]) -> String {
    let mut out = format!("{DETECTIONS_HEADER}\n");
    for d in detections {
        let _ = writeln!(
            out,
            "{},{},{:.6},{}",
            d.query_id, d.match_id, d.xi, d.match_count
        );
    }
    out
}

/// A row of a detections file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionRow {
    pub query_id: usize,
    pub match_id: usize,
    pub xi: f64,
    pub match_count: usize,
}

pub fn parse_detections_csv(text: &str, origin: &str) -> Result<Vec<DetectionRow>, PipelineError> {
    let err = |line: usize, msg: &str| PipelineError::Csv {
        path: origin.to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == DETECTIONS_HEADER => {}
        _ => return Err(err(1, "missing detections header")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [q, m, xi, count] = fields[..] else {
            return Err(err(n + 1, "expected 4 fields"));
        };
        rows.push(DetectionRow {
            query_id: q.parse().map_err(|_| err(n + 1, "bad query_id"))?,
            match_id: m.parse().map_err(|_| err(n + 1, "bad match_id"))?,
            xi: xi.parse().map_err(|_| err(n + 1, "bad xi"))?,
            match_count: count.parse().map_err(|_| err(n + 1, "bad match_count"))?,
        });
    }
    Ok(rows)
}

/// Saliency map and binary content of frame `index` at working resolution.
pub fn saliency_debug(
    source: &dyn FrameSource,
    config: &PipelineConfig,
    index: usize,
) -> Result<(RealField, BinaryMap), PipelineError> {
    if index >= source.len() {
        return Err(PipelineError::FrameOutOfRange {
            index,
            len: source.len(),
        });
    }
    let img = to_working_resolution(&source.load(index)?, config.working_long_side)?;
    let s = saliency_map(&img, &config.saliency)?;
    let map = crate::saliency::binarize(&s, config.saliency.gamma);
    Ok((s, map))
}

/// 0/255 rendering of a binary map.
pub fn binary_map_to_luma8(map: &BinaryMap) -> image::GrayImage {
    image::GrayImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        image::Luma([if map.get(y as usize, x as usize) {
            255
        } else {
            0
        }])
    })
}

/// Single-threaded pairwise `ξ` evaluations per second over `maps`, measured
/// for at least `min_duration`.
pub fn xi_throughput(maps: &[BinaryMap], min_duration: Duration) -> f64 {
    assert!(maps.len() >= 2, "need at least two maps");
    let start = Instant::now();
    let mut comparisons = 0u64;
    let mut sink = 0.0;
    while start.elapsed() < min_duration {
        for (i, a) in maps.iter().enumerate() {
            for b in &maps[i + 1..] {
                sink += a.similarity(b).unwrap_or(0.0);
                comparisons += 1;
            }
        }
    }
    std::hint::black_box(sink);
    comparisons as f64 / start.elapsed().as_secs_f64()
}
