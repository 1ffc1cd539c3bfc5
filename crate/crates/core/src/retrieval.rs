//! Growing frame database and candidate retrieval by binary similarity.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::binary_content::{
    centroid_distance, similarity_from_counts, BinaryMap, Centroid, MapError,
};

/// Magic prefix of a persisted database.
pub const DB_MAGIC: &[u8; 5] = b"BLDB1";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("frame id {got} is not greater than the last stored id {last}")]
    NonMonotoneId { last: u64, got: u64 },
    #[error("map size {got:?} differs from database size {expected:?}")]
    SizeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("not a frame database (bad magic)")]
    BadMagic,
    #[error("corrupt frame database: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One stored frame, with its popcount and centroid cached.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    frame_id: u64,
    map: BinaryMap,
    pop: u64,
    center: Option<Centroid>,
    image_ref: Option<PathBuf>,
}

impl FrameRecord {
    pub fn new(frame_id: u64, map: BinaryMap, image_ref: Option<PathBuf>) -> Self {
        let pop = map.popcount();
        let center = map.centroid();
        Self {
            frame_id,
            map,
            pop,
            center,
            image_ref,
        }
    }

    pub fn frame_id(&self) -> u64 {
        self.frame_id
    }

    pub fn map(&self) -> &BinaryMap {
        &self.map
    }

    pub fn pop(&self) -> u64 {
        self.pop
    }

    pub fn center(&self) -> Option<Centroid> {
        self.center
    }

    pub fn image_ref(&self) -> Option<&Path> {
        self.image_ref.as_deref()
    }

    fn write_to<W: Write>(&self, mut out: W) -> Result<(), RetrievalError> {
        out.write_all(&self.frame_id.to_le_bytes())?;
        let path = self
            .image_ref
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.write_all(&(path.len() as u32).to_le_bytes())?;
        out.write_all(path.as_bytes())?;
        self.map.write_to(out)?;
        Ok(())
    }

    fn read_from<R: Read>(mut input: R) -> Result<Self, RetrievalError> {
        let mut buf8 = [0u8; 8];
        input.read_exact(&mut buf8)?;
        let frame_id = u64::from_le_bytes(buf8);
        let mut buf4 = [0u8; 4];
        input.read_exact(&mut buf4)?;
        let mut path = vec![0u8; u32::from_le_bytes(buf4) as usize];
        input.read_exact(&mut path)?;
        let path = String::from_utf8(path)
            .map_err(|_| RetrievalError::Corrupt(format!("image path of frame {frame_id}")))?;
        let map = BinaryMap::read_from(input)?;
        let image_ref = (!path.is_empty()).then(|| PathBuf::from(path));
        Ok(Self::new(frame_id, map, image_ref))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalParams {
    /// Minimum similarity factor for a candidate.
    pub xi_min: f64,
    /// Maximum centroid distance as a fraction of the image diagonal.
    pub centroid_max: f64,
    /// Minimum frame-id separation between query and match.
    pub temporal_gap: u64,
    pub max_candidates: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            xi_min: 0.4,
            centroid_max: 0.15,
            temporal_gap: 100,
            max_candidates: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopCandidate {
    pub query_id: u64,
    pub match_id: u64,
    pub xi: f64,
    pub centroid_dist: f64,
}

/// Cheap necessary conditions checked before computing `ξ`.
///
/// `ξ <= min(pop) / max(pop)`, so a low popcount ratio rules a pair out
/// without touching the bitmaps.
pub fn prefilter(a: &FrameRecord, b: &FrameRecord, params: &RetrievalParams) -> bool {
    let Some(dist) = centroid_distance(a.center, b.center, a.map.diagonal()) else {
        return false;
    };
    if dist > params.centroid_max {
        return false;
    }
    let (lo, hi) = if a.pop <= b.pop {
        (a.pop, b.pop)
    } else {
        (b.pop, a.pop)
    };
    lo as f64 / hi as f64 >= params.xi_min
}

/// Frames in insertion order; linear scan retrieval.
#[derive(Clone, Debug, Default)]
pub struct FrameDatabase {
    records: Vec<FrameRecord>,
}

impl FrameDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FrameRecord> {
        self.records.iter()
    }

    pub fn get(&self, frame_id: u64) -> Option<&FrameRecord> {
        self.records
            .binary_search_by_key(&frame_id, |r| r.frame_id)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn insert(&mut self, rec: FrameRecord) -> Result<(), RetrievalError> {
        if let Some(last) = self.records.last() {
            if rec.frame_id <= last.frame_id {
                return Err(RetrievalError::NonMonotoneId {
                    last: last.frame_id,
                    got: rec.frame_id,
                });
            }
            let expected = (last.map.width(), last.map.height());
            let got = (rec.map.width(), rec.map.height());
            if expected != got {
                return Err(RetrievalError::SizeMismatch { expected, got });
            }
        }
        self.records.push(rec);
        Ok(())
    }

    /// Records old enough to pair with `query_id`.
    fn admissible(&self, query_id: u64, temporal_gap: u64) -> &[FrameRecord] {
        let Some(newest) = query_id.checked_sub(temporal_gap) else {
            return &[];
        };
        let end = self.records.partition_point(|r| r.frame_id <= newest);
        let slice = &self.records[..end];
        match slice.last() {
            Some(last) if last.frame_id == query_id => &slice[..end - 1],
            _ => slice,
        }
    }

    /// Past frames matching `rec`, best `ξ` first, ties to the older frame.
    pub fn query(&self, rec: &FrameRecord, params: &RetrievalParams) -> Vec<LoopCandidate> {
        if rec.pop == 0 {
            return Vec::new();
        }
        let diag = rec.map.diagonal();
        let mut out: Vec<LoopCandidate> = self
            .admissible(rec.frame_id, params.temporal_gap)
            .iter()
            .filter(|past| {
                past.map.width() == rec.map.width() && past.map.height() == rec.map.height()
            })
            .filter(|past| prefilter(rec, past, params))
            .filter_map(|past| {
                let and = rec.map.and_count(&past.map).ok()?;
                let xi = similarity_from_counts(and, rec.pop, past.pop);
                (xi >= params.xi_min).then(|| LoopCandidate {
                    query_id: rec.frame_id,
                    match_id: past.frame_id,
                    xi,
                    centroid_dist: centroid_distance(rec.center, past.center, diag)
                        .expect("prefilter requires both centroids"),
                })
            })
            .collect();
        out.sort_by(|a, b| b.xi.total_cmp(&a.xi).then(a.match_id.cmp(&b.match_id)));
        out.truncate(params.max_candidates);
        out
    }

    /// Writes `BLDB1`, the record count as `u64` LE, then each record.
    pub fn save_to<W: Write>(&self, mut out: W) -> Result<(), RetrievalError> {
        out.write_all(DB_MAGIC)?;
        out.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for rec in &self.records {
            rec.write_to(&mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_from<R: Read>(mut input: R) -> Result<Self, RetrievalError> {
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic)?;
        if &magic != DB_MAGIC {
            return Err(RetrievalError::BadMagic);
        }
        let mut buf8 = [0u8; 8];
        input.read_exact(&mut buf8)?;
        let count = u64::from_le_bytes(buf8);
        let mut db = Self::new();
        for _ in 0..count {
            db.insert(FrameRecord::read_from(&mut input)?)?;
        }
        Ok(db)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        self.save_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        Self::load_from(BufReader::new(File::open(path)?))
    }
}
