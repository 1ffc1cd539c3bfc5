//! Image sequences, pose files and ground-truth loop pairs.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::image_io::{load_grayscale, GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{0}: file contains no poses")]
    EmptyFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseFormat {
    /// 12 values per line: a row-major 3x4 `[R | t]` matrix.
    Kitti,
    /// `timestamp tx ty tz qx qy qz qw`.
    Tum,
}

impl FromStr for PoseFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kitti" => Ok(PoseFormat::Kitti),
            "tum" => Ok(PoseFormat::Tum),
            other => Err(format!(
                "unknown pose format `{other}` (expected kitti or tum)"
            )),
        }
    }
}

/// Camera positions in meters, one per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Writes identity-rotation poses in KITTI layout.
    pub fn write_kitti<W: Write>(&self, mut out: W) -> io::Result<()> {
        for [x, y, z] in &self.positions {
            writeln!(out, "1 0 0 {x} 0 1 0 {y} 0 0 1 {z}")?;
        }
        Ok(())
    }

    pub fn save_kitti(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_kitti(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| DatasetError::io(path, e))
    }
}

/// Parses pose text. `origin` names the source in error messages.
pub fn parse_poses(
    text: &str,
    format: PoseFormat,
    origin: &str,
) -> Result<Trajectory, DatasetError> {
    let (expected, idx) = match format {
        PoseFormat::Kitti => (12, [3, 7, 11]),
        PoseFormat::Tum => (8, [1, 2, 3]),
    };
    let mut positions = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (format == PoseFormat::Tum && line.starts_with('#')) {
            continue;
        }
        let parse_err = |msg: String| DatasetError::Parse {
            path: origin.to_string(),
            line: n + 1,
            msg,
        };
        let values = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("`{tok}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != expected {
            return Err(parse_err(format!(
                "expected {expected} values, found {}",
                values.len()
            )));
        }
        positions.push([values[idx[0]], values[idx[1]], values[idx[2]]]);
    }
    if positions.is_empty() {
        return Err(DatasetError::EmptyFile(origin.to_string()));
    }
    Ok(Trajectory { positions })
}

pub fn load_poses(path: impl AsRef<Path>, format: PoseFormat) -> Result<Trajectory, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_poses(&text, format, &path.display().to_string())
}

/// Reference loop pairs `(i, j)`, `i > j`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruthPairs {
    pub pairs: BTreeSet<(usize, usize)>,
}

impl GroundTruthPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pairs.contains(&(i, j))
    }
}

impl FromIterator<(usize, usize)> for GroundTruthPairs {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

/// All `(i, j)` with `i - j >= min_gap` whose positions are within `d_gt`.
pub fn ground_truth_pairs(traj: &Trajectory, d_gt: f64, min_gap: usize) -> GroundTruthPairs {
    let limit = d_gt * d_gt;
    let p = &traj.positions;
    let mut pairs = BTreeSet::new();
    for i in min_gap..p.len() {
        let [xi, yi, zi] = p[i];
        for (j, &[xj, yj, zj]) in p[..=i - min_gap].iter().enumerate() {
            let (dx, dy, dz) = (xi - xj, yi - yj, zi - zj);
            if dx * dx + dy * dy + dz * dz <= limit {
                pairs.insert((i, j));
            }
        }
    }
    GroundTruthPairs { pairs }
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "pgm"];

/// Image files of a directory in lexicographic filename order.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, DatasetError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| DatasetError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Contents of a dataset manifest (`key=value` lines).
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub image_dir: PathBuf,
    pub pose_file: Option<PathBuf>,
    pub pose_format: PoseFormat,
}

impl Manifest {
    /// Relative paths are resolved against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, &path.display().to_string())
    }

    pub fn parse(text: &str, base: &Path, origin: &str) -> Result<Self, DatasetError> {
        let err = |msg: String| DatasetError::Manifest {
            path: origin.to_string(),
            msg,
        };
        let mut image_dir = None;
        let mut pose_file = None;
        let mut pose_format = PoseFormat::Kitti;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected key=value", n + 1)))?;
            let value = value.trim();
            match key.trim() {
                "image_dir" => image_dir = Some(base.join(value)),
                "pose_file" => pose_file = Some(base.join(value)),
                "pose_format" => {
                    pose_format = value
                        .parse()
                        .map_err(|e| err(format!("line {}: {e}", n + 1)))?
                }
                other => return Err(err(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        Ok(Self {
            image_dir: image_dir.ok_or_else(|| err("missing image_dir".into()))?,
            pose_file,
            pose_format,
        })
    }
}

/// A sequence of frames that can be loaded by index.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full-resolution grayscale frame `index`.
    fn load(&self, index: usize) -> Result<GrayImage, DatasetError>;

    /// Path of frame `index`, when it lives on disk.
    fn path(&self, _index: usize) -> Option<PathBuf> {
        None
    }
}

/// Frames listed from an image directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Vec<PathBuf>,
}

impl Dataset {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let manifest = Manifest::load(manifest_path)?;
        let images = list_images(&manifest.image_dir)?;
        Ok(Self { manifest, images })
    }

    /// Poses named by the manifest; their count must equal the frame count.
    pub fn trajectory(&self) -> Result<Trajectory, DatasetError> {
        let pose_file = self
            .manifest
            .pose_file
            .as_ref()
            .ok_or_else(|| DatasetError::Manifest {
                path: self.manifest.image_dir.display().to_string(),
                msg: "no pose_file given".into(),
            })?;
        let traj = load_poses(pose_file, self.manifest.pose_format)?;
        if traj.len() != self.images.len() {
            return Err(DatasetError::Parse {
                path: pose_file.display().to_string(),
                line: traj.len(),
                msg: format!("{} poses for {} frames", traj.len(), self.images.len()),
            });
        }
        Ok(traj)
    }
}

impl FrameSource for Dataset {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn load(&self, index: usize) -> Result<GrayImage, DatasetError> {
        Ok(load_grayscale(&self.images[index])?)
    }

    fn path(&self, index: usize) -> Option<PathBuf> {
        self.images.get(index).cloned()
    }
}

/// In-memory frames, mostly for tests and synthetic sequences.
impl FrameSource for Vec<GrayImage> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<GrayImage, DatasetError> {
        Ok(self[index].clone())
    }
}
