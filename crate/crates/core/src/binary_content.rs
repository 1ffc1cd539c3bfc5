//! Bit-packed binary salient-region maps and the comparison kernels used
//! for fast retrieval.
//!
//! Rows are packed into `u64` words, least significant bit first, and each
//! row starts on a fresh word. Bits past the row width are always zero so
//! that whole-word `AND` + `count_ones` never over-counts.

use std::io::{self, Read, Write};

use thiserror::Error;

const WORD_BITS: usize = 64;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("binary map dimensions must be at least 1x1, got {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("map size mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("expected {expected} cells, got {got}")]
    BufferSize { expected: usize, got: usize },
    #[error("corrupt map: nonzero padding bits in row {row}")]
    DirtyPadding { row: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The binary content `O(x)` of one frame.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMap {
    width: usize,
    height: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("popcount", &self.popcount())
            .finish()
    }
}

impl BinaryMap {
    pub fn zeros(width: usize, height: usize) -> Result<Self, MapError> {
        if width == 0 || height == 0 {
            return Err(MapError::InvalidDimensions { width, height });
        }
        let words_per_row = width.div_ceil(WORD_BITS);
        Ok(Self {
            width,
            height,
            words_per_row,
            words: vec![0; words_per_row * height],
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MapError> {
        let mut map = Self::zeros(width, height)?;
        for r in 0..height {
            let row = &mut map.words[r * map.words_per_row..(r + 1) * map.words_per_row];
            for c in 0..width {
                if f(r, c) {
                    row[c / WORD_BITS] |= 1 << (c % WORD_BITS);
                }
            }
        }
        Ok(map)
    }

    /// Packs a row-major boolean buffer.
    pub fn from_bools(width: usize, height: usize, cells: &[bool]) -> Result<Self, MapError> {
        if cells.len() != width * height {
            return Err(MapError::BufferSize {
                expected: width * height,
                got: cells.len(),
            });
        }
        Self::from_fn(width, height, |r, c| cells[r * width + c])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    /// Raw packed words, `words_per_row` per row.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        assert!(row < self.height && col < self.width, "cell out of bounds");
        self.words[row * self.words_per_row + col / WORD_BITS] >> (col % WORD_BITS) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        assert!(row < self.height && col < self.width, "cell out of bounds");
        let word = &mut self.words[row * self.words_per_row + col / WORD_BITS];
        let mask = 1u64 << (col % WORD_BITS);
        if value {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    /// Mask of valid bits for the last word of each row.
    fn tail_mask(&self) -> u64 {
        match self.width % WORD_BITS {
            0 => u64::MAX,
            rem => (1u64 << rem) - 1,
        }
    }

    /// True when every padding bit is clear.
    pub fn padding_is_clean(&self) -> bool {
        let mask = self.tail_mask();
        self.words
            .chunks_exact(self.words_per_row)
            .all(|row| row[self.words_per_row - 1] & !mask == 0)
    }

    /// Number of set bits, `F(O)`.
    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn check_same_size(&self, other: &Self) -> Result<(), MapError> {
        if self.width != other.width || self.height != other.height {
            return Err(MapError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// `F(O1 & O2)`, computed word-wise without materializing the intersection.
    pub fn and_count(&self, other: &Self) -> Result<u64, MapError> {
        self.check_same_size(other)?;
        Ok(and_count_words(&self.words, &other.words))
    }

    /// Similarity factor `ξ = F(O1 & O2) / max(F(O1), F(O2))`.
    ///
    /// Two empty maps, or an empty map against anything, score 0.
    pub fn similarity(&self, other: &Self) -> Result<f64, MapError> {
        self.check_same_size(other)?;
        Ok(similarity_from_counts(
            and_count_words(&self.words, &other.words),
            self.popcount(),
            other.popcount(),
        ))
    }

    /// Mean `(row, col)` of the set bits, or `None` for an empty map.
    pub fn centroid(&self) -> Option<Centroid> {
        let mut count = 0u64;
        let mut row_sum = 0u64;
        let mut col_sum = 0u64;
        for (r, row) in self.words.chunks_exact(self.words_per_row).enumerate() {
            for (wi, &word) in row.iter().enumerate() {
                let n = word.count_ones() as u64;
                if n == 0 {
                    continue;
                }
                count += n;
                row_sum += r as u64 * n;
                let mut bits = word;
                while bits != 0 {
                    col_sum += (wi * WORD_BITS + bits.trailing_zeros() as usize) as u64;
                    bits &= bits - 1;
                }
            }
        }
        (count > 0).then(|| Centroid {
            row: row_sum as f64 / count as f64,
            col: col_sum as f64 / count as f64,
        })
    }

    /// Length of the image diagonal in pixels.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(c, r)).expect("nonzero dimensions")
    }

    /// Iterator over `(row, col)` of set bits in row-major order.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.words
            .chunks_exact(self.words_per_row)
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter().enumerate().flat_map(move |(wi, &word)| {
                    let mut bits = word;
                    std::iter::from_fn(move || {
                        if bits == 0 {
                            return None;
                        }
                        let c = wi * WORD_BITS + bits.trailing_zeros() as usize;
                        bits &= bits - 1;
                        Some((r, c))
                    })
                })
            })
    }

    /// Writes `width`, `height` as little-endian `u32` followed by the packed
    /// rows as little-endian `u64` words.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), MapError> {
        out.write_all(&(self.width as u32).to_le_bytes())?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        for w in &self.words {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, MapError> {
        let mut buf4 = [0u8; 4];
        input.read_exact(&mut buf4)?;
        let width = u32::from_le_bytes(buf4) as usize;
        input.read_exact(&mut buf4)?;
        let height = u32::from_le_bytes(buf4) as usize;
        let mut map = Self::zeros(width, height)?;
        let mut buf8 = [0u8; 8];
        for w in &mut map.words {
            input.read_exact(&mut buf8)?;
            *w = u64::from_le_bytes(buf8);
        }
        let mask = map.tail_mask();
        if let Some(row) = map
            .words
            .chunks_exact(map.words_per_row)
            .position(|row| row[map.words_per_row - 1] & !mask != 0)
        {
            return Err(MapError::DirtyPadding { row });
        }
        Ok(map)
    }
}

#[inline]
fn and_count_words(a: &[u64], b: &[u64]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x & y).count_ones() as u64)
        .sum()
}

/// `ξ` from precomputed counts.
#[inline]
pub fn similarity_from_counts(and_count: u64, pop_a: u64, pop_b: u64) -> f64 {
    let denom = pop_a.max(pop_b);
    if denom == 0 {
        0.0
    } else {
        and_count as f64 / denom as f64
    }
}

/// The binary image center `M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centroid {
    pub row: f64,
    pub col: f64,
}

/// Euclidean distance between two centroids divided by `diag`.
///
/// `None` when either centroid is undefined.
pub fn centroid_distance(a: Option<Centroid>, b: Option<Centroid>, diag: f64) -> Option<f64> {
    let (a, b) = (a?, b?);
    Some((a.row - b.row).hypot(a.col - b.col) / diag)
}
