//! Precision / recall scoring against ground truth, and per-stage timing.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use crate::dataset::GroundTruthPairs;

/// Placeholder written for undefined percentages.
pub const UNDEFINED: &str = "NA";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// `None` when there is no ground truth.
    pub recall_rate: Option<f64>,
    /// `None` when nothing was detected.
    pub precision: Option<f64>,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Ground-truth pairs claimed by some detection.
    pub truth_hits: usize,
    pub total_truth: usize,
    pub mean_time_ms: Option<f64>,
    pub per_stage_ms: BTreeMap<String, f64>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{v:.3}"))
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "tp,fp,total_truth,recall_pct,precision_pct,mean_time_ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.true_positives,
            self.false_positives,
            self.total_truth,
            pct(self.recall_rate),
            pct(self.precision),
            pct(self.mean_time_ms),
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn with_timing(mut self, timer: &TimingSummary, total_stage: &str) -> Self {
        self.mean_time_ms = timer.mean_ms(total_stage);
        self.per_stage_ms = timer.means();
        self
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "true positives   {}", self.true_positives)?;
        writeln!(f, "false positives  {}", self.false_positives)?;
        writeln!(
            f,
            "truth pairs hit  {} / {}",
            self.truth_hits, self.total_truth
        )?;
        writeln!(f, "recall rate      {} %", pct(self.recall_rate))?;
        writeln!(f, "precision        {} %", pct(self.precision))?;
        write!(f, "mean time        {} ms/frame", pct(self.mean_time_ms))?;
        for (stage, ms) in &self.per_stage_ms {
            write!(f, "\n  {stage:<14} {ms:.3} ms")?;
        }
        Ok(())
    }
}

/// Scores `(query_id, match_id)` detections.
///
/// A detection is a true positive when some truth pair lies within
/// `frame_tol` frames on both indices. Recall counts distinct truth pairs:
/// detections are visited in ascending `(query, match)` order and each one
/// claims the nearest still-unclaimed truth pair in its tolerance window.
pub fn score(
    detections: impl IntoIterator<Item = (usize, usize)>,
    truth: &GroundTruthPairs,
    frame_tol: usize,
) -> EvalReport {
    let detections: BTreeSet<(usize, usize)> = detections.into_iter().collect();
    let mut claimed: BTreeSet<(usize, usize)> = BTreeSet::new();
    let (mut tp, mut fp) = (0, 0);

    for &(qi, mj) in &detections {
        let q_range = qi.saturating_sub(frame_tol)..=qi + frame_tol;
        let mut any = false;
        let mut best: Option<((usize, usize), (usize, usize))> = None;
        for &(ti, tj) in truth
            .pairs
            .range((*q_range.start(), 0)..=(*q_range.end(), usize::MAX))
        {
            if tj.abs_diff(mj) > frame_tol {
                continue;
            }
            any = true;
            if claimed.contains(&(ti, tj)) {
                continue;
            }
            let (di, dj) = (ti.abs_diff(qi), tj.abs_diff(mj));
            let key = (di.max(dj), di + dj);
            if best.is_none_or(|(k, _)| key < k) {
                best = Some((key, (ti, tj)));
            }
        }
        if any {
            tp += 1;
            if let Some((_, pair)) = best {
                claimed.insert(pair);
            }
        } else {
            fp += 1;
        }
    }

    let total_truth = truth.len();
    EvalReport {
        recall_rate: (total_truth > 0).then(|| 100.0 * claimed.len() as f64 / total_truth as f64),
        precision: (tp + fp > 0).then(|| 100.0 * tp as f64 / (tp + fp) as f64),
        true_positives: tp,
        false_positives: fp,
        truth_hits: claimed.len(),
        total_truth,
        mean_time_ms: None,
        per_stage_ms: BTreeMap::new(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageStats {
    pub samples: usize,
    pub total_ms: f64,
}

impl StageStats {
    pub fn mean_ms(&self) -> f64 {
        self.total_ms / self.samples as f64
    }
}

/// Wall-clock accumulator keyed by stage name.
///
/// Interior mutability lets stages nest: `time_stage` can be called from
/// inside another `time_stage` closure, and each stage keeps its own samples.
#[derive(Debug, Default)]
pub struct StageTimer {
    stages: RefCell<BTreeMap<String, StageStats>>,
}

impl StageTimer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `f`, records its duration under `stage`, and returns both.
    pub fn time_stage<T>(&self, stage: &str, f: impl FnOnce() -> T) -> (T, f64) {
        let start = Instant::now();
        let out = f();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        self.record(stage, ms);
        (out, ms)
    }

    pub fn record(&self, stage: &str, ms: f64) {
        let mut stages = self.stages.borrow_mut();
        let entry = stages.entry(stage.to_string()).or_default();
        entry.samples += 1;
        entry.total_ms += ms;
    }

    pub fn summary(&self) -> TimingSummary {
        TimingSummary {
            stages: self.stages.borrow().clone(),
        }
    }
}

/// Frozen snapshot of a [`StageTimer`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimingSummary {
    pub stages: BTreeMap<String, StageStats>,
}

impl TimingSummary {
    pub fn mean_ms(&self, stage: &str) -> Option<f64> {
        self.stages.get(stage).map(StageStats::mean_ms)
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        self.stages
            .iter()
            .map(|(k, v)| (k.clone(), v.mean_ms()))
            .collect()
    }

    pub const CSV_HEADER: &'static str = "stage,samples,mean_ms";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (name, s) in &self.stages {
            out.push_str(&format!("{name},{},{:.6}\n", s.samples, s.mean_ms()));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, String> {
        let mut stages = BTreeMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [name, samples, mean] = fields[..] else {
                return Err(format!("timing line {}: expected 3 fields", n + 1));
            };
            let samples: usize = samples
                .parse()
                .map_err(|_| format!("timing line {}: bad sample count", n + 1))?;
            let mean: f64 = mean
                .parse()
                .map_err(|_| format!("timing line {}: bad mean", n + 1))?;
            stages.insert(
                name.to_string(),
                StageStats {
                    samples,
                    total_ms: mean * samples as f64,
                },
            );
        }
        Ok(Self { stages })
    }
}
