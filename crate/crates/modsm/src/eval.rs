//! Pixel-level detection metrics: confusion counts, F1, ROC sweeps, and
//! report emission. Foreground is the positive class throughout.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ForegroundMask, ImageGrid};
use crate::solver::binarize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.true_neg += other.true_neg;
        self.false_neg += other.false_neg;
    }

    pub fn precision(&self) -> f64 {
        let denom = self.true_pos + self.false_pos;
        if denom == 0 {
            0.0
        } else {
            self.true_pos as f64 / denom as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let denom = self.true_pos + self.false_neg;
        if denom == 0 {
            0.0
        } else {
            self.true_pos as f64 / denom as f64
        }
    }

    pub fn true_positive_rate(&self) -> f64 {
        self.recall()
    }

    pub fn false_positive_rate(&self) -> f64 {
        let denom = self.false_pos + self.true_neg;
        if denom == 0 {
            0.0
        } else {
            self.false_pos as f64 / denom as f64
        }
    }
}

/// Pixel-wise confusion counts for one mask against its ground truth.
pub fn confusion(mask: &ForegroundMask, truth: &ForegroundMask) -> Result<ConfusionCounts> {
    if mask.grid != truth.grid {
        return Err(Error::DimensionMismatch {
            context: "confusion".into(),
            expected_width: truth.grid.width(),
            expected_height: truth.grid.height(),
            found_width: mask.grid.width(),
            found_height: mask.grid.height(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (&m, &t) in mask.values.iter().zip(truth.values.iter()) {
        match (m, t) {
            (1, 1) => counts.true_pos += 1,
            (1, 0) => counts.false_pos += 1,
            (0, 0) => counts.true_neg += 1,
            _ => counts.false_neg += 1,
        }
    }
    Ok(counts)
}

/// Harmonic mean of precision and recall; 0 for degenerate frames with no
/// predicted or no true positives.
pub fn f1_score(counts: &ConfusionCounts) -> f64 {
    if counts.true_pos + counts.false_pos == 0 || counts.true_pos + counts.false_neg == 0 {
        return 0.0;
    }
    let p = counts.precision();
    let r = counts.recall();
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from a threshold sweep over the background vectors, ordered by
/// threshold, counts micro-averaged over all frames.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,fpr,tpr\n");
        for p in &self.points {
            writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr).expect("string write");
        }
        out
    }
}

/// Sweep `steps` thresholds uniformly over [0, 1], binarizing every frame's
/// background vector and accumulating counts across frames.
pub fn roc_sweep(
    b_sequence: &[DVector<f64>],
    truth_sequence: &[ForegroundMask],
    grid: ImageGrid,
    steps: usize,
) -> Result<RocCurve> {
    if b_sequence.is_empty() || truth_sequence.is_empty() {
        return Err(Error::EmptyInput("roc sweep sequences".into()));
    }
    if b_sequence.len() != truth_sequence.len() {
        return Err(Error::LengthMismatch {
            context: "roc sweep".into(),
            expected: truth_sequence.len(),
            found: b_sequence.len(),
        });
    }
    if steps < 2 {
        return Err(Error::InvalidParam("roc sweep needs at least 2 steps".into()));
    }
    let points = (0..steps)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 / (steps - 1) as f64;
            let mut total = ConfusionCounts::default();
            for (b, truth) in b_sequence.iter().zip(truth_sequence) {
                // Eq-style thresholding with t clamped into the open interval
                // the binarizer accepts; t = 0 and t = 1 are handled directly.
                let mask = if t <= 0.0 {
                    ForegroundMask::new(grid, vec![0; grid.n()]).expect("zero mask")
                } else if t >= 1.0 {
                    let values = b.iter().map(|&x| u8::from(x < 1.0)).collect();
                    ForegroundMask::new(grid, values).expect("unit mask")
                } else {
                    binarize(b, t, grid)?
                };
                total.merge(&confusion(&mask, truth)?);
            }
            Ok(RocPoint {
                threshold: t,
                fpr: total.false_positive_rate(),
                tpr: total.true_positive_rate(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RocCurve { points })
}

/// One evaluated frame for report emission.
#[derive(Debug, Clone, Serialize)]
pub struct FrameScore {
    pub name: String,
    pub counts: ConfusionCounts,
    pub f1: f64,
}

/// Per-frame scores plus the aggregate for one video.
#[derive(Debug, Clone, Serialize)]
pub struct VideoReport {
    pub video: String,
    pub frames: Vec<FrameScore>,
    /// Unweighted mean of the per-frame F1 scores.
    pub mean_f1: f64,
    /// Counts accumulated over all frames.
    pub overall: ConfusionCounts,
    /// F1 of the accumulated counts.
    pub overall_f1: f64,
}

impl VideoReport {
    pub fn from_frames(video: impl Into<String>, frames: Vec<FrameScore>) -> VideoReport {
        let mut overall = ConfusionCounts::default();
        for f in &frames {
            overall.merge(&f.counts);
        }
        let mean_f1 = if frames.is_empty() {
            0.0
        } else {
            frames.iter().map(|f| f.f1).sum::<f64>() / frames.len() as f64
        };
        VideoReport {
            video: video.into(),
            overall_f1: f1_score(&overall),
            mean_f1,
            overall,
            frames,
        }
    }

    /// `video,frame,tp,fp,tn,fn,f1` rows plus `mean` and `overall` summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video,frame,tp,fp,tn,fn,f1\n");
        for f in &self.frames {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.video,
                f.name,
                f.counts.true_pos,
                f.counts.false_pos,
                f.counts.true_neg,
                f.counts.false_neg,
                f.f1
            )
            .expect("string write");
        }
        writeln!(out, "{},mean,,,,,{}", self.video, self.mean_f1).expect("string write");
        writeln!(
            out,
            "{},overall,{},{},{},{},{}",
            self.video,
            self.overall.true_pos,
            self.overall.false_pos,
            self.overall.true_neg,
            self.overall.false_neg,
            self.overall_f1
        )
        .expect("string write");
        out
    }
}

/// Aggregate per-video F1 scores into CSV and JSON with an unweighted mean.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub per_video: BTreeMap<String, f64>,
    pub mean: f64,
}

impl AggregateReport {
    pub fn new(per_video: BTreeMap<String, f64>) -> Result<AggregateReport> {
        if per_video.is_empty() {
            return Err(Error::EmptyInput("aggregate report".into()));
        }
        let mean = per_video.values().sum::<f64>() / per_video.len() as f64;
        Ok(AggregateReport { per_video, mean })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("video,f1\n");
        for (video, f1) in &self.per_video {
            writeln!(out, "{video},{f1}").expect("string write");
        }
        writeln!(out, "mean,{}", self.mean).expect("string write");
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialize")
    }
}
