//! Evaluation machinery: pixel F1, connected components, lesion-level
//! sensitivity and false positives per image, Welch t-tests and the
//! cross-validation driver.

mod components;
pub mod csv;
mod lesions;
mod stats;

pub use components::connected_components;
pub use lesions::{lesion_metrics, LesionMatch};
pub use stats::welch_t_test;

use crate::synthdata::{make_folds, DatasetSplit, MaskGrid};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: pred {pred:?} vs gt {gt:?}")]
    ShapeMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("iou threshold must lie in (0,1), got {0}")]
    BadIouThreshold(f64),
    #[error("welch t-test needs at least 2 samples per group (got {0} and {1})")]
    TooFewSamples(usize, usize),
    #[error("degenerate variance in welch t-test: var(a)={0}, var(b)={1}")]
    DegenerateVariance(f64, f64),
    #[error("runner failed at repeat {repeat}, fold {fold}: {detail}")]
    Runner { repeat: usize, fold: usize, detail: String },
    #[error(transparent)]
    Synth(#[from] crate::synthdata::SynthError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad metrics csv {path}, line {line}: {detail}")]
    Csv { path: String, line: usize, detail: String },
}

/// Pixelwise confusion counts of a predicted mask against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn count(pred: &MaskGrid, gt: &MaskGrid) -> Result<Self, MetricsError> {
        if pred.h != gt.h || pred.w != gt.w {
            return Err(MetricsError::ShapeMismatch { pred: (pred.h, pred.w), gt: (gt.h, gt.w) });
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            // both masks empty: perfect agreement on absence
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Pixel F1 = 2tp / (2tp + fp + fn); 1.0 when both masks are empty.
pub fn pixel_f1(pred: &MaskGrid, gt: &MaskGrid) -> Result<f64, MetricsError> {
    Ok(ConfusionCounts::count(pred, gt)?.f1())
}

/// One row of every report and statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub method: String,
    pub labeled_fraction: f64,
    pub repeat: usize,
    pub fold: usize,
    pub iteration: usize,
    pub f1: f64,
    pub sensitivity: f64,
    pub fps_per_image: f64,
    pub reward: Option<f64>,
}

/// Mean and sample standard deviation of each metric over a record set.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricsSummary {
    pub n: usize,
    pub f1_mean: f64,
    pub f1_sd: f64,
    pub sensitivity_mean: f64,
    pub sensitivity_sd: f64,
    pub fps_mean: f64,
    pub fps_sd: f64,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn summarize(records: &[MetricsRecord]) -> MetricsSummary {
    let f1: Vec<f64> = records.iter().map(|r| r.f1).collect();
    let se: Vec<f64> = records.iter().map(|r| r.sensitivity).collect();
    let fp: Vec<f64> = records.iter().map(|r| r.fps_per_image).collect();
    let (f1_mean, f1_sd) = mean_sd(&f1);
    let (sensitivity_mean, sensitivity_sd) = mean_sd(&se);
    let (fps_mean, fps_sd) = mean_sd(&fp);
    MetricsSummary { n: records.len(), f1_mean, f1_sd, sensitivity_mean, sensitivity_sd, fps_mean, fps_sd }
}

/// Run `runner` over every (repeat, fold) cell. Each repeat uses its own
/// fold partition derived from `repeat_seed_base + repeat`. Records come
/// back sorted by (repeat, fold).
pub fn cross_validate<E: std::fmt::Display>(
    mut runner: impl FnMut(&DatasetSplit, &[Vec<u64>], usize, usize) -> Result<MetricsRecord, E>,
    split: &DatasetSplit,
    k: usize,
    repeats: usize,
    repeat_seed_base: u64,
) -> Result<(Vec<MetricsRecord>, MetricsSummary), MetricsError> {
    let mut records = Vec::with_capacity(k * repeats);
    for repeat in 0..repeats {
        let folds = make_folds(split, k, repeat_seed_base + repeat as u64)?;
        for fold in 0..k {
            let rec = runner(split, &folds, fold, repeat)
                .map_err(|e| MetricsError::Runner { repeat, fold, detail: e.to_string() })?;
            records.push(rec);
        }
    }
    records.sort_by(|a, b| (a.repeat, a.fold).cmp(&(b.repeat, b.fold)));
    let summary = summarize(&records);
    Ok((records, summary))
}

#[cfg(test)]
mod tests;
