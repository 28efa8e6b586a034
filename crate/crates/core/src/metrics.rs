//! Segmentation and skyline evaluation metrics.
//!
//! Segmentation metrics derive from exact pixel confusion counts with sky as
//! the positive class; ratios with a zero denominator are reported as an
//! explicit `None`, never NaN. Skyline accuracy is the mean absolute
//! per-column distance between two skyline vectors, restricted to columns
//! defined in both; dataset-level results aggregate per-image values into
//! mean / population standard deviation / min / max.

use ndarray::{Array2, Array3};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::report::{PerImagePad, PerImageSeg, SegmentationReport, SkylineReport};
use crate::skyline::{
    skyline_from_mask, skyline_via, EdgeParams, SkylineMethod, SkylineVector,
};

/// Pixel confusion counts; sky (mask value 1) is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SegmentationCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl SegmentationCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &SegmentationCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// The derived metric set. Undefined ratios (empty denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentationMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    /// Misclassification rate, `1 - accuracy`.
    pub mcr: f64,
}

pub fn confusion_counts(pred: &Array2<u8>, gt: &Array2<u8>) -> Result<SegmentationCounts> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    if pred.iter().any(|&v| v > 1) || gt.iter().any(|&v| v > 1) {
        return Err(Error::Data("masks must be binary (0/1)".into()));
    }
    let mut counts = SegmentationCounts::default();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p, g) {
            (1, 1) => counts.tp += 1,
            (1, 0) => counts.fp += 1,
            (0, 0) => counts.tn += 1,
            _ => counts.fn_ += 1,
        }
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn segmentation_metrics(counts: &SegmentationCounts) -> Result<SegmentationMetrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::Data("confusion counts cover zero pixels".into()));
    }
    let accuracy = (counts.tp + counts.tn) as f64 / total as f64;
    Ok(SegmentationMetrics {
        accuracy,
        precision: ratio(counts.tp, counts.tp + counts.fp),
        recall: ratio(counts.tp, counts.tp + counts.fn_),
        dice: ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_),
        iou: ratio(counts.tp, counts.tp + counts.fp + counts.fn_),
        mcr: 1.0 - accuracy,
    })
}

/// Per-image mean absolute skyline distance in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PadResult {
    /// Mean absolute row distance over mutually defined columns.
    pub e: f64,
    pub evaluated_columns: usize,
    pub skipped_columns: usize,
}

/// Mean absolute distance between two skyline vectors. Columns undefined in
/// either vector are excluded from both the sum and the column count.
pub fn pad(pred: &SkylineVector, gt: &SkylineVector) -> Result<PadResult> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Shape(format!(
            "skyline dims {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.rows().iter().zip(gt.rows().iter()) {
        if let (Some(p), Some(g)) = (p, g) {
            sum += (*p as f64 - *g as f64).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(PadResult {
        e: sum / n as f64,
        evaluated_columns: n,
        skipped_columns: pred.width() - n,
    })
}

/// Dataset-level distance statistics over per-image values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PadAggregate {
    pub mu: f64,
    /// Population standard deviation (divide by n).
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
}

pub fn aggregate_pad(results: &[PadResult]) -> Result<PadAggregate> {
    if results.is_empty() {
        return Err(Error::Data("no skyline distances to aggregate".into()));
    }
    let n = results.len() as f64;
    let mu = results.iter().map(|r| r.e).sum::<f64>() / n;
    let var = results.iter().map(|r| (r.e - mu).powi(2)).sum::<f64>() / n;
    let min = results.iter().map(|r| r.e).fold(f64::INFINITY, f64::min);
    let max = results.iter().map(|r| r.e).fold(f64::NEG_INFINITY, f64::max);
    Ok(PadAggregate {
        mu,
        sigma: var.sqrt(),
        min,
        max,
    })
}

/// Anything that maps an image to a binary sky mask of the same size.
/// Implemented by the network; test fixtures implement it directly.
pub trait MaskPredictor {
    fn predict(&self, image: &Array3<f32>, threshold: f64) -> Result<Array2<u8>>;
}

impl MaskPredictor for crate::model::Network<f32> {
    fn predict(&self, image: &Array3<f32>, threshold: f64) -> Result<Array2<u8>> {
        crate::train::predict_mask(self, image, threshold)
    }
}

/// Micro-averaged segmentation evaluation: confusion counts accumulate over
/// every pixel of every image before the metric ratios are taken. Emits one
/// per-image row per sample.
pub fn evaluate_segmentation<P: MaskPredictor>(
    predictor: &P,
    data: &Dataset,
    threshold: f64,
) -> Result<SegmentationReport> {
    if data.samples.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let mut total = SegmentationCounts::default();
    let mut per_image = Vec::with_capacity(data.samples.len());
    for sample in &data.samples {
        let pred = predictor.predict(&sample.image, threshold)?;
        let counts = confusion_counts(&pred, &sample.mask)?;
        total.add(&counts);
        per_image.push(PerImageSeg {
            name: sample.name.clone(),
            counts,
            metrics: segmentation_metrics(&counts)?,
        });
    }
    Ok(SegmentationReport {
        counts: total,
        metrics: segmentation_metrics(&total)?,
        per_image,
    })
}

/// Skyline evaluation: per-image distance between the predicted-mask skyline
/// (by the requested method) and the ground-truth skyline (stored vector if
/// the dims match, else a scan of the ground-truth mask). Images without a
/// single mutually defined column are excluded and reported.
pub fn evaluate_skyline<P: MaskPredictor>(
    predictor: &P,
    data: &Dataset,
    method: SkylineMethod,
    params: &EdgeParams,
    threshold: f64,
) -> Result<SkylineReport> {
    if data.samples.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    let mut per_image = Vec::new();
    let mut excluded = Vec::new();
    for sample in &data.samples {
        let pred_mask = predictor.predict(&sample.image, threshold)?;
        let pred_sky = skyline_via(&pred_mask, method, params)?;
        let gt_sky = match &sample.skyline {
            Some(sky)
                if sky.width() == pred_sky.width() && sky.height() == pred_sky.height() =>
            {
                sky.clone()
            }
            _ => skyline_from_mask(&sample.mask)?,
        };
        match pad(&pred_sky, &gt_sky) {
            Ok(result) => per_image.push(PerImagePad {
                name: sample.name.clone(),
                result,
            }),
            Err(Error::NoOverlap) => excluded.push(sample.name.clone()),
            Err(e) => return Err(e),
        }
    }
    let aggregate = if per_image.is_empty() {
        None
    } else {
        let results: Vec<PadResult> = per_image.iter().map(|p| p.result).collect();
        Some(aggregate_pad(&results)?)
    };
    Ok(SkylineReport {
        aggregate,
        per_image,
        excluded,
    })
}
