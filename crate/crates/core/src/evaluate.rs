//! Detection and mask quality metrics.
//!
//! A detection is a true positive when its flare point falls inside a
//! ground-truth flare component that no more confident detection has
//! claimed yet. Counts are pooled over a dataset before forming ratios.

use serde::Serialize;

use crate::detector::FlareDetection;
use crate::error::{FlareError, Result};
use crate::morphology::{self, BinaryMask};

/// Histogram bins `0..=14` plus a final `15+` bin.
pub const FP_HISTOGRAM_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub flare_mask: BinaryMask,
    pub flare_points: Option<Vec<(usize, usize)>>,
}

impl GroundTruth {
    pub fn from_mask(flare_mask: BinaryMask) -> Self {
        Self {
            flare_mask,
            flare_points: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Matches `(point, confidence)` pairs against the ground-truth components,
/// most confident first. Equal confidences keep their input order.
pub fn match_points(points: &[((usize, usize), f64)], gt: &GroundTruth) -> MatchCounts {
    let (w, h) = gt.flare_mask.dims();
    let comps = morphology::connected_components(&gt.flare_mask);
    let mut label = vec![usize::MAX; w * h];
    for (i, c) in comps.iter().enumerate() {
        for &(x, y) in &c.pixels {
            label[y * w + x] = i;
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].1.total_cmp(&points[a].1));
    let mut claimed = vec![false; comps.len()];
    let mut counts = MatchCounts::default();
    for i in order {
        let (x, y) = points[i].0;
        let hit = (x < w && y < h).then(|| label[y * w + x]).filter(|&l| l != usize::MAX);
        match hit {
            Some(l) if !claimed[l] => {
                claimed[l] = true;
                counts.tp += 1;
            }
            _ => counts.fp += 1,
        }
    }
    counts.fn_ = claimed.iter().filter(|&&c| !c).count();
    counts
}

pub fn match_detections(dets: &[FlareDetection], gt: &GroundTruth) -> MatchCounts {
    let points: Vec<_> = dets.iter().map(|d| (d.flare_point, d.confidence)).collect();
    match_points(&points, gt)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and their harmonic mean; every 0/0 is taken as 0.
pub fn precision_recall_f(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// `2 |M ∩ G| / (|M| + |G|)`.
pub fn dice(m: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let inter = m.intersection_count(gt)?;
    let total = m.count() + gt.count();
    if total == 0 {
        return Err(FlareError::BothEmpty);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub name: String,
    #[serde(flatten)]
    pub counts: MatchCounts,
    /// Absent when both masks are empty.
    pub dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub images: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub avg_false_positives: f64,
    /// Number of images with at least one true positive.
    pub dice_images: usize,
    pub avg_dice: Option<f64>,
    pub median_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub aggregate: Aggregate,
    pub fp_histogram: Vec<HistogramBin>,
    pub per_image: Vec<ImageScore>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

pub fn fp_histogram(scores: &[ImageScore]) -> Vec<HistogramBin> {
    let mut counts = [0usize; FP_HISTOGRAM_BINS];
    for s in scores {
        counts[s.counts.fp.min(FP_HISTOGRAM_BINS - 1)] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            label: if i == FP_HISTOGRAM_BINS - 1 {
                format!("{i}+")
            } else {
                i.to_string()
            },
            count,
            percent: 100.0 * ratio(count, scores.len()),
        })
        .collect()
}

/// Pools counts over all images. Dice statistics only use images where at
/// least one flare was correctly detected.
pub fn aggregate(scores: &[ImageScore]) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(FlareError::invalid("scores", "nothing to aggregate"));
    }
    let tp: usize = scores.iter().map(|s| s.counts.tp).sum();
    let fp: usize = scores.iter().map(|s| s.counts.fp).sum();
    let fn_: usize = scores.iter().map(|s| s.counts.fn_).sum();
    let (precision, recall, f_measure) = precision_recall_f(tp, fp, fn_);
    let mut dices: Vec<f64> = scores
        .iter()
        .filter(|s| s.counts.tp >= 1)
        .filter_map(|s| s.dice)
        .collect();
    dices.sort_by(f64::total_cmp);
    let avg_dice = (!dices.is_empty()).then(|| dices.iter().sum::<f64>() / dices.len() as f64);
    Ok(EvalReport {
        aggregate: Aggregate {
            images: scores.len(),
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_measure,
            avg_false_positives: fp as f64 / scores.len() as f64,
            dice_images: dices.len(),
            avg_dice,
            median_dice: median(&dices),
        },
        fp_histogram: fp_histogram(scores),
        per_image: scores.to_vec(),
    })
}

/// Scores one image from its detections, predicted mask and ground truth.
pub fn score_image(
    name: impl Into<String>,
    points: &[((usize, usize), f64)],
    predicted: &BinaryMask,
    gt: &GroundTruth,
) -> Result<ImageScore> {
    let counts = match_points(points, gt);
    let dice = match dice(predicted, &gt.flare_mask) {
        Ok(d) => Some(d),
        Err(FlareError::BothEmpty) => None,
        Err(e) => return Err(e),
    };
    Ok(ImageScore {
        name: name.into(),
        counts,
        dice,
    })
}
