//! Flare spot candidate filtering and confidence maximization.
//!
//! For every light source the keypoints inside its search window go through
//! three filters (elongation, bounded area, overexposure) and the survivor
//! with the highest confidence `exp(-E)` becomes the flare point, where
//! `E = (e1n + e2n) / 2 - e3n` over min-max normalized terms:
//!
//! * `e1`: mismatch between the source-centre and keypoint-centre distances,
//! * `e2`: distance from the keypoint to the line through source and centre,
//! * `e3`: `L - a*` at the keypoint (bright and green-blue scores high).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{FlareError, Result};
use crate::imagecore::{self, normalize_window, LabImage, NormalizedWindow, RgbImage, Window};
use crate::lightsource::{self, LightSource};
use crate::morphology;
use crate::scalespace::{self, Keypoint};

/// Tunable parameters. Defaults are the fixed values used for every
/// experiment of the original method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    /// Luminance threshold for light sources.
    pub iota: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Bi-level radius used for the bounded-area test and the mask seed.
    pub delta: f64,
    /// Minimum normalized window luminance of a candidate.
    pub beta: f64,
    /// Mask dilation radius.
    pub epsilon: f64,
    /// Normalized luminance cut applied to the dilated mask.
    pub alpha: f64,
    /// Ratio between consecutive scales.
    pub k: f64,
    /// Search window radius as a fraction of the larger image dimension.
    pub window_fraction: f64,
    pub secondary_ratio: f64,
    pub opening_radius: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            iota: 99.0,
            sigma_min: 3.0,
            sigma_max: 15.0,
            delta: 10.0,
            beta: 0.7,
            epsilon: 5.0,
            alpha: 0.2,
            k: 2f64.powf(0.2),
            window_fraction: 0.2,
            secondary_ratio: 0.8,
            opening_radius: 1.5,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("iota", self.iota),
            ("sigma_min", self.sigma_min),
            ("sigma_max", self.sigma_max),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("window_fraction", self.window_fraction),
            ("secondary_ratio", self.secondary_ratio),
            ("opening_radius", self.opening_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlareError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FlareError::invalid(name, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.iota > 100.0 {
            return Err(FlareError::invalid("iota", "must not exceed 100"));
        }
        if self.secondary_ratio > 1.0 {
            return Err(FlareError::invalid("secondary_ratio", "must not exceed 1"));
        }
        if self.sigma_min >= self.sigma_max {
            return Err(FlareError::invalid("sigma_min", "must be below sigma_max"));
        }
        if !(self.k > 1.0) {
            return Err(FlareError::invalid("k", "must exceed 1"));
        }
        Ok(())
    }
}

/// Raw confidence terms of one keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceTerms {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
}

/// A filtered keypoint with its raw and normalized confidence terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub keypoint: Keypoint,
    pub terms: ConfidenceTerms,
    pub e1n: f64,
    pub e2n: f64,
    pub e3n: f64,
    pub energy: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlareDetection {
    pub source: LightSource,
    pub flare_point: (usize, usize),
    pub scale: f64,
    pub confidence: f64,
    pub candidate: Candidate,
    pub window: Window,
}

/// Image centre `((w - 1) / 2, (h - 1) / 2)` in pixel coordinates.
pub fn image_center(dims: (usize, usize)) -> (f64, f64) {
    ((dims.0 as f64 - 1.0) / 2.0, (dims.1 as f64 - 1.0) / 2.0)
}

/// Window around the point reflection of the source centroid through the
/// image centre, with radius `fraction * max(w, h)`.
pub fn search_window(source: &LightSource, dims: (usize, usize), fraction: f64) -> Window {
    let (cx, cy) = image_center(dims);
    let (sx, sy) = source.centroid;
    let mx = (2.0 * cx - sx).clamp(0.0, dims.0 as f64 - 1.0);
    let my = (2.0 * cy - sy).clamp(0.0, dims.1 as f64 - 1.0);
    Window {
        cx: mx,
        cy: my,
        radius: fraction * dims.0.max(dims.1) as f64,
    }
}

/// Area of the `delta` bi-level component around `seed`, counted up to `limit`.
pub fn bilevel_component_area(lab: &LabImage, seed: (usize, usize), delta: f64, limit: usize) -> usize {
    let l = &lab.l;
    let v = l.get(seed.0, seed.1);
    morphology::flood_fill(l.width(), l.height(), seed, limit, |x, y| {
        (l.get(x, y) - v).abs() <= delta
    })
    .len()
}

/// True when the bi-level component at the keypoint is smaller than 1% of the
/// source area.
pub fn bounded_area_ok(lab: &LabImage, kp: &Keypoint, source: &LightSource, delta: f64) -> bool {
    let bound = source.area as f64 / 100.0;
    // Any component reaching `limit` pixels already fails the strict bound.
    let limit = bound.ceil().max(1.0) as usize;
    bilevel_component_area(lab, (kp.x, kp.y), delta, limit) < limit
}

/// True when the window-normalized luminance at the keypoint exceeds `beta`.
pub fn overexposure_ok(norm: &NormalizedWindow, kp: &Keypoint, beta: f64) -> Result<bool> {
    Ok(norm.value_at(kp.x, kp.y)? > beta)
}

fn line_distance(center: (f64, f64), source: (f64, f64), p: (f64, f64)) -> f64 {
    let (dx, dy) = (center.0 - source.0, center.1 - source.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        // Source at the centre: fall back to the radial distance.
        return (p.0 - center.0).hypot(p.1 - center.1);
    }
    (dx * (p.1 - source.1) - dy * (p.0 - source.0)).abs() / len
}

pub fn confidence_terms(lab: &LabImage, kp: &Keypoint, source: &LightSource) -> ConfidenceTerms {
    let center = image_center(lab.dims());
    let p = (kp.x as f64, kp.y as f64);
    let s = source.centroid;
    let d_source = (center.0 - s.0).hypot(center.1 - s.1);
    let d_point = (center.0 - p.0).hypot(center.1 - p.1);
    ConfidenceTerms {
        e1: (d_source - d_point).abs(),
        e2: line_distance(center, s, p),
        e3: lab.l.get(kp.x, kp.y) - lab.a.get(kp.x, kp.y),
    }
}

fn min_max_normalizer(values: impl Iterator<Item = f64>) -> impl Fn(f64) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    move |v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }
}

/// Normalizes each term across the candidate set and scores every candidate.
pub fn score_candidates(cands: &[(Keypoint, ConfidenceTerms)]) -> Vec<Candidate> {
    let n1 = min_max_normalizer(cands.iter().map(|c| c.1.e1));
    let n2 = min_max_normalizer(cands.iter().map(|c| c.1.e2));
    let n3 = min_max_normalizer(cands.iter().map(|c| c.1.e3));
    cands
        .iter()
        .map(|&(keypoint, terms)| {
            let (e1n, e2n, e3n) = (n1(terms.e1), n2(terms.e2), n3(terms.e3));
            let energy = (e1n + e2n) / 2.0 - e3n;
            Candidate {
                keypoint,
                terms,
                e1n,
                e2n,
                e3n,
                energy,
                confidence: (-energy).exp(),
            }
        })
        .collect()
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    // Higher confidence first, then smaller e1, then raster order, then scale.
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.terms.e1.total_cmp(&b.terms.e1))
        .then((a.keypoint.y, a.keypoint.x).cmp(&(b.keypoint.y, b.keypoint.x)))
        .then(a.keypoint.scale_index.cmp(&b.keypoint.scale_index))
}

/// Picks the candidate of maximal confidence; `None` for an empty set.
pub fn select_flare(
    cands: &[(Keypoint, ConfidenceTerms)],
    source: &LightSource,
    window: Window,
) -> Option<FlareDetection> {
    let scored = score_candidates(cands);
    let best = scored.into_iter().min_by(rank)?;
    Some(FlareDetection {
        source: source.clone(),
        flare_point: (best.keypoint.x, best.keypoint.y),
        scale: best.keypoint.sigma,
        confidence: best.confidence,
        candidate: best,
        window,
    })
}

/// Per-source bookkeeping of one detection run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterCounts {
    pub in_window: usize,
    pub after_elongation: usize,
    pub after_area: usize,
    pub after_overexposure: usize,
}

#[derive(Debug, Clone)]
pub struct SourceOutcome {
    pub source: LightSource,
    pub window: Window,
    pub counts: FilterCounts,
    pub detection: Option<FlareDetection>,
}

#[derive(Debug, Clone)]
pub struct DetectionOutcome {
    pub sources: Vec<SourceOutcome>,
    pub keypoint_count: usize,
}

impl DetectionOutcome {
    pub fn detections(&self) -> Vec<FlareDetection> {
        self.sources.iter().filter_map(|s| s.detection.clone()).collect()
    }
}

/// Runs the filter cascade for one source over the keypoints of the image.
pub fn detect_for_source(
    lab: &LabImage,
    keypoints: &[Keypoint],
    source: &LightSource,
    params: &PipelineParams,
) -> Result<SourceOutcome> {
    let window = search_window(source, lab.dims(), params.window_fraction);
    let norm = normalize_window(&lab.l, &window)?;
    let mut counts = FilterCounts::default();
    let mut survivors = Vec::new();
    for kp in keypoints.iter().filter(|kp| window.contains(kp.x, kp.y)) {
        counts.in_window += 1;
        if !scalespace::elongation_ok(kp) {
            continue;
        }
        counts.after_elongation += 1;
        if !bounded_area_ok(lab, kp, source, params.delta) {
            continue;
        }
        counts.after_area += 1;
        if !overexposure_ok(&norm, kp, params.beta)? {
            continue;
        }
        counts.after_overexposure += 1;
        survivors.push((*kp, confidence_terms(lab, kp, source)));
    }
    Ok(SourceOutcome {
        source: source.clone(),
        window,
        counts,
        detection: select_flare(&survivors, source, window),
    })
}

/// Light sources, keypoints and per-source flare selection on a Lab image.
pub fn detect_in_lab(lab: &LabImage, params: &PipelineParams) -> Result<DetectionOutcome> {
    params.validate()?;
    let sources = lightsource::find_light_sources_with(
        lab,
        params.iota,
        params.secondary_ratio,
        params.opening_radius,
    );
    if sources.is_empty() {
        return Ok(DetectionOutcome {
            sources: Vec::new(),
            keypoint_count: 0,
        });
    }
    let ss = scalespace::build_scalespace(&lab.l, params.sigma_min, params.sigma_max, params.k)?;
    let keypoints = scalespace::detect_keypoints(&ss);
    drop(ss);
    let sources = sources
        .iter()
        .map(|s| detect_for_source(lab, &keypoints, s, params))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionOutcome {
        sources,
        keypoint_count: keypoints.len(),
    })
}

/// At most one flare per light source, in light-source order.
pub fn detect_all(img: &RgbImage, params: &PipelineParams) -> Result<Vec<FlareDetection>> {
    let lab = imagecore::rgb_to_lab(img);
    Ok(detect_in_lab(&lab, params)?.detections())
}
