//! Per-image processing: detection, flare mask and restoration, plus the
//! report describing what was found.

use serde::Serialize;

use crate::config::InpaintSettings;
use crate::detector::{self, DetectionOutcome, FilterCounts, PipelineParams};
use crate::error::Result;
use crate::flaremask::{self, FlareRegion};
use crate::imagecore::{self, LabImage, RgbImage, Window};
use crate::inpaint::{self, InpaintProblem};
use crate::morphology::BinaryMask;

#[derive(Debug, Clone)]
pub struct Analysis {
    pub lab: LabImage,
    pub outcome: DetectionOutcome,
    pub regions: Vec<FlareRegion>,
    pub mask: BinaryMask,
}

impl Analysis {
    /// Flare points and confidences of the detections that kept a region.
    pub fn scored_points(&self) -> Vec<((usize, usize), f64)> {
        self.regions
            .iter()
            .map(|r| (r.detection.flare_point, r.detection.confidence))
            .collect()
    }
}

/// Detects flare spots and builds the merged flare mask.
pub fn analyze(img: &RgbImage, params: &PipelineParams) -> Result<Analysis> {
    let lab = imagecore::rgb_to_lab(img);
    let outcome = detector::detect_in_lab(&lab, params)?;
    let mut regions = Vec::new();
    for det in outcome.detections() {
        let window = det.window;
        if let Some(r) = flaremask::build_flare_region(&lab, &det, params.delta, params.epsilon, params.alpha, &window)? {
            regions.push(r);
        }
    }
    let mask = flaremask::merge_masks(&regions, lab.dims())?;
    Ok(Analysis {
        lab,
        outcome,
        regions,
        mask,
    })
}

/// Inpaints the flare mask; an empty mask returns the input unchanged.
pub fn restore(img: &RgbImage, mask: &BinaryMask, settings: &InpaintSettings, seed: u64) -> Result<RgbImage> {
    if mask.is_empty() {
        return Ok(img.clone());
    }
    let mut problem = InpaintProblem::new(img.clone(), mask.clone())?;
    problem.patch_side = settings.patch_side;
    problem.iterations = settings.iterations;
    problem.levels = settings.levels;
    problem.seed = seed;
    inpaint::inpaint(&problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    #[serde(rename = "no light source")]
    NoLightSource,
    #[serde(rename = "no flare")]
    NoFlare,
    #[serde(rename = "flare detected")]
    FlareDetected,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    pub flare_point: (usize, usize),
    pub scale: f64,
    pub confidence: f64,
    pub energy: f64,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e1n: f64,
    pub e2n: f64,
    pub e3n: f64,
    /// Area of the flare region; absent when the region came out empty and
    /// the detection was dropped.
    pub region_area: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SourceReport {
    pub centroid: (f64, f64),
    pub area: usize,
    pub window: Window,
    pub keypoints: FilterCounts,
    pub detection: Option<DetectionReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageReport {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub status: Status,
    pub keypoint_count: usize,
    pub light_sources: Vec<SourceReport>,
    pub mask_area: usize,
}

impl ImageReport {
    pub fn new(image: impl Into<String>, analysis: &Analysis) -> Self {
        let (width, height) = analysis.lab.dims();
        let light_sources: Vec<SourceReport> = analysis
            .outcome
            .sources
            .iter()
            .map(|s| SourceReport {
                centroid: s.source.centroid,
                area: s.source.area,
                window: s.window,
                keypoints: s.counts.clone(),
                detection: s.detection.as_ref().map(|d| {
                    let region_area = analysis
                        .regions
                        .iter()
                        .find(|r| r.detection.flare_point == d.flare_point && r.detection.source.centroid == d.source.centroid)
                        .map(|r| r.mask.count());
                    DetectionReport {
                        flare_point: d.flare_point,
                        scale: d.scale,
                        confidence: d.confidence,
                        energy: d.candidate.energy,
                        e1: d.candidate.terms.e1,
                        e2: d.candidate.terms.e2,
                        e3: d.candidate.terms.e3,
                        e1n: d.candidate.e1n,
                        e2n: d.candidate.e2n,
                        e3n: d.candidate.e3n,
                        region_area,
                    }
                }),
            })
            .collect();
        let status = if light_sources.is_empty() {
            Status::NoLightSource
        } else if analysis.regions.is_empty() {
            Status::NoFlare
        } else {
            Status::FlareDetected
        };
        Self {
            image: image.into(),
            width,
            height,
            status,
            keypoint_count: analysis.outcome.keypoint_count,
            light_sources,
            mask_area: analysis.mask.count(),
        }
    }

    pub fn detection_count(&self) -> usize {
        self.light_sources
            .iter()
            .filter(|s| s.detection.as_ref().is_some_and(|d| d.region_area.is_some()))
            .count()
    }
}
