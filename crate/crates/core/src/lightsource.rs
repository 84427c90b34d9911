//! Bright light source localization.
//!
//! Sources are the 8-connected components of the opened upper level set
//! `L >= iota`. The largest one is always kept; others survive when their area
//! reaches `secondary_ratio` times the largest area.

use serde::Serialize;

use crate::imagecore::LabImage;
use crate::morphology::{self, BinaryMask, Component};

/// Upper bound on the number of sources returned, largest first.
pub const MAX_LIGHT_SOURCES: usize = 8;

/// Opening radius applied to the thresholded luminance.
pub const DEFAULT_OPENING_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LightSource {
    #[serde(skip)]
    pub region: Component,
    pub centroid: (f64, f64),
    pub area: usize,
}

impl LightSource {
    pub fn from_component(region: Component) -> Self {
        Self {
            centroid: region.centroid,
            area: region.area,
            region,
        }
    }
}

/// The opened bright mask that source components are extracted from.
pub fn bright_mask(lab: &LabImage, iota: f64, opening_radius: f64) -> BinaryMask {
    let raw = morphology::upper_level_set(&lab.l, iota);
    morphology::opening(&raw, opening_radius)
}

pub fn find_light_sources(lab: &LabImage, iota: f64, secondary_ratio: f64) -> Vec<LightSource> {
    find_light_sources_with(lab, iota, secondary_ratio, DEFAULT_OPENING_RADIUS)
}

pub fn find_light_sources_with(
    lab: &LabImage,
    iota: f64,
    secondary_ratio: f64,
    opening_radius: f64,
) -> Vec<LightSource> {
    let mask = bright_mask(lab, iota, opening_radius);
    let comps = morphology::connected_components(&mask);
    let Some(largest) = comps.first().map(|c| c.area) else {
        return Vec::new();
    };
    let min_area = secondary_ratio * largest as f64;
    comps
        .into_iter()
        .filter(|c| c.area as f64 >= min_area)
        .take(MAX_LIGHT_SOURCES)
        .map(LightSource::from_component)
        .collect()
}
