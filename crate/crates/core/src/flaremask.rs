//! Flare spot region growing and mask assembly.
//!
//! Starting from a detected flare point, the region is the connected
//! `delta` bi-level component around it, dilated by a disc of radius
//! `epsilon` and then restricted to pixels whose window-normalized luminance
//! reaches `alpha`.

use crate::detector::FlareDetection;
use crate::error::Result;
use crate::imagecore::{normalize_window, LabImage, Window};
use crate::morphology::{self, BinaryMask};

#[derive(Debug, Clone)]
pub struct FlareRegion {
    pub mask: BinaryMask,
    pub detection: FlareDetection,
}

/// The three successive sets built while growing a region, kept for audit.
#[derive(Debug, Clone)]
pub struct RegionStages {
    pub component: BinaryMask,
    pub dilated: BinaryMask,
    pub region: BinaryMask,
}

/// Region stages for a seed pixel. `window` scopes the luminance
/// normalization of the final cut.
pub fn region_stages(
    lab: &LabImage,
    seed: (usize, usize),
    delta: f64,
    epsilon: f64,
    alpha: f64,
    window: &Window,
) -> Result<RegionStages> {
    let (w, h) = lab.dims();
    let l = &lab.l;
    let v = l.get(seed.0, seed.1);
    let pixels = morphology::flood_fill(w, h, seed, usize::MAX, |x, y| (l.get(x, y) - v).abs() <= delta);
    let component = BinaryMask::from_pixels(w, h, &pixels);
    let dilated = morphology::dilation(&component, epsilon);
    let norm = normalize_window(l, window)?;
    let region = BinaryMask::from_fn(w, h, |x, y| dilated.get(x, y) && norm.plane.get(x, y) >= alpha);
    Ok(RegionStages {
        component,
        dilated,
        region,
    })
}

/// Flare region of one detection, or `None` when the luminance cut leaves
/// nothing.
pub fn build_flare_region(
    lab: &LabImage,
    det: &FlareDetection,
    delta: f64,
    epsilon: f64,
    alpha: f64,
    window: &Window,
) -> Result<Option<FlareRegion>> {
    let stages = region_stages(lab, det.flare_point, delta, epsilon, alpha, window)?;
    if stages.region.is_empty() {
        log::info!(
            "dropping detection at {:?}: no pixel passes the luminance cut",
            det.flare_point
        );
        return Ok(None);
    }
    Ok(Some(FlareRegion {
        mask: stages.region,
        detection: det.clone(),
    }))
}

/// Pixel-wise union of all region masks.
pub fn merge_masks(regions: &[FlareRegion], dims: (usize, usize)) -> Result<BinaryMask> {
    let mut merged = BinaryMask::empty(dims.0, dims.1);
    for r in regions {
        merged = merged.union(&r.mask)?;
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Candidate, ConfidenceTerms};
    use crate::imagecore::GrayPlane;
    use crate::lightsource::LightSource;
    use crate::morphology::Component;
    use crate::scalespace::Keypoint;

    fn lab_from_l(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> LabImage {
        LabImage::new(
            GrayPlane::from_fn(w, h, f).unwrap(),
            GrayPlane::filled(w, h, 0.0).unwrap(),
            GrayPlane::filled(w, h, 0.0).unwrap(),
        )
        .unwrap()
    }

    fn detection_at(x: usize, y: usize, window: Window) -> FlareDetection {
        let keypoint = Keypoint {
            x,
            y,
            scale_index: 1,
            sigma: 3.0,
            response: -1.0,
            hessian_eigen: (1.0, 1.0),
        };
        let component = Component {
            pixels: vec![(0, 0)],
            area: 1,
            centroid: (0.0, 0.0),
        };
        FlareDetection {
            source: LightSource::from_component(component),
            flare_point: (x, y),
            scale: 3.0,
            confidence: 1.0,
            candidate: Candidate {
                keypoint,
                terms: ConfidenceTerms { e1: 0.0, e2: 0.0, e3: 0.0 },
                e1n: 0.0,
                e2n: 0.0,
                e3n: 0.0,
                energy: 0.0,
                confidence: 1.0,
            },
            window,
        }
    }

    fn in_disc(x: usize, y: usize, cx: f64, cy: f64, r: f64) -> bool {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        dx * dx + dy * dy <= r * r
    }

    /// L = 95 inside a radius-8 disc, then a linear halo falling to 20 over
    /// `halo` pixels.
    fn halo_disc(halo: f64) -> LabImage {
        lab_from_l(64, 64, move |x, y| {
            let d = ((x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2)).sqrt();
            if d <= 8.0 {
                95.0
            } else if d <= 8.0 + halo {
                95.0 - 75.0 * (d - 8.0) / halo
            } else {
                20.0
            }
        })
    }

    #[test]
    fn bright_disc_on_dark_ground_is_recovered_exactly() {
        let lab = lab_from_l(64, 64, |x, y| if in_disc(x, y, 32.0, 32.0, 8.0) { 95.0 } else { 20.0 });
        let window = Window::new(32.0, 32.0, 20.0).unwrap();
        let stages = region_stages(&lab, (32, 32), 10.0, 5.0, 0.2, &window).unwrap();
        let disc = BinaryMask::from_fn(64, 64, |x, y| in_disc(x, y, 32.0, 32.0, 8.0));
        assert_eq!(stages.component, disc);
        // Brute-force dilation: within 5 of some disc pixel.
        let oracle = BinaryMask::from_fn(64, 64, |x, y| {
            disc.iter_set().any(|(px, py)| in_disc(x, y, px as f64, py as f64, 5.0))
        });
        assert_eq!(stages.dilated, oracle);
        assert!(oracle.is_subset_of(&BinaryMask::from_fn(64, 64, |x, y| in_disc(x, y, 32.0, 32.0, 13.0))));
        // The dark rim normalizes to 0 and is cut away.
        assert_eq!(stages.region, disc);
    }

    #[test]
    fn halo_pixels_above_alpha_are_kept() {
        // Normalized luminance (95 - 75 t - 20) / 75 = 1 - t reaches 0.2 at t = 0.8.
        let lab = halo_disc(10.0);
        let window = Window::new(32.0, 32.0, 25.0).unwrap();
        let stages = region_stages(&lab, (32, 32), 10.0, 5.0, 0.2, &window).unwrap();
        for (x, y) in stages.region.iter_set() {
            assert!(lab.l.get(x, y) >= 20.0 + 0.2 * 75.0 - 1e-9);
        }
        let expected = BinaryMask::from_fn(64, 64, |x, y| {
            stages.dilated.get(x, y) && lab.l.get(x, y) >= 35.0 - 1e-9
        });
        assert_eq!(stages.region, expected);
        assert!(stages.region.count() > stages.component.count());
    }

    #[test]
    fn alpha_zero_keeps_the_whole_dilation() {
        let lab = halo_disc(6.0);
        let window = Window::new(32.0, 32.0, 25.0).unwrap();
        let stages = region_stages(&lab, (32, 32), 10.0, 5.0, 0.0, &window).unwrap();
        assert_eq!(stages.region, stages.dilated);
    }

    #[test]
    fn isolated_seed_stays_within_epsilon() {
        let lab = lab_from_l(40, 40, |x, y| if (x, y) == (20, 20) { 90.0 } else { ((x + y) % 2) as f64 * 60.0 });
        let window = Window::new(20.0, 20.0, 15.0).unwrap();
        let stages = region_stages(&lab, (20, 20), 10.0, 5.0, 0.0, &window).unwrap();
        assert_eq!(stages.component.count(), 1);
        assert!(stages
            .region
            .is_subset_of(&BinaryMask::from_fn(40, 40, |x, y| in_disc(x, y, 20.0, 20.0, 5.0))));
    }

    #[test]
    fn empty_region_drops_the_detection() {
        // The seed sits at the window minimum and alpha demands the maximum.
        let lab = lab_from_l(40, 40, |x, _| x as f64 * 2.0);
        let window = Window::new(20.0, 20.0, 10.0).unwrap();
        let det = detection_at(10, 20, window);
        let none = build_flare_region(&lab, &det, 1.0, 1.0, 1.0, &window).unwrap();
        assert!(none.is_none());
        let some = build_flare_region(&lab, &det, 1.0, 1.0, 0.0, &window).unwrap().unwrap();
        assert!(some.mask.get(10, 20));
    }

    #[test]
    fn merge_examples() {
        let window = Window::new(0.0, 0.0, 1.0).unwrap();
        let region = |pixels: &[(usize, usize)]| FlareRegion {
            mask: BinaryMask::from_pixels(30, 30, pixels),
            detection: detection_at(0, 0, window),
        };
        let a: Vec<_> = (0..50).map(|i| (i % 10, i / 10)).collect();
        let b: Vec<_> = (0..30).map(|i| (15 + i % 10, 20 + i / 10)).collect();
        let ra = region(&a);
        let rb = region(&b);
        assert_eq!(merge_masks(std::slice::from_ref(&ra), (30, 30)).unwrap(), ra.mask);
        assert_eq!(merge_masks(&[ra.clone(), rb], (30, 30)).unwrap().count(), 80);
        assert_eq!(merge_masks(&[ra.clone(), ra.clone()], (30, 30)).unwrap().count(), 50);
        assert!(merge_masks(&[], (30, 30)).unwrap().is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn region_is_nested_in_its_stages(halo in 2.0f64..15.0, delta in 1.0f64..30.0, eps in 0.5f64..8.0, alpha in 0.0f64..1.0) {
                let lab = halo_disc(halo);
                let window = Window::new(32.0, 32.0, 25.0).unwrap();
                let s = region_stages(&lab, (32, 32), delta, eps, alpha, &window).unwrap();
                prop_assert!(s.component.is_subset_of(&s.dilated));
                prop_assert!(s.region.is_subset_of(&s.dilated));
            }

            #[test]
            fn area_is_monotone_in_epsilon_and_alpha(halo in 2.0f64..15.0, e1 in 0.5f64..8.0, e2 in 0.5f64..8.0, a1 in 0.0f64..1.0, a2 in 0.0f64..1.0) {
                let lab = halo_disc(halo);
                let window = Window::new(32.0, 32.0, 25.0).unwrap();
                let area = |eps: f64, alpha: f64| {
                    region_stages(&lab, (32, 32), 10.0, eps, alpha, &window).unwrap().region.count()
                };
                let (elo, ehi) = (e1.min(e2), e1.max(e2));
                let (alo, ahi) = (a1.min(a2), a1.max(a2));
                prop_assert!(area(elo, alo) <= area(ehi, alo));
                prop_assert!(area(elo, ahi) <= area(elo, alo));
            }

            #[test]
            fn merged_area_is_subadditive(
                a in proptest::collection::vec((0usize..20, 0usize..20), 0..60),
                b in proptest::collection::vec((0usize..20, 0usize..20), 0..60),
            ) {
                let window = Window::new(0.0, 0.0, 1.0).unwrap();
                let ra = FlareRegion { mask: BinaryMask::from_pixels(20, 20, &a), detection: detection_at(0, 0, window) };
                let rb = FlareRegion { mask: BinaryMask::from_pixels(20, 20, &b), detection: detection_at(0, 0, window) };
                let merged = merge_masks(&[ra.clone(), rb.clone()], (20, 20)).unwrap().count();
                let sum = ra.mask.count() + rb.mask.count();
                let disjoint = ra.mask.intersection_count(&rb.mask).unwrap() == 0;
                prop_assert!(merged <= sum);
                prop_assert_eq!(merged == sum, disjoint);
            }
        }
    }
}
