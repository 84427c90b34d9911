//! Gaussian / difference-of-Gaussians scale space and bright-blob keypoints.
//!
//! The ladder runs at full resolution (no octave subsampling). Bright blobs
//! are strict local minima of the DoG over their 26 scale-space neighbours.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FlareError, Result};
use crate::imagecore::GrayPlane;

/// Gaussian kernels are truncated at this many standard deviations.
pub const KERNEL_TRUNCATION: f64 = 4.0;

/// DoG values above `-RESPONSE_FLOOR` are treated as zero; this only screens
/// out floating-point residue in flat regions.
pub const RESPONSE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ScaleLevel {
    pub sigma: f64,
    pub plane: GrayPlane,
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    /// Gaussian-blurred planes `L(., sigma)`, sigma increasing by `k`.
    pub levels: Vec<ScaleLevel>,
    /// `dogs[i] = levels[i + 1] - levels[i]`, tagged with `levels[i].sigma`.
    pub dogs: Vec<ScaleLevel>,
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub scale_index: usize,
    pub sigma: f64,
    /// DoG value at the extremum (negative for bright blobs).
    pub response: f64,
    /// Eigenvalues of the spatial Hessian of the DoG, `lambda1 <= lambda2`.
    pub hessian_eigen: (f64, f64),
}

/// `sigma_min * k^i` up to and including the first value `>= sigma_max`.
pub fn sigma_ladder(sigma_min: f64, sigma_max: f64, k: f64) -> Vec<f64> {
    let mut out = vec![sigma_min];
    let mut i = 0;
    while *out.last().unwrap() < sigma_max {
        i += 1;
        out.push(sigma_min * k.powi(i));
    }
    out
}

/// Normalized, truncated 1-D Gaussian kernel (centre tap first).
fn half_kernel(sigma: f64) -> Vec<f64> {
    let radius = (KERNEL_TRUNCATION * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum = k[0] + 2.0 * k[1..].iter().sum::<f64>();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric reflection of `i` into `0..n`.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(plane: &GrayPlane, sigma: f64) -> GrayPlane {
    let (w, h) = plane.dims();
    let kernel = half_kernel(sigma);
    let r = kernel.len() - 1;
    let src = plane.values();

    // Horizontal pass.
    let mut tmp = vec![0.0; w * h];
    let mut padded = vec![0.0; w + 2 * r];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (i, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(i as i64 - r as i64, w)];
        }
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let c = x + r;
            let mut acc = kernel[0] * padded[c];
            for (j, &kj) in kernel.iter().enumerate().skip(1) {
                acc += kj * (padded[c - j] + padded[c + j]);
            }
            *o = acc;
        }
    }

    // Vertical pass, accumulated row by row.
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        let centre = &tmp[y * w..(y + 1) * w];
        for (d, &c) in dst.iter_mut().zip(centre) {
            *d = kernel[0] * c;
        }
        for (j, &kj) in kernel.iter().enumerate().skip(1) {
            let up = reflect(y as i64 - j as i64, h);
            let down = reflect(y as i64 + j as i64, h);
            let a = &tmp[up * w..(up + 1) * w];
            let b = &tmp[down * w..(down + 1) * w];
            for ((d, &va), &vb) in dst.iter_mut().zip(a).zip(b) {
                *d += kj * (va + vb);
            }
        }
    }
    GrayPlane::from_raw(w, h, out)
}

/// Builds the Gaussian ladder plus one extra level above it, and the DoG
/// planes between consecutive levels.
pub fn build_scalespace(gray: &GrayPlane, sigma_min: f64, sigma_max: f64, k: f64) -> Result<ScaleSpace> {
    if !(sigma_min > 0.0 && sigma_min < sigma_max) {
        return Err(FlareError::invalid(
            "sigma_min",
            format!("need 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"),
        ));
    }
    if !(k > 1.0) {
        return Err(FlareError::invalid("k", format!("scale factor must exceed 1, got {k}")));
    }
    let (w, h) = gray.dims();
    if (w.min(h) as f64) < 4.0 * sigma_min {
        return Err(FlareError::ImageTooSmall {
            width: w,
            height: h,
            sigma_min,
        });
    }
    let mut sigmas = sigma_ladder(sigma_min, sigma_max, k);
    sigmas.push(sigma_min * k.powi(sigmas.len() as i32));

    let levels: Vec<ScaleLevel> = sigmas
        .par_iter()
        .map(|&sigma| ScaleLevel {
            sigma,
            plane: gaussian_blur(gray, sigma),
        })
        .collect();
    let dogs: Vec<ScaleLevel> = levels
        .par_windows(2)
        .map(|pair| {
            let diff = pair[1]
                .plane
                .values()
                .iter()
                .zip(pair[0].plane.values())
                .map(|(hi, lo)| hi - lo)
                .collect();
            ScaleLevel {
                sigma: pair[0].sigma,
                plane: GrayPlane::from_raw(w, h, diff),
            }
        })
        .collect();
    Ok(ScaleSpace { levels, dogs, k })
}

fn is_strict_minimum(below: &GrayPlane, here: &GrayPlane, above: &GrayPlane, x: usize, y: usize) -> bool {
    let v = here.get(x, y);
    for ny in y - 1..=y + 1 {
        for nx in x - 1..=x + 1 {
            if below.get(nx, ny) <= v || above.get(nx, ny) <= v {
                return false;
            }
            if (nx != x || ny != y) && here.get(nx, ny) <= v {
                return false;
            }
        }
    }
    true
}

/// Eigenvalues `(lambda1, lambda2)` of the central-difference Hessian of
/// `plane` at an interior pixel, ascending.
pub fn hessian_eigenvalues(plane: &GrayPlane, x: usize, y: usize) -> (f64, f64) {
    let c = plane.get(x, y);
    let dxx = plane.get(x + 1, y) - 2.0 * c + plane.get(x - 1, y);
    let dyy = plane.get(x, y + 1) - 2.0 * c + plane.get(x, y - 1);
    let dxy = (plane.get(x + 1, y + 1) - plane.get(x + 1, y - 1) - plane.get(x - 1, y + 1)
        + plane.get(x - 1, y - 1))
        / 4.0;
    let mean = 0.5 * (dxx + dyy);
    let spread = (0.25 * (dxx - dyy) * (dxx - dyy) + dxy * dxy).sqrt();
    (mean - spread, mean + spread)
}

/// Strict negative local minima of the DoG stack, ordered by scale index and
/// then raster position. The outermost DoG planes and the one-pixel image
/// border are never reported.
pub fn detect_keypoints(ss: &ScaleSpace) -> Vec<Keypoint> {
    if ss.dogs.len() < 3 {
        return Vec::new();
    }
    let (w, h) = ss.dogs[0].plane.dims();
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let per_scale: Vec<Vec<Keypoint>> = (1..ss.dogs.len() - 1)
        .into_par_iter()
        .map(|s| {
            let below = &ss.dogs[s - 1].plane;
            let here = &ss.dogs[s].plane;
            let above = &ss.dogs[s + 1].plane;
            let mut found = Vec::new();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = here.get(x, y);
                    if v < -RESPONSE_FLOOR && is_strict_minimum(below, here, above, x, y) {
                        found.push(Keypoint {
                            x,
                            y,
                            scale_index: s,
                            sigma: ss.dogs[s].sigma,
                            response: v,
                            hessian_eigen: hessian_eigenvalues(here, x, y),
                        });
                    }
                }
            }
            found
        })
        .collect();
    per_scale.into_iter().flatten().collect()
}

/// Accepts round blobs: `lambda1 > 0` and `lambda2 < 4 * lambda1`.
pub fn elongation_ok(kp: &Keypoint) -> bool {
    let (l1, l2) = kp.hessian_eigen;
    l1 > 0.0 && l2 < 4.0 * l1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(width: usize, height: usize, cx: f64, cy: f64, sigma: f64, amp: f64, base: f64) -> GrayPlane {
        GrayPlane::from_fn(width, height, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            base + amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .unwrap()
    }

    fn kp_with(l1: f64, l2: f64) -> Keypoint {
        Keypoint {
            x: 0,
            y: 0,
            scale_index: 1,
            sigma: 3.0,
            response: -1.0,
            hessian_eigen: (l1, l2),
        }
    }

    #[test]
    fn ladder_matches_geometric_sequence() {
        let k = 2f64.powf(0.2);
        let s = sigma_ladder(3.0, 15.0, k);
        assert!((s[1] - 3.446).abs() < 1e-3);
        assert!((s[2] - 3.959).abs() < 1e-3);
        assert!(*s.last().unwrap() >= 15.0);
        assert!(s[s.len() - 2] < 15.0);
        assert_eq!(s.len(), 13);
    }

    #[test]
    fn kernel_sums_to_one() {
        for sigma in [0.8, 3.0, 7.3, 15.0] {
            let k = half_kernel(sigma);
            let sum = k[0] + 2.0 * k[1..].iter().sum::<f64>();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reflect_handles_multiple_bounces() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(12, 5), 2);
        assert_eq!(reflect(-7, 3), 0);
    }

    #[test]
    fn constant_plane_has_flat_dog_and_no_keypoints() {
        let plane = GrayPlane::filled(64, 48, 42.0).unwrap();
        let ss = build_scalespace(&plane, 3.0, 15.0, 2f64.powf(0.2)).unwrap();
        for dog in &ss.dogs {
            assert!(dog.plane.values().iter().all(|v| v.abs() < 1e-9));
        }
        assert!(detect_keypoints(&ss).is_empty());
    }

    #[test]
    fn too_small_image_is_rejected() {
        let plane = GrayPlane::filled(11, 40, 1.0).unwrap();
        assert!(matches!(
            build_scalespace(&plane, 3.0, 15.0, 1.2),
            Err(FlareError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn single_blob_yields_one_centered_keypoint() {
        let plane = blob(96, 96, 47.0, 49.0, 6.0, 60.0, 20.0);
        let ss = build_scalespace(&plane, 3.0, 15.0, 2f64.powf(0.2)).unwrap();
        let kps = detect_keypoints(&ss);
        assert_eq!(kps.len(), 1, "{kps:?}");
        assert!(kps[0].x.abs_diff(47) <= 1 && kps[0].y.abs_diff(49) <= 1);
        assert!(kps[0].response < 0.0);
        assert!(elongation_ok(&kps[0]));
        let (l1, l2) = kps[0].hessian_eigen;
        assert!(l2 / l1 <= 1.5);
    }

    #[test]
    fn dark_blob_center_is_not_a_keypoint() {
        let bright = blob(128, 80, 35.0, 40.0, 5.0, 40.0, 0.0);
        let dark = blob(128, 80, 92.0, 40.0, 5.0, -40.0, 50.0);
        let plane = GrayPlane::new(
            128,
            80,
            bright.values().iter().zip(dark.values()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let ss = build_scalespace(&plane, 3.0, 15.0, 2f64.powf(0.2)).unwrap();
        let kps = detect_keypoints(&ss);
        // The dark blob leaves a faint ring of minima in its surround but
        // never a keypoint at its own centre.
        assert!(kps.iter().all(|k| k.x.abs_diff(92) + k.y.abs_diff(40) > 5), "{kps:?}");
        let strongest = kps.iter().min_by(|a, b| a.response.total_cmp(&b.response)).unwrap();
        assert!(strongest.x.abs_diff(35) <= 1 && strongest.y.abs_diff(40) <= 1);
        assert!(kps.iter().filter(|k| k.x.abs_diff(35) <= 1).count() == 1);
    }

    #[test]
    fn anisotropic_ridge_fails_elongation() {
        let plane = GrayPlane::from_fn(160, 100, |x, y| {
            let dx = (x as f64 - 80.0) / 16.0;
            let dy = (y as f64 - 50.0) / 4.0;
            10.0 + 60.0 * (-(dx * dx + dy * dy) / 2.0).exp()
        })
        .unwrap();
        let ss = build_scalespace(&plane, 3.0, 15.0, 2f64.powf(0.2)).unwrap();
        let kps = detect_keypoints(&ss);
        assert!(!kps.is_empty());
        for kp in &kps {
            let (l1, l2) = kp.hessian_eigen;
            assert!(l1 <= 0.0 || l2 / l1 >= 4.0, "{kp:?}");
            assert!(!elongation_ok(kp));
        }
    }

    #[test]
    fn detected_scale_grows_with_blob_size() {
        let k = 2f64.powf(0.2);
        let scale_of = |sigma_b: f64| {
            let plane = blob(128, 128, 64.0, 64.0, sigma_b, 50.0, 10.0);
            let ss = build_scalespace(&plane, 3.0, 15.0, k).unwrap();
            let kps = detect_keypoints(&ss);
            assert_eq!(kps.len(), 1);
            kps[0].sigma
        };
        assert!(scale_of(4.0) < scale_of(6.0));
        assert!(scale_of(6.0) < scale_of(9.0));
    }

    #[test]
    fn response_ignores_constant_offset() {
        let k = 2f64.powf(0.2);
        let a = blob(80, 80, 40.0, 40.0, 5.0, 30.0, 0.0);
        let b = a.map(|v| v + 37.5);
        let ka = detect_keypoints(&build_scalespace(&a, 3.0, 15.0, k).unwrap());
        let kb = detect_keypoints(&build_scalespace(&b, 3.0, 15.0, k).unwrap());
        assert_eq!(ka.len(), kb.len());
        for (p, q) in ka.iter().zip(&kb) {
            assert_eq!((p.x, p.y, p.scale_index), (q.x, q.y, q.scale_index));
            assert!((p.response - q.response).abs() < 1e-9);
        }
    }

    #[test]
    fn elongation_examples() {
        assert!(elongation_ok(&kp_with(1.0, 2.0)));
        assert!(!elongation_ok(&kp_with(1.0, 4.0)));
        assert!(!elongation_ok(&kp_with(0.0, 3.0)));
    }

    #[test]
    fn hessian_of_quadratic_bowl() {
        // f = 2x^2 + 0.5y^2 -> dxx = 4, dyy = 1.
        let plane = GrayPlane::from_fn(5, 5, |x, y| {
            let (x, y) = (x as f64 - 2.0, y as f64 - 2.0);
            2.0 * x * x + 0.5 * y * y
        })
        .unwrap();
        let (l1, l2) = hessian_eigenvalues(&plane, 2, 2);
        assert!((l1 - 1.0).abs() < 1e-12 && (l2 - 4.0).abs() < 1e-12);
    }
}
