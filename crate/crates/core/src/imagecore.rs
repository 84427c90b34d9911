//! Image containers, sRGB <-> CIELab conversion and windowed luminance
//! normalization.
//!
//! All planes are row-major. Colour math runs in `f64`; 8-bit data only
//! appears in [`RgbImage`], at the I/O boundary.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlareError, Result};

/// D65 reference white in XYZ, Y normalized to 1.
pub const D65_WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(FlareError::InvalidDimensions { width, height });
    }
    Ok(())
}

/// 8-bit sRGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(FlareError::BufferSize {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.data[y * self.width + x] = rgb;
    }
}

/// A single float plane (luminance, normalized luminance, DoG response...).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayPlane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayPlane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(FlareError::BufferSize {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(FlareError::invalid(
                "values",
                format!("non-finite value at index {bad}"),
            ));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    /// Builds a plane without re-validating; used for internal results whose
    /// dimensions are already known to be consistent.
    pub(crate) fn from_raw(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayPlane {
        GrayPlane::from_raw(
            self.width,
            self.height,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// CIELab image: `l` in [0, 100], `a` and `b` unbounded chroma planes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub l: GrayPlane,
    pub a: GrayPlane,
    pub b: GrayPlane,
}

impl LabImage {
    pub fn new(l: GrayPlane, a: GrayPlane, b: GrayPlane) -> Result<Self> {
        if l.dims() != a.dims() || l.dims() != b.dims() {
            return Err(FlareError::DimensionMismatch {
                left: l.dims(),
                right: if l.dims() != a.dims() { a.dims() } else { b.dims() },
            });
        }
        Ok(Self { l, a, b })
    }

    pub fn width(&self) -> usize {
        self.l.width()
    }

    pub fn height(&self) -> usize {
        self.l.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.l.dims()
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        [self.l.get(x, y), self.a.get(x, y), self.b.get(x, y)]
    }
}

fn srgb_lut() -> &'static [f64; 256] {
    static LUT: OnceLock<[f64; 256]> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = [0.0; 256];
        for (i, v) in lut.iter_mut().enumerate() {
            *v = srgb_to_linear(i as f64 / 255.0);
        }
        lut
    })
}

/// sRGB transfer function, [0,1] -> linear [0,1].
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse sRGB transfer function. Negative inputs are mirrored so that
/// out-of-gamut values stay finite.
pub fn linear_to_srgb(c: f64) -> f64 {
    if c.abs() <= 0.003_130_8 {
        c * 12.92
    } else {
        c.signum() * (1.055 * c.abs().powf(1.0 / 2.4) - 0.055)
    }
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let f3 = f * f * f;
    if f3 > LAB_EPSILON {
        f3
    } else {
        (116.0 * f - 16.0) / LAB_KAPPA
    }
}

/// Linear RGB -> CIELab (D65).
pub fn linear_rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz: [f64; 3] =
        std::array::from_fn(|i| (0..3).map(|j| SRGB_TO_XYZ[i][j] * rgb[j]).sum::<f64>());
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIELab (D65) -> linear RGB. The result is not clamped; components outside
/// [0, 1] indicate an out-of-gamut colour.
pub fn lab_to_linear_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * D65_WHITE[0],
        lab_f_inv(fy) * D65_WHITE[1],
        lab_f_inv(fz) * D65_WHITE[2],
    ];
    std::array::from_fn(|i| (0..3).map(|j| XYZ_TO_SRGB[i][j] * xyz[j]).sum::<f64>())
}

/// One 8-bit sRGB pixel -> CIELab.
pub fn rgb8_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lut = srgb_lut();
    linear_rgb_to_lab([
        lut[rgb[0] as usize],
        lut[rgb[1] as usize],
        lut[rgb[2] as usize],
    ])
}

/// CIELab -> gamma-encoded sRGB in [0,1] (unclamped).
pub fn lab_to_srgb(lab: [f64; 3]) -> [f64; 3] {
    lab_to_linear_rgb(lab).map(linear_to_srgb)
}

/// Converts an sRGB image to CIELab under the D65 white point.
pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let (w, h) = img.dims();
    let lab: Vec<[f64; 3]> = img.pixels().par_iter().map(|&p| rgb8_to_lab(p)).collect();
    let plane = |c: usize| GrayPlane::from_raw(w, h, lab.iter().map(|v| v[c]).collect());
    LabImage {
        l: plane(0),
        a: plane(1),
        b: plane(2),
    }
}

/// Disc-shaped search window. Only its intersection with the image domain is
/// ever used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Window {
    pub fn new(cx: f64, cy: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(FlareError::invalid("radius", "window radius must be positive"));
        }
        Ok(Self { cx, cy, radius })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` clipped to the domain,
    /// or `None` when the window misses the domain entirely.
    pub fn clipped_bounds(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = (self.cx - self.radius).ceil().max(0.0);
        let y0 = (self.cy - self.radius).ceil().max(0.0);
        let x1 = (self.cx + self.radius).floor().min(width as f64 - 1.0);
        let y1 = (self.cy + self.radius).floor().min(height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return None;
        }
        Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }

    /// Pixels of the window inside the domain, in raster order.
    pub fn pixels(&self, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let bounds = self.clipped_bounds(width, height);
        bounds
            .into_iter()
            .flat_map(|(x0, y0, x1, y1)| (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| (x, y))))
            .filter(move |&(x, y)| self.contains(x, y))
    }
}

/// Luminance rescaled by the extrema found inside a window.
///
/// `plane` covers the whole domain: inside the window it is exactly
/// `(L - min) / (max - min)`; outside, the same affine map is applied and
/// clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct NormalizedWindow {
    pub window: Window,
    pub min: f64,
    pub max: f64,
    pub plane: GrayPlane,
}

impl NormalizedWindow {
    /// Normalized value at a pixel of the window.
    pub fn value_at(&self, x: usize, y: usize) -> Result<f64> {
        if x >= self.plane.width() || y >= self.plane.height() || !self.window.contains(x, y) {
            return Err(FlareError::OutOfWindow { x, y });
        }
        Ok(self.plane.get(x, y))
    }
}

/// Rescales `plane` to [0, 1] using the minimum and maximum over the clipped
/// window. A constant window maps to all zeros.
pub fn normalize_window(plane: &GrayPlane, window: &Window) -> Result<NormalizedWindow> {
    let (w, h) = plane.dims();
    let (min, max) = window
        .pixels(w, h)
        .map(|(x, y)| plane.get(x, y))
        .fold(None, |acc: Option<(f64, f64)>, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .ok_or(FlareError::EmptyWindow {
            cx: window.cx,
            cy: window.cy,
            radius: window.radius,
        })?;
    let range = max - min;
    let normalized = if range > 0.0 {
        plane.map(|v| ((v - min) / range).clamp(0.0, 1.0))
    } else {
        plane.map(|_| 0.0)
    };
    Ok(NormalizedWindow {
        window: *window,
        min,
        max,
        plane: normalized,
    })
}
