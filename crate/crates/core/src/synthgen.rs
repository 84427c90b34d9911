//! Synthetic scenes with planted light sources, mirrored flare spots and
//! exact ground truth.
//!
//! Sources are anti-aliased neutral discs pushed past white so that they
//! saturate. Each flare is a flat-topped round bump with a Gaussian falloff,
//! blended towards its colour in Lab space, centred near the point
//! reflection of its source through the image centre.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FlareError, Result};
use crate::evaluate::GroundTruth;
use crate::imagecore::{lab_to_linear_rgb, linear_to_srgb, RgbImage};
use crate::morphology::BinaryMask;

/// Linear-light multiplier applied to source discs before clipping.
pub const SOURCE_GAIN: f64 = 1.3;
/// Minimum luminance raise of a ground-truth flare pixel.
pub const GT_RAISE: f64 = 2.0;
/// Largest admissible flare offset from the mirrored source, as a fraction
/// of the larger image dimension.
pub const MAX_JITTER_FRACTION: f64 = 0.05;

const SUPERSAMPLING: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Flat {
        l: f64,
        a: f64,
        b: f64,
    },
    /// Linear luminance ramp from `l0` to `l1` along direction `angle`.
    Gradient {
        l0: f64,
        l1: f64,
        angle: f64,
        a: f64,
        b: f64,
    },
    /// Sum of three random plane waves of luminance amplitude at most
    /// `amplitude` around `l`.
    Texture {
        l: f64,
        amplitude: f64,
        seed: u64,
        a: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub center: (f64, f64),
    pub radius: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlareSpec {
    pub center: (f64, f64),
    /// Radius of the flat top.
    pub radius: f64,
    pub peak_l: f64,
    pub a: f64,
    pub b: f64,
    /// Gaussian falloff width outside the flat top.
    pub falloff: f64,
}

impl FlareSpec {
    /// Blend weight towards the flare colour at distance `d` from the centre.
    pub fn weight(&self, d: f64) -> f64 {
        if d <= self.radius {
            1.0
        } else {
            let t = (d - self.radius) / self.falloff;
            (-0.5 * t * t).exp()
        }
    }

    /// Distance beyond which the weight is negligible.
    fn extent(&self) -> f64 {
        self.radius + 6.0 * self.falloff
    }
}

/// Flare `i` belongs to source `i`; sources without a flare come last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Background,
    pub sources: Vec<SourceSpec>,
    pub flares: Vec<FlareSpec>,
    /// Standard deviation of the additive noise, in units of full scale.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

/// Point reflection through the image centre `((w - 1) / 2, (h - 1) / 2)`.
pub fn mirror(p: (f64, f64), dims: (usize, usize)) -> (f64, f64) {
    (dims.0 as f64 - 1.0 - p.0, dims.1 as f64 - 1.0 - p.1)
}

fn in_gamut(lab: [f64; 3]) -> bool {
    lab_to_linear_rgb(lab).iter().all(|&c| (-1e-9..=1.0 + 1e-9).contains(&c))
}

impl SceneSpec {
    pub fn max_jitter(&self) -> f64 {
        MAX_JITTER_FRACTION * self.width.max(self.height) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(FlareError::InvalidDimensions {
                width: self.width,
                height: self.height,
            });
        }
        if self.flares.len() > self.sources.len() {
            return Err(FlareError::invalid("flares", "every flare needs its own source"));
        }
        if !(0.0..=1.0).contains(&self.noise_sigma) {
            return Err(FlareError::invalid("noise_sigma", "must lie in [0, 1]"));
        }
        for s in &self.sources {
            if !(s.radius > 0.0) {
                return Err(FlareError::invalid("sources", "radius must be positive"));
            }
        }
        let dims = (self.width, self.height);
        for (f, s) in self.flares.iter().zip(&self.sources) {
            let m = mirror(s.center, dims);
            if (f.center.0 - m.0).hypot(f.center.1 - m.1) > self.max_jitter() + 1e-9 {
                return Err(FlareError::invalid("flares", "flare is too far from the mirrored source"));
            }
            if !(f.a < 0.0) {
                return Err(FlareError::invalid("flares", "a* must be negative"));
            }
            if !(f.peak_l < s.l) {
                return Err(FlareError::invalid("flares", "peak L must stay below the source L"));
            }
            if !(f.radius > 0.0 && f.falloff > 0.0) {
                return Err(FlareError::invalid("flares", "radius and falloff must be positive"));
            }
            if !in_gamut([f.peak_l, f.a, f.b]) {
                return Err(FlareError::SpecOutOfGamut {
                    l: f.peak_l,
                    a: f.a,
                    b: f.b,
                });
            }
        }
        Ok(())
    }
}

/// Evaluates a background as a Lab colour per pixel.
struct BackgroundField {
    background: Background,
    waves: Vec<(f64, f64, f64)>,
    diag: f64,
}

impl BackgroundField {
    fn new(background: &Background, dims: (usize, usize)) -> Self {
        let waves = match background {
            Background::Texture { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..3)
                    .map(|_| {
                        let wavelength = rng.random_range(20.0..80.0);
                        let theta = rng.random_range(0.0..std::f64::consts::PI);
                        let phase = rng.random_range(0.0..std::f64::consts::TAU);
                        let k = std::f64::consts::TAU / wavelength;
                        (k * theta.cos(), k * theta.sin(), phase)
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Self {
            background: background.clone(),
            waves,
            diag: (dims.0 as f64).hypot(dims.1 as f64),
        }
    }

    fn lab(&self, x: f64, y: f64) -> [f64; 3] {
        match self.background {
            Background::Flat { l, a, b } => [l, a, b],
            Background::Gradient { l0, l1, angle, a, b } => {
                let t = ((x * angle.cos() + y * angle.sin()) / self.diag).clamp(0.0, 1.0);
                [l0 + (l1 - l0) * t, a, b]
            }
            Background::Texture { l, amplitude, a, b, .. } => {
                let s: f64 = self.waves.iter().map(|&(kx, ky, p)| (kx * x + ky * y + p).sin()).sum();
                [l + amplitude * s / self.waves.len() as f64, a, b]
            }
        }
    }
}

/// Fraction of the pixel square at `(x, y)` covered by the disc.
fn disc_coverage(x: usize, y: usize, cx: f64, cy: f64, r: f64) -> f64 {
    let n = SUPERSAMPLING;
    let mut inside = 0;
    for j in 0..n {
        for i in 0..n {
            let sx = x as f64 - 0.5 + (i as f64 + 0.5) / n as f64;
            let sy = y as f64 - 0.5 + (j as f64 + 0.5) / n as f64;
            if (sx - cx).powi(2) + (sy - cy).powi(2) <= r * r {
                inside += 1;
            }
        }
    }
    inside as f64 / (n * n) as f64
}

/// Renders the scene and its ground truth: pixels where some flare raises
/// the luminance by at least `GT_RAISE`.
pub fn render(spec: &SceneSpec) -> Result<(RgbImage, GroundTruth)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let field = BackgroundField::new(&spec.background, (w, h));
    let mut srgb = Vec::with_capacity(w * h);
    let mut gt = BinaryMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let bg = field.lab(x as f64, y as f64);
            let mut lab = bg;
            let mut raise = 0f64;
            for f in &spec.flares {
                let d = (x as f64 - f.center.0).hypot(y as f64 - f.center.1);
                if d > f.extent() {
                    continue;
                }
                let g = f.weight(d);
                let target = [f.peak_l, f.a, f.b];
                raise = raise.max(g * (f.peak_l - bg[0]));
                lab = std::array::from_fn(|c| lab[c] + g * (target[c] - lab[c]));
            }
            if raise >= GT_RAISE {
                gt.set(x, y, true);
            }
            let mut linear = lab_to_linear_rgb(lab);
            for s in &spec.sources {
                let d = (x as f64 - s.center.0).hypot(y as f64 - s.center.1);
                if d > s.radius + 1.0 {
                    continue;
                }
                let cov = disc_coverage(x, y, s.center.0, s.center.1, s.radius);
                let white = lab_to_linear_rgb([s.l, 0.0, 0.0]).map(|c| c * SOURCE_GAIN);
                linear = std::array::from_fn(|c| linear[c] + cov * (white[c] - linear[c]));
            }
            srgb.push(linear.map(linear_to_srgb));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("noise sigma is finite and non-negative"));
    let data = srgb
        .into_iter()
        .map(|p| {
            p.map(|c| {
                let n = noise.as_ref().map_or(0.0, |dist| dist.sample(&mut rng));
                ((c + n).clamp(0.0, 1.0) * 255.0).round() as u8
            })
        })
        .collect();
    let points = spec
        .flares
        .iter()
        .map(|f| (f.center.0.round() as usize, f.center.1.round() as usize))
        .collect();
    Ok((
        RgbImage::new(w, h, data)?,
        GroundTruth {
            flare_mask: gt,
            flare_points: Some(points),
        },
    ))
}

/// Distribution of random scenes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub min_sources: usize,
    pub max_sources: usize,
    /// Plant one flare per source when set.
    pub flares: bool,
    pub allow_texture: bool,
    pub max_noise_sigma: f64,
    /// Search window radius fraction the geometry must respect.
    pub window_fraction: f64,
    /// Bi-level radius the source size is budgeted for.
    pub delta: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            min_sources: 1,
            max_sources: 2,
            flares: true,
            allow_texture: true,
            max_noise_sigma: 2.0 / 255.0,
            window_fraction: 0.2,
            delta: 10.0,
        }
    }
}

fn sample_flare_look(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    loop {
        let l = rng.random_range(80.0..=98.0);
        let a = rng.random_range(-40.0..=-5.0);
        let b = rng.random_range(-30.0..=30.0);
        if in_gamut([l, a, b]) {
            return (l, a, b);
        }
    }
}

/// Radius of the flare region whose luminance stays within `delta` of the
/// peak, given a background luminance `bg_l`.
fn plateau_radius(radius: f64, falloff: f64, peak_l: f64, bg_l: f64, delta: f64) -> f64 {
    let contrast = peak_l - bg_l;
    if contrast <= delta {
        return radius + 6.0 * falloff;
    }
    let t = 1.0 - delta / contrast;
    radius + falloff * (2.0 * (1.0 / t).ln()).sqrt()
}

fn sample_background(rng: &mut ChaCha8Rng, allow_texture: bool) -> (Background, f64) {
    let a = rng.random_range(-4.0..=4.0);
    let b = rng.random_range(-4.0..=4.0);
    let kinds = if allow_texture { 3 } else { 2 };
    match rng.random_range(0..kinds) {
        0 => {
            let l = rng.random_range(20.0..=55.0);
            (Background::Flat { l, a, b }, l)
        }
        1 => {
            let l0 = rng.random_range(20.0..=55.0);
            let l1 = rng.random_range(20.0..=55.0);
            let angle = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
            (Background::Gradient { l0, l1, angle, a, b }, l0.max(l1))
        }
        _ => {
            let amplitude = rng.random_range(3.0..=8.0);
            let l = rng.random_range(20.0 + amplitude..=55.0 - amplitude);
            let seed = rng.random();
            (Background::Texture { l, amplitude, seed, a, b }, l + amplitude)
        }
    }
}

fn dist(p: (f64, f64), q: (f64, f64)) -> f64 {
    (p.0 - q.0).hypot(p.1 - q.1)
}

/// Draws a scene from `cfg`. The geometry is rejection sampled so that
/// every search window holds its own flare and nothing from other sources.
pub fn random_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneSpec> {
    if cfg.min_sources == 0 || cfg.min_sources > cfg.max_sources {
        return Err(FlareError::invalid("min_sources", "must be in 1..=max_sources"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = (cfg.width, cfg.height);
    let window_radius = cfg.window_fraction * cfg.width.max(cfg.height) as f64;
    let jitter = MAX_JITTER_FRACTION * cfg.width.max(cfg.height) as f64;
    for _ in 0..10_000 {
        let (background, bg_max) = sample_background(&mut rng, cfg.allow_texture);
        let n = rng.random_range(cfg.min_sources..=cfg.max_sources);
        let mut flares: Vec<FlareSpec> = (0..n)
            .map(|_| {
                let (peak_l, a, b) = sample_flare_look(&mut rng);
                FlareSpec {
                    center: (0.0, 0.0),
                    radius: rng.random_range(3.0..=5.0),
                    peak_l,
                    a,
                    b,
                    falloff: rng.random_range(1.2..=2.0),
                }
            })
            .collect();
        // Source discs get 150 times the area of the largest flare plateau so
        // the plateau passes the bounded-area test with some slack for noise.
        let needed = flares
            .iter()
            .map(|f| (plateau_radius(f.radius, f.falloff, f.peak_l, bg_max, cfg.delta) + 1.0) * 150f64.sqrt())
            .fold(0.0, f64::max);
        let base_radius = needed / 0.97;
        let mut sources = Vec::with_capacity(n);
        for i in 0..n {
            let radius = if i == 0 { base_radius } else { base_radius * rng.random_range(0.97..=1.0) };
            let cx = rng.random_range(radius + 2.0..=cfg.width as f64 - radius - 3.0);
            let cy = rng.random_range(radius + 2.0..=cfg.height as f64 - radius - 3.0);
            sources.push(SourceSpec {
                center: (cx, cy),
                radius,
                l: 100.0,
            });
        }
        if sources.iter().any(|s| !(s.radius + 2.0 < cfg.width as f64 - s.radius - 3.0)) {
            continue;
        }
        for (f, s) in flares.iter_mut().zip(&sources) {
            let m = mirror(s.center, dims);
            loop {
                let r = jitter * rng.random::<f64>().sqrt();
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let c = ((m.0 + r * th.cos()).round(), (m.1 + r * th.sin()).round());
                if dist(c, m) <= jitter {
                    f.center = c;
                    break;
                }
            }
        }
        let windows: Vec<(f64, f64)> = sources.iter().map(|s| mirror(s.center, dims)).collect();
        let margin = 8.0;
        let sources_clear = windows.iter().all(|&wc| {
            let wc = (wc.0.clamp(0.0, cfg.width as f64 - 1.0), wc.1.clamp(0.0, cfg.height as f64 - 1.0));
            sources.iter().all(|s| dist(wc, s.center) > window_radius + s.radius + margin)
        });
        let flares_apart = windows.iter().enumerate().all(|(i, &wc)| {
            flares
                .iter()
                .enumerate()
                .all(|(j, f)| i == j || dist(wc, f.center) > window_radius + f.extent() + margin)
        });
        let sources_apart = sources.iter().enumerate().all(|(i, a)| {
            sources[i + 1..]
                .iter()
                .all(|b| dist(a.center, b.center) > a.radius + b.radius + 2.0 * margin)
        });
        let flares_inside = flares.iter().all(|f| {
            let e = f.extent();
            f.center.0 >= e && f.center.1 >= e && f.center.0 + e < cfg.width as f64 && f.center.1 + e < cfg.height as f64
        });
        if !(sources_clear && flares_apart && sources_apart && flares_inside) {
            continue;
        }
        if !cfg.flares {
            flares.clear();
        }
        let noise_sigma = rng.random_range(0.0..=cfg.max_noise_sigma);
        return Ok(SceneSpec {
            width: cfg.width,
            height: cfg.height,
            background,
            sources,
            flares,
            noise_sigma,
            rng_seed: rng.random(),
        });
    }
    Err(FlareError::invalid("scene", "no admissible geometry found"))
}
