//! Exemplar-based hole filling by patch non-local medians.
//!
//! Every patch centre whose patch touches the hole is assigned a fully known
//! source patch (the correspondence map). The filling alternates between
//! improving the correspondences and setting each hole pixel to the
//! per-channel median of the values proposed by all overlapping patches. The
//! patch error is the sum of absolute channel differences, for which the
//! median update is an exact minimizer, so the total energy never increases
//! at a fixed scale. The scheme runs coarse to fine, starting from a
//! diffusion fill at the coarsest scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FlareError, Result};
use crate::imagecore::RgbImage;
use crate::morphology::{self, BinaryMask};

pub const DEFAULT_PATCH_SIDE: usize = 7;
pub const DEFAULT_ITERATIONS: usize = 10;
/// Below this many source patches the search is exhaustive.
pub const EXHAUSTIVE_LIMIT: usize = 10_000;
/// Largest admissible hole, as a fraction of the image area.
pub const MAX_HOLE_FRACTION: f64 = 0.5;

const NO_CENTER: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct InpaintProblem {
    pub image: RgbImage,
    pub hole: BinaryMask,
    /// Odd patch side length.
    pub patch_side: usize,
    /// Pyramid depth; `None` derives it from the hole diameter.
    pub levels: Option<usize>,
    /// Search and update rounds per pyramid level.
    pub iterations: usize,
    pub seed: u64,
}

impl InpaintProblem {
    pub fn new(image: RgbImage, hole: BinaryMask) -> Result<Self> {
        let p = Self {
            image,
            hole,
            patch_side: DEFAULT_PATCH_SIDE,
            levels: None,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.dims() != self.hole.dims() {
            return Err(FlareError::DimensionMismatch {
                left: self.image.dims(),
                right: self.hole.dims(),
            });
        }
        if self.patch_side < 3 || self.patch_side % 2 == 0 {
            return Err(FlareError::invalid("patch_side", "must be odd and at least 3"));
        }
        if self.iterations == 0 {
            return Err(FlareError::invalid("iterations", "must be at least 1"));
        }
        if self.levels == Some(0) {
            return Err(FlareError::invalid("levels", "must be at least 1"));
        }
        let (w, h) = self.image.dims();
        if w < self.patch_side || h < self.patch_side {
            return Err(FlareError::invalid("patch_side", format!("exceeds the {w}x{h} image")));
        }
        Ok(())
    }
}

/// `max(1, floor(log2(d / 8))) + 1` pyramid levels for a hole of diameter `d`.
pub fn default_levels(hole_diameter: usize) -> usize {
    let steps = (hole_diameter as f64 / 8.0).log2().floor();
    if steps >= 1.0 {
        steps as usize + 1
    } else {
        2
    }
}

/// Largest bounding-box side over the 8-connected components of the hole.
pub fn hole_diameter(hole: &BinaryMask) -> usize {
    morphology::connected_components(hole)
        .iter()
        .map(|c| {
            let (x0, y0, x1, y1) = c.bounds();
            (x1 - x0 + 1).max(y1 - y0 + 1)
        })
        .max()
        .unwrap_or(0)
}

/// One scale of the problem: pixel values, hole, and the patch geometry
/// derived from them.
#[derive(Debug, Clone)]
pub struct Level {
    width: usize,
    height: usize,
    radius: usize,
    pub pixels: Vec<[f32; 3]>,
    hole: Vec<bool>,
    valid: Vec<bool>,
    sources: Vec<(usize, usize)>,
    centers: Vec<(usize, usize)>,
    center_index: Vec<u32>,
}

impl Level {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<[f32; 3]>,
        hole: Vec<bool>,
        patch_side: usize,
    ) -> Result<Self> {
        let n = width * height;
        if pixels.len() != n || hole.len() != n {
            return Err(FlareError::BufferSize {
                expected: n,
                actual: pixels.len().min(hole.len()),
            });
        }
        if patch_side % 2 == 0 || width < patch_side || height < patch_side {
            return Err(FlareError::invalid("patch_side", "must be odd and fit in the image"));
        }
        let radius = patch_side / 2;
        // Summed-area table of hole pixels.
        let stride = width + 1;
        let mut sat = vec![0u32; stride * (height + 1)];
        for y in 0..height {
            let mut row = 0u32;
            for x in 0..width {
                row += hole[y * width + x] as u32;
                sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
            }
        }
        let count = |x0: usize, y0: usize, x1: usize, y1: usize| {
            sat[(y1 + 1) * stride + x1 + 1] + sat[y0 * stride + x0]
                - sat[y0 * stride + x1 + 1]
                - sat[(y1 + 1) * stride + x0]
        };
        let mut valid = vec![false; n];
        let mut sources = Vec::new();
        let mut centers = Vec::new();
        let mut center_index = vec![NO_CENTER; n];
        for y in radius..height - radius {
            for x in radius..width - radius {
                if count(x - radius, y - radius, x + radius, y + radius) == 0 {
                    valid[y * width + x] = true;
                    sources.push((x, y));
                } else {
                    center_index[y * width + x] = centers.len() as u32;
                    centers.push((x, y));
                }
            }
        }
        Ok(Self {
            width,
            height,
            radius,
            pixels,
            hole,
            valid,
            sources,
            centers,
            center_index,
        })
    }

    pub fn from_rgb(image: &RgbImage, hole: &BinaryMask, patch_side: usize) -> Result<Self> {
        if image.dims() != hole.dims() {
            return Err(FlareError::DimensionMismatch {
                left: image.dims(),
                right: hole.dims(),
            });
        }
        let pixels = image
            .pixels()
            .iter()
            .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
            .collect();
        Self::new(image.width(), image.height(), pixels, hole.bits().to_vec(), patch_side)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Patch centres whose patch overlaps the hole, in raster order.
    pub fn centers(&self) -> &[(usize, usize)] {
        &self.centers
    }

    /// Centres of fully known patches, in raster order.
    pub fn sources(&self) -> &[(usize, usize)] {
        &self.sources
    }

    pub fn is_hole(&self, x: usize, y: usize) -> bool {
        self.hole[y * self.width + x]
    }

    pub fn is_source(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    /// Sum of absolute channel differences between the patches at `a` and `b`.
    pub fn patch_distance(&self, a: (usize, usize), b: (usize, usize)) -> f32 {
        self.sad(a, b, f32::INFINITY)
    }

    /// Patch distance that may stop early once it exceeds `bound`; the
    /// returned value is then some partial sum above `bound`.
    fn sad(&self, a: (usize, usize), b: (usize, usize), bound: f32) -> f32 {
        let side = 2 * self.radius + 1;
        let mut s = 0f32;
        for dy in 0..side {
            let ra = (a.1 + dy - self.radius) * self.width + a.0 - self.radius;
            let rb = (b.1 + dy - self.radius) * self.width + b.0 - self.radius;
            for (pa, pb) in self.pixels[ra..ra + side].iter().zip(&self.pixels[rb..rb + side]) {
                s += (pa[0] - pb[0]).abs() + (pa[1] - pb[1]).abs() + (pa[2] - pb[2]).abs();
            }
            if s > bound {
                return s;
            }
        }
        s
    }

    /// Half-resolution level. A coarse pixel is a hole pixel when any of its
    /// children is.
    fn downsample(&self) -> Result<Level> {
        let (w, h) = ((self.width + 1) / 2, (self.height + 1) / 2);
        let mut pixels = Vec::with_capacity(w * h);
        let mut hole = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0f32; 3];
                let mut n = 0f32;
                let mut any_hole = false;
                for cy in 2 * y..(2 * y + 2).min(self.height) {
                    for cx in 2 * x..(2 * x + 2).min(self.width) {
                        let p = self.pixel(cx, cy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                        n += 1.0;
                        any_hole |= self.is_hole(cx, cy);
                    }
                }
                pixels.push(acc.map(|v| v / n));
                hole.push(any_hole);
            }
        }
        Level::new(w, h, pixels, hole, 2 * self.radius + 1)
    }

    /// Fills the hole by iterated 4-neighbour averaging, starting from the
    /// mean known colour.
    fn diffuse_fill(&mut self) {
        let (w, h) = (self.width, self.height);
        let holes: Vec<usize> = (0..w * h).filter(|&i| self.hole[i]).collect();
        let known: Vec<&[f32; 3]> = (0..w * h).filter(|&i| !self.hole[i]).map(|i| &self.pixels[i]).collect();
        let mut mean = [0f32; 3];
        for p in &known {
            for c in 0..3 {
                mean[c] += p[c] / known.len().max(1) as f32;
            }
        }
        for &i in &holes {
            self.pixels[i] = mean;
        }
        for _ in 0..10_000 {
            let mut change = 0f32;
            for &i in &holes {
                let (x, y) = (i % w, i / w);
                let mut acc = [0f32; 3];
                let mut n = 0f32;
                let neighbours = [
                    (x > 0).then(|| i - 1),
                    (x + 1 < w).then(|| i + 1),
                    (y > 0).then(|| i - w),
                    (y + 1 < h).then(|| i + w),
                ];
                for j in neighbours.into_iter().flatten() {
                    for c in 0..3 {
                        acc[c] += self.pixels[j][c];
                    }
                    n += 1.0;
                }
                let next = acc.map(|v| v / n);
                for c in 0..3 {
                    change = change.max((next[c] - self.pixels[i][c]).abs());
                }
                self.pixels[i] = next;
            }
            if change < 1e-2 {
                break;
            }
        }
    }

    /// Replaces hole values with the coarse level's values at half coordinates.
    fn upsample_from(&mut self, coarse: &Level) {
        for i in 0..self.pixels.len() {
            if self.hole[i] {
                let (x, y) = (i % self.width, i / self.width);
                self.pixels[i] = coarse.pixel((x / 2).min(coarse.width - 1), (y / 2).min(coarse.height - 1));
            }
        }
    }
}

/// Source patch assigned to every centre of `Level::centers`, with the
/// current patch distance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMap {
    pub targets: Vec<(usize, usize)>,
    pub distances: Vec<f32>,
}

impl CorrespondenceMap {
    pub fn new(level: &Level, targets: Vec<(usize, usize)>) -> Result<Self> {
        if targets.len() != level.centers.len() {
            return Err(FlareError::BufferSize {
                expected: level.centers.len(),
                actual: targets.len(),
            });
        }
        if let Some(&(x, y)) = targets
            .iter()
            .find(|&&(x, y)| x >= level.width || y >= level.height || !level.is_source(x, y))
        {
            return Err(FlareError::invalid("targets", format!("({x}, {y}) is not a known patch")));
        }
        let mut map = Self {
            distances: vec![0.0; targets.len()],
            targets,
        };
        map.refresh(level);
        Ok(map)
    }

    /// Uniformly random source patches.
    pub fn random(level: &Level, rng: &mut ChaCha8Rng) -> Result<Self> {
        if level.sources.is_empty() {
            return Err(FlareError::NoSourcePatches);
        }
        let targets = (0..level.centers.len())
            .map(|_| level.sources[rng.random_range(0..level.sources.len())])
            .collect();
        Self::new(level, targets)
    }

    /// Recomputes distances against the current pixel values.
    pub fn refresh(&mut self, level: &Level) {
        self.distances = level
            .centers
            .par_iter()
            .zip(&self.targets)
            .map(|(&c, &t)| level.patch_distance(c, t))
            .collect();
    }

    /// Summed patch error.
    pub fn energy(&self) -> f64 {
        self.distances.iter().map(|&d| d as f64).sum()
    }
}

/// Improves every correspondence, never accepting a worse patch. Searches
/// exhaustively on small problems and by PatchMatch otherwise; `reverse`
/// selects the propagation direction.
pub fn nn_search(level: &Level, phi: &CorrespondenceMap, rng: &mut ChaCha8Rng, reverse: bool) -> CorrespondenceMap {
    let mut out = phi.clone();
    out.refresh(level);
    if level.sources.len() < EXHAUSTIVE_LIMIT {
        exhaustive_refine(level, &mut out);
    } else {
        patchmatch_sweep(level, &mut out, rng, reverse);
    }
    out
}

/// Replaces each correspondence by the best source patch, keeping the
/// current one on ties.
pub fn exhaustive_refine(level: &Level, phi: &mut CorrespondenceMap) {
    let updated: Vec<((usize, usize), f32)> = level
        .centers
        .par_iter()
        .zip(phi.targets.par_iter().zip(&phi.distances))
        .map(|(&c, (&t, &d))| {
            let mut best = (t, d);
            for &s in &level.sources {
                let e = level.sad(c, s, best.1);
                if e < best.1 {
                    best = (s, e);
                }
            }
            best
        })
        .collect();
    for (i, (t, d)) in updated.into_iter().enumerate() {
        phi.targets[i] = t;
        phi.distances[i] = d;
    }
}

/// One PatchMatch pass: propagation from already visited neighbours followed
/// by a random search of shrinking radius around the current match.
pub fn patchmatch_sweep(level: &Level, phi: &mut CorrespondenceMap, rng: &mut ChaCha8Rng, reverse: bool) {
    let n = level.centers.len();
    let step: i64 = if reverse { 1 } else { -1 };
    let max_radius = level.width.max(level.height) as i64;
    let try_candidate = |phi: &mut CorrespondenceMap, i: usize, cx: i64, cy: i64| {
        if cx < 0 || cy < 0 || cx as usize >= level.width || cy as usize >= level.height {
            return;
        }
        let cand = (cx as usize, cy as usize);
        if !level.is_source(cand.0, cand.1) || cand == phi.targets[i] {
            return;
        }
        let e = level.sad(level.centers[i], cand, phi.distances[i]);
        if e < phi.distances[i] {
            phi.targets[i] = cand;
            phi.distances[i] = e;
        }
    };
    for k in 0..n {
        let i = if reverse { n - 1 - k } else { k };
        let (x, y) = level.centers[i];
        for (dx, dy) in [(step, 0), (0, step)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx as usize >= level.width || ny as usize >= level.height {
                continue;
            }
            let j = level.center_index[ny as usize * level.width + nx as usize];
            if j == NO_CENTER {
                continue;
            }
            let (tx, ty) = phi.targets[j as usize];
            try_candidate(phi, i, tx as i64 - dx, ty as i64 - dy);
        }
        let mut r = max_radius;
        while r >= 1 {
            let (tx, ty) = phi.targets[i];
            let cx = tx as i64 + rng.random_range(-r..=r);
            let cy = ty as i64 + rng.random_range(-r..=r);
            try_candidate(phi, i, cx, cy);
            r /= 2;
        }
    }
}

/// Median of a non-empty slice; an even count yields the midpoint of the two
/// central values.
pub fn median(values: &mut [f32]) -> f32 {
    let n = values.len();
    values.sort_unstable_by(f32::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Sets every hole pixel to the per-channel median of the values proposed
/// by the correspondences of all patches covering it.
pub fn image_update_median(level: &mut Level, phi: &CorrespondenceMap) {
    let r = level.radius as i64;
    let (w, h) = (level.width as i64, level.height as i64);
    let lv = &*level;
    let holes: Vec<usize> = (0..lv.pixels.len()).filter(|&i| lv.hole[i]).collect();
    let updates: Vec<(usize, [f32; 3])> = holes
        .par_iter()
        .map(|&i| {
            let (x, y) = ((i % lv.width) as i64, (i / lv.width) as i64);
            let mut channels: [Vec<f32>; 3] = Default::default();
            for dy in -r..=r {
                for dx in -r..=r {
                    let (cx, cy) = (x - dx, y - dy);
                    if cx < 0 || cy < 0 || cx >= w || cy >= h {
                        continue;
                    }
                    let j = lv.center_index[(cy * w + cx) as usize];
                    if j == NO_CENTER {
                        continue;
                    }
                    let (tx, ty) = phi.targets[j as usize];
                    let v = lv.pixel((tx as i64 + dx) as usize, (ty as i64 + dy) as usize);
                    for c in 0..3 {
                        channels[c].push(v[c]);
                    }
                }
            }
            if channels[0].is_empty() {
                return (i, lv.pixels[i]);
            }
            (i, [0, 1, 2].map(|c| median(&mut channels[c])))
        })
        .collect();
    for (i, v) in updates {
        level.pixels[i] = v;
    }
}

#[derive(Debug, Clone)]
pub struct InpaintOutcome {
    pub image: RgbImage,
    /// Summed patch error after each round at the finest scale.
    pub energy_trace: Vec<f64>,
    pub levels: usize,
}

pub fn inpaint(problem: &InpaintProblem) -> Result<RgbImage> {
    Ok(inpaint_with_trace(problem)?.image)
}

fn upsample_map(coarse: &Level, phi: &CorrespondenceMap, fine: &Level, rng: &mut ChaCha8Rng) -> Result<CorrespondenceMap> {
    if fine.sources.is_empty() {
        return Err(FlareError::NoSourcePatches);
    }
    let r = fine.radius as i64;
    let targets = fine
        .centers
        .iter()
        .map(|&(x, y)| {
            let c = ((x / 2).min(coarse.width - 1), (y / 2).min(coarse.height - 1));
            let j = coarse.center_index[c.1 * coarse.width + c.0];
            if j != NO_CENTER {
                let (tx, ty) = phi.targets[j as usize];
                let cx = (x as i64 + 2 * (tx as i64 - c.0 as i64)).clamp(r, fine.width as i64 - 1 - r) as usize;
                let cy = (y as i64 + 2 * (ty as i64 - c.1 as i64)).clamp(r, fine.height as i64 - 1 - r) as usize;
                if fine.is_source(cx, cy) {
                    return (cx, cy);
                }
            }
            fine.sources[rng.random_range(0..fine.sources.len())]
        })
        .collect();
    CorrespondenceMap::new(fine, targets)
}

/// Fills the hole and reports the finest-scale energy after every round.
pub fn inpaint_with_trace(problem: &InpaintProblem) -> Result<InpaintOutcome> {
    problem.validate()?;
    let (w, h) = problem.image.dims();
    let hole_count = problem.hole.count();
    if hole_count == 0 {
        return Ok(InpaintOutcome {
            image: problem.image.clone(),
            energy_trace: Vec::new(),
            levels: 0,
        });
    }
    let fraction = hole_count as f64 / (w * h) as f64;
    if fraction > MAX_HOLE_FRACTION {
        return Err(FlareError::HoleTooLarge {
            fraction: fraction * 100.0,
        });
    }
    let finest = Level::from_rgb(&problem.image, &problem.hole, problem.patch_side)?;
    if finest.sources.is_empty() {
        return Err(FlareError::NoSourcePatches);
    }
    let wanted = problem
        .levels
        .unwrap_or_else(|| default_levels(hole_diameter(&problem.hole)));
    let mut pyramid = vec![finest];
    while pyramid.len() < wanted {
        let last = pyramid.last().expect("pyramid is never empty");
        if last.width / 2 < problem.patch_side || last.height / 2 < problem.patch_side {
            break;
        }
        let next = last.downsample()?;
        if next.sources.is_empty() {
            break;
        }
        pyramid.push(next);
    }
    let levels = pyramid.len();
    log::debug!("inpainting {hole_count} pixels over {levels} levels");

    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    let mut trace = Vec::new();
    let mut previous: Option<(Level, CorrespondenceMap)> = None;
    for (depth, mut level) in pyramid.into_iter().enumerate().rev() {
        let mut phi = match &previous {
            None => {
                level.diffuse_fill();
                CorrespondenceMap::random(&level, &mut rng)?
            }
            Some((coarse, coarse_phi)) => {
                level.upsample_from(coarse);
                upsample_map(coarse, coarse_phi, &level, &mut rng)?
            }
        };
        for it in 0..problem.iterations {
            phi = nn_search(&level, &phi, &mut rng, it % 2 == 1);
            image_update_median(&mut level, &phi);
            if depth == 0 {
                phi.refresh(&level);
                trace.push(phi.energy());
            }
        }
        previous = Some((level, phi));
    }
    let (finest, _) = previous.expect("at least one level");
    let mut image = problem.image.clone();
    for (i, px) in image.pixels_mut().iter_mut().enumerate() {
        if finest.hole[i] {
            *px = finest.pixels[i].map(|v| v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(InpaintOutcome {
        image,
        energy_trace: trace,
        levels,
    })
}

/// Peak signal-to-noise ratio in dB over the set pixels of `mask`;
/// infinite for identical content.
pub fn masked_psnr(a: &RgbImage, b: &RgbImage, mask: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() || a.dims() != mask.dims() {
        return Err(FlareError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let (mut sse, mut n) = (0f64, 0usize);
    for (x, y) in mask.iter_set() {
        let (p, q) = (a.get(x, y), b.get(x, y));
        for c in 0..3 {
            sse += (p[c] as f64 - q[c] as f64).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return Err(FlareError::invalid("mask", "is empty"));
    }
    let mse = sse / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh)
    }

    fn run(image: &RgbImage, hole: &BinaryMask) -> InpaintOutcome {
        inpaint_with_trace(&InpaintProblem::new(image.clone(), hole.clone()).unwrap()).unwrap()
    }

    fn edge_image() -> RgbImage {
        let mut img = RgbImage::filled(64, 64, [30, 60, 200]).unwrap();
        for y in 0..64 {
            for x in 32..64 {
                img.set(x, y, [220, 180, 40]);
            }
        }
        img
    }

    fn checkerboard() -> RgbImage {
        let mut img = RgbImage::filled(64, 64, [0, 0, 0]).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let c = if (x / 4 + y / 4) % 2 == 0 { [240, 240, 240] } else { [20, 40, 60] };
                img.set(x, y, c);
            }
        }
        img
    }

    #[test]
    fn level_count_follows_hole_diameter() {
        assert_eq!(default_levels(4), 2);
        assert_eq!(default_levels(15), 2);
        assert_eq!(default_levels(16), 2);
        assert_eq!(default_levels(32), 3);
        assert_eq!(default_levels(64), 4);
        assert_eq!(hole_diameter(&rect(40, 40, 5, 5, 8, 3)), 8);
        assert_eq!(hole_diameter(&BinaryMask::empty(4, 4)), 0);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&mut [10.0, 10.0, 200.0]), 10.0);
        assert_eq!(median(&mut [20.0, 10.0]), 15.0);
        assert_eq!(median(&mut [7.0; 5]), 7.0);
    }

    #[test]
    fn constant_region_is_filled_exactly() {
        let img = RgbImage::filled(40, 40, [90, 140, 30]).unwrap();
        let hole = rect(40, 40, 15, 12, 9, 7);
        let out = run(&img, &hole);
        assert_eq!(out.image, img);
    }

    #[test]
    fn edge_crossing_hole_is_restored() {
        let img = edge_image();
        let hole = rect(64, 64, 28, 28, 8, 8);
        let out = run(&img, &hole);
        assert!(masked_psnr(&out.image, &img, &hole).unwrap() >= 35.0);
    }

    #[test]
    fn checkerboard_hole_is_restored() {
        let img = checkerboard();
        let hole = rect(64, 64, 27, 29, 8, 8);
        let out = run(&img, &hole);
        assert!(masked_psnr(&out.image, &img, &hole).unwrap() >= 30.0);
    }

    #[test]
    fn known_pixels_are_untouched_and_energy_decreases() {
        let img = checkerboard();
        let hole = rect(64, 64, 10, 40, 12, 9);
        let mut damaged = img.clone();
        for (x, y) in hole.iter_set() {
            damaged.set(x, y, [255, 0, 255]);
        }
        let out = run(&damaged, &hole);
        for (i, (a, b)) in out.image.pixels().iter().zip(damaged.pixels()).enumerate() {
            if !hole.bits()[i] {
                assert_eq!(a, b);
            }
        }
        assert_eq!(out.energy_trace.len(), DEFAULT_ITERATIONS);
        assert!(out.energy_trace.windows(2).all(|p| p[1] <= p[0]), "{:?}", out.energy_trace);
    }

    #[test]
    fn oversized_hole_is_rejected() {
        let img = RgbImage::filled(20, 20, [0, 0, 0]).unwrap();
        let hole = rect(20, 20, 0, 0, 20, 11);
        let err = inpaint(&InpaintProblem::new(img, hole).unwrap()).unwrap_err();
        assert!(matches!(err, FlareError::HoleTooLarge { .. }));
    }

    #[test]
    fn empty_hole_returns_input() {
        let img = edge_image();
        let out = run(&img, &BinaryMask::empty(64, 64));
        assert_eq!(out.image, img);
        assert!(out.energy_trace.is_empty());
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let img = RgbImage::filled(20, 20, [0, 0, 0]).unwrap();
        assert!(InpaintProblem::new(img.clone(), BinaryMask::empty(10, 20)).is_err());
        let mut p = InpaintProblem::new(img, BinaryMask::empty(20, 20)).unwrap();
        p.patch_side = 4;
        assert!(p.validate().is_err());
    }

    #[test]
    fn seeded_runs_are_identical() {
        // Large enough for the randomized search.
        let mut img = RgbImage::filled(160, 120, [0, 0, 0]).unwrap();
        for y in 0..120 {
            for x in 0..160 {
                img.set(x, y, [(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        let hole = rect(160, 120, 70, 50, 15, 12);
        let p = InpaintProblem::new(img, hole).unwrap();
        assert!(Level::from_rgb(&p.image, &p.hole, 7).unwrap().sources().len() >= EXHAUSTIVE_LIMIT);
        let a = inpaint_with_trace(&p).unwrap();
        let b = inpaint_with_trace(&p).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.energy_trace, b.energy_trace);
        assert!(a.energy_trace.windows(2).all(|p| p[1] <= p[0]));
    }

    fn small_level(seed: u64, hole: BinaryMask) -> Level {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = hole.dims();
        let pixels = (0..w * h)
            .map(|_| [0, 1, 2].map(|_| rng.random_range(0..4) as f32 * 60.0))
            .collect();
        Level::new(w, h, pixels, hole.bits().to_vec(), 5).unwrap()
    }

    #[test]
    fn exact_duplicate_is_found() {
        let mut level = small_level(3, rect(16, 16, 3, 3, 3, 3));
        // Copy the patch centred at (4, 4) to the fully known one at (11, 11).
        for dy in 0..5 {
            for dx in 0..5 {
                let v = level.pixel(2 + dx, 2 + dy);
                level.pixels[(9 + dy) * 16 + 9 + dx] = v;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = CorrespondenceMap::random(&level, &mut rng).unwrap();
        let phi = nn_search(&level, &phi, &mut rng, false);
        let i = level.centers().iter().position(|&c| c == (4, 4)).unwrap();
        assert_eq!(phi.distances[i], 0.0);
    }

    #[test]
    fn single_source_patch_takes_every_centre() {
        // In a 7x7 image with radius 2, only the centre (3, 3) can be a
        // known patch when the hole touches all others.
        let hole = BinaryMask::from_fn(7, 7, |x, y| x == 0 || y == 0 || x == 6 || y == 6);
        let level = small_level(1, hole);
        assert_eq!(level.sources(), &[(3, 3)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = nn_search(&level, &CorrespondenceMap::random(&level, &mut rng).unwrap(), &mut rng, false);
        assert!(phi.targets.iter().all(|&t| t == (3, 3)));
    }

    #[test]
    fn search_matches_exhaustive_oracle() {
        for seed in 0..5 {
            let level = small_level(seed, rect(28, 24, 9, 8, 6, 5));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let phi = nn_search(&level, &CorrespondenceMap::random(&level, &mut rng).unwrap(), &mut rng, false);
            for (i, &c) in level.centers().iter().enumerate() {
                let oracle = level
                    .sources()
                    .iter()
                    .map(|&s| level.patch_distance(c, s))
                    .fold(f32::INFINITY, f32::min);
                assert_eq!(phi.distances[i], oracle);
            }
            // Already optimal: a second search changes nothing.
            let again = nn_search(&level, &phi, &mut rng, true);
            assert_eq!(again.distances, phi.distances);
        }
    }

    #[test]
    fn median_update_only_writes_hole_pixels() {
        let hole = rect(20, 20, 8, 8, 4, 4);
        let mut level = small_level(9, hole.clone());
        let before = level.pixels.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = CorrespondenceMap::random(&level, &mut rng).unwrap();
        let e0 = phi.energy();
        image_update_median(&mut level, &phi);
        let mut after = phi.clone();
        after.refresh(&level);
        assert!(after.energy() <= e0);
        for (i, (a, b)) in level.pixels.iter().zip(&before).enumerate() {
            if !hole.bits()[i] {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let img = edge_image();
        assert_eq!(masked_psnr(&img, &img, &rect(64, 64, 0, 0, 3, 3)).unwrap(), f64::INFINITY);
        assert!(masked_psnr(&img, &img, &BinaryMask::empty(64, 64)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn patchmatch_never_worsens_a_match(seed in 0u64..1000, reverse in any::<bool>()) {
                let level = small_level(seed, rect(30, 30, 10, 12, 7, 5));
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let phi = CorrespondenceMap::random(&level, &mut rng).unwrap();
                let mut next = phi.clone();
                patchmatch_sweep(&level, &mut next, &mut rng, reverse);
                for (a, b) in next.distances.iter().zip(&phi.distances) {
                    prop_assert!(a <= b);
                }
                let mut fresh = next.clone();
                fresh.refresh(&level);
                prop_assert_eq!(fresh.distances, next.distances);
            }

            #[test]
            fn median_lies_between_extremes(mut v in proptest::collection::vec(0.0f32..255.0, 1..50)) {
                let lo = v.iter().cloned().fold(f32::INFINITY, f32::min);
                let hi = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let m = median(&mut v);
                prop_assert!(m >= lo && m <= hi);
            }
        }
    }
}
