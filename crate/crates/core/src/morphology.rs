//! Binary masks, level sets, 8-connected components and disc morphology.

use std::collections::VecDeque;

use crate::error::{FlareError, Result};
use crate::imagecore::GrayPlane;

/// Boolean pixel set over a `width x height` domain, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(FlareError::InvalidDimensions { width, height });
        }
        if bits.len() != width * height {
            return Err(FlareError::BufferSize {
                expected: width * height,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// All-unset mask. Panics on a zero dimension.
    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Self::empty(width, height);
        for y in 0..height {
            for x in 0..width {
                mask.bits[y * width + x] = f(x, y);
            }
        }
        mask
    }

    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut mask = Self::empty(width, height);
        for &(x, y) in pixels {
            mask.set(x, y, true);
        }
        mask
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`get`](Self::get) but treats out-of-domain coordinates as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set pixels in raster order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    fn check_same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(FlareError::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        Ok(self.zip_with(other, |a, b| a || b))
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_same_dims(other)?;
        Ok(self.zip_with(other, |a, b| a && b))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// A maximal 8-connected set of mask pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Member pixels in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub centroid: (f64, f64),
}

impl Component {
    fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        let area = pixels.len();
        let (sx, sy) = pixels
            .iter()
            .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x as f64, sy + y as f64));
        Component {
            centroid: (sx / area as f64, sy / area as f64),
            area,
            pixels,
        }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bounds(&self) -> (usize, usize, usize, usize) {
        self.pixels.iter().fold(
            (usize::MAX, usize::MAX, 0, 0),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.pixels.binary_search_by_key(&(y, x), |&(px, py)| (py, px)).is_ok()
    }

    pub fn to_mask(&self, width: usize, height: usize) -> BinaryMask {
        BinaryMask::from_pixels(width, height, &self.pixels)
    }
}

const NEIGHBORS_8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// `X_iota`: pixels whose value is at least `iota`.
pub fn upper_level_set(plane: &GrayPlane, iota: f64) -> BinaryMask {
    let (w, h) = plane.dims();
    BinaryMask {
        width: w,
        height: h,
        bits: plane.values().iter().map(|&v| v >= iota).collect(),
    }
}

/// `B_delta`: pixels whose value is within `delta` of `seed_value`.
pub fn bilevel_set(plane: &GrayPlane, seed_value: f64, delta: f64) -> BinaryMask {
    let (w, h) = plane.dims();
    BinaryMask {
        width: w,
        height: h,
        bits: plane
            .values()
            .iter()
            .map(|&v| (v - seed_value).abs() <= delta)
            .collect(),
    }
}

/// Breadth-first 8-connected flood fill from `seed` over the pixels accepted
/// by `inside`. Stops once `limit` pixels have been collected.
pub fn flood_fill(
    width: usize,
    height: usize,
    seed: (usize, usize),
    limit: usize,
    inside: impl Fn(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    if !inside(seed.0, seed.1) || limit == 0 {
        return Vec::new();
    }
    let mut visited = vec![false; width * height];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();
    visited[seed.1 * width + seed.0] = true;
    queue.push_back(seed);
    while let Some((x, y)) = queue.pop_front() {
        out.push((x, y));
        if out.len() >= limit {
            break;
        }
        for (dx, dy) in NEIGHBORS_8 {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let idx = ny * width + nx;
            if !visited[idx] && inside(nx, ny) {
                visited[idx] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn unite(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Keep the smaller raster index as root.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// 8-connected components, largest first; equal areas are ordered by their
/// first pixel in raster order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = mask.dims();
    let n = w * h;
    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let i = y * w + x;
            // Previously scanned neighbours: W, NW, N, NE.
            if x > 0 && mask.get(x - 1, y) {
                unite(&mut parent, i, i - 1);
            }
            if y > 0 {
                if x > 0 && mask.get(x - 1, y - 1) {
                    unite(&mut parent, i, i - w - 1);
                }
                if mask.get(x, y - 1) {
                    unite(&mut parent, i, i - w);
                }
                if x + 1 < w && mask.get(x + 1, y - 1) {
                    unite(&mut parent, i, i - w + 1);
                }
            }
        }
    }

    let mut slot = vec![usize::MAX; n];
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for (x, y) in mask.iter_set() {
        let root = find(&mut parent, y * w + x);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push((x, y));
    }
    // Groups were created in order of their first raster pixel, so a stable
    // sort on area alone yields the documented tie-break.
    let mut comps: Vec<Component> = groups.into_iter().map(Component::from_pixels).collect();
    comps.sort_by(|a, b| b.area.cmp(&a.area));
    comps
}

/// The component containing `p`, or `None` when `p` is unset.
pub fn component_containing(mask: &BinaryMask, p: (i64, i64)) -> Result<Option<Component>> {
    let (w, h) = mask.dims();
    if p.0 < 0 || p.1 < 0 || p.0 >= w as i64 || p.1 >= h as i64 {
        return Err(FlareError::OutOfBounds {
            x: p.0,
            y: p.1,
            width: w,
            height: h,
        });
    }
    let seed = (p.0 as usize, p.1 as usize);
    let pixels = flood_fill(w, h, seed, usize::MAX, |x, y| mask.get(x, y));
    Ok((!pixels.is_empty()).then(|| Component::from_pixels(pixels)))
}

/// Offsets of the discrete disc `dx^2 + dy^2 <= r^2`.
pub fn disc_offsets(radius: f64) -> Vec<(i64, i64)> {
    let r = radius.floor() as i64;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Erosion by the disc; pixels outside the domain count as unset.
pub fn erosion(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let offsets = disc_offsets(radius);
    let mut out = BinaryMask::empty(mask.width, mask.height);
    for (x, y) in mask.iter_set() {
        let keep = offsets
            .iter()
            .all(|&(dx, dy)| mask.get_signed(x as i64 + dx, y as i64 + dy));
        if keep {
            out.set(x, y, true);
        }
    }
    out
}

/// Dilation by the disc, clipped to the domain.
pub fn dilation(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let offsets = disc_offsets(radius);
    let (w, h) = mask.dims();
    let mut out = BinaryMask::empty(w, h);
    for (x, y) in mask.iter_set() {
        for &(dx, dy) in &offsets {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                out.set(nx as usize, ny as usize, true);
            }
        }
    }
    out
}

/// Erosion followed by dilation with the same disc.
pub fn opening(mask: &BinaryMask, radius: f64) -> BinaryMask {
    dilation(&erosion(mask, radius), radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn level_set_examples() {
        let plane = GrayPlane::new(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let m = upper_level_set(&plane, 5.0);
        let set: Vec<f64> = m.iter_set().map(|(x, y)| plane.get(x, y)).collect();
        assert_eq!(set, vec![5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(upper_level_set(&plane, f64::NEG_INFINITY).count(), 9);
        assert!(upper_level_set(&plane, 9.5).is_empty());
    }

    #[test]
    fn bilevel_examples() {
        let plane = GrayPlane::new(3, 1, vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(bilevel_set(&plane, 10.0, 10.0).count(), 3);
        assert_eq!(bilevel_set(&plane, 10.0, 0.0).iter_set().collect::<Vec<_>>(), vec![(1, 0)]);
        let plane = GrayPlane::new(3, 1, vec![0.0, 15.0, 31.0]).unwrap();
        assert_eq!(bilevel_set(&plane, 0.0, 10.0).iter_set().collect::<Vec<_>>(), vec![(0, 0)]);
    }

    #[test]
    fn diagonal_pixels_connect() {
        let m = mask_from_rows(&["#.", ".#"]);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn checkerboard_is_one_component() {
        let m = BinaryMask::from_fn(4, 4, |x, y| (x + y) % 2 == 0);
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].area, 8);
    }

    #[test]
    fn blank_row_separates() {
        let m = mask_from_rows(&["#", ".", "#"]);
        assert_eq!(connected_components(&m).len(), 2);
    }

    #[test]
    fn components_ordered_by_area_then_raster() {
        let m = mask_from_rows(&[
            "#..##",
            "....#",
            "##...",
            ".....",
            "#....",
        ]);
        let comps = connected_components(&m);
        let areas: Vec<usize> = comps.iter().map(|c| c.area).collect();
        assert_eq!(areas, vec![3, 2, 1, 1]);
        assert_eq!(comps[2].pixels, vec![(0, 0)]);
        assert_eq!(comps[3].pixels, vec![(0, 4)]);
        assert_eq!(comps[0].centroid, ((3.0 + 4.0 + 4.0) / 3.0, 1.0 / 3.0));
    }

    #[test]
    fn component_containing_examples() {
        let m = mask_from_rows(&[
            "###...",
            "###..#",
            "###...",
        ]);
        let big = component_containing(&m, (1, 1)).unwrap().unwrap();
        assert_eq!(big.area, 9);
        let small = component_containing(&m, (5, 1)).unwrap().unwrap();
        assert_eq!(small.pixels, vec![(5, 1)]);
        assert!(component_containing(&m, (4, 0)).unwrap().is_none());
        assert!(matches!(
            component_containing(&m, (6, 0)),
            Err(FlareError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn disc_of_radius_one_and_a_half_is_3x3() {
        assert_eq!(disc_offsets(1.5).len(), 9);
        assert_eq!(disc_offsets(5.0).len(), 81);
    }

    #[test]
    fn opening_examples() {
        let mut speck = BinaryMask::empty(9, 9);
        speck.set(4, 4, true);
        assert!(opening(&speck, 1.5).is_empty());

        let square = BinaryMask::from_fn(21, 21, |x, y| (5..16).contains(&x) && (5..16).contains(&y));
        assert_eq!(opening(&square, 1.5), square);

        let empty = BinaryMask::empty(7, 7);
        assert!(opening(&empty, 1.5).is_empty());
    }

    #[test]
    fn dilation_examples() {
        let mut dot = BinaryMask::empty(21, 21);
        dot.set(10, 10, true);
        assert_eq!(dilation(&dot, 5.0).count(), 81);
        assert!(dilation(&BinaryMask::empty(5, 5), 5.0).is_empty());
    }

    #[test]
    fn erosion_treats_outside_as_unset() {
        let full = BinaryMask::from_fn(5, 5, |_, _| true);
        let eroded = erosion(&full, 1.5);
        assert_eq!(eroded.count(), 9);
        assert!(!eroded.get(0, 0));
    }

    #[test]
    fn flood_fill_respects_limit() {
        let all = flood_fill(10, 10, (0, 0), 7, |_, _| true);
        assert_eq!(all.len(), 7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_mask() -> impl Strategy<Value = BinaryMask> {
            (1usize..20, 1usize..20).prop_flat_map(|(w, h)| {
                proptest::collection::vec(proptest::bool::weighted(0.45), w * h)
                    .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
            })
        }

        proptest! {
            #[test]
            fn opening_is_anti_extensive_and_idempotent(m in arb_mask()) {
                let once = opening(&m, 1.5);
                prop_assert!(once.is_subset_of(&m));
                prop_assert_eq!(opening(&once, 1.5), once);
            }

            #[test]
            fn dilation_is_extensive_and_monotone(m in arb_mask(), r in 1.0f64..4.0) {
                let d = dilation(&m, r);
                prop_assert!(m.is_subset_of(&d));
                let sub = m.intersection(&BinaryMask::from_fn(m.width(), m.height(), |x, _| x % 2 == 0)).unwrap();
                prop_assert!(dilation(&sub, r).is_subset_of(&d));
            }

            #[test]
            fn components_partition_the_mask(m in arb_mask()) {
                let comps = connected_components(&m);
                let total: usize = comps.iter().map(|c| c.area).sum();
                prop_assert_eq!(total, m.count());
                let mut seen = BinaryMask::empty(m.width(), m.height());
                for c in &comps {
                    for &(x, y) in &c.pixels {
                        prop_assert!(m.get(x, y));
                        prop_assert!(!seen.get(x, y));
                        seen.set(x, y, true);
                    }
                }
                for w in comps.windows(2) {
                    prop_assert!(w[0].area >= w[1].area);
                }
            }

            #[test]
            fn level_sets_are_nested(
                vals in proptest::collection::vec(0.0f64..100.0, 36),
                a in 0.0f64..100.0,
                b in 0.0f64..100.0,
            ) {
                let plane = GrayPlane::new(6, 6, vals).unwrap();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(upper_level_set(&plane, hi).is_subset_of(&upper_level_set(&plane, lo)));
            }
        }
    }
}
