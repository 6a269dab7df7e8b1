//! Set-oriented box engine for the set-valued dynamics `F(x) = B_eps(f(x))`.
//!
//! Sets are covered by axis-aligned boxes on a uniform grid of `2^depth x
//! 2^depth` cells over a bounding box. The engine computes outer
//! approximations of images under `F`, minimal attractors as least box-level
//! fixed points, domains of attraction as greatest fixed points, dual
//! repellers as complements, and Hausdorff/collision distances between box
//! sets.
//!
//! Box sets are stored as dense bitmaps, and image covers are drawn as exact
//! per-row spans of the dilated sample disks, which is what keeps depth-10
//! basin computations cheap on a single core.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Params, PlanarMap, Point2, Rect};

/// Uniform grid specification: bounding box plus subdivision depth (each axis
/// is split into `2^depth` cells).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: Point2,
    pub max: Point2,
    pub depth: u32,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("set-valued image escapes the grid bounding box{}", match seed { Some(p) => format!(" (seed orbit reached {p:?})"), None => String::new() })]
    Escape { seed: Option<Point2> },
    #[error("fixed-point iteration did not converge within {rounds} rounds")]
    NonConvergence { rounds: usize },
    #[error("empty input box set")]
    EmptyInput,
    #[error("box sets live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed box-set file: {0}")]
    Parse(String),
}

impl GridSpec {
    /// Validates corner ordering and `depth <= 24` (index arithmetic stays
    /// exact in `u32`). The dense bitmap backing `BoxSet` additionally caps
    /// practical depth at 15 (a gigabit of cells); all shipped computations
    /// run at depth 12 or below.
    pub fn new(min: Point2, max: Point2, depth: u32) -> Result<Self, EngineError> {
        if !(min.x < max.x && min.y < max.y) {
            return Err(EngineError::InvalidGrid("corners must be ordered".into()));
        }
        if depth > 24 {
            return Err(EngineError::InvalidGrid("depth must be at most 24".into()));
        }
        Ok(GridSpec { min, max, depth })
    }

    /// Boxes per axis.
    pub fn n(&self) -> u32 {
        1u32 << self.depth
    }

    /// Cell width along x.
    pub fn hx(&self) -> f64 {
        (self.max.x - self.min.x) / self.n() as f64
    }

    /// Cell width along y.
    pub fn hy(&self) -> f64 {
        (self.max.y - self.min.y) / self.n() as f64
    }

    /// Box diagonal length.
    pub fn diag(&self) -> f64 {
        self.hx().hypot(self.hy())
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(self.min, self.max)
    }

    /// Index of the box containing `p`, clamped into the grid.
    pub fn locate(&self, p: Point2) -> (u32, u32) {
        let n = self.n();
        let ix = ((p.x - self.min.x) / self.hx()).floor();
        let iy = ((p.y - self.min.y) / self.hy()).floor();
        (
            (ix.max(0.0) as u32).min(n - 1),
            (iy.max(0.0) as u32).min(n - 1),
        )
    }

    /// Center of box `(ix, iy)`.
    pub fn center(&self, ix: u32, iy: u32) -> Point2 {
        Point2::new(
            self.min.x + (ix as f64 + 0.5) * self.hx(),
            self.min.y + (iy as f64 + 0.5) * self.hy(),
        )
    }

    /// Closed coordinate extent of box `(ix, iy)`.
    pub fn box_rect(&self, ix: u32, iy: u32) -> Rect {
        Rect::new(
            Point2::new(self.min.x + ix as f64 * self.hx(), self.min.y + iy as f64 * self.hy()),
            Point2::new(
                self.min.x + (ix as f64 + 1.0) * self.hx(),
                self.min.y + (iy as f64 + 1.0) * self.hy(),
            ),
        )
    }
}

/// A set of grid boxes, stored as a dense row-major bitmap.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    grid: GridSpec,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BoxSet {
    pub fn empty(grid: GridSpec) -> BoxSet {
        let n = grid.n() as usize;
        assert!(grid.depth <= 15, "dense box sets support depth <= 15");
        let words_per_row = n.div_ceil(64);
        BoxSet { grid, words_per_row, bits: vec![0; words_per_row * n] }
    }

    pub fn full(grid: GridSpec) -> BoxSet {
        let mut s = BoxSet::empty(grid);
        let n = grid.n() as usize;
        for iy in 0..n {
            s.fill_row_span(iy as u32, 0, grid.n() - 1);
        }
        s
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    fn idx(&self, ix: u32, iy: u32) -> (usize, u64) {
        let w = iy as usize * self.words_per_row + (ix as usize >> 6);
        (w, 1u64 << (ix & 63))
    }

    #[inline]
    pub fn contains(&self, ix: u32, iy: u32) -> bool {
        let (w, m) = self.idx(ix, iy);
        self.bits[w] & m != 0
    }

    #[inline]
    pub fn insert(&mut self, ix: u32, iy: u32) {
        let (w, m) = self.idx(ix, iy);
        self.bits[w] |= m;
    }

    #[inline]
    pub fn remove(&mut self, ix: u32, iy: u32) {
        let (w, m) = self.idx(ix, iy);
        self.bits[w] &= !m;
    }

    /// Sets all boxes `ix0..=ix1` in row `iy`.
    pub fn fill_row_span(&mut self, iy: u32, ix0: u32, ix1: u32) {
        debug_assert!(ix0 <= ix1 && ix1 < self.grid.n());
        let base = iy as usize * self.words_per_row;
        let (w0, w1) = (ix0 as usize >> 6, ix1 as usize >> 6);
        let m0 = !0u64 << (ix0 & 63);
        let m1 = !0u64 >> (63 - (ix1 & 63));
        if w0 == w1 {
            self.bits[base + w0] |= m0 & m1;
        } else {
            self.bits[base + w0] |= m0;
            for w in (w0 + 1)..w1 {
                self.bits[base + w] = !0;
            }
            self.bits[base + w1] |= m1;
        }
    }

    /// True if any box in `ix0..=ix1` of row `iy` is *not* in `self`.
    fn row_span_has_gap(&self, iy: u32, ix0: u32, ix1: u32) -> bool {
        let base = iy as usize * self.words_per_row;
        let (w0, w1) = (ix0 as usize >> 6, ix1 as usize >> 6);
        let m0 = !0u64 << (ix0 & 63);
        let m1 = !0u64 >> (63 - (ix1 & 63));
        if w0 == w1 {
            let m = m0 & m1;
            self.bits[base + w0] & m != m
        } else {
            if self.bits[base + w0] & m0 != m0 {
                return true;
            }
            for w in (w0 + 1)..w1 {
                if self.bits[base + w] != !0 {
                    return true;
                }
            }
            self.bits[base + w1] & m1 != m1
        }
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Union in place; returns true when `self` changed.
    pub fn union_with(&mut self, other: &BoxSet) -> bool {
        debug_assert_eq!(self.grid, other.grid);
        let mut changed = false;
        for (a, b) in self.bits.iter_mut().zip(other.bits.iter()) {
            let next = *a | *b;
            changed |= next != *a;
            *a = next;
        }
        changed
    }

    pub fn complement(&self) -> BoxSet {
        let mut out = self.clone();
        let n = self.grid.n();
        for w in out.bits.iter_mut() {
            *w = !*w;
        }
        // Clear padding bits beyond column n-1 in each row.
        let tail_bits = n as usize & 63;
        if tail_bits != 0 {
            let mask = !0u64 >> (64 - tail_bits);
            for iy in 0..n as usize {
                let w = iy * out.words_per_row + out.words_per_row - 1;
                out.bits[w] &= mask;
            }
        }
        out
    }

    pub fn is_subset_of(&self, other: &BoxSet) -> bool {
        debug_assert_eq!(self.grid, other.grid);
        self.bits.iter().zip(other.bits.iter()).all(|(a, b)| a & !b == 0)
    }

    pub fn intersects(&self, other: &BoxSet) -> bool {
        self.bits.iter().zip(other.bits.iter()).any(|(a, b)| a & b != 0)
    }

    /// Member boxes in row-major order (y outer, x inner).
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let n = self.grid.n();
        (0..n).flat_map(move |iy| (0..n).filter_map(move |ix| self.contains(ix, iy).then_some((ix, iy))))
    }

    /// Member boxes sorted lexicographically by `(ix, iy)`.
    pub fn iter_lexicographic(&self) -> Vec<(u32, u32)> {
        let mut v: Vec<(u32, u32)> = self.iter().collect();
        v.sort_unstable();
        v
    }

    /// Member boxes whose 4-neighborhood leaves the set (grid edges count as
    /// outside): the topological boundary of the cover.
    pub fn boundary(&self) -> BoxSet {
        let n = self.grid.n();
        let mut out = BoxSet::empty(self.grid);
        for (ix, iy) in self.iter() {
            let exposed = ix == 0
                || ix == n - 1
                || iy == 0
                || iy == n - 1
                || !self.contains(ix - 1, iy)
                || !self.contains(ix + 1, iy)
                || !self.contains(ix, iy - 1)
                || !self.contains(ix, iy + 1);
            if exposed {
                out.insert(ix, iy);
            }
        }
        out
    }

    /// Number of 8-connected components.
    pub fn component_count(&self) -> usize {
        let n = self.grid.n() as i64;
        let mut visited = BoxSet::empty(self.grid);
        let mut count = 0;
        let mut stack: Vec<(u32, u32)> = Vec::new();
        for (ix, iy) in self.iter() {
            if visited.contains(ix, iy) {
                continue;
            }
            count += 1;
            visited.insert(ix, iy);
            stack.push((ix, iy));
            while let Some((cx, cy)) = stack.pop() {
                for dx in -1i64..=1 {
                    for dy in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = cx as i64 + dx;
                        let ny = cy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= n || ny >= n {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        if self.contains(nx, ny) && !visited.contains(nx, ny) {
                            visited.insert(nx, ny);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
        count
    }
}

/// Per-box sampling of the map image: a `k x k` lattice including the box
/// corners, plus a bloat added to the dilation radius so that a finite sample
/// still yields an outer cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    /// Lattice size per axis, at least 2 (the corners).
    pub k: usize,
    /// Extra dilation; `None` selects `0.05 * eps + diag/2`.
    pub bloat: Option<f64>,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec { k: 3, bloat: None }
    }
}

impl SamplingSpec {
    pub fn radius(&self, eps: f64, grid: &GridSpec) -> f64 {
        let bloat = self.bloat.unwrap_or(0.05 * eps + 0.5 * grid.diag());
        eps + bloat
    }
}

/// Outcome of an image-cover computation; `escaped` is set when some dilated
/// sample disk was not contained in the grid bounding box.
#[derive(Debug, Clone)]
pub struct CoverResult {
    pub boxes: BoxSet,
    pub escaped: bool,
}

/// Marks every box intersecting the disk of radius `r` about `c`, by exact
/// per-row spans (the predicate is `dist(box rectangle, c)^2 <= r^2` in f64).
/// Returns true when the disk pokes outside the grid bounds.
fn mark_disk(out: &mut BoxSet, c: Point2, r: f64) -> bool {
    let g = out.grid;
    let n = g.n();
    let escaped =
        c.x - r < g.min.x || c.x + r > g.max.x || c.y - r < g.min.y || c.y + r > g.max.y;
    let hx = g.hx();
    let hy = g.hy();

    let iy0 = (((c.y - r - g.min.y) / hy).floor().max(0.0)) as u32;
    let iy1 = ((((c.y + r - g.min.y) / hy).floor()).max(0.0) as u32).min(n - 1);
    let in_disk = |ix: u32, iy: u32| -> bool {
        let rect = g.box_rect(ix, iy);
        let dx = (rect.min.x - c.x).max(c.x - rect.max.x).max(0.0);
        let dy = (rect.min.y - c.y).max(c.y - rect.max.y).max(0.0);
        dx * dx + dy * dy <= r * r
    };
    for iy in iy0..=iy1 {
        // Row distance to the disk center is independent of ix.
        let lo = g.min.y + iy as f64 * hy;
        let hi = lo + hy;
        let dy = (lo - c.y).max(c.y - hi).max(0.0);
        let rem = r * r - dy * dy;
        if rem < 0.0 {
            continue;
        }
        let half = rem.sqrt();
        let mut ix0i = ((c.x - half - g.min.x) / hx).floor() as i64;
        let mut ix1i = ((c.x + half - g.min.x) / hx).floor() as i64;
        // Settle rounding at the span edges against the exact predicate.
        let nn = n as i64;
        if ix0i >= 0 && ix0i < nn && !in_disk(ix0i as u32, iy) {
            ix0i += 1;
        } else if ix0i > 0 && in_disk(ix0i as u32 - 1, iy) {
            ix0i -= 1;
        }
        if ix1i >= 0 && ix1i < nn && !in_disk(ix1i as u32, iy) {
            ix1i -= 1;
        } else if ix1i >= 0 && ix1i < nn - 1 && in_disk(ix1i as u32 + 1, iy) {
            ix1i += 1;
        }
        if ix1i < 0 || ix0i > nn - 1 || ix0i > ix1i {
            continue;
        }
        let ix0 = ix0i.max(0) as u32;
        let ix1 = ix1i.min(nn - 1) as u32;
        out.fill_row_span(iy, ix0, ix1);
    }
    escaped
}

fn box_samples(g: &GridSpec, ix: u32, iy: u32, k: usize, out: &mut Vec<Point2>) {
    out.clear();
    let rect = g.box_rect(ix, iy);
    let k = k.max(2);
    for i in 0..k {
        for j in 0..k {
            let fx = i as f64 / (k - 1) as f64;
            let fy = j as f64 / (k - 1) as f64;
            out.push(Point2::new(
                rect.min.x + fx * (rect.max.x - rect.min.x),
                rect.min.y + fy * (rect.max.y - rect.min.y),
            ));
        }
    }
}

/// Outer cover of the set-valued image of `src`: every grid box intersecting
/// the union over sample points `p` of the disk `B_{eps+bloat}(f(p))`.
/// Monotone in `src`.
pub fn image_cover(
    src: &BoxSet,
    params: &Params,
    map: &dyn PlanarMap,
    sampling: &SamplingSpec,
) -> CoverResult {
    let grid = *src.grid();
    let r = sampling.radius(params.eps, &grid);
    let mut boxes = BoxSet::empty(grid);
    let mut escaped = false;
    let mut samples = Vec::new();
    for (ix, iy) in src.iter() {
        box_samples(&grid, ix, iy, sampling.k, &mut samples);
        for &p in &samples {
            escaped |= mark_disk(&mut boxes, map.eval(p, params), r);
        }
    }
    CoverResult { boxes, escaped }
}

/// Noise-realization length and seed for the attractor support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub steps: usize,
    pub rng_seed: u64,
    /// Leading iterates discarded as transient.
    pub transient: usize,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        OrbitSpec { steps: 400_000, rng_seed: 0, transient: 100 }
    }
}

/// Boxes visited by one long noisy orbit from `seed` (transient discarded).
/// The support of a random orbit fills the minimal attractor through the
/// seed and nothing else, which makes it the sound seed set for the box
/// closure below. Escaping the grid is the numerical signature of attractor
/// disappearance.
pub fn orbit_support(
    seed: Point2,
    params: &Params,
    map: &dyn PlanarMap,
    grid: GridSpec,
    orbit: &OrbitSpec,
) -> Result<BoxSet, EngineError> {
    let pts = crate::dynamics::sample_orbit(
        map,
        seed,
        params,
        orbit.steps,
        orbit.rng_seed,
        grid.bounds(),
    )
    .map_err(|e| match e {
        crate::dynamics::DynamicsError::Divergence { point, .. } => {
            EngineError::Escape { seed: Some(point) }
        }
        _ => EngineError::Escape { seed: Some(seed) },
    })?;
    let mut set = BoxSet::empty(grid);
    for z in pts.iter().skip(orbit.transient.min(pts.len())) {
        let (ix, iy) = grid.locate(*z);
        set.insert(ix, iy);
    }
    Ok(set)
}

/// Box cover of the minimal attractor through the seed.
///
/// A long noisy orbit provides the support of the attractor; the domain of
/// attraction is certified around it; and `S <- image_cover(S) ∩ domain` is
/// iterated from the support until the set sequence cycles. The union over
/// one cycle is returned: it covers the attractor, satisfies
/// `image_cover(result) ∩ domain = result` exactly, and a two-cycle arises
/// when the dynamics permutes two components.
///
/// The intersection with the certified domain is essential near a fold: the
/// dual repeller there is a recurrent band for the set-valued dynamics that
/// passes within a few grid cells of the attractor, and an unrestricted
/// outer cover iteration inevitably bleeds into it and returns the larger,
/// non-minimal invariant ring instead.
pub fn minimal_attractor(
    seed: Point2,
    params: &Params,
    map: &dyn PlanarMap,
    grid: GridSpec,
    sampling: &SamplingSpec,
    orbit: &OrbitSpec,
) -> Result<BoxSet, EngineError> {
    let support = orbit_support(seed, params, map, grid, orbit)?;
    let domain = domain_of_attraction(&support, params, map, sampling);

    let max_rounds = 10usize << grid.depth;
    const CYCLE_CAP: usize = 64;
    let mut set = support;
    let mut recent: std::collections::VecDeque<BoxSet> = std::collections::VecDeque::new();
    for _ in 0..max_rounds {
        let mut next = image_cover(&set, params, map, sampling).boxes;
        next.intersect_with(&domain);
        if let Some(pos) = recent.iter().position(|s| *s == next) {
            let mut union = next;
            for s in recent.iter().skip(pos) {
                union.union_with(s);
            }
            union.union_with(&set);
            return Ok(union);
        }
        recent.push_back(set);
        if recent.len() > CYCLE_CAP {
            recent.pop_front();
        }
        set = next;
    }
    Err(EngineError::NonConvergence { rounds: max_rounds })
}

/// Box cover of the domain of attraction: the set of boxes from which every
/// noise realization is guaranteed to reach the attractor.
///
/// Grown as a least fixed point: starting from the attractor cover, a box is
/// certified once its entire image cover (all sample disks, span-rounded
/// outward) lies inside the certified set and inside the grid. Boxes of the
/// dual repeller never certify: some realization from them avoids the
/// attractor forever. Deleting-by-escape instead would retain that
/// recurrent band, which never leaves the grid.
pub fn domain_of_attraction(
    attractor: &BoxSet,
    params: &Params,
    map: &dyn PlanarMap,
    sampling: &SamplingSpec,
) -> BoxSet {
    let grid = *attractor.grid();
    let n = grid.n();
    let r = sampling.radius(params.eps, &grid);
    let hx = grid.hx();
    let hy = grid.hy();
    let mut certified = attractor.clone();
    let mut samples = Vec::new();

    loop {
        let mut added: Vec<(u32, u32)> = Vec::new();
        for iy in 0..n {
            for ix in 0..n {
                if certified.contains(ix, iy) {
                    continue;
                }
                box_samples(&grid, ix, iy, sampling.k, &mut samples);
                let mut ok = true;
                'sample: for &p in &samples {
                    let c = map.eval(p, params);
                    if !c.is_finite()
                        || c.x - r < grid.min.x
                        || c.x + r > grid.max.x
                        || c.y - r < grid.min.y
                        || c.y + r > grid.max.y
                    {
                        ok = false;
                        break 'sample;
                    }
                    let iy0 = (((c.y - r - grid.min.y) / hy).floor().max(0.0)) as u32;
                    let iy1 = ((((c.y + r - grid.min.y) / hy).floor()).max(0.0) as u32).min(n - 1);
                    for ry in iy0..=iy1 {
                        let lo = grid.min.y + ry as f64 * hy;
                        let dyv = (lo - c.y).max(c.y - (lo + hy)).max(0.0);
                        let rem = r * r - dyv * dyv;
                        if rem < 0.0 {
                            continue;
                        }
                        let half = rem.sqrt();
                        let ix0 =
                            (((c.x - half - grid.min.x) / hx).floor().max(0.0) as u32).min(n - 1);
                        let ix1 =
                            (((c.x + half - grid.min.x) / hx).floor().max(0.0) as u32).min(n - 1);
                        if certified.row_span_has_gap(ry, ix0, ix1) {
                            ok = false;
                            break 'sample;
                        }
                    }
                }
                if ok {
                    added.push((ix, iy));
                }
            }
        }
        if added.is_empty() {
            break;
        }
        for (ix, iy) in added {
            certified.insert(ix, iy);
        }
    }
    certified
}

/// Complement of the domain of attraction on its grid.
pub fn dual_repeller(domain: &BoxSet) -> BoxSet {
    domain.complement()
}

// ---------------------------------------------------------------------------
// Distances between box sets
// ---------------------------------------------------------------------------

/// One-dimensional squared distance transform (lower envelope of parabolas).
fn dt1d(f: &[f64], xs: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] == f64::INFINITY {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            let s = ((f[q] + xs[q] * xs[q]) - (f[p] + xs[p] * xs[p])) / (2.0 * xs[q] - 2.0 * xs[p]);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < xs[q] {
            k += 1;
        }
        let p = v[k];
        out[q] = if f[p] == f64::INFINITY {
            f64::INFINITY
        } else {
            let d = xs[q] - xs[p];
            f[p] + d * d
        };
    }
}

/// Exact Euclidean distance (in state-space units) from every grid box center
/// to the nearest member center of `set`. Two-pass separable transform.
pub fn distance_field(set: &BoxSet) -> Vec<f64> {
    let g = *set.grid();
    let n = g.n() as usize;
    let hx = g.hx();
    let hy = g.hy();
    let mut d = vec![f64::INFINITY; n * n];
    for (ix, iy) in set.iter() {
        d[iy as usize * n + ix as usize] = 0.0;
    }
    let xs_x: Vec<f64> = (0..n).map(|i| i as f64 * hx).collect();
    let xs_y: Vec<f64> = (0..n).map(|i| i as f64 * hy).collect();
    let mut row = vec![0.0f64; n];
    let mut out_row = vec![0.0f64; n];
    for iy in 0..n {
        row.copy_from_slice(&d[iy * n..(iy + 1) * n]);
        dt1d(&row, &xs_x, &mut out_row);
        d[iy * n..(iy + 1) * n].copy_from_slice(&out_row);
    }
    let mut col = vec![0.0f64; n];
    let mut out_col = vec![0.0f64; n];
    for ix in 0..n {
        for iy in 0..n {
            col[iy] = d[iy * n + ix];
        }
        dt1d(&col, &xs_y, &mut out_col);
        for iy in 0..n {
            d[iy * n + ix] = out_col[iy];
        }
    }
    for v in d.iter_mut() {
        if v.is_finite() {
            *v = v.sqrt();
        }
    }
    d
}

/// Symmetric Hausdorff distance between the box-center point clouds.
pub fn hausdorff_boxes(a: &BoxSet, b: &BoxSet) -> Result<f64, EngineError> {
    if a.grid() != b.grid() {
        return Err(EngineError::GridMismatch);
    }
    if a.is_empty() || b.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    let n = a.grid().n() as usize;
    let da = distance_field(a);
    let db = distance_field(b);
    let mut h: f64 = 0.0;
    for (ix, iy) in a.iter() {
        h = h.max(db[iy as usize * n + ix as usize]);
    }
    for (ix, iy) in b.iter() {
        h = h.max(da[iy as usize * n + ix as usize]);
    }
    Ok(h)
}

/// Minimum center-to-center distance between two box sets (zero when they
/// share a box).
pub fn collision_distance(attr: &BoxSet, rep: &BoxSet) -> Result<f64, EngineError> {
    if attr.grid() != rep.grid() {
        return Err(EngineError::GridMismatch);
    }
    if attr.is_empty() || rep.is_empty() {
        return Err(EngineError::EmptyInput);
    }
    let n = attr.grid().n() as usize;
    let d = distance_field(rep);
    let mut best = f64::INFINITY;
    for (ix, iy) in attr.iter() {
        best = best.min(d[iy as usize * n + ix as usize]);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// CSV serialization
// ---------------------------------------------------------------------------

/// Writes a box set in the interchange format: a grid header line, the grid
/// values, then `ix,iy` rows in lexicographic order.
pub fn write_boxset_csv<W: std::io::Write>(w: &mut W, set: &BoxSet) -> Result<(), EngineError> {
    let g = set.grid();
    writeln!(w, "depth,xmin,ymin,xmax,ymax")?;
    writeln!(
        w,
        "{},{:.9e},{:.9e},{:.9e},{:.9e}",
        g.depth, g.min.x, g.min.y, g.max.x, g.max.y
    )?;
    writeln!(w, "ix,iy")?;
    for (ix, iy) in set.iter_lexicographic() {
        writeln!(w, "{ix},{iy}")?;
    }
    Ok(())
}

/// Reads the format produced by [`write_boxset_csv`].
pub fn read_boxset_csv<R: std::io::BufRead>(r: R) -> Result<BoxSet, EngineError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| EngineError::Parse("missing grid header".into()))??;
    if header.trim() != "depth,xmin,ymin,xmax,ymax" {
        return Err(EngineError::Parse(format!("unexpected header `{header}`")));
    }
    let values = lines
        .next()
        .ok_or_else(|| EngineError::Parse("missing grid values".into()))??;
    let parts: Vec<&str> = values.trim().split(',').collect();
    if parts.len() != 5 {
        return Err(EngineError::Parse("grid line must have five fields".into()));
    }
    let depth: u32 = parts[0]
        .parse()
        .map_err(|_| EngineError::Parse("bad depth".into()))?;
    let nums: Vec<f64> = parts[1..]
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| EngineError::Parse("bad grid corner".into())))
        .collect::<Result<_, _>>()?;
    let grid = GridSpec::new(Point2::new(nums[0], nums[1]), Point2::new(nums[2], nums[3]), depth)?;
    let second = lines
        .next()
        .ok_or_else(|| EngineError::Parse("missing ix,iy header".into()))??;
    if second.trim() != "ix,iy" {
        return Err(EngineError::Parse(format!("unexpected header `{second}`")));
    }
    let mut set = BoxSet::empty(grid);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let (sx, sy) = t
            .split_once(',')
            .ok_or_else(|| EngineError::Parse(format!("row {}: expected ix,iy", lineno + 4)))?;
        let ix: u32 = sx
            .parse()
            .map_err(|_| EngineError::Parse(format!("row {}: bad ix", lineno + 4)))?;
        let iy: u32 = sy
            .parse()
            .map_err(|_| EngineError::Parse(format!("row {}: bad iy", lineno + 4)))?;
        if ix >= grid.n() || iy >= grid.n() {
            return Err(EngineError::Parse(format!("row {}: index out of range", lineno + 4)));
        }
        set.insert(ix, iy);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AffineMap, HenonMap};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_grid(depth: u32) -> GridSpec {
        GridSpec::new(Point2::new(-1.0, -1.0), Point2::new(1.0, 1.0), depth).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(Point2::new(1.0, 0.0), Point2::new(0.0, 1.0), 4).is_err());
        assert!(GridSpec::new(Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), 25).is_err());
    }

    #[test]
    fn bitmap_roundtrip_and_complement() {
        let g = small_grid(6);
        let mut s = BoxSet::empty(g);
        s.insert(0, 0);
        s.insert(63, 63);
        s.insert(17, 40);
        assert!(s.contains(17, 40));
        assert_eq!(s.len(), 3);
        let c = s.complement();
        assert_eq!(c.len(), 64 * 64 - 3);
        assert!(!c.contains(17, 40));
        assert!(c.contains(1, 1));
        // Partition: union is full, intersection empty.
        let mut u = s.clone();
        u.union_with(&c);
        assert_eq!(u.len(), 64 * 64);
        assert!(!s.intersects(&c));
    }

    #[test]
    fn mark_disk_matches_bruteforce() {
        let g = small_grid(7);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let c = Point2::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2));
            let r = rng.gen_range(0.01..0.5);
            let mut fast = BoxSet::empty(g);
            mark_disk(&mut fast, c, r);
            let mut brute = BoxSet::empty(g);
            for ix in 0..g.n() {
                for iy in 0..g.n() {
                    let rect = g.box_rect(ix, iy);
                    let dx = (rect.min.x - c.x).max(c.x - rect.max.x).max(0.0);
                    let dy = (rect.min.y - c.y).max(c.y - rect.max.y).max(0.0);
                    if dx * dx + dy * dy <= r * r {
                        brute.insert(ix, iy);
                    }
                }
            }
            assert_eq!(fast, brute, "disk c={c:?} r={r}");
        }
    }

    #[test]
    fn image_cover_saturates_for_huge_radius() {
        let g = small_grid(4);
        let mut src = BoxSet::empty(g);
        src.insert(8, 8);
        let p = Params { a: 0.0, b: 1.0, eps: 10.0 };
        let map = AffineMap::scaling(0.5);
        let cover = image_cover(&src, &p, &map, &SamplingSpec::default());
        assert!(cover.escaped);
        assert_eq!(cover.boxes.len(), 16 * 16);
    }

    #[test]
    fn image_cover_single_box_matches_bruteforce() {
        let g = small_grid(7);
        let p = Params { a: 0.0, b: 1.0, eps: 0.1 };
        let map = AffineMap::scaling(0.5);
        let s = SamplingSpec::default();
        let mut src = BoxSet::empty(g);
        let (ix, iy) = g.locate(Point2::new(0.0, 0.0));
        src.insert(ix, iy);
        let cover = image_cover(&src, &p, &map, &s);
        let r = s.radius(p.eps, &g);
        let mut samples = Vec::new();
        box_samples(&g, ix, iy, s.k, &mut samples);
        let mut brute = BoxSet::empty(g);
        for bx in 0..g.n() {
            for by in 0..g.n() {
                let rect = g.box_rect(bx, by);
                let hit = samples.iter().any(|&q| {
                    let c = map.eval(q, &p);
                    let dx = (rect.min.x - c.x).max(c.x - rect.max.x).max(0.0);
                    let dy = (rect.min.y - c.y).max(c.y - rect.max.y).max(0.0);
                    dx * dx + dy * dy <= r * r
                });
                if hit {
                    brute.insert(bx, by);
                }
            }
        }
        assert_eq!(cover.boxes, brute);
    }

    #[test]
    fn image_cover_monotone_in_source() {
        let g = small_grid(6);
        let p = Params { a: 0.0, b: 1.0, eps: 0.05 };
        let map = AffineMap::scaling(0.5);
        let s = SamplingSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..50 {
            let mut small = BoxSet::empty(g);
            let mut big = BoxSet::empty(g);
            for _ in 0..20 {
                let (ix, iy) = (rng.gen_range(8..56), rng.gen_range(8..56));
                big.insert(ix, iy);
                if rng.gen_bool(0.5) {
                    small.insert(ix, iy);
                }
            }
            let ca = image_cover(&small, &p, &map, &s);
            let cb = image_cover(&big, &p, &map, &s);
            assert!(ca.boxes.is_subset_of(&cb.boxes));
        }
    }

    #[test]
    fn linear_attractor_is_disk() {
        // f(z) = z/2 with eps = 0.1 has the disk of radius 0.2 as minimal
        // attractor. Outer error stays within two box diagonals at depth 8
        // when the bloat is scaled to the map's Lipschitz constant (the
        // contraction doubles any dilation slack in the fixed cover).
        let g = small_grid(8);
        let p = Params { a: 0.0, b: 1.0, eps: 0.1 };
        let map = AffineMap::scaling(0.5);
        let sampling = SamplingSpec { k: 3, bloat: Some(0.15 * g.diag()) };
        let attr = minimal_attractor(Point2::new(0.4, 0.3), &p, &map, g, &sampling).unwrap();
        let cover = image_cover(&attr, &p, &map, &sampling);
        assert_eq!(cover.boxes, attr, "attractor must be image-invariant");
        let two_diag = 2.0 * g.diag();
        // Every cover center is close to the true disk.
        for (ix, iy) in attr.iter() {
            let c = g.center(ix, iy);
            assert!(c.norm() - 0.2 <= two_diag, "cover sticks out at {c:?}");
        }
        // The true disk is fully covered (probe lattice at half-cell pitch).
        let m = 160;
        for i in 0..=m {
            for j in 0..=m {
                let q = Point2::new(-0.2 + 0.4 * i as f64 / m as f64, -0.2 + 0.4 * j as f64 / m as f64);
                if q.norm() <= 0.2 {
                    let (ix, iy) = g.locate(q);
                    assert!(attr.contains(ix, iy), "disk point {q:?} uncovered");
                }
            }
        }
        assert_eq!(attr.component_count(), 1);
    }

    #[test]
    fn linear_domain_is_almost_everything() {
        let g = small_grid(6);
        let p = Params { a: 0.0, b: 1.0, eps: 0.05 };
        let map = AffineMap::scaling(0.5);
        let attr = minimal_attractor(Point2::new(0.1, 0.1), &p, &map, g, &SamplingSpec::default())
            .unwrap();
        let dom = domain_of_attraction(&attr, &p, &map, &SamplingSpec::default());
        assert!(attr.is_subset_of(&dom));
        // Every box whose image cover stays inside the grid is retained: for
        // the contraction the only deletions hug the grid boundary.
        let rep = dual_repeller(&dom);
        for (ix, iy) in rep.iter() {
            let c = g.center(ix, iy);
            assert!(
                c.x.abs() > 0.5 || c.y.abs() > 0.5,
                "unexpected interior deletion at {c:?}"
            );
        }
        // Fixed-point property: every member's cover stays inside dom u attr.
        let cover = image_cover(&dom, &p, &map, &SamplingSpec::default());
        let mut allowed = dom.clone();
        allowed.union_with(&attr);
        assert!(cover.boxes.is_subset_of(&allowed));
    }

    #[test]
    fn hausdorff_examples() {
        let g = small_grid(6);
        let mut a = BoxSet::empty(g);
        a.insert(10, 10);
        assert!(hausdorff_boxes(&a, &a).unwrap() == 0.0);
        let mut b = BoxSet::empty(g);
        b.insert(15, 10);
        let h = hausdorff_boxes(&a, &b).unwrap();
        assert!((h - 5.0 * g.hx()).abs() < 1e-12);
        let empty = BoxSet::empty(g);
        assert!(hausdorff_boxes(&a, &empty).is_err());
    }

    #[test]
    fn hausdorff_matches_bruteforce() {
        let g = small_grid(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let mut a = BoxSet::empty(g);
            let mut b = BoxSet::empty(g);
            for _ in 0..rng.gen_range(1..200) {
                a.insert(rng.gen_range(0..64), rng.gen_range(0..64));
            }
            for _ in 0..rng.gen_range(1..200) {
                b.insert(rng.gen_range(0..64), rng.gen_range(0..64));
            }
            let fast = hausdorff_boxes(&a, &b).unwrap();
            let pa: Vec<Point2> = a.iter().map(|(x, y)| g.center(x, y)).collect();
            let pb: Vec<Point2> = b.iter().map(|(x, y)| g.center(x, y)).collect();
            let directed = |u: &[Point2], v: &[Point2]| {
                u.iter()
                    .map(|p| v.iter().map(|q| p.dist(*q)).fold(f64::INFINITY, f64::min))
                    .fold(0.0f64, f64::max)
            };
            let brute = directed(&pa, &pb).max(directed(&pb, &pa));
            assert!((fast - brute).abs() < 1e-9, "fast {fast} brute {brute}");
        }
    }

    #[test]
    fn collision_distance_examples() {
        let g = small_grid(6);
        let mut a = BoxSet::empty(g);
        a.insert(5, 5);
        let mut b = BoxSet::empty(g);
        b.insert(5, 20);
        let d = collision_distance(&a, &b).unwrap();
        assert!((d - 15.0 * g.hy()).abs() < 1e-12);
        b.insert(5, 5);
        assert_eq!(collision_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn csv_roundtrip() {
        let g = small_grid(5);
        let mut s = BoxSet::empty(g);
        s.insert(3, 9);
        s.insert(20, 1);
        s.insert(3, 2);
        let mut buf = Vec::new();
        write_boxset_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        // Lexicographic order by (ix, iy).
        let rows: Vec<&str> = text.lines().skip(3).collect();
        assert_eq!(rows, vec!["3,2", "3,9", "20,1"]);
        let back = read_boxset_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn henon_two_components_at_a06() {
        // Reference regime: eps = 0.0625, a = 0.6 gives a two-piece minimal
        // attractor; a = 0.59 a connected one. Depth 8 keeps the test quick.
        let g = GridSpec::new(Point2::new(-2.5, -2.5), Point2::new(2.5, 2.5), 8).unwrap();
        let s = SamplingSpec::default();
        let map = HenonMap;
        let p6 = Params { a: 0.6, b: 0.3, eps: 0.0625 };
        let attr6 = minimal_attractor(Point2::new(0.5, 0.2), &p6, &map, g, &s).unwrap();
        assert_eq!(attr6.component_count(), 2);
        let p59 = Params { a: 0.59, b: 0.3, eps: 0.0625 };
        let attr59 = minimal_attractor(Point2::new(0.5, 0.2), &p59, &map, g, &s).unwrap();
        assert_eq!(attr59.component_count(), 1);
    }
}
