//! Dyadic cubes and parameterized grids on an integer fine lattice.
//!
//! Coordinates are stored as integers in units of `2^-FINE_BITS`, so every
//! containment and boundary test below is exact.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FINE_BITS: i32 = 24;
pub const MAX_LEVEL: i32 = 20;
pub const MIN_LEVEL: i32 = -16;

const FINE_UNIT: f64 = (1u64 << FINE_BITS) as f64;

pub fn fine_side(level: i32) -> i64 {
    1i64 << (FINE_BITS - level)
}

pub fn fine_to_f64(v: i64) -> f64 {
    v as f64 / FINE_UNIT
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension {0} not supported (1 or 2)")]
    Dim(usize),
    #[error("levels out of range: need {MIN_LEVEL} <= N={n} <= 0 <= M={m} <= {MAX_LEVEL}")]
    Levels { m: i32, n: i32 },
    #[error("scale choices must have {expected} entries, got {got}")]
    ShiftLen { expected: usize, got: usize },
    #[error("scale choice at index {index} is not a bit: {value:?}")]
    ShiftBit { index: usize, value: [u8; 2] },
    #[error("translation component {value} outside [0, {bound})")]
    Translation { value: i64, bound: i64 },
    #[error("level {level} outside [{n}, {m}]")]
    Level { level: i32, n: i32, m: i32 },
    #[error("halo parameter {0} outside (0, 1/2)")]
    Halo(f64),
    #[error("parameter index {0} outside the parameter space")]
    Index(u128),
}

/// Half-open dyadic cube `lo + [0, side)^dim`, `side = 2^-level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cube {
    pub level: i32,
    pub lo: [i64; 2],
    pub dim: usize,
}

impl Cube {
    pub fn new(dim: usize, level: i32, lo: [i64; 2]) -> Cube {
        let mut lo = lo;
        if dim == 1 {
            lo[1] = 0;
        }
        Cube { level, lo, dim }
    }

    /// Cube with corner `k * 2^-level` (standard lattice).
    pub fn from_index(dim: usize, level: i32, k: [i64; 2]) -> Cube {
        let s = fine_side(level);
        Cube::new(dim, level, [k[0] * s, k[1] * s])
    }

    pub fn side_fine(&self) -> i64 {
        fine_side(self.level)
    }

    pub fn side(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn hi(&self) -> [i64; 2] {
        let s = self.side_fine();
        let mut h = [self.lo[0] + s, self.lo[1] + s];
        if self.dim == 1 {
            h[1] = 0;
        }
        h
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim as i32)
    }

    pub fn center(&self) -> [f64; 2] {
        let h = self.side_fine() / 2;
        let mut c = [fine_to_f64(self.lo[0]) + fine_to_f64(h), 0.0];
        if self.dim == 2 {
            c[1] = fine_to_f64(self.lo[1]) + fine_to_f64(h);
        }
        c
    }

    pub fn contains_fine(&self, p: [i64; 2]) -> bool {
        let s = self.side_fine();
        (0..self.dim).all(|i| p[i] >= self.lo[i] && p[i] < self.lo[i] + s)
    }

    pub fn contains_cube(&self, other: &Cube) -> bool {
        let (s, t) = (self.side_fine(), other.side_fine());
        (0..self.dim).all(|i| other.lo[i] >= self.lo[i] && other.lo[i] + t <= self.lo[i] + s)
    }

    /// Open interiors meet.
    pub fn intersects(&self, other: &Cube) -> bool {
        let (s, t) = (self.side_fine(), other.side_fine());
        (0..self.dim).all(|i| other.lo[i] < self.lo[i] + s && self.lo[i] < other.lo[i] + t)
    }

    pub fn children(&self) -> Vec<Cube> {
        let h = self.side_fine() / 2;
        let mut out = Vec::with_capacity(1 << self.dim);
        for e in 0..(1usize << self.dim) {
            let mut lo = self.lo;
            for (i, l) in lo.iter_mut().enumerate().take(self.dim) {
                if e >> i & 1 == 1 {
                    *l += h;
                }
            }
            out.push(Cube::new(self.dim, self.level + 1, lo));
        }
        out
    }

    pub fn child_containing(&self, p: [i64; 2]) -> Cube {
        let h = self.side_fine() / 2;
        let mut lo = self.lo;
        for (i, l) in lo.iter_mut().enumerate().take(self.dim) {
            if p[i] >= *l + h {
                *l += h;
            }
        }
        Cube::new(self.dim, self.level + 1, lo)
    }

    pub fn grandchildren(&self) -> Vec<Cube> {
        self.children().iter().flat_map(|c| c.children()).collect()
    }

    /// Closure of `self` stays away from the boundary of `q`.
    pub fn strictly_inside(&self, q: &Cube) -> bool {
        let (s, t) = (q.side_fine(), self.side_fine());
        (0..self.dim).all(|i| self.lo[i] > q.lo[i] && self.lo[i] + t < q.lo[i] + s)
    }

    /// `3S ⊂ K` as half-open boxes.
    pub fn triple_within(&self, k: &Cube) -> bool {
        let s = self.side_fine();
        let ks = k.side_fine();
        (0..self.dim).all(|i| self.lo[i] - s >= k.lo[i] && self.lo[i] + 2 * s <= k.lo[i] + ks)
    }

    /// Minimal gap from the closure of `self` to the boundary of `k` when
    /// `self ⊂ k`, in fine units.
    pub fn inner_gap_fine(&self, k: &Cube) -> i64 {
        let (s, ks) = (self.side_fine(), k.side_fine());
        (0..self.dim)
            .map(|i| (self.lo[i] - k.lo[i]).min(k.lo[i] + ks - self.lo[i] - s))
            .min()
            .unwrap_or(0)
    }

    pub fn to_box(&self) -> FBox {
        let s = self.side();
        let mut b = FBox { lo: [0.0; 2], hi: [0.0; 2], dim: self.dim };
        for i in 0..self.dim {
            b.lo[i] = fine_to_f64(self.lo[i]);
            b.hi[i] = b.lo[i] + s;
        }
        b
    }

    /// Concentric dilation by per-axis factors.
    pub fn dilate(&self, factor: [f64; 2]) -> FBox {
        let c = self.center();
        let s = self.side();
        let mut b = FBox { lo: [0.0; 2], hi: [0.0; 2], dim: self.dim };
        for i in 0..self.dim {
            b.lo[i] = c[i] - factor[i] * s / 2.0;
            b.hi[i] = c[i] + factor[i] * s / 2.0;
        }
        b
    }
}

/// Euclidean distance between the closures of two integer boxes, fine units in, real out.
pub fn box_distance(alo: [i64; 2], ahi: [i64; 2], blo: [i64; 2], bhi: [i64; 2], dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        let gap = (blo[i] - ahi[i]).max(alo[i] - bhi[i]).max(0);
        let g = fine_to_f64(gap);
        s += g * g;
    }
    s.sqrt()
}

/// Distance from the closure of `j` to the boundary of `s`.
pub fn distance_to_boundary(j: &Cube, s: &Cube) -> f64 {
    let (jlo, jhi, slo, shi) = (j.lo, j.hi(), s.lo, s.hi());
    let dim = j.dim;
    let inside = (0..dim).all(|i| jlo[i] >= slo[i] && jhi[i] <= shi[i]);
    if inside {
        let g = (0..dim).map(|i| (jlo[i] - slo[i]).min(shi[i] - jhi[i])).min().unwrap();
        return fine_to_f64(g);
    }
    let apart = (0..dim).any(|i| jhi[i] <= slo[i] || jlo[i] >= shi[i]);
    if apart {
        box_distance(jlo, jhi, slo, shi, dim)
    } else {
        0.0
    }
}

/// Axis-aligned real box `[lo, hi)`; a box with `lo == hi` on some axis is a closed face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub dim: usize,
}

impl FBox {
    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|i| (self.hi[i] - self.lo[i]).max(0.0)).product()
    }

    pub fn is_degenerate(&self) -> bool {
        (0..self.dim).any(|i| self.hi[i] <= self.lo[i])
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        if self.is_degenerate() {
            (0..self.dim).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
        } else {
            (0..self.dim).all(|i| p[i] >= self.lo[i] && p[i] < self.hi[i])
        }
    }

    pub fn intersect(&self, o: &FBox) -> Option<FBox> {
        let mut b = *self;
        for i in 0..self.dim {
            b.lo[i] = self.lo[i].max(o.lo[i]);
            b.hi[i] = self.hi[i].min(o.hi[i]);
            if b.hi[i] <= b.lo[i] {
                return None;
            }
        }
        Some(b)
    }

    /// `self ∖ o` as at most `2·dim` disjoint boxes.
    pub fn difference(&self, o: &FBox) -> Vec<FBox> {
        let Some(cut) = self.intersect(o) else {
            return vec![*self];
        };
        let mut out = Vec::new();
        let mut rest = *self;
        for i in 0..self.dim {
            if rest.lo[i] < cut.lo[i] {
                let mut b = rest;
                b.hi[i] = cut.lo[i];
                out.push(b);
                rest.lo[i] = cut.lo[i];
            }
            if cut.hi[i] < rest.hi[i] {
                let mut b = rest;
                b.lo[i] = cut.hi[i];
                out.push(b);
                rest.hi[i] = cut.hi[i];
            }
        }
        out
    }

    /// Closed containment with absolute slack.
    pub fn within(&self, o: &FBox, slack: f64) -> bool {
        (0..self.dim).all(|i| self.lo[i] >= o.lo[i] - slack && self.hi[i] <= o.hi[i] + slack)
    }
}

/// Finite union of boxes. Full-dimensional boxes are kept pairwise disjoint;
/// degenerate faces (used for bodies) are stored as given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub dim: usize,
    pub boxes: Vec<FBox>,
}

impl Region {
    pub fn empty(dim: usize) -> Region {
        Region { dim, boxes: Vec::new() }
    }

    /// Add a box, keeping full-dimensional pieces disjoint.
    pub fn insert(&mut self, b: FBox) {
        if b.is_degenerate() {
            if !self.boxes.contains(&b) {
                self.boxes.push(b);
            }
            return;
        }
        let mut pieces = vec![b];
        for e in self.boxes.iter().filter(|e| !e.is_degenerate()) {
            pieces = pieces.iter().flat_map(|p| p.difference(e)).collect();
        }
        self.boxes.extend(pieces);
    }

    pub fn volume(&self) -> f64 {
        self.boxes.iter().map(|b| b.volume()).sum()
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        self.boxes.iter().any(|b| b.contains_point(p))
    }
}

/// Grid parameterization.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridParam {
    /// Scale choices `β_i ∈ {0,1}^n` for levels `i = N+1 ..= M` (index 0 is level N+1).
    Shift(Vec<[u8; 2]>),
    /// Translation `γ = k·2^-M` with `0 <= k_i < 2^(M-N)`.
    Translate([i64; 2]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Construction {
    Shift,
    Translate,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub m: i32,
    pub n: i32,
    pub param: GridParam,
    offsets: Vec<[i64; 2]>,
}

pub fn make_grid(dim: usize, m: i32, n: i32, param: GridParam) -> Result<Grid, GridError> {
    if dim != 1 && dim != 2 {
        return Err(GridError::Dim(dim));
    }
    if !(MIN_LEVEL <= n && n <= 0 && 0 <= m && m <= MAX_LEVEL) {
        return Err(GridError::Levels { m, n });
    }
    let span = (m - n) as usize;
    let mut offsets = vec![[0i64; 2]; span + 1];
    match &param {
        GridParam::Shift(beta) => {
            if beta.len() != span {
                return Err(GridError::ShiftLen { expected: span, got: beta.len() });
            }
            for (idx, b) in beta.iter().enumerate() {
                if b[0] > 1 || b[1] > 1 || (dim == 1 && b[1] != 0) {
                    return Err(GridError::ShiftBit { index: idx, value: *b });
                }
            }
            // offset(l) = sum_{i=l+1}^{M} beta_i 2^-i
            for l in (n..m).rev() {
                let i = l + 1;
                let b = beta[(i - n - 1) as usize];
                let prev = offsets[(l + 1 - n) as usize];
                let w = fine_side(i);
                offsets[(l - n) as usize] = [prev[0] + b[0] as i64 * w, prev[1] + b[1] as i64 * w];
            }
        }
        GridParam::Translate(g) => {
            let bound = 1i64 << span;
            for (axis, &v) in g.iter().enumerate() {
                if axis >= dim {
                    if v != 0 {
                        return Err(GridError::Translation { value: v, bound: 1 });
                    }
                    continue;
                }
                if v < 0 || v >= bound {
                    return Err(GridError::Translation { value: v, bound });
                }
            }
            let w = fine_side(m);
            for o in offsets.iter_mut() {
                *o = [g[0] * w, if dim == 2 { g[1] * w } else { 0 }];
            }
        }
    }
    Ok(Grid { dim, m, n, param, offsets })
}

impl Grid {
    pub fn standard(dim: usize, m: i32, n: i32) -> Result<Grid, GridError> {
        make_grid(dim, m, n, GridParam::Shift(vec![[0, 0]; (m - n).max(0) as usize]))
    }

    pub fn param_space_size(dim: usize, m: i32, n: i32) -> u128 {
        1u128 << (dim as u32 * (m - n) as u32)
    }

    /// Grid number `idx` in a fixed enumeration of the parameter space.
    pub fn from_index(dim: usize, m: i32, n: i32, c: Construction, idx: u128) -> Result<Grid, GridError> {
        if idx >= Grid::param_space_size(dim, m, n) {
            return Err(GridError::Index(idx));
        }
        let span = (m - n) as usize;
        match c {
            Construction::Shift => {
                let mut beta = vec![[0u8; 2]; span];
                for (j, b) in beta.iter_mut().enumerate() {
                    for axis in 0..dim {
                        b[axis] = ((idx >> (j * dim + axis)) & 1) as u8;
                    }
                }
                make_grid(dim, m, n, GridParam::Shift(beta))
            }
            Construction::Translate => {
                let mask = (1u128 << span) - 1;
                let g0 = (idx & mask) as i64;
                let g1 = if dim == 2 { ((idx >> span) & mask) as i64 } else { 0 };
                make_grid(dim, m, n, GridParam::Translate([g0, g1]))
            }
        }
    }

    pub fn sample<R: Rng>(dim: usize, m: i32, n: i32, c: Construction, rng: &mut R) -> Result<Grid, GridError> {
        let bits = dim as u32 * (m - n) as u32;
        let idx: u128 = if bits == 0 { 0 } else { rng.gen::<u128>() & ((1u128 << bits) - 1) };
        Grid::from_index(dim, m, n, c, idx)
    }

    pub fn sample_seeded(dim: usize, m: i32, n: i32, c: Construction, seed: u64) -> Result<Grid, GridError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::sample(dim, m, n, c, &mut rng)
    }

    pub fn offset(&self, level: i32) -> [i64; 2] {
        // Levels finer than M share the level-M lattice.
        let l = level.clamp(self.n, self.m);
        self.offsets[(l - self.n) as usize]
    }

    fn check_level(&self, level: i32) -> Result<(), GridError> {
        if level < self.n || level > self.m {
            Err(GridError::Level { level, n: self.n, m: self.m })
        } else {
            Ok(())
        }
    }

    pub fn cube_containing(&self, p: [i64; 2], level: i32) -> Cube {
        let o = self.offset(level);
        let s = fine_side(level);
        let mut lo = [0i64; 2];
        for i in 0..self.dim {
            lo[i] = o[i] + (p[i] - o[i]).div_euclid(s) * s;
        }
        Cube::new(self.dim, level, lo)
    }

    pub fn is_member(&self, q: &Cube) -> bool {
        if q.level < self.n || q.level > self.m || q.dim != self.dim {
            return false;
        }
        let o = self.offset(q.level);
        let s = q.side_fine();
        (0..self.dim).all(|i| (q.lo[i] - o[i]).rem_euclid(s) == 0)
    }

    pub fn parent(&self, q: &Cube) -> Option<Cube> {
        if q.level <= self.n {
            return None;
        }
        Some(self.cube_containing(q.lo, q.level - 1))
    }

    pub fn ancestor(&self, q: &Cube, k: i32) -> Result<Cube, GridError> {
        self.check_level(q.level - k)?;
        Ok(self.cube_containing(q.lo, q.level - k))
    }

    /// All grid cubes at `level` whose interior meets the box `[lo, hi)`.
    pub fn cubes_meeting(&self, level: i32, lo: [i64; 2], hi: [i64; 2]) -> Vec<Cube> {
        let o = self.offset(level);
        let s = fine_side(level);
        let mut ranges = [(0i64, 1i64); 2];
        for i in 0..self.dim {
            let a = (lo[i] - o[i]).div_euclid(s);
            let b = (hi[i] - o[i] + s - 1).div_euclid(s);
            ranges[i] = (a, b);
        }
        let mut out = Vec::new();
        for k0 in ranges[0].0..ranges[0].1 {
            for k1 in ranges[1].0..ranges[1].1 {
                let lo = [o[0] + k0 * s, if self.dim == 2 { o[1] + k1 * s } else { 0 }];
                out.push(Cube::new(self.dim, level, lo));
            }
        }
        out
    }
}

/// Ancestor, children and grandchildren of a cube, grandchildren split by
/// whether they touch the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Relatives {
    pub ancestor: Cube,
    pub children: Vec<Cube>,
    pub grandchildren: Vec<Cube>,
    pub inner: Vec<Cube>,
    pub outer: Vec<Cube>,
}

/// Children and grandchildren are reported only down to level `M`.
pub fn relatives(grid: &Grid, q: &Cube, k: i32) -> Result<Relatives, GridError> {
    grid.check_level(q.level)?;
    let ancestor = grid.ancestor(q, k)?;
    let children = if q.level < grid.m { q.children() } else { Vec::new() };
    let grandchildren = if q.level + 2 <= grid.m { q.grandchildren() } else { Vec::new() };
    let (inner, outer) = grandchildren.iter().partition(|g| g.strictly_inside(q));
    Ok(Relatives { ancestor, children, grandchildren, inner, outer })
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Whitney {
    pub cubes: Vec<Cube>,
    /// Level-M cells of `K` not covered by Whitney cubes.
    pub residual: Vec<Cube>,
}

/// Maximal subcubes `S` of `K` with `3S ⊂ K`, down to level `m`.
pub fn whitney(k: &Cube, m: i32) -> Whitney {
    let mut w = Whitney::default();
    if k.level >= m {
        w.residual.push(*k);
        return w;
    }
    let mut stack = k.children();
    while let Some(c) = stack.pop() {
        if c.triple_within(k) {
            w.cubes.push(c);
        } else if c.level >= m {
            w.residual.push(c);
        } else {
            stack.extend(c.children());
        }
    }
    w.cubes.sort();
    w.residual.sort();
    w
}

/// Faces of a cube as closed degenerate boxes.
pub fn cube_faces(c: &Cube) -> Vec<FBox> {
    let b = c.to_box();
    let mut out = Vec::new();
    for i in 0..c.dim {
        for v in [b.lo[i], b.hi[i]] {
            let mut f = b;
            f.lo[i] = v;
            f.hi[i] = v;
            out.push(f);
        }
    }
    out
}

/// Union of boundaries of the Whitney cubes of `K` and of the residual band
/// cells, as closed faces.
pub fn body(k: &Cube, m: i32) -> Region {
    let w = whitney(k, m);
    let mut r = Region::empty(k.dim);
    for c in w.cubes.iter().chain(w.residual.iter()) {
        for f in cube_faces(c) {
            r.insert(f);
        }
    }
    r
}

/// Boundaries of the children of `K`.
pub fn skeleton(k: &Cube) -> Region {
    let mut r = Region::empty(k.dim);
    for c in k.children() {
        for f in cube_faces(&c) {
            r.insert(f);
        }
    }
    r
}

/// `dist(J, body K)` by pruned descent through the Whitney recursion.
pub fn body_distance(j: &Cube, k: &Cube, m: i32) -> f64 {
    if k.level >= m {
        return distance_to_boundary(j, k);
    }
    let mut best = f64::INFINITY;
    let mut stack = k.children();
    while let Some(c) = stack.pop() {
        if box_distance(j.lo, j.hi(), c.lo, c.hi(), j.dim) >= best {
            continue;
        }
        if c.triple_within(k) || c.level >= m {
            best = best.min(distance_to_boundary(j, &c));
        } else {
            stack.extend(c.children());
        }
    }
    best
}

pub fn goodness_threshold(j: &Cube, k: &Cube, eps: f64) -> f64 {
    2.0 * j.side().powf(eps) * k.side().powf(1.0 - eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Goodness {
    pub good: bool,
    pub distance: f64,
    pub threshold: f64,
}

pub fn is_eps_good(j: &Cube, k: &Cube, eps: f64, m: i32) -> Goodness {
    let distance = body_distance(j, k, m);
    let threshold = goodness_threshold(j, k, eps);
    Goodness { good: distance > threshold, distance, threshold }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpCross {
    pub cross: Option<Cube>,
    pub flat: Option<Cube>,
}

/// `J^✠`: deepest grid cube `Q ⊇ J` such that `J` is good in `Q` and every
/// grid ancestor of `Q`; `J^♭` is the grandchild of `J^✠` containing `J`.
pub fn sharp_cross(j: &Cube, grid: &Grid, eps: f64) -> SharpCross {
    let mut cross = None;
    for level in grid.n..=j.level.min(grid.m) {
        let k = grid.cube_containing(j.lo, level);
        if !k.contains_cube(j) || !is_eps_good(j, &k, eps, grid.m).good {
            break;
        }
        cross = Some(k);
    }
    let flat = cross.and_then(|c| {
        if j.level >= c.level + 2 {
            Some(c.child_containing(j.lo).child_containing(j.lo))
        } else {
            None
        }
    });
    SharpCross { cross, flat }
}

pub fn deep_gamma(rho: i32, eps: f64) -> f64 {
    1.0 + 4.0 * (rho as f64 * (1.0 - eps)).exp2()
}

/// Maximal cubes `J` of `g` with `J ⊂ K`, `ℓ(J) <= 2^-ρ ℓ(K)` and
/// `d(J, ∂K) >= 2 ℓ(J)^ε ℓ(K)^(1-ε)`.
pub fn m_deep(k: &Cube, rho: i32, eps: f64, g: &Grid) -> Vec<Cube> {
    let start = k.level + rho;
    if start > g.m {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut stack = g.cubes_meeting(start.max(g.n), k.lo, k.hi());
    while let Some(j) = stack.pop() {
        if !j.intersects(k) {
            continue;
        }
        if k.contains_cube(&j) && fine_to_f64(j.inner_gap_fine(k)) >= goodness_threshold(&j, k, eps) {
            out.push(j);
        } else if j.level < g.m {
            stack.extend(j.children());
        }
    }
    out.sort();
    out
}

/// `γJ ⊂ K` (closed, with roundoff slack relative to `ℓ(K)`).
pub fn dilate_within(j: &Cube, gamma: f64, k: &Cube) -> bool {
    j.dilate([gamma, gamma]).within(&k.to_box(), 1e-12 * k.side())
}

/// Largest number of dilates `γJ` covering one point of the level-`m` cell-centre lattice in `K`.
pub fn overlap_count(cubes: &[Cube], gamma: f64, k: &Cube, m: i32) -> usize {
    let boxes: Vec<FBox> = cubes.iter().map(|c| c.dilate([gamma, gamma])).collect();
    let s = fine_side(m);
    let cells = k.side_fine() / s;
    let mut best = 0;
    let ny = if k.dim == 2 { cells } else { 1 };
    for a in 0..cells {
        for b in 0..ny {
            let p = [
                fine_to_f64(k.lo[0] + a * s + s / 2),
                if k.dim == 2 { fine_to_f64(k.lo[1] + b * s + s / 2) } else { 0.0 },
            ];
            best = best.max(boxes.iter().filter(|x| x.contains_point(p)).count());
        }
    }
    best
}

/// `(1+λ)Q ∖ (1-λ)Q`.
pub fn halo_region(q: &Cube, lambda: [f64; 2]) -> Result<Region, GridError> {
    for &l in lambda.iter().take(q.dim) {
        if !(l > 0.0 && l < 0.5) {
            return Err(GridError::Halo(l));
        }
    }
    let outer = q.dilate([1.0 + lambda[0], 1.0 + lambda[1]]);
    let inner = q.dilate([1.0 - lambda[0], 1.0 - lambda[1]]);
    let mut r = Region::empty(q.dim);
    for b in outer.difference(&inner) {
        r.insert(b);
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadEstimate {
    pub k: i32,
    pub eps: f64,
    pub trials: usize,
    pub p: f64,
    pub stderr: f64,
}

/// Extra bits of positional resolution of `J` below its own side length.
pub const BAD_SUBCELL_BITS: i32 = 2;

/// Monte-Carlo estimate of the probability that a cube `J` is `ε`-bad in the
/// grid cube `K ⊇ J` with `ℓ(K) = 2^k ℓ(J)`, over uniformly random grids.
///
/// Under uniformly drawn scale choices or translations the position of `J`
/// inside `K` is uniform, so the sampler draws that position directly.
pub fn bad_probability_mc(dim: usize, k: i32, eps: f64, trials: usize, seed: u64) -> BadEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jl = k;
    let kk = Cube::new(dim, 0, [0, 0]);
    let slots = (1i64 << (k + BAD_SUBCELL_BITS)) - (1i64 << BAD_SUBCELL_BITS) + 1;
    let unit = fine_side(k + BAD_SUBCELL_BITS);
    let mut bad = 0usize;
    for _ in 0..trials {
        let mut lo = [0i64; 2];
        for l in lo.iter_mut().take(dim) {
            *l = rng.gen_range(0..slots) * unit;
        }
        let j = Cube::new(dim, jl, lo);
        if !is_eps_good(&j, &kk, eps, jl).good {
            bad += 1;
        }
    }
    let p = bad as f64 / trials.max(1) as f64;
    let stderr = (p * (1.0 - p) / trials.max(1) as f64).sqrt();
    BadEstimate { k, eps, trials, p, stderr }
}
