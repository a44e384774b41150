//! Poisson integrals and Muckenhoupt-type constants over enumerated cube families.

use crate::bfamily::{BFamily, Mart};
use crate::grid::{Construction, Cube, Grid, GridError};
use crate::measure::{common_points, puncture, Measure, PointSet, Tree};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoissonError {
    #[error("height t = {0} must be positive")]
    Height(f64),
    #[error("small Poisson order {0} must be positive")]
    Order(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PoissonKind {
    Standard,
    Reproducing,
    /// `P_{1+δ}` with the given `δ > 0`.
    Small(f64),
}

pub fn euclid(a: [f64; 2], b: [f64; 2], dim: usize) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = if dim == 2 { a[1] - b[1] } else { 0.0 };
    (d0 * d0 + d1 * d1).sqrt()
}

/// Kernel of each Poisson integral at side `l` and distance `d` from the centre.
pub fn poisson_kernel(kind: PoissonKind, alpha: f64, dim: usize, l: f64, d: f64) -> f64 {
    let n = dim as f64;
    match kind {
        PoissonKind::Standard => l / (l + d).powf(n + 1.0 - alpha),
        PoissonKind::Reproducing => (l / ((l + d) * (l + d))).powf(n - alpha),
        PoissonKind::Small(delta) => l.powf(1.0 + delta) / (l + d).powf(n + 1.0 + delta - alpha),
    }
}

/// `∫ k_Q(x) f(x) dμ(x)` over atoms accepted by `keep`.
pub fn poisson_with(
    kind: PoissonKind,
    q: &Cube,
    mu: &Measure,
    alpha: f64,
    f: Option<&[f64]>,
    keep: impl Fn(usize) -> bool,
) -> f64 {
    let c = q.center();
    let l = q.side();
    let mut s = 0.0;
    for (a, atom) in mu.atoms.iter().enumerate() {
        if !keep(a) {
            continue;
        }
        let w = atom.mass * f.map_or(1.0, |f| f[a]);
        if w == 0.0 {
            continue;
        }
        s += w * poisson_kernel(kind, alpha, mu.dim, l, euclid(mu.point(a), c, mu.dim));
    }
    s
}

pub fn poisson(kind: PoissonKind, q: &Cube, mu: &Measure, alpha: f64) -> f64 {
    poisson_with(kind, q, mu, alpha, None, |_| true)
}

/// Poisson integral of `μ` restricted to the complement of `hole`.
pub fn poisson_outside(kind: PoissonKind, q: &Cube, mu: &Measure, alpha: f64, hole: &Cube) -> f64 {
    poisson_with(kind, q, mu, alpha, None, |a| !hole.contains_fine(mu.fine_point(a)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceAtom {
    pub x: [f64; 2],
    pub t: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct HalfSpaceMeasure {
    pub dim: usize,
    pub atoms: Vec<HalfSpaceAtom>,
}

impl HalfSpaceMeasure {
    pub fn new(dim: usize) -> HalfSpaceMeasure {
        HalfSpaceMeasure { dim, atoms: Vec::new() }
    }

    pub fn push(&mut self, x: [f64; 2], t: f64, mass: f64) {
        self.atoms.push(HalfSpaceAtom { x, t, mass });
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Mass in the closed tent over `l`.
    pub fn tent_mass(&self, l: &Cube) -> f64 {
        self.atoms.iter().filter(|a| in_tent(a, l)).map(|a| a.mass).sum()
    }

    /// Copy with every mass divided by `t²`.
    pub fn over_t_sq(&self) -> HalfSpaceMeasure {
        HalfSpaceMeasure {
            dim: self.dim,
            atoms: self
                .atoms
                .iter()
                .map(|a| HalfSpaceAtom { x: a.x, t: a.t, mass: a.mass / (a.t * a.t) })
                .collect(),
        }
    }
}

/// Closed tent `T(L)`: convex hull of `L` and `(c_L, ℓ(L))`.
pub fn in_tent(a: &HalfSpaceAtom, l: &Cube) -> bool {
    let c = l.center();
    let h = l.side();
    if !(a.t > 0.0 && a.t <= h * (1.0 + 1e-12)) {
        return false;
    }
    let r = 0.5 * (h - a.t) + 1e-12 * h;
    (0..l.dim).all(|i| (a.x[i] - c[i]).abs() <= r)
}

/// `I × (0, ℓ(I)]`.
pub fn in_box(a: &HalfSpaceAtom, i: &Cube) -> bool {
    let b = i.to_box();
    a.t > 0.0
        && a.t <= i.side() * (1.0 + 1e-12)
        && (0..i.dim).all(|k| a.x[k] >= b.lo[k] && a.x[k] < b.hi[k])
}

/// `ℙ^α(fρ)(x, t)`.
pub fn halfspace_forward(
    x: [f64; 2],
    t: f64,
    rho: &Measure,
    f: Option<&[f64]>,
    alpha: f64,
) -> Result<f64, PoissonError> {
    if !(t > 0.0) {
        return Err(PoissonError::Height(t));
    }
    let e = (rho.dim as f64 + 1.0 - alpha) / 2.0;
    let mut s = 0.0;
    for (a, atom) in rho.atoms.iter().enumerate() {
        let w = atom.mass * f.map_or(1.0, |f| f[a]);
        if w == 0.0 {
            continue;
        }
        let d = euclid(x, rho.point(a), rho.dim);
        s += w * t / (t * t + d * d).powf(e);
    }
    Ok(s)
}

/// `ℚ^α(t 1_Î μ̄)(x)`; `tent = None` uses all of `μ̄`.
pub fn halfspace_dual(x: [f64; 2], mubar: &HalfSpaceMeasure, tent: Option<&Cube>, alpha: f64) -> f64 {
    let e = (mubar.dim as f64 + 1.0 - alpha) / 2.0;
    let mut s = 0.0;
    for a in &mubar.atoms {
        if let Some(i) = tent {
            if !in_box(a, i) {
                continue;
            }
        }
        let d = euclid(x, a.x, mubar.dim);
        s += a.mass * a.t * a.t / (a.t * a.t + d * d).powf(e);
    }
    s
}

/// Sampled grids plus optionally their augmented cubes.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFamily {
    pub grids: Vec<Grid>,
    pub augmented: bool,
}

impl GridFamily {
    pub fn single(g: Grid) -> GridFamily {
        GridFamily { grids: vec![g], augmented: false }
    }

    /// The standard grid followed by `count - 1` grids drawn under `seed`.
    pub fn sampled(
        dim: usize,
        m: i32,
        n: i32,
        count: usize,
        c: Construction,
        seed: u64,
        augmented: bool,
    ) -> Result<GridFamily, GridError> {
        let mut grids = vec![Grid::standard(dim, m, n)?];
        let mut seen: BTreeSet<String> = BTreeSet::new();
        seen.insert(format!("{:?}", grids[0].param));
        let space = Grid::param_space_size(dim, m, n);
        let mut draw = 0u64;
        while grids.len() < count && (grids.len() as u128) < space && draw < 64 * count as u64 {
            let g = Grid::sample_seeded(dim, m, n, c, seed.wrapping_add(draw))?;
            draw += 1;
            if seen.insert(format!("{:?}", g.param)) {
                grids.push(g);
            }
        }
        Ok(GridFamily { grids, augmented })
    }

    /// Every cube carrying mass of one of the measures, grids plus augmented cubes.
    pub fn cubes(&self, measures: &[&Measure]) -> Vec<Cube> {
        let mut set = BTreeSet::new();
        for g in &self.grids {
            for mu in measures {
                for a in 0..mu.len() {
                    let p = mu.fine_point(a);
                    for level in g.n..=g.m {
                        let c = g.cube_containing(p, level);
                        set.insert(c);
                        if self.augmented && level > g.n {
                            for e in 0..(1usize << c.dim) {
                                let mut lo = c.lo;
                                for (i, l) in lo.iter_mut().enumerate().take(c.dim) {
                                    if (e >> i) & 1 == 1 {
                                        *l -= c.side_fine();
                                    }
                                }
                                set.insert(Cube::new(c.dim, level - 1, lo));
                            }
                        }
                    }
                }
            }
        }
        set.into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sup {
    pub value: f64,
    pub witness: Option<Cube>,
}

impl Default for Sup {
    fn default() -> Sup {
        Sup { value: 0.0, witness: None }
    }
}

impl Sup {
    pub fn offer(&mut self, v: f64, q: Cube) {
        if v > self.value {
            self.value = v;
            self.witness = Some(q);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2Report {
    pub cal_a2: Sup,
    pub cal_a2_star: Sup,
    pub classical: Sup,
    /// Common atoms make the classical constant unbounded as cubes shrink.
    pub classical_diverges: bool,
    pub punct: Sup,
    pub punct_star: Sup,
    pub energy: Sup,
    pub energy_star: Sup,
    pub aggregate: f64,
    pub cubes_examined: usize,
}

fn scale(q: &Cube, alpha: f64) -> f64 {
    q.side().powf(q.dim as f64 - alpha)
}

/// Per-node `Σ_{J ⊆ Q} ♠(J)` for the family on measure `mi`.
pub fn spade_subtree(tree: &Tree, mu: &Measure, fam: &BFamily) -> Vec<f64> {
    let m = Mart::new(tree, mu, fam);
    let per: Vec<f64> = (0..tree.len())
        .map(|q| if m.atoms(q).len() > 1 { m.spade_sq(q) } else { 0.0 })
        .collect();
    tree.subtree_sums(&per)
}

/// All Muckenhoupt-type constants of `(σ, ω)` over the cube family.
pub fn a2_constants(sigma: &Measure, omega: &Measure, fam: &GridFamily, alpha: f64) -> A2Report {
    let common: PointSet = common_points(sigma, omega);
    let mut r = A2Report {
        cal_a2: Sup::default(),
        cal_a2_star: Sup::default(),
        classical: Sup::default(),
        classical_diverges: !common.is_empty() && alpha < sigma.dim as f64,
        punct: Sup::default(),
        punct_star: Sup::default(),
        energy: Sup::default(),
        energy_star: Sup::default(),
        aggregate: 0.0,
        cubes_examined: 0,
    };
    let cubes = fam.cubes(&[sigma, omega]);
    r.cubes_examined = cubes.len();
    for q in &cubes {
        let s = scale(q, alpha);
        let ms = sigma.mass_in_cube(q);
        let mw = omega.mass_in_cube(q);
        if mw > 0.0 {
            let p = poisson_outside(PoissonKind::Reproducing, q, sigma, alpha, q);
            r.cal_a2.offer(p * mw / s, *q);
        }
        if ms > 0.0 {
            let p = poisson_outside(PoissonKind::Reproducing, q, omega, alpha, q);
            r.cal_a2_star.offer(p * ms / s, *q);
        }
        if ms > 0.0 && mw > 0.0 {
            r.classical.offer(mw / s * ms / s, *q);
            r.punct.offer(puncture(q, omega, &common) / s * ms / s, *q);
            r.punct_star.offer(mw / s * puncture(q, sigma, &common) / s, *q);
        }
    }
    for g in &fam.grids {
        let tree = Tree::build(g, &[sigma, omega]);
        let us = BFamily::unit(&tree, 0);
        let uw = BFamily::unit(&tree, 1);
        let sw = spade_subtree(&tree, omega, &uw);
        let ss = spade_subtree(&tree, sigma, &us);
        for node in 0..tree.len() {
            let q = tree.cube(node);
            let s = scale(&q, alpha);
            let l2 = q.side() * q.side();
            r.energy.offer(sw[node] / l2 / s * tree.mass(node, 0) / s, q);
            r.energy_star.offer(tree.mass(node, 1) / s * ss[node] / l2 / s, q);
        }
    }
    r.aggregate = r.cal_a2.value + r.cal_a2_star.value + r.punct.value + r.punct_star.value;
    r
}
