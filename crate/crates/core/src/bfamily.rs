//! Accretive testing families `{b_Q}` and the adapted martingale calculus.

use crate::grid::Cube;
use crate::measure::{Measure, Tree};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::borrow::Cow;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("cube {cube:?} has non-positive average {avg} of its testing function")]
    NonAccretive { cube: Cube, avg: f64 },
    #[error("exponent p = {0} must exceed 2")]
    Exponent(f64),
    #[error("truncation parameter {0} outside (0, 1/4]")]
    Eps(f64),
    #[error("delta = {delta} outside (0, {bound})")]
    Delta { delta: f64, bound: f64 },
    #[error("value table for node {node} has {got} entries, expected {expected}")]
    Length { node: usize, got: usize, expected: usize },
    #[error("truncation needs a finite exponent")]
    InfiniteExponent,
}

/// Atom-indexed sparse function: `(atom, value)` pairs.
pub type Piece = Vec<(usize, f64)>;

#[derive(Clone, Debug)]
pub struct BFamily {
    /// Index of the measure in the tree.
    pub mi: usize,
    pub p: f64,
    pub c_b: f64,
    pub big_c_b: f64,
    /// Per node, aligned with `tree.atoms(node, mi)`; `None` is the unit family.
    vals: Option<Vec<Vec<f64>>>,
    broken: Vec<bool>,
}

impl BFamily {
    pub fn unit(tree: &Tree, mi: usize) -> BFamily {
        BFamily { mi, p: f64::INFINITY, c_b: 1.0, big_c_b: 1.0, vals: None, broken: vec![false; tree.len()] }
    }

    pub fn is_unit(&self) -> bool {
        self.vals.is_none()
    }

    /// Explicit per-node values; accretivity constants are computed over all
    /// nodes with positive mass.
    pub fn from_node_values(
        tree: &Tree,
        mu: &Measure,
        mi: usize,
        p: f64,
        vals: Vec<Vec<f64>>,
    ) -> Result<BFamily, FamilyError> {
        if !(p > 2.0) {
            return Err(FamilyError::Exponent(p));
        }
        for (node, v) in vals.iter().enumerate() {
            let expected = tree.atoms(node, mi).len();
            if v.len() != expected {
                return Err(FamilyError::Length { node, got: v.len(), expected });
            }
        }
        let mut c_b = f64::INFINITY;
        let mut big_c_b: f64 = 0.0;
        for node in 0..tree.len() {
            let m = tree.mass(node, mi);
            if m <= 0.0 {
                continue;
            }
            let atoms = tree.atoms(node, mi);
            let v = &vals[node];
            let avg: f64 = atoms.iter().zip(v).map(|(&a, &b)| b * mu.atoms[a].mass).sum::<f64>() / m;
            if !(avg > 0.0) {
                return Err(FamilyError::NonAccretive { cube: tree.cube(node), avg });
            }
            c_b = c_b.min(avg);
            let lp = if p.is_infinite() {
                v.iter().fold(0.0f64, |acc, b| acc.max(b.abs()))
            } else {
                (atoms.iter().zip(v).map(|(&a, &b)| b.abs().powf(p) * mu.atoms[a].mass).sum::<f64>() / m).powf(1.0 / p)
            };
            big_c_b = big_c_b.max(lp);
        }
        if !c_b.is_finite() {
            c_b = 1.0;
        }
        let mut fam = BFamily { mi, p, c_b, big_c_b, vals: Some(vals), broken: vec![false; tree.len()] };
        fam.broken = fam.compute_broken(tree);
        Ok(fam)
    }

    pub fn from_fn(
        tree: &Tree,
        mu: &Measure,
        mi: usize,
        p: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<BFamily, FamilyError> {
        let vals = (0..tree.len()).map(|q| tree.atoms(q, mi).iter().map(|&a| f(q, a)).collect()).collect();
        BFamily::from_node_values(tree, mu, mi, p, vals)
    }

    /// `b_Q = 1_Q b` for one function `b`; no child is broken.
    pub fn single_function(tree: &Tree, mu: &Measure, mi: usize, p: f64, b: &[f64]) -> Result<BFamily, FamilyError> {
        BFamily::from_fn(tree, mu, mi, p, |_, a| b[a])
    }

    /// Independent uniform values in `[lo, hi]` on every cube.
    pub fn random_positive(
        tree: &Tree,
        mu: &Measure,
        mi: usize,
        p: f64,
        lo: f64,
        hi: f64,
        seed: u64,
    ) -> Result<BFamily, FamilyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BFamily::from_fn(tree, mu, mi, p, |_, _| rng.gen_range(lo..=hi))
    }

    /// Independent heavy-tailed values on every cube: mostly near 1, with rare
    /// large spikes and, on cubes holding several atoms, some negative entries.
    pub fn random_heavy(tree: &Tree, mu: &Measure, mi: usize, p: f64, seed: u64) -> Result<BFamily, FamilyError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vals = Vec::with_capacity(tree.len());
        for q in 0..tree.len() {
            let atoms = tree.atoms(q, mi);
            let mut v: Vec<f64> = atoms
                .iter()
                .map(|_| {
                    let u: f64 = rng.gen_range(0.05..1.0);
                    let mut x = 0.5 + u.powf(-0.5);
                    if rng.gen_bool(0.05) {
                        x *= rng.gen_range(5.0..30.0);
                    }
                    if atoms.len() > 1 && rng.gen_bool(0.15) {
                        x = -0.5 * x.min(3.0);
                    }
                    x
                })
                .collect();
            let m: f64 = atoms.iter().map(|&a| mu.atoms[a].mass).sum();
            if m > 0.0 {
                let avg: f64 = atoms.iter().zip(&v).map(|(&a, &b)| b * mu.atoms[a].mass).sum::<f64>() / m;
                if avg < 0.5 {
                    for x in v.iter_mut() {
                        *x += 0.5 - avg;
                    }
                }
            }
            vals.push(v);
        }
        BFamily::from_node_values(tree, mu, mi, p, vals)
    }

    /// `b_I = 1_I b_A` where `A` is the nearest node of `tops` containing `I`;
    /// nodes outside every top keep their own base values.
    pub fn corona(tree: &Tree, mu: &Measure, base: &BFamily, tops: &[usize]) -> Result<BFamily, FamilyError> {
        let mut is_top = vec![false; tree.len()];
        for &t in tops {
            is_top[t] = true;
        }
        let mut owner = vec![usize::MAX; tree.len()];
        for q in 0..tree.len() {
            owner[q] = if is_top[q] {
                q
            } else {
                match tree.nodes[q].parent {
                    Some(p) if owner[p] != usize::MAX => owner[p],
                    _ => usize::MAX,
                }
            };
        }
        let mi = base.mi;
        BFamily::from_fn(tree, mu, mi, base.p, |q, a| {
            let o = if owner[q] == usize::MAX { q } else { owner[q] };
            base.b(tree, o, a)
        })
    }

    /// Same family with every value multiplied by `s > 0`.
    pub fn scaled(&self, tree: &Tree, mu: &Measure, s: f64) -> Result<BFamily, FamilyError> {
        let vals = (0..tree.len()).map(|q| self.local(tree, q).iter().map(|v| v * s).collect()).collect();
        BFamily::from_node_values(tree, mu, self.mi, self.p, vals)
    }

    fn compute_broken(&self, tree: &Tree) -> Vec<bool> {
        let mut out = vec![false; tree.len()];
        if self.vals.is_none() {
            return out;
        }
        for (q, flag) in out.iter_mut().enumerate() {
            if let Some(p) = tree.nodes[q].parent {
                let mine = self.local(tree, q);
                let atoms = tree.atoms(q, self.mi);
                *flag = atoms.iter().zip(mine.iter()).any(|(&a, &v)| self.b(tree, p, a) != v);
            }
        }
        out
    }

    /// `b_Q` at an atom of `Q`.
    pub fn b(&self, tree: &Tree, q: usize, atom: usize) -> f64 {
        match &self.vals {
            None => 1.0,
            Some(v) => {
                let atoms = tree.atoms(q, self.mi);
                match atoms.binary_search(&atom) {
                    Ok(k) => v[q][k],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Values of `b_Q` aligned with the atoms of `Q`.
    pub fn local<'a>(&'a self, tree: &Tree, q: usize) -> Cow<'a, [f64]> {
        match &self.vals {
            None => Cow::Owned(vec![1.0; tree.atoms(q, self.mi).len()]),
            Some(v) => Cow::Borrowed(&v[q]),
        }
    }

    /// Child `q` has `b_q ≠ 1_q b_{πq}`.
    pub fn is_broken(&self, q: usize) -> bool {
        self.broken[q]
    }
}

/// Operator variants of the adapted calculus.
#[derive(Clone, Debug, PartialEq)]
pub enum MartingaleOp {
    E(usize),
    F(usize),
    FHat(usize),
    Delta(usize),
    Box(usize),
    DeltaPi(usize),
    BoxPi(usize),
    BoxFlat(usize),
    BoxFlatHat(usize),
    DeltaFlat(usize),
    DeltaFlatBrok(usize),
    BoxFlatBrok(usize),
    Nabla(usize),
    NablaHat(usize),
    Psi(Vec<usize>),
    QH(Vec<usize>),
    PH(Vec<usize>),
}

/// A family bound to its tree and measure.
#[derive(Clone, Copy)]
pub struct Mart<'a> {
    pub tree: &'a Tree,
    pub mu: &'a Measure,
    pub fam: &'a BFamily,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b != 0.0 {
        a / b
    } else {
        0.0
    }
}

impl<'a> Mart<'a> {
    pub fn new(tree: &'a Tree, mu: &'a Measure, fam: &'a BFamily) -> Mart<'a> {
        Mart { tree, mu, fam }
    }

    pub fn atoms(&self, q: usize) -> &'a [usize] {
        self.tree.atoms(q, self.fam.mi)
    }

    pub fn mass(&self, q: usize) -> f64 {
        self.tree.mass(q, self.fam.mi)
    }

    fn w(&self, a: usize) -> f64 {
        self.mu.atoms[a].mass
    }

    /// Children of `q` carrying mass of this measure.
    pub fn children(&self, q: usize) -> Vec<usize> {
        self.tree.nodes[q].children.iter().copied().filter(|&c| !self.atoms(c).is_empty()).collect()
    }

    pub fn broken_children(&self, q: usize) -> Vec<usize> {
        self.children(q).into_iter().filter(|&c| self.fam.is_broken(c)).collect()
    }

    pub fn natural_children(&self, q: usize) -> Vec<usize> {
        self.children(q).into_iter().filter(|&c| !self.fam.is_broken(c)).collect()
    }

    /// `∫_c b_owner dμ` for `c ⊆ owner`.
    pub fn int_b_on(&self, owner: usize, c: usize) -> f64 {
        if owner == c {
            let b = self.fam.local(self.tree, c);
            return self.atoms(c).iter().zip(b.iter()).map(|(&a, &v)| v * self.w(a)).sum();
        }
        self.atoms(c).iter().map(|&a| self.fam.b(self.tree, owner, a) * self.w(a)).sum()
    }

    pub fn int_b(&self, q: usize) -> f64 {
        self.int_b_on(q, q)
    }

    pub fn int_f(&self, c: usize, f: &[f64]) -> f64 {
        self.atoms(c).iter().map(|&a| f[a] * self.w(a)).sum()
    }

    pub fn int_abs(&self, c: usize, f: &[f64]) -> f64 {
        self.atoms(c).iter().map(|&a| f[a].abs() * self.w(a)).sum()
    }

    /// `∫_c f b_owner dμ`.
    pub fn int_fb_on(&self, owner: usize, c: usize, f: &[f64]) -> f64 {
        self.atoms(c).iter().map(|&a| f[a] * self.fam.b(self.tree, owner, a) * self.w(a)).sum()
    }

    /// Plain average `E_c^μ |f|`.
    pub fn avg_abs(&self, c: usize, f: &[f64]) -> f64 {
        ratio(self.int_abs(c, f), self.mass(c))
    }

    /// `E_Q f = e_coef · 1_Q`.
    pub fn e_coef(&self, q: usize, f: &[f64]) -> f64 {
        ratio(self.int_fb_on(q, q, f), self.int_b(q))
    }

    /// `F_Q f = f_coef · b_Q` and `F̂_Q f = f_coef · 1_Q`.
    pub fn f_coef(&self, q: usize, f: &[f64]) -> f64 {
        ratio(self.int_f(q, f), self.int_b(q))
    }

    fn push_const(&self, out: &mut Piece, c: usize, v: f64) {
        out.extend(self.atoms(c).iter().map(|&a| (a, v)));
    }

    fn push_b(&self, out: &mut Piece, owner: usize, c: usize, s: f64) {
        out.extend(self.atoms(c).iter().map(|&a| (a, s * self.fam.b(self.tree, owner, a))));
    }

    /// Local evaluation of a single-cube operator.
    pub fn piece(&self, op: &MartingaleOp, f: &[f64]) -> Piece {
        let mut out = Piece::new();
        match *op {
            MartingaleOp::E(q) => self.push_const(&mut out, q, self.e_coef(q, f)),
            MartingaleOp::F(q) => self.push_b(&mut out, q, q, self.f_coef(q, f)),
            MartingaleOp::FHat(q) => self.push_const(&mut out, q, self.f_coef(q, f)),
            MartingaleOp::Delta(q) => {
                let eq = self.e_coef(q, f);
                for c in self.children(q) {
                    self.push_const(&mut out, c, self.e_coef(c, f) - eq);
                }
            }
            MartingaleOp::Box(q) => {
                let sq = self.f_coef(q, f);
                for c in self.children(q) {
                    let sc = self.f_coef(c, f);
                    out.extend(
                        self.atoms(c)
                            .iter()
                            .map(|&a| (a, sc * self.fam.b(self.tree, c, a) - sq * self.fam.b(self.tree, q, a))),
                    );
                }
            }
            MartingaleOp::DeltaPi(q) => {
                let eq = self.e_coef(q, f);
                for c in self.children(q) {
                    let v = ratio(self.int_fb_on(q, c, f), self.int_b_on(q, c));
                    self.push_const(&mut out, c, v - eq);
                }
            }
            MartingaleOp::BoxPi(q) => {
                let sq = self.f_coef(q, f);
                for c in self.children(q) {
                    let sc = ratio(self.int_f(c, f), self.int_b_on(q, c));
                    self.push_b(&mut out, q, c, sc - sq);
                }
            }
            MartingaleOp::BoxFlat(q) => {
                let sq = self.f_coef(q, f);
                for c in self.children(q) {
                    if self.fam.is_broken(c) {
                        self.push_b(&mut out, q, c, -sq);
                    } else {
                        let sc = self.f_coef(c, f);
                        out.extend(
                            self.atoms(c)
                                .iter()
                                .map(|&a| (a, sc * self.fam.b(self.tree, c, a) - sq * self.fam.b(self.tree, q, a))),
                        );
                    }
                }
            }
            MartingaleOp::BoxFlatHat(q) => {
                let sq = self.f_coef(q, f);
                for c in self.children(q) {
                    let v = if self.fam.is_broken(c) { -sq } else { ratio(self.int_f(c, f), self.int_b_on(q, c)) - sq };
                    self.push_const(&mut out, c, v);
                }
            }
            MartingaleOp::DeltaFlat(q) => {
                let eq = self.e_coef(q, f);
                for c in self.children(q) {
                    let v = if self.fam.is_broken(c) { -eq } else { self.e_coef(c, f) - eq };
                    self.push_const(&mut out, c, v);
                }
            }
            MartingaleOp::DeltaFlatBrok(q) => {
                for c in self.broken_children(q) {
                    self.push_const(&mut out, c, self.e_coef(c, f));
                }
            }
            MartingaleOp::BoxFlatBrok(q) => {
                for c in self.broken_children(q) {
                    self.push_b(&mut out, c, c, self.f_coef(c, f));
                }
            }
            MartingaleOp::Nabla(q) => {
                for c in self.broken_children(q) {
                    self.push_const(&mut out, c, self.avg_abs(c, f));
                }
            }
            MartingaleOp::NablaHat(q) => {
                let top = self.avg_abs(q, f);
                for c in self.broken_children(q) {
                    self.push_const(&mut out, c, self.avg_abs(c, f) + top);
                }
            }
            MartingaleOp::Psi(_) | MartingaleOp::QH(_) | MartingaleOp::PH(_) => {
                let full = self.apply(op, f);
                out.extend(full.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(a, v)| (a, *v)));
            }
        }
        out
    }

    /// Full atom-indexed evaluation.
    pub fn apply(&self, op: &MartingaleOp, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mu.len()];
        match op {
            MartingaleOp::Psi(qs) | MartingaleOp::PH(qs) => {
                for &q in qs {
                    scatter(&mut out, &self.piece(&MartingaleOp::Box(q), f));
                }
            }
            MartingaleOp::QH(qs) => {
                for &q in qs {
                    scatter(&mut out, &self.piece(&MartingaleOp::Delta(q), f));
                }
            }
            _ => scatter(&mut out, &self.piece(op, f)),
        }
        out
    }

    pub fn norm_sq_piece(&self, p: &Piece) -> f64 {
        p.iter().map(|&(a, v)| v * v * self.w(a)).sum()
    }

    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        f.iter().enumerate().map(|(a, v)| v * v * self.w(a)).sum()
    }

    /// Nodes with at least one child carrying mass.
    pub fn difference_nodes(&self) -> Vec<usize> {
        (0..self.tree.len()).filter(|&q| !self.atoms(q).is_empty() && !self.children(q).is_empty()).collect()
    }

    /// `Σ_I □_I f + Σ_roots F_root f`, or the same below a single node.
    pub fn reconstruct(&self, f: &[f64], top: Option<usize>, dual: bool) -> Vec<f64> {
        let (nodes, tops): (Vec<usize>, Vec<usize>) = match top {
            Some(t) => (self.tree.subtree(t), vec![t]),
            None => ((0..self.tree.len()).collect(), self.tree.roots.clone()),
        };
        let mut out = vec![0.0; self.mu.len()];
        for q in nodes {
            if self.atoms(q).is_empty() || self.children(q).is_empty() {
                continue;
            }
            let op = if dual { MartingaleOp::Box(q) } else { MartingaleOp::Delta(q) };
            scatter(&mut out, &self.piece(&op, f));
        }
        for t in tops {
            if self.atoms(t).is_empty() {
                continue;
            }
            let op = if dual { MartingaleOp::F(t) } else { MartingaleOp::E(t) };
            scatter(&mut out, &self.piece(&op, f));
        }
        out
    }

    /// `‖Δ_J x‖² + inf_z Σ_{J' broken} |J'| (E_{J'} |x - z|)²`.
    pub fn spade_sq(&self, j: usize) -> f64 {
        let dim = self.mu.dim;
        let mut s = 0.0;
        for axis in 0..dim {
            let x: Vec<f64> = (0..self.mu.len()).map(|a| self.mu.point(a)[axis]).collect();
            s += self.norm_sq_piece(&self.piece(&MartingaleOp::Delta(j), &x));
        }
        s + self.broken_infimum(j)
    }

    fn broken_infimum(&self, j: usize) -> f64 {
        let brok = self.broken_children(j);
        if brok.is_empty() {
            return 0.0;
        }
        let dim = self.mu.dim;
        let pts: Vec<(Vec<([f64; 2], f64)>, f64)> = brok
            .iter()
            .map(|&c| (self.atoms(c).iter().map(|&a| (self.mu.point(a), self.w(a))).collect(), self.mass(c)))
            .collect();
        let objective = |z: [f64; 2]| -> f64 {
            pts.iter()
                .map(|(atoms, m)| {
                    let e: f64 = atoms
                        .iter()
                        .map(|(p, w)| {
                            let d0 = p[0] - z[0];
                            let d1 = if dim == 2 { p[1] - z[1] } else { 0.0 };
                            (d0 * d0 + d1 * d1).sqrt() * w
                        })
                        .sum::<f64>()
                        / m;
                    m * e * e
                })
                .sum()
        };
        let cube = self.tree.cube(j);
        let b = cube.to_box();
        if dim == 1 {
            golden_min(b.lo[0], b.hi[0], |t| objective([t, 0.0])).1
        } else {
            golden_min(b.lo[0], b.hi[0], |t| golden_min(b.lo[1], b.hi[1], |u| objective([t, u])).1).1
        }
    }

    /// `‖□_J g‖² + Σ_{J' broken} |J'| (E_{J'} |g|)²`.
    pub fn star_sq(&self, j: usize, g: &[f64]) -> f64 {
        let mut s = self.norm_sq_piece(&self.piece(&MartingaleOp::Box(j), g));
        for c in self.broken_children(j) {
            let e = self.avg_abs(c, g);
            s += self.mass(c) * e * e;
        }
        s
    }
}

/// Minimizer and minimum of a convex function on `[a, b]`.
pub fn golden_min(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let tol = 1e-13 * (b - a).abs().max(1e-300);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let ends = [(a, f(a)), (b, f(b)), (c, fc), (d, fd)];
    ends.iter().copied().fold((a, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

pub fn scatter(out: &mut [f64], p: &Piece) {
    for &(a, v) in p {
        out[a] += v;
    }
}

pub fn to_full(n: usize, p: &Piece) -> Vec<f64> {
    let mut out = vec![0.0; n];
    scatter(&mut out, p);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expansion {
    pub norm: f64,
    pub residual: f64,
}

/// Dual expansion `f = Σ □_I f + F_{I∞} f` and its `L²(μ)` residual.
pub fn expand(m: &Mart, f: &[f64], top: Option<usize>) -> Expansion {
    let r = m.reconstruct(f, top, true);
    let diff: Vec<f64> = match top {
        Some(t) => {
            let mut d = r.clone();
            for &a in m.atoms(t) {
                d[a] -= f[a];
            }
            d
        }
        None => r.iter().zip(f).map(|(x, y)| x - y).collect(),
    };
    Expansion { norm: m.norm_sq(f).sqrt(), residual: m.norm_sq(&diff).sqrt() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameReport {
    pub norm_sq: f64,
    pub box_sq: f64,
    pub delta_sq: f64,
    pub nabla_sq: f64,
    pub nabla_hat_sq: f64,
    /// `Σ_roots ‖F_root f‖²` and `Σ_roots ‖E_root f‖²`.
    pub root_box_sq: f64,
    pub root_delta_sq: f64,
    pub box_ratio: f64,
    pub delta_ratio: f64,
}

pub fn frame_report(m: &Mart, f: &[f64]) -> FrameReport {
    let mut r = FrameReport {
        norm_sq: m.norm_sq(f),
        box_sq: 0.0,
        delta_sq: 0.0,
        nabla_sq: 0.0,
        nabla_hat_sq: 0.0,
        root_box_sq: 0.0,
        root_delta_sq: 0.0,
        box_ratio: 0.0,
        delta_ratio: 0.0,
    };
    for q in m.difference_nodes() {
        r.box_sq += m.norm_sq_piece(&m.piece(&MartingaleOp::Box(q), f));
        r.delta_sq += m.norm_sq_piece(&m.piece(&MartingaleOp::Delta(q), f));
        r.nabla_sq += m.norm_sq_piece(&m.piece(&MartingaleOp::Nabla(q), f));
        r.nabla_hat_sq += m.norm_sq_piece(&m.piece(&MartingaleOp::NablaHat(q), f));
    }
    for &t in &m.tree.roots {
        if m.atoms(t).is_empty() {
            continue;
        }
        r.root_box_sq += m.norm_sq_piece(&m.piece(&MartingaleOp::F(t), f));
        r.root_delta_sq += m.norm_sq_piece(&m.piece(&MartingaleOp::E(t), f));
    }
    r.box_ratio = ratio(r.box_sq + r.nabla_sq + r.root_box_sq, r.norm_sq);
    r.delta_ratio = ratio(r.delta_sq + r.nabla_sq + r.root_delta_sq, r.norm_sq);
    r
}

/// `‖Ψ_B f‖² / (Σ_B ‖□_I f‖² + Σ_B ‖∇̂_I f‖²)`.
pub fn upper_riesz_ratio(m: &Mart, f: &[f64], cubes: &[usize]) -> f64 {
    let psi = m.apply(&MartingaleOp::Psi(cubes.to_vec()), f);
    let mut den = 0.0;
    for &q in cubes {
        den += m.norm_sq_piece(&m.piece(&MartingaleOp::Box(q), f));
        den += m.norm_sq_piece(&m.piece(&MartingaleOp::NablaHat(q), f));
    }
    ratio(m.norm_sq(&psi), den)
}

/// `‖Δ_R Δ_Q f − δ_{RQ} Δ_Q f‖`.
pub fn projection_residual(m: &Mart, r: usize, q: usize, f: &[f64]) -> f64 {
    let dq = m.apply(&MartingaleOp::Delta(q), f);
    let mut rq = m.apply(&MartingaleOp::Delta(r), &dq);
    if r == q {
        for (x, y) in rq.iter_mut().zip(&dq) {
            *x -= y;
        }
    }
    m.norm_sq(&rq).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TelescopeCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub scale: f64,
    pub stopping_branch: bool,
}

/// `Σ_{πK ⊆ I ⊆ L} E_{I_K}(□̂♭_I f)` against `E_K F̂_K f − E_L F̂_L f`
/// (or `−E_L F̂_L f` when `K` is a broken child).
pub fn telescope_check(m: &Mart, k: usize, l: usize, f: &[f64]) -> TelescopeCheck {
    let mut lhs = 0.0;
    let mut scale = 0.0;
    let mut child = k;
    let mut cur = m.tree.nodes[k].parent;
    if k != l {
        while let Some(i) = cur {
            let piece = m.piece(&MartingaleOp::BoxFlatHat(i), f);
            let atoms_k: std::collections::HashSet<usize> = m.atoms(child).iter().copied().collect();
            let (mut num, mut den) = (0.0, 0.0);
            for (a, v) in piece {
                if atoms_k.contains(&a) {
                    num += v * m.mu.atoms[a].mass;
                    den += m.mu.atoms[a].mass;
                }
            }
            let term = ratio(num, den);
            lhs += term;
            scale += term.abs();
            if i == l {
                break;
            }
            child = i;
            cur = m.tree.nodes[i].parent;
        }
    }
    let stopping_branch = k != l && m.fam.is_broken(k);
    let fl = m.f_coef(l, f);
    let rhs = if stopping_branch { -fl } else { m.f_coef(k, f) - fl };
    scale += rhs.abs() + fl.abs();
    let residual = ratio((lhs - rhs).abs(), scale.max(f64::MIN_POSITIVE));
    TelescopeCheck { lhs, rhs, residual, scale, stopping_branch }
}

#[derive(Clone, Debug)]
pub struct Truncation {
    pub family: BFamily,
    pub lambda: f64,
    /// Factor `1/c_b` applied before truncating.
    pub normalization: f64,
}

pub fn truncation_lambda(p: f64, big_c_b: f64, eps: f64) -> f64 {
    (p / (p - 2.0) * big_c_b.powf(p) / eps).powf(1.0 / (p - 2.0))
}

/// `b̂_Q = 2 b_Q (1_{|b_Q| <= λ} + λ/|b_Q| 1_{|b_Q| > λ})` after normalizing
/// the family to `c_b = 1`.
pub fn truncate_family(tree: &Tree, mu: &Measure, fam: &BFamily, eps: f64) -> Result<Truncation, FamilyError> {
    if !(eps > 0.0 && eps <= 0.25) {
        return Err(FamilyError::Eps(eps));
    }
    if fam.p.is_infinite() {
        return Err(FamilyError::InfiniteExponent);
    }
    if !(fam.p > 2.0) {
        return Err(FamilyError::Exponent(fam.p));
    }
    let s = 1.0 / fam.c_b;
    let lambda = truncation_lambda(fam.p, fam.big_c_b * s, eps);
    let vals = (0..tree.len())
        .map(|q| {
            fam.local(tree, q)
                .iter()
                .map(|v| {
                    let b = v * s;
                    if b.abs() <= lambda {
                        2.0 * b
                    } else {
                        2.0 * lambda * b.signum()
                    }
                })
                .collect()
        })
        .collect();
    let family = BFamily::from_node_values(tree, mu, fam.mi, f64::INFINITY, vals)?;
    Ok(Truncation { family, lambda, normalization: s })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationCheck {
    pub min_avg: f64,
    pub max_abs: f64,
    pub lambda: f64,
    /// `max_Q ∫_{|b_Q|>λ} |b_Q|² / (ε |Q|)` for the normalized input family.
    pub max_tail_ratio: f64,
}

pub fn truncation_check(tree: &Tree, mu: &Measure, fam: &BFamily, t: &Truncation, eps: f64) -> TruncationCheck {
    let mut c = TruncationCheck { min_avg: f64::INFINITY, max_abs: 0.0, lambda: t.lambda, max_tail_ratio: 0.0 };
    for q in 0..tree.len() {
        let m = tree.mass(q, fam.mi);
        if m <= 0.0 {
            continue;
        }
        let atoms = tree.atoms(q, fam.mi);
        let hat = t.family.local(tree, q);
        let orig = fam.local(tree, q);
        let avg: f64 = atoms.iter().zip(hat.iter()).map(|(&a, &v)| v * mu.atoms[a].mass).sum::<f64>() / m;
        c.min_avg = c.min_avg.min(avg.abs());
        c.max_abs = hat.iter().fold(c.max_abs, |acc, v| acc.max(v.abs()));
        let tail: f64 = atoms
            .iter()
            .zip(orig.iter())
            .map(|(&a, &v)| {
                let b = v * t.normalization;
                if b.abs() > t.lambda {
                    b * b * mu.atoms[a].mass
                } else {
                    0.0
                }
            })
            .sum();
        c.max_tail_ratio = c.max_tail_ratio.max(tail / (eps * m));
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhCase {
    Children,
    Corona,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhClass {
    Kept,
    G0,
    GPlus,
    BMinus,
    BPlus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhAdjust {
    pub values: Vec<f64>,
    pub classes: Vec<RhClass>,
    pub unchanged: bool,
}

pub fn rh_delta_bound(case: RhCase, c_b: f64, dim: usize) -> f64 {
    match case {
        RhCase::Children => 1.0 / ((1u32 << (dim + 1)) as f64 * c_b.powi(3)),
        RhCase::Corona => 1.0 / (4.0 * c_b.powi(3)),
    }
}

/// Reverse-Hölder adjustment of one function `b` on `Q` (local atom arrays)
/// relative to disjoint parts of `Q`: the children of `Q`, or stopping cubes
/// of a corona. The result is doubled so that `avg_Q b̃ >= 1`.
pub fn reverse_holder_adjust(
    values: &[f64],
    masses: &[f64],
    parts: &[Vec<usize>],
    c_b: f64,
    delta: f64,
    dim: usize,
    case: RhCase,
) -> Result<RhAdjust, FamilyError> {
    let bound = rh_delta_bound(case, c_b, dim);
    if !(delta > 0.0 && delta < bound) {
        return Err(FamilyError::Delta { delta, bound });
    }
    let s = (c_b * delta).sqrt();
    let mut out = values.to_vec();
    let mut classes = vec![RhClass::Kept; parts.len()];
    let mut any = false;
    for (i, part) in parts.iter().enumerate() {
        let m: f64 = part.iter().map(|&k| masses[k]).sum();
        if m <= 0.0 {
            continue;
        }
        let avg = part.iter().map(|&k| values[k] * masses[k]).sum::<f64>() / m;
        let avg_abs = part.iter().map(|&k| values[k].abs() * masses[k]).sum::<f64>() / m;
        let sup = part.iter().fold(0.0f64, |acc, &k| acc.max(values[k].abs()));
        let flagged = match case {
            RhCase::Children => avg.abs() < delta / c_b * sup || sup == 0.0,
            RhCase::Corona => true,
        };
        if !flagged {
            continue;
        }
        any = true;
        let pos: f64 = part.iter().map(|&k| values[k].max(0.0) * masses[k]).sum();
        let neg: f64 = part.iter().map(|&k| (-values[k]).max(0.0) * masses[k]).sum();
        let class = if avg_abs == 0.0 {
            RhClass::G0
        } else if avg_abs <= s {
            RhClass::GPlus
        } else if neg > pos {
            RhClass::BMinus
        } else {
            RhClass::BPlus
        };
        classes[i] = class;
        let pointwise = |k: usize| -> f64 {
            let (p, n) = (values[k].max(0.0), (-values[k]).max(0.0));
            match class {
                RhClass::BMinus => p - n * (1.0 + s),
                RhClass::BPlus => (1.0 + s) * p - n,
                _ => values[k],
            }
        };
        let constant = match class {
            RhClass::G0 => Some(delta),
            RhClass::GPlus => Some(avg_abs),
            _ if case == RhCase::Corona => Some(part.iter().map(|&k| pointwise(k) * masses[k]).sum::<f64>() / m),
            _ => None,
        };
        for &k in part {
            out[k] = match constant {
                Some(c) => c,
                None => pointwise(k),
            };
        }
    }
    if !any {
        return Ok(RhAdjust { values: values.to_vec(), classes, unchanged: true });
    }
    for v in out.iter_mut() {
        *v *= 2.0;
    }
    Ok(RhAdjust { values: out, classes, unchanged: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhConclusion {
    pub avg: f64,
    pub sup: f64,
    pub bound_sup: f64,
    /// `max_i ‖1_{Q_i} b̃‖∞ / |avg_{Q_i} b̃|` over parts with mass.
    pub worst_part_ratio: f64,
    pub bound_part: f64,
    pub min_part_sup: f64,
}

impl RhConclusion {
    pub fn holds(&self) -> bool {
        self.avg >= 1.0 - 1e-12
            && self.sup <= self.bound_sup * (1.0 + 1e-12)
            && self.worst_part_ratio <= self.bound_part * (1.0 + 1e-12)
            && self.min_part_sup > 0.0
    }
}

pub fn rh_conclusions(values: &[f64], masses: &[f64], parts: &[Vec<usize>], c_b: f64, delta: f64) -> RhConclusion {
    let total: f64 = masses.iter().sum();
    let avg = values.iter().zip(masses).map(|(v, m)| v * m).sum::<f64>() / total;
    let sup = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut worst: f64 = 0.0;
    let mut min_sup = f64::INFINITY;
    for part in parts {
        let m: f64 = part.iter().map(|&k| masses[k]).sum();
        if m <= 0.0 {
            continue;
        }
        let a = part.iter().map(|&k| values[k] * masses[k]).sum::<f64>() / m;
        let s = part.iter().fold(0.0f64, |acc, &k| acc.max(values[k].abs()));
        min_sup = min_sup.min(s);
        worst = worst.max(if a == 0.0 { f64::INFINITY } else { s / a.abs() });
    }
    RhConclusion {
        avg,
        sup,
        bound_sup: 2.0 * (1.0 + c_b.sqrt()) * c_b,
        worst_part_ratio: worst,
        bound_part: 16.0 * c_b / delta,
        min_part_sup: min_sup,
    }
}
