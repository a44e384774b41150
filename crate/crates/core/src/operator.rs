//! Fractional kernels with hard truncation, discrete operators, operator norms
//! and testing constants.

use crate::bfamily::BFamily;
use crate::measure::{Measure, Tree};
use crate::poisson_a2::euclid;
use crate::grid::Cube;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("truncation requires 0 < delta < R, got ({0}, {1})")]
    Truncation(f64, f64),
    #[error("alpha = {0} outside [0, n)")]
    Alpha(f64),
    #[error("component {0} out of range")]
    Component(usize),
    #[error("size bound violated: ratio {ratio} at x = {x:?}, y = {y:?}")]
    SizeBound { ratio: f64, x: [f64; 2], y: [f64; 2] },
    #[error("power iteration did not converge: relative residual {0}")]
    NonConvergence(f64),
}

pub type KernelFn = Arc<dyn Fn([f64; 2], [f64; 2]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelKind {
    /// `(x − y)_i / |x − y|^{n+1−α}`.
    RieszComponent(usize),
    /// All `n` Riesz components.
    RieszVector,
    Custom(KernelFn),
    Zero,
}

impl fmt::Debug for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::RieszComponent(i) => write!(f, "RieszComponent({i})"),
            KernelKind::RieszVector => write!(f, "RieszVector"),
            KernelKind::Custom(_) => write!(f, "Custom"),
            KernelKind::Zero => write!(f, "Zero"),
        }
    }
}

/// Size ratios above this reject a custom kernel.
pub const CUSTOM_SIZE_LIMIT: f64 = 100.0;
pub const VALIDATION_PAIRS: usize = 1000;

#[derive(Clone, Debug)]
pub struct KernelSpec {
    pub dim: usize,
    pub alpha: f64,
    pub kind: KernelKind,
    pub delta_trunc: f64,
    pub r_trunc: f64,
    /// Measured `max(size, gradient)` constant.
    pub c_cz: f64,
    pub c_size: f64,
    pub c_grad: f64,
}

fn riesz(dim: usize, alpha: f64, i: usize, x: [f64; 2], y: [f64; 2]) -> f64 {
    let d = euclid(x, y, dim);
    if d == 0.0 {
        return 0.0;
    }
    (x[i] - y[i]) / d.powf(dim as f64 + 1.0 - alpha)
}

pub fn make_kernel(dim: usize, alpha: f64, kind: KernelKind, delta: f64, r: f64) -> Result<KernelSpec, OperatorError> {
    if !(delta > 0.0 && delta < r) {
        return Err(OperatorError::Truncation(delta, r));
    }
    if !(alpha >= 0.0 && alpha < dim as f64) {
        return Err(OperatorError::Alpha(alpha));
    }
    if let KernelKind::RieszComponent(i) = kind {
        if i >= dim {
            return Err(OperatorError::Component(i));
        }
    }
    let mut k = KernelSpec { dim, alpha, kind, delta_trunc: delta, r_trunc: r, c_cz: 0.0, c_size: 0.0, c_grad: 0.0 };
    let v = validate(&k, VALIDATION_PAIRS, 17);
    if matches!(k.kind, KernelKind::Custom(_)) && !(v.size <= CUSTOM_SIZE_LIMIT) {
        return Err(OperatorError::SizeBound { ratio: v.size, x: v.worst.0, y: v.worst.1 });
    }
    k.c_size = v.size;
    k.c_grad = v.grad;
    k.c_cz = v.size.max(v.grad);
    Ok(k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validation {
    pub size: f64,
    pub grad: f64,
    pub worst: ([f64; 2], [f64; 2]),
}

/// Sampled size and finite-difference gradient constants of the untruncated
/// kernel, pair distances log-uniform in `[1e-3, 10]`.
pub fn validate(k: &KernelSpec, pairs: usize, seed: u64) -> Validation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = k.dim as f64;
    let mut v = Validation { size: 0.0, grad: 0.0, worst: ([0.0; 2], [0.0; 2]) };
    for _ in 0..pairs {
        let mut x = [0.0; 2];
        let mut dir = [0.0; 2];
        for i in 0..k.dim {
            x[i] = rng.gen_range(-1.0..1.0);
            dir[i] = rng.gen_range(-1.0..1.0);
        }
        let norm = euclid(dir, [0.0; 2], k.dim);
        if norm < 1e-6 {
            continue;
        }
        let dist = 10f64.powf(rng.gen_range(-3.0..1.0));
        let mut y = x;
        for i in 0..k.dim {
            y[i] = x[i] + dir[i] / norm * dist;
        }
        let d = euclid(x, y, k.dim);
        for c in 0..k.components() {
            let s = k.raw(c, x, y).abs() / d.powf(k.alpha - n);
            if !(s <= v.size) {
                v.size = s;
                v.worst = (x, y);
            }
            let h = 1e-6 * d;
            let mut gx = 0.0;
            let mut gy = 0.0;
            for i in 0..k.dim {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let dx = (k.raw(c, xp, y) - k.raw(c, xm, y)) / (2.0 * h);
                let mut yp = y;
                let mut ym = y;
                yp[i] += h;
                ym[i] -= h;
                let dy = (k.raw(c, x, yp) - k.raw(c, x, ym)) / (2.0 * h);
                gx += dx * dx;
                gy += dy * dy;
            }
            let g = gx.max(gy).sqrt() / d.powf(k.alpha - n - 1.0);
            if g.is_finite() {
                v.grad = v.grad.max(g);
            } else {
                v.grad = f64::INFINITY;
            }
        }
    }
    v
}

impl KernelSpec {
    pub fn components(&self) -> usize {
        match self.kind {
            KernelKind::RieszVector => self.dim,
            _ => 1,
        }
    }

    /// Untruncated kernel.
    pub fn raw(&self, c: usize, x: [f64; 2], y: [f64; 2]) -> f64 {
        match &self.kind {
            KernelKind::RieszComponent(i) => riesz(self.dim, self.alpha, *i, x, y),
            KernelKind::RieszVector => riesz(self.dim, self.alpha, c, x, y),
            KernelKind::Custom(f) => f(x, y),
            KernelKind::Zero => 0.0,
        }
    }

    /// Kernel times `1_{(δ, R)}(|x − y|)`.
    pub fn eval(&self, c: usize, x: [f64; 2], y: [f64; 2]) -> f64 {
        let d = euclid(x, y, self.dim);
        if d > self.delta_trunc && d < self.r_trunc {
            self.raw(c, x, y)
        } else {
            0.0
        }
    }

    /// `T_{σ,δ,R} f` at the atoms of `dst`, component `c`.
    pub fn apply_component(&self, c: usize, src: &Measure, f: &[f64], dst: &Measure) -> Vec<f64> {
        self.apply_on(c, src, f, dst, (0..src.len()).collect::<Vec<_>>().as_slice(), (0..dst.len()).collect::<Vec<_>>().as_slice(), false)
    }

    /// Adjoint component `Σ_x K(x, y) g(x) dst(x)` evaluated at atoms `y` of `src`.
    pub fn apply_adjoint_component(&self, c: usize, dst: &Measure, g: &[f64], src: &Measure) -> Vec<f64> {
        self.apply_on(c, dst, g, src, (0..dst.len()).collect::<Vec<_>>().as_slice(), (0..src.len()).collect::<Vec<_>>().as_slice(), true)
    }

    /// Sum over the `from` atoms of `mu` evaluated at the `at` atoms of `nu`
    /// (result indexed like `at`). `adjoint` swaps the kernel arguments.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_on(
        &self,
        c: usize,
        mu: &Measure,
        f: &[f64],
        nu: &Measure,
        from: &[usize],
        at: &[usize],
        adjoint: bool,
    ) -> Vec<f64> {
        at.iter()
            .map(|&x| {
                let px = nu.point(x);
                from.iter()
                    .map(|&y| {
                        let w = f[y] * mu.atoms[y].mass;
                        if w == 0.0 {
                            return 0.0;
                        }
                        let py = mu.point(y);
                        w * if adjoint { self.eval(c, py, px) } else { self.eval(c, px, py) }
                    })
                    .sum()
            })
            .collect()
    }
}

/// All components of `T_σ f` at the atoms of ω.
pub fn apply(k: &KernelSpec, sigma: &Measure, f: &[f64], omega: &Measure) -> Vec<Vec<f64>> {
    (0..k.components()).map(|c| k.apply_component(c, sigma, f, omega)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMethod {
    Dense,
    Power,
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    pub method: NormMethod,
    pub iterations: usize,
}

pub const DENSE_LIMIT: usize = 2000;

/// `D_ω^{1/2} K D_σ^{1/2}` with the components stacked by rows.
pub fn weighted_matrix(k: &KernelSpec, sigma: &Measure, omega: &Measure) -> DMatrix<f64> {
    let (nw, ns) = (omega.len(), sigma.len());
    let nc = k.components();
    DMatrix::from_fn(nc * nw, ns, |r, s| {
        let (c, w) = (r / nw, r % nw);
        omega.atoms[w].mass.sqrt() * k.eval(c, omega.point(w), sigma.point(s)) * sigma.atoms[s].mass.sqrt()
    })
}

/// Largest singular value of the weighted kernel matrix.
pub fn operator_norm(k: &KernelSpec, sigma: &Measure, omega: &Measure) -> Result<NormReport, OperatorError> {
    if sigma.is_empty() || omega.is_empty() || matches!(k.kind, KernelKind::Zero) {
        return Ok(NormReport { value: 0.0, method: NormMethod::Empty, iterations: 0 });
    }
    let a = weighted_matrix(k, sigma, omega);
    if a.nrows().min(a.ncols()) <= DENSE_LIMIT {
        let g = if a.nrows() <= a.ncols() { &a * a.transpose() } else { a.transpose() * &a };
        let top = g.symmetric_eigenvalues().iter().fold(0.0f64, |m, &x| m.max(x));
        return Ok(NormReport { value: top.max(0.0).sqrt(), method: NormMethod::Dense, iterations: 0 });
    }
    let mut v = DVector::from_fn(a.ncols(), |i, _| 1.0 + (i % 7) as f64 * 0.1);
    v /= v.norm();
    let mut lam = 0.0;
    for it in 1..=10_000 {
        let w = a.transpose() * (&a * &v);
        let new = w.norm();
        if new == 0.0 {
            return Ok(NormReport { value: 0.0, method: NormMethod::Power, iterations: it });
        }
        let next = w / new;
        let residual = (new - lam).abs() / new;
        v = next;
        lam = new;
        if residual < 1e-8 {
            return Ok(NormReport { value: lam.sqrt(), method: NormMethod::Power, iterations: it });
        }
        if it == 10_000 {
            return Err(OperatorError::NonConvergence(residual));
        }
    }
    unreachable!()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestingRow {
    pub cube: Cube,
    pub forward_sq: f64,
    pub dual_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestingReport {
    pub testing: f64,
    pub testing_witness: Option<Cube>,
    pub dual: f64,
    pub dual_witness: Option<Cube>,
    pub norm: f64,
    /// Bounds `‖b_Q‖_{L²(σ)}² ≤ C² |Q|_σ` used in the necessity checks.
    pub c_b: f64,
    pub c_b_star: f64,
    pub table: Vec<TestingRow>,
}

impl TestingReport {
    pub fn necessity_holds(&self, tol: f64) -> bool {
        self.testing <= self.c_b * self.norm + tol && self.dual <= self.c_b_star * self.norm + tol
    }
}

/// One tree with its families: `b` on σ (measure 0), `b*` on ω (measure 1).
pub struct TestingInput<'a> {
    pub tree: &'a Tree,
    pub b: &'a BFamily,
    pub b_star: &'a BFamily,
}

/// `sup ‖b_Q‖_{L²(1_Q μ)} / |Q|_μ^{1/2}` over nodes.
pub fn l2_bound(tree: &Tree, mu: &Measure, fam: &BFamily) -> f64 {
    let mut best: f64 = 0.0;
    for q in 0..tree.len() {
        let m = tree.mass(q, fam.mi);
        if m <= 0.0 {
            continue;
        }
        let v = fam.local(tree, q);
        let s: f64 = tree.atoms(q, fam.mi).iter().zip(v.iter()).map(|(&a, b)| b * b * mu.atoms[a].mass).sum();
        best = best.max((s / m).sqrt());
    }
    best
}

/// Forward and dual testing constants over every node of every tree.
pub fn testing_constants(
    k: &KernelSpec,
    sigma: &Measure,
    omega: &Measure,
    inputs: &[TestingInput],
    norm: f64,
) -> TestingReport {
    let mut r = TestingReport {
        testing: 0.0,
        testing_witness: None,
        dual: 0.0,
        dual_witness: None,
        norm,
        c_b: 0.0,
        c_b_star: 0.0,
        table: Vec::new(),
    };
    let mut t2: f64 = 0.0;
    let mut d2: f64 = 0.0;
    for inp in inputs {
        let tree = inp.tree;
        r.c_b = r.c_b.max(l2_bound(tree, sigma, inp.b));
        r.c_b_star = r.c_b_star.max(l2_bound(tree, omega, inp.b_star));
        for q in 0..tree.len() {
            let (sa, wa) = (tree.atoms(q, 0), tree.atoms(q, 1));
            let (ms, mw) = (tree.mass(q, 0), tree.mass(q, 1));
            let mut row = TestingRow { cube: tree.cube(q), forward_sq: 0.0, dual_sq: 0.0 };
            if ms > 0.0 {
                let mut f = vec![0.0; sigma.len()];
                for (&a, &b) in sa.iter().zip(inp.b.local(tree, q).iter()) {
                    f[a] = b;
                }
                let mut s = 0.0;
                for c in 0..k.components() {
                    let v = k.apply_on(c, sigma, &f, omega, sa, wa, false);
                    s += wa.iter().zip(&v).map(|(&a, x)| x * x * omega.atoms[a].mass).sum::<f64>();
                }
                row.forward_sq = s / ms;
                if row.forward_sq > t2 {
                    t2 = row.forward_sq;
                    r.testing_witness = Some(row.cube);
                }
            }
            if mw > 0.0 {
                let mut g = vec![0.0; omega.len()];
                for (&a, &b) in wa.iter().zip(inp.b_star.local(tree, q).iter()) {
                    g[a] = b;
                }
                let mut s: f64 = 0.0;
                for c in 0..k.components() {
                    let v = k.apply_on(c, omega, &g, sigma, wa, sa, true);
                    s = s.max(sa.iter().zip(&v).map(|(&a, x)| x * x * sigma.atoms[a].mass).sum::<f64>());
                }
                row.dual_sq = s / mw;
                if row.dual_sq > d2 {
                    d2 = row.dual_sq;
                    r.dual_witness = Some(row.cube);
                }
            }
            r.table.push(row);
        }
    }
    r.testing = t2.sqrt();
    r.dual = d2.sqrt();
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ntv {
    pub value: f64,
    /// `𝔑 / NTV`; `None` when indeterminate (0/0) or a component diverges.
    pub ratio: Option<f64>,
    pub diverges: bool,
}

/// `𝔗 + 𝔗* + √𝔄₂ + 𝔈₂` and the ratio `𝔑 / NTV`.
pub fn ntv(testing: f64, dual: f64, a2: f64, e2: f64, norm: f64, diverges: bool) -> Ntv {
    let value = testing + dual + a2.sqrt() + e2;
    let ratio = if diverges || !value.is_finite() {
        None
    } else if value > 0.0 {
        Some(norm / value)
    } else if norm == 0.0 {
        None
    } else {
        Some(f64::INFINITY)
    };
    Ntv { value, ratio, diverges }
}
