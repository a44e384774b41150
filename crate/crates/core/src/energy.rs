//! Energy constants, pseudoprojection energies, Monotonicity-type checks,
//! functional energy and the half-space Poisson testing inequalities.

use crate::bfamily::{BFamily, Mart, MartingaleOp};
use crate::corona::{shifted_corona, Corona};
use crate::grid::{dilate_within, is_eps_good, whitney, Cube};
use crate::measure::{Measure, Tree};
use crate::operator::KernelSpec;
use crate::poisson_a2::{
    halfspace_dual, halfspace_forward, in_box, poisson_kernel, GridFamily, HalfSpaceMeasure, PoissonKind,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("search depth must be at least 1, got {0}")]
    Depth(i32),
    #[error("separation gamma must lie in (1, 5], got {0}")]
    Gamma(f64),
    #[error("cubes violate J ⊂ γJ ⊂ I")]
    Nesting,
    #[error("signed measure charges the cube I at atom {0}")]
    Support(usize),
}

/// `‖x − m_J‖²_{L²(1_J μ)}` for every node, measure `mi`.
pub fn moments(tree: &Tree, mu: &Measure, mi: usize) -> Vec<f64> {
    (0..tree.len())
        .map(|q| {
            let atoms = tree.atoms(q, mi);
            let m = tree.mass(q, mi);
            if atoms.len() < 2 || m <= 0.0 {
                return 0.0;
            }
            let mut c = [0.0; 2];
            for &a in atoms {
                let p = mu.point(a);
                for i in 0..mu.dim {
                    c[i] += p[i] * mu.atoms[a].mass;
                }
            }
            for v in c.iter_mut() {
                *v /= m;
            }
            atoms
                .iter()
                .map(|&a| {
                    let p = mu.point(a);
                    let d: f64 = (0..mu.dim).map(|i| (p[i] - c[i]).powi(2)).sum();
                    d * mu.atoms[a].mass
                })
                .sum()
        })
        .collect()
}

/// Standard Poisson integral of `μ` over the listed atoms.
pub fn poisson_atoms(q: &Cube, mu: &Measure, atoms: impl Iterator<Item = usize>, alpha: f64) -> f64 {
    let c = q.center();
    let l = q.side();
    atoms
        .map(|a| {
            let p = mu.point(a);
            let d: f64 = (0..mu.dim).map(|i| (p[i] - c[i]).powi(2)).sum::<f64>().sqrt();
            mu.atoms[a].mass * poisson_kernel(PoissonKind::Standard, alpha, mu.dim, l, d)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub value: f64,
    pub cubes: Vec<usize>,
}

/// Best dyadic subpartition of node `top` for
/// `Σ_r (P^α(I_r, 1_I σ) / ℓ(I_r))² ‖x − m_{I_r}‖²_{L²(1_{I_r} ω)}`.
/// `restrict = false` uses all of σ; `depth` bounds `level(I_r) − level(I)`.
#[allow(clippy::too_many_arguments)]
pub fn best_partition(
    tree: &Tree,
    sigma: &Measure,
    mi_s: usize,
    mi_w: usize,
    top: usize,
    alpha: f64,
    restrict: bool,
    depth: Option<i32>,
    moments: &[f64],
) -> Partition {
    let sub = tree.subtree(top);
    let top_level = tree.nodes[top].cube.level;
    let src: Vec<usize> = if restrict { tree.atoms(top, mi_s).to_vec() } else { (0..sigma.len()).collect() };
    let mut best: HashMap<usize, (f64, bool)> = HashMap::with_capacity(sub.len());
    for &j in sub.iter().rev() {
        let node = &tree.nodes[j];
        if depth.map_or(false, |d| node.cube.level - top_level > d) {
            continue;
        }
        let term = if moments[j] > 0.0 && !tree.atoms(j, mi_w).is_empty() {
            let p = poisson_atoms(&node.cube, sigma, src.iter().copied(), alpha) / node.cube.side();
            p * p * moments[j]
        } else {
            0.0
        };
        let kids: f64 = node.children.iter().filter_map(|c| best.get(c)).map(|v| v.0).sum();
        best.insert(j, if term >= kids { (term, true) } else { (kids, false) });
    }
    let mut cubes = Vec::new();
    let mut stack = vec![top];
    while let Some(j) = stack.pop() {
        match best.get(&j) {
            Some(&(v, true)) if v > 0.0 => cubes.push(j),
            Some(&(_, false)) => stack.extend(tree.nodes[j].children.iter()),
            _ => {}
        }
    }
    cubes.sort_unstable();
    Partition { value: best[&top].0, cubes }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergySup {
    /// Squared constant.
    pub value: f64,
    pub witness: Option<Cube>,
    pub partition: Vec<Cube>,
}

impl EnergySup {
    fn offer(&mut self, v: f64, q: Cube, part: impl FnOnce() -> Vec<Cube>) {
        if v > self.value {
            self.value = v;
            self.witness = Some(q);
            self.partition = part();
        }
    }
}

fn one_direction(sigma: &Measure, omega: &Measure, grids: &GridFamily, alpha: f64, depth: Option<i32>) -> EnergySup {
    let mut out = EnergySup::default();
    for g in &grids.grids {
        let tree = Tree::build(g, &[sigma, omega]);
        let mom = moments(&tree, omega, 1);
        for i in 0..tree.len() {
            let ms = tree.mass(i, 0);
            if ms <= 0.0 {
                continue;
            }
            let p = best_partition(&tree, sigma, 0, 1, i, alpha, true, depth, &mom);
            out.offer(p.value / ms, tree.cube(i), || p.cubes.iter().map(|&c| tree.cube(c)).collect());
        }
    }
    out
}

/// Strong energy and its dual (roles of σ and ω swapped), squared.
pub fn strong_energy(
    sigma: &Measure,
    omega: &Measure,
    grids: &GridFamily,
    alpha: f64,
    depth: Option<i32>,
) -> Result<(EnergySup, EnergySup), EnergyError> {
    if let Some(d) = depth {
        if d < 1 {
            return Err(EnergyError::Depth(d));
        }
    }
    Ok((one_direction(sigma, omega, grids, alpha, depth), one_direction(omega, sigma, grids, alpha, depth)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WhitneyVariant {
    /// Argument `1_{I∖γM} σ`.
    Hole,
    /// Argument `1_{I∖M} σ`.
    Partial,
    /// Argument `1_I σ`.
    Plug,
}

/// Whitney energy: sup over `I`, subpartitions `I = ∪ I_r` and Whitney cubes
/// `M ∈ W(I_r)` of the normalized sum with the variant's argument measure.
pub fn whitney_energy(
    sigma: &Measure,
    omega: &Measure,
    grids: &GridFamily,
    alpha: f64,
    gamma: f64,
    variant: WhitneyVariant,
) -> Result<EnergySup, EnergyError> {
    if !(gamma > 1.0 && gamma <= 5.0) {
        return Err(EnergyError::Gamma(gamma));
    }
    let mut out = EnergySup::default();
    for g in &grids.grids {
        let tree = Tree::build(g, &[sigma, omega]);
        let mom = moments(&tree, omega, 1);
        let wcubes: Vec<Vec<usize>> = (0..tree.len())
            .map(|j| {
                whitney(&tree.cube(j), g.m)
                    .cubes
                    .iter()
                    .filter_map(|m| tree.node_of(m))
                    .filter(|&m| mom[m] > 0.0)
                    .collect()
            })
            .collect();
        for i in 0..tree.len() {
            let ms = tree.mass(i, 0);
            if ms <= 0.0 {
                continue;
            }
            let src = tree.atoms(i, 0);
            let sub = tree.subtree(i);
            let mut best: HashMap<usize, (f64, bool)> = HashMap::new();
            for &j in sub.iter().rev() {
                let mut term = 0.0;
                for &m in &wcubes[j] {
                    let mc = tree.cube(m);
                    let hole = mc.dilate([gamma, gamma]);
                    let keep = |a: &usize| match variant {
                        WhitneyVariant::Plug => true,
                        WhitneyVariant::Partial => !mc.contains_fine(sigma.fine_point(*a)),
                        WhitneyVariant::Hole => !hole.contains_point(sigma.point(*a)),
                    };
                    let p = poisson_atoms(&mc, sigma, src.iter().copied().filter(keep), alpha) / mc.side();
                    term += p * p * mom[m];
                }
                let kids: f64 = tree.nodes[j].children.iter().filter_map(|c| best.get(c)).map(|v| v.0).sum();
                best.insert(j, if term >= kids { (term, true) } else { (kids, false) });
            }
            let v = best[&i].0 / ms;
            out.offer(v, tree.cube(i), || {
                let mut cubes = Vec::new();
                let mut stack = vec![i];
                while let Some(j) = stack.pop() {
                    match best.get(&j) {
                        Some(&(x, true)) if x > 0.0 => cubes.push(tree.cube(j)),
                        Some(&(_, false)) => stack.extend(tree.nodes[j].children.iter()),
                        _ => {}
                    }
                }
                cubes.sort();
                cubes
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub strong: EnergySup,
    pub strong_star: EnergySup,
    pub whitney: EnergySup,
    pub whitney_partial: EnergySup,
    pub whitney_plug: EnergySup,
    /// `𝓔₂ + 𝓔₂*` (square roots of the squared values).
    pub aggregate: f64,
    pub depth: Option<i32>,
    pub gamma: f64,
}

pub fn energy_report(
    sigma: &Measure,
    omega: &Measure,
    grids: &GridFamily,
    alpha: f64,
    depth: Option<i32>,
    gamma: f64,
) -> Result<EnergyReport, EnergyError> {
    let (strong, strong_star) = strong_energy(sigma, omega, grids, alpha, depth)?;
    let whitney = whitney_energy(sigma, omega, grids, alpha, gamma, WhitneyVariant::Hole)?;
    let whitney_partial = whitney_energy(sigma, omega, grids, alpha, gamma, WhitneyVariant::Partial)?;
    let whitney_plug = whitney_energy(sigma, omega, grids, alpha, gamma, WhitneyVariant::Plug)?;
    let aggregate = strong.value.sqrt() + strong_star.value.sqrt();
    Ok(EnergyReport { strong, strong_star, whitney, whitney_partial, whitney_plug, aggregate, depth, gamma })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoEnergy {
    /// `‖𝖰_𝓗 x‖♠²`.
    pub spade_sq: f64,
    /// `‖𝖯_𝓗 g‖★²`, when `g` is given.
    pub star_sq: f64,
}

/// Pseudoprojection energies over the node collection `h` for the family on ω.
pub fn pseudo_energy(tree: &Tree, omega: &Measure, fam: &BFamily, h: &[usize], g: Option<&[f64]>) -> PseudoEnergy {
    let m = Mart::new(tree, omega, fam);
    let mut r = PseudoEnergy { spade_sq: 0.0, star_sq: 0.0 };
    for &j in h {
        if m.atoms(j).len() > 1 {
            r.spade_sq += m.spade_sq(j);
        }
        if let Some(g) = g {
            r.star_sq += m.star_sq(j, g);
        }
    }
    r
}

/// Worst `‖𝖰_K x‖♠² / ‖x − m_K‖²_{L²(1_K ω)}` over nodes, `𝖰_K` collecting
/// all of the subtree of `K`.
pub fn spade_moment_ratio(tree: &Tree, omega: &Measure, fam: &BFamily) -> f64 {
    let m = Mart::new(tree, omega, fam);
    let per: Vec<f64> = (0..tree.len()).map(|q| if m.atoms(q).len() > 1 { m.spade_sq(q) } else { 0.0 }).collect();
    let s = tree.subtree_sums(&per);
    let mom = moments(tree, omega, fam.mi);
    (0..tree.len())
        .filter(|&q| mom[q] > 0.0)
        .map(|q| s[q] / mom[q])
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// `|⟨T μ, □_J Ψ⟩_ω|`.
    pub lhs: f64,
    pub phi: f64,
    /// `‖□_J Ψ‖★`.
    pub star: f64,
    /// `lhs / (phi · star)`.
    pub ratio: f64,
    /// `|⟨T μ, □_J Ψ⟩| / (P(J,|μ|) √|J|_ω ‖□_J Ψ‖)`.
    pub pivotal: f64,
}

fn quotient(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

/// Compares both sides of the Monotonicity estimate for the signed measure
/// `s μ` (weights `s` on the atoms of `mu`), `J` a node of `tree` (ω = measure
/// `fam.mi`) and `Ψ` on the atoms of ω. The first kernel component is used.
#[allow(clippy::too_many_arguments)]
pub fn monotonicity_check(
    i: &Cube,
    tree: &Tree,
    j: usize,
    mu: &Measure,
    s: &[f64],
    omega: &Measure,
    psi: &[f64],
    fam: &BFamily,
    kernel: &KernelSpec,
    delta: f64,
    gamma: f64,
) -> Result<MonotonicityReport, EnergyError> {
    let jc = tree.cube(j);
    if !(i.contains_cube(&jc) && dilate_within(&jc, gamma, i)) {
        return Err(EnergyError::Nesting);
    }
    if let Some(a) = (0..mu.len()).find(|&a| s[a] != 0.0 && i.contains_fine(mu.fine_point(a))) {
        return Err(EnergyError::Support(a));
    }
    let m = Mart::new(tree, omega, fam);
    let box_psi = m.apply(&MartingaleOp::Box(j), psi);
    let t = kernel.apply_component(0, mu, s, omega);
    let lhs = (0..omega.len()).map(|a| t[a] * box_psi[a] * omega.atoms[a].mass).sum::<f64>().abs();
    let abs_s: Vec<f64> = s.iter().map(|v| v.abs()).collect();
    let l = jc.side();
    let p = crate::poisson_a2::poisson_with(PoissonKind::Standard, &jc, mu, kernel.alpha, Some(&abs_s), |_| true);
    let p_small = crate::poisson_a2::poisson_with(PoissonKind::Small(delta), &jc, mu, kernel.alpha, Some(&abs_s), |_| true);
    let spade = if m.atoms(j).len() > 1 { m.spade_sq(j) } else { 0.0 };
    let mom = moments(tree, omega, fam.mi)[j];
    let phi = p / l * spade.sqrt() + p_small / l * mom.sqrt();
    let star = m.star_sq(j, psi).sqrt();
    let box_norm = m.norm_sq(&box_psi).sqrt();
    let pivotal = quotient(lhs, p * tree.mass(j, fam.mi).sqrt() * box_norm);
    Ok(MonotonicityReport { lhs, phi, star, ratio: quotient(lhs, phi * star), pivotal })
}

/// `μ = Σ_F Σ_{M ∈ W(F)} ‖𝖰_{F,M} x‖♠² δ_{(c_M, ℓ(M))}` where `𝖰_{F,M}`
/// collects `J ∈ 𝒢` with `J ⊆ M` and `J^✠ ∈ 𝒞_F`. `d_tree` carries the
/// corona, `g_tree` the ω-family `wfam`.
pub fn functional_measure(
    corona: &Corona,
    d_tree: &Tree,
    g_tree: &Tree,
    omega: &Measure,
    wfam: &BFamily,
    eps: f64,
) -> HalfSpaceMeasure {
    let m = Mart::new(g_tree, omega, wfam);
    let spade: Vec<f64> = (0..g_tree.len()).map(|j| if m.atoms(j).len() > 1 { m.spade_sq(j) } else { 0.0 }).collect();
    let mut h = HalfSpaceMeasure::new(omega.dim);
    for k in 0..corona.len() {
        let shift = shifted_corona(corona, k, &d_tree.grid, g_tree, eps);
        if shift.is_empty() {
            continue;
        }
        for mc in whitney(&corona.cubes[k], d_tree.grid.m).cubes {
            let mass: f64 = shift.iter().filter(|&&j| mc.contains_cube(&g_tree.cube(j))).map(|&j| spade[j]).sum();
            if mass > 0.0 {
                h.push(mc.center(), mc.side(), mass);
            }
        }
    }
    h
}

/// `Σ_{(c,t)} (P^α(M, |h| σ) / ℓ(M))² μ_{(c,t)}` with `M` the cube recorded
/// by the atom.
pub fn functional_energy_lhs(mu: &HalfSpaceMeasure, sigma: &Measure, h: &[f64], alpha: f64) -> f64 {
    mu.atoms
        .iter()
        .map(|a| {
            let p: f64 = (0..sigma.len())
                .map(|s| {
                    let d = crate::poisson_a2::euclid(sigma.point(s), a.x, sigma.dim);
                    sigma.atoms[s].mass * h[s].abs() * poisson_kernel(PoissonKind::Standard, alpha, sigma.dim, a.t, d)
                })
                .sum::<f64>()
                / a.t;
            p * p * a.mass
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalEstimate {
    /// `max sqrt(lhs) / ‖h‖` over the dictionary.
    pub dictionary: f64,
    pub dictionary_size: usize,
    /// Exact supremum from the top eigenvalue of the quadratic form.
    pub exact: f64,
}

/// Estimates the functional energy constant from a dictionary of test
/// functions and the top eigenvector of the (nonnegative) quadratic form.
pub fn functional_energy_estimate(mu: &HalfSpaceMeasure, sigma: &Measure, dict: &[Vec<f64>], alpha: f64) -> FunctionalEstimate {
    let mut best: f64 = 0.0;
    for h in dict {
        let n: f64 = (0..sigma.len()).map(|a| h[a] * h[a] * sigma.atoms[a].mass).sum();
        if n > 0.0 {
            best = best.max((functional_energy_lhs(mu, sigma, h, alpha) / n).sqrt());
        }
    }
    let (r, c) = (mu.atoms.len(), sigma.len());
    let exact = if r == 0 || c == 0 {
        0.0
    } else {
        let v = DMatrix::from_fn(r, c, |i, s| {
            let a = &mu.atoms[i];
            let d = crate::poisson_a2::euclid(sigma.point(s), a.x, sigma.dim);
            a.mass.sqrt() * poisson_kernel(PoissonKind::Standard, alpha, sigma.dim, a.t, d) / a.t * sigma.atoms[s].mass.sqrt()
        });
        let g = &v * v.transpose();
        g.symmetric_eigenvalues().iter().fold(0.0f64, |m, &x| m.max(x)).max(0.0).sqrt()
    };
    FunctionalEstimate { dictionary: best, dictionary_size: dict.len(), exact }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceTesting {
    pub forward_lhs: f64,
    pub forward_rhs: f64,
    pub forward_ratio: f64,
    pub backward_lhs: f64,
    pub backward_rhs: f64,
    pub backward_ratio: f64,
    /// `∫_Î t² dμ̄`.
    pub box_mass: f64,
}

/// Constants entering the right-hand sides of the half-space inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceConstants {
    /// `𝔈₂²`.
    pub energy_sq: f64,
    pub cal_a2: f64,
    pub cal_a2_star: f64,
    pub punct: f64,
}

/// Forward and backward half-space Poisson testing on `I` for `μ̄ = μ / t²`.
pub fn halfspace_testing(i: &Cube, mubar: &HalfSpaceMeasure, sigma: &Measure, alpha: f64, k: HalfSpaceConstants) -> HalfSpaceTesting {
    let ind: Vec<f64> = (0..sigma.len()).map(|a| if i.contains_fine(sigma.fine_point(a)) { 1.0 } else { 0.0 }).collect();
    let forward_lhs: f64 = mubar
        .atoms
        .iter()
        .map(|a| {
            let p = halfspace_forward(a.x, a.t, sigma, Some(&ind), alpha).unwrap_or(0.0);
            p * p * a.mass
        })
        .sum();
    let si: f64 = (0..sigma.len()).map(|a| ind[a] * sigma.atoms[a].mass).sum();
    let forward_rhs = (k.energy_sq + k.cal_a2 + k.cal_a2_star + k.punct) * si;
    let backward_lhs: f64 = (0..sigma.len())
        .map(|a| {
            let q = halfspace_dual(sigma.point(a), mubar, Some(i), alpha);
            q * q * sigma.atoms[a].mass
        })
        .sum();
    let box_mass: f64 = mubar.atoms.iter().filter(|a| in_box(a, i)).map(|a| a.t * a.t * a.mass).sum();
    let backward_rhs = (k.energy_sq + k.cal_a2 + k.punct) * box_mass;
    HalfSpaceTesting {
        forward_lhs,
        forward_rhs,
        forward_ratio: quotient(forward_lhs, forward_rhs),
        backward_lhs,
        backward_rhs,
        backward_ratio: quotient(backward_lhs, backward_rhs),
        box_mass,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonDecay {
    pub s: i32,
    pub good: bool,
    /// `P(J, μ1_{K∖I}) / ((ℓJ/ℓI)^{1−ε(n+1−α)} P(I, μ1_{K∖I}))`.
    pub decay: f64,
    /// `P_{1+δ}(J, μ1_{K∖I}) / (2^{−sδ(1−ε)} P(J, μ1_{K∖I}))`.
    pub gain: f64,
    pub p_j: f64,
    pub p_small_j: f64,
}

/// Poisson decay quotients for `J ⊂ I ⊂ K` on the lattice of `m`.
#[allow(clippy::too_many_arguments)]
pub fn poisson_decay(j: &Cube, i: &Cube, k: &Cube, mu: &Measure, alpha: f64, eps: f64, delta: f64, m: i32) -> PoissonDecay {
    let n = mu.dim as f64;
    let s = j.level - i.level;
    let good = is_eps_good(j, i, eps, m).good;
    let keep: Vec<usize> = (0..mu.len())
        .filter(|&a| {
            let p = mu.fine_point(a);
            k.contains_fine(p) && !i.contains_fine(p)
        })
        .collect();
    let pk = |q: &Cube, kind: PoissonKind| {
        crate::poisson_a2::poisson_with(kind, q, mu, alpha, None, |a| keep.binary_search(&a).is_ok())
    };
    let p_j = pk(j, PoissonKind::Standard);
    let p_i = pk(i, PoissonKind::Standard);
    let p_small_j = pk(j, PoissonKind::Small(delta));
    let r = (j.side() / i.side()).powf(1.0 - eps * (n + 1.0 - alpha));
    let gain_scale = (-(s as f64) * delta * (1.0 - eps)).exp2();
    PoissonDecay { s, good, decay: quotient(p_j, r * p_i), gain: quotient(p_small_j, gain_scale * p_j), p_j, p_small_j }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub s: i32,
    pub samples: usize,
    pub max_decay: f64,
    pub max_gain: f64,
    /// Largest `P(J) / P(I)`.
    pub raw_decay: f64,
    /// Largest `P_{1+δ}(J) / P(J)`.
    pub raw_gain: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub rows: Vec<DecayRow>,
    pub max_decay: f64,
    pub max_gain: f64,
}

/// Random configurations `J ⊂ I ⊂ K = [0,1)^n` with `J` good in `I` at depth
/// `s ∈ depths`, `μ` random atoms in `K ∖ I` at resolution `res`.
pub fn decay_study(dim: usize, alpha: f64, eps: f64, delta: f64, res: i32, depths: &[i32], per_depth: usize, seed: u64) -> DecayStudy {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = Cube::new(dim, 0, [0, 0]);
    let mut rows = Vec::new();
    for &s in depths {
        let mut row = DecayRow { s, samples: 0, max_decay: 0.0, max_gain: 0.0, raw_decay: 0.0, raw_gain: 0.0 };
        let mut attempts = 0;
        while row.samples < per_depth && attempts < 100 * per_depth {
            attempts += 1;
            let li = rng.gen_range(1..=2);
            if li + s > res {
                break;
            }
            let mut idx = [0i64; 2];
            for v in idx.iter_mut().take(dim) {
                *v = rng.gen_range(0..(1i64 << li));
            }
            let i = Cube::from_index(dim, li, idx);
            let mut jdx = [0i64; 2];
            for d in 0..dim {
                jdx[d] = (idx[d] << s) + rng.gen_range(0..(1i64 << s));
            }
            let j = Cube::from_index(dim, li + s, jdx);
            if !is_eps_good(&j, &i, eps, res).good {
                continue;
            }
            let n_atoms = rng.gen_range(1..=30);
            let mut atoms = Vec::new();
            while atoms.len() < n_atoms {
                let mut num = [0i64; 2];
                for v in num.iter_mut().take(dim) {
                    *v = rng.gen_range(0..(1i64 << res));
                }
                let a = crate::measure::Atom { num, mass: rng.gen_range(0.1..1.0) };
                let fine = [num[0] << (crate::grid::FINE_BITS - res), num[1] << (crate::grid::FINE_BITS - res)];
                if !i.contains_fine(fine) {
                    atoms.push(a);
                }
            }
            let mu = Measure::new(dim, res, atoms).expect("lattice atoms");
            let d = poisson_decay(&j, &i, &k, &mu, alpha, eps, delta, res);
            let p_i = crate::poisson_a2::poisson_with(PoissonKind::Standard, &i, &mu, alpha, None, |_| true);
            row.samples += 1;
            row.max_decay = row.max_decay.max(d.decay);
            row.max_gain = row.max_gain.max(d.gain);
            row.raw_decay = row.raw_decay.max(quotient(d.p_j, p_i));
            row.raw_gain = row.raw_gain.max(quotient(d.p_small_j, d.p_j));
        }
        rows.push(row);
    }
    let max_decay = rows.iter().map(|r| r.max_decay).fold(0.0, f64::max);
    let max_gain = rows.iter().map(|r| r.max_gain).fold(0.0, f64::max);
    DecayStudy { rows, max_decay, max_gain }
}
