//! Stopping-time constructions on a dyadic tree and their verification.

use crate::bfamily::{reverse_holder_adjust, rh_conclusions, rh_delta_bound, BFamily, Mart, RhCase, RhConclusion};
use crate::energy::{best_partition, moments};
use crate::grid::{sharp_cross, Cube};
use crate::measure::{Measure, Tree};
use crate::poisson_a2::{poisson_with, HalfSpaceMeasure, PoissonKind};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoronaKind {
    Cz,
    Accretive,
    Energy,
    Shadow,
    Iterated,
    Lacey,
    Indented,
}

/// Stopping forest below one root. `stops[0]` is the root; stops are stored
/// top-down and `parent[k]` indexes into `stops`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corona {
    pub kind: CoronaKind,
    pub stops: Vec<usize>,
    pub cubes: Vec<Cube>,
    pub parent: Vec<Option<usize>>,
    /// Stopping bound `α(F)`.
    pub alpha: Vec<f64>,
    /// Value of the firing criterion at each stop (root: 0).
    pub criterion: Vec<f64>,
}

impl Corona {
    pub fn root(&self) -> usize {
        self.stops[0]
    }

    pub fn len(&self) -> usize {
        self.stops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }

    pub fn children_of(&self, k: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parent[i] == Some(k)).collect()
    }

    pub fn depth(&self, k: usize) -> usize {
        let mut d = 0;
        let mut x = k;
        while let Some(p) = self.parent[x] {
            d += 1;
            x = p;
        }
        d
    }

    /// Index of the smallest stop containing `c`, if any.
    pub fn owner_of_cube(&self, c: &Cube) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, s) in self.cubes.iter().enumerate() {
            if s.contains_cube(c) && best.map_or(true, |b| self.cubes[b].level < s.level) {
                best = Some(k);
            }
        }
        best
    }

    /// Per tree node: index of the stop whose corona contains it.
    pub fn owners(&self, tree: &Tree) -> Vec<Option<usize>> {
        let mut out = vec![None; tree.len()];
        let mut at = vec![None; tree.len()];
        for (k, &s) in self.stops.iter().enumerate() {
            at[s] = Some(k);
        }
        for q in tree.subtree(self.root()) {
            out[q] = match at[q] {
                Some(k) => Some(k),
                None => tree.nodes[q].parent.and_then(|p| out[p]),
            };
        }
        out
    }

    /// Tree nodes of `𝒞_F` for the stop with index `k`.
    pub fn corona_nodes(&self, tree: &Tree, k: usize) -> Vec<usize> {
        let own = self.owners(tree);
        tree.subtree(self.stops[k]).into_iter().filter(|&q| own[q] == Some(k)).collect()
    }

    pub fn export(&self) -> Vec<StopRecord> {
        (0..self.len())
            .map(|k| StopRecord {
                cube: self.cubes[k],
                parent: self.parent[k].map(|p| self.cubes[p]),
                kind: self.kind,
                alpha: self.alpha[k],
                criterion: self.criterion[k],
                depth: self.depth(k),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub cube: Cube,
    pub parent: Option<Cube>,
    pub kind: CoronaKind,
    pub alpha: f64,
    pub criterion: f64,
    pub depth: usize,
}

/// Repeated maximal-cube stopping: `rule(top, I)` returns the criterion value
/// when `I` stops below `top`.
pub fn stop_recursive(
    tree: &Tree,
    root: usize,
    kind: CoronaKind,
    mut rule: impl FnMut(usize, usize) -> Option<f64>,
) -> Corona {
    let mut c = Corona {
        kind,
        stops: vec![root],
        cubes: vec![tree.cube(root)],
        parent: vec![None],
        alpha: vec![0.0],
        criterion: vec![0.0],
    };
    let mut k = 0;
    while k < c.stops.len() {
        let top = c.stops[k];
        let mut stack: Vec<usize> = tree.nodes[top].children.iter().rev().copied().collect();
        while let Some(i) = stack.pop() {
            match rule(top, i) {
                Some(v) => {
                    c.stops.push(i);
                    c.cubes.push(tree.cube(i));
                    c.parent.push(Some(k));
                    c.alpha.push(0.0);
                    c.criterion.push(v);
                }
                None => stack.extend(tree.nodes[i].children.iter().rev()),
            }
        }
        k += 1;
    }
    c
}

fn avg_abs(tree: &Tree, mu: &Measure, mi: usize, q: usize, f: &[f64]) -> f64 {
    let m = tree.mass(q, mi);
    if m <= 0.0 {
        return 0.0;
    }
    tree.atoms(q, mi).iter().map(|&a| f[a].abs() * mu.atoms[a].mass).sum::<f64>() / m
}

/// Calderón–Zygmund stopping: maximal `I` with `E_I|f| > C₀ E_F|f|`.
pub fn cz_stopping(tree: &Tree, mu: &Measure, mi: usize, f: &[f64], root: usize, c0: f64) -> Corona {
    let mut c = stop_recursive(tree, root, CoronaKind::Cz, |top, i| {
        if tree.mass(i, mi) <= 0.0 {
            return None;
        }
        let v = avg_abs(tree, mu, mi, i, f);
        (v > c0 * avg_abs(tree, mu, mi, top, f)).then_some(v)
    });
    for k in 0..c.len() {
        c.alpha[k] = avg_abs(tree, mu, mi, c.stops[k], f);
    }
    c
}

/// `∫_I |v|² dω` for values `v` on the atoms of `ω`.
pub fn local_sq(tree: &Tree, omega: &Measure, mi_w: usize, i: usize, v: &[f64]) -> f64 {
    tree.atoms(i, mi_w).iter().map(|&a| v[a] * v[a] * omega.atoms[a].mass).sum()
}

/// Parameters of the accretive and weak-testing criteria.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccretiveParams {
    pub gamma: f64,
    pub big_gamma: f64,
    /// Testing constant `𝔗` (not squared).
    pub testing: f64,
}

/// Accretive / weak-testing stopping. `tb(top)` returns `T_σ b_top` at the
/// atoms of `ω`.
#[allow(clippy::too_many_arguments)]
pub fn accretive_stopping(
    tree: &Tree,
    sigma: &Measure,
    omega: &Measure,
    fam: &BFamily,
    mi_w: usize,
    mut tb: impl FnMut(usize) -> Vec<f64>,
    root: usize,
    p: AccretiveParams,
) -> Corona {
    let m = Mart::new(tree, sigma, fam);
    let mut cache: Option<(usize, Vec<f64>)> = None;
    stop_recursive(tree, root, CoronaKind::Accretive, |top, i| {
        let ms = m.mass(i);
        if ms <= 0.0 {
            return None;
        }
        let avg = m.int_b_on(top, i) / ms;
        if avg.abs() < p.gamma {
            return Some(avg);
        }
        if cache.as_ref().map(|c| c.0) != Some(top) {
            cache = Some((top, tb(top)));
        }
        let v = &cache.as_ref().unwrap().1;
        let t = local_sq(tree, omega, mi_w, i, v);
        (t > p.big_gamma * p.testing * p.testing * ms).then_some(t / ms)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCorona {
    pub corona: Corona,
    /// `𝐗_α(𝒞_F)²` per stop.
    pub stopping_energy_sq: Vec<f64>,
    pub threshold: f64,
}

/// Energy stopping: maximal `I` with best dyadic subpartition functional
/// `>= C_en (𝔈₂² + 𝔄₂) |I|_σ` (and positive).
#[allow(clippy::too_many_arguments)]
pub fn energy_stopping(
    tree: &Tree,
    sigma: &Measure,
    omega: &Measure,
    root: usize,
    c_en: f64,
    e2: f64,
    a2: f64,
    alpha: f64,
) -> EnergyCorona {
    let mom = moments(tree, omega, 1);
    let threshold = c_en * (e2 * e2 + a2);
    let best: Vec<f64> = (0..tree.len())
        .map(|i| best_partition(tree, sigma, 0, 1, i, alpha, true, None, &mom).value)
        .collect();
    let mut corona = stop_recursive(tree, root, CoronaKind::Energy, |_, i| {
        let ms = tree.mass(i, 0);
        (best[i] > 0.0 && best[i] >= threshold * ms).then_some(if ms > 0.0 { best[i] / ms } else { f64::INFINITY })
    });
    let own = corona.owners(tree);
    let mut x = vec![0.0f64; corona.len()];
    for q in tree.subtree(root) {
        if let Some(k) = own[q] {
            let ms = tree.mass(q, 0);
            if ms > 0.0 {
                x[k] = x[k].max(best[q] / ms);
            }
        }
    }
    for k in 0..corona.len() {
        corona.alpha[k] = x[k];
    }
    EnergyCorona { corona, stopping_energy_sq: x, threshold }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IteratedParams {
    pub c0: f64,
    pub gamma: f64,
    pub big_gamma: f64,
    pub c_en: f64,
    pub delta: f64,
    pub e2: f64,
    pub a2: f64,
    pub testing: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopRecord {
    /// Index into the corona stops.
    pub stop: usize,
    pub shadow: Vec<usize>,
    /// `b̃_F` aligned with the σ-atoms of `F`.
    pub b_tilde: Vec<f64>,
    /// Reverse-Hölder order actually used.
    pub delta: f64,
    pub normalization: f64,
    pub rh: Option<RhConclusion>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IteratedCorona {
    pub corona: Corona,
    pub tops: Vec<TopRecord>,
}

/// Shadow stopping by the union of the CZ, accretive/testing and energy
/// criteria, reverse-Hölder adjustment at the shadow cubes, then weak-testing
/// stopping for the adjusted function that also stops at every shadow cube.
/// `t_apply(v)` returns `T_σ v` at the atoms of `ω` for σ-atom values `v`.
#[allow(clippy::too_many_arguments)]
pub fn iterated_stopping(
    tree: &Tree,
    sigma: &Measure,
    omega: &Measure,
    fam: &BFamily,
    f: &[f64],
    root: usize,
    p: IteratedParams,
    t_apply: &dyn Fn(&[f64]) -> Vec<f64>,
) -> IteratedCorona {
    let mom = moments(tree, omega, 1);
    let e_thr = p.c_en * (p.e2 * p.e2 + p.a2);
    let energy_full: Vec<f64> = (0..tree.len())
        .map(|i| best_partition(tree, sigma, 0, 1, i, p.alpha, false, None, &mom).value)
        .collect();
    let m = Mart::new(tree, sigma, fam);
    let full = |q: usize, vals: &[f64]| -> Vec<f64> {
        let mut v = vec![0.0; sigma.len()];
        for (&a, &x) in tree.atoms(q, 0).iter().zip(vals) {
            v[a] = x;
        }
        v
    };
    let mut corona = Corona {
        kind: CoronaKind::Iterated,
        stops: vec![root],
        cubes: vec![tree.cube(root)],
        parent: vec![None],
        alpha: vec![0.0],
        criterion: vec![0.0],
    };
    let mut tops = Vec::new();
    let mut k = 0;
    while k < corona.stops.len() {
        let top = corona.stops[k];
        let b_top = fam.local(tree, top).into_owned();
        let tb = t_apply(&full(top, &b_top));
        let avg_top = avg_abs(tree, sigma, 0, top, f);
        let shadow = stop_recursive(tree, top, CoronaKind::Shadow, |_, i| {
            let ms = tree.mass(i, 0);
            if ms <= 0.0 {
                return None;
            }
            let a = avg_abs(tree, sigma, 0, i, f);
            if a > p.c0 * avg_top {
                return Some(a);
            }
            let avg_b = m.int_b_on(top, i) / ms;
            if avg_b.abs() < p.gamma {
                return Some(avg_b);
            }
            let t = local_sq(tree, omega, 1, i, &tb);
            if t > p.big_gamma * p.testing * p.testing * ms {
                return Some(t / ms);
            }
            (energy_full[i] > 0.0 && energy_full[i] >= e_thr * ms).then_some(energy_full[i] / ms)
        });
        let shadow_nodes: Vec<usize> = (1..shadow.len()).filter(|&s| shadow.parent[s] == Some(0)).map(|s| shadow.stops[s]).collect();
        // Reverse-Hölder adjustment relative to the shadow cubes.
        let atoms = tree.atoms(top, 0);
        let masses: Vec<f64> = atoms.iter().map(|&a| sigma.atoms[a].mass).collect();
        let pos = |a: usize| atoms.binary_search(&a).unwrap();
        let parts: Vec<Vec<usize>> = shadow_nodes.iter().map(|&s| tree.atoms(s, 0).iter().map(|&a| pos(a)).collect()).collect();
        let norm = 1.0 / p.gamma;
        let scaled: Vec<f64> = b_top.iter().map(|v| v * norm).collect();
        let c_b = scaled.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        let bound = rh_delta_bound(RhCase::Corona, c_b, tree.grid.dim);
        let delta = p.delta.min(0.5 * bound);
        let (b_tilde, rh) = if parts.is_empty() {
            (scaled.clone(), None)
        } else {
            match reverse_holder_adjust(&scaled, &masses, &parts, c_b, delta, tree.grid.dim, RhCase::Corona) {
                Ok(adj) => {
                    let concl = rh_conclusions(&adj.values, &masses, &parts, c_b, delta);
                    (adj.values, Some(concl))
                }
                Err(_) => (scaled.clone(), None),
            }
        };
        let tbt = t_apply(&full(top, &b_tilde));
        let ms_top = tree.mass(top, 0);
        let testing_tilde_sq = if ms_top > 0.0 { local_sq(tree, omega, 1, top, &tbt) / ms_top } else { 0.0 };
        let is_shadow: std::collections::HashSet<usize> = shadow_nodes.iter().copied().collect();
        let it = stop_recursive(tree, top, CoronaKind::Iterated, |_, i| {
            if is_shadow.contains(&i) {
                return Some(-1.0);
            }
            let ms = tree.mass(i, 0);
            if ms <= 0.0 {
                return None;
            }
            let t = local_sq(tree, omega, 1, i, &tbt);
            (t > p.big_gamma * testing_tilde_sq * ms).then_some(t / ms)
        });
        for s in 1..it.len() {
            if it.parent[s] == Some(0) {
                corona.stops.push(it.stops[s]);
                corona.cubes.push(it.cubes[s]);
                corona.parent.push(Some(k));
                corona.alpha.push(0.0);
                corona.criterion.push(it.criterion[s]);
            }
        }
        tops.push(TopRecord { stop: k, shadow: shadow_nodes, b_tilde, delta, normalization: norm, rh });
        k += 1;
    }
    for k in 0..corona.len() {
        corona.alpha[k] = avg_abs(tree, sigma, 0, corona.stops[k], f);
    }
    IteratedCorona { corona, tops }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlesonNorm {
    pub value: f64,
    pub witness: Option<Cube>,
}

/// Best `C` with `Σ_{F ⊆ S} |F|_μ <= C |S|_μ` over every tree node `S` of
/// positive mass.
pub fn carleson_norm(tree: &Tree, mi: usize, family: &[usize]) -> CarlesonNorm {
    let mut v = vec![0.0; tree.len()];
    for &f in family {
        v[f] += tree.mass(f, mi);
    }
    let s = tree.subtree_sums(&v);
    let mut best = CarlesonNorm { value: 0.0, witness: None };
    for q in 0..tree.len() {
        let m = tree.mass(q, mi);
        if m > 0.0 && s[q] / m > best.value {
            best = CarlesonNorm { value: s[q] / m, witness: Some(tree.cube(q)) };
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppingData {
    pub alpha: Vec<f64>,
    /// Property (1): worst `E_I|f| / α(F)` over corona cubes.
    pub worst_average_ratio: f64,
    pub carleson: f64,
    /// `Σ α² |F|_σ / ‖f‖²`.
    pub embedding: f64,
    pub monotone: bool,
    /// `‖Σ α 1_F‖² / ‖f‖²`.
    pub quasi_orthogonality: f64,
    pub a0: f64,
    pub witness: Option<Cube>,
    pub pass: bool,
}

/// Stopping bounds `α(F) = max(α(π F), sup_{I ∈ 𝒞_F} E_I|f|)` and a check of
/// the four stopping-data properties.
pub fn stopping_data(c: &Corona, tree: &Tree, mu: &Measure, mi: usize, f: &[f64]) -> StoppingData {
    let own = c.owners(tree);
    let mut sup = vec![0.0f64; c.len()];
    for q in tree.subtree(c.root()) {
        if let Some(k) = own[q] {
            sup[k] = sup[k].max(avg_abs(tree, mu, mi, q, f));
        }
    }
    let mut alpha = vec![0.0f64; c.len()];
    for k in 0..c.len() {
        alpha[k] = match c.parent[k] {
            Some(p) => alpha[p].max(sup[k]),
            None => sup[k],
        };
    }
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for q in tree.subtree(c.root()) {
        if let Some(k) = own[q] {
            let e = avg_abs(tree, mu, mi, q, f);
            let r = if alpha[k] > 0.0 { e / alpha[k] } else if e > 0.0 { f64::INFINITY } else { 0.0 };
            if r > worst {
                worst = r;
                witness = Some(tree.cube(q));
            }
        }
    }
    let carleson = carleson_norm_within(c, tree, mi);
    let norm_sq: f64 = tree.atoms(c.root(), mi).iter().map(|&a| f[a] * f[a] * mu.atoms[a].mass).sum();
    let emb: f64 = (0..c.len()).map(|k| alpha[k] * alpha[k] * tree.mass(c.stops[k], mi)).sum();
    let monotone = (0..c.len()).all(|k| c.parent[k].map_or(true, |p| alpha[p] <= alpha[k]));
    let mut g = vec![0.0; mu.len()];
    for k in 0..c.len() {
        for &a in tree.atoms(c.stops[k], mi) {
            g[a] += alpha[k];
        }
    }
    let qo: f64 = g.iter().enumerate().map(|(a, v)| v * v * mu.atoms[a].mass).sum();
    let ratio = |x: f64| if norm_sq > 0.0 { x / norm_sq } else if x > 0.0 { f64::INFINITY } else { 0.0 };
    let embedding = ratio(emb);
    let a0 = 4.0f64.max(carleson).max(embedding.sqrt());
    StoppingData {
        alpha,
        worst_average_ratio: worst,
        carleson,
        embedding,
        monotone,
        quasi_orthogonality: ratio(qo),
        a0,
        witness,
        pass: worst <= 1.0 + 1e-12 && monotone && carleson <= a0 && embedding <= a0 * a0,
    }
}

/// `max_F Σ_{F' ⪯ F} |F'| / |F|` over stops.
pub fn carleson_norm_within(c: &Corona, tree: &Tree, mi: usize) -> f64 {
    let mut s = vec![0.0; c.len()];
    for k in (0..c.len()).rev() {
        s[k] += tree.mass(c.stops[k], mi);
        if let Some(p) = c.parent[k] {
            s[p] += s[k];
        }
    }
    (0..c.len())
        .filter(|&k| tree.mass(c.stops[k], mi) > 0.0)
        .map(|k| s[k] / tree.mass(c.stops[k], mi))
        .fold(0.0, f64::max)
}

/// `{J ∈ 𝒢 : J^✠ ∈ 𝒞_F}` over the nodes of the tree `g_tree` on grid 𝒢,
/// with `J^✠` taken in the grid of the corona.
pub fn shifted_corona(c: &Corona, k: usize, d_grid: &crate::grid::Grid, g_tree: &Tree, eps: f64) -> Vec<usize> {
    (0..g_tree.len())
        .filter(|&j| {
            let cross = sharp_cross(&g_tree.cube(j), d_grid, eps).cross;
            cross.map_or(false, |x| c.owner_of_cube(&x) == Some(k))
        })
        .collect()
}

/// Admissible pairs `(I, J)` of nodes with `J ⊊ I ⊆ A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
}

/// Data shared by the size functionals and the bottom-up construction on one
/// tree (σ = measure 0, ω = measure 1).
pub struct SizeContext<'a> {
    pub tree: &'a Tree,
    pub sigma: &'a Measure,
    pub omega: &'a Measure,
    pub wfam: &'a BFamily,
    pub alpha: f64,
    pub eps: f64,
    pub a: usize,
    spade: Vec<f64>,
    cross: Vec<Option<Cube>>,
    flat: Vec<Option<Cube>>,
}

impl<'a> SizeContext<'a> {
    pub fn new(
        tree: &'a Tree,
        sigma: &'a Measure,
        omega: &'a Measure,
        wfam: &'a BFamily,
        alpha: f64,
        eps: f64,
        a: usize,
    ) -> SizeContext<'a> {
        let m = Mart::new(tree, omega, wfam);
        let spade = (0..tree.len()).map(|j| if m.atoms(j).len() > 1 { m.spade_sq(j) } else { 0.0 }).collect();
        let sc: Vec<_> = (0..tree.len()).map(|j| sharp_cross(&tree.cube(j), &tree.grid, eps)).collect();
        SizeContext {
            tree,
            sigma,
            omega,
            wfam,
            alpha,
            eps,
            a,
            spade,
            cross: sc.iter().map(|s| s.cross).collect(),
            flat: sc.iter().map(|s| s.flat).collect(),
        }
    }

    pub fn spade(&self, j: usize) -> f64 {
        self.spade[j]
    }

    pub fn cross(&self, j: usize) -> Option<Cube> {
        self.cross[j]
    }

    pub fn flat(&self, j: usize) -> Option<Cube> {
        self.flat[j]
    }

    /// Pairs `(I, J)` with `I ⊆ A`, `J ⊊ I` and `J^✠ ⊆ A`, at most `limit`.
    pub fn admissible_pairs(&self, limit: usize) -> Vec<Pair> {
        let ac = self.tree.cube(self.a);
        let mut out = Vec::new();
        for i in self.tree.subtree(self.a) {
            for j in self.tree.subtree(i) {
                if j == i || self.tree.atoms(j, 1).is_empty() {
                    continue;
                }
                if self.cross[j].map_or(false, |x| ac.contains_cube(&x)) {
                    out.push(Pair { i, j });
                    if out.len() >= limit {
                        return out;
                    }
                }
            }
        }
        out
    }

    /// `Π₁^below 𝒫`: nodes `K ⊆ A` with `J ⊊ K ⊆ I` for some pair.
    pub fn below(&self, pairs: &[Pair]) -> Vec<usize> {
        let ac = self.tree.cube(self.a);
        let mut set = std::collections::BTreeSet::new();
        for p in pairs {
            for k in self.tree.ancestors(p.j).into_iter().skip(1) {
                if !self.tree.is_ancestor(p.i, k) {
                    break;
                }
                if ac.contains_cube(&self.tree.cube(k)) {
                    set.insert(k);
                }
            }
        }
        set.into_iter().collect()
    }

    /// `(P^α(K, 1_{A∖K} σ) / ℓ(K))²`.
    pub fn tail_factor(&self, k: usize) -> f64 {
        let kc = self.tree.cube(k);
        let ac = self.tree.cube(self.a);
        let p = poisson_with(PoissonKind::Standard, &kc, self.sigma, self.alpha, None, |a| {
            let x = self.sigma.fine_point(a);
            ac.contains_fine(x) && !kc.contains_fine(x)
        });
        (p / kc.side()).powi(2)
    }

    fn pair_js(pairs: &[Pair]) -> Vec<usize> {
        let mut js: Vec<usize> = pairs.iter().map(|p| p.j).collect();
        js.sort_unstable();
        js.dedup();
        js
    }

    /// `Ψ(K; 𝒫)²` with the initial (`aug = false`) or augmented projection.
    pub fn psi_sq(&self, pairs: &[Pair], k: usize, aug: bool) -> f64 {
        let kc = self.tree.cube(k);
        let top = if aug {
            let g = &self.tree.grid;
            let lvl = (kc.level - 2).max(g.n);
            Some(g.cube_containing(kc.lo, lvl))
        } else {
            None
        };
        let mut s = 0.0;
        for j in Self::pair_js(pairs) {
            let jc = self.tree.cube(j);
            let Some(x) = self.cross[j] else { continue };
            let inside = match top {
                Some(t) => kc.contains_cube(&jc) && jc != kc && t.contains_cube(&x),
                None => kc.contains_cube(&x),
            };
            if inside {
                s += self.spade[j];
            }
        }
        if s == 0.0 {
            return 0.0;
        }
        self.tail_factor(k) * s
    }

    /// `ω_♭𝒫 = Σ_J ‖Δ_J x‖♠² δ_{(c_{J♭}, ℓ(J♭))}`.
    pub fn omega_flat(&self, pairs: &[Pair]) -> HalfSpaceMeasure {
        let mut h = HalfSpaceMeasure::new(self.tree.grid.dim);
        for j in Self::pair_js(pairs) {
            if let Some(f) = self.flat[j] {
                if self.spade[j] > 0.0 {
                    h.push(f.center(), f.side(), self.spade[j]);
                }
            }
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeFunctionals {
    pub init_sq: f64,
    pub init_witness: Option<Cube>,
    pub aug_sq: f64,
    pub aug_witness: Option<Cube>,
}

/// Initial and augmented size functionals, optionally localized to `K ⊆ S`.
pub fn size_functionals(ctx: &SizeContext, pairs: &[Pair], localize: Option<usize>) -> SizeFunctionals {
    let mut r = SizeFunctionals { init_sq: 0.0, init_witness: None, aug_sq: 0.0, aug_witness: None };
    for k in ctx.below(pairs) {
        if let Some(s) = localize {
            if !ctx.tree.is_ancestor(s, k) {
                continue;
            }
        }
        let ms = ctx.tree.mass(k, 0);
        if ms <= 0.0 {
            continue;
        }
        let a = ctx.psi_sq(pairs, k, false) / ms;
        if a > r.init_sq {
            r.init_sq = a;
            r.init_witness = Some(ctx.tree.cube(k));
        }
        let b = ctx.psi_sq(pairs, k, true) / ms;
        if b > r.aug_sq {
            r.aug_sq = b;
            r.aug_witness = Some(ctx.tree.cube(k));
        }
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaceyGenerations {
    /// Levels `𝓛₀ … 𝓛_M`, then the residual maximal cubes `𝓛_{M+1}` last.
    pub levels: Vec<Vec<Cube>>,
    pub rho: f64,
}

impl LaceyGenerations {
    pub fn all(&self) -> Vec<Cube> {
        let mut v: Vec<Cube> = self.levels.iter().flatten().copied().collect();
        v.sort();
        v.dedup();
        v
    }
}

fn minimal(cands: &[Cube]) -> Vec<Cube> {
    cands.iter().filter(|c| !cands.iter().any(|d| d != *c && c.contains_cube(d))).copied().collect()
}

fn maximal(cands: &[Cube]) -> Vec<Cube> {
    cands.iter().filter(|c| !cands.iter().any(|d| d != *c && d.contains_cube(c))).copied().collect()
}

/// Mass of `ω♭` in the union of the tents over `cubes`.
pub fn union_tent_mass(h: &HalfSpaceMeasure, cubes: &[Cube]) -> f64 {
    h.atoms
        .iter()
        .filter(|a| cubes.iter().any(|c| crate::poisson_a2::in_tent(a, c)))
        .map(|a| a.mass)
        .sum()
}

/// Bottom-up stopping over candidate cubes `cands` (`Π₁^below 𝒫`).
/// `psi_over_mass(K)` is `Ψ(K;𝒫)² / |K|_σ` and `size_sq` its supremum.
pub fn lacey_bottom_up(
    cands: &[Cube],
    omega_flat: &HalfSpaceMeasure,
    psi_over_mass: impl Fn(&Cube) -> f64,
    size_sq: f64,
    rho: f64,
    eps_size: f64,
) -> LaceyGenerations {
    let initial: Vec<Cube> = cands
        .iter()
        .filter(|k| {
            let v = psi_over_mass(k);
            v > 0.0 && v >= eps_size * size_sq
        })
        .copied()
        .collect();
    let mut levels = vec![minimal(&initial)];
    let mut chosen: Vec<Cube> = levels[0].clone();
    if !chosen.is_empty() {
        loop {
            let qualifying: Vec<Cube> = cands
                .iter()
                .filter(|l| !chosen.contains(l))
                .filter(|l| {
                    let inside: Vec<Cube> = chosen.iter().filter(|c| l.contains_cube(c)).copied().collect();
                    if inside.is_empty() {
                        return false;
                    }
                    let t = omega_flat.tent_mass(l);
                    t > 0.0 && t >= rho * union_tent_mass(omega_flat, &inside)
                })
                .copied()
                .collect();
            let next = minimal(&qualifying);
            if next.is_empty() {
                break;
            }
            chosen.extend(next.iter().copied());
            levels.push(next);
        }
    }
    let rest: Vec<Cube> = maximal(cands).into_iter().filter(|c| !chosen.contains(c)).collect();
    levels.push(rest);
    LaceyGenerations { levels, rho }
}

/// Worst `Σ_{L' ∈ 𝔠_𝓛(L₀)} ω♭(T(L')) / ω♭(T(L₀))` over `L₀` in the
/// stopping levels `1 ..= M`.
pub fn lacey_decay(g: &LaceyGenerations, omega_flat: &HalfSpaceMeasure) -> f64 {
    let all = g.all();
    let mut worst: f64 = 0.0;
    let stop_levels = g.levels.len().saturating_sub(1);
    for lvl in g.levels.iter().take(stop_levels).skip(1) {
        for l0 in lvl {
            let inside: Vec<Cube> = all.iter().filter(|c| *c != l0 && l0.contains_cube(c)).copied().collect();
            let kids = maximal(&inside);
            let t0 = omega_flat.tent_mass(l0);
            let s = union_tent_mass(omega_flat, &kids);
            if t0 > 0.0 {
                worst = worst.max(s / t0);
            }
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Indented {
    pub cubes: Vec<Cube>,
    pub depth: Vec<usize>,
    pub parent: Vec<Option<usize>>,
}

/// `ℋ₀` = maximal cubes of `𝓛`; `ℋ_{k+1}(H)` = maximal `L ∈ 𝓛` with `3L ⊂ H`.
pub fn indented_corona(l: &[Cube]) -> Indented {
    let mut out = Indented { cubes: Vec::new(), depth: Vec::new(), parent: Vec::new() };
    for h in maximal(l) {
        out.cubes.push(h);
        out.depth.push(0);
        out.parent.push(None);
    }
    let mut k = 0;
    while k < out.cubes.len() {
        let h = out.cubes[k];
        let inside: Vec<Cube> = l.iter().filter(|c| **c != h && c.triple_within(&h)).copied().collect();
        for c in maximal(&inside) {
            out.cubes.push(c);
            out.depth.push(out.depth[k] + 1);
            out.parent.push(Some(k));
        }
        k += 1;
    }
    out
}
