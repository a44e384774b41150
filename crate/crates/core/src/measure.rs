//! Finite atomic measures on the dyadic lattice, and a per-grid tree index of
//! the cubes they charge.

use crate::grid::{Cube, FBox, Grid, Region, FINE_BITS, MAX_LEVEL};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("dimension {0} not supported (1 or 2)")]
    Dim(usize),
    #[error("resolution {0} outside [0, {MAX_LEVEL}]")]
    Resolution(i32),
    #[error("atom {index}: mass {mass} is not a positive finite number")]
    Mass { index: usize, mass: f64 },
    #[error("atom {index}: coordinate outside the representable range")]
    Coord { index: usize },
    #[error("cannot coarsen resolution {from} to {to}: atom {index} is off the coarse lattice")]
    Coarsen { from: i32, to: i32, index: usize },
    #[error("measure file, line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Point is `num / 2^resolution`.
    pub num: [i64; 2],
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measure {
    pub dim: usize,
    pub resolution: i32,
    pub atoms: Vec<Atom>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Average {
    pub value: f64,
    /// The cube carried no mass; `value` is then 0.
    pub zero_mass: bool,
}

const COORD_LIMIT: i64 = 1 << 40;

impl Measure {
    /// Atoms at a repeated point are merged by adding masses; atoms are sorted by point.
    pub fn new(dim: usize, resolution: i32, atoms: Vec<Atom>) -> Result<Measure, MeasureError> {
        if dim != 1 && dim != 2 {
            return Err(MeasureError::Dim(dim));
        }
        if !(0..=MAX_LEVEL).contains(&resolution) {
            return Err(MeasureError::Resolution(resolution));
        }
        let mut merged: BTreeMap<[i64; 2], f64> = BTreeMap::new();
        for (index, a) in atoms.iter().enumerate() {
            if !(a.mass.is_finite() && a.mass > 0.0) {
                return Err(MeasureError::Mass { index, mass: a.mass });
            }
            let mut num = a.num;
            if dim == 1 {
                num[1] = 0;
            }
            let lim = COORD_LIMIT >> (FINE_BITS - resolution);
            if num.iter().any(|v| v.abs() >= lim) {
                return Err(MeasureError::Coord { index });
            }
            *merged.entry(num).or_insert(0.0) += a.mass;
        }
        let atoms = merged.into_iter().map(|(num, mass)| Atom { num, mass }).collect();
        Ok(Measure { dim, resolution, atoms })
    }

    pub fn empty(dim: usize, resolution: i32) -> Measure {
        Measure { dim, resolution, atoms: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.mass).collect()
    }

    pub fn fine_point(&self, i: usize) -> [i64; 2] {
        let sh = FINE_BITS - self.resolution;
        let n = self.atoms[i].num;
        [n[0] << sh, n[1] << sh]
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        let s = (-(self.resolution as f64)).exp2();
        let n = self.atoms[i].num;
        [n[0] as f64 * s, n[1] as f64 * s]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn in_cube(&self, q: &Cube) -> Vec<usize> {
        (0..self.len()).filter(|&i| q.contains_fine(self.fine_point(i))).collect()
    }

    pub fn mass_in_cube(&self, q: &Cube) -> f64 {
        (0..self.len()).filter(|&i| q.contains_fine(self.fine_point(i))).map(|i| self.atoms[i].mass).sum()
    }

    pub fn mass_in_box(&self, b: &FBox) -> f64 {
        (0..self.len()).filter(|&i| b.contains_point(self.point(i))).map(|i| self.atoms[i].mass).sum()
    }

    pub fn mass_in_region(&self, r: &Region) -> f64 {
        (0..self.len()).filter(|&i| r.contains_point(self.point(i))).map(|i| self.atoms[i].mass).sum()
    }

    /// `E_Q^μ f`, with `f` indexed by atom.
    pub fn average(&self, q: &Cube, f: &[f64]) -> Average {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.len() {
            if q.contains_fine(self.fine_point(i)) {
                num += f[i] * self.atoms[i].mass;
                den += self.atoms[i].mass;
            }
        }
        if den > 0.0 {
            Average { value: num / den, zero_mass: false }
        } else {
            Average { value: 0.0, zero_mass: true }
        }
    }

    /// Barycenter `m_Q^μ`; `None` on a massless cube.
    pub fn moment(&self, q: &Cube) -> Option<[f64; 2]> {
        let mut m = [0.0; 2];
        let mut den = 0.0;
        for i in 0..self.len() {
            if q.contains_fine(self.fine_point(i)) {
                let p = self.point(i);
                let w = self.atoms[i].mass;
                m[0] += w * p[0];
                m[1] += w * p[1];
                den += w;
            }
        }
        (den > 0.0).then(|| [m[0] / den, m[1] / den])
    }

    pub fn scaled(&self, lambda: f64) -> Measure {
        let atoms = self.atoms.iter().map(|a| Atom { num: a.num, mass: a.mass * lambda }).collect();
        Measure { dim: self.dim, resolution: self.resolution, atoms }
    }

    pub fn with_resolution(&self, res: i32) -> Result<Measure, MeasureError> {
        if !(0..=MAX_LEVEL).contains(&res) {
            return Err(MeasureError::Resolution(res));
        }
        let mut atoms = Vec::with_capacity(self.len());
        for (index, a) in self.atoms.iter().enumerate() {
            let num = if res >= self.resolution {
                let sh = res - self.resolution;
                [a.num[0] << sh, a.num[1] << sh]
            } else {
                let sh = self.resolution - res;
                if a.num.iter().any(|v| v & ((1 << sh) - 1) != 0) {
                    return Err(MeasureError::Coarsen { from: self.resolution, to: res, index });
                }
                [a.num[0] >> sh, a.num[1] >> sh]
            };
            atoms.push(Atom { num, mass: a.mass });
        }
        Ok(Measure { dim: self.dim, resolution: res, atoms })
    }

    /// Sub-measure of the atoms accepted by `keep` (given the fine point).
    pub fn restrict(&self, keep: impl Fn([i64; 2]) -> bool) -> Measure {
        let atoms = (0..self.len()).filter(|&i| keep(self.fine_point(i))).map(|i| self.atoms[i]).collect();
        Measure { dim: self.dim, resolution: self.resolution, atoms }
    }

    pub fn to_json(&self) -> String {
        let file = MeasureFile {
            dim: self.dim,
            resolution: self.resolution,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomRecord { num: a.num[..self.dim].to_vec(), mass: MassValue::Text(format!("{}", a.mass)) })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("measure serialization")
    }

    pub fn from_json(text: &str) -> Result<Measure, MeasureError> {
        let file: MeasureFile =
            serde_json::from_str(text).map_err(|e| MeasureError::Parse { line: e.line(), msg: e.to_string() })?;
        let mut atoms = Vec::with_capacity(file.atoms.len());
        for (i, r) in file.atoms.iter().enumerate() {
            if r.num.len() != file.dim {
                return Err(MeasureError::Parse {
                    line: 0,
                    msg: format!("atom {i}: expected {} coordinates, got {}", file.dim, r.num.len()),
                });
            }
            let mass = match &r.mass {
                MassValue::Number(v) => *v,
                MassValue::Text(s) => s
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| MeasureError::Parse { line: 0, msg: format!("atom {i}: mass {s:?}: {e}") })?,
            };
            let mut num = [0i64; 2];
            num[..file.dim].copy_from_slice(&r.num);
            atoms.push(Atom { num, mass });
        }
        Measure::new(file.dim, file.resolution, atoms)
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    dim: usize,
    resolution: i32,
    atoms: Vec<AtomRecord>,
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    num: Vec<i64>,
    mass: MassValue,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MassValue {
    Number(f64),
    Text(String),
}

/// Set of points in fine lattice coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PointSet {
    pub points: BTreeSet<[i64; 2]>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &[i64; 2]) -> bool {
        self.points.contains(p)
    }
}

pub fn common_points(sigma: &Measure, omega: &Measure) -> PointSet {
    let a: BTreeSet<[i64; 2]> = (0..sigma.len()).map(|i| sigma.fine_point(i)).collect();
    let points = (0..omega.len()).map(|i| omega.fine_point(i)).filter(|p| a.contains(p)).collect();
    PointSet { points }
}

/// `μ(Q, P)`: mass of `Q` minus the heaviest atom of `μ` in `Q ∩ P`.
pub fn puncture(q: &Cube, mu: &Measure, p: &PointSet) -> f64 {
    let mut total = 0.0;
    let mut top: f64 = 0.0;
    for i in 0..mu.len() {
        let x = mu.fine_point(i);
        if q.contains_fine(x) {
            let w = mu.atoms[i].mass;
            total += w;
            if p.contains(&x) {
                top = top.max(w);
            }
        }
    }
    total - top
}

/// Tree node: a cube carrying mass of at least one indexed measure.
#[derive(Clone, Debug)]
pub struct Node {
    pub cube: Cube,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Per measure: sorted indices of atoms in the cube.
    pub atoms: Vec<Vec<usize>>,
    pub mass: Vec<f64>,
}

/// Cubes of one grid (levels N..=M) charged by a set of measures.
/// Nodes are stored top-down: every parent precedes its children.
#[derive(Clone, Debug)]
pub struct Tree {
    pub grid: Grid,
    pub nodes: Vec<Node>,
    pub roots: Vec<usize>,
    index: HashMap<Cube, usize>,
    /// Per measure, per atom: the level-M node holding it.
    pub leaf_of: Vec<Vec<usize>>,
}

impl Tree {
    pub fn build(grid: &Grid, measures: &[&Measure]) -> Tree {
        let nm = measures.len();
        let mut cubes: BTreeMap<Cube, (Option<Cube>, Vec<Vec<usize>>)> = BTreeMap::new();
        for (mi, mu) in measures.iter().enumerate() {
            for a in 0..mu.len() {
                let p = mu.fine_point(a);
                let mut parent = None;
                for level in grid.n..=grid.m {
                    let c = grid.cube_containing(p, level);
                    let e = cubes.entry(c).or_insert_with(|| (parent, vec![Vec::new(); nm]));
                    e.1[mi].push(a);
                    parent = Some(c);
                }
            }
        }
        let mut order: Vec<Cube> = cubes.keys().copied().collect();
        order.sort_by_key(|c| (c.level, c.lo));
        let index: HashMap<Cube, usize> = order.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let mut nodes: Vec<Node> = order
            .iter()
            .map(|c| {
                let (parent, mut atoms) = cubes.remove(c).unwrap();
                for v in atoms.iter_mut() {
                    v.sort_unstable();
                }
                let mass = atoms
                    .iter()
                    .enumerate()
                    .map(|(mi, v)| v.iter().map(|&a| measures[mi].atoms[a].mass).sum())
                    .collect();
                Node { cube: *c, parent: parent.map(|p| index[&p]), children: Vec::new(), atoms, mass }
            })
            .collect();
        let mut roots = Vec::new();
        for i in 0..nodes.len() {
            match nodes[i].parent {
                Some(p) => nodes[p].children.push(i),
                None => roots.push(i),
            }
        }
        let mut leaf_of: Vec<Vec<usize>> = measures.iter().map(|mu| vec![usize::MAX; mu.len()]).collect();
        for (i, nd) in nodes.iter().enumerate() {
            if nd.cube.level == grid.m {
                for (mi, v) in nd.atoms.iter().enumerate() {
                    for &a in v {
                        leaf_of[mi][a] = i;
                    }
                }
            }
        }
        Tree { grid: grid.clone(), nodes, roots, index, leaf_of }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_of(&self, c: &Cube) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn cube(&self, i: usize) -> Cube {
        self.nodes[i].cube
    }

    pub fn mass(&self, i: usize, mi: usize) -> f64 {
        self.nodes[i].mass[mi]
    }

    pub fn atoms(&self, i: usize, mi: usize) -> &[usize] {
        &self.nodes[i].atoms[mi]
    }

    /// Preorder list of `i` and all its descendants.
    pub fn subtree(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![i];
        while let Some(x) = stack.pop() {
            out.push(x);
            stack.extend(self.nodes[x].children.iter().rev());
        }
        out
    }

    /// `i` and its ancestors, from `i` upward.
    pub fn ancestors(&self, i: usize) -> Vec<usize> {
        let mut out = vec![i];
        let mut x = i;
        while let Some(p) = self.nodes[x].parent {
            out.push(p);
            x = p;
        }
        out
    }

    /// Whether node `a` contains node `b`.
    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        self.nodes[a].cube.contains_cube(&self.nodes[b].cube)
    }

    /// Sum over the subtree of each node of a per-node quantity.
    pub fn subtree_sums(&self, v: &[f64]) -> Vec<f64> {
        let mut s = v.to_vec();
        for i in (0..self.len()).rev() {
            if let Some(p) = self.nodes[i].parent {
                s[p] += s[i];
            }
        }
        s
    }
}
