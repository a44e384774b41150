use super::config::GeneratorSpec;
use crate::measure::{Atom, Measure, MeasureError};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("pair file, line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("{0}")]
    Params(String),
}

fn lattice_point(dim: usize, res: i32, k: usize) -> [i64; 2] {
    let side = 1usize << res;
    if dim == 1 {
        [k as i64, 0]
    } else {
        [(k % side) as i64, (k / side) as i64]
    }
}

fn random_measure(dim: usize, res: i32, atoms: usize, rng: &mut ChaCha8Rng) -> Result<Measure, GeneratorError> {
    let cells = 1usize << (res as usize * dim);
    if atoms > cells {
        return Err(GeneratorError::Params(format!("{atoms} atoms exceed the {cells} lattice points")));
    }
    let picks = sample(rng, cells, atoms).into_vec();
    let v = picks
        .into_iter()
        .map(|k| Atom { num: lattice_point(dim, res, k), mass: rng.gen_range(0.2..1.0) / atoms as f64 })
        .collect();
    Ok(Measure::new(dim, res, v)?)
}

/// Finest lattice used by the full-lattice generators.
pub fn lattice_depth(dim: usize, res: i32) -> i32 {
    res.min(if dim == 1 { 8 } else { 4 })
}

fn doubling(dim: usize, res: i32, rng: &mut ChaCha8Rng) -> Result<Measure, GeneratorError> {
    let l = lattice_depth(dim, res);
    let cells = 1usize << (l as usize * dim);
    let base = (-(l as f64) * dim as f64).exp2();
    let v = (0..cells)
        .map(|k| {
            let p = lattice_point(dim, l, k);
            Atom { num: [p[0] << (res - l), p[1] << (res - l)], mass: base * rng.gen_range(0.5..2.0) }
        })
        .collect();
    Ok(Measure::new(dim, res, v)?)
}

/// Base-4 digit sets per coordinate, `digits` digits deep.
fn cantor(dim: usize, res: i32, allowed: [i64; 2]) -> Result<Measure, GeneratorError> {
    let depth = (res / 2).max(1);
    let shift = res - 2 * depth;
    if shift < 0 {
        return Err(GeneratorError::Params("cantor_like needs resolution at least 2".into()));
    }
    let mut coords = vec![0i64];
    for _ in 0..depth {
        coords = coords.iter().flat_map(|c| allowed.iter().map(move |d| c * 4 + d)).collect();
    }
    let n1 = coords.len();
    let count = if dim == 1 { n1 } else { n1 * n1 };
    let mass = 1.0 / count as f64;
    let v = (0..count)
        .map(|k| {
            let (a, b) = if dim == 1 { (coords[k], 0) } else { (coords[k % n1], coords[k / n1]) };
            Atom { num: [a << shift, b << shift], mass }
        })
        .collect();
    Ok(Measure::new(dim, res, v)?)
}

/// Reads `{"sigma": <measure>, "omega": <measure>}`.
pub fn read_pair_file(path: &Path) -> Result<(Measure, Measure), GeneratorError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GeneratorError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_pair(&text)
}

pub fn parse_pair(text: &str) -> Result<(Measure, Measure), GeneratorError> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| GeneratorError::Parse { line: e.line(), msg: e.to_string() })?;
    let part = |key: &str| -> Result<Measure, GeneratorError> {
        let m = v
            .get(key)
            .ok_or_else(|| GeneratorError::Parse { line: 1, msg: format!("missing key {key:?}") })?;
        Ok(Measure::from_json(&m.to_string())?)
    };
    Ok((part("sigma")?, part("omega")?))
}

pub fn write_pair(sigma: &Measure, omega: &Measure) -> String {
    let s: serde_json::Value = serde_json::from_str(&sigma.to_json()).expect("measure json");
    let w: serde_json::Value = serde_json::from_str(&omega.to_json()).expect("measure json");
    serde_json::to_string_pretty(&serde_json::json!({ "sigma": s, "omega": w })).expect("pair json")
}

/// Reproducible pair `(σ, ω)` at resolution `res` supported in `[0, 1)^n`.
pub fn generate_pair(spec: &GeneratorSpec, dim: usize, res: i32, seed: u64) -> Result<(Measure, Measure), GeneratorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        GeneratorSpec::RandomAtomic { atoms } => {
            let s = random_measure(dim, res, *atoms, &mut rng)?;
            let w = random_measure(dim, res, *atoms, &mut rng)?;
            Ok((s, w))
        }
        GeneratorSpec::CommonAtoms { atoms, common } => {
            if common > atoms {
                return Err(GeneratorError::Params("common exceeds atoms".into()));
            }
            let s = random_measure(dim, res, *atoms, &mut rng)?;
            let w0 = random_measure(dim, res, atoms - common, &mut rng)?;
            let mut v = w0.atoms.clone();
            for a in s.atoms.iter().take(*common) {
                v.push(Atom { num: a.num, mass: rng.gen_range(0.2..1.0) / *atoms as f64 });
            }
            Ok((s, Measure::new(dim, res, v)?))
        }
        GeneratorSpec::DoublingLike => Ok((doubling(dim, res, &mut rng)?, doubling(dim, res, &mut rng)?)),
        GeneratorSpec::CantorLike => Ok((cantor(dim, res, [0, 3])?, cantor(dim, res, [1, 2])?)),
        GeneratorSpec::File { path } => {
            let (s, w) = read_pair_file(path)?;
            if s.dim != dim || w.dim != dim {
                return Err(MeasureError::DimMismatch(s.dim, dim).into());
            }
            Ok((s.with_resolution(res)?, w.with_resolution(res)?))
        }
    }
}
