use super::config::{ConfigError, RunConfig};
use super::generators::{generate_pair, GeneratorError};
use super::report::{Check, ConstantsReport, CoronaSummary};
use crate::bfamily::{BFamily, Mart};
use crate::corona::{carleson_norm_within, cz_stopping, energy_stopping, shifted_corona, stopping_data, Corona};
use crate::energy::{energy_report, functional_energy_estimate, functional_measure, halfspace_testing, HalfSpaceConstants, EnergyError};
use crate::grid::{bad_probability_mc, whitney, Construction, GridError};
use crate::measure::{Measure, Tree};
use crate::operator::{make_kernel, ntv, operator_norm, testing_constants, KernelKind, OperatorError, TestingInput};
use crate::poisson_a2::{a2_constants, GridFamily, HalfSpaceMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

pub fn grid_family(cfg: &RunConfig) -> Result<GridFamily, GridError> {
    GridFamily::sampled(cfg.dim, cfg.resolution, cfg.top_level, cfg.grid_samples, Construction::Shift, cfg.seed, true)
}

pub fn kernel_kind(dim: usize) -> KernelKind {
    if dim == 1 {
        KernelKind::RieszComponent(0)
    } else {
        KernelKind::RieszVector
    }
}

fn le(a: f64, b: f64) -> bool {
    a <= b * (1.0 + 1e-9) + 1e-12
}

/// Test function for the CZ corona: `exp(3u)` with `u` uniform.
pub fn cz_function(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    (0..n).map(|_| (3.0 * rng.gen::<f64>()).exp()).collect()
}

/// `Σ_{(F, M ∈ W(F), M ⊆ I)} ‖𝖰_{F,M} x‖♠²` summed directly over the corona.
pub fn box_recount(c: &Corona, d_tree: &Tree, g_tree: &Tree, omega: &Measure, wfam: &BFamily, eps: f64, i: &crate::grid::Cube) -> f64 {
    let m = Mart::new(g_tree, omega, wfam);
    let mut s = 0.0;
    for k in 0..c.len() {
        let shift = shifted_corona(c, k, &d_tree.grid, g_tree, eps);
        for mc in whitney(&c.cubes[k], d_tree.grid.m).cubes {
            if !i.contains_cube(&mc) {
                continue;
            }
            for &j in &shift {
                if mc.contains_cube(&g_tree.cube(j)) && m.atoms(j).len() > 1 {
                    s += m.spade_sq(j);
                }
            }
        }
    }
    s
}

/// All constants, coronas and exact-invariant checks for one pair.
pub fn verify_pair(cfg: &RunConfig, sigma: &Measure, omega: &Measure) -> Result<ConstantsReport, VerifyError> {
    cfg.validate()?;
    let fam = grid_family(cfg)?;
    let a2 = a2_constants(sigma, omega, &fam, cfg.alpha);
    let energy = energy_report(sigma, omega, &fam, cfg.alpha, cfg.energy_depth, cfg.whitney_gamma)?;
    let kernel = make_kernel(cfg.dim, cfg.alpha, kernel_kind(cfg.dim), cfg.trunc_delta, cfg.trunc_r)?;
    let norm = operator_norm(&kernel, sigma, omega)?.value;
    let trees: Vec<Tree> = fam.grids.iter().map(|g| Tree::build(g, &[sigma, omega])).collect();
    let units: Vec<(BFamily, BFamily)> = trees.iter().map(|t| (BFamily::unit(t, 0), BFamily::unit(t, 1))).collect();
    let inputs: Vec<TestingInput> =
        trees.iter().zip(&units).map(|(t, u)| TestingInput { tree: t, b: &u.0, b_star: &u.1 }).collect();
    let testing = testing_constants(&kernel, sigma, omega, &inputs, norm);
    let ntv_r = ntv(testing.testing, testing.dual, a2.aggregate, energy.aggregate, norm, false);

    let mut checks = vec![
        Check::new("necessity_forward", le(testing.testing, testing.c_b * norm), || {
            format!("T = {:e}, C_b N = {:e}, cube {:?}", testing.testing, testing.c_b * norm, testing.testing_witness)
        }),
        Check::new("necessity_dual", le(testing.dual, testing.c_b_star * norm), || {
            format!("T* = {:e}, C_b* N = {:e}, cube {:?}", testing.dual, testing.c_b_star * norm, testing.dual_witness)
        }),
        Check::new(
            "whitney_ordering",
            le(energy.whitney.value, energy.whitney_partial.value) && le(energy.whitney_partial.value, energy.whitney_plug.value),
            || format!("hole {:e}, partial {:e}, plug {:e}", energy.whitney.value, energy.whitney_partial.value, energy.whitney_plug.value),
        ),
    ];
    if cfg.energy_depth.is_none() {
        checks.push(Check::new("whitney_plug_le_strong", le(energy.whitney_plug.value, energy.strong.value), || {
            format!("plug {:e} at {:?}, strong {:e}", energy.whitney_plug.value, energy.whitney_plug.witness, energy.strong.value)
        }));
    }
    checks.push(Check::new(
        "ntv_finite",
        ntv_r.value.is_finite() && ntv_r.ratio.map_or(true, |r| r.is_finite()),
        || format!("ntv {:e}, ratio {:?}", ntv_r.value, ntv_r.ratio),
    ));

    let d_tree = &trees[0];
    let g_tree = trees.get(1).unwrap_or(&trees[0]);
    let wfam_g = BFamily::unit(g_tree, 1);
    let f = cz_function(sigma.len(), cfg.seed);
    let mut coronas = Vec::new();
    let mut halfspace = None;
    let mut functional = functional_energy_estimate(&HalfSpaceMeasure::new(cfg.dim), sigma, &[], cfg.alpha);
    let e2_sq = energy.aggregate * energy.aggregate;
    for &root in &d_tree.roots {
        if d_tree.mass(root, 0) <= 0.0 {
            continue;
        }
        let cz = cz_stopping(d_tree, sigma, 0, &f, root, cfg.c0);
        let cz_c = carleson_norm_within(&cz, d_tree, 0);
        let cz_bound = cfg.c0 / (cfg.c0 - 1.0);
        checks.push(Check::new("cz_carleson", le(cz_c, cz_bound), || format!("root {:?}: {cz_c:e} > {cz_bound:e}", d_tree.cube(root))));
        let sd = stopping_data(&cz, d_tree, sigma, 0, &f);
        checks.push(Check::new("stopping_data", sd.pass, || format!("root {:?}: witness {:?}, A0 {:e}", d_tree.cube(root), sd.witness, sd.a0)));
        coronas.push(summary(&cz, cz_c, cz_bound));

        let en = energy_stopping(d_tree, sigma, omega, root, cfg.c_en, energy.aggregate, a2.aggregate, cfg.alpha);
        let en_c = carleson_norm_within(&en.corona, d_tree, 0);
        let en_bound = 1.0 / (1.0 - 1.0 / cfg.c_en);
        checks.push(Check::new("energy_carleson", le(en_c, en_bound), || format!("root {:?}: {en_c:e}", d_tree.cube(root))));
        let x_max = en.stopping_energy_sq.iter().fold(0.0f64, |m, &x| m.max(x));
        checks.push(Check::new("stopping_energy_bound", le(x_max, en.threshold), || format!("X^2 = {x_max:e} > {:e}", en.threshold)));
        coronas.push(summary(&en.corona, en_c, en_bound));

        if halfspace.is_none() {
            let mu = functional_measure(&cz, d_tree, g_tree, omega, &wfam_g, cfg.eps);
            let mubar = mu.over_t_sq();
            let top = d_tree.cube(root);
            let hs = halfspace_testing(
                &top,
                &mubar,
                sigma,
                cfg.alpha,
                HalfSpaceConstants { energy_sq: e2_sq, cal_a2: a2.cal_a2.value, cal_a2_star: a2.cal_a2_star.value, punct: a2.punct.value },
            );
            let recount = box_recount(&cz, d_tree, g_tree, omega, &wfam_g, cfg.eps, &top);
            checks.push(Check::new("halfspace_recount", (hs.box_mass - recount).abs() <= 1e-10 * recount.max(1e-300), || {
                format!("box mass {:e} vs recount {recount:e}", hs.box_mass)
            }));
            halfspace = Some(hs);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(11));
            let mut dict: Vec<Vec<f64>> = (0..d_tree.len().min(32))
                .map(|q| (0..sigma.len()).map(|a| if d_tree.cube(q).contains_fine(sigma.fine_point(a)) { 1.0 } else { 0.0 }).collect())
                .collect();
            for _ in 0..8 {
                dict.push((0..sigma.len()).map(|_| rng.gen::<f64>()).collect());
            }
            functional = functional_energy_estimate(&mu, sigma, &dict, cfg.alpha);
        }
    }
    let goodness_mc = cfg
        .bad_levels
        .iter()
        .map(|&k| bad_probability_mc(cfg.dim, k, cfg.eps, cfg.bad_trials, cfg.seed.wrapping_add(k as u64)))
        .collect();
    Ok(ConstantsReport {
        config: cfg.clone(),
        a2,
        energy,
        testing,
        ntv: ntv_r,
        functional_energy: functional,
        halfspace,
        goodness_mc,
        coronas,
        checks,
    })
}

fn summary(c: &Corona, carleson: f64, bound: f64) -> CoronaSummary {
    CoronaSummary {
        kind: c.kind,
        stops: c.len(),
        max_depth: (0..c.len()).map(|k| c.depth(k)).max().unwrap_or(0),
        carleson,
        carleson_bound: bound,
    }
}

/// Generates the configured pair and verifies it.
pub fn verify_theorem(cfg: &RunConfig) -> Result<ConstantsReport, VerifyError> {
    cfg.validate()?;
    let (sigma, omega) = generate_pair(&cfg.generator, cfg.dim, cfg.resolution, cfg.seed)?;
    verify_pair(cfg, &sigma, &omega)
}
