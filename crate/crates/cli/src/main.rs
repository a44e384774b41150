use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tbcorona::corona::{cz_stopping, energy_stopping, StopRecord};
use tbcorona::energy::{decay_study, energy_report};
use tbcorona::grid::bad_probability_mc;
use tbcorona::harness::config::GeneratorSpec;
use tbcorona::harness::report::to_text;
use tbcorona::harness::verify::{cz_function, grid_family, kernel_kind, verify_pair};
use tbcorona::harness::{generate_pair, ConstantsReport, RunConfig};
use tbcorona::measure::{Measure, Tree};
use tbcorona::operator::{make_kernel, ntv, operator_norm, testing_constants, TestingInput};
use tbcorona::poisson_a2::a2_constants;
use tbcorona::bfamily::BFamily;

#[derive(Parser)]
#[command(name = "tbcorona", version, about = "Two-weight local Tb constants on finite atomic measure pairs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Atom resolution M.
    #[arg(long)]
    res: Option<i32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pair file `{"sigma": .., "omega": ..}`.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Write the output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// A2, energy and testing constants with the NTV aggregate.
    Constants(Common),
    /// Stopping forests (CZ and energy) on the standard grid.
    Corona(Common),
    /// Energy constants.
    Energy(Common),
    /// Poisson decay and small-Poisson gain quotients.
    PoissonTest {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Monte-Carlo probability that a cube is bad.
    ProbBad {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Full verification run; exit 2 if any check fails.
    Verify(Common),
    /// Summarize a saved report; exit 2 if any check failed.
    Report { file: PathBuf },
}

enum Outcome {
    Pass,
    Fail,
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = c.dim {
        cfg.dim = v;
    }
    if let Some(v) = c.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = c.eps {
        cfg.eps = v;
    }
    if let Some(v) = c.res {
        cfg.resolution = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(p) = &c.pairs {
        cfg.generator = GeneratorSpec::File { path: p.clone() };
    }
    if c.out.is_some() {
        cfg.output = c.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pair(cfg: &RunConfig) -> Result<(Measure, Measure)> {
    Ok(generate_pair(&cfg.generator, cfg.dim, cfg.resolution, cfg.seed)?)
}

fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.output {
        Some(p) => std::fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.cmd {
        Cmd::Constants(c) => {
            let cfg = load_config(&c)?;
            let (s, w) = pair(&cfg)?;
            let fam = grid_family(&cfg)?;
            let a2 = a2_constants(&s, &w, &fam, cfg.alpha);
            let energy = energy_report(&s, &w, &fam, cfg.alpha, cfg.energy_depth, cfg.whitney_gamma)?;
            let kernel = make_kernel(cfg.dim, cfg.alpha, kernel_kind(cfg.dim), cfg.trunc_delta, cfg.trunc_r)?;
            let norm = operator_norm(&kernel, &s, &w)?.value;
            let trees: Vec<Tree> = fam.grids.iter().map(|g| Tree::build(g, &[&s, &w])).collect();
            let units: Vec<(BFamily, BFamily)> = trees.iter().map(|t| (BFamily::unit(t, 0), BFamily::unit(t, 1))).collect();
            let inputs: Vec<TestingInput> =
                trees.iter().zip(&units).map(|(t, u)| TestingInput { tree: t, b: &u.0, b_star: &u.1 }).collect();
            let mut testing = testing_constants(&kernel, &s, &w, &inputs, norm);
            testing.table.clear();
            let n = ntv(testing.testing, testing.dual, a2.aggregate, energy.aggregate, norm, false);
            let v = serde_json::json!({ "a2": a2, "energy": energy, "testing": testing, "ntv": n });
            emit(&cfg, &to_text(&v))?;
            Ok(Outcome::Pass)
        }
        Cmd::Corona(c) => {
            let cfg = load_config(&c)?;
            let (s, w) = pair(&cfg)?;
            let fam = grid_family(&cfg)?;
            let a2 = a2_constants(&s, &w, &fam, cfg.alpha);
            let energy = energy_report(&s, &w, &fam, cfg.alpha, cfg.energy_depth, cfg.whitney_gamma)?;
            let tree = Tree::build(&fam.grids[0], &[&s, &w]);
            let f = cz_function(s.len(), cfg.seed);
            let mut records: Vec<StopRecord> = Vec::new();
            for &root in &tree.roots {
                records.extend(cz_stopping(&tree, &s, 0, &f, root, cfg.c0).export());
                records.extend(
                    energy_stopping(&tree, &s, &w, root, cfg.c_en, energy.aggregate, a2.aggregate, cfg.alpha).corona.export(),
                );
            }
            emit(&cfg, &to_text(&records))?;
            Ok(Outcome::Pass)
        }
        Cmd::Energy(c) => {
            let cfg = load_config(&c)?;
            let (s, w) = pair(&cfg)?;
            let fam = grid_family(&cfg)?;
            let energy = energy_report(&s, &w, &fam, cfg.alpha, cfg.energy_depth, cfg.whitney_gamma)?;
            emit(&cfg, &to_text(&energy))?;
            Ok(Outcome::Pass)
        }
        Cmd::PoissonTest { common, samples } => {
            let cfg = load_config(&common)?;
            let res = cfg.resolution.max(8);
            let study = decay_study(cfg.dim, cfg.alpha, cfg.eps, 1.0, res, &[2, 3, 4, 5, 6], samples, cfg.seed);
            emit(&cfg, &to_text(&study))?;
            Ok(Outcome::Pass)
        }
        Cmd::ProbBad { common, trials } => {
            let cfg = load_config(&common)?;
            let est: Vec<_> = cfg
                .bad_levels
                .iter()
                .map(|&k| bad_probability_mc(cfg.dim, k, cfg.eps, trials, cfg.seed.wrapping_add(k as u64)))
                .collect();
            emit(&cfg, &to_text(&est))?;
            Ok(Outcome::Pass)
        }
        Cmd::Verify(c) => {
            let cfg = load_config(&c)?;
            let (s, w) = pair(&cfg)?;
            let r = verify_pair(&cfg, &s, &w)?;
            for f in r.failures() {
                tracing::error!(check = %f.name, witness = ?f.witness, "check failed");
            }
            emit(&cfg, &r.to_text())?;
            Ok(if r.all_pass() { Outcome::Pass } else { Outcome::Fail })
        }
        Cmd::Report { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let r = ConstantsReport::from_text(&text).with_context(|| format!("parsing report {}", file.display()))?;
            for c in &r.checks {
                println!("{} {}", if c.pass { "PASS" } else { "FAIL" }, c.name);
            }
            match r.ntv.ratio {
                Some(x) => println!("ratio N/NTV = {x:.6e}"),
                None => println!("ratio N/NTV indeterminate"),
            }
            Ok(if r.all_pass() { Outcome::Pass } else { Outcome::Fail })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(tracing::Level::WARN).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
