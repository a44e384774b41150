//! Configuration, generators, report serialization and the verification driver.

use tbcorona::harness::config::{ConfigError, GeneratorSpec, RunConfig};
use tbcorona::harness::generators::{generate_pair, lattice_depth, parse_pair, write_pair, GeneratorError};
use tbcorona::harness::report::{Check, ConstantsReport};
use tbcorona::harness::verify::{verify_pair, verify_theorem};

fn small(dim: usize, res: i32, generator: GeneratorSpec, seed: u64) -> RunConfig {
    RunConfig { dim, resolution: res, generator, seed, bad_trials: 200, ..RunConfig::default() }
}

#[test]
fn generators_are_deterministic_with_expected_sizes() {
    let spec = GeneratorSpec::RandomAtomic { atoms: 10 };
    let a = generate_pair(&spec, 1, 6, 3).unwrap();
    let b = generate_pair(&spec, 1, 6, 3).unwrap();
    let c = generate_pair(&spec, 1, 6, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!((a.0.len(), a.1.len()), (10, 10));
    for m in [&a.0, &a.1] {
        assert!(m.total() > 0.2 - 1e-12 && m.total() < 1.0);
    }

    let (s, w) = generate_pair(&GeneratorSpec::CommonAtoms { atoms: 8, common: 3 }, 2, 4, 5).unwrap();
    let shared = s.atoms.iter().filter(|x| w.atoms.iter().any(|y| y.num == x.num)).count();
    assert!(shared >= 3);

    let (s, w) = generate_pair(&GeneratorSpec::DoublingLike, 1, 6, 1).unwrap();
    assert_eq!(lattice_depth(1, 6), 6);
    assert_eq!(lattice_depth(2, 7), 4);
    assert_eq!(s.len(), 64);
    assert_eq!(w.len(), 64);

    let (s, w) = generate_pair(&GeneratorSpec::CantorLike, 1, 6, 1).unwrap();
    assert!(s.len() > 0 && w.len() > 0);
    assert!(s.atoms.iter().all(|x| w.atoms.iter().all(|y| y.num != x.num)));

    assert!(matches!(
        generate_pair(&GeneratorSpec::RandomAtomic { atoms: 100 }, 1, 4, 1),
        Err(GeneratorError::Params(_))
    ));
}

#[test]
fn pair_text_roundtrip_and_errors() {
    let (s, w) = generate_pair(&GeneratorSpec::RandomAtomic { atoms: 7 }, 2, 5, 9).unwrap();
    let text = write_pair(&s, &w);
    let (s2, w2) = parse_pair(&text).unwrap();
    assert_eq!(s, s2);
    assert_eq!(w, w2);
    assert!(parse_pair("{\"sigma\": {\"dim\": 1, \"resolution\": 2, \"atoms\": []}}").is_err());
    assert!(matches!(parse_pair("{\n  \"sigma\": ,\n}"), Err(GeneratorError::Parse { line: 2, .. })));
}

#[test]
fn config_roundtrip_and_validation() {
    let cfg = small(2, 5, GeneratorSpec::CommonAtoms { atoms: 6, common: 2 }, 11);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    let g: RunConfig = serde_json::from_str("{\"generator\": {\"kind\": \"cantor_like\"}}").unwrap();
    assert_eq!(g.generator, GeneratorSpec::CantorLike);

    let bad = |s: &str| RunConfig::from_json(s).unwrap_err();
    assert!(matches!(bad("{\"alpha\": 1.0}"), ConfigError::Range { field: "alpha", .. }));
    assert!(matches!(bad("{\"dim\": 3}"), ConfigError::Range { field: "dim", .. }));
    assert!(matches!(bad("{\"resolution\": 13}"), ConfigError::Range { field: "resolution", .. }));
    assert!(matches!(bad("{\"top_level\": -5}"), ConfigError::Range { field: "top_level", .. }));
    assert!(matches!(bad("{\n\"eps\": oops\n}"), ConfigError::Parse { line: 2, .. }));
    assert!(matches!(
        bad("{\"r_param\": 0.2, \"tau_param\": 0.1, \"rho_param\": 1.0}"),
        ConfigError::Parameters { .. }
    ));
}

#[test]
fn verify_passes_on_small_pairs_and_report_roundtrips() {
    for (dim, res, spec, seed) in [
        (1, 6, GeneratorSpec::RandomAtomic { atoms: 12 }, 7),
        (1, 5, GeneratorSpec::CommonAtoms { atoms: 10, common: 4 }, 2),
        (2, 3, GeneratorSpec::RandomAtomic { atoms: 10 }, 3),
        (1, 6, GeneratorSpec::DoublingLike, 1),
    ] {
        let cfg = small(dim, res, spec, seed);
        let r = verify_theorem(&cfg).unwrap();
        let names: Vec<&str> = r.failures().iter().map(|c| c.name.as_str()).collect();
        assert!(r.all_pass(), "dim {dim} seed {seed}: failing {names:?} {:?}", r.failures());
        assert!(!r.checks.is_empty());
        let back = ConstantsReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert!(r.ntv.value.is_finite());
        assert!(r.testing.necessity_holds(1e-9));
    }
}

#[test]
fn verify_deterministic_and_failures_listed() {
    let cfg = small(1, 5, GeneratorSpec::RandomAtomic { atoms: 8 }, 4);
    let (s, w) = generate_pair(&cfg.generator, 1, 5, 4).unwrap();
    let a = verify_pair(&cfg, &s, &w).unwrap();
    let b = verify_pair(&cfg, &s, &w).unwrap();
    assert_eq!(a.to_text(), b.to_text());

    let mut r = a.clone();
    r.checks.push(Check::new("forced", false, || "witness".into()));
    assert!(!r.all_pass());
    assert_eq!(r.failures().len(), 1);
    assert_eq!(r.failures()[0].witness.as_deref(), Some("witness"));
    assert!(Check::new("ok", true, || unreachable!()).witness.is_none());
}
