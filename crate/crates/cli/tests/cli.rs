use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbcorona")).args(args).output().expect("spawn tbcorona")
}

#[test]
fn verify_writes_report_and_report_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = bin(&["verify", "--dim", "1", "--alpha", "0", "--res", "6", "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("PASS ")));
    assert!(!text.contains("FAIL"));

    // flip one check to failing: report must exit 2
    let saved = std::fs::read_to_string(&out).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&saved).unwrap();
    v["checks"][0]["pass"] = serde_json::Value::Bool(false);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let o = bin(&["report", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL "));
}

#[test]
fn errors_exit_one() {
    let o = bin(&["constants", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reading config"));
    let o = bin(&["verify", "--alpha", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bin(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{\n  \"dim\": 1,\n  \"eps\": ???\n}").unwrap();
    let o = bin(&["energy", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn subcommands_run_on_pair_file() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("p.json");
    let (s, w) = tbcorona::harness::generate_pair(
        &tbcorona::harness::config::GeneratorSpec::RandomAtomic { atoms: 6 },
        1,
        5,
        3,
    )
    .unwrap();
    std::fs::write(&pairs, tbcorona::harness::generators::write_pair(&s, &w)).unwrap();
    let p = pairs.to_str().unwrap();
    for cmd in ["constants", "corona", "energy"] {
        let o = bin(&[cmd, "--pairs", p, "--res", "5"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(v.is_object() || v.is_array(), "{cmd}");
    }
    let o = bin(&["prob-bad", "--trials", "200", "--res", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin(&["poisson-test", "--samples", "5", "--res", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
