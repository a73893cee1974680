use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn run(args: &[&str], config: &str) -> (Output, tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_seedbank"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    (o, dir, out)
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn csv_rows(p: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(p).unwrap();
    let h = r.headers().unwrap().clone();
    r.records().map(|rec| h.iter().zip(rec.unwrap().iter()).map(|(a, b)| (a.into(), b.into())).collect()).collect()
}

const CLUSTERING: &str = r#"
seed = 5
[model]
n = 8
levels = 10
family = { kind = "exponential", k = 2.0, e = 1.0, c = 0.25 }
"#;

#[test]
fn classify_exponential_clustering() {
    let (o, _d, out) = run(&["classify", "--quiet"], CLUSTERING);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kv = read(&out.join("classify.txt"));
    assert!(kv.contains("clustering = clusters"));
    // log(N/(K e)) / log(N/e) for N = 8, K = 2, e = 1.
    let gamma: f64 = kv.lines().find_map(|l| l.strip_prefix("gamma = ")).unwrap().parse().unwrap();
    assert!((gamma - 4f64.ln() / 8f64.ln()).abs() < 1e-12);
    let rows = csv_rows(&out.join("a_table.csv"));
    assert_eq!(rows.len(), 11);
    let a1: f64 = rows[0]["A_n"].parse().unwrap();
    assert!((a1 - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn classify_polynomial_finite_rho() {
    let cfg = r#"
[model]
n = 4
levels = 20
family = { kind = "polynomial", alpha = 2.0, beta = 0.0, phi = 0.0, a = 1.0, b = 1.0, f = 1.0 }
"#;
    let (o, _d, out) = run(&["classify", "--quiet"], cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let kv = read(&out.join("classify.txt"));
    assert!(kv.contains("rho_infinite = false"));
    assert!(kv.contains("clustering = clusters"));
    assert!(kv.contains("criterion_used = rho_finite_sum_inverse_c"));
}

#[test]
fn malformed_config_writes_nothing() {
    let bad_k = r#"
[model]
n = 4
levels = 2
family = { kind = "explicit", c = [1.0, 1.0, 1.0], e = [1.0, 1.0, 1.0], k = [1.0, 0.0, 1.0] }
"#;
    let unknown = r#"
[model]
n = 4
levels = 2
colour_count = 3
family = { kind = "exponential", k = 2.0, e = 1.0, c = 0.25 }
"#;
    for cfg in [bad_k, unknown] {
        let (o, _d, out) = run(&["classify"], cfg);
        assert!(!o.status.success());
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.starts_with("error: model") || err.starts_with("error: config"), "{err}");
        assert!(!out.exists());
    }
}

#[test]
fn failed_run_leaves_no_manifest() {
    // Validation passes, the chain then refuses k above the stored levels.
    let (o, _d, out) = run(&["interaction-chain", "--k", "40"], CLUSTERING);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("run:"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn manifest_checksums_match_files() {
    let (o, d, out) = run(&["profile", "--quiet", "--k", "8"], CLUSTERING);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(m["subcommand"], "profile");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["overrides"]["k"], "8");
    let cfg_hash = hex::encode(Sha256::digest(std::fs::read(d.path().join("c.toml")).unwrap()));
    assert_eq!(m["config_sha256"], cfg_hash);
    let files = m["files"].as_object().unwrap();
    assert_eq!(files.len(), 2);
    for (name, h) in files {
        let got = hex::encode(Sha256::digest(std::fs::read(out.join(name)).unwrap()));
        assert_eq!(h.as_str().unwrap(), got);
    }
    let prof = csv_rows(&out.join("profile.csv"));
    assert_eq!(prof.len(), 9);
    assert_eq!(prof[8]["f"], "1");
}

#[test]
fn seed_flag_changes_output() {
    let cfg = r#"
[model]
n = 2
levels = 1
family = { kind = "exponential", k = 1.5, e = 1.0, c = 0.5 }
[run]
replicas = 20
"#;
    let (_, _d1, a) = run(&["simulate-forward", "--quiet", "--seed", "1"], cfg);
    let (_, _d2, b) = run(&["simulate-forward", "--quiet", "--seed", "2"], cfg);
    let (_, _d3, c) = run(&["simulate-forward", "--quiet", "--seed", "1"], cfg);
    let ta = read(&a.join("trajectory.csv"));
    assert_ne!(ta, read(&b.join("trajectory.csv")));
    assert_eq!(ta, read(&c.join("trajectory.csv")));
    assert!(ta.starts_with("t,level,component,value\n"));
}

const TWO_COLONY: &str = r#"
seed = 17
[model]
n = 2
levels = 0
family = { kind = "exponential", k = 1.0, e = 1.0, c = 1.0 }
g = { kind = "fisher_wright", d = 1.0 }
[run]
replicas = 20000
[run.duality]
x = [0.9, 0.1]
y = [0.5, 0.5]
times = [1.0]
dt = 0.001
cases = [[{ site = 0, role = "active", count = 2 }]]
"#;

#[test]
fn duality_check_two_colony_example() {
    let (o, _d, out) = run(&["duality-check", "--quiet"], TWO_COLONY);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("duality.csv"));
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    let gap: f64 = r["gap"].parse().unwrap();
    let se: f64 = r["combined_se"].parse().unwrap();
    assert!(gap < 3.0 * se, "{r:?}");
    assert_eq!(r["pass"], "true");
    assert!(read(&out.join("duality.txt")).contains("all_pass = true"));
}

#[test]
fn duality_check_refuses_non_fisher_wright() {
    let cfg = TWO_COLONY.replace(
        r#"g = { kind = "fisher_wright", d = 1.0 }"#,
        r#"g = { kind = "squared_fisher_wright", d = 1.0, interior = 9 }"#,
    );
    let (o, _d, out) = run(&["duality-check"], &cfg);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dual: unsupported"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn simulate_dual_event_log() {
    let cfg = r#"
seed = 3
[model]
n = 2
levels = 1
family = { kind = "exponential", k = 1.5, e = 1.0, c = 0.5 }
[run]
replicas = 10
[run.dual]
horizon = 3.0
lineages = [{ site = 0, role = "active", count = 4 }]
"#;
    let (o, _d, out) = run(&["simulate-dual", "--quiet"], cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ev = csv_rows(&out.join("events.csv"));
    assert!(!ev.is_empty());
    let mut last = 0.0;
    for e in &ev {
        let t: f64 = e["t"].parse().unwrap();
        assert!(t >= last && t <= 3.0);
        last = t;
        assert!(["migrate", "coalesce", "wake", "sleep"].contains(&e["event"].as_str()));
    }
    let coalescences = ev.iter().filter(|e| e["event"] == "coalesce").count() as u32;
    let totals = csv_rows(&out.join("totals.csv"));
    assert_eq!(totals.len(), 10);
    let n0: u32 = totals[0]["lineages"].parse().unwrap();
    assert_eq!(n0, 4 - coalescences);
}

#[test]
fn renorm_orbit_fisher_wright_matches_oracle() {
    let cfg = r#"
seed = 23
[model]
n = 8
levels = 6
family = { kind = "exponential", k = 2.0, e = 1.0, c = 0.25 }
g = { kind = "fisher_wright", d = 1.0 }
[run]
grid_interior = 9
"#;
    let (o, _d, out) = run(&["renorm-orbit", "--quiet", "--levels", "5"], cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let orbit = csv_rows(&out.join("orbit.csv"));
    assert_eq!(orbit.len(), 5);
    for r in &orbit {
        let z: f64 = r["oracle_max_z"].parse().unwrap();
        assert!(z < 3.0, "{r:?}");
    }
    let lvl = read(&out.join("level_03.csv"));
    assert!(lvl.starts_with("# level = 3\n# A_n = "));
}

#[test]
fn interaction_chain_outputs() {
    let cfg = r#"
seed = 29
[model]
n = 8
levels = 4
family = { kind = "exponential", k = 2.0, e = 1.0, c = 0.25 }
[init]
theta_x = 0.3
theta_y = [0.6]
[run]
replicas = 300
"#;
    let (o, _d, out) = run(&["interaction-chain", "--quiet", "--k", "2"], cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("chain.csv"));
    assert_eq!(rows.iter().map(|r| r["level"].as_str()).collect::<Vec<_>>(), ["2", "1", "0"]);
    for r in &rows {
        let m: f64 = r["mean"].parse().unwrap();
        let se: f64 = r["mean_se"].parse().unwrap();
        let want: f64 = r["predicted_mean"].parse().unwrap();
        assert!((m - want).abs() < 4.0 * se, "{r:?}");
    }
    assert_eq!(csv_rows(&out.join("samples.csv")).len(), 300 * 4);
}
