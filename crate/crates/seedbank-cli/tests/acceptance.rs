//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.
//!
//! Every tolerance and seed is fixed below; none is tuned per run.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use seedbank::diffusion::{chebyshev_grid, DiffusionFn, GridFunction};
use seedbank::dual::{duality_estimate, renewal_sample, tail_fit, DualConfig, DualityBudget, Role};
use seedbank::forward::{
    ensemble_estimate, simulate_ensemble, ClipStats, McKeanVlasov, RecordPlan, Scheme, StepConfig, SystemState,
};
use seedbank::params::{
    asymptotic_class, classify_regime, clustering_verdict, compute_A, derive, hazard_diagnostic, Family,
    HazardConfig, HazardVerdict, InitLaw, InitSpec, ModelParams, Verdict,
};
use seedbank::renorm::{
    evaluate_f, fw_recursion_oracle, iterate_f_scaled, mv_equilibrium, sample_interaction_chain, ChainBudget,
    EqBudget, LevelParams,
};
use seedbank::rng::stream;
use seedbank::stats::Running;

/// Monte Carlo agreement is judged at this many standard errors throughout.
const SIGMAS: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn fw(d: f64) -> DiffusionFn {
    DiffusionFn::fisher_wright(d).unwrap()
}

fn squared_fw() -> DiffusionFn {
    DiffusionFn::Grid(GridFunction::sample(chebyshev_grid(41), |x| x * x * (1.0 - x) * (1.0 - x)).unwrap())
}

fn exponential(n: usize, levels: usize, k: f64, e: f64, c: f64, g: DiffusionFn, init: InitSpec) -> ModelParams {
    ModelParams::from_family(n, levels, Family::Exponential { k, e, c }, g, init).unwrap()
}

// 1. Five moment relations of the effective-process equilibrium.
fn moment_relations() -> Outcome {
    const SEED: u64 = 0x5eed_0001;
    let sets = [
        (1.0, 1.0, 1.0, 1.0),
        (1.0, 0.25, 4.0, 4.0),
        (1.0, 4.0, 0.25, 0.25),
        (0.25, 0.25, 0.25, 4.0),
        (0.25, 4.0, 4.0, 0.25),
        (0.25, 1.0, 4.0, 0.25),
    ];
    let required = ["mean_x", "mean_y", "xy_equals_yy", "xy_mixed", "yy_ratio"];
    let g = fw(1.0);
    let budget = EqBudget::default();
    let mut worst = (0.0f64, String::new());
    let mut slowest = 0.0f64;
    let mut checks = 0;
    let mut failures = 0;
    for (i, &(s, c, k, e)) in sets.iter().enumerate() {
        let lp = LevelParams::new(s, c, k, e).unwrap();
        let t0 = Instant::now();
        for (j, &theta) in [0.1, 0.5, 0.9].iter().enumerate() {
            let mut rng = stream(SEED, "moment-relations", i as u64, j as u64);
            let est = mv_equilibrium(&lp, &g, theta, &budget, &mut rng).unwrap();
            for chk in est.identity_checks() {
                if !required.contains(&chk.name) {
                    continue;
                }
                // The ratio relation only applies when the variance is resolved.
                if chk.name == "yy_ratio" && est.variance_ratio().is_none() {
                    continue;
                }
                checks += 1;
                let z = chk.z();
                if z > SIGMAS {
                    failures += 1;
                }
                if z > worst.0 {
                    worst = (z, format!("set {i} theta {theta} {}", chk.name));
                }
            }
        }
        slowest = slowest.max(t0.elapsed().as_secs_f64());
    }
    Outcome {
        pass: failures == 0 && slowest <= 60.0,
        detail: format!(
            "{checks} checks, {failures} beyond {SIGMAS} SE, worst {:.2} SE ({}), slowest set {slowest:.1}s",
            worst.0, worst.1
        ),
    }
}

// 2. Monte Carlo F on the Fisher-Wright family against the exact recursion.
fn fw_closure() -> Outcome {
    const SEED: u64 = 0x5eed_0002;
    let lp = LevelParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
    let nodes: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let ev = evaluate_f(&fw(1.0), &lp, &nodes, None, &EqBudget::default(), SEED, 0).unwrap();
    let d1 = 1.0 / (1.0 + lp.a_diag());
    let mut worst = 0.0f64;
    for (i, &th) in nodes.iter().enumerate().take(10).skip(1) {
        let want = d1 * th * (1.0 - th);
        worst = worst.max((ev.grid.values()[i] - want).abs() / ev.se[i]);
    }
    let half = ev.grid.values()[5];
    let half_z = (half - 0.1875).abs() / ev.se[5];
    Outcome {
        pass: worst <= SIGMAS && half_z <= SIGMAS && (lp.a_diag() - 1.0 / 3.0).abs() < 1e-15,
        detail: format!("9 nodes, worst {worst:.2} SE; (F g)(1/2) = {half:.5} vs 0.1875 ({half_z:.2} SE)"),
    }
}

// 3. Universality of the scaled orbit and its failure under coexistence.
fn universality() -> Outcome {
    const SEED: u64 = 0x5eed_0003;
    const LEVELS: usize = 8;
    let budget = EqBudget { horizon: 400.0, ..EqBudget::default() };
    let nodes = chebyshev_grid(41);
    let run = |c: f64| {
        let p = exponential(8, LEVELS, 2.0, 1.0, c, squared_fw(), InitSpec::constant(0.5));
        let d = derive(&p).unwrap();
        let cc = compute_A(&p, &d, LEVELS).unwrap();
        let orbit = iterate_f_scaled(&p.g, &p, &d, &cc, LEVELS, &nodes, &budget, SEED).unwrap();
        orbit.levels.iter().map(|l| l.sup_distance).collect::<Vec<f64>>()
    };
    let clus = run(0.25);
    let coex = run(1.0);
    let decreasing = clus[..5].windows(2).all(|w| w[1] < w[0]);
    let last = *clus.last().unwrap();
    let floor = coex.iter().copied().fold(f64::INFINITY, f64::min);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Outcome {
        pass: decreasing && last < 0.05 && floor > 0.1,
        detail: format!("clustering [{}]; coexistence [{}]", fmt(&clus), fmt(&coex)),
    }
}

// 4. A_n against the asymptotic table.
fn asymptotics() -> Outcome {
    let t0 = Instant::now();
    // (label, family, logarithmic)
    let poly = |alpha: f64, phi: f64| Family::Polynomial { alpha, beta: 0.0, phi, a: 1.0, b: 1.0, f: 1.0 };
    let expo = |k: f64, e: f64, c: f64| Family::Exponential { k, e, c };
    let cases = [
        ("C1", poly(0.5, 0.5), false),
        ("C2", poly(0.5, -0.5), true),
        ("C3", poly(1.0, 0.0), false),
        ("C4", poly(1.0, -1.0), true),
        ("C^1", expo(2.0, 1.0, 0.25), false),
        ("C^2", expo(2.0, 0.125, 0.25), false),
        ("C^3", expo(2.0, 0.1, 0.25), false),
        ("C-1", expo(2.0, 1.0, 0.5), false),
        ("C-2", expo(2.0, 0.25, 0.5), false),
        ("C-3", expo(2.0, 0.1, 0.5), false),
        ("C~1", expo(1.0, 1.0, 0.5), false),
        ("C~2", expo(1.0, 1.0, 1.0), true),
    ];
    let mut bad = Vec::new();
    let mut parts = Vec::new();
    for (label, fam, log) in cases {
        let (n, lo, hi) = if log { (200, 0.8, 1.2) } else { (30, 0.9, 1.1) };
        let c: Vec<f64> = (0..n).map(|m| fam.c_at(m).unwrap()).collect();
        let e: Vec<f64> = (0..n).map(|m| fam.e_at(m).unwrap()).collect();
        let k: Vec<f64> = (0..n).map(|m| fam.k_at(m).unwrap()).collect();
        let (a, _, _) = seedbank::params::compute_a(&c, &e, &k, n - 1).unwrap();
        let class = asymptotic_class(&fam, seedbank::params::Rho::Infinite);
        let ratio = a[n] / class.predict(n).unwrap();
        if class.name != label || !(lo..=hi).contains(&ratio) {
            bad.push(label);
        }
        parts.push(format!("{label} {ratio:.3}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    Outcome {
        pass: bad.is_empty() && secs < 1.0,
        detail: format!("ratios: {}; outside band: {bad:?}; {secs:.3}s", parts.join(", ")),
    }
}

// 5. Clustering truth table and the hazard diagnostic.
fn truth_table() -> Outcome {
    use Verdict::{Clusters as Cl, Coexists as Co};
    let poly = |alpha: f64, phi: f64| Family::Polynomial { alpha, beta: 0.0, phi, a: 1.0, b: 1.0, f: 1.0 };
    let expo = |k: f64, e: f64, c: f64| Family::Exponential { k, e, c };
    // (N, family, expected verdict); the first four have finite ρ.
    let cases = [
        (4, poly(2.0, 0.0), Cl),
        (4, poly(2.0, -2.0), Co),
        (4, poly(2.0, -1.0), Cl),
        (8, expo(0.5, 1.0, 1.0), Cl),
        (4, poly(0.5, 0.0), Cl),
        (4, poly(0.5, -1.0), Co),
        (4, poly(0.5, -0.5), Cl),
        (4, poly(1.0, 0.0), Cl),
        (4, poly(1.0, -2.0), Co),
        (4, poly(0.25, 0.5), Cl),
        (64, expo(2.0, 1.0, 0.25), Cl),
        (8, expo(2.0, 1.0, 1.0), Co),
        (8, expo(2.0, 0.25, 0.5), Cl),
        (4, expo(1.0, 1.0, 1.0), Cl),
        (8, expo(1.0, 1.0, 2.0), Co),
        (64, expo(2.0, 1.0, 0.1), Cl),
    ];
    let mut verdict_bad = Vec::new();
    let mut hazard_bad = Vec::new();
    let mut hazard_cases = 0;
    for (i, (n, fam, want)) in cases.iter().enumerate() {
        let p = ModelParams::from_family(*n, 2, *fam, fw(1.0), InitSpec::constant(0.5)).unwrap();
        let report = classify_regime(&p);
        let v = clustering_verdict(&p, &report).unwrap();
        if v != *want {
            verdict_bad.push(i);
        }
        if report.rho_infinite {
            hazard_cases += 1;
            let h = hazard_diagnostic(&p, &report, &HazardConfig::default()).unwrap();
            let agrees = matches!(
                (h.verdict, v),
                (HazardVerdict::Divergent, Verdict::Clusters) | (HazardVerdict::Convergent, Verdict::Coexists)
            );
            if !agrees {
                hazard_bad.push(i);
            }
        }
    }
    Outcome {
        pass: verdict_bad.is_empty() && hazard_bad.is_empty() && hazard_cases == 12,
        detail: format!(
            "{} verdicts, wrong {verdict_bad:?}; hazard on {hazard_cases} cases, disagreeing {hazard_bad:?}",
            cases.len()
        ),
    }
}

// 6. Moment duality on two colonies with one colour.
fn duality() -> Outcome {
    const SEED: u64 = 0x5eed_0006;
    let t0 = Instant::now();
    let p = exponential(2, 0, 1.0, 1.0, 1.0, fw(1.0), InitSpec::constant(0.5));
    let z = SystemState::explicit(&p, vec![0.9, 0.1], vec![0.5, 0.5]).unwrap();
    let ls = [DualConfig::new().with(0, Role::Active, 1), DualConfig::new().with(0, Role::Active, 2)];
    let rows = duality_estimate(&p, &z, &ls, &[0.5, 1.0, 2.0], DualityBudget { replicas: 100_000, dt: 1e-3 }, SEED)
        .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.gap() / r.combined_se()).fold(0.0, f64::max);
    let exact_worst = rows
        .iter()
        .map(|r| {
            let e = r.exact.unwrap();
            ((r.lhs.mean - e).abs() / r.lhs.se).max((r.rhs.mean - e).abs() / r.rhs.se)
        })
        .fold(0.0, f64::max);
    Outcome {
        pass: rows.iter().all(|r| r.exact.is_some() && r.passes(SIGMAS)) && secs < 120.0,
        detail: format!(
            "{} rows, worst gap {worst:.2} SE, worst side vs exact {exact_worst:.2} SE, {secs:.1}s",
            rows.len()
        ),
    }
}

// 7. McKean-Vlasov ensemble means against the closed form.
fn mean_ode() -> Outcome {
    const SEED: u64 = 0x5eed_0007;
    const REPLICAS: u64 = 20_000;
    let times = [0.5, 1.0, 2.0];
    let (x0, y0) = (0.8, 0.2);
    let mut worst = 0.0f64;
    let mut clip_frac = 0.0f64;
    for (gi, g) in [fw(1.0), squared_fw()].into_iter().enumerate() {
        let mv = McKeanVlasov { c: 1.0, k: 1.0, e: 1.0, g };
        let mut acc = vec![(Running::new(), Running::new()); times.len()];
        let mut clips = ClipStats::default();
        for r in 0..REPLICAS {
            let mut rng = stream(SEED, "mean-ode", r, gi as u64);
            let path = mv.path(x0, y0, x0, y0, &times, 0.01, &mut rng, &mut clips);
            for (a, (x, y)) in acc.iter_mut().zip(path) {
                a.0.push(x);
                a.1.push(y);
            }
        }
        clip_frac = clip_frac.max(clips.fraction());
        for (i, &t) in times.iter().enumerate() {
            let (mx, my) = mv.mean(t, x0, y0);
            worst = worst.max(acc[i].0.estimate().z_value(mx)).max(acc[i].1.estimate().z_value(my));
        }
    }
    Outcome {
        pass: worst <= SIGMAS,
        detail: format!("2 g's x 3 times x 2 components, worst {worst:.2} SE, clip fraction {clip_frac:.1e}"),
    }
}

// 8. Finite-systems comparison bound in the mean-field case.
fn finite_systems() -> Outcome {
    const SEED: u64 = 0x5eed_0008;
    const N: usize = 50;
    let init = InitSpec { theta_x: 0.9, theta_y: vec![0.1], law: InitLaw::Constant };
    let p = ModelParams::explicit(N, vec![1.0], vec![1.0], vec![1.0], fw(1.0), init).unwrap();
    let times = vec![0.25, 0.5, 1.0, 2.0, 4.0];
    let plan = RecordPlan::at(times.clone(), vec![1]);
    let cfg = StepConfig { dt: 0.005, scheme: Scheme::ExactDormant };
    let recs = simulate_ensemble(&p, |rng| SystemState::from_init(&p, &p.init, rng), &plan, cfg, SEED, "finite-systems", 2000)
        .unwrap();
    let delta0_sq: f64 = (0.9f64 - 0.1).powi(2);
    let noise = (p.g.sup() / (2.0 * N as f64)).sqrt();
    let mut below = true;
    let mut parts = Vec::new();
    let mut worst_bar = 0.0f64;
    let bar0 = recs[0].grand_mean[0].1;
    for &t in &times {
        let gap = ensemble_estimate(&recs, t, 1, |r| (r.theta_x - r.theta_y[0]).abs()).unwrap();
        let bound = delta0_sq.sqrt() * (-2.0 * t).exp() + noise;
        below &= gap.mean < bound;
        parts.push(format!("t={t}: {:.4} < {:.4}", gap.mean, bound));
        let bar = ensemble_estimate(&recs, t, 1, |r| r.theta_bar).unwrap();
        worst_bar = worst_bar.max(bar.z_value(bar0));
    }
    Outcome {
        pass: below && worst_bar <= SIGMAS,
        detail: format!("{}; Θ̄ drift worst {worst_bar:.2} SE", parts.join(", ")),
    }
}

// 9. Interaction-chain moments for k = 4.
fn chain_moments() -> Outcome {
    const SEED: u64 = 0x5eed_0009;
    const K: usize = 4;
    let init = InitSpec { theta_x: 0.3, theta_y: vec![0.6], law: InitLaw::Constant };
    let p = exponential(8, 6, 2.0, 1.0, 0.25, fw(1.0), init);
    let d = derive(&p).unwrap();
    let cc = compute_A(&p, &d, p.levels).unwrap();
    let ds = fw_recursion_oracle(1.0, K + 1, &cc).unwrap();
    let orbit: Vec<DiffusionFn> = ds.iter().map(|&v| fw(v)).collect();
    let budget = ChainBudget { replicas: 10_000, burn_in: 20.0, kappa: 0.05 };
    let s = sample_interaction_chain(K, &p, &d, &orbit, &budget, SEED).unwrap();
    let theta = d.theta_seq[K];
    let fg = ds[K + 1] * theta * (1.0 - theta);
    let mut worst = 0.0f64;
    for m in 0..=K {
        worst = worst.max(s.mean_at(m).z_value(theta));
        worst = worst.max(s.variance_at(m).z_value(cc.a_block(m, K) * fg));
    }
    Outcome {
        pass: worst <= SIGMAS,
        detail: format!("theta_4 = {theta}, 5 levels x (mean, variance), worst {worst:.2} SE"),
    }
}

// 10. Tail exponent of the wake-up time.
fn wakeup_tail() -> Outcome {
    const SEED: u64 = 0x5eed_000a;
    const TARGET: f64 = 1.0 / 3.0;
    let p = exponential(8, 12, 2.0, 1.0, 1.0, fw(1.0), InitSpec::constant(0.5));
    let s = renewal_sample(&p, 1_000_000, &mut stream(SEED, "wakeup-tail", 0, 0));
    let fit = tail_fit(&s.tau).unwrap();
    let formula = classify_regime(&p).gamma.unwrap();
    Outcome {
        pass: (fit.gamma.mean - TARGET).abs() <= 0.05,
        detail: format!(
            "fitted {:.4} ± {:.4} vs target {TARGET:.4}; log(N/Ke)/log(N/e) = {formula:.4}",
            fit.gamma.mean, fit.gamma.se
        ),
    }
}

// 11. Byte-identical CLI reruns.
fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("repro.toml");
    std::fs::write(&cfg, REPRO_CONFIG).unwrap();
    let runs: [(&str, &[&str]); 7] = [
        ("classify", &[]),
        ("simulate-forward", &[]),
        ("simulate-dual", &[]),
        ("duality-check", &[]),
        ("renorm-orbit", &["--levels", "2"]),
        ("interaction-chain", &["--k", "2"]),
        ("profile", &["--k", "2"]),
    ];
    let mut bad = Vec::new();
    for (cmd, extra) in runs {
        let outs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
            .map(|i| {
                let out = dir.path().join(format!("{cmd}-{i}"));
                let st = Command::new(env!("CARGO_BIN_EXE_seedbank"))
                    .arg(cmd)
                    .arg("--config")
                    .arg(&cfg)
                    .arg("--out")
                    .arg(&out)
                    .arg("--quiet")
                    .args(extra)
                    .status()
                    .unwrap();
                assert!(st.success(), "{cmd} failed");
                read_dir(&out)
            })
            .collect();
        if outs[0] != outs[1] || !outs[0].contains_key("manifest.json") {
            bad.push(cmd);
        }
    }
    Outcome { pass: bad.is_empty(), detail: format!("7 subcommands run twice, differing: {bad:?}") }
}

const REPRO_CONFIG: &str = r#"
seed = 99

[model]
n = 2
levels = 2
family = { kind = "exponential", k = 1.5, e = 1.0, c = 0.25 }

[init]
theta_x = 0.3
theta_y = [0.6]

[run]
replicas = 50
times = [0.5, 1.0]
record_levels = [0, 2]
snapshots = true
horizon = 50.0
grid_interior = 5
hazard = false

[run.duality]
x = [0.9, 0.1, 0.4, 0.6, 0.2, 0.3, 0.7, 0.5]
y = [0.5, 0.5, 0.5, 0.2, 0.2, 0.2, 0.5, 0.5, 0.5, 0.2, 0.2, 0.2,
     0.5, 0.5, 0.5, 0.2, 0.2, 0.2, 0.5, 0.5, 0.5, 0.2, 0.2, 0.2]
times = [0.5]
cases = [[{ site = 0, role = "active", count = 2 }]]
"#;

fn read_dir(p: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(p)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("moment relations of the equilibrium", moment_relations),
        ("Fisher-Wright closure of F", fw_closure),
        ("universality orbit", universality),
        ("A_n asymptotics table", asymptotics),
        ("clustering truth table and hazard", truth_table),
        ("moment duality", duality),
        ("McKean-Vlasov mean ODE", mean_ode),
        ("finite-systems bound", finite_systems),
        ("interaction-chain moments", chain_moments),
        ("wake-up tail exponent", wakeup_tail),
        ("CLI reproducibility", reproducibility),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} {name}: {} [{:.1}s]", o.detail, t0.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
