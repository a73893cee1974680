//! One function per subcommand. Each builds its complete output set in
//! memory and returns it with a short human-readable summary.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use seedbank::diffusion::{chebyshev_grid, DiffusionFn, GridFunction};
use seedbank::dual::{duality_estimate, simulate_dual, simulate_dual_at, DualityBudget, DualityRow};
use seedbank::forward::{
    default_dt, ensemble_estimate, simulate_ensemble, RecordPlan, StepConfig, SystemState, TrajectoryRecord,
};
use seedbank::params::{
    classify_regime, clustering_verdict, compute_A, derive, hazard_diagnostic, ClusteringCoefficients, DerivedParams,
    HazardConfig, ModelParams,
};
use seedbank::renorm::{
    fw_recursion_oracle, iterate_f_scaled, sample_interaction_chain, volatility_profile, ChainBudget, EqBudget,
};
use seedbank::rng::stream;
use seedbank::stats::Running;

use crate::config::{lineages, ExperimentConfig};
use crate::output::{num, opt, Outputs};

/// Validated inputs shared by every subcommand.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub p: ModelParams,
    pub derived: DerivedParams,
    pub seed: u64,
    pub replicas: usize,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, seed: u64, replicas: Option<usize>) -> Result<Self> {
        let p = cfg.model()?;
        let derived = derive(&p).context("params")?;
        let replicas = replicas.unwrap_or(cfg.run.replicas);
        if replicas == 0 {
            bail!("run: replicas must be positive");
        }
        Ok(Self { cfg, p, derived, seed, replicas })
    }

    fn coeffs(&self) -> Result<ClusteringCoefficients> {
        compute_A(&self.p, &self.derived, self.p.levels).context("params")
    }

    fn budget(&self) -> EqBudget {
        let r = &self.cfg.run;
        EqBudget { burn_in: r.burn_in, horizon: r.horizon, batches: r.batches, kappa: r.kappa }
    }
}

pub struct Report {
    pub outputs: Outputs,
    pub summary: String,
}

fn check_times(times: &[f64], what: &str) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t > 0.0)) || times.windows(2).any(|w| w[1] <= w[0])
    {
        bail!("run: {what} times must be positive, finite and strictly increasing");
    }
    Ok(())
}

pub fn classify(ctx: &Ctx) -> Result<Report> {
    let p = &ctx.p;
    let report = classify_regime(p);
    let verdict = match clustering_verdict(p, &report) {
        Ok(v) => Some(v),
        Err(seedbank::Error::Unsupported(_)) => None,
        Err(e) => return Err(e).context("params"),
    };
    let coeffs = ctx.coeffs()?;
    let hazard = if ctx.cfg.run.hazard && report.rho_infinite {
        Some(hazard_diagnostic(p, &report, &HazardConfig::default()).context("params")?)
    } else {
        None
    };

    let mut out = Outputs::default();
    out.csv(
        "a_table.csv",
        &[],
        &["n", "A_n", "predicted_asymptote"],
        (1..coeffs.a.len()).map(|n| vec![n.to_string(), num(coeffs.a[n]), opt(coeffs.asymptotic.predict(n))]),
    )?;

    let mut kv = String::new();
    writeln!(kv, "family = {}", report.family)?;
    writeln!(kv, "rho_infinite = {}", report.rho_infinite)?;
    writeln!(kv, "gamma = {}", opt(report.gamma))?;
    writeln!(kv, "phi_hat = {}", report.phi_hat.map(|h| h.describe()).unwrap_or_default())?;
    let delta = match report.delta {
        Some(seedbank::params::Degree::Value(v)) => num(v),
        Some(seedbank::params::Degree::ZeroMinus) => "0-".into(),
        Some(seedbank::params::Degree::ZeroPlus) => "0+".into(),
        None => String::new(),
    };
    writeln!(kv, "delta = {delta}")?;
    let verdict_s = match verdict {
        Some(seedbank::params::Verdict::Clusters) => "clusters",
        Some(seedbank::params::Verdict::Coexists) => "coexists",
        None => "unavailable",
    };
    writeln!(kv, "clustering = {verdict_s}")?;
    writeln!(kv, "criterion_used = {}", report.criterion_used)?;
    writeln!(kv, "asymptotic_class = {}", coeffs.asymptotic.name)?;
    writeln!(kv, "asymptotic_constant = {}", num(coeffs.asymptotic.constant))?;
    if let Some(h) = &hazard {
        let v = serde_json::to_value(h.verdict)?;
        writeln!(kv, "hazard = {}", v.as_str().unwrap_or_default())?;
    }
    out.text("classify.txt", kv.clone());
    out.json(
        "summary.json",
        &json!({
            "regime": report,
            "clustering": verdict,
            "derived": ctx.derived,
            "coefficients": { "asymptotic": coeffs.asymptotic, "diag": coeffs.diag, "b": coeffs.b },
            "hazard": hazard,
        }),
    )?;
    Ok(Report { outputs: out, summary: kv })
}

pub fn simulate_forward(ctx: &Ctx, t: Option<f64>, levels: Option<Vec<usize>>) -> Result<Report> {
    let p = &ctx.p;
    let run = &ctx.cfg.run;
    let times = match t {
        Some(t) => vec![t],
        None => run.times.clone(),
    };
    check_times(&times, "record")?;
    let levels = levels.unwrap_or_else(|| run.record_levels.clone());
    if let Some(l) = levels.iter().find(|&&l| l > p.levels + 1) {
        bail!("run: record level {l} above the {} migration levels", p.levels + 1);
    }
    let dt = run.dt.unwrap_or_else(|| default_dt(p));
    let cfg = StepConfig { dt, scheme: run.scheme.into() };
    let plan = RecordPlan { times: times.clone(), levels: levels.clone(), snapshots: run.snapshots };
    let recs = simulate_ensemble(
        p,
        |rng| SystemState::from_init(p, &p.init, rng),
        &plan,
        cfg,
        ctx.seed,
        "simulate-forward",
        ctx.replicas,
    )
    .context("forward")?;

    let colours = p.levels + 1;
    let mut mean_rows = Vec::new();
    let mut se_rows = Vec::new();
    for &t in &times {
        for &l in &levels {
            let mut push = |name: String, f: &dyn Fn(&seedbank::forward::RecordRow) -> f64| {
                let e = ensemble_estimate(&recs, t, l, f).expect("recorded row");
                mean_rows.push(vec![num(t), l.to_string(), name.clone(), num(e.mean)]);
                se_rows.push(vec![num(t), l.to_string(), name, num(e.se)]);
            };
            push("theta_x".into(), &|r| r.theta_x);
            for m in 0..colours {
                push(format!("theta_y{m}"), &|r| r.theta_y[m]);
            }
            push("theta_bar".into(), &|r| r.theta_bar);
        }
    }
    let mut out = Outputs::default();
    let header = ["t", "level", "component", "value"];
    out.csv("trajectory.csv", &[], &header, mean_rows)?;
    out.csv("trajectory_se.csv", &[], &header, se_rows)?;

    let gm_points = recs[0].grand_mean.len();
    out.csv(
        "grand_mean.csv",
        &[],
        &["t", "mean", "se"],
        (0..gm_points).map(|i| {
            let r: Running = recs.iter().map(|rec| rec.grand_mean[i].1).collect();
            let e = r.estimate();
            vec![num(recs[0].grand_mean[i].0), num(e.mean), num(e.se)]
        }),
    )?;
    if run.snapshots {
        let mut header = vec!["t".to_string(), "address".to_string(), "x".to_string()];
        header.extend((0..colours).map(|m| format!("y{m}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = recs[0].snapshots.iter().flat_map(|s| {
            (0..s.colonies()).map(move |i| {
                let c = s.colony(i);
                let mut row = vec![num(s.time), s.address(i).to_digit_string(), num(c.x)];
                row.extend(c.y.iter().map(|v| num(*v)));
                row
            })
        });
        out.csv("snapshots.csv", &["replica = 0".into()], &header, rows.collect::<Vec<_>>())?;
    }
    let flagged = recs.iter().filter(|r| r.flagged).count();
    let clipped: u64 = recs.iter().map(|r| r.clips.clipped).sum();
    let updates: u64 = recs.iter().map(|r| r.clips.updates).sum();
    let steps = recs.iter().map(|r: &TrajectoryRecord| r.steps).sum::<u64>();
    out.json(
        "summary.json",
        &json!({
            "replicas": ctx.replicas,
            "dt": dt,
            "scheme": cfg.scheme,
            "times": times,
            "levels": levels,
            "steps": steps,
            "clipped": clipped,
            "updates": updates,
            "flagged_replicas": flagged,
        }),
    )?;
    let summary = format!(
        "simulate-forward: {} replicas, dt = {dt}, clip fraction {:.2e}, {flagged} flagged replicas",
        ctx.replicas,
        if updates > 0 { clipped as f64 / updates as f64 } else { 0.0 }
    );
    Ok(Report { outputs: out, summary })
}

pub fn simulate_dual_cmd(ctx: &Ctx, t: Option<f64>) -> Result<Report> {
    let p = &ctx.p;
    let dcfg = &ctx.cfg.run.dual;
    let horizon = t.unwrap_or(dcfg.horizon);
    check_times(&[horizon], "dual horizon")?;
    let l0 = lineages(&dcfg.lineages, p)?;
    let mut rng = stream(ctx.seed, "simulate-dual", 0, 0);
    let first = simulate_dual(&l0, p, horizon, &mut rng);
    let mut totals = vec![(first.terminal.total(), first.events.len())];
    for r in 1..ctx.replicas as u64 {
        let mut rng = stream(ctx.seed, "simulate-dual", r, 0);
        let (states, _) = simulate_dual_at(&l0, p, &[horizon], false, &mut rng);
        totals.push((states[0].total(), 0));
    }

    let mut out = Outputs::default();
    out.csv(
        "events.csv",
        &["replica = 0".into()],
        &["t", "event", "site", "colour", "target"],
        first.events.iter().map(|e| {
            vec![
                num(e.t),
                e.event.to_string(),
                e.site.to_string(),
                e.colour.map(|c| c.to_string()).unwrap_or_default(),
                e.target.map(|c| c.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    out.csv(
        "totals.csv",
        &[],
        &["replica", "lineages"],
        totals.iter().enumerate().map(|(r, (n, _))| vec![r.to_string(), n.to_string()]),
    )?;
    let mean: Running = totals.iter().map(|(n, _)| *n as f64).collect();
    let est = mean.estimate();
    let terminal: Vec<_> = first
        .terminal
        .iter()
        .map(|(site, role, count)| json!({ "site": site, "role": role, "count": count }))
        .collect();
    out.json(
        "summary.json",
        &json!({
            "replicas": ctx.replicas,
            "horizon": horizon,
            "initial_lineages": l0.total(),
            "mean_terminal_lineages": est,
            "replica0_events": first.events.len(),
            "replica0_terminal": terminal,
        }),
    )?;
    let summary = format!(
        "simulate-dual: {} replicas to t = {horizon}, mean lineages {:.4} ± {:.4} (from {})",
        ctx.replicas,
        est.mean,
        est.se,
        l0.total()
    );
    Ok(Report { outputs: out, summary })
}

const DUALITY_SIGMAS: f64 = 3.0;

pub fn duality_check(ctx: &Ctx, t: Option<f64>) -> Result<Report> {
    let p = &ctx.p;
    let dc = &ctx.cfg.run.duality;
    let times = match t {
        Some(t) => vec![t],
        None => dc.times.clone(),
    };
    check_times(&times, "duality")?;
    let z = SystemState::explicit(p, dc.x.clone(), dc.y.clone()).context("forward")?;
    let ls = dc.cases.iter().map(|c| lineages(c, p)).collect::<Result<Vec<_>>>()?;
    if ls.is_empty() {
        bail!("run: duality needs at least one lineage case");
    }
    let rows = duality_estimate(p, &z, &ls, &times, DualityBudget { replicas: ctx.replicas, dt: dc.dt }, ctx.seed)
        .context("dual")?;

    let mut out = Outputs::default();
    out.csv(
        "duality.csv",
        &[],
        &["t", "case", "lhs", "lhs_se", "rhs", "rhs_se", "exact", "gap", "combined_se", "pass"],
        rows.iter().map(|r| {
            vec![
                num(r.t),
                r.case.to_string(),
                num(r.lhs.mean),
                num(r.lhs.se),
                num(r.rhs.mean),
                num(r.rhs.se),
                opt(r.exact),
                num(r.gap()),
                num(r.combined_se()),
                r.passes(DUALITY_SIGMAS).to_string(),
            ]
        }),
    )?;
    let mut kv = String::new();
    for r in &rows {
        let key = format!("t={}.case={}", num(r.t), r.case);
        writeln!(kv, "{key}.lhs = {} ± {}", num(r.lhs.mean), num(r.lhs.se))?;
        writeln!(kv, "{key}.rhs = {} ± {}", num(r.rhs.mean), num(r.rhs.se))?;
        writeln!(kv, "{key}.exact = {}", opt(r.exact))?;
        writeln!(kv, "{key}.gap = {}", num(r.gap()))?;
        writeln!(kv, "{key}.pass = {}", r.passes(DUALITY_SIGMAS))?;
    }
    let all = rows.iter().all(|r| r.passes(DUALITY_SIGMAS));
    writeln!(kv, "all_pass = {all}")?;
    out.text("duality.txt", kv);
    #[derive(Serialize)]
    struct Summary<'a> {
        replicas: usize,
        dt: f64,
        sigmas: f64,
        all_pass: bool,
        rows: &'a [DualityRow],
    }
    out.json("summary.json", &Summary { replicas: ctx.replicas, dt: dc.dt, sigmas: DUALITY_SIGMAS, all_pass: all, rows: &rows })?;
    let worst = rows.iter().map(|r| r.gap() / r.combined_se().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    let summary = format!(
        "duality-check: {} rows, largest gap {worst:.2} SE, {}",
        rows.len(),
        if all { "all pass at 3 SE" } else { "FAIL" }
    );
    Ok(Report { outputs: out, summary })
}

pub fn renorm_orbit(ctx: &Ctx, levels: Option<usize>) -> Result<Report> {
    let p = &ctx.p;
    let levels = levels.unwrap_or(ctx.cfg.run.orbit_levels);
    let coeffs = ctx.coeffs()?;
    let nodes = chebyshev_grid(ctx.cfg.run.grid_interior);
    let orbit = iterate_f_scaled(&p.g, p, &ctx.derived, &coeffs, levels, &nodes, &ctx.budget(), ctx.seed)
        .context("renorm")?;

    let mut out = Outputs::default();
    out.csv(
        "orbit.csv",
        &[],
        &["level", "A_n", "sup_distance", "oracle_max_z", "flagged_nodes"],
        orbit.levels.iter().map(|l| {
            vec![
                l.level.to_string(),
                num(l.a_n),
                num(l.sup_distance),
                opt(orbit.max_oracle_z(l.level)),
                l.flagged.to_string(),
            ]
        }),
    )?;
    for l in &orbit.levels {
        let comments = vec![format!("level = {}", l.level), format!("A_n = {}", num(l.a_n))];
        out.csv(
            &format!("level_{:02}.csv", l.level),
            &comments,
            &["theta", "value", "se", "oracle", "fisher_wright"],
            orbit.nodes.iter().enumerate().map(|(i, &th)| {
                vec![
                    num(th),
                    num(l.scaled[i]),
                    num(l.se[i]),
                    opt(l.oracle.as_ref().map(|o| o[i])),
                    num(th * (1.0 - th)),
                ]
            }),
        )?;
    }
    out.json("summary.json", &json!({ "budget": ctx.budget(), "orbit": orbit }))?;
    let mut summary = String::from("renorm-orbit: level, A_n, sup distance to x(1-x)\n");
    for l in &orbit.levels {
        writeln!(summary, "  {:>3}  {:>12.6}  {:.4}", l.level, l.a_n, l.sup_distance)?;
    }
    Ok(Report { outputs: out, summary })
}

/// `F^{(l)} g` for `l = 0..=k+1`: exact on the Fisher-Wright family, from
/// the Monte Carlo orbit otherwise.
fn g_orbit(ctx: &Ctx, coeffs: &ClusteringCoefficients, k: usize) -> Result<Vec<DiffusionFn>> {
    let g = &ctx.p.g;
    if let Some(d) = g.fisher_wright_rate() {
        let ds = fw_recursion_oracle(d, k + 1, coeffs).context("renorm")?;
        return ds.into_iter().map(|d| DiffusionFn::fisher_wright(d).context("renorm")).collect();
    }
    let nodes = chebyshev_grid(ctx.cfg.run.grid_interior);
    let orbit = iterate_f_scaled(g, &ctx.p, &ctx.derived, coeffs, k + 1, &nodes, &ctx.budget(), ctx.seed)
        .context("renorm")?;
    let mut out = vec![g.clone()];
    for l in &orbit.levels {
        let vals: Vec<f64> = l.scaled.iter().map(|v| v / l.a_n).collect();
        out.push(DiffusionFn::Grid(GridFunction::new(nodes.clone(), vals).context("renorm")?));
    }
    Ok(out)
}

pub fn interaction_chain(ctx: &Ctx, k: Option<usize>) -> Result<Report> {
    let p = &ctx.p;
    let run = &ctx.cfg.run;
    let k = k.unwrap_or(run.chain_k);
    if k > p.levels {
        bail!("run: interaction chain needs k <= model levels ({}), got {k}", p.levels);
    }
    let coeffs = ctx.coeffs()?;
    let orbit = g_orbit(ctx, &coeffs, k)?;
    let budget = ChainBudget { replicas: ctx.replicas, burn_in: run.burn_in, kappa: run.kappa };
    let samples = sample_interaction_chain(k, p, &ctx.derived, &orbit, &budget, ctx.seed).context("renorm")?;

    let theta = ctx.derived.theta_seq[k];
    let fg = orbit[k + 1].eval(theta);
    let mut out = Outputs::default();
    out.csv(
        "chain.csv",
        &[format!("k = {k}"), format!("theta_k = {}", num(theta))],
        &["level", "mean", "mean_se", "predicted_mean", "variance", "variance_se", "predicted_variance"],
        (0..=k).rev().map(|m| {
            let me = samples.mean_at(m);
            let ve = samples.variance_at(m);
            vec![
                m.to_string(),
                num(me.mean),
                num(me.se),
                num(theta),
                num(ve.mean),
                num(ve.se),
                num(coeffs.a_block(m, k) * fg),
            ]
        }),
    )?;
    let mut header = vec!["replica".to_string(), "level".to_string(), "x".to_string()];
    header.extend((0..k + 2).map(|m| format!("y{m}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(
        "samples.csv",
        &[],
        &header,
        samples.paths.iter().enumerate().flat_map(|(r, path)| {
            path.iter().map(move |s| {
                let mut row = vec![r.to_string(), s.level.to_string(), num(s.x)];
                row.extend(s.y.iter().map(|v| num(*v)));
                row
            })
        }),
    )?;
    let x0 = samples.values_at(0);
    let n = x0.len() as f64;
    let high = x0.iter().filter(|&&x| x > 0.95).count() as f64 / n;
    let low = x0.iter().filter(|&&x| x < 0.05).count() as f64 / n;
    out.json(
        "summary.json",
        &json!({
            "k": k,
            "replicas": ctx.replicas,
            "theta_k": theta,
            "f_k_plus_1_at_theta": fg,
            "fraction_above_0.95": high,
            "fraction_below_0.05": low,
            "clamps": samples.clamps,
        }),
    )?;
    let summary = format!(
        "interaction-chain: k = {k}, {} replicas, level-0 mean {:.4} (theta_k = {theta:.4}), P(x > 0.95) = {high:.3}, P(x < 0.05) = {low:.3}",
        ctx.replicas,
        samples.mean_at(0).mean
    );
    Ok(Report { outputs: out, summary })
}

pub fn profile(ctx: &Ctx, k: Option<usize>, epsilon: Option<f64>) -> Result<Report> {
    let k = k.unwrap_or(ctx.cfg.run.profile_k);
    let eps = epsilon.unwrap_or(ctx.cfg.run.epsilon);
    let coeffs = ctx.coeffs()?;
    let prof = volatility_profile(k, &coeffs, eps).context("renorm")?;
    let mut out = Outputs::default();
    out.csv(
        "profile.csv",
        &[],
        &["l", "f"],
        prof.values.iter().enumerate().map(|(l, v)| vec![l.to_string(), num(*v)]),
    )?;
    out.json("summary.json", &prof)?;
    let class = serde_json::to_value(prof.class)?;
    let summary = format!("profile: k = {k}, onset l = {}, class {}", prof.onset, class.as_str().unwrap_or_default());
    Ok(Report { outputs: out, summary })
}
