//! Level-`l` equilibria of the effective pair
//!
//! ```text
//! dx = E [ c (θ - x) dt + K e (y - x) dt + sqrt(g(x)) dW ],   dy = e (x - y) dt
//! ```
//!
//! the map `F: g ↦ (θ ↦ E^{Γ_θ}[g(x)])`, its iterates along the level
//! parameters, the interaction chain built from these equilibria, and the
//! volatility profile.
//!
//! Equilibria are sampled with a scheme that keeps the discrete chain's first
//! and second moments equal to those of the diffusion: the drift is applied
//! exactly, and the one-step covariance is `g(x) · E² ∫_0^h e^{As} e_x e_xᵀ e^{Aᵀs} ds`
//! with `g` frozen at the start of the step. The `x` increment is drawn from a
//! Beta law with that mean and variance, so `x` never leaves `[0, 1]`; `y` is
//! the linear regression on `x` plus a small Gaussian residual.

use nalgebra::{Matrix2, Matrix4, Vector4};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::Serialize;

pub use crate::diffusion::{chebyshev_grid, DiffusionFn, GridFunction};
use crate::error::{param, Result};
use crate::params::{ClusteringCoefficients, DerivedParams, ModelParams};
use crate::rng::stream;
use crate::stats::{variance_estimate, Estimate, Running};

/// Rates `(E_l, c_l, K_l, e_l)` of the level-`l` effective process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelParams {
    pub slow: f64,
    pub c: f64,
    pub k: f64,
    pub e: f64,
}

impl LevelParams {
    pub fn new(slow: f64, c: f64, k: f64, e: f64) -> Result<Self> {
        if !(slow > 0.0 && slow <= 1.0) {
            return param(format!("E must lie in (0, 1], got {slow}"));
        }
        for (name, v) in [("c", c), ("K", k), ("e", e)] {
            if !(v > 0.0 && v.is_finite()) {
                return param(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        Ok(Self { slow, c, k, e })
    }

    pub fn at(p: &ModelParams, derived: &DerivedParams, l: usize) -> Result<Self> {
        if l > p.levels {
            return param(format!("level {l} above stored levels {}", p.levels));
        }
        Self::new(derived.e_slow[l], p.c[l], p.k[l], p.e[l])
    }

    fn drift(&self) -> Matrix2<f64> {
        let (s, c, k, e) = (self.slow, self.c, self.k, self.e);
        Matrix2::new(-s * (c + k * e), s * k * e, e, -e)
    }

    /// Slowest relaxation rate of the mean dynamics (`det / trace` form).
    pub fn relaxation_rate(&self) -> f64 {
        let a = self.drift();
        let tr = -a.trace();
        let det = a.determinant();
        2.0 * det / (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
    }

    /// `A_l^l`.
    pub fn a_diag(&self) -> f64 {
        let act = self.slow * self.c + self.e;
        0.5 * self.slow / self.c * act / (act + self.slow * self.k * self.e)
    }

    /// `B_l`.
    pub fn b(&self) -> f64 {
        let act = self.slow * self.c + self.e;
        0.5 * self.slow * self.slow / (act + self.slow * self.k * self.e)
    }
}

/// Sampling effort for one equilibrium, in units of the relaxation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EqBudget {
    pub burn_in: f64,
    pub horizon: f64,
    pub batches: usize,
    /// Step size is `kappa / (E c + E² Lip g)`.
    pub kappa: f64,
}

impl Default for EqBudget {
    fn default() -> Self {
        Self { burn_in: 20.0, horizon: 4000.0, batches: 100, kappa: 0.05 }
    }
}

impl EqBudget {
    fn validate(&self) -> Result<()> {
        if !(self.burn_in >= 0.0 && self.horizon > 0.0 && self.kappa > 0.0 && self.kappa <= 1.0) {
            return param("budget needs burn_in >= 0, horizon > 0 and kappa in (0, 1]");
        }
        if self.batches < 4 {
            return param("budget needs at least 4 batches");
        }
        Ok(())
    }
}

/// One-step kernel of the moment-exact scheme.
struct EffectiveChain<'a> {
    theta: f64,
    g: &'a DiffusionFn,
    phi: Matrix2<f64>,
    /// Covariance of one step per unit `g(x)`.
    cov: Matrix2<f64>,
    h: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClampStats {
    /// Drift mean outside `[0, 1]`.
    pub mean: u64,
    /// Step variance reduced to fit a Beta law.
    pub variance: u64,
    pub steps: u64,
}

impl ClampStats {
    pub fn total(&self) -> u64 {
        self.mean + self.variance
    }

    pub fn add(&mut self, o: &ClampStats) {
        self.mean += o.mean;
        self.variance += o.variance;
        self.steps += o.steps;
    }
}

/// Draw in `[0, 1]` with the given mean and variance (a Beta law), clamping
/// the mean or shrinking the variance when no such law exists.
fn beta_draw(mean: f64, var: f64, rng: &mut impl Rng, stats: &mut ClampStats) -> f64 {
    let mut m = mean;
    if !(0.0..=1.0).contains(&m) {
        stats.mean += 1;
        m = m.clamp(0.0, 1.0);
    }
    let room = m * (1.0 - m);
    if room <= 0.0 || var <= 0.0 {
        return m;
    }
    let mut v = var;
    if v >= 0.999 * room {
        stats.variance += 1;
        v = 0.999 * room;
    }
    let nu = room / v - 1.0;
    match Beta::new(m * nu, (1.0 - m) * nu).map(|b| b.sample(rng)) {
        Ok(x) if x.is_finite() => x,
        // Shape parameters underflow when the mean sits at the edge.
        _ => {
            stats.variance += 1;
            m
        }
    }
}

impl<'a> EffectiveChain<'a> {
    fn new(lp: &LevelParams, g: &'a DiffusionFn, theta: f64, kappa: f64) -> Self {
        let h = kappa / (lp.slow * lp.c + lp.slow * lp.slow * g.lipschitz());
        let a = lp.drift();
        // S_h = S_∞ - Φ S_∞ Φᵀ with A S_∞ + S_∞ Aᵀ + q qᵀ = 0; stable for any h.
        let i2 = Matrix2::<f64>::identity();
        let kron = a.kronecker(&i2) + i2.kronecker(&a);
        let k4 = Matrix4::from_iterator(kron.iter().copied());
        let q = Vector4::new(-lp.slow * lp.slow, 0.0, 0.0, 0.0);
        let sv = k4.lu().solve(&q).expect("stable drift has an invertible Lyapunov operator");
        let s_inf = Matrix2::new(sv[0], sv[2], sv[1], sv[3]);
        let phi = (a * h).exp();
        let cov = s_inf - phi * s_inf * phi.transpose();
        let cov = (cov + cov.transpose()) * 0.5;
        Self { theta, g, phi, cov, h }
    }

    fn step(&self, x: f64, y: f64, rng: &mut impl Rng, stats: &mut ClampStats) -> (f64, f64) {
        stats.steps += 1;
        let (ux, uy) = (x - self.theta, y - self.theta);
        let mx = self.theta + self.phi[(0, 0)] * ux + self.phi[(0, 1)] * uy;
        let my = self.theta + self.phi[(1, 0)] * ux + self.phi[(1, 1)] * uy;
        let gx = self.g.eval(x);
        if gx <= 0.0 {
            return (mx.clamp(0.0, 1.0), my.clamp(0.0, 1.0));
        }
        let (sxx, sxy, syy) = (gx * self.cov[(0, 0)], gx * self.cov[(0, 1)], gx * self.cov[(1, 1)]);
        let x1 = beta_draw(mx, sxx, rng, stats);
        let beta = sxy / sxx;
        let y1 = beta_draw(my + beta * (x1 - mx), (syy - beta * sxy).max(0.0), rng, stats);
        (x1, y1)
    }
}

/// Observables accumulated per batch.
const OBS: usize = 7;
const X: usize = 0;
const Y: usize = 1;
const XX: usize = 2;
const YY: usize = 3;
const XY: usize = 4;
const G: usize = 5;
const EXTRA: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumEstimate {
    pub theta: f64,
    pub ex: Estimate,
    pub ey: Estimate,
    pub exx: Estimate,
    pub eyy: Estimate,
    pub exy: Estimate,
    /// `E[g(x)] = (F g)(θ)`.
    pub fg: Estimate,
    /// `E[f(x)]` for the optional extra observable.
    pub extra: Option<Estimate>,
    pub level: LevelParams,
    pub dt: f64,
    pub steps: u64,
    pub clamps: ClampStats,
    /// Largest split-half discrepancy over the observables, in SE.
    pub split_half_z: f64,
    pub flagged: bool,
    #[serde(skip)]
    batches: Vec<[f64; OBS]>,
}

/// One moment identity evaluated on the batch means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    /// Left side minus right side; zero in equilibrium.
    pub residual: Estimate,
}

impl IdentityCheck {
    pub fn z(&self) -> f64 {
        self.residual.z_value(0.0)
    }
}

fn batch_estimate(vals: impl Iterator<Item = f64>) -> Estimate {
    let r: Running = vals.collect();
    let e = r.estimate();
    Estimate { mean: e.mean, se: if e.se.is_finite() { e.se } else { 0.0 } }
}

impl EquilibriumEstimate {
    /// Estimate of `Σ w_i E[obs_i] + w0` from the batch means.
    fn combo(&self, w: [f64; OBS], w0: f64) -> Estimate {
        batch_estimate(self.batches.iter().map(|b| w0 + b.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>()))
    }

    /// The five moment relations of the level equilibrium.
    pub fn identity_checks(&self) -> Vec<IdentityCheck> {
        let th = self.theta;
        let lp = self.level;
        let (a, b) = (lp.a_diag(), lp.b());
        let ec = lp.slow * lp.c;
        let mut out = Vec::new();
        let mut w = [0.0; OBS];
        w[X] = 1.0;
        out.push(IdentityCheck { name: "mean_x", residual: self.combo(w, -th) });
        let mut w = [0.0; OBS];
        w[Y] = 1.0;
        out.push(IdentityCheck { name: "mean_y", residual: self.combo(w, -th) });
        let mut w = [0.0; OBS];
        w[XY] = 1.0;
        w[YY] = -1.0;
        out.push(IdentityCheck { name: "xy_equals_yy", residual: self.combo(w, 0.0) });
        let mut w = [0.0; OBS];
        w[XY] = 1.0;
        w[XX] = -lp.e / (ec + lp.e);
        out.push(IdentityCheck { name: "xy_mixed", residual: self.combo(w, -ec * th * th / (ec + lp.e)) });
        let mut w = [0.0; OBS];
        w[XX] = 1.0;
        w[G] = -a;
        out.push(IdentityCheck { name: "xx_variance", residual: self.combo(w, -th * th) });
        // A (E[y²] - θ²) = (A - B)(E[x²] - θ²): the ratio relation in linear form.
        let mut w = [0.0; OBS];
        w[YY] = a;
        w[XX] = -(a - b);
        out.push(IdentityCheck { name: "yy_ratio", residual: self.combo(w, -a * th * th + (a - b) * th * th) });
        out
    }

    /// `(E[y²] - θ²) / (E[x²] - θ²)` when the denominator exceeds 5 SE.
    pub fn variance_ratio(&self) -> Option<f64> {
        let den = self.exx.mean - self.theta * self.theta;
        (den > 5.0 * self.exx.se).then(|| (self.eyy.mean - self.theta * self.theta) / den)
    }
}

/// Long-run time averages of one trajectory started at `(θ, θ)`.
#[allow(clippy::too_many_arguments)]
pub fn mv_equilibrium_with(
    lp: &LevelParams,
    g: &DiffusionFn,
    theta: f64,
    extra: Option<&dyn Fn(f64) -> f64>,
    budget: &EqBudget,
    rng: &mut impl Rng,
) -> Result<EquilibriumEstimate> {
    budget.validate()?;
    if !(0.0..=1.0).contains(&theta) {
        return param(format!("theta must lie in [0, 1], got {theta}"));
    }
    let chain = EffectiveChain::new(lp, g, theta, budget.kappa);
    let rate = lp.relaxation_rate();
    let burn = (budget.burn_in / (rate * chain.h)).ceil() as u64;
    let per_batch = ((budget.horizon / (rate * chain.h)) / budget.batches as f64).ceil().max(1.0) as u64;
    let mut clamps = ClampStats::default();
    let (mut x, mut y) = (theta, theta);
    for _ in 0..burn {
        (x, y) = chain.step(x, y, rng, &mut clamps);
    }
    let mut batches = Vec::with_capacity(budget.batches);
    for _ in 0..budget.batches {
        let mut acc = [0.0; OBS];
        for _ in 0..per_batch {
            (x, y) = chain.step(x, y, rng, &mut clamps);
            acc[X] += x;
            acc[Y] += y;
            acc[XX] += x * x;
            acc[YY] += y * y;
            acc[XY] += x * y;
            acc[G] += g.eval(x);
            if let Some(f) = extra {
                acc[EXTRA] += f(x);
            }
        }
        acc.iter_mut().for_each(|v| *v /= per_batch as f64);
        batches.push(acc);
    }
    let col = |i: usize| batch_estimate(batches.iter().map(|b| b[i]));
    let half = budget.batches / 2;
    let split_half_z = (0..OBS - 1)
        .map(|i| {
            let a = batch_estimate(batches[..half].iter().map(|b| b[i]));
            let b = batch_estimate(batches[half..].iter().map(|b| b[i]));
            let z = a.z_against(&b);
            if z.is_finite() { z } else { 0.0 }
        })
        .fold(0.0, f64::max);
    let steps = burn + per_batch * budget.batches as u64;
    let flagged = split_half_z > 5.0;
    Ok(EquilibriumEstimate {
        theta,
        ex: col(X),
        ey: col(Y),
        exx: col(XX),
        eyy: col(YY),
        exy: col(XY),
        fg: col(G),
        extra: extra.map(|_| col(EXTRA)),
        level: *lp,
        dt: chain.h,
        steps,
        clamps,
        split_half_z,
        flagged,
        batches,
    })
}

pub fn mv_equilibrium(
    lp: &LevelParams,
    g: &DiffusionFn,
    theta: f64,
    budget: &EqBudget,
    rng: &mut impl Rng,
) -> Result<EquilibriumEstimate> {
    mv_equilibrium_with(lp, g, theta, None, budget, rng)
}

/// One approximately independent draw from `Γ_θ`: the endpoint of a run of
/// `burn_in` relaxation times from `(θ, θ)`.
pub fn mv_equilibrium_sample(
    lp: &LevelParams,
    g: &DiffusionFn,
    theta: f64,
    burn_in: f64,
    kappa: f64,
    rng: &mut impl Rng,
) -> ((f64, f64), ClampStats) {
    let chain = EffectiveChain::new(lp, g, theta, kappa);
    let steps = (burn_in / (lp.relaxation_rate() * chain.h)).ceil() as u64;
    let mut clamps = ClampStats::default();
    let (mut x, mut y) = (theta, theta);
    for _ in 0..steps {
        (x, y) = chain.step(x, y, rng, &mut clamps);
    }
    ((x, y), clamps)
}

/// `F g` on a grid, with a standard error per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FEvaluation {
    pub grid: GridFunction,
    pub se: Vec<f64>,
    /// Nodes whose equilibrium estimate failed the stationarity checks.
    pub flagged: Vec<usize>,
}

/// `(F g)(θ)` at every node of `nodes` (which must contain 0 and 1).
/// `carried` is a per-node error of `g` itself; its equilibrium average is
/// added to the node SE, which bounds the propagated error because `F` is
/// linear and positive.
pub fn evaluate_f(
    g: &DiffusionFn,
    lp: &LevelParams,
    nodes: &[f64],
    carried: Option<&GridFunction>,
    budget: &EqBudget,
    seed: u64,
    level: u64,
) -> Result<FEvaluation> {
    if nodes.len() < 2 || nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
        return param("theta grid must start at 0 and end at 1");
    }
    let ests: Vec<(f64, f64, bool)> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, &th)| -> Result<(f64, f64, bool)> {
            if i == 0 || i == nodes.len() - 1 {
                return Ok((0.0, 0.0, false));
            }
            let mut rng = stream(seed, "renorm-f", level, i as u64);
            let f = carried.map(|c| move |x: f64| c.eval(x));
            let est = mv_equilibrium_with(lp, g, th, f.as_ref().map(|f| f as &dyn Fn(f64) -> f64), budget, &mut rng)?;
            let prop = est.extra.map_or(0.0, |e| e.mean);
            Ok((est.fg.mean.max(0.0), est.fg.se + prop, est.flagged))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = ests.iter().map(|e| e.0).collect();
    Ok(FEvaluation {
        grid: GridFunction::new(nodes.to_vec(), values)?,
        se: ests.iter().map(|e| e.1).collect(),
        flagged: ests.iter().enumerate().filter(|(_, e)| e.2).map(|(i, _)| i).collect(),
    })
}

/// `d_0 = d`, `d_{n+1} = d_n / (1 + d_n A_n^n)`: then `F^{(n)}(d g_FW) = d_n g_FW`.
pub fn fw_recursion_oracle(d: f64, levels: usize, coeffs: &ClusteringCoefficients) -> Result<Vec<f64>> {
    if levels > coeffs.diag.len() {
        return param(format!("need A_k^k up to k = {}, have {}", levels - 1, coeffs.diag.len()));
    }
    let mut out = vec![d];
    for n in 0..levels {
        let dn = out[n];
        out.push(dn / (1.0 + dn * coeffs.diag[n]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitLevel {
    pub level: usize,
    pub a_n: f64,
    /// `A_n · (F^{(n)} g)` at the grid nodes.
    pub scaled: Vec<f64>,
    pub se: Vec<f64>,
    /// `A_n d_n θ(1-θ)` when `g` is Fisher-Wright.
    pub oracle: Option<Vec<f64>>,
    pub sup_distance: f64,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitReport {
    pub nodes: Vec<f64>,
    pub levels: Vec<OrbitLevel>,
}

impl OrbitReport {
    /// Largest `|scaled - oracle| / se` over nodes with positive SE.
    pub fn max_oracle_z(&self, level: usize) -> Option<f64> {
        let l = self.levels.iter().find(|l| l.level == level)?;
        let o = l.oracle.as_ref()?;
        Some(
            l.scaled
                .iter()
                .zip(o)
                .zip(&l.se)
                .filter(|(_, &s)| s > 0.0)
                .map(|((a, b), s)| (a - b).abs() / s)
                .fold(0.0, f64::max),
        )
    }
}

/// `F^{(n)} g` for `n = 1..=levels` using level-`n-1` parameters at each
/// step, scaled by `A_n` and compared with `g_FW`.
#[allow(clippy::too_many_arguments)]
pub fn iterate_f_scaled(
    g: &DiffusionFn,
    p: &ModelParams,
    derived: &DerivedParams,
    coeffs: &ClusteringCoefficients,
    levels: usize,
    nodes: &[f64],
    budget: &EqBudget,
    seed: u64,
) -> Result<OrbitReport> {
    if levels == 0 || levels > coeffs.diag.len() || levels > p.levels + 1 {
        return param(format!("orbit needs 1 <= levels <= {}", coeffs.diag.len().min(p.levels + 1)));
    }
    let fw = g.fisher_wright_rate();
    let oracle_d = fw.map(|d| fw_recursion_oracle(d, levels, coeffs)).transpose()?;
    let mut cur = g.clone();
    let mut carried: Option<GridFunction> = None;
    let mut out = Vec::with_capacity(levels);
    for n in 1..=levels {
        let lp = LevelParams::at(p, derived, n - 1)?;
        let ev = evaluate_f(&cur, &lp, nodes, carried.as_ref(), budget, seed, n as u64)?;
        let a_n = coeffs.a[n];
        let scaled: Vec<f64> = ev.grid.values().iter().map(|v| a_n * v).collect();
        let se: Vec<f64> = ev.se.iter().map(|s| a_n * s).collect();
        let sup_distance = nodes
            .iter()
            .zip(&scaled)
            .map(|(t, v)| (v - t * (1.0 - t)).abs())
            .fold(0.0, f64::max);
        let oracle = oracle_d.as_ref().map(|d| nodes.iter().map(|t| a_n * d[n] * t * (1.0 - t)).collect());
        out.push(OrbitLevel { level: n, a_n, scaled, se, oracle, sup_distance, flagged: ev.flagged.len() });
        carried = Some(GridFunction::new(nodes.to_vec(), ev.se.clone())?);
        cur = DiffusionFn::Grid(ev.grid);
    }
    Ok(OrbitReport { nodes: nodes.to_vec(), levels: out })
}

/// `M^k_{-l}`: active value and dormant vector (`k + 2` colours).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionChainState {
    pub level: usize,
    pub x: f64,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    /// `path[r][j]` is replica `r` at level `-(k + 1 - j)`, so the last
    /// entry is level `0`.
    pub paths: Vec<Vec<InteractionChainState>>,
    pub clamps: ClampStats,
}

impl ChainSamples {
    pub fn values_at(&self, level: usize) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| p.iter().find(|s| s.level == level).expect("recorded level").x)
            .collect()
    }

    pub fn mean_at(&self, level: usize) -> Estimate {
        let r: Running = self.values_at(level).into_iter().collect();
        r.estimate()
    }

    pub fn variance_at(&self, level: usize) -> Estimate {
        variance_estimate(&self.values_at(level))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainBudget {
    pub replicas: usize,
    /// Relaxation times run before each equilibrium draw.
    pub burn_in: f64,
    pub kappa: f64,
}

/// Descends from `M^k_{-(k+1)} = (ϑ_k, .., ϑ_k, θ_{y_{k+1}}, ..)` to level 0.
/// The step to level `l` draws `(x, y_l)` from the level-`l` equilibrium with
/// diffusion `g_orbit[l] = F^{(l)} g`, centred at the current active value;
/// colours below `l` are set to `x` and colours above are carried.
pub fn sample_interaction_chain(
    k: usize,
    p: &ModelParams,
    derived: &DerivedParams,
    g_orbit: &[DiffusionFn],
    budget: &ChainBudget,
    seed: u64,
) -> Result<ChainSamples> {
    if g_orbit.len() < k + 1 {
        return param(format!("need F^(l) g for l = 0..={k}, got {}", g_orbit.len()));
    }
    if k > p.levels {
        return param(format!("k = {k} above stored levels {}", p.levels));
    }
    let lps: Vec<LevelParams> = (0..=k).map(|l| LevelParams::at(p, derived, l)).collect::<Result<_>>()?;
    let start_x = derived.theta_seq[k];
    let start_y: Vec<f64> = (0..k + 2).map(|m| if m <= k { start_x } else { p.init.theta_y(m) }).collect();
    let runs: Vec<(Vec<InteractionChainState>, ClampStats)> = (0..budget.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, "interaction-chain", r, 0);
            let mut st = InteractionChainState { level: k + 1, x: start_x, y: start_y.clone() };
            let mut path = vec![st.clone()];
            let mut clamps = ClampStats::default();
            for l in (0..=k).rev() {
                let ((x, yl), c) = mv_equilibrium_sample(&lps[l], &g_orbit[l], st.x, budget.burn_in, budget.kappa, &mut rng);
                clamps.add(&c);
                st.level = l;
                st.x = x;
                st.y[l] = yl;
                for m in 0..l {
                    st.y[m] = x;
                }
                path.push(st.clone());
            }
            (path, clamps)
        })
        .collect();
    let mut clamps = ClampStats::default();
    let mut paths = Vec::with_capacity(runs.len());
    for (p, c) in runs {
        clamps.add(&c);
        paths.push(p);
    }
    Ok(ChainSamples { paths, clamps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileClass {
    Fast,
    Diffusive,
    Slow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolatilityProfile {
    pub k: usize,
    /// `f^k(l) = A_0^l / A_0^k` for `l = 0..=k`.
    pub values: Vec<f64>,
    pub epsilon: f64,
    /// First `l` with `f^k(l) >= ε`.
    pub onset: usize,
    pub class: ProfileClass,
}

/// Profile of accumulated volatility across levels. The onset fraction
/// `onset / k` near 1 means fast clustering (the profile concentrates at the
/// top level), a fraction of order `ε` means diffusive growth, and an onset
/// much below `ε k` means slow clustering.
pub fn volatility_profile(k: usize, coeffs: &ClusteringCoefficients, epsilon: f64) -> Result<VolatilityProfile> {
    if k == 0 || k >= coeffs.diag.len() {
        return param(format!("profile needs 1 <= k < {}", coeffs.diag.len()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return param("epsilon must lie in (0, 1)");
    }
    let top = coeffs.a_block(0, k);
    let values: Vec<f64> = (0..=k).map(|l| coeffs.a_block(0, l) / top).collect();
    let onset = values.iter().position(|&v| v >= epsilon).unwrap_or(k);
    let r = onset as f64 / k as f64;
    let class = if r > 0.5 {
        ProfileClass::Fast
    } else if r >= epsilon / 2.0 {
        ProfileClass::Diffusive
    } else {
        ProfileClass::Slow
    };
    Ok(VolatilityProfile { k, values, epsilon, onset, class })
}
