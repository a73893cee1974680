//! Forward simulation of the interacting SDE system on `B_{k+1}(0)`.
//!
//! Per colony `i` with state `(x_i, y_{i,0..k})`:
//!
//! ```text
//! dx_i   = Σ_l R_l (x̄_l(i) - x_i) dt + Σ_m K_m w_m (y_{i,m} - x_i) dt + sqrt(g(x_i)) dW_i
//! dy_i,m = w_m (x_i - y_{i,m}) dt,        w_m = e_m / N^m
//! ```
//!
//! where `x̄_l(i)` is the average over the `l`-block containing `i`. Three
//! schemes share the Euler-Maruyama noise and differ in the drift:
//! `ExactDormant` integrates the per-colony exchange exactly and migration by
//! Euler, `ExactLinear` integrates the whole linear drift exactly by
//! hierarchical modes, `Euler` does everything explicitly.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::ctmc::Generator;
use crate::error::{param, Error, Result};
use crate::hiergeo::HierAddress;
use crate::params::{InitSpec, ModelParams};
use crate::rng::stream;
use crate::stats::{Estimate, Running};

pub use crate::params::InitLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ExactDormant,
    ExactLinear,
    Euler,
}

/// One colony: active frequency and one dormant frequency per colour.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColonyState {
    pub x: f64,
    pub y: Vec<f64>,
}

/// All colonies of the truncated system, indexed as in [`HierAddress::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub n: usize,
    /// Number of migration levels `L`; there are `N^L` colonies.
    pub levels: usize,
    pub colours: usize,
    pub x: Vec<f64>,
    /// Colony-major, `colours` entries per colony.
    pub y: Vec<f64>,
    pub time: f64,
}

impl SystemState {
    pub fn colonies(&self) -> usize {
        self.x.len()
    }

    pub fn colony(&self, i: usize) -> ColonyState {
        ColonyState { x: self.x[i], y: self.y[i * self.colours..(i + 1) * self.colours].to_vec() }
    }

    pub fn address(&self, i: usize) -> HierAddress {
        HierAddress::from_index(i, self.n as u32, self.levels)
    }

    pub fn constant(p: &ModelParams, x: f64, y: f64) -> Self {
        let cols = p.colonies();
        let colours = p.levels + 1;
        Self { n: p.n, levels: p.levels + 1, colours, x: vec![x; cols], y: vec![y; cols * colours], time: 0.0 }
    }

    /// Explicit per-colony state; `y` is colony-major.
    pub fn explicit(p: &ModelParams, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let cols = p.colonies();
        let colours = p.levels + 1;
        if x.len() != cols || y.len() != cols * colours {
            return param(format!("state needs {cols} active and {} dormant entries", cols * colours));
        }
        if x.iter().chain(&y).any(|v| !(0.0..=1.0).contains(v)) {
            return param("state entries must lie in [0, 1]");
        }
        Ok(Self { n: p.n, levels: p.levels + 1, colours, x, y, time: 0.0 })
    }

    pub fn from_init(p: &ModelParams, init: &InitSpec, rng: &mut impl Rng) -> Self {
        let mut s = Self::constant(p, 0.0, 0.0);
        for i in 0..s.colonies() {
            s.x[i] = init.draw(init.theta_x, rng);
            for m in 0..s.colours {
                s.y[i * s.colours + m] = init.draw(init.theta_y(m), rng);
            }
        }
        s
    }

    /// Averages over `B_l(0)` of `x` and of each `y_m`.
    pub fn block_average(&self, l: usize) -> Result<(f64, Vec<f64>)> {
        if l > self.levels {
            return param(format!("level {l} above truncation {}", self.levels));
        }
        let size = self.n.pow(l as u32);
        let x = self.x[..size].iter().sum::<f64>() / size as f64;
        let mut y = vec![0.0; self.colours];
        for i in 0..size {
            for (m, v) in y.iter_mut().enumerate() {
                *v += self.y[i * self.colours + m];
            }
        }
        y.iter_mut().for_each(|v| *v /= size as f64);
        Ok((x, y))
    }

    /// Population-wide `(x + Σ K_m y_m) / (1 + Σ K_m)` averaged over colonies.
    pub fn grand_mean(&self, k: &[f64]) -> f64 {
        let ks: f64 = k.iter().sum();
        let tot: f64 = (0..self.colonies())
            .map(|i| self.x[i] + (0..self.colours).map(|m| k[m] * self.y[i * self.colours + m]).sum::<f64>())
            .sum();
        tot / (self.colonies() as f64 * (1.0 + ks))
    }
}

/// Local exchange generator on `(x, y_0, .., y_k)`, optionally with an extra
/// loss `lambda` on `x`.
fn exchange_matrix(p: &ModelParams, lambda: f64) -> DMatrix<f64> {
    let m = p.levels + 1;
    let mut b = DMatrix::zeros(m + 1, m + 1);
    b[(0, 0)] = -lambda;
    for c in 0..m {
        let w = p.wake_rate(c);
        b[(0, 0)] -= p.k[c] * w;
        b[(0, c + 1)] = p.k[c] * w;
        b[(c + 1, 0)] = w;
        b[(c + 1, c + 1)] = -w;
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepConfig {
    pub dt: f64,
    pub scheme: Scheme,
}

/// Rate used in the stability bound `dt · rate ≤ 1`.
pub fn stability_rate(p: &ModelParams, scheme: Scheme) -> f64 {
    let mig = p.kernel().block_choice_rate();
    let chi: f64 = (0..=p.levels).map(|m| p.sleep_rate(m)).sum();
    let fast = match scheme {
        Scheme::Euler => chi + (0..=p.levels).map(|m| p.wake_rate(m)).fold(0.0, f64::max),
        _ => 0.0,
    };
    mig + p.g.lipschitz() + fast
}

/// Default step: `dt · (migration + χ + Lip g) = 0.1`.
pub fn default_dt(p: &ModelParams) -> f64 {
    let chi: f64 = (0..=p.levels).map(|m| p.sleep_rate(m)).sum();
    0.1 / (p.kernel().block_choice_rate() + chi + p.g.lipschitz())
}

/// Precomputed one-step operator for a fixed `dt`, with scratch buffers.
pub struct Stepper<'a> {
    p: &'a ModelParams,
    dt: f64,
    scheme: Scheme,
    n: usize,
    width: usize,
    /// `R_1..R_L`.
    rates: Vec<f64>,
    /// Row-major `(width × width)`. `ExactDormant`: `e^{B dt}`.
    /// `ExactLinear`: `Φ_0`, then `Φ_j - Φ_{j-1}` for `j = 1..=L`.
    mats: Vec<Vec<f64>>,
    noise: Vec<f64>,
    /// Block averages per level, `width` entries per block.
    avg: Vec<Vec<f64>>,
    acc: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClipStats {
    pub clipped: u64,
    pub updates: u64,
}

impl ClipStats {
    pub fn fraction(&self) -> f64 {
        if self.updates == 0 {
            0.0
        } else {
            self.clipped as f64 / self.updates as f64
        }
    }
}

fn clip(v: &mut f64, stats: &mut ClipStats) {
    stats.updates += 1;
    if *v < 0.0 {
        *v = 0.0;
        stats.clipped += 1;
    } else if *v > 1.0 {
        *v = 1.0;
        stats.clipped += 1;
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// `out += m · v` for a row-major square `m`.
#[inline]
fn mat_vec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let w = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * w..(r + 1) * w];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

impl<'a> Stepper<'a> {
    pub fn new(p: &'a ModelParams, cfg: StepConfig) -> Result<Self> {
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return param(format!("dt must be > 0, got {}", cfg.dt));
        }
        let rate = stability_rate(p, cfg.scheme);
        if cfg.dt * rate > 1.0 {
            return Err(Error::Unstable(format!(
                "dt = {} times total rate {rate} exceeds 1",
                cfg.dt
            )));
        }
        let kernel = p.kernel();
        let levels = kernel.levels();
        let rates: Vec<f64> = (1..=levels).map(|l| kernel.level_rate(l)).collect();
        let mats = match cfg.scheme {
            Scheme::Euler => Vec::new(),
            Scheme::ExactDormant => vec![row_major(&(exchange_matrix(p, 0.0) * cfg.dt).exp())],
            Scheme::ExactLinear => {
                let phis: Vec<DMatrix<f64>> = (0..=levels)
                    .map(|j| {
                        let lam: f64 = rates[j..].iter().sum();
                        (exchange_matrix(p, lam) * cfg.dt).exp()
                    })
                    .collect();
                let mut out = vec![row_major(&phis[0])];
                for j in 1..=levels {
                    out.push(row_major(&(&phis[j] - &phis[j - 1])));
                }
                out
            }
        };
        let width = p.levels + 2;
        let cols = p.colonies();
        let avg = (0..=levels).map(|l| vec![0.0; cols / p.n.pow(l as u32) * width]).collect();
        Ok(Self {
            p,
            dt: cfg.dt,
            scheme: cfg.scheme,
            n: p.n,
            width,
            rates,
            mats,
            noise: vec![0.0; cols],
            avg,
            acc: vec![0.0; width],
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Fills `avg[l]` with block averages of `(x, y)` (or only `x` when
    /// `x_only`, still laid out with stride `width`).
    fn fill_averages(&mut self, s: &SystemState, x_only: bool) {
        let (w, mc, n) = (self.width, s.colours, self.n);
        let base = &mut self.avg[0];
        for i in 0..s.colonies() {
            base[i * w] = s.x[i];
            if !x_only {
                base[i * w + 1..(i + 1) * w].copy_from_slice(&s.y[i * mc..(i + 1) * mc]);
            }
        }
        let q = if x_only { 1 } else { w };
        for l in 1..self.avg.len() {
            let (lo, hi) = self.avg.split_at_mut(l);
            let (src, dst) = (&lo[l - 1], &mut hi[0]);
            for b in 0..dst.len() / w {
                for k in 0..q {
                    let mut t = 0.0;
                    for c in 0..n {
                        t += src[(b * n + c) * w + k];
                    }
                    dst[b * w + k] = t / n as f64;
                }
            }
        }
    }

    pub fn step(&mut self, s: &mut SystemState, rng: &mut impl Rng) -> ClipStats {
        let (n, w, mc, dt) = (self.n, self.width, s.colours, self.dt);
        let cols = s.colonies();
        for (z, &x) in self.noise.iter_mut().zip(&s.x) {
            *z = (self.p.g.eval(x) * dt).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        match self.scheme {
            Scheme::Euler | Scheme::ExactDormant => {
                self.fill_averages(s, true);
                for i in 0..cols {
                    let x = s.x[i];
                    let mut mig = 0.0;
                    let mut idx = i;
                    for (l, r) in self.rates.iter().enumerate() {
                        idx /= n;
                        mig += r * (self.avg[l + 1][idx * w] - x);
                    }
                    let ys = &mut s.y[i * mc..(i + 1) * mc];
                    if self.scheme == Scheme::Euler {
                        let mut ex = 0.0;
                        for (m, y) in ys.iter_mut().enumerate() {
                            let wk = self.p.wake_rate(m);
                            ex += self.p.k[m] * wk * (*y - x);
                            *y += dt * wk * (x - *y);
                        }
                        s.x[i] = x + dt * (mig + ex) + self.noise[i];
                    } else {
                        self.acc.iter_mut().for_each(|a| *a = 0.0);
                        let v = &self.avg[0][i * w..(i + 1) * w];
                        // avg[0] only holds x here; read y directly.
                        let m0 = &self.mats[0];
                        for r in 0..w {
                            let row = &m0[r * w..(r + 1) * w];
                            self.acc[r] = row[0] * v[0] + row[1..].iter().zip(ys.iter()).map(|(a, b)| a * b).sum::<f64>();
                        }
                        s.x[i] = self.acc[0] + dt * mig + self.noise[i];
                        ys.copy_from_slice(&self.acc[1..]);
                    }
                }
            }
            Scheme::ExactLinear => {
                self.fill_averages(s, false);
                for i in 0..cols {
                    self.acc.iter_mut().for_each(|a| *a = 0.0);
                    let mut idx = i;
                    for (j, m) in self.mats.iter().enumerate() {
                        mat_vec_add(m, &self.avg[j][idx * w..(idx + 1) * w], &mut self.acc);
                        idx /= n;
                    }
                    s.x[i] = self.acc[0] + self.noise[i];
                    s.y[i * mc..(i + 1) * mc].copy_from_slice(&self.acc[1..]);
                }
            }
        }
        let mut stats = ClipStats::default();
        for v in s.x.iter_mut().chain(s.y.iter_mut()) {
            clip(v, &mut stats);
        }
        s.time += dt;
        stats
    }
}

/// Block averages and estimators recorded at one time and level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordRow {
    pub t: f64,
    pub level: usize,
    /// `Θ_x^{(l)}`: block average of `x`.
    pub theta_x: f64,
    /// `Θ_{y_m}^{(l)}`: block averages of `y_m`.
    pub theta_y: Vec<f64>,
    /// `Θ̄^{(l)}`: block average of `(x + Σ_{m<l} K_m y_m)/(1 + Σ_{m<l} K_m)`.
    pub theta_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordPlan {
    /// Strictly increasing positive record times; the last one is the horizon.
    pub times: Vec<f64>,
    pub levels: Vec<usize>,
    pub snapshots: bool,
}

impl RecordPlan {
    pub fn at(times: Vec<f64>, levels: Vec<usize>) -> Self {
        Self { times, levels, snapshots: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub rows: Vec<RecordRow>,
    /// Grand mean at time 0 and at every record time.
    pub grand_mean: Vec<(f64, f64)>,
    pub snapshots: Vec<SystemState>,
    pub clips: ClipStats,
    pub steps: u64,
    /// Clip fraction above 1% marks the run as unreliable.
    pub flagged: bool,
}

impl TrajectoryRecord {
    pub fn row(&self, t: f64, level: usize) -> Option<&RecordRow> {
        self.rows.iter().find(|r| r.t == t && r.level == level)
    }
}

fn record_rows(s: &SystemState, p: &ModelParams, levels: &[usize], out: &mut Vec<RecordRow>) -> Result<()> {
    for &l in levels {
        let (bx, by) = s.block_average(l)?;
        let size = p.n.pow(l as u32);
        let kw: f64 = p.k[..l.min(s.colours)].iter().sum();
        let bar = (0..size)
            .map(|i| {
                let z: f64 = (0..l.min(s.colours)).map(|m| p.k[m] * s.y[i * s.colours + m]).sum();
                (s.x[i] + z) / (1.0 + kw)
            })
            .sum::<f64>()
            / size as f64;
        out.push(RecordRow { t: s.time, level: l, theta_x: bx, theta_y: by, theta_bar: bar });
    }
    Ok(())
}

/// Runs from a given state through the plan's record times. Steps are
/// shortened so every record time is hit exactly.
pub fn simulate_from(
    mut s: SystemState,
    p: &ModelParams,
    plan: &RecordPlan,
    cfg: StepConfig,
    rng: &mut impl Rng,
) -> Result<TrajectoryRecord> {
    if plan.times.is_empty() || plan.times.windows(2).any(|w| w[1] <= w[0]) || plan.times[0] <= s.time {
        return param("record times must be increasing and after the start time");
    }
    if let Some(l) = plan.levels.iter().find(|&&l| l > s.levels) {
        return param(format!("record level {l} above truncation {}", s.levels));
    }
    let mut rec = TrajectoryRecord {
        rows: Vec::new(),
        grand_mean: vec![(s.time, s.grand_mean(&p.k))],
        snapshots: Vec::new(),
        clips: ClipStats::default(),
        steps: 0,
        flagged: false,
    };
    // Fail early on an unstable step size.
    Stepper::new(p, cfg)?;
    for &t in &plan.times {
        let span = t - s.time;
        let k = (span / cfg.dt - 1e-9).ceil().max(1.0) as usize;
        let mut stepper = Stepper::new(p, StepConfig { dt: span / k as f64, scheme: cfg.scheme })?;
        for _ in 0..k {
            let c = stepper.step(&mut s, rng);
            rec.clips.clipped += c.clipped;
            rec.clips.updates += c.updates;
        }
        rec.steps += k as u64;
        s.time = t;
        record_rows(&s, p, &plan.levels, &mut rec.rows)?;
        rec.grand_mean.push((t, s.grand_mean(&p.k)));
        if plan.snapshots {
            rec.snapshots.push(s.clone());
        }
    }
    rec.flagged = rec.clips.fraction() > 0.01;
    Ok(rec)
}

pub fn simulate(
    p: &ModelParams,
    init: &InitSpec,
    plan: &RecordPlan,
    cfg: StepConfig,
    rng: &mut impl Rng,
) -> Result<TrajectoryRecord> {
    let s = SystemState::from_init(p, init, rng);
    simulate_from(s, p, plan, cfg, rng)
}

/// Independent replicas in parallel; replica `r` uses stream `(seed, label, r, 0)`.
pub fn simulate_ensemble<F>(
    p: &ModelParams,
    start: F,
    plan: &RecordPlan,
    cfg: StepConfig,
    seed: u64,
    label: &str,
    replicas: usize,
) -> Result<Vec<TrajectoryRecord>>
where
    F: Fn(&mut crate::rng::Stream) -> SystemState + Sync,
{
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, label, r, 0);
            let s = start(&mut rng);
            simulate_from(s, p, plan, cfg, &mut rng)
        })
        .collect()
}

/// Ensemble estimate of a statistic of the recorded row at `(t, level)`.
pub fn ensemble_estimate(
    recs: &[TrajectoryRecord],
    t: f64,
    level: usize,
    f: impl Fn(&RecordRow) -> f64,
) -> Option<Estimate> {
    let r: Running = recs.iter().map(|rec| rec.row(t, level).map(&f)).collect::<Option<Vec<f64>>>()?.into_iter().collect();
    Some(r.estimate())
}

/// Exact first moments through the single-lineage generator: an active
/// lineage migrates with `a(ξ,η)` and falls asleep in colour `m` at rate
/// `K_m w_m`; a dormant one wakes at rate `w_m`.
pub fn first_moment_oracle(p: &ModelParams, z: &SystemState, t: f64) -> Result<SystemState> {
    const LIMIT: usize = 10_000;
    let cols = p.colonies();
    let mc = p.levels + 1;
    let size = cols * (mc + 1);
    if size > LIMIT {
        return Err(Error::TooLarge { size, limit: LIMIT });
    }
    if z.colonies() != cols || z.colours != mc {
        return param("state does not match the parameters");
    }
    let kernel = p.kernel();
    let st = |i: usize, role: usize| i * (mc + 1) + role;
    let mut g = Generator::new(size);
    for i in 0..cols {
        for j in 0..cols {
            g.add(st(i, 0), st(j, 0), kernel.rate_at_distance(crate::hiergeo::index_distance(i, j, p.n)));
        }
        for m in 0..mc {
            g.add(st(i, 0), st(i, m + 1), p.sleep_rate(m));
            g.add(st(i, m + 1), st(i, 0), p.wake_rate(m));
        }
    }
    let mut f = vec![0.0; size];
    for i in 0..cols {
        f[st(i, 0)] = z.x[i];
        for m in 0..mc {
            f[st(i, m + 1)] = z.y[i * mc + m];
        }
    }
    let out = g.act(&f, t)?;
    let mut s = z.clone();
    s.time = z.time + t;
    for i in 0..cols {
        s.x[i] = out[st(i, 0)];
        for m in 0..mc {
            s.y[i * mc + m] = out[st(i, m + 1)];
        }
    }
    Ok(s)
}

/// Single colony driven towards the ensemble mean, one colour:
///
/// ```text
/// dx = c (E x(t) - x) dt + K e (y - x) dt + sqrt(g(x)) dW,   dy = e (x - y) dt
/// ```
///
/// `E x(t)` is replaced by its closed form, so the mean drift is exact.
#[derive(Debug, Clone)]
pub struct McKeanVlasov {
    pub c: f64,
    pub k: f64,
    pub e: f64,
    pub g: crate::diffusion::DiffusionFn,
}

impl McKeanVlasov {
    /// Closed-form `(E x(t), E y(t))`: `x + K y` is conserved and `x - y`
    /// relaxes at rate `(1 + K) e`.
    pub fn mean(&self, t: f64, mx0: f64, my0: f64) -> (f64, f64) {
        let s = mx0 + self.k * my0;
        let d = (mx0 - my0) * (-(1.0 + self.k) * self.e * t).exp();
        ((s + self.k * d) / (1.0 + self.k), (s - d) / (1.0 + self.k))
    }

    fn deviation_step(&self, dt: f64) -> nalgebra::Matrix2<f64> {
        let a = nalgebra::Matrix2::new(-self.c - self.k * self.e, self.k * self.e, self.e, -self.e);
        (a * dt).exp()
    }

    /// One path from `(x0, y0)`, recorded at `times`. The means `(mx0, my0)`
    /// are those of the initial law.
    #[allow(clippy::too_many_arguments)]
    pub fn path(
        &self,
        x0: f64,
        y0: f64,
        mx0: f64,
        my0: f64,
        times: &[f64],
        dt: f64,
        rng: &mut impl Rng,
        clips: &mut ClipStats,
    ) -> Vec<(f64, f64)> {
        let (mut x, mut y) = (x0, y0);
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let k = ((t - now) / dt - 1e-9).ceil().max(1.0) as usize;
            let h = (t - now) / k as f64;
            let phi = self.deviation_step(h);
            for _ in 0..k {
                let (ax, ay) = self.mean(now, mx0, my0);
                let (bx, by) = self.mean(now + h, mx0, my0);
                let (ux, uy) = (x - ax, y - ay);
                let nz = (self.g.eval(x) * h).sqrt() * rng.sample::<f64, _>(StandardNormal);
                x = bx + phi[(0, 0)] * ux + phi[(0, 1)] * uy + nz;
                y = by + phi[(1, 0)] * ux + phi[(1, 1)] * uy;
                clip(&mut x, clips);
                clip(&mut y, clips);
                now += h;
            }
            now = t;
            out.push((x, y));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DiffusionFn;
    use crate::params::{Family, InitLaw};

    fn params(n: usize, levels: usize, g: DiffusionFn) -> ModelParams {
        ModelParams::from_family(n, levels, Family::Exponential { k: 1.5, e: 0.8, c: 0.7 }, g, InitSpec::constant(0.4))
            .unwrap()
    }

    fn fw(d: f64) -> DiffusionFn {
        DiffusionFn::fisher_wright(d).unwrap()
    }

    #[test]
    fn fixed_point_without_noise() {
        let p = params(2, 2, fw(0.0));
        for scheme in [Scheme::ExactDormant, Scheme::ExactLinear, Scheme::Euler] {
            let mut s = SystemState::constant(&p, 0.3, 0.3);
            let mut st = Stepper::new(&p, StepConfig { dt: 0.01, scheme }).unwrap();
            let mut rng = stream(0, "t", 0, 0);
            for _ in 0..50 {
                st.step(&mut s, &mut rng);
            }
            assert!(s.x.iter().chain(&s.y).all(|v| (v - 0.3).abs() < 1e-12), "{scheme:?}");
        }
    }

    #[test]
    fn zero_is_absorbing() {
        let p = params(2, 1, fw(1.0));
        let mut s = SystemState::constant(&p, 0.0, 0.0);
        let mut st = Stepper::new(&p, StepConfig { dt: 0.01, scheme: Scheme::ExactDormant }).unwrap();
        let mut rng = stream(0, "t", 0, 0);
        for _ in 0..100 {
            st.step(&mut s, &mut rng);
        }
        assert!(s.x.iter().chain(&s.y).all(|&v| v == 0.0));
    }

    #[test]
    fn unstable_step_rejected() {
        let p = params(2, 1, fw(1.0));
        assert!(matches!(Stepper::new(&p, StepConfig { dt: 10.0, scheme: Scheme::Euler }), Err(Error::Unstable(_))));
    }

    #[test]
    fn block_average_examples() {
        let p = ModelParams::from_family(2, 0, Family::Exponential { k: 1.0, e: 1.0, c: 1.0 }, fw(1.0), InitSpec::constant(0.5)).unwrap();
        let s = SystemState::explicit(&p, vec![0.2, 0.6], vec![0.1, 0.3]).unwrap();
        assert!((s.block_average(1).unwrap().0 - 0.4).abs() < 1e-15);
        assert_eq!(s.block_average(0).unwrap(), (0.2, vec![0.1]));
        assert!(s.block_average(2).is_err());
        let c = SystemState::constant(&params(3, 1, fw(1.0)), 0.7, 0.2);
        let (bx, by) = c.block_average(2).unwrap();
        assert!((bx - 0.7).abs() < 1e-14 && by.iter().all(|v| (v - 0.2).abs() < 1e-14));
    }

    #[test]
    fn exact_linear_drift_matches_oracle() {
        // Without noise the ExactLinear step is the exact mean flow.
        let p = params(2, 1, fw(0.0));
        let mut rng = stream(5, "t", 0, 0);
        let x: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.random()).collect();
        let s0 = SystemState::explicit(&p, x, y).unwrap();
        let oracle = first_moment_oracle(&p, &s0, 0.7).unwrap();
        let mut s = s0.clone();
        let mut st = Stepper::new(&p, StepConfig { dt: 0.07, scheme: Scheme::ExactLinear }).unwrap();
        for _ in 0..10 {
            st.step(&mut s, &mut rng);
        }
        for (a, b) in s.x.iter().chain(&s.y).zip(oracle.x.iter().chain(&oracle.y)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_basics() {
        let p = params(2, 1, fw(1.0));
        let s = SystemState::constant(&p, 0.35, 0.35);
        let o = first_moment_oracle(&p, &s, 2.0).unwrap();
        assert!(o.x.iter().chain(&o.y).all(|v| (v - 0.35).abs() < 1e-12));
        let mut rng = stream(1, "t", 0, 0);
        let s = SystemState::from_init(&p, &InitSpec { theta_x: 0.5, theta_y: vec![0.2], law: InitLaw::Beta { concentration: 2.0 } }, &mut rng);
        let o = first_moment_oracle(&p, &s, 0.0).unwrap();
        assert_eq!(o.x, s.x);
        assert_eq!(o.y, s.y);
        let big = params(4, 5, fw(1.0));
        assert!(matches!(first_moment_oracle(&big, &SystemState::constant(&big, 0.1, 0.1), 1.0), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn estimator_identity_and_replay() {
        let p = params(2, 2, fw(1.0));
        let init = InitSpec { theta_x: 0.3, theta_y: vec![0.6, 0.5], law: InitLaw::Beta { concentration: 3.0 } };
        let plan = RecordPlan::at(vec![0.5, 1.0], vec![0, 1, 2, 3]);
        let cfg = StepConfig { dt: 0.01, scheme: Scheme::ExactDormant };
        let a = simulate(&p, &init, &plan, cfg, &mut stream(9, "t", 0, 0)).unwrap();
        let b = simulate(&p, &init, &plan, cfg, &mut stream(9, "t", 0, 0)).unwrap();
        assert_eq!(a, b);
        for r in &a.rows {
            let l = r.level.min(3);
            let ks: f64 = p.k[..l].iter().sum();
            let want = (r.theta_x + (0..l).map(|m| p.k[m] * r.theta_y[m]).sum::<f64>()) / (1.0 + ks);
            assert!((r.theta_bar - want).abs() < 1e-14);
        }
    }

    #[test]
    fn mckean_vlasov_mean_closed_form() {
        let mv = McKeanVlasov { c: 1.0, k: 2.0, e: 0.5, g: fw(1.0) };
        let (x, y) = mv.mean(0.0, 0.2, 0.8);
        assert!((x - 0.2).abs() < 1e-14 && (y - 0.8).abs() < 1e-14);
        let (x, y) = mv.mean(50.0, 0.2, 0.8);
        let lim = (0.2 + 2.0 * 0.8) / 3.0;
        assert!((x - lim).abs() < 1e-12 && (y - lim).abs() < 1e-12);
        // Finite difference of the mean ODE.
        let h = 1e-6;
        let (x1, y1) = mv.mean(0.3, 0.2, 0.8);
        let (x2, y2) = mv.mean(0.3 + h, 0.2, 0.8);
        assert!(((x2 - x1) / h - 2.0 * 0.5 * (y1 - x1)).abs() < 1e-5);
        assert!(((y2 - y1) / h - 0.5 * (x1 - y1)).abs() < 1e-5);
    }
}
