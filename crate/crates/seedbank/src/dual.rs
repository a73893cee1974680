//! Block-counting dual: lineages on `(site, role)` with migration,
//! coalescence at rate `d·C(m, 2)` among active lineages of a site, and
//! exchange with the seed-bank colours. Only occupation counts are tracked.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::ctmc::Generator;
use crate::error::{param, Error, Result};
use crate::forward::{simulate_from, RecordPlan, Scheme, StepConfig, SystemState};
use crate::hiergeo::{index_distance, KernelSpec};
use crate::params::{ModelParams, WakeupLaw};
use crate::rng::stream;
use crate::stats::{Estimate, Running};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Role {
    Active,
    Dormant(usize),
}

impl Role {
    fn slot(self) -> usize {
        match self {
            Role::Active => 0,
            Role::Dormant(m) => m + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DualConfig {
    counts: BTreeMap<(usize, Role), u32>,
    total: u32,
}

impl DualConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, site: usize, role: Role, count: u32) -> Self {
        self.add(site, role, count);
        self
    }

    pub fn add(&mut self, site: usize, role: Role, count: u32) {
        if count > 0 {
            *self.counts.entry((site, role)).or_insert(0) += count;
            self.total += count;
        }
    }

    fn remove(&mut self, site: usize, role: Role) {
        let c = self.counts.get_mut(&(site, role)).expect("occupied slot");
        *c -= 1;
        if *c == 0 {
            self.counts.remove(&(site, role));
        }
        self.total -= 1;
    }

    pub fn count(&self, site: usize, role: Role) -> u32 {
        self.counts.get(&(site, role)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Role, u32)> + '_ {
        self.counts.iter().map(|(&(s, r), &c)| (s, r, c))
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        for (s, r, _) in self.iter() {
            if s >= p.colonies() {
                return param(format!("site {s} outside the {} colonies", p.colonies()));
            }
            if let Role::Dormant(m) = r {
                if m > p.levels {
                    return param(format!("colour {m} above {}", p.levels));
                }
            }
        }
        Ok(())
    }

    /// Dense counts, `levels + 2` slots per colony.
    fn dense(&self, p: &ModelParams) -> Vec<u32> {
        let w = p.levels + 2;
        let mut v = vec![0; p.colonies() * w];
        for (s, r, c) in self.iter() {
            v[s * w + r.slot()] = c;
        }
        v
    }

    fn from_dense(v: &[u32], w: usize) -> Self {
        let mut out = Self::new();
        for (i, &c) in v.iter().enumerate() {
            let role = if i % w == 0 { Role::Active } else { Role::Dormant(i % w - 1) };
            out.add(i / w, role, c);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DualEvent {
    /// One active lineage leaves `site`; the target is drawn when it fires.
    Migrate { site: usize },
    Coalesce { site: usize },
    Wake { site: usize, colour: usize },
    Sleep { site: usize, colour: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub entries: Vec<(DualEvent, f64)>,
    pub total: f64,
}

pub fn dual_event_rates(cfg: &DualConfig, p: &ModelParams) -> RateTable {
    let outflow = p.kernel().total_outflow();
    let d = p.fisher_wright_rate().unwrap_or(0.0);
    let mut entries = Vec::new();
    for (site, role, c) in cfg.iter() {
        let cf = c as f64;
        match role {
            Role::Active => {
                entries.push((DualEvent::Migrate { site }, cf * outflow));
                if c >= 2 && d > 0.0 {
                    entries.push((DualEvent::Coalesce { site }, d * cf * (cf - 1.0) / 2.0));
                }
                for m in 0..=p.levels {
                    entries.push((DualEvent::Sleep { site, colour: m }, cf * p.sleep_rate(m)));
                }
            }
            Role::Dormant(m) => entries.push((DualEvent::Wake { site, colour: m }, cf * p.wake_rate(m))),
        }
    }
    let total = entries.iter().map(|e| e.1).sum();
    RateTable { entries, total }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub t: f64,
    pub event: &'static str,
    /// Origin site; for migrations the destination is in `target`.
    pub site: usize,
    pub target: Option<usize>,
    pub colour: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualRun {
    pub events: Vec<EventRecord>,
    pub terminal: DualConfig,
}

fn apply(cfg: &mut DualConfig, ev: DualEvent, kernel: &KernelSpec, rng: &mut impl Rng) -> Option<usize> {
    match ev {
        DualEvent::Migrate { site } => {
            let (to, _) = kernel.sample_excluding_self(site, rng);
            cfg.remove(site, Role::Active);
            cfg.add(to, Role::Active, 1);
            Some(to)
        }
        DualEvent::Coalesce { site } => {
            cfg.remove(site, Role::Active);
            None
        }
        DualEvent::Wake { site, colour } => {
            cfg.remove(site, Role::Dormant(colour));
            cfg.add(site, Role::Active, 1);
            None
        }
        DualEvent::Sleep { site, colour } => {
            cfg.remove(site, Role::Active);
            cfg.add(site, Role::Dormant(colour), 1);
            None
        }
    }
}

/// Exact Gillespie run up to `horizon`, reporting the state at each of
/// `times` (increasing, ≤ horizon) and optionally the event log.
pub fn simulate_dual_at(
    cfg0: &DualConfig,
    p: &ModelParams,
    times: &[f64],
    log: bool,
    rng: &mut impl Rng,
) -> (Vec<DualConfig>, Vec<EventRecord>) {
    let kernel = p.kernel();
    let mut cfg = cfg0.clone();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    let mut events = Vec::new();
    let mut next = 0;
    loop {
        let table = dual_event_rates(&cfg, p);
        let dt = if table.total > 0.0 {
            Exp::new(table.total).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        };
        while next < times.len() && now + dt > times[next] {
            out.push(cfg.clone());
            next += 1;
        }
        if next == times.len() {
            return (out, events);
        }
        now += dt;
        let mut u = rng.random::<f64>() * table.total;
        let mut pick = table.entries.len() - 1;
        for (i, (_, r)) in table.entries.iter().enumerate() {
            if u < *r {
                pick = i;
                break;
            }
            u -= r;
        }
        let ev = table.entries[pick].0;
        let target = apply(&mut cfg, ev, &kernel, rng);
        if log {
            let (name, site, colour) = match ev {
                DualEvent::Migrate { site } => ("migrate", site, None),
                DualEvent::Coalesce { site } => ("coalesce", site, None),
                DualEvent::Wake { site, colour } => ("wake", site, Some(colour)),
                DualEvent::Sleep { site, colour } => ("sleep", site, Some(colour)),
            };
            events.push(EventRecord { t: now, event: name, site, target, colour });
        }
    }
}

pub fn simulate_dual(cfg0: &DualConfig, p: &ModelParams, horizon: f64, rng: &mut impl Rng) -> DualRun {
    let (mut states, events) = simulate_dual_at(cfg0, p, &[horizon], true, rng);
    DualRun { events, terminal: states.pop().expect("one state") }
}

/// `H(z, l) = Π x_η^{m_η} Π y_{η,m}^{n_{η,m}}`.
pub fn duality_function(z: &SystemState, l: &DualConfig) -> f64 {
    l.iter()
        .map(|(s, r, c)| {
            let v = match r {
                Role::Active => z.x[s],
                Role::Dormant(m) => z.y[s * z.colours + m],
            };
            v.powi(c as i32)
        })
        .product()
}

/// All configurations reachable from `l`, with the full rate matrix
/// (migrations per target).
pub struct DualChain {
    pub states: Vec<DualConfig>,
    pub generator: Generator,
}

pub fn dual_generator(l: &DualConfig, p: &ModelParams, limit: usize) -> Result<DualChain> {
    l.validate(p)?;
    let w = p.levels + 2;
    let cols = p.colonies();
    let d = p.fisher_wright_rate().unwrap_or(0.0);
    let kernel = p.kernel();
    let mut index: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut states: Vec<Vec<u32>> = Vec::new();
    let mut edges: Vec<(usize, Vec<u32>, f64)> = Vec::new();
    let mut queue = VecDeque::new();
    let start = l.dense(p);
    index.insert(start.clone(), 0);
    states.push(start.clone());
    queue.push_back(start);
    while let Some(v) = queue.pop_front() {
        let from = index[&v];
        let mut moves: Vec<(Vec<u32>, f64)> = Vec::new();
        let shift = |v: &[u32], a: usize, b: usize| {
            let mut u = v.to_vec();
            u[a] -= 1;
            u[b] += 1;
            u
        };
        for s in 0..cols {
            let act = v[s * w];
            if act > 0 {
                let a = act as f64;
                for t in (0..cols).filter(|&t| t != s) {
                    moves.push((shift(&v, s * w, t * w), a * kernel.rate_at_distance(index_distance(s, t, p.n))));
                }
                if act >= 2 && d > 0.0 {
                    let mut u = v.clone();
                    u[s * w] -= 1;
                    moves.push((u, d * a * (a - 1.0) / 2.0));
                }
                for m in 0..=p.levels {
                    moves.push((shift(&v, s * w, s * w + m + 1), a * p.sleep_rate(m)));
                }
            }
            for m in 0..=p.levels {
                let n = v[s * w + m + 1];
                if n > 0 {
                    moves.push((shift(&v, s * w + m + 1, s * w), n as f64 * p.wake_rate(m)));
                }
            }
        }
        for (u, r) in moves {
            if !index.contains_key(&u) {
                if states.len() >= limit {
                    return Err(Error::TooLarge { size: states.len() + 1, limit });
                }
                index.insert(u.clone(), states.len());
                states.push(u.clone());
                queue.push_back(u.clone());
            }
            edges.push((from, u, r));
        }
    }
    let mut generator = Generator::new(states.len());
    for (from, u, r) in edges {
        generator.add(from, index[&u], r);
    }
    Ok(DualChain { states: states.iter().map(|v| DualConfig::from_dense(v, w)).collect(), generator })
}

/// `E[H(z, L(t)) | L(0) = l]` by exponentiating the dual generator.
pub fn exact_dual_expectation(p: &ModelParams, z: &SystemState, l: &DualConfig, t: f64) -> Result<f64> {
    let chain = dual_generator(l, p, 10_000)?;
    let f: Vec<f64> = chain.states.iter().map(|c| duality_function(z, c)).collect();
    Ok(chain.generator.act(&f, t)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityRow {
    pub t: f64,
    /// Index into the list of dual initial configurations.
    pub case: usize,
    pub lhs: Estimate,
    pub rhs: Estimate,
    /// Generator-exponential value of the rhs when the chain is enumerable.
    pub exact: Option<f64>,
}

impl DualityRow {
    pub fn combined_se(&self) -> f64 {
        self.lhs.se.hypot(self.rhs.se)
    }

    pub fn gap(&self) -> f64 {
        (self.lhs.mean - self.rhs.mean).abs()
    }

    pub fn passes(&self, sigmas: f64) -> bool {
        let se = self.combined_se();
        let exact_ok = self.exact.is_none_or(|e| {
            (self.lhs.mean - e).abs() <= sigmas * self.lhs.se && (self.rhs.mean - e).abs() <= sigmas * self.rhs.se
        });
        self.gap() <= sigmas * se && exact_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityBudget {
    pub replicas: usize,
    pub dt: f64,
}

/// Forward Monte Carlo of `H(z(t), l)` against dual Monte Carlo of
/// `H(z, L(t))` for every `(t, l)` pair. Only valid for `g = d·g_FW`.
pub fn duality_estimate(
    p: &ModelParams,
    z: &SystemState,
    ls: &[DualConfig],
    times: &[f64],
    budget: DualityBudget,
    seed: u64,
) -> Result<Vec<DualityRow>> {
    if p.fisher_wright_rate().is_none() {
        return Err(Error::Unsupported(
            "moment duality needs a Fisher-Wright diffusion function g = d·x(1-x)".into(),
        ));
    }
    if z.colonies() != p.colonies() || z.colours != p.levels + 1 {
        return param("forward state does not match the parameters");
    }
    for l in ls {
        l.validate(p)?;
    }
    if budget.replicas < 2 {
        return param("duality needs at least 2 replicas");
    }
    let positive: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    let plan = RecordPlan { times: positive.clone(), levels: vec![], snapshots: true };
    let cfg = StepConfig { dt: budget.dt, scheme: Scheme::ExactLinear };
    let width = times.len() * ls.len();

    let fwd: Vec<Vec<f64>> = (0..budget.replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = stream(seed, "duality-forward", r, 0);
            let snaps = if positive.is_empty() {
                Vec::new()
            } else {
                simulate_from(z.clone(), p, &plan, cfg, &mut rng)?.snapshots
            };
            let mut out = Vec::with_capacity(width);
            for &t in times {
                let s = if t > 0.0 { &snaps[positive.iter().position(|&u| u == t).unwrap()] } else { z };
                out.extend(ls.iter().map(|l| duality_function(s, l)));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let dual: Vec<Vec<f64>> = (0..budget.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut vals = vec![0.0; width];
            for (j, l) in ls.iter().enumerate() {
                let mut rng = stream(seed, "duality-dual", r, j as u64);
                let (states, _) = simulate_dual_at(l, p, times, false, &mut rng);
                for (i, s) in states.iter().enumerate() {
                    vals[i * ls.len() + j] = duality_function(z, s);
                }
            }
            vals
        })
        .collect();

    let mut rows = Vec::with_capacity(width);
    for (i, &t) in times.iter().enumerate() {
        for (j, l) in ls.iter().enumerate() {
            let k = i * ls.len() + j;
            let lhs: Running = fwd.iter().map(|v| v[k]).collect();
            let rhs: Running = dual.iter().map(|v| v[k]).collect();
            let exact = match exact_dual_expectation(p, z, l, t) {
                Ok(v) => Some(v),
                Err(Error::TooLarge { .. }) => None,
                Err(e) => return Err(e),
            };
            rows.push(DualityRow { t, case: j, lhs: lhs.estimate(), rhs: rhs.estimate(), exact });
        }
    }
    Ok(rows)
}

/// Alternating activity and dormancy periods of one lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewalSample {
    /// Active durations, exponential with rate `χ`.
    pub sigma: Vec<f64>,
    /// Dormant durations from the wake-up mixture.
    pub tau: Vec<f64>,
}

pub fn renewal_sample(p: &ModelParams, n: usize, rng: &mut impl Rng) -> RenewalSample {
    let law = WakeupLaw::new(p);
    let active = Exp::new(law.chi()).expect("positive rate");
    let mut sigma = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for _ in 0..n {
        sigma.push(active.sample(rng));
        tau.push(law.sample(rng));
    }
    RenewalSample { sigma, tau }
}

/// Hill estimates of the exponent in `P(τ > t) ≈ t^{-γ}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailFit {
    /// Estimate from the top 1% of the sample.
    pub gamma: Estimate,
    /// Estimate from the top 0.1%.
    pub gamma_deep: Estimate,
    /// False when the two thresholds disagree by more than 3 combined SE,
    /// as for a light (exponential) tail where the Hill estimate keeps growing.
    pub power_law: bool,
}

pub const TAIL_FIT_MIN: usize = 10_000;

fn hill(sorted_desc: &[f64], k: usize) -> Estimate {
    let base = sorted_desc[k].ln();
    let mean = sorted_desc[..k].iter().map(|x| x.ln() - base).sum::<f64>() / k as f64;
    let g = 1.0 / mean;
    Estimate { mean: g, se: g / (k as f64).sqrt() }
}

pub fn tail_fit(sample: &[f64]) -> Result<TailFit> {
    if sample.len() < TAIL_FIT_MIN {
        return Err(Error::Samples(format!("tail fit needs at least {TAIL_FIT_MIN} samples, got {}", sample.len())));
    }
    if sample.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return param("tail fit needs positive finite samples");
    }
    let mut s = sample.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let gamma = hill(&s, s.len() / 100);
    let gamma_deep = hill(&s, s.len() / 1000);
    let power_law = (gamma.mean - gamma_deep.mean).abs() <= 3.0 * gamma.se.hypot(gamma_deep.se);
    Ok(TailFit { gamma, gamma_deep, power_law })
}
