//! Model parameters, derived constants and the wake-up time law.
//!
//! Coefficient sequences are indexed from zero: `c_k` is the migration
//! coefficient for level `k + 1`, `K_m` and `e_m` describe seed-bank colour
//! `m`. A model truncated at `levels = k` stores `k + 1` entries of each.

mod coeffs;
mod hazard;
mod regime;

pub use coeffs::{asymptotic_class, compute_a, compute_A, AsymptoticClass, AsymptoticForm, ClusteringCoefficients};
pub use hazard::{hazard_diagnostic, HazardConfig, HazardReport, HazardVerdict};
pub use regime::{classify_regime, clustering_verdict, Degree, PhiHat, RegimeReport, Verdict};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::diffusion::DiffusionFn;
use crate::error::{param, Result};
use crate::hiergeo::{KernelSpec, GROWTH_BOUND};

/// Parametric shape of `(K, e, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `K_k = A (k+1)^{-α}`, `e_k = B (k+1)^{-β}`, `c_k = F (k+1)^{-φ}`.
    Polynomial { alpha: f64, beta: f64, phi: f64, a: f64, b: f64, f: f64 },
    /// `K_k = K^k`, `e_k = e^k`, `c_k = c^k`.
    Exponential { k: f64, e: f64, c: f64 },
    /// Prefixes given directly; nothing is known beyond them.
    Explicit,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Polynomial { .. } => "polynomial",
            Family::Exponential { .. } => "exponential",
            Family::Explicit => "generic",
        }
    }

    pub fn k_at(&self, m: usize) -> Option<f64> {
        match *self {
            Family::Polynomial { alpha, a, .. } => Some(a * (m as f64 + 1.0).powf(-alpha)),
            Family::Exponential { k, .. } => Some(k.powi(m as i32)),
            Family::Explicit => None,
        }
    }

    pub fn e_at(&self, m: usize) -> Option<f64> {
        match *self {
            Family::Polynomial { beta, b, .. } => Some(b * (m as f64 + 1.0).powf(-beta)),
            Family::Exponential { e, .. } => Some(e.powi(m as i32)),
            Family::Explicit => None,
        }
    }

    pub fn c_at(&self, m: usize) -> Option<f64> {
        self.ln_c_at(m).map(f64::exp)
    }

    /// `ln c_m`, usable far beyond the point where `c_m` itself overflows.
    pub fn ln_c_at(&self, m: usize) -> Option<f64> {
        match *self {
            Family::Polynomial { phi, f, .. } => Some(f.ln() - phi * (m as f64 + 1.0).ln()),
            Family::Exponential { c, .. } => Some(m as f64 * c.ln()),
            Family::Explicit => None,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let nf = n as f64;
        match *self {
            Family::Polynomial { alpha, beta, phi, a, b, f } => {
                for (name, v) in [("alpha", alpha), ("beta", beta), ("phi", phi)] {
                    if !v.is_finite() {
                        return param(format!("{name} must be finite"));
                    }
                }
                for (name, v) in [("A", a), ("B", b), ("F", f)] {
                    if !(v.is_finite() && v > 0.0) {
                        return param(format!("amplitude {name} must be > 0, got {v}"));
                    }
                }
            }
            Family::Exponential { k, e, c } => {
                for (name, v) in [("K", k), ("e", e), ("c", c)] {
                    if !(v.is_finite() && v > 0.0) {
                        return param(format!("{name} must be > 0, got {v}"));
                    }
                }
                // Finite total migration and exchange rates per individual.
                if c >= nf {
                    return param(format!("c = {c} must be < N = {n}"));
                }
                if e >= nf || k * e >= nf {
                    return param(format!("need e < N and K e < N, got e = {e}, K e = {}", k * e));
                }
            }
            Family::Explicit => {}
        }
        Ok(())
    }
}

/// Law of the initial configuration. Every colony is drawn independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitLaw {
    Constant,
    /// Beta with the prescribed mean and `a + b = concentration`.
    Beta { concentration: f64 },
    /// Values 0 or 1 with the prescribed mean.
    TwoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitSpec {
    pub theta_x: f64,
    /// `θ_{y_m}`; the last entry is repeated for higher colours.
    pub theta_y: Vec<f64>,
    pub law: InitLaw,
}

impl InitSpec {
    pub fn constant(theta: f64) -> Self {
        Self { theta_x: theta, theta_y: vec![theta], law: InitLaw::Constant }
    }

    pub fn theta_y(&self, m: usize) -> f64 {
        self.theta_y[m.min(self.theta_y.len() - 1)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_y.is_empty() {
            return param("theta_y needs at least one entry");
        }
        for v in std::iter::once(self.theta_x).chain(self.theta_y.iter().copied()) {
            if !(0.0..=1.0).contains(&v) {
                return param(format!("initial mean {v} outside [0, 1]"));
            }
        }
        if let InitLaw::Beta { concentration } = self.law {
            if !(concentration.is_finite() && concentration > 0.0) {
                return param(format!("beta concentration must be > 0, got {concentration}"));
            }
        }
        Ok(())
    }

    /// Draws one value with mean `theta` under the configured law.
    pub fn draw(&self, theta: f64, rng: &mut impl Rng) -> f64 {
        match self.law {
            InitLaw::Constant => theta,
            InitLaw::TwoPoint => f64::from(u8::from(rng.random::<f64>() < theta)),
            InitLaw::Beta { concentration } => {
                if theta <= 0.0 || theta >= 1.0 {
                    theta
                } else {
                    rand_distr::Beta::new(theta * concentration, (1.0 - theta) * concentration)
                        .expect("validated beta parameters")
                        .sample(rng)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub n: usize,
    pub levels: usize,
    pub c: Vec<f64>,
    pub e: Vec<f64>,
    pub k: Vec<f64>,
    pub family: Family,
    pub g: DiffusionFn,
    pub init: InitSpec,
}

impl ModelParams {
    /// Fills the stored prefixes from a parametric family.
    pub fn from_family(n: usize, levels: usize, family: Family, g: DiffusionFn, init: InitSpec) -> Result<Self> {
        if family == Family::Explicit {
            return param("explicit family needs coefficient vectors, use ModelParams::explicit");
        }
        family.validate(n)?;
        let c = (0..=levels).map(|m| family.c_at(m).unwrap()).collect();
        let e = (0..=levels).map(|m| family.e_at(m).unwrap()).collect();
        let k = (0..=levels).map(|m| family.k_at(m).unwrap()).collect();
        let p = Self { n, levels, c, e, k, family, g, init };
        p.validate()?;
        Ok(p)
    }

    pub fn explicit(n: usize, c: Vec<f64>, e: Vec<f64>, k: Vec<f64>, g: DiffusionFn, init: InitSpec) -> Result<Self> {
        if c.is_empty() || c.len() != e.len() || c.len() != k.len() {
            return param("c, e and K must be non-empty and of equal length");
        }
        let p = Self { n, levels: c.len() - 1, c, e, k, family: Family::Explicit, g, init };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return param(format!("N must be >= 2, got {}", self.n));
        }
        let len = self.levels + 1;
        if self.c.len() != len || self.e.len() != len || self.k.len() != len {
            return param(format!("coefficient prefixes must have {len} entries"));
        }
        let ln_n = (self.n as f64).ln();
        for m in 0..len {
            for (name, v) in [("c", self.c[m]), ("e", self.e[m]), ("K", self.k[m])] {
                if !(v.is_finite() && v > 0.0) {
                    return param(format!("{name}_{m} = {v} must be finite and > 0"));
                }
            }
            let bound = GROWTH_BOUND.ln() + m as f64 * ln_n;
            if self.c[m].ln() > bound {
                return param(format!("c_{m} = {} violates the growth condition", self.c[m]));
            }
            if (self.k[m] * self.e[m]).ln() > bound || self.e[m].ln() > bound {
                return param(format!("K_{m} e_{m} violates the growth condition"));
            }
        }
        self.family.validate(self.n)?;
        self.init.validate()?;
        if let Some(d) = self.g.fisher_wright_rate() {
            if !(d.is_finite() && d >= 0.0) {
                return param(format!("Fisher-Wright rate {d} invalid"));
            }
        }
        Ok(())
    }

    /// Number of colonies of the truncated system, `N^{levels+1}`.
    pub fn colonies(&self) -> usize {
        self.n.pow(self.levels as u32 + 1)
    }

    pub fn kernel(&self) -> KernelSpec {
        KernelSpec::new(self.n, self.c.clone()).expect("validated coefficients")
    }

    /// Per-individual exchange rate of colour `m`: wake-up at `e_m/N^m`.
    pub fn wake_rate(&self, m: usize) -> f64 {
        self.e[m] / (self.n as f64).powi(m as i32)
    }

    /// Fall-asleep rate into colour `m`: `K_m e_m / N^m`.
    pub fn sleep_rate(&self, m: usize) -> f64 {
        self.k[m] * self.wake_rate(m)
    }

    pub fn fisher_wright_rate(&self) -> Option<f64> {
        self.g.fisher_wright_rate()
    }
}

/// Total of `Σ K_m`, either finite or divergent by declaration of the family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Rho {
    Finite(f64),
    Infinite,
}

impl Rho {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Rho::Infinite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedParams {
    pub rho: Rho,
    /// `Σ K_m` over the stored colours.
    pub rho_prefix: f64,
    /// `Σ K_m e_m / N^m` over the stored colours.
    pub chi: f64,
    /// `E_k` for `k = 0..=levels+1`.
    pub e_slow: Vec<f64>,
    /// `ϑ_k` for `k = 0..=levels`.
    pub theta_seq: Vec<f64>,
    /// Mean wake-up time of the stored colour mixture, `rho_prefix / chi`.
    pub mean_wakeup: f64,
}

/// Riemann zeta for `s > 1` by Euler-Maclaurin with a short explicit head.
pub(crate) fn zeta(s: f64) -> f64 {
    let m = 64.0f64;
    let head: f64 = (1..64).map(|k| (k as f64).powf(-s)).sum();
    let tail = m.powf(1.0 - s) / (s - 1.0) + 0.5 * m.powf(-s) + s * m.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * m.powf(-s - 3.0) / 720.0;
    head + tail
}

pub fn derive(p: &ModelParams) -> Result<DerivedParams> {
    p.validate()?;
    let len = p.levels + 1;
    let rho_prefix: f64 = p.k.iter().sum();
    let rho = match p.family {
        Family::Polynomial { alpha, a, .. } => {
            if alpha <= 1.0 {
                Rho::Infinite
            } else {
                Rho::Finite(a * zeta(alpha))
            }
        }
        Family::Exponential { k, .. } => {
            if k >= 1.0 {
                Rho::Infinite
            } else {
                Rho::Finite(1.0 / (1.0 - k))
            }
        }
        Family::Explicit => Rho::Finite(rho_prefix),
    };
    let chi: f64 = (0..len).map(|m| p.sleep_rate(m)).sum();
    let mut e_slow = Vec::with_capacity(len + 1);
    let mut acc = 0.0;
    for m in 0..=len {
        e_slow.push(1.0 / (1.0 + acc));
        if m < len {
            acc += p.k[m];
        }
    }
    let mut theta_seq = Vec::with_capacity(len);
    let (mut num, mut den) = (p.init.theta_x, 1.0);
    for m in 0..len {
        num += p.k[m] * p.init.theta_y(m);
        den += p.k[m];
        theta_seq.push(num / den);
    }
    Ok(DerivedParams { rho, rho_prefix, chi, e_slow, theta_seq, mean_wakeup: rho_prefix / chi })
}

/// Wake-up time law: the colour is picked with probability
/// `K_m e_m N^{-m} / χ`, then the sleep lasts an exponential with rate
/// `e_m/N^m`.
#[derive(Debug, Clone)]
pub struct WakeupLaw {
    weights: Vec<f64>,
    rates: Vec<f64>,
    cum: Vec<f64>,
    chi: f64,
}

impl WakeupLaw {
    pub fn new(p: &ModelParams) -> Self {
        let len = p.levels + 1;
        let weights: Vec<f64> = (0..len).map(|m| p.sleep_rate(m)).collect();
        let rates: Vec<f64> = (0..len).map(|m| p.wake_rate(m)).collect();
        let chi = weights.iter().sum();
        let cum = weights
            .iter()
            .scan(0.0, |s, w| {
                *s += w;
                Some(*s)
            })
            .collect();
        Self { weights, rates, cum, chi }
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn tail(&self, t: f64) -> f64 {
        self.weights.iter().zip(&self.rates).map(|(w, r)| w * (-r * t).exp()).sum::<f64>() / self.chi
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.rates).map(|(w, r)| w / r).sum::<f64>() / self.chi
    }

    pub fn sample_colour(&self, rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * self.chi;
        self.cum.partition_point(|&c| c <= u).min(self.cum.len() - 1)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let m = self.sample_colour(rng);
        Exp::new(self.rates[m]).expect("positive rate").sample(rng)
    }
}
