//! Clustering coefficients `A_n`, the blocks `A_m^n`, `B_m`, and their
//! asymptotic classes.

use serde::Serialize;

use super::{DerivedParams, Family, ModelParams, Rho};
use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AsymptoticForm {
    /// `ratio^{n-1}`
    Geometric { ratio: f64 },
    /// `n^{-1} ratio^{n-1}`
    GeometricOverN { ratio: f64 },
    /// `n^p`
    Power { p: f64 },
    /// `n^p / log n`
    PowerOverLog { p: f64 },
    LogN,
    LogLogN,
    /// `Σ_{k<n} 1/c_k`
    InverseCSum,
    /// `A_n` has a finite limit.
    Bounded,
    /// No closed-form class is known.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticClass {
    pub name: &'static str,
    pub form: AsymptoticForm,
    pub constant: f64,
    #[serde(skip)]
    family: Family,
}

impl AsymptoticClass {
    fn new(name: &'static str, form: AsymptoticForm, constant: f64, family: Family) -> Self {
        Self { name, form, constant, family }
    }

    fn unknown(name: &'static str, form: AsymptoticForm, family: Family) -> Self {
        Self::new(name, form, f64::NAN, family)
    }

    /// Predicted value of `A_n`, or `None` when the class has no growth law.
    pub fn predict(&self, n: usize) -> Option<f64> {
        let nf = n as f64;
        let shape = match self.form {
            AsymptoticForm::Geometric { ratio } => ratio.powf(nf - 1.0),
            AsymptoticForm::GeometricOverN { ratio } => ratio.powf(nf - 1.0) / nf,
            AsymptoticForm::Power { p } => nf.powf(p),
            AsymptoticForm::PowerOverLog { p } => nf.powf(p) / nf.ln(),
            AsymptoticForm::LogN => nf.ln(),
            AsymptoticForm::LogLogN => nf.ln().ln(),
            AsymptoticForm::InverseCSum => (0..n).map(|k| 1.0 / self.family.c_at(k).unwrap()).sum(),
            AsymptoticForm::Bounded | AsymptoticForm::Generic => return None,
        };
        Some(self.constant * shape)
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Matches the declared family against the table of growth laws.
///
/// On the `c = K e` line the listed constants carry the factor `(K-1)^2`;
/// the value `A_n` actually approaches is `K/(K-1)` times larger.
pub fn asymptotic_class(family: &Family, rho: Rho) -> AsymptoticClass {
    use AsymptoticForm::*;
    let fam = *family;
    match *family {
        Family::Polynomial { alpha, phi, a, f, .. } => match rho {
            Rho::Finite(r) => {
                if phi >= -1.0 {
                    AsymptoticClass::new("rho_finite", InverseCSum, 1.0 / (2.0 * (1.0 + r)), fam)
                } else {
                    AsymptoticClass::unknown("bounded", Bounded, fam)
                }
            }
            Rho::Infinite if alpha < 1.0 => {
                let s = alpha + phi;
                if near(s, 0.0) {
                    AsymptoticClass::new("C2", LogN, (1.0 - alpha) / (2.0 * a * f), fam)
                } else if s > 0.0 {
                    AsymptoticClass::new("C1", Power { p: s }, (1.0 - alpha) / (2.0 * a * f * s), fam)
                } else {
                    AsymptoticClass::unknown("bounded", Bounded, fam)
                }
            }
            Rho::Infinite => {
                let s = 1.0 + phi;
                if near(s, 0.0) {
                    AsymptoticClass::new("C4", LogLogN, 1.0 / (2.0 * a * f), fam)
                } else if s > 0.0 {
                    AsymptoticClass::new("C3", PowerOverLog { p: s }, 1.0 / (2.0 * a * f * s), fam)
                } else {
                    AsymptoticClass::unknown("bounded", Bounded, fam)
                }
            }
        },
        Family::Exponential { k, e, c } => {
            if k < 1.0 {
                return match rho {
                    Rho::Finite(r) if c <= 1.0 => {
                        AsymptoticClass::new("rho_finite", InverseCSum, 1.0 / (2.0 * (1.0 + r)), fam)
                    }
                    _ => AsymptoticClass::unknown("bounded", Bounded, fam),
                };
            }
            let kc = k * c;
            if near(k, 1.0) {
                return if near(c, 1.0) {
                    AsymptoticClass::new("C~2", LogN, 0.5, fam)
                } else if c < 1.0 {
                    AsymptoticClass::new("C~1", GeometricOverN { ratio: 1.0 / c }, 1.0 / (2.0 * (1.0 - c)), fam)
                } else {
                    AsymptoticClass::unknown("bounded", Bounded, fam)
                };
            }
            if kc > 1.0 && !near(kc, 1.0) {
                return AsymptoticClass::unknown("bounded", Bounded, fam);
            }
            let ke = k * e;
            let line = if near(c, ke) {
                2
            } else if c < ke {
                1
            } else {
                3
            };
            if near(kc, 1.0) {
                let (name, cst) = match line {
                    1 => ("C-1", (k - 1.0) / (2.0 * k)),
                    2 => ("C-2", (k - 1.0).powi(2) / (2.0 * (2.0 * k - 1.0))),
                    _ => ("C-3", (k - 1.0) / 2.0),
                };
                AsymptoticClass::new(name, Power { p: 1.0 }, cst, fam)
            } else {
                let (name, cst) = match line {
                    1 => ("C^1", (k - 1.0) / (2.0 * k * (1.0 - kc))),
                    2 => ("C^2", (k - 1.0).powi(2) / (2.0 * (2.0 * k - 1.0) * (1.0 - kc))),
                    _ => ("C^3", (k - 1.0) / (2.0 * (1.0 - kc))),
                };
                AsymptoticClass::new(name, Geometric { ratio: 1.0 / kc }, cst, fam)
            }
        }
        Family::Explicit => AsymptoticClass::unknown("generic", Generic, fam),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteringCoefficients {
    /// `A_n` for `n = 0..=n_max+1`; `A_0 = 0`.
    pub a: Vec<f64>,
    /// `A_k^k` for `k = 0..=n_max`.
    pub diag: Vec<f64>,
    /// `B_m` for `m = 0..=n_max`.
    pub b: Vec<f64>,
    pub asymptotic: AsymptoticClass,
}

impl ClusteringCoefficients {
    /// `A_m^n = Σ_{k=m}^{n} A_k^k`; zero when `n < m`.
    pub fn a_block(&self, m: usize, n: usize) -> f64 {
        if n < m {
            0.0
        } else {
            self.a[n + 1] - self.a[m]
        }
    }
}

/// `A_k^k` and `B_k` straight from prefixes. `K = e = 0` is allowed here
/// and describes the system without seed-bank.
pub fn compute_a(c: &[f64], e: &[f64], k: &[f64], n_max: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if n_max >= c.len() || n_max >= e.len() || n_max >= k.len() {
        return param(format!("n_max = {n_max} exceeds the stored prefixes"));
    }
    let mut diag = Vec::with_capacity(n_max + 1);
    let mut b = Vec::with_capacity(n_max + 1);
    let mut a = vec![0.0];
    let mut ksum = 0.0;
    for m in 0..=n_max {
        let em = 1.0 / (1.0 + ksum);
        let active = em * c[m] + e[m];
        let den = active + em * k[m] * e[m];
        let d = 0.5 * em / c[m] * active / den;
        diag.push(d);
        b.push(0.5 * em * em / den);
        a.push(a[m] + d);
        ksum += k[m];
    }
    Ok((a, diag, b))
}

#[allow(non_snake_case)]
pub fn compute_A(p: &ModelParams, derived: &DerivedParams, n_max: usize) -> Result<ClusteringCoefficients> {
    if n_max > p.levels {
        return param(format!("n_max = {n_max} exceeds stored levels {}", p.levels));
    }
    let (a, diag, b) = compute_a(&p.c, &p.e, &p.k, n_max)?;
    Ok(ClusteringCoefficients { a, diag, b, asymptotic: asymptotic_class(&p.family, derived.rho) })
}
