//! Regime classification and clustering verdicts for the declared families.

use serde::Serialize;

use super::{Family, ModelParams};
use crate::error::{Error, Result};

/// Growth class of the slowly varying factor `φ̂(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", content = "power", rename_all = "snake_case")]
pub enum PhiHat {
    Constant,
    /// `(log t)^p`
    LogPower(f64),
    /// `log log t`
    LogLog,
}

impl PhiHat {
    /// `ln φ̂(t)` as a function of `u = ln t` (`u > 1`).
    pub fn ln_at(&self, u: f64) -> f64 {
        match *self {
            PhiHat::Constant => 0.0,
            PhiHat::LogPower(p) => p * u.ln(),
            PhiHat::LogLog => u.ln().ln(),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            PhiHat::Constant => "1".into(),
            PhiHat::LogPower(1.0) => "log t".into(),
            PhiHat::LogPower(p) => format!("(log t)^{p}"),
            PhiHat::LogLog => "log log t".into(),
        }
    }
}

/// Degree of the migration random walk: `a_t(0,0) ≍ t^{-1-δ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Degree {
    Value(f64),
    /// `0^-`: decay `t^{-1}` times a factor that makes the integral diverge.
    ZeroMinus,
    /// `0^+`: decay `t^{-1}` times a factor that makes the integral converge.
    ZeroPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clusters,
    Coexists,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub family: &'static str,
    pub rho_infinite: bool,
    /// Tail exponent of the wake-up time. `None` for generic families.
    pub gamma: Option<f64>,
    pub phi_hat: Option<PhiHat>,
    pub delta: Option<Degree>,
    pub clustering: Option<Verdict>,
    pub criterion_used: &'static str,
}

/// Reads `γ`, `φ̂` and `δ` off the declared family.
///
/// With `ρ < ∞` the wake-up time has a finite mean and the active time scale
/// is not stretched, so `γ = 1` and `φ̂ ≍ 1` there.
pub fn classify_regime(p: &ModelParams) -> RegimeReport {
    let nf = p.n as f64;
    let (rho_infinite, gamma, phi_hat, delta) = match p.family {
        Family::Polynomial { alpha, phi, .. } => {
            let hat = if alpha < 1.0 {
                PhiHat::LogPower(1.0 - alpha)
            } else if alpha == 1.0 {
                PhiHat::LogLog
            } else {
                PhiHat::Constant
            };
            let delta = if phi >= -1.0 { Degree::ZeroMinus } else { Degree::ZeroPlus };
            (alpha <= 1.0, Some(1.0), Some(hat), Some(delta))
        }
        Family::Exponential { k, e, c } => {
            let gamma = if k >= 1.0 { (nf / (k * e)).ln() / (nf / e).ln() } else { 1.0 };
            let hat = if k > 1.0 {
                PhiHat::Constant
            } else if k == 1.0 {
                PhiHat::LogPower(1.0)
            } else {
                PhiHat::Constant
            };
            let delta = Degree::Value(c.ln() / (nf / c).ln());
            (k >= 1.0, Some(gamma), Some(hat), Some(delta))
        }
        Family::Explicit => (false, None, None, None),
    };
    let mut report = RegimeReport {
        family: p.family.name(),
        rho_infinite,
        gamma,
        phi_hat,
        delta,
        clustering: None,
        criterion_used: "unavailable",
    };
    if let Ok((v, why)) = verdict_for(&p.family) {
        report.clustering = Some(v);
        report.criterion_used = why;
    }
    report
}

fn verdict_for(f: &Family) -> Result<(Verdict, &'static str)> {
    let pick = |b: bool| if b { Verdict::Clusters } else { Verdict::Coexists };
    match *f {
        Family::Polynomial { alpha, phi, .. } => {
            if alpha > 1.0 {
                // Σ 1/c_k = Σ (k+1)^φ / F diverges iff φ ≥ -1.
                Ok((pick(phi >= -1.0), "rho_finite_sum_inverse_c"))
            } else {
                Ok((pick(-phi <= alpha), "polynomial_minus_phi_le_alpha_le_1"))
            }
        }
        Family::Exponential { k, c, .. } => {
            if k < 1.0 {
                Ok((pick(c <= 1.0), "rho_finite_sum_inverse_c"))
            } else {
                Ok((pick(k * c <= 1.0), "exponential_kc_le_1_le_k"))
            }
        }
        Family::Explicit => Err(Error::Unsupported(
            "clustering verdict needs a declared polynomial or exponential family".into(),
        )),
    }
}

/// Clustering or coexistence, decided symbolically from the family.
/// Boundary equalities count as clustering.
pub fn clustering_verdict(p: &ModelParams, _report: &RegimeReport) -> Result<Verdict> {
    verdict_for(&p.family).map(|(v, _)| v)
}
