//! Numerical test of the clustering integral
//! `∫^∞ φ̂(t)^{-1/γ} t^{-(1-γ)/γ} a_t(0,0) dt`.
//!
//! The integrand is evaluated in `u = log t` up to `log T` (default 2000,
//! far beyond any floating-point `t`). Growth is judged from increments of
//! the partial integral over doubling windows of an iterated logarithm:
//! depth 0 uses `t`, depth 1 `log t`, depth 2 `log log t`. A slope above the
//! threshold means divergence, below minus the threshold convergence, and in
//! between the next depth is consulted.

use serde::Serialize;

use super::regime::RegimeReport;
use super::{Family, ModelParams};
use crate::error::{Error, Result};
use crate::hiergeo::KernelExpansion;
use crate::stats::{log_sum_exp, ols};

/// Ratio of top to bottom window slope below which the fit counts as drifting.
const DRIFT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardVerdict {
    Divergent,
    Convergent,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HazardConfig {
    pub log_t_max: f64,
    pub du: f64,
    pub threshold: f64,
    pub max_depth: usize,
    /// Integration starts at `t = e^{u0}`.
    pub u0: f64,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self { log_t_max: 2000.0, du: 0.05, threshold: 0.05, max_depth: 2, u0: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HazardReport {
    pub verdict: HazardVerdict,
    /// Depth at which the verdict was reached (or the last one tried).
    pub depth: usize,
    /// Fitted slope per depth visited.
    pub slopes: Vec<f64>,
    /// Migration levels used for `a_t(0,0)`.
    pub levels: usize,
}

/// Levels needed so that every omitted rate is negligible up to `e^{log_t_max}`.
fn deep_expansion(p: &ModelParams, log_t_max: f64) -> Result<KernelExpansion> {
    let ln_n = (p.n as f64).ln();
    let mut log_rates = Vec::new();
    let mut below = 0;
    for l in 1..=200_000usize {
        let lc = p
            .family
            .ln_c_at(l - 1)
            .ok_or_else(|| Error::Unsupported("hazard diagnostic needs a declared family".into()))?;
        let lr = lc - (l - 1) as f64 * ln_n;
        log_rates.push(lr);
        if lr + log_t_max < -60.0 {
            below += 1;
            if below >= 40 {
                return Ok(KernelExpansion::from_log_rates(p.n, log_rates));
            }
        } else {
            below = 0;
        }
    }
    Err(Error::Accuracy("migration rates do not decay fast enough for the requested horizon".into()))
}

pub fn hazard_diagnostic(p: &ModelParams, report: &RegimeReport, cfg: &HazardConfig) -> Result<HazardReport> {
    if matches!(p.family, Family::Explicit) {
        return Err(Error::Unsupported("hazard diagnostic needs a declared family".into()));
    }
    if !report.rho_infinite {
        return Err(Error::Unsupported("hazard integral only decides the infinite-rho regime".into()));
    }
    let gamma = report.gamma.ok_or_else(|| Error::Unsupported("gamma unavailable".into()))?;
    let hat = report.phi_hat.ok_or_else(|| Error::Unsupported("phi-hat unavailable".into()))?;
    let exp = deep_expansion(p, cfg.log_t_max)?;

    // Log density of the integrand with respect to u = log t.
    let steps = ((cfg.log_t_max - cfg.u0) / cfg.du).floor() as usize;
    let us: Vec<f64> = (0..=steps).map(|i| cfg.u0 + i as f64 * cfg.du).collect();
    let dens: Vec<f64> = us
        .iter()
        .map(|&u| -hat.ln_at(u) / gamma - (1.0 - gamma) / gamma * u + exp.log_return_probability(u) + u)
        .collect();
    // Log mass of each trapezoid cell, tagged by its midpoint.
    let cells: Vec<(f64, f64)> = (0..steps)
        .map(|i| {
            let m = log_sum_exp([dens[i], dens[i + 1]]) + (0.5 * cfg.du).ln();
            (0.5 * (us[i] + us[i + 1]), m)
        })
        .collect();

    let u_max = us[steps];
    let mut slopes = Vec::new();
    for depth in 0..=cfg.max_depth {
        // log z_depth as a function of u: z_0 = t, z_1 = log t, z_2 = log log t.
        // Windows [z/2, z] have width ln 2 in log z and are counted down from the top.
        let lz_of = |u: f64| match depth {
            0 => u,
            1 => u.ln(),
            _ => u.ln().ln(),
        };
        let lz_top = lz_of(u_max);
        let lz_min = lz_of(us[0]);
        let width = 2f64.ln();
        let count = ((lz_top - lz_min) / width).floor() as usize;
        let take = match depth {
            0 => count / 2,
            1 => count.min(5),
            _ => count,
        };
        if take < 2 {
            slopes.push(f64::NAN);
            continue;
        }
        let mut xs = Vec::with_capacity(take);
        let mut ys = Vec::with_capacity(take);
        for w in 0..take {
            let hi = lz_top - w as f64 * width;
            let lo = hi - width;
            let mass = log_sum_exp(cells.iter().filter(|(mid, _)| {
                let lz = lz_of(*mid);
                lz > lo && lz <= hi
            }).map(|(_, m)| *m));
            if mass.is_finite() {
                xs.push(hi);
                ys.push(mass);
            }
        }
        if xs.len() < 2 {
            slopes.push(f64::NAN);
            continue;
        }
        let (s, _) = ols(&xs, &ys);
        slopes.push(s);
        // Window-to-window slopes, top first. If they shrink towards zero
        // as z grows, the fitted slope is a transient of a slower scale.
        let local: Vec<f64> = ys.windows(2).map(|w| (w[0] - w[1]) / width).collect();
        let fading = depth > 0
            && local.len() >= 3
            && local[0].signum() == local[local.len() - 1].signum()
            && local[0].abs() < DRIFT * local[local.len() - 1].abs();
        if fading {
            continue;
        }
        if s > cfg.threshold {
            return Ok(HazardReport { verdict: HazardVerdict::Divergent, depth, slopes, levels: exp.levels() });
        }
        if s < -cfg.threshold {
            return Ok(HazardReport { verdict: HazardVerdict::Convergent, depth, slopes, levels: exp.levels() });
        }
    }
    Ok(HazardReport { verdict: HazardVerdict::Inconclusive, depth: cfg.max_depth, slopes, levels: exp.levels() })
}
