//! Truncated hierarchical group, migration kernel and the time-t law of the
//! hierarchical random walk.
//!
//! Addresses keep their digits least-significant first, so the colony index
//! `Σ d_l N^l` enumerates the block `B_k(0)` as `0..N^k`.

use rand::Rng;
use serde::Serialize;

use crate::error::{param, Error, Result};
use crate::stats::log_sum_exp;

/// Upper bound on `c_k / N^k` accepted for a stored prefix.
pub const GROWTH_BOUND: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HierAddress {
    digits: Vec<u32>,
    n: u32,
}

impl HierAddress {
    pub fn new(digits: Vec<u32>, n: u32) -> Result<Self> {
        if n < 2 {
            return param(format!("group order must be >= 2, got {n}"));
        }
        if let Some(d) = digits.iter().find(|&&d| d >= n) {
            return param(format!("digit {d} out of range for N = {n}"));
        }
        Ok(Self { digits, n })
    }

    pub fn zero(n: u32, len: usize) -> Self {
        Self { digits: vec![0; len], n }
    }

    pub fn from_index(mut idx: usize, n: u32, len: usize) -> Self {
        let mut digits = vec![0; len];
        for d in digits.iter_mut() {
            *d = (idx % n as usize) as u32;
            idx /= n as usize;
        }
        debug_assert_eq!(idx, 0, "index outside the truncated group");
        Self { digits, n }
    }

    pub fn index(&self) -> usize {
        self.digits.iter().rev().fold(0, |acc, &d| acc * self.n as usize + d as usize)
    }

    pub fn digits(&self) -> &[u32] {
        &self.digits
    }

    pub fn order(&self) -> u32 {
        self.n
    }

    /// Number of digits, i.e. the address lives in `B_len(0)`.
    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    fn check(&self, o: &Self) -> Result<()> {
        if self.n != o.n || self.digits.len() != o.digits.len() {
            return param(format!(
                "addresses differ in shape: N={} len={} vs N={} len={}",
                self.n,
                self.len(),
                o.n,
                o.len()
            ));
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let digits = self.digits.iter().zip(&o.digits).map(|(a, b)| (a + b) % self.n).collect();
        Ok(Self { digits, n: self.n })
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        let digits = self.digits.iter().zip(&o.digits).map(|(a, b)| (a + self.n - b) % self.n).collect();
        Ok(Self { digits, n: self.n })
    }

    /// Hierarchical distance: the smallest `k` such that the digits agree
    /// from index `k` upwards.
    pub fn distance(&self, o: &Self) -> Result<usize> {
        self.check(o)?;
        Ok(index_distance(self.index(), o.index(), self.n as usize))
    }

    /// Base-N digit string, least significant first.
    pub fn to_digit_string(&self) -> String {
        self.digits
            .iter()
            .map(|&d| std::char::from_digit(d, 36).unwrap_or('?'))
            .collect()
    }
}

/// Distance between two colony indices of the same truncated group.
pub fn index_distance(mut a: usize, mut b: usize, n: usize) -> usize {
    let mut k = 0;
    while a != b {
        a /= n;
        b /= n;
        k += 1;
    }
    k
}

/// Migration coefficients `c_0..c_{L-1}` on `B_L`. Level `l` jumps (rate
/// `R_l = c_{l-1}/N^{l-1}`) land uniformly in the `l`-block.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    n: usize,
    c: Vec<f64>,
    rates: Vec<f64>,
    cum_choice: Vec<f64>,
    cum_out: Vec<f64>,
}

impl KernelSpec {
    pub fn new(n: usize, c: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return param(format!("group order must be >= 2, got {n}"));
        }
        if c.is_empty() {
            return param("need at least one migration coefficient");
        }
        for (k, &ck) in c.iter().enumerate() {
            if !(ck.is_finite() && ck > 0.0) {
                return param(format!("c_{k} = {ck} must be finite and > 0"));
            }
            if ck.ln() - k as f64 * (n as f64).ln() > GROWTH_BOUND.ln() {
                return param(format!("c_{k} = {ck} grows faster than N^k allows"));
            }
        }
        let rates: Vec<f64> = c.iter().enumerate().map(|(k, ck)| ck / (n as f64).powi(k as i32)).collect();
        let mut cum_choice = Vec::with_capacity(rates.len());
        let mut cum_out = Vec::with_capacity(rates.len());
        let (mut s, mut o) = (0.0, 0.0);
        for (i, r) in rates.iter().enumerate() {
            s += r;
            o += r * (1.0 - (n as f64).powi(-(i as i32 + 1)));
            cum_choice.push(s);
            cum_out.push(o);
        }
        Ok(Self { n, c, rates, cum_choice, cum_out })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Number of migration levels `L`; the group is `B_L` with `N^L` colonies.
    pub fn levels(&self) -> usize {
        self.c.len()
    }

    pub fn colonies(&self) -> usize {
        self.n.pow(self.levels() as u32)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    /// `R_l` for `l = 1..=L`.
    pub fn level_rate(&self, l: usize) -> f64 {
        self.rates[l - 1]
    }

    /// `Σ_l R_l`: the rate at which a block is chosen, self included.
    pub fn block_choice_rate(&self) -> f64 {
        *self.cum_choice.last().unwrap()
    }

    /// `Σ_{b≠a} a(a, b) = Σ_l R_l (1 - N^{-l})`.
    pub fn total_outflow(&self) -> f64 {
        *self.cum_out.last().unwrap()
    }

    pub fn migration_rate(&self, a: &HierAddress, b: &HierAddress) -> Result<f64> {
        self.check_addr(a)?;
        let d = a.distance(b)?;
        Ok(self.rate_at_distance(d))
    }

    /// `Σ_{k ≥ d} c_{k-1} N^{-(2k-1)}`, zero at distance 0.
    pub fn rate_at_distance(&self, d: usize) -> f64 {
        if d == 0 {
            return 0.0;
        }
        let nf = self.n as f64;
        (d..=self.levels()).map(|k| self.c[k - 1] * nf.powi(-(2 * k as i32 - 1))).sum()
    }

    fn check_addr(&self, a: &HierAddress) -> Result<()> {
        if a.order() as usize != self.n || a.len() != self.levels() {
            return param(format!(
                "address (N={}, len={}) does not fit kernel (N={}, L={})",
                a.order(),
                a.len(),
                self.n,
                self.levels()
            ));
        }
        Ok(())
    }

    fn pick(cum: &[f64], rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * cum.last().unwrap();
        cum.partition_point(|&c| c <= u).min(cum.len() - 1) + 1
    }

    /// Picks a level with probability `∝ R_l` and a uniform colony of that
    /// block; the colony may be the starting one.
    pub fn sample_migration_jump(&self, a: &HierAddress, rng: &mut impl Rng) -> HierAddress {
        let l = Self::pick(&self.cum_choice, rng);
        let block = self.n.pow(l as u32);
        let base = a.index() - a.index() % block;
        HierAddress::from_index(base + rng.random_range(0..block), a.order(), a.len())
    }

    /// Jump of the walk with rates `a(a, ·)`: never returns `a` itself.
    pub fn sample_jump_index(&self, from: usize, rng: &mut impl Rng) -> usize {
        self.sample_excluding_self(from, rng).0
    }

    /// Returns `(target, level)` for a real move out of `from`.
    pub fn sample_excluding_self(&self, from: usize, rng: &mut impl Rng) -> (usize, usize) {
        let l = Self::pick(&self.cum_out, rng);
        let block = self.n.pow(l as u32);
        let base = from - from % block;
        let off = from % block;
        let mut r = rng.random_range(0..block - 1);
        if r >= off {
            r += 1;
        }
        (base + r, l)
    }

    pub fn expansion(&self) -> KernelExpansion {
        KernelExpansion::from_log_rates(self.n, self.rates.iter().map(|r| r.ln()).collect())
    }
}

/// Eigen-decomposition of the walk on `B_L`: exponentials `e^{-D h_j t}`
/// weighted by `K_jk N^{-j}`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelExpansion {
    pub n: usize,
    /// `D`: total outflow rate.
    pub d: f64,
    /// `r_j`, `j = 1..=L`; sums to one.
    pub r: Vec<f64>,
    /// `h_j`, `j = 1..=L`; the walk's eigen-rates are `D h_j`.
    pub h: Vec<f64>,
    log_rates: Vec<f64>,
    log_tail: Vec<f64>,
}

impl KernelExpansion {
    /// Builds from `log R_l`, `l = 1..=L`. Log input lets deep truncations
    /// with tiny rates stay finite.
    pub fn from_log_rates(n: usize, log_rates: Vec<f64>) -> Self {
        let l_max = log_rates.len();
        let nf = n as f64;
        let mut log_tail = vec![f64::NEG_INFINITY; l_max + 1];
        for j in (0..l_max).rev() {
            log_tail[j] = log_sum_exp([log_tail[j + 1], log_rates[j]]);
        }
        let rates: Vec<f64> = log_rates.iter().map(|v| v.exp()).collect();
        let d: f64 = rates.iter().enumerate().map(|(i, r)| r * (1.0 - nf.powi(-(i as i32 + 1)))).sum();
        // s_j = Σ_{l ≥ j} R_l N^{-(l-j)}, built from the top down.
        let mut s = vec![0.0; l_max + 1];
        for j in (0..l_max).rev() {
            s[j] = rates[j] + s[j + 1] / nf;
        }
        let r: Vec<f64> = (0..l_max).map(|j| (nf - 1.0) / nf * s[j] / d).collect();
        let mut h = vec![0.0; l_max];
        let mut above = 0.0;
        for j in (0..l_max).rev() {
            h[j] = nf / (nf - 1.0) * r[j] + above;
            above += r[j];
        }
        Self { n, d, r, h, log_rates, log_tail }
    }

    pub fn levels(&self) -> usize {
        self.r.len()
    }

    /// `D h_j`, the decay rate of the level-`j` mode.
    pub fn eigen_rate(&self, j: usize) -> f64 {
        self.d * self.h[j - 1]
    }

    /// `log Σ_{l ≥ j} R_l`, computed straight from the rates.
    pub fn log_tail_rate(&self, j: usize) -> f64 {
        self.log_tail[j - 1]
    }

    pub fn k_coef(&self, j: usize, k: usize) -> f64 {
        if j == 0 || j < k {
            0.0
        } else if j == k {
            -1.0
        } else {
            self.n as f64 - 1.0
        }
    }

    fn series(&self, t: f64, k: usize) -> f64 {
        let nf = self.n as f64;
        (k.max(1)..=self.levels())
            .map(|j| self.k_coef(j, k) * (-self.eigen_rate(j) * t).exp() * nf.powi(-(j as i32)))
            .sum()
    }

    /// `a_t(0, η)` for `η` at distance `k` on the truncated group `B_L`.
    pub fn transition_kernel(&self, t: f64, k: usize) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return param(format!("time must be >= 0, got {t}"));
        }
        if k > self.levels() {
            return param(format!("distance {k} exceeds truncation {}", self.levels()));
        }
        Ok(self.series(t, k) + (self.n as f64).powi(-(self.levels() as i32)))
    }

    /// Untruncated-group approximation. The neglected remainder is at most
    /// `N^{-L}`; if that exceeds `tol` the call fails rather than guess.
    pub fn transition_kernel_infinite(&self, t: f64, k: usize, tol: f64) -> Result<f64> {
        let bound = (self.n as f64).powi(-(self.levels() as i32));
        if bound > tol {
            return Err(Error::Accuracy(format!(
                "truncation at {} levels leaves remainder up to {bound:e} > {tol:e}",
                self.levels()
            )));
        }
        if k > self.levels() {
            return Err(Error::Accuracy(format!("distance {k} beyond truncation {}", self.levels())));
        }
        Ok(self.series(t, k).max(0.0))
    }

    /// `log a_t(0, 0)` for the untruncated walk at `t = e^{log_t}`, summed in
    /// log space so that `t` up to `e^{700}` and beyond stays finite.
    pub fn log_return_probability(&self, log_t: f64) -> f64 {
        let ln_n = (self.n as f64).ln();
        let ln_nm1 = (self.n as f64 - 1.0).ln();
        // Streaming log-sum-exp; low levels underflow to nothing for large t.
        let (mut m, mut s) = (f64::NEG_INFINITY, 0.0);
        for j in 1..=self.levels() {
            let decay = (log_t + self.log_tail[j - 1]).exp();
            if decay > 800.0 {
                continue;
            }
            let v = ln_nm1 - j as f64 * ln_n - decay;
            if v > m {
                s = s * (m - v).exp() + 1.0;
                m = v;
            } else {
                s += (v - m).exp();
            }
        }
        m + s.ln()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelRow {
    pub level: usize,
    pub c_k: f64,
    pub r_k: f64,
    pub h_k: f64,
}

/// Rows for the `level,c_k,r_k,h_k` kernel table.
pub fn kernel_table(spec: &KernelSpec) -> Vec<KernelRow> {
    let e = spec.expansion();
    (1..=spec.levels())
        .map(|l| KernelRow { level: l, c_k: spec.coefficients()[l - 1], r_k: e.r[l - 1], h_k: e.h[l - 1] })
        .collect()
}
