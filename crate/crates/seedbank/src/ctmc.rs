//! Finite continuous-time Markov chains: sparse generators, uniformization
//! and the dense matrix exponential used as an independent cross-check.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Generator with off-diagonal rates stored row-wise; the diagonal is implied.
#[derive(Debug, Clone)]
pub struct Generator {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Generator {
    pub fn new(n: usize) -> Self {
        Self { rows: vec![Vec::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds `rate` to the transition `from -> to`. Self loops are ignored.
    pub fn add(&mut self, from: usize, to: usize, rate: f64) {
        if from == to || rate == 0.0 {
            return;
        }
        assert!(rate > 0.0, "negative rate {rate}");
        let row = &mut self.rows[from];
        match row.iter_mut().find(|(j, _)| *j == to) {
            Some(e) => e.1 += rate,
            None => row.push((to, rate)),
        }
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, r)| r).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, r) in row {
                q[(i, j)] += r;
                q[(i, i)] -= r;
            }
        }
        q
    }

    fn max_exit(&self) -> f64 {
        (0..self.len()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    /// `e^{Qt} f` by uniformization.
    pub fn act(&self, f: &[f64], t: f64) -> Result<Vec<f64>> {
        self.uniformize(f, t, |g, out| {
            for (i, row) in self.rows.iter().enumerate() {
                let ex: f64 = row.iter().map(|(_, r)| r).sum();
                out[i] = row.iter().map(|&(j, r)| r * g[j]).sum::<f64>() - ex * g[i];
            }
        })
    }

    /// `p e^{Qt}` by uniformization.
    pub fn evolve(&self, p: &[f64], t: f64) -> Result<Vec<f64>> {
        self.uniformize(p, t, |g, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            for (i, row) in self.rows.iter().enumerate() {
                for &(j, r) in row {
                    out[j] += g[i] * r;
                    out[i] -= g[i] * r;
                }
            }
        })
    }

    fn uniformize(&self, v0: &[f64], t: f64, apply_q: impl Fn(&[f64], &mut [f64])) -> Result<Vec<f64>> {
        if v0.len() != self.len() {
            return Err(Error::Param(format!("vector length {} vs {} states", v0.len(), self.len())));
        }
        if t < 0.0 {
            return Err(Error::Param(format!("negative time {t}")));
        }
        let lam = self.max_exit();
        if lam == 0.0 || t == 0.0 {
            return Ok(v0.to_vec());
        }
        let lt = lam * t;
        // Poisson(lt) weights kept in log space so large lt does not underflow.
        let kmax = (lt + 12.0 * lt.sqrt() + 40.0).ceil() as usize;
        if kmax > 50_000_000 {
            return Err(Error::Accuracy(format!("uniformization needs {kmax} terms")));
        }
        let mut logw = -lt;
        let mut v = v0.to_vec();
        let mut qv = vec![0.0; v.len()];
        let mut acc = vec![0.0; v.len()];
        let mut mass = 0.0;
        for k in 0..=kmax {
            if k > 0 {
                logw += lt.ln() - (k as f64).ln();
                apply_q(&v, &mut qv);
                for (a, b) in v.iter_mut().zip(&qv) {
                    *a += b / lam;
                }
            }
            let w = logw.exp();
            if w > 0.0 {
                mass += w;
                for (a, b) in acc.iter_mut().zip(&v) {
                    *a += w * b;
                }
            }
            if k as f64 > lt && 1.0 - mass < 1e-15 {
                break;
            }
        }
        Ok(acc)
    }
}

/// Dense `e^{Qt}` via nalgebra.
pub fn expm(q: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (q * t).exp()
}
