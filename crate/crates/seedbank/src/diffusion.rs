//! Diffusion functions `g` on `[0, 1]` with `g(0) = g(1) = 0`.

use serde::Serialize;

use crate::error::{param, Result};

/// Piecewise-linear function on a fixed grid of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return param("grid needs at least two nodes and one value per node");
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return param("grid must start at 0 and end at 1");
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return param("grid nodes must be strictly increasing");
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return param("grid values must be finite and non-negative");
        }
        if values[0] != 0.0 || *values.last().unwrap() != 0.0 {
            return param("grid function must vanish at 0 and 1");
        }
        Ok(Self { nodes, values })
    }

    /// Samples `f` on `nodes` and forces the endpoint values to zero.
    pub fn sample(nodes: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let last = nodes.len().saturating_sub(1);
        let values = nodes
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == 0 || i == last { 0.0 } else { f(x) })
            .collect();
        Self::new(nodes, values)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        let i = self.nodes.partition_point(|&n| n <= x);
        let (x0, x1) = (self.nodes[i - 1], self.nodes[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (x - x0) / (x1 - x0)
    }

    pub fn lipschitz(&self) -> f64 {
        self.nodes
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, v)| ((v[1] - v[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Default grid: 41 interior Chebyshev-Lobatto points plus both endpoints.
pub fn chebyshev_grid(interior: usize) -> Vec<f64> {
    let m = interior + 1;
    (0..=m)
        .map(|i| {
            if i == 0 {
                0.0
            } else if i == m {
                1.0
            } else {
                0.5 * (1.0 - (std::f64::consts::PI * i as f64 / m as f64).cos())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionFn {
    /// `d x (1 - x)`.
    FisherWright { d: f64 },
    Grid(GridFunction),
}

impl DiffusionFn {
    pub fn fisher_wright(d: f64) -> Result<Self> {
        if !(d.is_finite() && d >= 0.0) {
            return param(format!("Fisher-Wright rate must be finite and >= 0, got {d}"));
        }
        Ok(DiffusionFn::FisherWright { d })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            DiffusionFn::FisherWright { d } => {
                if x <= 0.0 || x >= 1.0 {
                    0.0
                } else {
                    d * x * (1.0 - x)
                }
            }
            DiffusionFn::Grid(g) => g.eval(x),
        }
    }

    pub fn fisher_wright_rate(&self) -> Option<f64> {
        match self {
            DiffusionFn::FisherWright { d } => Some(*d),
            DiffusionFn::Grid(_) => None,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            DiffusionFn::FisherWright { d } => *d,
            DiffusionFn::Grid(g) => g.lipschitz(),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            DiffusionFn::FisherWright { d } => d / 4.0,
            DiffusionFn::Grid(g) => g.sup(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup() == 0.0
    }

    /// Tabulates on `nodes`; the result is a grid whatever the input kind.
    pub fn on_grid(&self, nodes: &[f64]) -> GridFunction {
        GridFunction::sample(nodes.to_vec(), |x| self.eval(x)).expect("valid diffusion function")
    }
}
