//! Experiment configuration (TOML). Unknown keys are rejected everywhere.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use seedbank::diffusion::{chebyshev_grid, DiffusionFn, GridFunction};
use seedbank::dual::{DualConfig, Role};
use seedbank::forward::Scheme;
use seedbank::params::{Family, InitLaw, InitSpec, ModelParams};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub run: RunConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub levels: usize,
    pub family: FamilyConfig,
    #[serde(default)]
    pub g: GConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    Polynomial { alpha: f64, beta: f64, phi: f64, a: f64, b: f64, f: f64 },
    Exponential { k: f64, e: f64, c: f64 },
    Explicit { c: Vec<f64>, e: Vec<f64>, k: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GConfig {
    FisherWright { d: f64 },
    Grid { nodes: Vec<f64>, values: Vec<f64> },
    /// `d x²(1-x)²` tabulated on the Chebyshev-like grid.
    SquaredFisherWright { d: f64, interior: Option<usize> },
}

impl Default for GConfig {
    fn default() -> Self {
        GConfig::FisherWright { d: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub theta_x: f64,
    pub theta_y: Vec<f64>,
    #[serde(default)]
    pub law: LawConfig,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { theta_x: 0.5, theta_y: vec![0.5], law: LawConfig::Constant }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawConfig {
    #[default]
    Constant,
    Beta { concentration: f64 },
    TwoPoint,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub replicas: usize,
    pub dt: Option<f64>,
    pub scheme: SchemeConfig,
    pub times: Vec<f64>,
    pub record_levels: Vec<usize>,
    pub snapshots: bool,
    /// Equilibrium budget, in relaxation times.
    pub burn_in: f64,
    pub horizon: f64,
    pub batches: usize,
    pub kappa: f64,
    pub grid_interior: usize,
    pub orbit_levels: usize,
    pub chain_k: usize,
    pub profile_k: usize,
    pub epsilon: f64,
    pub hazard: bool,
    pub dual: DualRunConfig,
    pub duality: DualityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            replicas: 100,
            dt: None,
            scheme: SchemeConfig::ExactDormant,
            times: vec![1.0],
            record_levels: vec![0, 1],
            snapshots: false,
            burn_in: 20.0,
            horizon: 4000.0,
            batches: 100,
            kappa: 0.05,
            grid_interior: 41,
            orbit_levels: 5,
            chain_k: 4,
            profile_k: 5,
            epsilon: 0.1,
            hazard: true,
            dual: DualRunConfig::default(),
            duality: DualityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    ExactDormant,
    ExactLinear,
    Euler,
}

impl From<SchemeConfig> for Scheme {
    fn from(s: SchemeConfig) -> Self {
        match s {
            SchemeConfig::ExactDormant => Scheme::ExactDormant,
            SchemeConfig::ExactLinear => Scheme::ExactLinear,
            SchemeConfig::Euler => Scheme::Euler,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineageGroup {
    pub site: usize,
    /// `"active"` or `"dormant"`.
    pub role: String,
    #[serde(default)]
    pub colour: usize,
    pub count: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualRunConfig {
    pub lineages: Vec<LineageGroup>,
    pub horizon: f64,
}

impl Default for DualRunConfig {
    fn default() -> Self {
        Self { lineages: vec![LineageGroup { site: 0, role: "active".into(), colour: 0, count: 2 }], horizon: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualityConfig {
    /// Per-colony active values of the forward start.
    pub x: Vec<f64>,
    /// Colony-major dormant values.
    pub y: Vec<f64>,
    pub cases: Vec<Vec<LineageGroup>>,
    pub times: Vec<f64>,
    pub dt: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            x: vec![0.9, 0.1],
            y: vec![0.5, 0.5],
            cases: vec![vec![LineageGroup { site: 0, role: "active".into(), colour: 0, count: 2 }]],
            times: vec![1.0],
            dt: 1e-3,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("config")
    }

    pub fn diffusion(&self) -> Result<DiffusionFn> {
        let g = match &self.model.g {
            GConfig::FisherWright { d } => DiffusionFn::fisher_wright(*d)?,
            GConfig::Grid { nodes, values } => DiffusionFn::Grid(GridFunction::new(nodes.clone(), values.clone())?),
            GConfig::SquaredFisherWright { d, interior } => {
                if !(d.is_finite() && *d >= 0.0) {
                    bail!("g: d must be finite and >= 0, got {d}");
                }
                let nodes = chebyshev_grid(interior.unwrap_or(self.run.grid_interior));
                DiffusionFn::Grid(GridFunction::sample(nodes, |x| d * x * x * (1.0 - x) * (1.0 - x))?)
            }
        };
        Ok(g)
    }

    pub fn init_spec(&self) -> Result<InitSpec> {
        let law = match self.init.law {
            LawConfig::Constant => InitLaw::Constant,
            LawConfig::Beta { concentration } => InitLaw::Beta { concentration },
            LawConfig::TwoPoint => InitLaw::TwoPoint,
        };
        let s = InitSpec { theta_x: self.init.theta_x, theta_y: self.init.theta_y.clone(), law };
        s.validate().context("init")?;
        Ok(s)
    }

    pub fn model(&self) -> Result<ModelParams> {
        let g = self.diffusion()?;
        let init = self.init_spec()?;
        let m = &self.model;
        let p = match &m.family {
            FamilyConfig::Polynomial { alpha, beta, phi, a, b, f } => ModelParams::from_family(
                m.n,
                m.levels,
                Family::Polynomial { alpha: *alpha, beta: *beta, phi: *phi, a: *a, b: *b, f: *f },
                g,
                init,
            ),
            FamilyConfig::Exponential { k, e, c } => {
                ModelParams::from_family(m.n, m.levels, Family::Exponential { k: *k, e: *e, c: *c }, g, init)
            }
            FamilyConfig::Explicit { c, e, k } => {
                if c.len() != m.levels + 1 {
                    bail!("model: explicit prefixes need levels + 1 = {} entries, got {}", m.levels + 1, c.len());
                }
                ModelParams::explicit(m.n, c.clone(), e.clone(), k.clone(), g, init)
            }
        };
        p.context("model")
    }
}

pub fn lineages(groups: &[LineageGroup], p: &ModelParams) -> Result<DualConfig> {
    let mut cfg = DualConfig::new();
    for g in groups {
        let role = match g.role.as_str() {
            "active" => Role::Active,
            "dormant" => Role::Dormant(g.colour),
            other => bail!("dual: unknown lineage role {other:?} (use \"active\" or \"dormant\")"),
        };
        cfg.add(g.site, role, g.count);
    }
    cfg.validate(p).context("dual")?;
    Ok(cfg)
}
