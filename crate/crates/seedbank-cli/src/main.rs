//! `seedbank`: batch experiments for the hierarchical seed-bank model.

mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use output::{sha256_hex, Manifest};

#[derive(Parser)]
#[command(name = "seedbank", version, about = "Hierarchical Fisher-Wright system with seed-bank: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.replicas`.
    #[arg(long)]
    replicas: Option<usize>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Regime, clustering verdict and the A_n table.
    Classify {
        #[command(flatten)]
        common: Common,
    },
    /// Ensemble of forward SDE runs with block averages.
    SimulateForward {
        #[command(flatten)]
        common: Common,
        /// Single record time replacing `run.times`.
        #[arg(long)]
        t: Option<f64>,
        /// Record levels, comma separated.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
    },
    /// Gillespie runs of the block-counting dual.
    SimulateDual {
        #[command(flatten)]
        common: Common,
        /// Horizon replacing `run.dual.horizon`.
        #[arg(long)]
        t: Option<f64>,
    },
    /// Forward against dual Monte Carlo of the duality function.
    DualityCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<f64>,
    },
    /// Scaled iterates A_n F^(n) g and their distance to x(1-x).
    RenormOrbit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Samples of the interaction chain with predicted moments.
    InteractionChain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Volatility profile A_0^l / A_0^k.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Classify { .. } => "classify",
            Command::SimulateForward { .. } => "simulate-forward",
            Command::SimulateDual { .. } => "simulate-dual",
            Command::DualityCheck { .. } => "duality-check",
            Command::RenormOrbit { .. } => "renorm-orbit",
            Command::InteractionChain { .. } => "interaction-chain",
            Command::Profile { .. } => "profile",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Classify { common }
            | Command::SimulateForward { common, .. }
            | Command::SimulateDual { common, .. }
            | Command::DualityCheck { common, .. }
            | Command::RenormOrbit { common, .. }
            | Command::InteractionChain { common, .. }
            | Command::Profile { common, .. } => common,
        }
    }

    /// Subcommand flags that change the result, for the manifest.
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        if let Some(r) = self.common().replicas {
            m.insert("replicas".into(), r.to_string());
        }
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        match self {
            Command::SimulateForward { t, levels, .. } => {
                put("t", t.map(output::num));
                put("levels", levels.as_ref().map(|l| l.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")));
            }
            Command::SimulateDual { t, .. } | Command::DualityCheck { t, .. } => put("t", t.map(output::num)),
            Command::RenormOrbit { levels, .. } => put("levels", levels.map(|v| v.to_string())),
            Command::InteractionChain { k, .. } => put("k", k.map(|v| v.to_string())),
            Command::Profile { k, epsilon, .. } => {
                put("k", k.map(|v| v.to_string()));
                put("epsilon", epsilon.map(output::num));
            }
            Command::Classify { .. } => {}
        }
        m
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common().clone();
    let text = std::fs::read(&common.config).with_context(|| format!("config: cannot read {}", common.config.display()))?;
    let cfg = ExperimentConfig::parse(std::str::from_utf8(&text).context("config: not UTF-8")?)?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let out = match common.out.clone().or_else(|| cfg.out.clone()) {
        Some(o) => o,
        None => bail!("config: no output directory (set `out` or pass --out)"),
    };
    let ctx = commands::Ctx::new(cfg, seed, common.replicas)?;
    let report = match &cli.command {
        Command::Classify { .. } => commands::classify(&ctx)?,
        Command::SimulateForward { t, levels, .. } => commands::simulate_forward(&ctx, *t, levels.clone())?,
        Command::SimulateDual { t, .. } => commands::simulate_dual_cmd(&ctx, *t)?,
        Command::DualityCheck { t, .. } => commands::duality_check(&ctx, *t)?,
        Command::RenormOrbit { levels, .. } => commands::renorm_orbit(&ctx, *levels)?,
        Command::InteractionChain { k, .. } => commands::interaction_chain(&ctx, *k)?,
        Command::Profile { k, epsilon, .. } => commands::profile(&ctx, *k, *epsilon)?,
    };
    let manifest = Manifest {
        subcommand: cli.command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256: sha256_hex(&text),
        overrides: cli.command.overrides(),
        files: BTreeMap::new(),
    };
    let names: Vec<String> = report.outputs.names().map(String::from).collect();
    report.outputs.commit(&out, manifest)?;
    if !common.quiet {
        println!("{}", report.summary.trim_end());
        println!("wrote {} and manifest.json to {}", names.join(", "), out.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
