//! Command-line front end: scenario loading, persistence and the subcommands.

pub mod commands;
pub mod output;
pub mod scenario;
pub mod snapshot;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

pub use commands::execute;
pub use scenario::{load_scenario, Scenario};

#[derive(Debug, Parser)]
#[command(name = "yamabe", version, about = "Prescribed scalar curvature Yamabe flow laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; defaults to the scenario's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for pointwise kernels.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Halt early at a flow time (`2.5`, `t:2.5`) or step count (`steps:400`).
    #[arg(long)]
    pub until: Option<Until>,
    /// Write a resumable checkpoint every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the flow and write trajectory.csv, u_final.yflo and summary.json.
    Run(FlowArgs),
    /// Principal Dirichlet eigenpair on the superlevel set of f.
    Eigen(CommonArgs),
    /// Decide (H1) and (H2) on the superlevel set of f.
    Check(CommonArgs),
    /// Build and verify the explicit supersolution.
    Supersolution(CommonArgs),
    /// Run the diagnostics suite over a stored trajectory.
    Verify(CommonArgs),
    /// Continue a run from its last checkpoint.
    Resume(FlowArgs),
}

/// External limit on a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Until {
    Time(f64),
    Steps(u64),
}

impl Until {
    pub fn reached(&self, t: f64, step: u64) -> bool {
        match *self {
            Until::Time(limit) => t >= limit,
            Until::Steps(limit) => step >= limit,
        }
    }
}

impl FromStr for Until {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected a time, `t:<time>` or `steps:<count>`, got {s:?}");
        if let Some(k) = s.strip_prefix("steps:") {
            return k.trim().parse().map(Until::Steps).map_err(|_| bad());
        }
        let t: f64 = s.strip_prefix("t:").unwrap_or(s).trim().parse().map_err(|_| bad())?;
        if t.is_finite() && t >= 0.0 {
            Ok(Until::Time(t))
        } else {
            Err(bad())
        }
    }
}
