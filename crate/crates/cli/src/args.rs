use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jumpdrift::{DtMode, GateMode};

#[derive(Debug, Parser)]
#[command(name = "jumpdrift", version, about = "Drift estimation for jump diffusions from i.i.d. paths")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a bundle of paths and write it as CSV plus a JSON sidecar.
    Simulate(SimulateArgs),
    /// Fit the drift on a bundle file, at a fixed dimension or adaptively.
    Estimate(EstimateArgs),
    /// Repeat simulate/select/MISE runs, or calibrate the penalty constant.
    Experiment(ExperimentArgs),
    /// Run the trace-bound check and estimator invariants.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DtModeArg {
    PlugIn,
    Simplified,
    Unrestricted,
}

impl From<DtModeArg> for DtMode {
    fn from(v: DtModeArg) -> Self {
        match v {
            DtModeArg::PlugIn => DtMode::PlugIn,
            DtModeArg::Simplified => DtMode::Simplified,
            DtModeArg::Unrestricted => DtMode::Unrestricted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GateArg {
    Theoretical,
    Off,
}

impl From<GateArg> for GateMode {
    fn from(v: GateArg) -> Self {
        match v {
            GateArg::Theoretical => GateMode::Theoretical,
            GateArg::Off => GateMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BasisArg {
    Trig,
    Hermite,
}

macro_rules! list_newtype {
    ($name:ident, $t:ty) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Vec<$t>);

        impl From<$name> for Vec<$t> {
            fn from(v: $name) -> Self {
                v.0
            }
        }
    };
}

list_newtype!(DimList, usize);
list_newtype!(ModelList, u8);
list_newtype!(F64List, f64);

/// `1:6` or `1,2,4`.
pub fn parse_dims(s: &str) -> Result<DimList, String> {
    let dims: Vec<usize> = if let Some((a, b)) = s.split_once(':') {
        let a: usize = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
        let b: usize = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
        if a > b {
            return Err(format!("empty range {a}:{b}"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|e| format!("`{t}`: {e}")))
            .collect::<Result<_, _>>()?
    };
    if dims.is_empty() || dims.contains(&0) {
        return Err("dimensions must be >= 1".into());
    }
    Ok(DimList(dims))
}

pub fn parse_f64_list(s: &str) -> Result<F64List, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()
        .map(F64List)
}

/// `1`, `1,3` or `all`.
pub fn parse_models(s: &str) -> Result<ModelList, String> {
    if s == "all" {
        return Ok(ModelList(vec![1, 2, 3]));
    }
    s.split(',')
        .map(|t| match t.trim().parse::<u8>() {
            Ok(id @ 1..=3) => Ok(id),
            _ => Err(format!("unknown model `{t}`; expected 1, 2, 3 or all")),
        })
        .collect::<Result<_, _>>()
        .map(ModelList)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file with defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in model: 1, 2 or 3.
    #[arg(long)]
    pub model: Option<u8>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub x0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; the sidecar goes next to it with a `.json` extension.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Bundle CSV written by `simulate`.
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
    /// Left end of the trigonometric interval.
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    /// Fixed dimension.
    #[arg(long, conflicts_with = "adaptive")]
    pub m: Option<usize>,
    /// Choose the dimension by penalized contrast.
    #[arg(long)]
    pub adaptive: bool,
    #[arg(long)]
    pub c_cal: Option<f64>,
    /// Candidate dimensions, `a:b` or a comma list.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<DimList>,
    #[arg(long, value_enum)]
    pub dt_mode: Option<DtModeArg>,
    #[arg(long, value_enum)]
    pub gate: Option<GateArg>,
    /// Overrides the density estimate used by the plug-in admissible set.
    #[arg(long)]
    pub f_sup: Option<f64>,
    /// Also write `x,b,bhat` on this many intervals of the MISE interval.
    #[arg(long)]
    pub plot_grid: Option<usize>,
    /// Plot CSV path (defaults to the output path with `.plot.csv`).
    #[arg(long)]
    pub plot_out: Option<PathBuf>,
    /// True drift for the plot, when the sidecar does not name a model.
    #[arg(long)]
    pub model: Option<u8>,
    /// Accepted for symmetry with the other commands; estimation is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON output (stdout when absent).
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `1`, `1,2,3` or `all`.
    #[arg(long, value_parser = parse_models)]
    pub model: Option<ModelList>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub c_cal: Option<f64>,
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<DimList>,
    #[arg(long, value_enum)]
    pub dt_mode: Option<DtModeArg>,
    #[arg(long, value_enum)]
    pub gate: Option<GateArg>,
    #[arg(long)]
    pub mise_grid: Option<usize>,
    /// Calibrate the penalty constant instead of running the experiment.
    #[arg(long)]
    pub calibrate: bool,
    /// Calibration grid, comma separated.
    #[arg(long, value_parser = parse_f64_list, requires = "calibrate")]
    pub grid: Option<F64List>,
    /// Directory for plot CSVs of the first 10 repetitions.
    #[arg(long)]
    pub plot_dir: Option<PathBuf>,
    /// Summary CSV (defaults to the output path with `.csv`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON report (stdout when absent).
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_models)]
    pub model: Option<ModelList>,
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<DimList>,
    /// Bundles in the Monte Carlo trace check.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    #[arg(long)]
    pub slack: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also run the estimator invariants on this bundle file.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// JSON results (stdout summary is always printed).
    #[arg(short = 'o', long = "output")]
    pub output: Option<PathBuf>,
}
