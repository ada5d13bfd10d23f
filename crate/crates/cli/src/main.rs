//! `rfield`: generate synthetic scenes, train, evaluate, render and run ablations.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad arguments or configuration; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(UsageError),
    /// I/O, missing inputs or a failed run; exit code 2.
    Runtime(anyhow::Error),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

const AFTER_HELP: &str = "\
Configuration layers, lowest precedence first:
  built-in defaults < --config file < RF_ environment variables < flags
A config file has a [scene] and a [train] table. Environment variables name a
key path with `__` between segments, e.g. RF_TRAIN__LR_FIELD=0.02 or
RF_TRAIN__SAMPLER__DILATION=2. --set takes the same dotted paths, e.g.
--set train.sampler.dilation=2. Every command writes the fully resolved
configuration to resolved.toml in its output directory; feeding that file back
with --config reproduces the run.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.";

#[derive(Debug, Parser)]
#[command(name = "rfield", version, about = "Distractor-robust scene fitting on synthetic multi-view data", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file with [scene] and [train] tables.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `train.lr_field=0.02`. Repeatable; applied in order.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads. Defaults to the number of logical cores.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Train on a dataset; writes report.csv, heatmaps, a plot and the checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset's test views and distractor masks.
    Eval(EvalArgs),
    /// Render PNGs from a checkpoint.
    Render(RenderArgs),
    /// Run an ablation suite and write a comparison table.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Flat2d,
    Voxel3d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Built-in scene defaults.
    Default,
    /// Dark scene with luma-matched, weakly textured distractors.
    CamouflageBenchmark,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeaturesArg {
    Builtin,
    Oracle,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Scene defaults that the config layers start from.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    pub preset: Preset,
    /// Sets scene.mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Sets scene.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sets scene.occlusion_ratio.
    #[arg(long, value_name = "RHO")]
    pub occlusion: Option<f64>,
    /// Sets scene.n_views.
    #[arg(long)]
    pub views: Option<usize>,
    /// Sets scene.n_test.
    #[arg(long)]
    pub test_views: Option<usize>,
    /// Sets scene.width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Sets scene.height.
    #[arg(long)]
    pub height: Option<usize>,
    /// Sets scene.camouflage to true.
    #[arg(long)]
    pub camouflage: bool,
    /// Sets scene.feature_provider.
    #[arg(long, value_enum)]
    pub features: Option<FeaturesArg>,
}

/// Shortcuts shared by the commands that train.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Sets train.iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Sets train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sets train.eval_every.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Sets train.deterministic to true.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Train with beta fixed to 1 (plain l2), the control run.
    #[arg(long)]
    pub baseline: bool,
    /// Training views exported as beta heatmaps at each evaluation.
    #[arg(long, default_value_t = 2, value_name = "N")]
    pub heatmap_views: usize,
    /// Skip the convergence plot.
    #[arg(long)]
    pub no_plot: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`. Its directory's resolved.toml is used as
    /// the config file unless --config is given.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Also write metrics.csv and resolved.toml here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint written by `train`. Its directory's resolved.toml is used as
    /// the config file unless --config is given.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset directory; supplies the cameras unless --cameras is given.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Output directory for the PNGs.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Dataset split whose cameras are rendered.
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// TOML file with a `[[cameras]]` array (fx, fy, cx, cy, pose, width, height).
    #[arg(long, value_name = "FILE")]
    pub cameras: Option<PathBuf>,
    /// Also write beta heatmaps of every training view.
    #[arg(long)]
    pub beta: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Dilation,
    Loss,
    Sampler,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    /// Comma-separated variants: dilation rates (1,2,4,8), loss variants
    /// (no_reg, l2_uncer, uncer_to_field, ours) or samplers (random,
    /// contiguous_patch, dilated_patch). Defaults to the whole suite; the
    /// first variant is the reference for iters_to_reference.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub train: TrainFlags,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli, std::env::vars()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e}\n\nRun `rfield --help` for usage.");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
