//! The `refnpr` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod features;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "refnpr",
    version,
    about = "Reference-driven stylization of voxel radiance fields"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides `fit.seed` and `style.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Procedural scene with posed train/test renders.
    GenToy {
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a photorealistic field to a posed dataset.
    Fit(FitArgs),
    /// Render a field from the cameras of a transforms.json directory.
    Render(RenderArgs),
    /// Build the reference dictionary and report registration coverage.
    Register(RegisterArgs),
    /// Stylize a field from one or more stylized reference views.
    Stylize(StylizeArgs),
    /// Re-stylization robustness of a stylized field.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Held-out views scored after fitting.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Starting field; `[grid]` of the config when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Image size for camera paths without images.
    #[arg(long)]
    pub size: Option<usize>,
    /// Also write depth as PNG and single-channel RNFM (misses are -1).
    #[arg(long)]
    pub depth: bool,
    /// Score renders against the images next to the cameras.
    #[arg(long)]
    pub compare: bool,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Every pseudo-ray as CSV.
    #[arg(long)]
    pub debug_csv: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Photorealistic field that is re-stylized.
    #[arg(long)]
    pub content: Option<PathBuf>,
    /// Stylized field under test.
    #[arg(long)]
    pub stylized: PathBuf,
    /// Cameras whose renders of the stylized field become references.
    #[arg(long)]
    pub references: PathBuf,
    /// Training cameras for each re-stylization.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Cameras the results are compared on.
    #[arg(long)]
    pub path: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Effective configuration: the file (or defaults) with flag overrides applied.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.fit.seed = seed;
        cfg.style.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new("internal", e.to_string()))?;
    }
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::GenToy { out } => commands::gen_toy(&cfg, out),
        Command::Fit(a) => commands::fit(&cfg, a),
        Command::Render(a) => commands::render(&cfg, a),
        Command::Register(a) => commands::register(&cfg, a),
        Command::Stylize(a) => commands::stylize(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
    }
}
