//! `ncsched`: run AoI/VoI scheduling sweeps and plot their results.
//!
//! Exit codes: 0 when every cell completed, 2 for an invalid configuration,
//! 3 when a simulation cell stopped on a violated invariant, 1 otherwise.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ncsched::report::read_csv;
use ncsched_cli::config::{self, ConfigError, ExperimentSpec};
use ncsched_cli::{figures, run_experiment, summary_table, EXIT_CONFIG, EXIT_INVARIANT};

#[derive(Parser, Debug)]
#[command(name = "ncsched", author, version, about = "AoI and VoI scheduling for cellular networked control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a sweep and write results.csv, spec.conf and figures
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        /// Skip writing figures
        #[arg(long)]
        no_figures: bool,
        /// Do not print the summary table
        #[arg(long, short)]
        quiet: bool,
    },
    /// Draw figures from an existing results.csv
    Figures {
        /// Result table written by `run`
        #[arg(long, short)]
        input: PathBuf,
        /// Directory for the SVG files
        #[arg(long, short)]
        output_dir: PathBuf,
        /// Spec used for the error growth curve (omitted when absent)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the fully resolved configuration
    Config {
        #[command(flatten)]
        spec: SpecArgs,
    },
}

// ============================================================================
// Spec flags
// ============================================================================

/// Every flag takes the same text as the matching config key and wins over it.
#[derive(Args, Debug)]
struct SpecArgs {
    /// Config file in `key = value` form
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// reference, load or sensitivity
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated schedulers (aoi, voi, random)
    #[arg(long)]
    scheduler: Option<String>,
    /// Comma-separated loop counts
    #[arg(long, short, allow_hyphen_values = true)]
    n: Option<String>,
    /// Comma-separated uplink resource counts
    #[arg(long, allow_hyphen_values = true)]
    r_ul: Option<String>,
    /// Comma-separated downlink resource counts
    #[arg(long, allow_hyphen_values = true)]
    r_dl: Option<String>,
    /// true to set R_DL equal to R_UL
    #[arg(long)]
    pair_resources: Option<String>,
    /// Sampling period in slots
    #[arg(long, allow_hyphen_values = true)]
    t_s: Option<String>,
    /// Simulated slots per run
    #[arg(long, allow_hyphen_values = true)]
    t_sim: Option<String>,
    /// Seed of the first repetition
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// Repetitions per cell, with consecutive seeds
    #[arg(long, allow_hyphen_values = true)]
    repetitions: Option<String>,
    /// Comma-separated scalar A per plant class
    #[arg(long, allow_hyphen_values = true)]
    classes: Option<String>,
    /// Input gain, one or per class
    #[arg(long, allow_hyphen_values = true)]
    b: Option<String>,
    /// Noise variance, one or per class
    #[arg(long, allow_hyphen_values = true)]
    w: Option<String>,
    /// Feedback gain, one or per class, or `deadbeat`
    #[arg(long, allow_hyphen_values = true)]
    l: Option<String>,
    /// Leading slots excluded from the metrics
    #[arg(long, allow_hyphen_values = true)]
    warmup: Option<String>,
    /// true to write per-run traces
    #[arg(long)]
    traces: Option<String>,
    /// Output directory
    #[arg(long)]
    output_dir: Option<String>,
}

impl SpecArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        [
            ("preset", &self.preset),
            ("scheduler", &self.scheduler),
            ("n", &self.n),
            ("r_ul", &self.r_ul),
            ("r_dl", &self.r_dl),
            ("pair_resources", &self.pair_resources),
            ("t_s", &self.t_s),
            ("t_sim", &self.t_sim),
            ("seed", &self.seed),
            ("repetitions", &self.repetitions),
            ("classes", &self.classes),
            ("b", &self.b),
            ("w", &self.w),
            ("l", &self.l),
            ("warmup", &self.warmup),
            ("traces", &self.traces),
            ("output_dir", &self.output_dir),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
    }

    fn resolve(&self) -> Result<ExperimentSpec, Failure> {
        let text = match &self.config {
            Some(path) => fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(|e| Failure::Config(format!("{e:#}")))?,
            None => String::new(),
        };
        config::parse_spec(&text, &self.overrides()).map_err(|e: ConfigError| {
            let prefix = self.config.as_ref().map(|p| format!("{}: ", p.display()));
            Failure::Config(format!("{}{e}", prefix.unwrap_or_default()))
        })
    }
}

// ============================================================================
// Commands
// ============================================================================

enum Failure {
    Config(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn run(spec_args: &SpecArgs, no_figures: bool, quiet: bool) -> Result<ExitCode, Failure> {
    let spec = spec_args.resolve()?;
    eprintln!(
        "running {} simulations into {}",
        spec.cell_count(),
        spec.output_dir.display()
    );
    let report = run_experiment(&spec, !no_figures).context("writing results")?;
    if !quiet {
        print!("{}", summary_table(&report.rows));
    }
    eprintln!("wrote {}", report.results.display());
    for f in &report.figures {
        eprintln!("wrote {}", f.display());
    }
    if report.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in &report.failures {
        eprintln!(
            "error: {} n={} r_ul={} r_dl={} seed={}: {}",
            f.scheduler, f.n, f.r_ul, f.r_dl, f.seed, f.error
        );
    }
    eprintln!("{} of {} cells failed", report.failures.len(), spec.cell_count());
    Ok(ExitCode::from(EXIT_INVARIANT as u8))
}

fn draw(input: &Path, output_dir: &Path, config_path: Option<&PathBuf>) -> Result<ExitCode, Failure> {
    let classes = match config_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(|e| Failure::Config(format!("{e:#}")))?;
            let spec = config::parse_spec(&text, &[])
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            Some(spec.loop_classes(spec.classes.len()))
        }
        None => None,
    };
    let rows = read_csv(input).with_context(|| format!("reading {}", input.display()))?;
    let written = figures::write_figures(&rows, classes.as_deref(), output_dir).map_err(anyhow::Error::from)?;
    for f in written {
        println!("{}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            spec,
            no_figures,
            quiet,
        } => run(spec, *no_figures, *quiet),
        Command::Figures {
            input,
            output_dir,
            config,
        } => draw(input, output_dir, config.as_ref()),
        Command::Config { spec } => spec.resolve().map(|s| {
            print!("{}", config::render(&s));
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
