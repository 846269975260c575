use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use piezobeam_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "pzbeam", version, about = "Piezo-beam simulation and parameter identification")]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form beam frequency, wave speeds and tip deflection.
    Analytic,
    /// Generate the tagged mesh and its VTK view.
    Mesh,
    /// Natural frequencies and mode shapes.
    Modal,
    /// Static preload under self-weight and the tip force.
    Static,
    /// Free response after release.
    Transient,
    /// Synthetic measurements at the configured true parameters.
    Synth,
    /// Fit damping, modulus and circuit parameters to measurements.
    Identify {
        /// Measurement CSV with header t,vz,V.
        measurements: Option<PathBuf>,
    },
    /// Dominant frequency of the laser velocity.
    Freq {
        /// Measurement CSV to analyze instead of running a transient.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON.
    Config,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    let out = cfg.output.dir.clone();
    match &cli.command {
        Command::Analytic => piezobeam_cli::cmd_analytic(&cfg, &out),
        Command::Mesh => piezobeam_cli::cmd_mesh(&cfg, &out),
        Command::Modal => piezobeam_cli::cmd_modal(&cfg, &out),
        Command::Static => piezobeam_cli::cmd_static(&cfg, &out),
        Command::Transient => piezobeam_cli::cmd_transient(&cfg, &out),
        Command::Synth => piezobeam_cli::cmd_synth(&cfg, &out),
        Command::Identify { measurements } => piezobeam_cli::cmd_identify(&cfg, measurements.as_deref(), &out),
        Command::Freq { input } => piezobeam_cli::cmd_freq(&cfg, input.as_deref(), &out),
        Command::Config => Ok(cfg.to_json() + "\n"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if !cli.quiet {
                print!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pzbeam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
