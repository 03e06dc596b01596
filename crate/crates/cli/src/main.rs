//! `lattice-probe`: runs the probe simulation from a JSON config and writes
//! tables plus a manifest that replays the run.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical non-convergence,
//! 1 anything else (for example an unwritable output directory).

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use lattice_probe::io::Format;
use lattice_probe::lattice_wannier::LatticeError;
use serde_json::json;

use commands::Command;
use config::{invalid, Invalid, Overrides, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lattice-probe",
    version,
    about = "Impurity-probe spectroscopy of a lattice superfluid"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration, or a manifest from an earlier run.
    #[arg(long, env = "QPROBE_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "QPROBE_OUT")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, env = "QPROBE_FORMAT")]
    format: Option<FormatArg>,
    /// Noise seed.
    #[arg(long, env = "QPROBE_SEED")]
    seed: Option<u64>,
    /// Relative noise level of a single measurement.
    #[arg(long, env = "QPROBE_NOISE")]
    noise: Option<f64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "QPROBE_THREADS")]
    threads: Option<usize>,
}

fn execute(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| invalid("no configuration given; pass --config PATH or set QPROBE_CONFIG"))?;
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&Overrides {
        out: cli.out.clone(),
        format: cli.format.map(Into::into),
        seed: cli.seed,
        noise: cli.noise,
    });
    cfg.check()?;
    let outcome = match cli.threads {
        Some(0) => return Err(invalid("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("cannot start worker pool")?
            .install(|| commands::run(cli.command, &mut cfg))?,
        None => commands::run(cli.command, &mut cfg)?,
    };
    let name = cli.command.name();
    let manifest = json!({
        "tool": "lattice-probe",
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "seed": cfg.sweep.as_ref().map(|s| s.seed),
        "config": cfg,
        "outputs": outcome.outputs,
        "summary": outcome.summary,
    });
    let path = commands::output_path(&cfg, &format!("{name}_manifest.json"))?;
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<LatticeError>() {
            return match e {
                LatticeError::Convergence { .. }
                | LatticeError::DegenerateGauge { .. }
                | LatticeError::Resolution(_) => 3,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
    }
    // Remaining library errors reject the parameters.
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
