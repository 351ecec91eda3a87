//! Command line: `xdiff <experiment> --config <file> [--out <dir>]`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::SEED_ENV;
use super::output::write_outputs;
use super::{run_experiment, ExperimentKind, HarnessError, RawConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONTRACT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "xdiff",
    version,
    about = "Finite-volume experiments for a degenerate cross-diffusion system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plain time integration with diagnostics against the equal-mass constant state.
    Run(Common),
    /// Coarse runs against a fine strong-solution surrogate.
    WeakStrong(Common),
    /// Perturbed initial data and a fitted Gronwall constant.
    Gronwall(Common),
    /// Porous-medium reduction against the Barenblatt profile.
    Pme(Common),
    /// Seeded property batteries.
    Invariants(Common),
    /// Manufactured-solution convergence orders.
    Convergence(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value`, TOML subset).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the `output` key.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn split(&self) -> (ExperimentKind, &Common) {
        match self {
            Command::Run(c) => (ExperimentKind::Run, c),
            Command::WeakStrong(c) => (ExperimentKind::WeakStrong, c),
            Command::Gronwall(c) => (ExperimentKind::Gronwall, c),
            Command::Pme(c) => (ExperimentKind::PmeValidation, c),
            Command::Invariants(c) => (ExperimentKind::Invariants, c),
            Command::Convergence(c) => (ExperimentKind::Convergence, c),
        }
    }
}

enum Failure {
    Usage(String),
    Contract(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::ConfigSyntax(_) => Failure::Usage(e.to_string()),
            e => Failure::Contract(e),
        }
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 when a module contract or an experiment check fails, 2 on bad usage.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("xdiff: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Contract(e)) => {
            eprintln!("xdiff: {e}");
            EXIT_CONTRACT
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, Failure> {
    let (kind, common) = cli.command.split();
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", common.config.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    match raw.kind {
        Some(k) if k != kind => {
            return Err(Failure::Usage(format!(
                "config kind {} does not match subcommand {}",
                k.name(),
                kind.name()
            )))
        }
        _ => raw.kind = Some(kind),
    }
    if let Some(v) = std::env::var_os(SEED_ENV) {
        let seed = v
            .to_str()
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        raw.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        raw.output = Some(out.clone());
    }
    let cfg = raw.resolve()?;
    let report = run_experiment(&cfg)?;
    write_outputs(&cfg.output, &cfg, &report)?;
    let failed: Vec<_> = report.failed_checks().collect();
    for c in &failed {
        eprintln!(
            "xdiff: {}: check {} failed: value {} vs threshold {} ({})",
            kind.name(),
            c.name,
            c.value,
            c.threshold,
            c.detail
        );
    }
    Ok(if failed.is_empty() { EXIT_OK } else { EXIT_CONTRACT })
}
