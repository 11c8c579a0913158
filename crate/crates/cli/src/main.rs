//! `slf`: band structures, dispersion optimization, atom coupling and
//! two-colour traps for half-W1 photonic-crystal waveguides.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "slf", version, about)]
struct Cli {
    /// JSON configuration for the command; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized steps (optimizer restarts).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Effective index of the slab TE0 mode.
    SlabNeff,
    /// Supercell band structure and projected bulk gaps.
    Bands,
    /// Field map of one guided mode.
    ModeField,
    /// Six-parameter dispersion flattening.
    Optimize,
    /// Guided-mode decay rate and β at an atom position.
    Purcell,
    /// Two-colour trap: minimum, depth and frequencies.
    Trap,
    /// Trap feasibility over a wavelength range.
    TrapScan,
    /// mF broadening with and without counter-propagating pairs.
    Zeeman,
    /// Casimir-Polder coefficient.
    C3,
}

fn run(cli: &Cli) -> slowlight::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| slowlight::Error::Config(format!("threads: {e}")))?;
    }
    let ctx = commands::Context {
        out: cli.out.clone(),
        data_dir: std::env::var_os("SLF_DATA_DIR").map(PathBuf::from),
        seed: cli.seed,
        config_text: commands::read_config(cli.config.as_deref())?,
    };
    match cli.command {
        Command::SlabNeff => commands::slab_neff(&ctx),
        Command::Bands => commands::bands(&ctx),
        Command::ModeField => commands::mode_field(&ctx),
        Command::Optimize => commands::optimize_cmd(&ctx),
        Command::Purcell => commands::purcell(&ctx),
        Command::Trap => commands::trap(&ctx),
        Command::TrapScan => commands::trap_scan(&ctx),
        Command::Zeeman => commands::zeeman(&ctx),
        Command::C3 => commands::c3(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
