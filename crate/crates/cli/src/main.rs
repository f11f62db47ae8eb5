mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use backmap_core::backmap::Mode;
use backmap_core::preprocess::{DEFAULT_FRAME_CAP, DEFAULT_SEED};

/// Backmapping of alpha-carbon traces to all-atom protein structures.
#[derive(Debug, Parser)]
#[command(name = "backmap", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download ensemble entries into a local directory (cached by size).
    Fetch {
        #[arg(required = true)]
        ids: Vec<String>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Remove hydrogens and non-template atoms, mask termini, cap frame count.
    Preprocess {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FRAME_CAP)]
        cap: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Log file; defaults to `<output>.log`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Internal-coordinate extraction and reconstruction.
    #[command(subcommand)]
    Zmat(ZmatCommand),
    /// Fit lookup tables (and optionally the torsion network) on ensembles.
    Fit(FitArgs),
    /// Generate all-atom structures from alpha-carbon traces.
    Backmap(BackmapArgs),
    /// Compare generated structures with ground truth.
    Eval {
        truth: PathBuf,
        generated: PathBuf,
        /// JSON report path; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = backmap_core::metrics::BOND_TOLERANCE)]
        bond_tol: f64,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compactness table, distance histograms and named-pair distances.
    Stats(StatsArgs),
}

#[derive(Debug, Subcommand)]
pub enum ZmatCommand {
    /// Write the internal coordinates of every frame.
    Extract { input: PathBuf, output: PathBuf },
    /// Rebuild all-atom frames from internal coordinates and a trace.
    Rebuild {
        zmatrix: PathBuf,
        /// PDB providing the alpha-carbon trace; RMSD is reported when it is all-atom.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FRAME_CAP)]
    pub cap: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub train_net: bool,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = backmap_core::backmap::features::DEFAULT_WINDOW)]
    pub window: usize,
    /// Loss trajectory CSV; defaults to `<model>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackmapArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "deterministic")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accept all-atom input and reduce it to its alpha-carbon trace.
    #[arg(long)]
    pub cg_map: bool,
    /// Fail on residue types the model has not observed.
    #[arg(long)]
    pub no_fallback: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Compactness table; printed to stdout when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Nonbonded pair-distance histogram CSV.
    #[arg(long)]
    pub hist: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub bin_width: f64,
    #[arg(long, default_value_t = 5.0)]
    pub hist_max: f64,
    /// Two atoms as `CHAIN:SEQ:ATOM,CHAIN:SEQ:ATOM`.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub pair_csv: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
