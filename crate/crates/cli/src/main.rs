mod data;
mod error;
mod net;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(name = "twp", version, about = "Three-way ping RTT measurement and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the coordinator: registration, roster, upload slots, shutdown.
    Coord(CoordArgs),
    /// Run a measurement peer over UDP.
    Peer(PeerArgs),
    /// Run a simulated experiment and write its logs.
    Sim(SimArgs),
    /// Turn a log tree into per-link statistics and CSV tables.
    Analyze(AnalyzeArgs),
    /// Fit delay distributions and rank them by Anderson-Darling statistic.
    Fit(FitArgs),
    /// Draw samples from a delay distribution, one per line.
    Synth(SynthArgs),
    /// Cluster directed links with a Gaussian mixture.
    Cluster(ClusterArgs),
    /// Write a one-file Markdown summary of an experiment.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct CoordArgs {
    #[arg(long, default_value = "0.0.0.0:7700")]
    pub listen: String,
    #[arg(long, default_value_t = twp_core::coordinator::DEFAULT_MAX_UPLOADS)]
    pub max_uploads: usize,
    /// Seconds of probing before peers are told to stop.
    #[arg(long)]
    pub duration: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = twp_core::peer::DEFAULT_PROBE_INTERVAL_MS)]
    pub interval_ms: u64,
    /// Start as soon as this many peers have registered.
    #[arg(long)]
    pub expect: Option<usize>,
    /// Otherwise start this many seconds after the first registration.
    #[arg(long, default_value_t = 30)]
    pub register_s: u64,
    /// Seconds to wait for final uploads after stopping.
    #[arg(long, default_value_t = 60)]
    pub grace_s: u64,
}

#[derive(Args)]
pub struct PeerArgs {
    #[arg(long)]
    pub coordinator: String,
    /// UDP address to probe from; must be reachable by the other peers.
    #[arg(long)]
    pub listen: String,
    /// Expected probe interval; the coordinator's roster is authoritative.
    #[arg(long)]
    pub interval_ms: Option<u64>,
    #[arg(long)]
    pub log_dir: PathBuf,
    #[arg(long, default_value_t = 3600)]
    pub rotate_s: u64,
    #[arg(long, default_value_t = twp_core::peer::DEFAULT_PENDING_EXPIRY_MS)]
    pub expiry_ms: u64,
    /// Milliseconds to keep answering after STOP before the final seal.
    #[arg(long, default_value_t = 1000)]
    pub drain_ms: u64,
}

#[derive(Args)]
pub struct SimArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub logs: PathBuf,
    /// Roster line file; defaults to `<logs>/roster.txt`.
    #[arg(long)]
    pub roster: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write link statistics with RTTs above this per-link quantile removed.
    #[arg(long)]
    pub trim_q: Option<f64>,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// `all` or a comma-separated list of family names.
    #[arg(long, default_value = "all")]
    pub families: String,
    /// Fraction of the input to fit, drawn without replacement.
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write (empirical, model) quantile pairs per fitted family here.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub family: String,
    #[arg(long, allow_hyphen_values = true)]
    pub shape: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub scale: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub location: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub stats: PathBuf,
    #[arg(long, default_value_t = twp_core::clustering::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = twp_core::clustering::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `clusters.csv,crosstab.csv[,summary.csv]`; without a summary path it goes to stdout.
    #[arg(long, value_delimiter = ',', required = true)]
    pub out: Vec<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory written by `twp analyze`.
    #[arg(long)]
    pub analysis: PathBuf,
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Cluster summary CSV written by `twp cluster`.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Coord(a) => net::coord(a),
        Command::Peer(a) => net::peer(a),
        Command::Sim(a) => data::sim(a),
        Command::Analyze(a) => data::analyze(a),
        Command::Fit(a) => data::fit(a),
        Command::Synth(a) => data::synth(a),
        Command::Cluster(a) => data::cluster(a),
        Command::Report(a) => data::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("twp: {e}");
            ExitCode::from(e.code())
        }
    }
}
