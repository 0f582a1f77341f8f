//! The `bear` command line: training, encoding, reconstruction, latent
//! analysis and model inspection. Every command writes a manifest beside
//! its primary output.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

pub use commands::{
    cmd_cluster, cmd_encode, cmd_info, cmd_project, cmd_reconstruct, cmd_synth, cmd_train, info_report, list_images,
};
pub use manifest::{manifest_path, RunManifest};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(Error::NonFinite(_)) => EXIT_NUMERIC,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "bear", version, about = "Channel-sequence ConvLSTM autoencoder: train, encode, analyse")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a directory of PPM images.
    Train(TrainArgs),
    /// Write the latent vector of every image in a directory to CSV.
    Encode(EncodeArgs),
    /// Reconstruct one image through the autoencoder.
    Reconstruct(ReconstructArgs),
    /// k-means on an embeddings CSV, for one k or an elbow scan.
    Cluster(ClusterArgs),
    /// 2D principal-component projection of an embeddings CSV.
    Project(ProjectArgs),
    /// Parameter counts per block and stage.
    Info(InfoArgs),
    /// Generate a seeded synthetic image set.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Epoch log; defaults to `<CKPT>.epochs.csv`.
    #[arg(long, value_name = "CSV")]
    pub log: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    #[arg(long = "in", value_name = "IMG")]
    pub input: PathBuf,
    #[arg(long, value_name = "IMG")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["k", "elbow"])))]
pub struct ClusterArgs {
    #[arg(long, value_name = "CSV")]
    pub embeddings: PathBuf,
    /// Number of clusters; writes `id,cluster`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Scan k over an inclusive range; writes `k,inertia`.
    #[arg(long, num_args = 2, value_names = ["KMIN", "KMAX"])]
    pub elbow: Option<Vec<usize>>,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Cluster on the top R principal-component scores instead of raw vectors.
    #[arg(long, value_name = "R")]
    pub rank: Option<usize>,
    #[arg(long, default_value_t = crate::latent::DEFAULT_RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = crate::latent::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long, value_name = "CSV")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["ckpt", "config"])))]
pub struct InfoArgs {
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("BEAR_LOG")
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn execute(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Project(a) => cmd_project(a),
        Command::Info(a) => cmd_info(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(&cli);
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(run(["bear", "--help"]), EXIT_OK);
        assert_eq!(run(["bear", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["bear", "cluster", "--embeddings", "e.csv", "--out", "c.csv"]), EXIT_USAGE);
        assert_eq!(run(["bear", "cluster", "--embeddings", "e.csv", "--out", "c.csv", "--k", "0"]), EXIT_USAGE);
        assert_eq!(CliError::Lib(Error::NonFinite("x".into())).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::Lib(Error::Config("x".into())).exit_code(), EXIT_DATA);
    }

    #[test]
    fn elbow_takes_two_values() {
        let cli = Cli::try_parse_from(["bear", "cluster", "--embeddings", "e", "--out", "o", "--elbow", "10", "20"]).unwrap();
        match cli.command {
            Command::Cluster(a) => assert_eq!(a.elbow, Some(vec![10, 20])),
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from(["bear", "cluster", "--embeddings", "e", "--out", "o", "--k", "3", "--elbow", "1", "4"]).is_err());
    }
}
