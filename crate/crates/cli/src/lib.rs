//! Batch front end for the unit-discovery pipeline.
//!
//! Every subcommand resolves a configuration (defaults, then an optional
//! TOML file, then flags), does its work, and writes a sorted `key=value`
//! run report to stdout and `<out>/report.txt`. Exit codes: 0 success,
//! 2 usage or configuration error, 3 data error, 4 numerical failure.

mod commands;
pub mod config;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use zsu_core::cluster::ClusterError;
use zsu_core::corpus::CorpusError;
use zsu_core::dsp::DspError;
use zsu_core::grad::GradError;
use zsu_core::inverter::InverterError;
use zsu_core::vq::VqError;

pub use config::PipelineConfig;
pub use report::Report;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// A bad flag, config value or missing required path.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A computation produced non-finite values or failed a numerical check.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct NumericalError(pub String);

#[derive(Debug, Parser)]
#[command(
    name = "zsu",
    version,
    about = "Acoustic unit discovery, spectrogram inversion and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features for every manifest entry into a feature cache.
    Extract(Overrides),
    /// Fit a K-Means, GMM or VQ-VAE unit model.
    TrainUnits(Overrides),
    /// Encode every utterance into units and continuous representations.
    Encode(Overrides),
    /// Train the code-to-spectrogram inverter on a target voice.
    TrainInverter(Overrides),
    /// Resynthesize waveforms from units.
    Synthesize(Overrides),
    /// ABX error rate of a directory of representations.
    EvalAbx(Overrides),
    /// Bitrate of a unit file.
    EvalBitrate(Overrides),
    /// Finite-difference check of every layer and training objective.
    Gradcheck(Overrides),
    /// Version, supported settings and reference results.
    Info {
        /// Print the published reference results table.
        #[arg(long)]
        paper_table: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config with [features], [units], [inverter], [train], [eval], [paths].
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-utterance work.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Unit model kind.
    #[arg(long, value_parser = ["kmeans", "gmm", "vqvae"])]
    pub model: Option<String>,
    #[arg(long)]
    pub codebook: Option<usize>,
    #[arg(long)]
    pub time_reduction: Option<usize>,
    #[arg(long, value_parser = ["lsgan", "wgan"])]
    pub gan: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_parser = ["cosine", "kl"])]
    pub frame_distance: Option<String>,
    /// Feature kind: mfcc39, mel80, linear or customN.
    #[arg(long)]
    pub feature_kind: Option<String>,
    /// Unit-model training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub inverter_steps: Option<usize>,
    /// Target voice for the inverter.
    #[arg(long)]
    pub speaker: Option<String>,
    /// ABX triples file.
    #[arg(long)]
    pub triples: Option<PathBuf>,
    /// Feature cache directory.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Unit model bundle.
    #[arg(long)]
    pub model_path: Option<PathBuf>,
    /// Unit file.
    #[arg(long)]
    pub units: Option<PathBuf>,
    /// Inverter bundle.
    #[arg(long)]
    pub inverter: Option<PathBuf>,
    /// Representation directory.
    #[arg(long)]
    pub repr: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(report) => {
            if let Some(r) = report {
                print!("{}", r.to_text());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; returns the run report if the command makes one.
pub fn execute(command: Command) -> anyhow::Result<Option<Report>> {
    let overrides = match &command {
        Command::Extract(o)
        | Command::TrainUnits(o)
        | Command::Encode(o)
        | Command::TrainInverter(o)
        | Command::Synthesize(o)
        | Command::EvalAbx(o)
        | Command::EvalBitrate(o)
        | Command::Gradcheck(o) => o.clone(),
        Command::Info { overrides, .. } => overrides.clone(),
    };
    let cfg = PipelineConfig::resolve(&overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = overrides.jobs {
        if j == 0 {
            return Err(UsageError("--jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    pool.install(|| match command {
        Command::Extract(_) => commands::extract(&cfg).map(Some),
        Command::TrainUnits(_) => commands::train_units(&cfg).map(Some),
        Command::Encode(_) => commands::encode(&cfg).map(Some),
        Command::TrainInverter(_) => commands::train_inverter(&cfg).map(Some),
        Command::Synthesize(_) => commands::synthesize(&cfg).map(Some),
        Command::EvalAbx(_) => commands::eval_abx(&cfg).map(Some),
        Command::EvalBitrate(_) => commands::eval_bitrate(&cfg).map(Some),
        Command::Gradcheck(_) => commands::gradcheck(&cfg).map(Some),
        Command::Info { paper_table, .. } => {
            print!("{}", commands::info(paper_table));
            Ok(None)
        }
    })
}

/// Maps an error to its exit category by inspecting the typed errors in
/// its cause chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<clap::Error>() {
            return EXIT_USAGE;
        }
        if cause.is::<NumericalError>() {
            return EXIT_NUMERICAL;
        }
        let code = if let Some(e) = cause.downcast_ref::<VqError>() {
            vq_code(e)
        } else if let Some(e) = cause.downcast_ref::<InverterError>() {
            inverter_code(e)
        } else if let Some(e) = cause.downcast_ref::<ClusterError>() {
            cluster_code(e)
        } else if let Some(e) = cause.downcast_ref::<CorpusError>() {
            corpus_code(e)
        } else if let Some(e) = cause.downcast_ref::<DspError>() {
            dsp_code(e)
        } else if let Some(e) = cause.downcast_ref::<GradError>() {
            grad_code(e)
        } else if let Some(e) = cause.downcast_ref::<zsu_core::Error>() {
            core_code(e)
        } else {
            None
        };
        if let Some(c) = code {
            return c;
        }
    }
    EXIT_DATA
}

fn core_code(e: &zsu_core::Error) -> Option<i32> {
    match e {
        zsu_core::Error::Dsp(e) => dsp_code(e),
        zsu_core::Error::Grad(e) => grad_code(e),
        zsu_core::Error::Cluster(e) => cluster_code(e),
        zsu_core::Error::Corpus(e) => corpus_code(e),
        zsu_core::Error::Vq(e) => vq_code(e),
        zsu_core::Error::Inverter(e) => inverter_code(e),
        zsu_core::Error::Metrics(_) => Some(EXIT_DATA),
    }
}

fn vq_code(e: &VqError) -> Option<i32> {
    match e {
        VqError::Numerical(_) => Some(EXIT_NUMERICAL),
        VqError::Config(_) => Some(EXIT_USAGE),
        VqError::Grad(e) => grad_code(e),
        VqError::Cluster(e) => cluster_code(e),
        VqError::Corpus(e) => corpus_code(e),
        VqError::Input(_) | VqError::State(_) => Some(EXIT_DATA),
    }
}

fn inverter_code(e: &InverterError) -> Option<i32> {
    match e {
        InverterError::Numerical { .. } => Some(EXIT_NUMERICAL),
        InverterError::Config(_) => Some(EXIT_USAGE),
        InverterError::Grad(e) => grad_code(e),
        InverterError::Dsp(e) => dsp_code(e),
        InverterError::Corpus(e) => corpus_code(e),
        InverterError::Input(_) => Some(EXIT_DATA),
    }
}

fn cluster_code(e: &ClusterError) -> Option<i32> {
    match e {
        ClusterError::Config(_) => Some(EXIT_USAGE),
        ClusterError::Input(_) | ClusterError::Bundle(_) => Some(EXIT_DATA),
    }
}

fn corpus_code(e: &CorpusError) -> Option<i32> {
    match e {
        CorpusError::Dsp(e) => dsp_code(e),
        _ => Some(EXIT_DATA),
    }
}

fn dsp_code(e: &DspError) -> Option<i32> {
    match e {
        DspError::Config(_) => Some(EXIT_USAGE),
        _ => Some(EXIT_DATA),
    }
}

fn grad_code(e: &GradError) -> Option<i32> {
    match e {
        GradError::Config(_) => Some(EXIT_USAGE),
        GradError::Layer { source, .. } => grad_code(source),
        _ => Some(EXIT_DATA),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["zsu", "eval-bitrate", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["zsu", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["zsu", "train-units", "--gan", "vanilla"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(run(["zsu", "--help"]), 0);
    }

    #[test]
    fn error_categories() {
        let usage: anyhow::Error = UsageError("x".into()).into();
        assert_eq!(exit_code(&usage), EXIT_USAGE);
        let num: anyhow::Error = InverterError::Numerical {
            step: 3,
            detail: "nan".into(),
        }
        .into();
        assert_eq!(exit_code(&num), EXIT_NUMERICAL);
        let nested: anyhow::Error = VqError::Cluster(ClusterError::Config("k".into())).into();
        assert_eq!(exit_code(&nested), EXIT_USAGE);
        let data: anyhow::Error = CorpusError::Format("bad".into()).into();
        assert_eq!(exit_code(&data.context("reading units")), EXIT_DATA);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_DATA);
    }

    #[test]
    fn missing_manifest_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["zsu", "extract", "--out", out]), EXIT_USAGE);
    }
}
