use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use monovol::lds::SequenceKind;
use monovol::linalg::TensorSplit;
use monovol::measures::{BoundaryPolicy, MetricKind, DEFAULT_EPSILON};
use monovol::runner::{emit_tables, run, Mode, OutputFormat, RunConfig, DEFAULT_CHUNK};
use monovol::sampling::SpectrumSampler;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Volume,
    Hyperarea,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SeqArg {
    Gfaure,
    Halton,
    Mc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    /// Limit factors; bures-pair for the two divergent kinds.
    Auto,
    Limit,
    BuresPair,
    Epsilon,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpectrumArg {
    Hyperspherical,
    Dirichlet,
}

/// Monotone-metric volumes and separability probabilities of density
/// matrices by quasi-Monte Carlo integration.
#[derive(Debug, Parser)]
#[command(name = "monovol", version)]
struct Args {
    /// Matrix dimension (2..=6).
    #[arg(long, default_value_t = 6)]
    n: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Volume)]
    mode: ModeArg,
    /// Points per manifold.
    #[arg(long, default_value_t = DEFAULT_CHUNK)]
    points: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = SeqArg::Gfaure)]
    seq: SeqArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated metric names; all six by default.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<MetricKind>>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Auto)]
    boundary_policy: PolicyArg,
    /// Zero-eigenvalue substitute for the epsilon policy.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Checkpoint directory (one file per worker).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
    /// Comma-separated splits such as 2x3,3x2; defaults depend on N.
    #[arg(long, value_delimiter = ',')]
    splits: Option<Vec<TensorSplit>>,
    #[arg(long, value_enum, default_value_t = SpectrumArg::Hyperspherical)]
    spectrum: SpectrumArg,
    #[arg(long, default_value_t = DEFAULT_CHUNK)]
    chunk_size: u64,
    /// Also print the small-N calibration and quadrature suite.
    #[arg(long)]
    oracle_run: bool,
    /// Suppress progress lines.
    #[arg(long)]
    quiet: bool,
}

impl Args {
    fn config(&self) -> RunConfig {
        RunConfig {
            n: self.n,
            mode: match self.mode {
                ModeArg::Volume => Mode::Volume,
                ModeArg::Hyperarea => Mode::Hyperarea,
                ModeArg::Both => Mode::Both,
            },
            sequence: match self.seq {
                SeqArg::Gfaure => SequenceKind::GeneralizedFaure,
                SeqArg::Halton => SequenceKind::Halton,
                SeqArg::Mc => SequenceKind::PseudoRandom,
            },
            seed: self.seed,
            points: self.points,
            workers: self.workers,
            metrics: self.metrics.clone().unwrap_or_else(|| MetricKind::ALL.to_vec()),
            boundary_policy: match self.boundary_policy {
                PolicyArg::Auto => BoundaryPolicy::Auto,
                PolicyArg::Limit => BoundaryPolicy::Limit,
                PolicyArg::BuresPair => BoundaryPolicy::BuresPair,
                PolicyArg::Epsilon => BoundaryPolicy::Epsilon { epsilon: self.epsilon },
            },
            spectrum_sampler: match self.spectrum {
                SpectrumArg::Hyperspherical => SpectrumSampler::Hyperspherical,
                SpectrumArg::Dirichlet => SpectrumSampler::Dirichlet,
            },
            splits: self.splits.clone(),
            chunk_size: self.chunk_size,
            checkpoint: self.checkpoint.clone(),
            resume: self.resume,
            out: self.out.clone(),
            format: match self.format {
                FormatArg::Table => OutputFormat::Table,
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Json => OutputFormat::Json,
            },
            oracle_run: self.oracle_run,
            calibration_perturbation: 1.0,
            progress: !self.quiet,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = args.config();
    let outcome = match run(&config) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if config.oracle_run {
        eprintln!("calibration (flag constant × Bures quadrature vs closed form):");
        for r in &outcome.calibration {
            eprintln!("  N={} {:<9} relative error {:.2e}", r.n, r.manifold, r.relative_error);
        }
        for q in &outcome.oracle {
            eprintln!("  N={} KM/Bures quadrature ratio {:.8} (conjectured {})", q.n, q.ratio, q.conjectured);
        }
    }
    if config.out.is_none() {
        match emit_tables(&outcome.report, config.format) {
            Ok(text) => print!("{text}"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    ExitCode::SUCCESS
}
