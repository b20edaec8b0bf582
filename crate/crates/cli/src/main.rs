mod commands;
mod error;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use perpscale::optimizer::{AffinityChoice, InitMethod, LearningRate, OptimizerConfig};

/// t-SNE with perplexity scaling for sampled data.
#[derive(Debug, Parser)]
#[command(name = "perpscale", version)]
pub struct Cli {
    /// Seed for sampling, random initialization and display downsampling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "PERPSCALE_THREADS")]
    pub threads: Option<usize>,
    /// Format of written samples, and of inputs whose extension is neither `.csv` nor `.bin`.
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AffinityArg {
    Auto,
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Pca,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Dataset file (CSV or binary).
    #[arg(long, required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generated Gaussian mixture instead of a file: `n,dim,clusters[,seed]`.
    #[arg(long, conflicts_with = "input")]
    pub synthetic: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    /// Barnes-Hut threshold; 0 computes exact gradients.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 250)]
    pub ee_iters: usize,
    #[arg(long, default_value_t = 12.0)]
    pub ee_factor: f64,
    #[arg(long, default_value_t = 750)]
    pub main_iters: usize,
    /// `auto` or a positive number.
    #[arg(long, default_value = "auto", value_parser = parse_learning_rate)]
    pub learning_rate: LearningRate,
    #[arg(long, value_enum, default_value = "auto")]
    pub affinity: AffinityArg,
    #[arg(long, value_enum, default_value = "pca")]
    pub init: InitArg,
}

impl OptimizerArgs {
    pub fn config(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            ee_iters: self.ee_iters,
            ee_factor: self.ee_factor,
            main_iters: self.main_iters,
            learning_rate: self.learning_rate,
            theta: self.theta,
            seed,
            init: match self.init {
                InitArg::Pca => InitMethod::Pca,
                InitArg::Random => InitMethod::Random,
            },
            affinity: match self.affinity {
                AffinityArg::Auto => AffinityChoice::Auto,
                AffinityArg::Dense => AffinityChoice::Dense,
                AffinityArg::Sparse => AffinityChoice::Sparse,
            },
            ..OptimizerConfig::default()
        }
    }
}

fn parse_learning_rate(s: &str) -> Result<LearningRate, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(LearningRate::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(LearningRate::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a dataset with t-SNE.
    Embed {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        perplexity: f64,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        /// Also write a scatter plot.
        #[arg(long)]
        svg: bool,
    },
    /// Draw nested uniform samples and write them as datasets.
    Sample {
        #[command(flatten)]
        input: InputArgs,
        /// Descending sampling rates.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
    },
    /// Monte Carlo estimate of per-point sample perplexities.
    Mc {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
    },
    /// Embed samples over a grid of perplexities (rows) and rates (columns).
    Grid {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        rates: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        perplexities: Vec<f64>,
        /// Read perplexities as full-set values and scale each column by its rate.
        #[arg(long)]
        scale: bool,
        /// Mark cells whose modeled affinity storage exceeds this many bytes as infeasible.
        #[arg(long)]
        max_bytes: Option<f64>,
        #[arg(long, default_value_t = 12.0)]
        bytes_per_entry: f64,
        #[command(flatten)]
        optimizer: OptimizerArgs,
    },
    /// Embed a sample, prolong it to all points, refine on the full set.
    Pipeline {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        rate: f64,
        /// Perplexity for the sample stage.
        #[arg(long, required_unless_present = "per_target", conflicts_with = "per_target")]
        per_sample: Option<f64>,
        /// Full-set perplexity to scale down to the sample.
        #[arg(long)]
        per_target: Option<f64>,
        #[arg(long, default_value_t = 30.0)]
        per_full: f64,
        #[arg(long, default_value_t = 10)]
        prolong_k: usize,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long)]
        svg: bool,
    },
    /// Largest sampling rate whose affinities fit a memory budget.
    Budget {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        perplexity: f64,
        #[arg(long)]
        max_bytes: f64,
        #[arg(long, value_enum, default_value = "sparse")]
        mode: ModeArg,
        #[arg(long, default_value_t = 12.0)]
        bytes_per_entry: f64,
    },
    /// kNN overlap of two embeddings on their shared ids.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
