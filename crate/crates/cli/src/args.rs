use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cctsne", version, about = "Class-constrained t-SNE: embeddings, sweeps, metrics and the labeling service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed a dataset at one alpha.
    Embed(EmbedArgs),
    /// Chained warm-start runs over several alpha values, or cold runs over several lambda values.
    Sweep(SweepArgs),
    /// Trustworthiness, continuity and class consistency of embedding files.
    Metrics(MetricsArgs),
    /// Generate the synthetic 10D dataset and classifier probabilities.
    Synth(SynthArgs),
    /// Run the HTTP labeling service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Points plus class landmarks.
    Cctsne,
    /// t-SNE on a blend of data and class-probability affinities; no landmarks.
    Baseline,
    /// Plain t-SNE on the features; no landmarks.
    Vanilla,
}

/// Inputs and hyperparameters shared by `embed` and `sweep`.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Feature CSV, one instance per row.
    #[arg(long)]
    pub features: PathBuf,
    /// Class-probability CSV; the header row, if any, names the classes.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "cctsne")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 0.25, value_parser = positive)]
    pub lambda: f64,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 200.0, value_parser = positive)]
    pub lr: f64,
    /// Lower the learning rate to the bound at which the landmark penalty stays stable.
    #[arg(long)]
    pub stable_lr: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Warm-start from this embedding JSON (no early exaggeration).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Z-score feature columns before computing affinities.
    #[arg(long)]
    pub standardize: bool,
    /// Integer labels used to colour the SVG; defaults to the argmax class.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    pub alpha: f64,
    /// Output embedding JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a scatter plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated alpha values, run in order with chained warm starts.
    #[arg(long, value_parser = alpha_list, conflicts_with = "lambdas")]
    pub alphas: Option<Values>,
    /// Comma-separated lambda values, each a cold run at --alpha.
    #[arg(long, value_parser = positive_list)]
    pub lambdas: Option<Values>,
    /// Alpha for a lambda sweep.
    #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
    pub alpha: f64,
    /// Directory for the embeddings and manifest.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Write an SVG next to every embedding.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Original feature CSV.
    #[arg(long)]
    pub features: PathBuf,
    /// Class-probability CSV; its argmax supplies the class labels.
    #[arg(long, required_unless_present = "labels")]
    pub probs: Option<PathBuf>,
    /// Integer class labels, used instead of the probability argmax.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub standardize: bool,
    /// Neighbourhood size.
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    /// Output CSV, one row per embedding.
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding JSON files.
    #[arg(required = true)]
    pub embeddings: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives features.csv, labels_true.csv, labels_argmax.csv, probabilities.csv and test_indices.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Feature CSV preloaded for new sessions.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Ground-truth labels; with --test-indices they form the evaluation set for retraining.
    #[arg(long, requires = "test_indices")]
    pub labels: Option<PathBuf>,
    #[arg(long, requires = "labels")]
    pub test_indices: Option<PathBuf>,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Sessions are restored from and flushed to this directory.
    #[arg(long, default_value = "cctsne-sessions")]
    pub data_dir: PathBuf,
    /// Publish a progress frame every this many iterations.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub frame_every: u64,
    /// Optimizer iterations per job.
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(v)
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("{v} is outside [0, 1]"));
    }
    Ok(v)
}

fn positive(s: &str) -> Result<f64, String> {
    let v = number(s)?;
    if v <= 0.0 {
        return Err(format!("{v} must be positive"));
    }
    Ok(v)
}

/// A comma-separated list given as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct Values(pub Vec<f64>);

fn list(s: &str, each: fn(&str) -> Result<f64, String>) -> Result<Values, String> {
    s.split(',').map(each).collect::<Result<Vec<_>, _>>().map(Values)
}

fn alpha_list(s: &str) -> Result<Values, String> {
    list(s, unit_interval)
}

fn positive_list(s: &str) -> Result<Values, String> {
    list(s, positive)
}
