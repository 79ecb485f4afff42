use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "sibp",
    version,
    about = "Weakly supervised stacked IBP: synthesize, train, infer, annotate, query and evaluate"
)]
pub struct Cli {
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Enable debug logging.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Fit appearances on a labeled dataset.
    Train(TrainArgs),
    /// Infer per-bag posteriors with a trained model.
    Infer(InferArgs),
    /// Annotate images from inferred posteriors.
    Annotate(AnnotateArgs),
    /// Rank a corpus for object + attribute queries.
    Query(QueryArgs),
    /// Score annotations, posteriors or rankings against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Gaussian planted appearances with scale sigma_a.
    Standard,
    /// Mutually orthogonal planted appearances of norm 5 sigma.
    Separated,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct LayoutArgs {
    /// Number of object factors.
    #[arg(long, default_value_t = 4)]
    pub ko: usize,
    /// Number of attribute factors.
    #[arg(long, default_value_t = 6)]
    pub ka: usize,
    /// Truncation level (total factors, including background).
    #[arg(long, default_value_t = 20)]
    pub kmax: usize,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::Standard)]
    pub preset: Preset,
    /// Number of images.
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    /// Patches per image.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[command(flatten)]
    pub layout: LayoutArgs,
    /// Planted background factors.
    #[arg(long, default_value_t = 3)]
    pub kbg: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub sigma_a: Option<f64>,
    /// Rescale planted rows to this many noise standard deviations.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse the planted appearances of an existing ground-truth sidecar.
    #[arg(long, value_name = "TRUTH")]
    pub appearances: Option<PathBuf>,
    /// Drop image labels from the written dataset.
    #[arg(long)]
    pub unlabeled: bool,
    /// Dataset output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar output (JSON).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Labeled training dataset (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma_a: f64,
    /// Relative objective change that stops training (`inf` runs one sweep).
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use the psi(tau_1) - psi(tau_2) stick term instead of the Beta expectation.
    #[arg(long)]
    pub eta_literal: bool,
    #[arg(long, env = "SIBP_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Model output (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Objective trace output (JSON).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Bags to infer (labels, if present, are ignored).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_sweeps: usize,
    /// Jitter the initial assignments with this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eta_literal: bool,
    #[arg(long, env = "SIBP_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Posterior output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Pick objects by presence, then rank their attributes.
    Free,
    /// Object names come from the ground-truth sidecar.
    Names,
    /// Patch sets come from `--patches` or the ground-truth sidecar.
    Location,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AnnotateArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Model whose layout produced the posteriors.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    /// Attributes kept per object.
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    /// Objects kept per image in free mode.
    #[arg(long, default_value_t = 1)]
    pub objects: usize,
    /// Keep objects with presence at least this value instead of a fixed count.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Patch indices scored in location mode, applied to every image.
    #[arg(long, value_delimiter = ',')]
    pub patches: Option<Vec<usize>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    /// Object factor index.
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    pub object: Option<usize>,
    /// Attribute factor indices, comma separated.
    #[arg(long, value_delimiter = ',', requires = "object")]
    pub attrs: Vec<usize>,
    /// Issue this many random single-attribute queries instead.
    #[arg(long)]
    pub random: Option<usize>,
    /// Redraw random queries that no image satisfies according to this sidecar.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// AP of the top-t attributes; `None` means use `--t`.
    ApAt(Option<usize>),
    Map,
    Mar,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "map" => Ok(Metric::Map),
            "mar" => Ok(Metric::Mar),
            "ap@t" => Ok(Metric::ApAt(None)),
            _ => match s.strip_prefix("ap@").map(str::parse::<usize>) {
                Some(Ok(t)) if t > 0 => Ok(Metric::ApAt(Some(t))),
                _ => Err(format!("unknown metric `{s}` (expected ap@t, ap@<n>, map or mar)")),
            },
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    /// ap@t (or ap@<n>), map or mar.
    #[arg(long)]
    pub metric: Metric,
    #[arg(long)]
    pub truth: PathBuf,
    /// Annotation records, for ap@t.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Posterior records, for map.
    #[arg(long)]
    pub posteriors: Option<PathBuf>,
    /// Query rankings, for mar.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    /// Per-attribute precision/recall points, for map.
    #[arg(long)]
    pub pr_csv: Option<PathBuf>,
    /// Seed of the random-ranking baseline reported with mar.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report output (JSON); standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn metric_names() {
        assert_eq!("ap@t".parse::<Metric>(), Ok(Metric::ApAt(None)));
        assert_eq!("ap@5".parse::<Metric>(), Ok(Metric::ApAt(Some(5))));
        assert_eq!("map".parse::<Metric>(), Ok(Metric::Map));
        assert!("ap@0".parse::<Metric>().is_err());
        assert!("auc".parse::<Metric>().is_err());
    }
}
