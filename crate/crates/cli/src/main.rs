//! `treecf`: train tree models, explain their predictions with
//! counterfactuals and evaluate the results.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use treecf::distance::DistanceKind;
use treecf::{Error, ErrorClass};

pub const EXIT_ARGS: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_SCHEMA: u8 = 4;

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn args(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_ARGS,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_SCHEMA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match (&e, e.class()) {
            (Error::InvalidConfig(_), _) => EXIT_ARGS,
            (_, ErrorClass::Data) => EXIT_DATA,
            (_, ErrorClass::Schema) => EXIT_SCHEMA,
            (_, ErrorClass::Numeric) => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "treecf", version, about = "Counterfactual explanations for tree ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scale, split and train a model; writes the model and split CSVs.
    Train(TrainArgs),
    /// Generate counterfactuals for every row of a CSV.
    Explain(ExplainArgs),
    /// Compute metrics for one counterfactual file, or compare two.
    Evaluate(EvaluateArgs),
    /// Sweep FOCUS hyperparameters and report the best cell.
    Gridsearch(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKindArg {
    /// Single CART tree.
    Dt,
    /// Random forest.
    Rf,
    /// AdaBoost (SAMME).
    Ab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Focus,
    Ft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestArg {
    Welch,
    Paired,
}

fn parse_distance(s: &str) -> Result<DistanceKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Comma-separated, non-empty list of positive numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<FloatList, String> {
    let values = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("grid axis must contain at least one value".into());
    }
    Ok(FloatList(values))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: std::path::PathBuf,
    /// Label column name.
    #[arg(long)]
    pub label: String,
    /// Binarize a numeric label: class 1 iff value >= threshold.
    #[arg(long)]
    pub label_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub kind: ModelKindArg,
    /// Trees for rf/ab (ignored for dt).
    #[arg(long, default_value_t = 100)]
    pub num_trees: usize,
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 1)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stratify the 70/30 split by class.
    #[arg(long)]
    pub stratify: bool,
    /// Model JSON to write.
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Directory for train.csv and test.csv (raw units).
    #[arg(long)]
    pub split_dir: Option<std::path::PathBuf>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Model plus instance rows shared by explain and gridsearch.
#[derive(Debug, Args)]
pub struct InstanceArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    /// CSV of instances to explain, in original units.
    #[arg(long)]
    pub data: std::path::PathBuf,
    /// Use only the first N rows.
    #[arg(long)]
    pub limit: Option<usize>,
    /// The data is already in the model's [0,1] units (for models saved
    /// without scaling metadata).
    #[arg(long)]
    pub prescaled: bool,
    /// Training CSV used to estimate the Mahalanobis covariance.
    #[arg(long)]
    pub train_data: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = treecf::dataio::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, value_parser = parse_distance, default_value = "euclidean")]
    pub distance: DistanceKind,
    /// Smoothing for the distance gradient; reported distances are exact.
    #[arg(long, default_value_t = treecf::distance::DEFAULT_SMOOTH_EPS)]
    pub smooth_eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: InstanceArgs,
    #[arg(long, value_enum, default_value = "focus")]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    #[arg(long, default_value_t = treecf::focus::DEFAULT_ITERATIONS)]
    pub iters: usize,
    /// Keep iterates inside [0,1]^n.
    #[arg(long)]
    pub clamp: bool,
    /// Feature Tweaking offset; without it the default set is swept.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Counterfactual JSON to write.
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Counterfactual file of the method under test.
    #[arg(long)]
    pub cf: std::path::PathBuf,
    /// Counterfactual file to compare against.
    #[arg(long)]
    pub baseline: Option<std::path::PathBuf>,
    /// Model used to re-check validity and to scale --train-data.
    #[arg(long)]
    pub model: Option<std::path::PathBuf>,
    #[arg(long)]
    pub train_data: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = treecf::dataio::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, value_enum, default_value = "welch")]
    pub test: TestArg,
    /// Dataset name for the report row.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Model name for the report row.
    #[arg(long)]
    pub model_name: Option<String>,
    /// Report JSON to write.
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Report CSV; defaults to the JSON path with a .csv extension.
    #[arg(long)]
    pub csv: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub input: InstanceArgs,
    #[arg(long, value_parser = parse_list)]
    pub sigma: Option<FloatList>,
    #[arg(long, value_parser = parse_list)]
    pub tau: Option<FloatList>,
    #[arg(long, value_parser = parse_list)]
    pub beta: Option<FloatList>,
    #[arg(long, value_parser = parse_list)]
    pub alpha: Option<FloatList>,
    #[arg(long, default_value_t = treecf::focus::DEFAULT_ITERATIONS)]
    pub iters: usize,
    #[arg(long)]
    pub clamp: bool,
    /// Best-configuration JSON to write.
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Sweep table CSV; defaults to the JSON path with a .sweep.csv suffix.
    #[arg(long)]
    pub table: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Gridsearch(a) => commands::gridsearch(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list("1,2, 4").unwrap(), FloatList(vec![1.0, 2.0, 4.0]));
        assert!(parse_list("").is_err());
        assert!(parse_list(",").is_err());
        assert!(parse_list("1,x").is_err());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::MissingLabelColumn("q".into())).code, EXIT_DATA);
        assert_eq!(CliError::from(Error::EmptyOverlap).code, EXIT_SCHEMA);
        assert_eq!(CliError::from(Error::MissingFeatureColumn("a".into())).code, EXIT_SCHEMA);
        assert_eq!(CliError::from(Error::InvalidConfig("x".into())).code, EXIT_ARGS);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
