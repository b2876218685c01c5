use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod artifacts;
mod config;
mod error;
mod stages;

use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "floodgt", about = "Flood susceptibility mapping with a graph transformer", disable_version_flag = true)]
struct Cli {
    /// Print a JSON version descriptor.
    #[arg(long)]
    version: bool,
    /// Print the JSON run-config descriptor.
    #[arg(long)]
    config_schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// JSON run config.
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Load points, screen collinearity, write the retained feature table.
    Ingest(ConfigArg),
    /// Balanced sample, stratified split and min-max normalization.
    Sample(ConfigArg),
    /// PCA and cosine k-NN graph.
    BuildGraph(ConfigArg),
    /// Laplacian positional encodings.
    Pe(ConfigArg),
    /// Train the graph transformer.
    Train(ConfigArg),
    /// Deterministic and MC-dropout predictions.
    Predict(ConfigArg),
    /// Classification metrics per split.
    Metrics(ConfigArg),
    /// Moran's I and Geary's C of the predictions.
    Autocorr(ConfigArg),
    /// Krige susceptibility and uncertainty rasters.
    Krige(ConfigArg),
    /// Natural-breaks classes and class areas.
    Classify(ConfigArg),
    /// Permutation feature importance.
    Importance(ConfigArg),
    /// One-at-a-time hyperparameter sensitivity.
    Sensitivity(ConfigArg),
    /// Climate and land-use scenarios.
    Scenario(ConfigArg),
    /// Railway length per susceptibility class.
    Exposure(ConfigArg),
    /// Aggregate tables and plot data.
    Report(ConfigArg),
    /// Every stage in order.
    All(ConfigArg),
    /// Write the synthetic watershed dataset and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    if cli.version {
        return Ok(serde_json::json!({
            "name": "floodgt",
            "version": env!("CARGO_PKG_VERSION"),
            "artifact_formats": ["csv", "tsv", "json", "esri-ascii"],
        }));
    }
    if cli.config_schema {
        return Ok(config::schema());
    }
    let Some(cmd) = cli.command else {
        return Err(CliError::Usage("a subcommand is required; see --help".into()));
    };
    let load = |a: &ConfigArg| RunConfig::load(&a.config);
    let stage = |name: &str, a: &ConfigArg, f: fn(&config::LoadedConfig) -> Result<(), CliError>| {
        let cfg = load(a)?;
        f(&cfg)?;
        Ok(serde_json::json!({"stage": name, "status": "ok", "config_hash": cfg.hash}))
    };
    match cmd {
        Command::Ingest(a) => stage("ingest", &a, stages::ingest),
        Command::Sample(a) => stage("sample", &a, stages::sample),
        Command::BuildGraph(a) => stage("build-graph", &a, stages::build_graph),
        Command::Pe(a) => stage("pe", &a, stages::pe),
        Command::Train(a) => stage("train", &a, stages::train_stage),
        Command::Predict(a) => stage("predict", &a, stages::predict),
        Command::Metrics(a) => stage("metrics", &a, stages::metrics),
        Command::Autocorr(a) => stage("autocorr", &a, stages::autocorr),
        Command::Krige(a) => stage("krige", &a, stages::krige),
        Command::Classify(a) => stage("classify", &a, stages::classify_stage),
        Command::Importance(a) => stage("importance", &a, stages::importance),
        Command::Sensitivity(a) => stage("sensitivity", &a, stages::sensitivity),
        Command::Scenario(a) => stage("scenario", &a, stages::scenario),
        Command::Exposure(a) => stage("exposure", &a, stages::exposure),
        Command::Report(a) => stage("report", &a, stages::report),
        Command::All(a) => {
            let cfg = load(&a)?;
            let done = stages::run_all(&cfg)?;
            Ok(serde_json::json!({"stage": "all", "status": "ok", "stages": done, "config_hash": cfg.hash}))
        }
        Command::Synth { out, n_per_class, seed } => {
            let files = stages::synth_dataset(&out, n_per_class, seed)?;
            Ok(serde_json::json!({"stage": "synth", "status": "ok", "files": files}))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
