use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use metabnn::config::ConfigArgs;
use metabnn::datasets::{self, default_data_dir};
use metabnn::flip_run::{run_flip_importance, train_reference_model, write_flip, Checkpoint};
use metabnn::harness::{run_permuted, run_stream};
use metabnn::metrics::write_run;
use metabnn::report::emit_report;
use metabnn::toy_run::{run_toy, write_toy};
use metabnn::fetch::HttpTransport;
use metabnn::{LabError, Result};

#[derive(Parser)]
#[command(name = "metabnn", version, about = "Metaplastic binarized neural network experiments")]
struct Cli {
    /// Dataset cache directory (default: $METABNN_DATA or ./data at the workspace root).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Mirror list replacing the bundled one (`<dataset> <base url>` per line).
    #[arg(long, global = true)]
    mirrors: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download and verify datasets into the cache.
    FetchData {
        /// mnist, fmnist or all.
        #[arg(long, default_value = "all")]
        dataset: String,
    },
    /// Toy quadratic problem: hidden-weight magnitude against flip importance.
    Toy(ConfigArgs),
    /// Sequential permuted-MNIST tasks.
    Permuted(ConfigArgs),
    /// Class-balanced stream learning with a full-dataset baseline.
    Stream {
        #[command(flatten)]
        config: ConfigArgs,
        /// Known baseline accuracy; skips the baseline run.
        #[arg(long)]
        baseline: Option<f64>,
    },
    /// Loss change from flipping single binarized weights of a trained network.
    FlipImportance(ConfigArgs),
    /// Aggregate metrics CSVs into a plot-ready JSON.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "report.json")]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let data_dir = cli.data_dir.unwrap_or_else(default_data_dir);
    let mirrors = match &cli.mirrors {
        Some(p) => std::fs::read_to_string(p).map_err(|e| LabError::Config(format!("{}: {e}", p.display())))?,
        None => metabnn::fetch::MIRRORS.to_string(),
    };
    let load = |name: &str| datasets::load_with(name, &data_dir, &mirrors, &HttpTransport::default());
    match cli.command {
        Command::FetchData { dataset } => {
            let names: Vec<&str> = if dataset == "all" {
                metabnn::fetch::DATASETS.to_vec()
            } else {
                vec![dataset.as_str()]
            };
            for name in names {
                load(name)?;
                info!("{name}: verified in {}", data_dir.join(name).display());
            }
        }
        Command::Toy(args) => {
            let cfg = args.resolve()?.validated()?;
            let out = run_toy(&cfg)?;
            let paths = write_toy(&cfg.output, &cfg, &out)?;
            match out.median_spearman() {
                Some(m) => println!("median spearman {m:.4}"),
                None => println!("median spearman undefined (constant columns)"),
            }
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Permuted(args) => {
            let cfg = args.resolve()?.validated()?;
            let data = load(cfg.dataset.as_str())?;
            let run = run_permuted(&cfg, &data)?;
            let (csv, json) = write_run(&cfg.output, &run)?;
            println!("{}\n{}", csv.display(), json.display());
        }
        Command::Stream { config, baseline } => {
            let cfg = config.resolve()?.validated()?;
            let data = load(cfg.dataset.as_str())?;
            let run = run_stream(&cfg, &data, baseline)?;
            let (csv, json) = write_run(&cfg.output, &run)?;
            println!("{}\n{}", csv.display(), json.display());
        }
        Command::FlipImportance(args) => {
            let cfg = args.resolve()?.validated()?;
            let data = load(cfg.dataset.as_str())?;
            let model = match &cfg.model {
                Some(p) if p.exists() => Checkpoint::load(p)?.into_model()?,
                other => {
                    let model = train_reference_model(&cfg, &data)?;
                    let path = other.clone().unwrap_or_else(|| cfg.output.join(format!("flip-model-s{}.json", cfg.seed)));
                    std::fs::create_dir_all(&cfg.output).map_err(|e| LabError::io(&cfg.output, e))?;
                    Checkpoint::of(&model).save(&path)?;
                    println!("{}", path.display());
                    model
                }
            };
            let out = run_flip_importance(&cfg, &data, model)?;
            for p in write_flip(&cfg.output, &cfg, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Report { inputs, output } => {
            emit_report(&inputs, &output)?;
            println!("{}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
