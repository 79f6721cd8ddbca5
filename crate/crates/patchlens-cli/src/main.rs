//! Command-line entry point wiring the pipeline commands into reproducible
//! experiments. Verbosity comes from the `PATCHLENS_LOG` environment
//! variable (`error`, `warn`, `info`, `debug`, `trace`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use patchlens::config::{parse_config, ExperimentConfig};
use patchlens::deconv::FitMethod;
use patchlens::{Error, Result};
use patchlens_cli::{
    cmd_evaluate, cmd_fit, cmd_reconstruct, cmd_simulate, cmd_sweep_patches, exit_code_for,
};

#[derive(Parser)]
#[command(name = "patchlens", version, about = "Lensless-imaging simulation and patch-wise deconvolution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Cap the worker thread count
    #[arg(long)]
    threads: Option<usize>,
    /// Override the config's fit method (wiener | l2 | l1)
    #[arg(long)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes and simulate measurements for each truncation level
    Simulate(Common),
    /// Fit per-patch deconvolution kernel banks (plus the global baseline)
    Fit(Common),
    /// Apply fitted banks to the measurements
    Reconstruct(Common),
    /// Score reconstructions against ground truth and print the table
    Evaluate(Common),
    /// Fit/reconstruct/evaluate over N x (N+1) layouts
    SweepPatches {
        #[command(flatten)]
        common: Common,
        /// Comma-separated patch counts, e.g. "1,2,4"
        #[arg(long, default_value = "1,2,4")]
        n_list: String,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = parse_config(&common.config)?;
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(method) = &common.method {
        config.fit.method = match method.as_str() {
            "wiener" => FitMethod::Wiener,
            "l2" => FitMethod::LeastSquares,
            "l1" => FitMethod::SmoothedL1,
            other => return Err(Error::Config(format!("--method: unknown `{other}`"))),
        };
    }
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    std::fs::create_dir_all(&config.out_dir)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => cmd_simulate(&load_config(&c)?),
        Command::Fit(c) => cmd_fit(&load_config(&c)?),
        Command::Reconstruct(c) => cmd_reconstruct(&load_config(&c)?),
        Command::Evaluate(c) => cmd_evaluate(&load_config(&c)?),
        Command::SweepPatches { common, n_list } => {
            let config = load_config(&common)?;
            let ns: Vec<usize> = n_list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("--n-list: bad entry `{s}`")))
                })
                .collect::<Result<_>>()?;
            cmd_sweep_patches(&config, &ns)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("PATCHLENS_LOG", "info")
            .write_style("PATCHLENS_LOG_STYLE"),
    )
    .format_timestamp(None)
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1, // usage error
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
