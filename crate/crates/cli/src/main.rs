use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use relu_mhe_cli::config::{ExperimentConfig, Method};
use relu_mhe_cli::{analysis, run};

#[derive(Parser, Debug)]
#[command(name = "relu-mhe", version, about = "Observability analysis and MHE training of small ReLU networks")]
struct Cli {
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Training epochs; overrides the config.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Comma separated methods: mhe, regularized-mhe, gd, adam.
    #[arg(long, global = true)]
    method: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Observability certificate of a weights file.
    Analyze {
        weights: PathBuf,
        /// The last row of the file is the hidden bias.
        #[arg(long)]
        bias: bool,
    },
    /// Minimal persistently exciting input for a weights file.
    DesignInput {
        weights: PathBuf,
        #[arg(long)]
        bias: bool,
    },
    /// A single run (repeat 0) of a config.
    Train { config: PathBuf },
    /// All repeats of a config, in parallel.
    Benchmark { config: PathBuf },
}

fn load(cli: &Cli, path: &PathBuf) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(epochs) = cli.epochs {
        cfg.epochs = Some(epochs);
    }
    if let Some(list) = &cli.method {
        cfg.methods = Method::parse_list(list)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(summary: &run::Summary) {
    for m in &summary.methods {
        let mut line = format!("{:<16}", m.method.name());
        if let Some(s) = m.final_estimation_error {
            line += &format!(" est.err {:.3e} ± {:.1e}", s.mean, s.std);
            line += &format!("  below {:e} within 1 epoch: {}/{}", summary.error_threshold, m.converged_within_one_epoch, s.count);
        }
        if let Some(s) = m.test_rmse {
            line += &format!(" test RMSE {:.4} ± {:.4}", s.mean, s.std);
        }
        if let Some(s) = m.final_test_loss {
            line += &format!("  test MSE {:.3e}", s.mean);
        }
        println!("{line}");
    }
}

fn main_inner(cli: Cli) -> Result<()> {
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::Analyze { weights, bias } => {
            let report = analysis::analyze_file(weights, *bias, &out("out"))?;
            println!("observable: {}", report.observable);
            println!("{}", report.explanation);
        }
        Command::DesignInput { weights, bias } => {
            let report = analysis::design_file(weights, *bias, &out("out"))?;
            println!(
                "{} inputs, Jacobian rank {}/{}, certified: {}",
                report.samples, report.jacobian_rank, report.state_dim, report.certified
            );
        }
        Command::Train { config } => {
            let cfg = load(&cli, config)?;
            let summary = run::execute(&cfg, 1, &cfg.output)?;
            print_summary(&summary);
        }
        Command::Benchmark { config } => {
            let cfg = load(&cli, config)?;
            let summary = run::execute(&cfg, cfg.repeats, &cfg.output)?;
            print_summary(&summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
