use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use efm::harness::{run_experiment, replay_trace, ExperimentConfig, RunnerOptions};
use efm::observer::Mechanism;

/// Loss-bit measurement testbed: simulates a client-observer-server path,
/// marks packets with the spin/L/Q/R/T bits, and scores passive observer
/// estimates against arbiter groundtruth.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunFlags {
    /// Override the base seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write the per-run packet trace files.
    #[arg(long)]
    keep_traces: bool,
    /// Worker threads for repetitions.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single-point experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Execute a multi-point sweep config.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Re-run all observer decoders over a recorded trace file and print
    /// the report CSV.
    Replay { trace: PathBuf },
}

fn execute(cfg: &ExperimentConfig, flags: &RunFlags) -> Result<(), efm::harness::HarnessError> {
    let opts = RunnerOptions {
        out_dir: flags.out.clone(),
        keep_traces: flags.keep_traces,
        parallel: flags.parallel,
    };
    let stats = run_experiment(cfg, &opts)?;
    for point in &stats {
        let gt = point
            .groundtruth
            .1
            .map_or("n/a".to_string(), |(m, _)| format!("{m:.6}"));
        println!("{}: groundtruth mean {gt}", point.label);
        for ((samples, agg), mechanism) in point.mechanisms.iter().zip(Mechanism::ALL) {
            match agg {
                Some((mean, ci)) => println!(
                    "  {}: mean {mean:.6} ±{ci:.6} (n={samples})",
                    mechanism.as_str()
                ),
                None => println!("  {}: no measurement", mechanism.as_str()),
            }
        }
    }
    println!("results written to {}", flags.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, flags } => ExperimentConfig::load(config).and_then(|cfg| {
            let mut cfg = cfg;
            if let Some(seed) = flags.seed {
                cfg.base_seed = seed;
            }
            let points = cfg.points()?;
            if points.len() != 1 {
                return Err(efm::harness::HarnessError::Config(format!(
                    "`run` needs a single-point config, this one has {} points; use `sweep`",
                    points.len()
                )));
            }
            execute(&cfg, flags)
        }),
        Command::Sweep { config, flags } => ExperimentConfig::load(config).and_then(|cfg| {
            let mut cfg = cfg;
            if let Some(seed) = flags.seed {
                cfg.base_seed = seed;
            }
            execute(&cfg, flags)
        }),
        Command::Replay { trace } => replay_trace(trace).map(|csv| print!("{csv}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
