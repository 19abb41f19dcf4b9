use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reflexmc::harness::{
    load_config, resolve_jobs, run_experiment, write_outputs, Experiment, ExperimentConfig,
};
use reflexmc::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "reflexmc",
    version,
    about = "Reflected replica-exchange Langevin experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a constrained target (multimodal or stationarity experiments).
    Sample(RunArgs),
    /// Identify Lorenz or Lotka–Volterra parameters from simulated data.
    Identify(RunArgs),
    /// KL divergence against domain diameter on octagon domains.
    SweepDiameter(RunArgs),
    /// KL-versus-cost curves of several methods on one target.
    KlBench(RunArgs),
    /// Parse and validate a config without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the first seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds run in parallel; falls back to REFLEXMC_THREADS.
    #[arg(long)]
    jobs: Option<usize>,
}

fn allowed(command: &Command) -> &'static [Experiment] {
    match command {
        Command::Sample(_) => &[Experiment::Multimodal, Experiment::StationarityCheck],
        Command::Identify(_) => &[Experiment::IdentifyLorenz, Experiment::IdentifyLv],
        Command::SweepDiameter(_) => &[Experiment::DiameterSweep],
        Command::KlBench(_) => &[Experiment::Multimodal, Experiment::DiameterSweep],
        Command::ValidateConfig { .. } => &[],
    }
}

fn run(command: &Command, args: &RunArgs) -> Result<(), Error> {
    let mut config: ExperimentConfig = load_config(&args.config)?;
    let ok = allowed(command);
    if !ok.contains(&config.experiment) {
        let names: Vec<&str> = ok.iter().map(|e| e.name()).collect();
        return Err(Error::Config {
            path: "experiment".into(),
            message: format!(
                "{} is not one of {}",
                config.experiment.name(),
                names.join(", ")
            ),
        });
    }
    if let Some(seed) = args.seed {
        config.seeds[0] = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir.clone_from(out);
    }
    let outcome = run_experiment(&config, resolve_jobs(args.jobs))?;
    for run in &outcome.result.runs {
        println!("{}", run.summary_line());
    }
    if let Some(trend) = &outcome.result.trend {
        println!(
            "trend spearman={:.3} kl_means={:?}",
            trend.spearman, trend.kl_means
        );
    }
    let written = write_outputs(&config, &outcome, &config.output_dir)?;
    println!(
        "wrote {} files to {}",
        written.len(),
        config.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ValidateConfig { config } => load_config(config).map(|c| {
            println!("ok: {} with {} seed(s)", c.experiment.name(), c.seeds.len());
        }),
        Command::Sample(a)
        | Command::Identify(a)
        | Command::SweepDiameter(a)
        | Command::KlBench(a) => run(&cli.command, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
