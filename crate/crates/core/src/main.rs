use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pilot_commit::runner::{
    self, CostMode, ExperimentConfig, MethodChoice, RunError, SweepAxis, SweepSpec,
};

#[derive(Parser)]
#[command(name = "pilot-commit", version, about = "Rollout-allocation simulator: Pilot-Commit vs GRPO vs DAPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Grpo,
    Dapo,
    Pc,
    Compare,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Split,
    PLower,
    PUpper,
    PSolve,
    D,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    EqualTraining,
    EqualSampling,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured method (or override it with --method).
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
    },
    /// Run GRPO, DAPO and Pilot-Commit on identical seeds.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one scheduler parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated values; for `split` these are n_pilot values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "equal-training")]
        mode: ModeArg,
        /// Held-fixed total (n_pilot + n_commit, or rollouts sampled per step).
        #[arg(long)]
        total: Option<u64>,
    },
    /// Print the default config as TOML.
    DefaultConfig,
}

fn load(common: &Common) -> Result<ExperimentConfig, RunError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &common.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(steps) = common.max_steps {
        config.max_steps = steps;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run { common, method } => {
            let mut config = load(&common)?;
            if let Some(m) = method {
                config.method = match m {
                    MethodArg::Grpo => MethodChoice::Grpo,
                    MethodArg::Dapo => MethodChoice::Dapo,
                    MethodArg::Pc => MethodChoice::Pc,
                    MethodArg::Compare => MethodChoice::Compare,
                };
                config.validate()?;
            }
            let outcome = runner::run_experiment(&config)?;
            print!("{}", runner::render_report(&outcome.report));
        }
        Command::Compare { common } => {
            let mut config = load(&common)?;
            config.method = MethodChoice::Compare;
            config.validate()?;
            let outcome = runner::run_experiment(&config)?;
            print!("{}", runner::render_report(&outcome.report));
        }
        Command::Sweep {
            common,
            axis,
            values,
            mode,
            total,
        } => {
            let config = load(&common)?;
            let spec = SweepSpec {
                axis: match axis {
                    AxisArg::Split => SweepAxis::Split,
                    AxisArg::PLower => SweepAxis::PLower,
                    AxisArg::PUpper => SweepAxis::PUpper,
                    AxisArg::PSolve => SweepAxis::PSolve,
                    AxisArg::D => SweepAxis::MaxAge,
                },
                values,
                mode: match mode {
                    ModeArg::EqualTraining => CostMode::EqualTraining,
                    ModeArg::EqualSampling => CostMode::EqualSampling,
                },
                total,
            };
            for point in runner::sweep(&config, &spec, true)? {
                println!(
                    "{}={} (n_pilot={}, n_commit={}, sampled/step={})",
                    spec.axis.as_str(),
                    point.value,
                    point.n_pilot,
                    point.n_commit,
                    point.sampled_per_step
                );
                match (&point.report, &point.error) {
                    (Some(report), _) => print!("{}", runner::render_report(report)),
                    (None, Some(err)) => println!("  infeasible: {err}"),
                    (None, None) => {}
                }
                println!();
            }
        }
        Command::DefaultConfig => {
            print!("{}", ExperimentConfig::default().to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
