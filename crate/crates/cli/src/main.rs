use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qagt_cli::config::ModeSpec;
use qagt_cli::{cmd_run, cmd_sweep, cmd_tune, cmd_verify, CliError, Experiment, Overrides};

#[derive(Parser)]
#[command(
    name = "qagt",
    version,
    about = "Quantized aggregative gradient tracking experiments",
    after_help = "Outputs (in --out or the config's [output] dir):\n  \
                  tuning_report.txt  resolved step size, rates, constants and level bound\n  \
                  trajectory.csv     per-round states, residual, cumulative bits and saturations\n  \
                  diagnostics.csv    per-round error vector, performance index and contraction check\n  \
                  codes.csv          broadcast integer codes (quantized runs)\n  \
                  summary.txt        final residual, fitted rate, bits, saturations, oracle deviation\n  \
                  sweep.csv          one row per level (sweep)\n\n\
                  Exit codes: 0 success, 1 verification or convergence failure, 2 configuration or domain error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve step size, scaling rate and quantization level
    Tune(Common),
    /// Run the algorithm and write trajectories, diagnostics and a summary
    Run(Common),
    /// Run once per quantization level
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list of levels, e.g. 1,2,4,8
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<u64>,
    },
    /// Check the run against the algorithm's invariants
    Verify {
        #[command(flatten)]
        common: Common,
        /// Corrupt one broadcast code halfway through the run
        #[arg(long)]
        sabotage: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Quantized,
    Exact,
    Both,
}

#[derive(Args)]
struct Common {
    /// Experiment config file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which runs to perform (overrides the config)
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Abort on the first quantizer saturation
    #[arg(long)]
    strict_saturation: bool,
    /// Draw the initial state uniformly from the configured box with this seed
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn experiment(&self) -> Result<Experiment, CliError> {
        let ov = Overrides {
            mode: self.mode.map(|m| match m {
                ModeArg::Quantized => ModeSpec::Quantized,
                ModeArg::Exact => ModeSpec::Exact,
                ModeArg::Both => ModeSpec::Both,
            }),
            strict_saturation: self.strict_saturation,
            seed: self.seed,
            out: self.out.clone(),
        };
        Experiment::load(&self.config, &ov)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Tune(c) => {
            let exp = c.experiment()?;
            print!("{}", cmd_tune(&exp)?.to_text());
        }
        Command::Run(c) => {
            let exp = c.experiment()?;
            print!("{}", cmd_run(&exp)?.text);
        }
        Command::Sweep { common, levels } => {
            let exp = common.experiment()?;
            let rows = cmd_sweep(&exp, &levels)?;
            print!("{}", qagt_cli::commands::sweep_to_csv(&rows));
        }
        Command::Verify { common, sabotage } => {
            let exp = common.experiment()?;
            let report = cmd_verify(&exp, sabotage)?;
            print!("{}", report.table());
            let failed = report.failed();
            if !failed.is_empty() {
                return Err(CliError::Verification(failed.join(", ")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qagt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
