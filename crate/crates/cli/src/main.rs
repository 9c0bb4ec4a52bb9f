use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluid_isac::optimizer::Scheme;
use fluid_isac_cli::{
    calibrate, calibration_csv, cmd_run, cmd_sweep, load, parse_schemes, sweep_csv, write_output, CliError, Common,
    ConventionChoice, SweepSpec, CALIBRATION_DRAWS,
};

#[derive(Parser)]
#[command(name = "fisac", version, about = "Fluid-antenna ISAC optimizer and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight the sensing objective with the realized reflection coefficients.
    #[arg(long)]
    genie_psi: bool,
    /// Detector convention: auto, paper or half.
    #[arg(long)]
    convention: Option<ConventionChoice>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn common(&self) -> Common {
        Common { config: self.config.clone(), seed: self.seed, genie_psi: self.genie_psi, convention: self.convention }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Single optimization run. Writes the iteration trace to --out and a
    /// summary row to standard output. Exits 2 when the SINR targets are
    /// not met.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "ds-fas")]
        scheme: Scheme,
        #[arg(long, default_value_t = 1)]
        trials: usize,
    },
    /// Monte Carlo sweep over one parameter, e.g. `--sweep gamma=1,3,5`.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated schemes or `all`.
        #[arg(long, default_value = "all")]
        scheme: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        sweep: SweepSpec,
    },
    /// Empirical false-alarm rates of both detector conventions.
    CalibrateDetector {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = CALIBRATION_DRAWS)]
        draws: usize,
    },
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run { common, scheme, trials } => {
            if trials != 1 {
                return Err(CliError::Usage("run takes a single trial; use sweep for Monte Carlo runs".into()));
            }
            let (cfg, settings) = load(&common.common())?;
            let out = cmd_run(&cfg, &settings, scheme)?;
            if let Some(p) = &common.out {
                write_output(Some(p), &out.trace)?;
            }
            write_output(None, &out.summary)?;
            Ok(out.result.feasible)
        }
        Command::Sweep { common, scheme, trials, sweep } => {
            let (cfg, settings) = load(&common.common())?;
            let schemes = parse_schemes(&scheme)?;
            let rows = cmd_sweep(&cfg, &settings, &schemes, &sweep, trials)?;
            write_output(common.out.as_deref(), &sweep_csv(&rows)?)?;
            Ok(true)
        }
        Command::CalibrateDetector { common, draws } => {
            let mut c = common.common();
            c.convention = None;
            let (cfg, _) = load(&c)?;
            let rep = calibrate(&cfg, draws)?;
            write_output(common.out.as_deref(), &calibration_csv(&rep))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
