mod check;
mod curve;
mod estimate;
mod failure;
mod input;
mod output;
mod settings;
mod simulate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use failure::{CliResult, Failure};
use output::Format;
use settings::{CaseArg, SettingArgs};

#[derive(Debug, Parser)]
#[command(
    name = "fhbench",
    version,
    about = "Benchmarked Fay-Herriot small-area estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Area-level CSV: area_id,y,d,x1..xp[,w1..wm]
    #[arg(long)]
    input: Option<PathBuf>,
    /// Benchmark spec JSON
    #[arg(long)]
    spec: Option<PathBuf>,
}

impl DataArgs {
    fn pair(&self) -> CliResult<Option<(&Path, &Path)>> {
        match (&self.input, &self.spec) {
            (Some(i), Some(s)) => Ok(Some((i, s))),
            (None, None) => Ok(None),
            _ => Err(Failure::input(anyhow!(
                "--input and --spec must be given together"
            ))),
        }
    }
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Direct, EB, CM, CEB and UC estimates for area-level data
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Key/value summary for CSV output (default: <out>.summary.csv)
        #[arg(long)]
        summary: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sufficient and necessary improvement conditions
    Check {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: SettingArgs,
        /// Also report the min-over-λ forms for EB and CB
        #[arg(long)]
        minform: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo unconditional risks
    Simulate {
        #[command(flatten)]
        settings: SettingArgs,
        /// Keep only the benchmarked columns of this case
        #[arg(long, value_enum)]
        case: Option<CaseArg>,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Draw a fresh design for every replication
        #[arg(long)]
        redraw_x: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Approximate unconditional risk difference over a λ grid
    RiskCurve {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        settings: SettingArgs,
        #[arg(long, value_enum, default_value_t = CaseArg::One)]
        case: CaseArg,
        #[arg(long, default_value_t = 400)]
        points: usize,
        #[arg(long, default_value_t = 1e-4)]
        lambda_min: f64,
        #[arg(long, default_value_t = 1e4)]
        lambda_max: f64,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate {
            input,
            spec,
            summary,
            out,
        } => estimate::cmd_estimate(
            &input,
            &spec,
            out.out.as_deref(),
            summary.as_deref(),
            out.format,
        ),
        Command::Check {
            data,
            settings,
            minform,
            out,
        } => check::cmd_check(
            data.pair()?,
            &settings,
            minform,
            out.out.as_deref(),
            out.format,
        ),
        Command::Simulate {
            settings,
            case,
            reps,
            redraw_x,
            out,
        } => {
            if reps < 2 {
                return Err(Failure::input(anyhow!("--reps must be at least 2")));
            }
            simulate::cmd_simulate(
                &settings,
                case.map(Into::into),
                reps,
                redraw_x,
                out.out.as_deref(),
                out.format,
            )
        }
        Command::RiskCurve {
            data,
            settings,
            case,
            points,
            lambda_min,
            lambda_max,
            out,
        } => {
            let opts = curve::CurveOptions {
                points,
                lambda_min,
                lambda_max,
            };
            curve::cmd_risk_curve(
                data.pair()?,
                &settings,
                case.into(),
                &opts,
                out.out.as_deref(),
                out.format,
            )
        }
    }
}

fn broken_pipe(f: &Failure) -> bool {
    f.error.chain().any(|e| {
        let io = e.downcast_ref::<std::io::Error>().map(std::io::Error::kind);
        let via_csv = e.downcast_ref::<csv::Error>().and_then(|c| match c.kind() {
            csv::ErrorKind::Io(io) => Some(io.kind()),
            _ => None,
        });
        io.or(via_csv) == Some(std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if broken_pipe(&f) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
