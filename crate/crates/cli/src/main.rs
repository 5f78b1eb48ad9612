use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use innodyn_cli::commands::{self, CliError, CompareArgs, Context, Format, Overrides};
use innodyn_core::analysis::DEFAULT_MARGIN;

#[derive(Parser)]
#[command(name = "innodyn", version, about = "Innovation dynamics simulator")]
struct Cli {
    /// Worker threads for ensembles (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Scenario file (TOML).
    scenario: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Number of evenly spaced sample times.
    #[arg(long)]
    grid: Option<usize>,
    /// Output directory; also settable through INNODYN_OUT_DIR.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Largest accepted ratio for the timescale-separation checks.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
}

impl RunArgs {
    fn overrides(&self, replicates: Option<u64>) -> Overrides {
        Overrides {
            seed: self.seed,
            replicates,
            horizon: self.horizon,
            grid: self.grid,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check modelling assumptions and timescale separation.
    Validate {
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// One stochastic trajectory.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Also write every event.
        #[arg(long)]
        events: bool,
    },
    /// Replicate statistics of the stochastic process.
    Ensemble {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        replicates: Option<u64>,
    },
    /// Deterministic large-population limit.
    Ode {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monomorphic substitution sequence.
    Tss {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Alternating substitution tree.
    Tst {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Gap to a deterministic CSV, or fixation time to a tree endpoint or target.
    Compare {
        /// Trajectory or ensemble CSV.
        stochastic: PathBuf,
        /// Deterministic CSV or substitution-tree JSON.
        reference: Option<PathBuf>,
        /// Target densities, comma separated, in column order.
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<f64>>,
        /// Total-variation radius around the target.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Migration scale, to report time / ln(1/eps).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Scenario whose epsilon to use.
        #[arg(long, conflicts_with = "epsilon")]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let written = match cli.command {
        Command::Validate { scenario, margin, format } => {
            let (text, failed) = commands::validate(&scenario, margin, format)?;
            print!("{text}");
            return Ok(if failed { 1 } else { 0 });
        }
        Command::Simulate { run, events } => {
            let mut ctx = Context::load(&run.scenario, &run.overrides(None), run.margin)?;
            commands::cmd_simulate(&mut ctx, events)?
        }
        Command::Ensemble { run, replicates } => {
            let mut ctx = Context::load(&run.scenario, &run.overrides(replicates), run.margin)?;
            commands::cmd_ensemble(&mut ctx)?
        }
        Command::Ode { run } => {
            let mut ctx = Context::load(&run.scenario, &run.overrides(None), run.margin)?;
            commands::cmd_ode(&mut ctx)?
        }
        Command::Tss { run, format } => {
            let mut ctx = Context::load(&run.scenario, &run.overrides(None), run.margin)?;
            commands::cmd_tss(&mut ctx, format)?
        }
        Command::Tst { run, format } => {
            let mut ctx = Context::load(&run.scenario, &run.overrides(None), run.margin)?;
            commands::cmd_tst(&mut ctx, format)?
        }
        Command::Compare {
            stochastic,
            reference,
            target,
            delta,
            epsilon,
            scenario,
            out,
        } => {
            let epsilon = match scenario {
                Some(path) => Some(innodyn_cli::Scenario::load(&path)?.regime()?.epsilon()),
                None => epsilon,
            };
            let (text, written) = commands::cmd_compare(&CompareArgs {
                stochastic: &stochastic,
                reference: reference.as_deref(),
                target,
                delta,
                epsilon,
                out,
            })?;
            print!("{text}");
            written
        }
    };
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    eprintln!("elapsed {:.3} s", start.elapsed().as_secs_f64());
    ExitCode::from(code as u8)
}
