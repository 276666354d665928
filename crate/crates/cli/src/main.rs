//! `oscilla`: batch front end for equilibria, spectra, Hopf candidates,
//! Fourier-mode problems, periodic branches and time integration of a
//! spring-mounted body in a viscous stream.

mod artifacts;
mod config;
mod error;
mod pipeline;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline::Session;

#[derive(Parser, Debug)]
#[command(name = "oscilla", version, about = "Hopf bifurcation analysis of a spring-mounted body in a viscous stream")]
struct Cli {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the `output` key.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; the OSCILLA_JOBS environment variable takes precedence.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => {
            let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
            Ok([num(a)?, num(b)?])
        }
        _ => Err(format!("expected two comma-separated numbers, got `{s}`")),
    }
}

#[derive(Args, Debug)]
struct RangeArg {
    /// Bracket `a,b` for the crossing search.
    #[arg(long, value_parser = parse_pair)]
    lambda_range: Option<[f64; 2]>,
}

#[derive(Args, Debug)]
struct BranchArgs {
    /// Largest amplitude parameter.
    #[arg(long)]
    epsilon_max: Option<f64>,
    /// Number of branch points.
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Args, Debug)]
struct ModeArgs {
    /// Base frequency.
    #[arg(long)]
    zeta: Option<f64>,
    /// Oseen drift parameter.
    #[arg(long)]
    lambda: Option<f64>,
    /// Highest Fourier index.
    #[arg(long)]
    kmax: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Equilibria and forces over a list of parameters.
    Steady {
        /// Comma-separated parameter values.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
    },
    /// Eigenvalues near the imaginary axis at one parameter.
    Eigs {
        /// Parameter value.
        #[arg(long)]
        lambda: Option<f64>,
        /// Frequency window `a,b`.
        #[arg(long, value_parser = parse_pair)]
        window: Option<[f64; 2]>,
        /// Also write the assembled operators in coordinate format.
        #[arg(long)]
        dump_operators: bool,
    },
    /// Crossing search and Hopf hypothesis checks.
    Hopf {
        #[command(flatten)]
        range: RangeArg,
    },
    /// Fourier-mode problems with traction and resonance matrices.
    Modes {
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Forced-response amplitude scan over mass ratios.
    Scan {
        /// Comma-separated mass ratios.
        #[arg(long, value_delimiter = ',')]
        varpi_grid: Option<Vec<f64>>,
        #[command(flatten)]
        mode: ModeArgs,
    },
    /// Periodic branch from the located crossing.
    Branch {
        #[command(flatten)]
        range: RangeArg,
        #[command(flatten)]
        branch: BranchArgs,
    },
    /// Time integration from the least stable mode.
    Simulate {
        /// Parameter value.
        #[arg(long)]
        lambda: Option<f64>,
        /// Final time.
        #[arg(long)]
        tfinal: Option<f64>,
        /// Time step.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Periodic-branch pipeline on a dense test system.
    Surrogate {
        /// One of normal-form-supercritical, normal-form-subcritical, quadratic.
        #[arg(long)]
        case: String,
        #[command(flatten)]
        branch: BranchArgs,
    },
    /// Equilibria, spectrum, Hopf candidate and periodic branch in one run.
    HopfPipeline {
        #[command(flatten)]
        range: RangeArg,
        #[command(flatten)]
        branch: BranchArgs,
    },
    /// Plot scripts for the CSV files of an artifact directory.
    EmitPlots {
        /// Artifact directory; defaults to the configured output directory.
        dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Steady { .. } => "steady",
            Command::Eigs { .. } => "eigs",
            Command::Hopf { .. } => "hopf",
            Command::Modes { .. } => "modes",
            Command::Scan { .. } => "scan",
            Command::Branch { .. } => "branch",
            Command::Simulate { .. } => "simulate",
            Command::Surrogate { .. } => "surrogate",
            Command::HopfPipeline { .. } => "hopf-pipeline",
            Command::EmitPlots { .. } => "emit-plots",
        }
    }

    /// Folds command-line values into the configuration.
    fn apply(&self, c: &mut RunConfig) {
        let range = |c: &mut RunConfig, r: &RangeArg| {
            if let Some(v) = r.lambda_range {
                c.spectral.lambda_range = v;
            }
        };
        let branch = |c: &mut RunConfig, b: &BranchArgs| {
            if let Some(v) = b.epsilon_max {
                c.branch.epsilon_max = v;
            }
            if let Some(v) = b.points {
                c.branch.points = v;
            }
        };
        let mode = |c: &mut RunConfig, m: &ModeArgs| {
            if let Some(v) = m.zeta {
                c.modes.zeta = v;
            }
            if let Some(v) = m.lambda {
                c.modes.lambda = v;
            }
            if let Some(v) = m.kmax {
                c.modes.kmax = v;
            }
        };
        match self {
            Command::Steady { lambda } => {
                if let Some(l) = lambda {
                    c.steady.lambdas = l.clone();
                }
            }
            Command::Eigs { lambda, window, .. } => {
                if let Some(l) = lambda {
                    c.model.lambda = *l;
                }
                if let Some(w) = window {
                    c.spectral.window = *w;
                }
            }
            Command::Hopf { range: r } => range(c, r),
            Command::Modes { mode: m } => mode(c, m),
            Command::Scan { varpi_grid, mode: m } => {
                mode(c, m);
                if let Some(g) = varpi_grid {
                    c.modes.varpi_grid = g.clone();
                }
            }
            Command::Branch { range: r, branch: b } | Command::HopfPipeline { range: r, branch: b } => {
                range(c, r);
                branch(c, b);
            }
            Command::Simulate { lambda, tfinal, dt } => {
                if let Some(v) = lambda {
                    c.simulate.lambda = *v;
                }
                if let Some(v) = tfinal {
                    c.simulate.t_final = *v;
                }
                if let Some(v) = dt {
                    c.simulate.dt = *v;
                }
            }
            Command::Surrogate { branch: b, .. } => branch(c, b),
            Command::EmitPlots { .. } => {}
        }
    }
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("OSCILLA_JOBS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Validation(format!("OSCILLA_JOBS must be a positive integer (got `{v}`)"))),
        },
        Err(_) => match flag {
            Some(0) => Err(CliError::Validation("--jobs must be positive".into())),
            other => Ok(other),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = worker_count(cli.jobs)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Solver(format!("cannot start worker pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    cli.command.apply(&mut config);

    if let Command::EmitPlots { dir } = &cli.command {
        let dir = dir.clone().unwrap_or_else(|| config.output.clone());
        let outcome = plots::emit_plots(&dir)?;
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        for s in &outcome.written {
            println!("{}", dir.join(s).display());
        }
        return Ok(());
    }

    let mut session = Session::start(cli.command.name(), config)?;
    match &cli.command {
        Command::Steady { .. } => pipeline::steady(&mut session)?,
        Command::Eigs { dump_operators, .. } => {
            let lambda = session.config.model.lambda;
            pipeline::eigs(&mut session, lambda, *dump_operators)?
        }
        Command::Hopf { .. } => pipeline::hopf(&mut session)?,
        Command::Modes { .. } => pipeline::modes(&mut session)?,
        Command::Scan { .. } => pipeline::scan(&mut session)?,
        Command::Branch { .. } => pipeline::branch(&mut session)?,
        Command::Simulate { .. } => pipeline::simulate_run(&mut session)?,
        Command::Surrogate { case, .. } => pipeline::surrogate(&mut session, case)?,
        Command::HopfPipeline { .. } => pipeline::hopf_pipeline(&mut session)?,
        Command::EmitPlots { .. } => unreachable!("handled above"),
    }
    session.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
