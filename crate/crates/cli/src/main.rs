use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ktran::krylov::ErrorEstimator;
use ktran::netlist::parse_value;
use ktran::stepper::{InputPath, Method};
use ktran_cli::commands::{compare, genmesh, simulate, RunManifest};
use ktran_cli::mesh::MeshSpec;
use ktran_cli::CliError;

#[derive(Parser)]
#[command(name = "ktran", version, about = "Krylov matrix-exponential transient simulation of linear circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a netlist and write the waveform CSV.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Solver::Rmatex)]
        solver: Solver,
        /// Waveform CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several solvers and compare them against a fine-step reference.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated solver list.
        #[arg(long, value_delimiter = ',', default_values = ["tr", "mexp", "imatex", "rmatex"])]
        solvers: Vec<Solver>,
        /// Step of the backward-Euler reference (default: span / 20000).
        #[arg(long, value_parser = parse_seconds)]
        ref_h: Option<f64>,
    },
    /// Generate an RC mesh netlist with a target stiffness.
    Genmesh {
        #[arg(long)]
        n: usize,
        #[arg(long, value_parser = parse_seconds)]
        stiffness: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of pulsed current sources.
        #[arg(long, default_value_t = 3)]
        sources: usize,
        #[arg(long, value_parser = parse_seconds, default_value = "10n")]
        span: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    netlist: PathBuf,
    /// Fixed step for tr/be.
    #[arg(long, value_parser = parse_seconds)]
    h: Option<f64>,
    /// Error budget over the whole span.
    #[arg(long, value_parser = parse_seconds, default_value = "1e-6")]
    etol: f64,
    #[arg(long, value_parser = parse_seconds)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 30)]
    mmax: usize,
    /// Maximum number of source groups simulated separately.
    #[arg(long, default_value_t = 100)]
    groups: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = PathArg::Fp)]
    path: PathArg,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Empirical)]
    estimator: EstimatorArg,
    #[arg(long, value_parser = parse_seconds)]
    tstart: Option<f64>,
    #[arg(long, value_parser = parse_seconds)]
    tstop: Option<f64>,
    /// Extra uniformly spaced output samples.
    #[arg(long, value_parser = parse_seconds)]
    resolution: Option<f64>,
    /// JSON diagnostics path.
    #[arg(long)]
    diag: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Tr,
    Be,
    Mexp,
    Imatex,
    Rmatex,
}

impl From<Solver> for Method {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Tr => Method::Tr,
            Solver::Be => Method::Be,
            Solver::Mexp => Method::Mexp,
            Solver::Imatex => Method::Imatex,
            Solver::Rmatex => Method::Rmatex,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Fp,
    Aug,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Empirical,
    Residual,
}

fn parse_seconds(s: &str) -> Result<f64, String> {
    parse_value(s).ok_or_else(|| format!("not a number: `{s}`"))
}

impl RunArgs {
    fn manifest(self, solver: Method, out: Option<PathBuf>) -> RunManifest {
        RunManifest {
            h: self.h,
            e_tol: self.etol,
            gamma: self.gamma,
            m_max: self.mmax,
            path: match self.path {
                PathArg::Fp => InputPath::Fp,
                PathArg::Aug => InputPath::Augmented,
            },
            estimator: match self.estimator {
                EstimatorArg::Empirical => ErrorEstimator::Empirical,
                EstimatorArg::Residual => ErrorEstimator::Residual,
            },
            t_start: self.tstart,
            t_stop: self.tstop,
            resolution: self.resolution,
            max_groups: self.groups,
            workers: self.workers,
            out,
            diag: self.diag,
            ..RunManifest::new(self.netlist, solver)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { run, solver, out } => {
            let to_stdout = out.is_none();
            let outcome = simulate(&run.manifest(solver.into(), out))?;
            if to_stdout {
                print!("{}", outcome.csv);
            } else {
                let d = &outcome.diagnostics;
                eprintln!(
                    "{}: {} samples, {} substitution pairs, {} factorizations, m_avg {:.2}, m_peak {}, {:.3e} s",
                    d.solver.name(),
                    d.samples,
                    d.substitution_pairs,
                    d.factorizations,
                    d.m_avg,
                    d.m_peak,
                    d.wall_time
                );
            }
        }
        Command::Compare { run, solvers, ref_h } => {
            let methods: Vec<Method> = solvers.into_iter().map(Method::from).collect();
            let first = methods.first().copied().unwrap_or(Method::Tr);
            let report = compare(&run.manifest(first, None), &methods, ref_h)?;
            match report.stiffness {
                Some(s) => println!("unknowns {}, stiffness {:.3e}", report.unknowns, s),
                None => println!("unknowns {}, stiffness not measured", report.unknowns),
            }
            print!("{}", report.table());
        }
        Command::Genmesh { n, stiffness, seed, sources, span, out } => {
            let spec = MeshSpec { n, stiffness, seed, sources, span };
            let outcome = genmesh(&spec, out.as_deref())?;
            if out.is_none() {
                print!("{}", outcome.netlist);
            }
            match outcome.measured {
                Some(s) => eprintln!("measured stiffness {s:.3e} (target {stiffness:.3e})"),
                None => eprintln!("stiffness not measured (n > 200)"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
