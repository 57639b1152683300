//! Experiment harness: Hessian convergence measurement, kinetic-energy
//! weight sweeps, general problem solving, and derivative self-checks.
//!
//! All logic lives in the `cliqueopt` library; this binary only parses
//! arguments, loads configs, and writes reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cliqueopt::error::{Error, Result};
use cliqueopt::experiment::{
    emit_report, run_convergence, run_energy_sweep, run_self_checks, ConvergenceConfig,
    EnergySweepConfig, ReportFormat,
};
use cliqueopt::kinematics::ChainFile;
use cliqueopt::models;
use cliqueopt::optimizer::ProblemFile;

#[derive(Parser)]
#[command(name = "cliqueopt", version, about = "Clique-structured trajectory optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure how fast true Hessian blocks converge to Gauss-Newton blocks
    /// as the time discretization shrinks, and fit the log-log rates.
    Convergence {
        /// JSON config; defaults cover the standard 8-DOF setup.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "convergence.csv")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve seeded reach problems under kinetic-energy weights with exact
    /// and Cholesky-approximated energy terms.
    EnergySweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "energy_sweep.csv")]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve a problem description file and write the solve report.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "solve_report.json")]
        out: PathBuf,
        /// Only `json` is meaningful for solve reports.
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run finite-difference self-checks of all analytic derivatives.
    Check {
        /// Optional chain file; the built-in chains are always checked.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                context: format!("reading config {}", p.display()),
                source,
            })?;
            serde_json::from_str(&text).map_err(|source| Error::Json {
                context: format!("parsing config {}", p.display()),
                source,
            })
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Convergence { config, out, format, seed } => {
            let mut cfg: ConvergenceConfig = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let format: ReportFormat = format.parse()?;
            let report = run_convergence(&cfg)?;
            emit_report(&report, format, &out)?;
            if let cliqueopt::experiment::ExperimentReport::Convergence(r) = &report {
                for s in &r.slopes {
                    println!(
                        "order {}: fitted slope {:.3} (R^2 {:.4}, {} points)",
                        s.k, s.slope, s.r_squared, s.n_points
                    );
                }
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::EnergySweep { config, out, format, seed } => {
            let mut cfg: EnergySweepConfig = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
                cfg.trials = cliqueopt::experiment::TrialSource::Seeded { count: 12, seed };
            }
            let format: ReportFormat = format.parse()?;
            let report = run_energy_sweep(&cfg)?;
            emit_report(&report, format, &out)?;
            if let cliqueopt::experiment::ExperimentReport::EnergySweep(r) = &report {
                let failed = r.trials.iter().filter(|t| !t.success).count();
                println!("{} runs, {} flagged failed", r.trials.len(), failed);
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Optimize { config, out, format, seed } => {
            let _ = seed; // solves are deterministic
            if format != "json" {
                return Err(Error::Config(format!(
                    "solve reports support only json output, got '{format}'"
                )));
            }
            let problem = ProblemFile::load(&config)?;
            let built = problem.build()?;
            let report = built.solve()?;
            let text = serde_json::to_string_pretty(&report).map_err(|source| Error::Json {
                context: "serializing solve report".into(),
                source,
            })?;
            std::fs::write(&out, text).map_err(|source| Error::Io {
                context: format!("writing report {}", out.display()),
                source,
            })?;
            println!(
                "termination {:?}, {} inner iterations, max violation {:.3e}",
                report.termination, report.inner_iterations, report.final_violation
            );
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Check { config, seed } => {
            let seed = seed.unwrap_or(0);
            let mut chains = vec![
                ("arm8".to_string(), models::serial_chain_8dof()),
                ("arm3".to_string(), models::arm_3dof_with_bodies()),
                ("planar2".to_string(), models::planar_2link()),
            ];
            if let Some(path) = config {
                let chain = ChainFile::load(&path)?.into_chain()?;
                chains.push((path.display().to_string(), chain));
            }
            let mut all_ok = true;
            for (name, chain) in &chains {
                let frame = chain
                    .frames()
                    .first()
                    .map(|f| f.name.clone())
                    .ok_or_else(|| Error::Config(format!("chain '{name}' has no frames")))?;
                let report = run_self_checks(chain, &frame, seed)?;
                let ok = report.passed();
                all_ok &= ok;
                println!(
                    "{name}: {} (point {:.2e}, axis {:.2e}, inertial map {:.2e}; tol {:.0e})",
                    if ok { "ok" } else { "FAILED" },
                    report.point_jacobian_err,
                    report.axis_jacobian_err,
                    report.inertial_map_jacobian_err,
                    report.tolerance,
                );
            }
            if all_ok {
                Ok(())
            } else {
                Err(Error::Config("finite-difference self-checks failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
