use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rsoc::eval::Policy;
use rsoc::build_plan;
use rsoc_cli::config::Config;
use rsoc_cli::output::{self, LawFile};
use rsoc_cli::{experiments, run, selftest, CliError};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rsoc", version, about = "Risk-sensitive stochastic optimal control with noisy measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configured problem and write a run directory.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved law with noisy rollouts and print risk statistics.
    Rollout {
        #[arg(long)]
        config: PathBuf,
        /// Run directory holding `law.json`.
        #[arg(long)]
        law: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also write `costs.csv` and `rollout.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the bundled experiments.
    Experiment {
        #[arg(value_enum)]
        which: Which,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Viapoint,
    Contact,
}

#[derive(Serialize)]
struct RolloutReport {
    samples: usize,
    seed: u64,
    diverged: usize,
    errors: Vec<String>,
    risk: Option<run::RiskSummary>,
}

fn solve_cmd(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = Config::load(config)?;
    let controls = run::initial_controls(&cfg)?;
    let solved = run::solve_config(&cfg, &controls)?;
    let s = run::write_run(out, &cfg, &solved, cfg.experiment.seed)?;
    println!("{} after {} iterations, cost {}", s.termination, s.iterations, output::num(s.final_cost));
    Ok(())
}

fn rollout_cmd(config: &Path, law_dir: &Path, samples: usize, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = Config::load(config)?;
    let (model, x0) = cfg.problem.build()?;
    let problem = model.problem();
    let noise = cfg.noise.build(problem)?;
    let file: LawFile = output::read_json(&law_dir.join("law.json"))?;
    let nominal = file.nominal()?;
    let law = file.law()?;
    let estimator = file.estimator()?;
    if nominal.len() != law.feedback.len() || nominal.states()[0].len() != x0.len() {
        return Err(CliError::Config("saved law does not match the configured problem".into()));
    }
    let plan = build_plan(problem, &nominal, &cfg.solver.build(x0.len())?).map_err(|e| CliError::Solver(e.to_string()))?;
    let policy = Policy { nominal: &nominal, law: &law, plan: &plan, estimator: &estimator };
    let records = run::rollouts(problem, problem, &noise, policy, &x0, seed, samples, &run::rollout_options(&cfg));
    let costs: Vec<f64> = records.iter().filter_map(|r| r.as_ref().ok().map(|r| r.cost)).collect();
    let errors: Vec<String> =
        records.iter().enumerate().filter_map(|(i, r)| r.as_ref().err().map(|e| format!("rollout {i}: {e}"))).collect();
    let report = RolloutReport {
        samples,
        seed,
        diverged: errors.len(),
        errors,
        risk: run::risk_summary(&costs, cfg.solver.build(x0.len())?.sigma),
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Io(e.to_string()))?;
    println!("{text}");
    if let Some(out) = out {
        std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        output::write_json(&out.join("rollout.json"), &report)?;
        let mut w = csv::Writer::from_path(out.join("costs.csv")).map_err(|e| CliError::Io(e.to_string()))?;
        w.write_record(["sample", "cost"]).map_err(|e| CliError::Io(e.to_string()))?;
        for (i, r) in records.iter().enumerate() {
            if let Ok(r) = r {
                w.write_record([i.to_string(), output::num(r.cost)]).map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    if report.diverged > 0 {
        return Err(CliError::Diverged(format!("{} of {samples} rollouts", report.diverged)));
    }
    Ok(())
}

fn experiment_cmd(which: Which, config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = Config::load(config)?;
    let summary = match which {
        Which::Viapoint => serde_json::to_string_pretty(&experiments::run_viapoint(&cfg, out)?),
        Which::Contact => serde_json::to_string_pretty(&experiments::run_contact(&cfg, out)?),
    };
    println!("{}", summary.map_err(|e| CliError::Io(e.to_string()))?);
    Ok(())
}

fn selftest_cmd() -> Result<(), CliError> {
    let checks = selftest::run_all();
    for c in &checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {:<18} {:e} (tolerance {:e}) {}", c.name, c.value, c.tolerance, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::SelfTest(failed.join(", ")))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve { config, out } => solve_cmd(config, out),
        Command::Rollout { config, law, samples, seed, out } => rollout_cmd(config, law, *samples, *seed, out.as_deref()),
        Command::Experiment { which, config, out } => experiment_cmd(*which, config, out),
        Command::Selftest => selftest_cmd(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
