use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distlq::config::ExperimentConfig;
use distlq::experiment::{self, RunOptions};
use distlq::Result;

/// Learn subspace-constrained output-feedback LQ controllers from rollouts.
#[derive(Parser)]
#[command(name = "distlq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test quadratic invariance of the policy subspace (exit 3 if it fails).
    QiCheck(Common),
    /// Compute the optimal cost and policy; writes solution.json.
    Solve(Common),
    /// Run the zeroth-order learner for every seed; writes run_<seed>.csv and summary.json.
    Learn(Common),
    /// First-passage precision sweep; writes sweep.csv and sweep.json.
    Sweep(Common),
    /// Estimate the theory constants and the resulting schedule; writes probe.json.
    Probe(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "fixture", required_unless_present = "fixture")]
    config: Option<PathBuf>,
    /// Use a named fixture with default settings instead of a config file.
    #[arg(long)]
    fixture: Option<String>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Minimise the exact cost directly (Newton) instead of through the QI oracle.
    #[arg(long)]
    direct: bool,
    /// Fail with exit code 4 if any learning run diverges.
    #[arg(long)]
    strict: bool,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        match (&self.config, &self.fixture) {
            (Some(path), _) => ExperimentConfig::from_path(path),
            (None, Some(name)) => ExperimentConfig::for_fixture(name),
            (None, None) => unreachable!("clap requires one of --config / --fixture"),
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions { out_dir: self.out.clone(), direct: self.direct, strict: self.strict }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn run(command: &Command) -> Result<u8> {
    match command {
        Command::QiCheck(c) => {
            let report = experiment::run_qi_check(&c.load()?)?;
            if report.quadratically_invariant {
                println!("QI: true, d={}", report.dim);
                return Ok(0);
            }
            println!("QI: false, d={}", report.dim);
            if let Some(w) = report.witness {
                println!("witness: basis pair ({}, {}), relative residual {:.3e}", w.i, w.j, w.relative_residual);
            }
            Ok(3)
        }
        Command::Solve(c) => {
            let report = experiment::run_solve(&c.load()?, &c.options())?;
            println!("J_star = {:.6}", report.j_star);
            println!("z_star = {}", fmt_vec(&report.z_star));
            if let Some(mu) = report.mu {
                println!("mu = {mu:.6}");
            }
            if let Some(g) = report.grad_norm {
                println!("grad_norm = {g:.3e}");
            }
            Ok(0)
        }
        Command::Learn(c) => {
            let summary = experiment::run_learn(&c.load()?, &c.options())?;
            for run in &summary.runs {
                let gap = run.final_gap.map_or("n/a".to_string(), |g| format!("{g:.6}"));
                let status = if run.failed { "FAILED" } else { "ok" };
                println!("seed {:>4}: f = {:.6}, gap = {gap}, {status}", run.seed, run.f_final);
            }
            println!("{} runs, {} failed", summary.runs.len(), summary.failed);
            Ok(0)
        }
        Command::Sweep(c) => {
            let result = experiment::run_sweep(&c.load()?, &c.options())?;
            println!("{:>8} {:>12} {:>10} {:>10} {:>9} {:>14}", "epsilon", "mean_steps", "min", "max", "successes", "theoretical_T");
            for row in &result.rows {
                let t = row.theoretical_t.map_or("n/a".to_string(), |t| format!("{t:.3e}"));
                println!(
                    "{:>8} {:>12.1} {:>10} {:>10} {:>6}/{:<2} {:>14}",
                    row.epsilon, row.mean_steps, row.min_steps, row.max_steps, row.successes, row.runs, t
                );
            }
            Ok(0)
        }
        Command::Probe(c) => {
            let p = experiment::run_probe(&c.load()?, &c.options())?;
            if let (Some(mu), Some(tau)) = (p.mu, p.tau) {
                println!("mu = {mu:.6}, tau = {tau:.6}");
            }
            println!("mu_delta = {:.6e}, L_delta = {:.6e}, M_delta = {:.6e}, D = {:.6}", p.mu_delta, p.l_delta, p.m_delta, p.d);
            let s = &p.schedule;
            println!("epsilon = {}, delta = {}: r = {:.4e}, eta = {:.4e}, T = {:.4e}", s.epsilon, s.delta, s.r, s.eta, s.iterations);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::QiCheck(c) | Command::Solve(c) | Command::Learn(c) | Command::Sweep(c) | Command::Probe(c) => c,
    };
    if let Some(jobs) = common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
