//! Batch driver behind the `distlq` binary: reference optima, learning runs,
//! precision sweeps and constant probes, plus their CSV / JSON artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, InitialPoint, LearnerBlock, OutputFormat, ProbeBlock};
use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::learner::{
    compute_d, compute_schedule, learn, DisturbanceConstant, LearnerConfig, RunLog, RunOutcome, Schedule,
    ScheduleConstants, StopRule,
};
use crate::oracle::{
    estimate_gd_constants, estimate_gd_ratio, estimate_smoothness, newton_minimize_f, solve_qi_oracle, GdEstimate,
    GdRatio, QuadraticForm, SmoothnessConstants, Sublevel,
};
use crate::policy_space::{qi_check, QiReport};

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Use the direct minimiser instead of the QI oracle.
    pub direct: bool,
    /// Treat diverged runs as an error.
    pub strict: bool,
}

impl RunOptions {
    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| cfg.output.dir.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    QiOracle,
    Newton,
}

/// Minimiser of the exact cost over the subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub method: ReferenceMethod,
    pub z_star: DVector<f64>,
    pub j_star: f64,
    /// `λ_min(2G)`; only known on the QI path.
    pub mu: Option<f64>,
    pub quadratic: Option<QuadraticForm>,
    pub grad_norm: Option<f64>,
    pub newton_iterations: Option<usize>,
}

/// QI oracle by default; damped Newton from `z = 0` when `direct` is set.
pub fn reference_optimum(ctx: &CostContext, direct: bool) -> Result<Reference> {
    if direct {
        let res = newton_minimize_f(ctx, &DVector::zeros(ctx.dim()))?;
        if !res.converged {
            return Err(Error::Internal(format!(
                "direct minimiser stopped after {} iterations with gradient norm {:.3e}",
                res.iterations, res.grad_norm
            )));
        }
        return Ok(Reference {
            method: ReferenceMethod::Newton,
            z_star: res.z,
            j_star: res.f,
            mu: None,
            quadratic: None,
            grad_norm: Some(res.grad_norm),
            newton_iterations: Some(res.iterations),
        });
    }
    let sol = solve_qi_oracle(ctx)?;
    Ok(Reference {
        method: ReferenceMethod::QiOracle,
        z_star: sol.z_star,
        j_star: sol.j_star,
        mu: Some(sol.mu),
        quadratic: Some(sol.quadratic),
        grad_norm: None,
        newton_iterations: None,
    })
}

fn initial_point(ctx: &CostContext, learner: &LearnerBlock, reference: Option<&Reference>) -> Result<DVector<f64>> {
    let d = ctx.dim();
    let check = |v: &[f64], what: &str| {
        if v.len() == d {
            Ok(())
        } else {
            Err(Error::Config(format!("learner.z0.{what} has length {}, subspace dimension is {d}", v.len())))
        }
    };
    match &learner.z0 {
        InitialPoint::Explicit(v) => {
            check(v, "explicit")?;
            Ok(DVector::from_column_slice(v))
        }
        InitialPoint::OracleMinus(offset) => {
            check(offset, "oracle_minus")?;
            let r = reference.ok_or_else(|| {
                Error::Config("learner.z0.oracle_minus needs a reference optimum (QI subspace or --direct)".into())
            })?;
            Ok(&r.z_star - DVector::from_column_slice(offset))
        }
    }
}

fn learner_block(cfg: &ExperimentConfig) -> Result<&LearnerBlock> {
    cfg.learner.as_ref().ok_or_else(|| Error::Config("a learner block is required".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

// ---------------------------------------------------------------- qi-check

pub fn run_qi_check(cfg: &ExperimentConfig) -> Result<QiReport> {
    let ctx = cfg.build()?;
    Ok(qi_check(&ctx.basis, &ctx.ops.cp12))
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub config_hash: String,
    pub method: ReferenceMethod,
    #[serde(rename = "J_star")]
    pub j_star: f64,
    pub z_star: Vec<f64>,
    #[serde(rename = "K_star")]
    pub k_star: Vec<Vec<f64>>,
    pub mu: Option<f64>,
    /// `G`, `g`, `c` of the quadratic `g(q)`.
    pub constants: Option<QuadraticForm>,
    pub grad_norm: Option<f64>,
    pub newton_iterations: Option<usize>,
}

/// Writes `solution.json`.
pub fn run_solve(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SolveReport> {
    let ctx = cfg.build()?;
    let reference = reference_optimum(&ctx, opts.direct)?;
    let k_star = ctx.basis.unvec(&reference.z_star)?;
    let report = SolveReport {
        config_hash: cfg.hash(),
        method: reference.method,
        j_star: reference.j_star,
        z_star: reference.z_star.iter().copied().collect(),
        k_star: matrix_rows(k_star.matrix()),
        mu: reference.mu,
        constants: reference.quadratic,
        grad_norm: reference.grad_norm,
        newton_iterations: reference.newton_iterations,
    };
    let dir = opts.out_dir(cfg);
    if cfg.output.wants(OutputFormat::Json) {
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("solution.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- learn

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub outcome: RunOutcome,
    pub failed: bool,
    pub iterations_run: usize,
    pub f_final: f64,
    pub final_gap: Option<f64>,
    pub first_passage_steps: Option<usize>,
    /// Smallest exact gap among the iterates whose true cost was logged.
    pub best_logged_gap: Option<f64>,
    pub z_final: Vec<f64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnSummary {
    pub config_hash: String,
    pub reference: Option<ReferenceMethod>,
    pub j_star: Option<f64>,
    pub z0: Vec<f64>,
    pub f_z0: f64,
    pub runs: Vec<RunSummary>,
    pub failed: usize,
}

impl LearnSummary {
    /// Runs whose final exact gap is at most `epsilon`.
    pub fn within_gap(&self, epsilon: f64) -> usize {
        self.runs.iter().filter(|r| r.final_gap.is_some_and(|g| g <= epsilon)).count()
    }
}

/// Reference optimum if one is available without extra flags: the QI oracle
/// on QI subspaces, Newton under `--direct`, nothing otherwise.
fn optional_reference(ctx: &CostContext, direct: bool) -> Result<Option<Reference>> {
    if direct || qi_check(&ctx.basis, &ctx.ops.cp12).quadratically_invariant {
        reference_optimum(ctx, direct).map(Some)
    } else {
        Ok(None)
    }
}

/// Shortest round-trip form, switching to exponent notation for very large or small magnitudes.
fn csv_float(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

/// `run_<seed>.csv`: a `# config_hash=... seed=...` line, a header, one row per iteration.
pub fn write_run_csv(path: &Path, config_hash: &str, log: &RunLog, with_f_true: bool) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# config_hash={config_hash} seed={}", log.seed)?;
    let mut w = csv::Writer::from_writer(file);
    if with_f_true {
        w.write_record(["iter", "f_hat", "z_norm", "f_true"])?;
    } else {
        w.write_record(["iter", "f_hat", "z_norm"])?;
    }
    for rec in &log.records {
        let mut row = vec![rec.iter.to_string(), csv_float(rec.f_hat), csv_float(rec.z_norm)];
        if with_f_true {
            row.push(rec.f_true.map(csv_float).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One run per seed in parallel; writes `run_<seed>.csv` and `summary.json`.
pub fn run_learn(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<LearnSummary> {
    let ctx = cfg.build()?;
    let learner = learner_block(cfg)?;
    let reference = optional_reference(&ctx, opts.direct)?;
    let z0 = initial_point(&ctx, learner, reference.as_ref())?;
    let stop = match learner.stop_at_gap {
        Some(epsilon) => {
            let r = reference
                .as_ref()
                .ok_or_else(|| Error::Config("learner.stop_at_gap needs a reference optimum (QI subspace or --direct)".into()))?;
            Some(StopRule { j_star: r.j_star, epsilon })
        }
        None => None,
    };
    let hash = cfg.hash();
    let dir = opts.out_dir(cfg);
    fs::create_dir_all(&dir)?;
    let with_f_true = learner.log_true_cost_every > 0;

    let logs: Vec<Result<RunLog>> = learner
        .seeds
        .par_iter()
        .map(|&seed| {
            let lc = LearnerConfig {
                eta: learner.eta,
                r: learner.r,
                iterations: learner.iterations,
                z0: z0.clone(),
                seed,
                log_true_cost_every: learner.log_true_cost_every,
                stop,
            };
            let (_, log) = learn(&ctx, &lc)?;
            if cfg.output.wants(OutputFormat::Csv) {
                write_run_csv(&dir.join(format!("run_{seed}.csv")), &hash, &log, with_f_true)?;
            }
            log::info!("seed {seed}: {:?} after {} iterations", log.outcome, log.records.len());
            Ok(log)
        })
        .collect();

    let j_star = reference.as_ref().map(|r| r.j_star);
    let mut runs = Vec::with_capacity(logs.len());
    for log in logs {
        let log = log?;
        let f_final = ctx.f(&log.z_final);
        runs.push(RunSummary {
            seed: log.seed,
            outcome: log.outcome,
            failed: matches!(log.outcome, RunOutcome::Diverged { .. }),
            iterations_run: log.records.len(),
            f_final,
            final_gap: j_star.map(|j| f_final - j),
            first_passage_steps: log.first_passage_steps(),
            best_logged_gap: j_star.and_then(|j| {
                log.records.iter().filter_map(|r| r.f_true).map(|f| f - j).reduce(f64::min)
            }),
            z_final: log.z_final.iter().copied().collect(),
            wall_time_secs: log.wall_time_secs,
        });
    }
    let failed = runs.iter().filter(|r| r.failed).count();
    let summary = LearnSummary {
        config_hash: hash,
        reference: reference.as_ref().map(|r| r.method),
        j_star,
        f_z0: ctx.f(&z0),
        z0: z0.iter().copied().collect(),
        runs,
        failed,
    };
    if cfg.output.wants(OutputFormat::Json) {
        write_json(&dir.join("summary.json"), &summary)?;
    }
    if opts.strict && failed > 0 {
        let seeds: Vec<u64> = summary.runs.iter().filter(|r| r.failed).map(|r| r.seed).collect();
        return Err(Error::Internal(format!("{failed} run(s) diverged (seeds {seeds:?})")));
    }
    Ok(summary)
}

// ---------------------------------------------------------------- probe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config_hash: String,
    pub reference: ReferenceMethod,
    pub j_star: f64,
    pub f_z0: f64,
    pub delta0: f64,
    pub dim: usize,
    pub mu: Option<f64>,
    pub tau: Option<f64>,
    pub mu_delta: f64,
    #[serde(rename = "L_delta")]
    pub l_delta: f64,
    #[serde(rename = "M_delta")]
    pub m_delta: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub gd: Option<GdEstimate>,
    pub gd_ratio: Option<GdRatio>,
    pub smoothness: SmoothnessConstants,
    pub disturbance: DisturbanceConstant,
    pub constants: ScheduleConstants,
    pub schedule: Schedule,
}

/// Samples the sublevel set of `z0` and evaluates the schedule at `(epsilon, probe.delta)`.
pub fn probe_constants(
    ctx: &CostContext,
    reference: &Reference,
    z0: &DVector<f64>,
    probe: &ProbeBlock,
    epsilon: f64,
) -> Result<ProbeReport> {
    let f_z0 = ctx.f(z0);
    let sublevel = Sublevel::new(reference.j_star, f_z0, probe.delta)?;
    let (gd, gd_ratio, mu_delta) = match reference.method {
        ReferenceMethod::QiOracle => {
            let sol = solve_qi_oracle(ctx)?;
            let gd = estimate_gd_constants(ctx, &sol, &sublevel, probe.n_samples, probe.seed)?;
            (Some(gd), None, gd.mu_delta)
        }
        ReferenceMethod::Newton => {
            let ratio = estimate_gd_ratio(ctx, &reference.z_star, &sublevel, probe.n_samples, probe.seed)?;
            (None, Some(ratio), ratio.ratio_min)
        }
    };
    let smoothness = estimate_smoothness(
        ctx,
        &reference.z_star,
        &sublevel,
        probe.n_samples,
        probe.rho0,
        probe.inflation,
        probe.seed.wrapping_add(1),
    )?;
    let disturbance = compute_d(ctx.spec.noise(), &ctx.spec.dims())?;
    let constants = ScheduleConstants {
        mu_delta,
        l_delta: smoothness.l_delta,
        m_delta: smoothness.m_delta,
        rho0: probe.rho0,
        d_const: disturbance.d,
        f_z0,
        delta0: sublevel.delta0,
        dim: ctx.dim(),
    };
    let schedule = compute_schedule(&constants, epsilon, probe.delta)?;
    Ok(ProbeReport {
        config_hash: String::new(),
        reference: reference.method,
        j_star: reference.j_star,
        f_z0,
        delta0: sublevel.delta0,
        dim: ctx.dim(),
        mu: gd.map(|g| g.mu),
        tau: gd.map(|g| g.tau),
        mu_delta,
        l_delta: smoothness.l_delta,
        m_delta: smoothness.m_delta,
        d: disturbance.d,
        gd,
        gd_ratio,
        smoothness,
        disturbance,
        constants,
        schedule,
    })
}

fn probe_z0(ctx: &CostContext, cfg: &ExperimentConfig, reference: &Reference) -> Result<DVector<f64>> {
    match &cfg.learner {
        Some(learner) => initial_point(ctx, learner, Some(reference)),
        None => Ok(reference.z_star.add_scalar(-1.0)),
    }
}

/// Writes `probe.json`.
pub fn run_probe(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ProbeReport> {
    let ctx = cfg.build()?;
    let reference = reference_optimum(&ctx, opts.direct)?;
    let z0 = probe_z0(&ctx, cfg, &reference)?;
    let probe = cfg.probe.clone().unwrap_or_default();
    let mut report = probe_constants(&ctx, &reference, &z0, &probe, probe.epsilon)?;
    report.config_hash = cfg.hash();
    if cfg.output.wants(OutputFormat::Json) {
        let dir = opts.out_dir(cfg);
        fs::create_dir_all(&dir)?;
        write_json(&dir.join("probe.json"), &report)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- sweep

/// `r ∝ sqrt(ε)` and `η ∝ ε r² ∝ ε²`, anchored at `(base_eta, base_r)` for `base_epsilon`.
pub fn scaled_parameters(base_epsilon: f64, base_eta: f64, base_r: f64, epsilon: f64) -> (f64, f64) {
    let ratio = epsilon / base_epsilon;
    (base_eta * ratio * ratio, base_r * ratio.sqrt())
}

/// One precision level of a sweep. Censored runs enter `mean_steps` and
/// `max_steps` at the iteration cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub eta: f64,
    pub r: f64,
    pub mean_steps: f64,
    pub min_steps: usize,
    pub max_steps: usize,
    pub successes: usize,
    pub runs: usize,
    pub theoretical_t: Option<f64>,
    /// First-passage steps per seed; `None` if censored.
    pub steps: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_hash: String,
    pub j_star: f64,
    pub f_z0: f64,
    pub base_epsilon: f64,
    pub max_iterations: usize,
    pub delta: f64,
    pub constants: Option<ScheduleConstants>,
    pub rows: Vec<SweepRow>,
}

fn aggregate(epsilon: f64, eta: f64, r: f64, steps: Vec<Option<usize>>, cap: usize, theoretical_t: Option<f64>) -> SweepRow {
    let counted: Vec<usize> = steps.iter().map(|s| s.unwrap_or(cap)).collect();
    let runs = steps.len();
    SweepRow {
        epsilon,
        eta,
        r,
        mean_steps: counted.iter().sum::<usize>() as f64 / runs as f64,
        min_steps: counted.iter().copied().min().unwrap_or(0),
        max_steps: counted.iter().copied().max().unwrap_or(0),
        successes: steps.iter().filter(|s| s.is_some()).count(),
        runs,
        theoretical_t,
        steps,
    }
}

pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    let runs = result.rows.first().map_or(0, |r| r.runs);
    writeln!(file, "# config_hash={} seed=0..{runs}", result.config_hash)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["epsilon", "mean_steps", "min_steps", "max_steps", "successes", "runs", "theoretical_T"])?;
    for row in &result.rows {
        w.write_record([
            csv_float(row.epsilon),
            csv_float(row.mean_steps),
            row.min_steps.to_string(),
            row.max_steps.to_string(),
            row.successes.to_string(),
            row.runs.to_string(),
            row.theoretical_t.map(csv_float).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// First-passage sweep over the configured precision levels; writes `sweep.csv`
/// (and `sweep.json` with per-seed steps).
pub fn run_sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepResult> {
    let ctx = cfg.build()?;
    let learner = learner_block(cfg)?;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| Error::Config("a sweep block is required".into()))?;
    if sweep.epsilons.is_empty() || sweep.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Config("sweep.epsilons must be a nonempty list of positive values".into()));
    }
    if sweep.epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("sweep.epsilons must be strictly decreasing".into()));
    }
    if sweep.runs == 0 || sweep.max_iterations == 0 {
        return Err(Error::Config("sweep.runs and sweep.max_iterations must be positive".into()));
    }
    let reference = reference_optimum(&ctx, opts.direct)?;
    let z0 = initial_point(&ctx, learner, Some(&reference))?;
    let base_epsilon = sweep.base_epsilon.unwrap_or(sweep.epsilons[0]);

    let probe = ProbeBlock { delta: sweep.delta, ..cfg.probe.clone().unwrap_or_default() };
    let constants = match probe_constants(&ctx, &reference, &z0, &probe, sweep.epsilons[0]) {
        Ok(report) => Some(report.constants),
        Err(e) => {
            log::warn!("theoretical T unavailable: {e}");
            None
        }
    };

    let jobs: Vec<(usize, u64)> = (0..sweep.epsilons.len()).flat_map(|l| (0..sweep.runs as u64).map(move |s| (l, s))).collect();
    let outcomes: Vec<Result<Option<usize>>> = jobs
        .par_iter()
        .map(|&(level, seed)| {
            let epsilon = sweep.epsilons[level];
            let (eta, r) = scaled_parameters(base_epsilon, learner.eta, learner.r, epsilon);
            let lc = LearnerConfig {
                eta,
                r,
                iterations: sweep.max_iterations,
                z0: z0.clone(),
                seed,
                log_true_cost_every: 0,
                stop: Some(StopRule { j_star: reference.j_star, epsilon }),
            };
            let (_, log) = learn(&ctx, &lc)?;
            log::info!("epsilon {epsilon} seed {seed}: {:?}", log.outcome);
            Ok(log.first_passage_steps())
        })
        .collect();
    let mut per_level = vec![Vec::with_capacity(sweep.runs); sweep.epsilons.len()];
    for (&(level, _), outcome) in jobs.iter().zip(outcomes) {
        per_level[level].push(outcome?);
    }

    let mut rows = Vec::with_capacity(per_level.len());
    for (level, steps) in per_level.into_iter().enumerate() {
        let epsilon = sweep.epsilons[level];
        let (eta, r) = scaled_parameters(base_epsilon, learner.eta, learner.r, epsilon);
        let theoretical_t = match &constants {
            Some(c) => Some(compute_schedule(c, epsilon, sweep.delta)?.iterations),
            None => None,
        };
        rows.push(aggregate(epsilon, eta, r, steps, sweep.max_iterations, theoretical_t));
    }
    let result = SweepResult {
        config_hash: cfg.hash(),
        j_star: reference.j_star,
        f_z0: ctx.f(&z0),
        base_epsilon,
        max_iterations: sweep.max_iterations,
        delta: sweep.delta,
        constants,
        rows,
    };
    let dir = opts.out_dir(cfg);
    fs::create_dir_all(&dir)?;
    if cfg.output.wants(OutputFormat::Csv) {
        write_sweep_csv(&dir.join("sweep.csv"), &result)?;
    }
    if cfg.output.wants(OutputFormat::Json) {
        write_json(&dir.join("sweep.json"), &result)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ctx(name: &str) -> CostContext {
        let (spec, basis) = fixtures::by_name(name).unwrap();
        CostContext::new(&spec, basis).unwrap()
    }

    #[test]
    fn sweep_scaling_rule() {
        let (eta, r) = scaled_parameters(0.2, 5e-4, 0.1, 0.05);
        assert!((eta - 5e-4 / 16.0).abs() < 1e-18);
        assert!((r - 0.05).abs() < 1e-15);
        assert_eq!(scaled_parameters(0.2, 5e-4, 0.1, 0.2), (5e-4, 0.1));
    }

    #[test]
    fn censored_runs_count_at_cap() {
        let row = aggregate(0.1, 1.0, 1.0, vec![Some(3), None, Some(1)], 10, None);
        assert_eq!(row.successes, 2);
        assert_eq!((row.min_steps, row.max_steps), (1, 10));
        assert!((row.mean_steps - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn reference_paths_agree_on_qi_fixture() {
        let c = ctx("appendix-d");
        let oracle = reference_optimum(&c, false).unwrap();
        let newton = reference_optimum(&c, true).unwrap();
        assert!((oracle.j_star - newton.j_star).abs() < 1e-8);
        assert!((&oracle.z_star - &newton.z_star).amax() < 1e-5);
    }

    #[test]
    fn non_qi_needs_direct() {
        let c = ctx("b3");
        assert!(matches!(reference_optimum(&c, false), Err(Error::NotQuadraticallyInvariant { .. })));
        let r = reference_optimum(&c, true).unwrap();
        assert!(r.grad_norm.unwrap() <= 1e-8);
        assert!(optional_reference(&c, false).unwrap().is_none());
    }

    #[test]
    fn probe_on_b2_reports_mu() {
        let c = ctx("b2");
        let reference = reference_optimum(&c, false).unwrap();
        let z0 = reference.z_star.add_scalar(-1.0);
        let probe = ProbeBlock { n_samples: 100, ..Default::default() };
        let report = probe_constants(&c, &reference, &z0, &probe, 0.1).unwrap();
        assert!((report.mu.unwrap() - (5.0 - 5f64.sqrt())).abs() < 1e-6);
        for v in [report.mu_delta, report.l_delta, report.m_delta, report.d, report.schedule.eta, report.schedule.r] {
            assert!(v.is_finite() && v > 0.0);
        }
    }
}
