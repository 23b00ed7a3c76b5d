//! One-point zeroth-order learning and its iteration schedule.
//!
//! Each iteration perturbs the parameter by `u ~ Unif(S_r)`, runs the policy
//! `vec⁻¹(P (z + u))` once on the real (simulated) plant, observes the realised
//! cost `f̂`, and steps `z ← z - η f̂ (d / r²) u`. Nothing but `f̂` reaches the
//! update; the exact cost is used only for optional logging and as a stopping
//! referee.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cost::CostContext;
use crate::error::{Error, Result};
use crate::policy_space::PolicyMatrix;
use crate::system::{
    empirical_cost, rollout_unchecked, BlockOperators, Dims, DisturbanceSource, NoiseModel,
    SystemSpec, UniformDisturbances,
};

/// Uniform sample from the sphere of radius `r` in `R^d` (normalised Gaussian).
pub fn sample_sphere<R: Rng + ?Sized>(d: usize, r: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g * (r / norm);
        }
    }
}

/// A source of single noisy cost observations.
pub trait CostOracle {
    /// Runs the policy once and returns the realised cost.
    fn observe(&mut self, k: &DMatrix<f64>) -> f64;
}

/// Rollouts of the plant under fresh disturbances.
pub struct RolloutOracle<'a, S> {
    spec: &'a SystemSpec,
    ops: &'a BlockOperators,
    source: S,
}

impl<'a, S: DisturbanceSource> RolloutOracle<'a, S> {
    pub fn new(spec: &'a SystemSpec, ops: &'a BlockOperators, source: S) -> Self {
        Self { spec, ops, source }
    }
}

impl<S: DisturbanceSource> CostOracle for RolloutOracle<'_, S> {
    fn observe(&mut self, k: &DMatrix<f64>) -> f64 {
        let noise = self.source.draw();
        let traj = rollout_unchecked(self.spec, k, &noise);
        empirical_cost(&traj, self.ops)
    }
}

/// Outcome of one learner iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub z_next: DVector<f64>,
    pub f_hat: f64,
    /// The gradient estimate `f̂ (d / r²) u`.
    pub gradient: DVector<f64>,
}

/// One-point gradient estimate at `z`; one call to `oracle`.
pub fn one_point_gradient<O: CostOracle, R: Rng + ?Sized>(
    ctx: &CostContext,
    z: &DVector<f64>,
    r: f64,
    oracle: &mut O,
    rng: &mut R,
) -> (DVector<f64>, f64) {
    let d = ctx.dim();
    let u = sample_sphere(d, r, rng);
    let k = ctx.basis.unvec_unchecked(&(z + &u));
    let f_hat = oracle.observe(&k);
    (u * (f_hat * d as f64 / (r * r)), f_hat)
}

pub fn zeroth_order_step<O: CostOracle, R: Rng + ?Sized>(
    ctx: &CostContext,
    z: &DVector<f64>,
    eta: f64,
    r: f64,
    oracle: &mut O,
    rng: &mut R,
) -> Step {
    let (gradient, f_hat) = one_point_gradient(ctx, z, r, oracle, rng);
    let z_next = z - &gradient * eta;
    Step { z_next, f_hat, gradient }
}

/// Stop as soon as the exact gap of an iterate drops to `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub j_star: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub eta: f64,
    pub r: f64,
    /// Iteration budget `T`.
    pub iterations: usize,
    pub z0: DVector<f64>,
    pub seed: u64,
    /// Log the exact cost of every `k`-th iterate (0 disables).
    pub log_true_cost_every: usize,
    /// Referee-based early stop; the learner itself never reads the exact cost.
    pub stop: Option<StopRule>,
}

impl LearnerConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidArgument(format!("r must be finite and > 0, got {}", self.r)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iteration count T must be at least 1".into()));
        }
        if self.z0.len() != d {
            return Err(Error::InvalidArgument(format!("z0 has length {}, expected {d}", self.z0.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub f_hat: f64,
    /// `‖z_i‖`, the iterate the perturbation was applied to.
    pub z_norm: f64,
    pub f_true: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    /// All `T` iterations ran.
    Completed,
    /// The referee saw `f(z_i) - J* <= epsilon` at iterate `i` before the budget ran out.
    ReachedTarget { iterate: usize },
    /// A non-finite value appeared at this iteration; `z_final` is the last finite iterate.
    Diverged { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub records: Vec<IterRecord>,
    pub z_final: DVector<f64>,
    pub outcome: RunOutcome,
    pub wall_time_secs: f64,
}

impl RunLog {
    /// Number of iterates examined up to and including the first one that met
    /// the referee target (`z_0` passing counts as 1).
    pub fn first_passage_steps(&self) -> Option<usize> {
        match self.outcome {
            RunOutcome::ReachedTarget { iterate } => Some(iterate + 1),
            _ => None,
        }
    }
}

const SPHERE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs the learner against simulated rollouts of `ctx.spec`.
pub fn learn(ctx: &CostContext, config: &LearnerConfig) -> Result<(PolicyMatrix, RunLog)> {
    let source = UniformDisturbances::new(&ctx.spec, stream_rng(config.seed, NOISE_STREAM));
    let mut oracle = RolloutOracle::new(&ctx.spec, &ctx.ops, source);
    learn_with_oracle(ctx, config, &mut oracle)
}

/// Same as [`learn`] with a caller-supplied cost oracle.
pub fn learn_with_oracle<O: CostOracle>(
    ctx: &CostContext,
    config: &LearnerConfig,
    oracle: &mut O,
) -> Result<(PolicyMatrix, RunLog)> {
    config.validate(ctx.dim())?;
    let start = Instant::now();
    let mut sphere = stream_rng(config.seed, SPHERE_STREAM);
    let mut z = config.z0.clone();
    let mut records = Vec::with_capacity(config.iterations);
    let mut outcome = RunOutcome::Completed;
    let passes = |z: &DVector<f64>| config.stop.is_some_and(|s| ctx.f(z) - s.j_star <= s.epsilon);

    for iter in 0..config.iterations {
        if passes(&z) {
            outcome = RunOutcome::ReachedTarget { iterate: iter };
            break;
        }
        let f_true = (config.log_true_cost_every > 0 && iter % config.log_true_cost_every == 0).then(|| ctx.f(&z));
        let z_norm = z.norm();
        let step = zeroth_order_step(ctx, &z, config.eta, config.r, oracle, &mut sphere);
        records.push(IterRecord { iter, f_hat: step.f_hat, z_norm, f_true });
        if !step.f_hat.is_finite() || step.z_next.iter().any(|v| !v.is_finite()) {
            outcome = RunOutcome::Diverged { iteration: iter };
            break;
        }
        z = step.z_next;
    }
    if outcome == RunOutcome::Completed && passes(&z) {
        outcome = RunOutcome::ReachedTarget { iterate: config.iterations };
    }
    let policy = ctx.basis.unvec(&z)?;
    let log = RunLog {
        seed: config.seed,
        records,
        z_final: z,
        outcome,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((policy, log))
}

/// Worst-case disturbance norms and covariance floors behind the constant `D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceConstant {
    pub d: f64,
    pub w_bound: f64,
    pub v_bound: f64,
    pub lambda_w: f64,
    pub lambda_v: f64,
}

/// `D = max(W² / λ_w, V² / λ_v)`. Accepts `N = 0` (only the initial state).
pub fn compute_d(noise: &NoiseModel, dims: &Dims) -> Result<DisturbanceConstant> {
    noise.validate()?;
    let process_widths: &[f64] = if dims.horizon == 0 {
        &[noise.delta0_halfwidth]
    } else {
        &[noise.delta0_halfwidth, noise.w_halfwidth]
    };
    if process_widths.iter().chain([&noise.v_halfwidth]).any(|a| *a == 0.0) {
        return Err(Error::InvalidArgument(
            "D needs positive definite disturbance covariances; every noise halfwidth must be > 0".into(),
        ));
    }
    let lambda_w = process_widths.iter().map(|a| NoiseModel::uniform_variance(*a)).fold(f64::INFINITY, f64::min);
    let lambda_v = NoiseModel::uniform_variance(noise.v_halfwidth);
    let w_bound = noise.process_bound(dims);
    let v_bound = noise.measurement_bound(dims);
    let d = (w_bound * w_bound / lambda_w).max(v_bound * v_bound / lambda_v);
    Ok(DisturbanceConstant { d, w_bound, v_bound, lambda_w, lambda_v })
}

/// Problem constants the schedule depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConstants {
    pub mu_delta: f64,
    pub l_delta: f64,
    pub m_delta: f64,
    pub rho0: f64,
    pub d_const: f64,
    pub f_z0: f64,
    /// Initial gap `Δ0 = f(z0) - J*`.
    pub delta0: f64,
    pub dim: usize,
}

impl ScheduleConstants {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mu_delta", self.mu_delta),
            ("L_delta", self.l_delta),
            ("M_delta", self.m_delta),
            ("rho0", self.rho0),
            ("D", self.d_const),
            ("f(z0)", self.f_z0),
            ("Delta0", self.delta0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("schedule constant {name} must be finite and > 0, got {v}")));
            }
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(())
    }

    /// Largest radius for which perturbed costs stay below `20 δ⁻¹ f(z0)`.
    pub fn radius_cap(&self, delta: f64) -> f64 {
        10.0 / delta * self.f_z0 / self.l_delta
    }
}

/// `(G_∞, G_2)` bounds on the gradient estimate: `G_∞ = 20 δ⁻¹ d D f(z0) / r`, `G_2 = G_∞²`.
pub fn bound_g(constants: &ScheduleConstants, r: f64, delta: f64) -> Result<(f64, f64)> {
    let cap = constants.radius_cap(delta);
    if !(r > 0.0) || r > cap {
        return Err(Error::Schedule(format!(
            "smoothing radius r = {r} must lie in (0, 10 δ⁻¹ f(z0) / L_δ = {cap}] for perturbed costs to stay bounded by 20 δ⁻¹ f(z0)"
        )));
    }
    let g_inf = 20.0 / delta * constants.dim as f64 * constants.d_const * constants.f_z0 / r;
    Ok((g_inf, g_inf * g_inf))
}

/// Step sizes, radius and iteration count guaranteeing `f(z_T) - J* <= ε`
/// with probability at least `1 - δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub r: f64,
    /// Unrounded `T`.
    pub t_real: f64,
    pub iterations: f64,
    pub theta: f64,
    pub radius_terms: [f64; 4],
    pub step_terms: [f64; 3],
    pub g_inf: f64,
    pub g2: f64,
    pub success_probability: f64,
}

/// The four radius candidates; the smallest is used.
pub fn radius_terms(c: &ScheduleConstants, epsilon: f64, delta: f64) -> ([f64; 4], f64) {
    let theta = (1.0 / (2.0 * c.m_delta)).min(c.rho0 / c.l_delta);
    let terms = [
        theta * c.mu_delta / (2.0 * c.m_delta) * (delta * epsilon / 40.0).sqrt(),
        1.0 / (2.0 * c.m_delta) * (epsilon * c.mu_delta * delta / 5.0).sqrt(),
        c.rho0,
        c.radius_cap(delta),
    ];
    (terms, theta)
}

/// The three step-size candidates at radius `r`; the smallest is used.
pub fn step_terms(c: &ScheduleConstants, epsilon: f64, delta: f64, r: f64) -> [f64; 3] {
    let d = c.dim as f64;
    [
        epsilon * c.mu_delta * delta.powi(3) * r * r
            / (16000.0 * c.m_delta * d * d * c.d_const * c.d_const * c.f_z0 * c.f_z0),
        1.0 / (2.0 * c.m_delta),
        c.rho0 * r * delta / (20.0 * d * c.d_const * c.f_z0),
    ]
}

/// `ε log(4Δ0/(δε)) <= 16 Δ0 / δ`.
///
/// For `ε > 0`, `δ ∈ (0, 1)` and `Δ0 > 0` the left side peaks at `4Δ0/(e δ)`,
/// so the inequality always holds there; it is still checked literally.
pub fn side_condition(epsilon: f64, delta: f64, delta0: f64) -> bool {
    epsilon * (4.0 * delta0 / (delta * epsilon)).ln() <= 16.0 / delta * delta0
}

pub fn compute_schedule(constants: &ScheduleConstants, epsilon: f64, delta: f64) -> Result<Schedule> {
    constants.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_term = (4.0 * constants.delta0 / (delta * epsilon)).ln();
    if !side_condition(epsilon, delta, constants.delta0) {
        return Err(Error::Schedule(format!(
            "ε = {epsilon} is too large for δ = {delta}: ε log(4Δ0/(δε)) = {:.4e} exceeds 16 Δ0 / δ = {:.4e}",
            epsilon * log_term,
            16.0 / delta * constants.delta0
        )));
    }
    let (radius, theta) = radius_terms(constants, epsilon, delta);
    let r = radius.iter().copied().fold(f64::INFINITY, f64::min);
    let steps = step_terms(constants, epsilon, delta, r);
    let eta = steps.iter().copied().fold(f64::INFINITY, f64::min);
    let t_real = 4.0 / (eta * constants.mu_delta) * log_term;
    let (g_inf, g2) = bound_g(constants, r, delta)?;
    Ok(Schedule {
        epsilon,
        delta,
        eta,
        r,
        t_real,
        iterations: t_real.max(0.0).ceil(),
        theta,
        radius_terms: radius,
        step_terms: steps,
        g_inf,
        g2,
        success_probability: 1.0 - delta,
    })
}
