//! Model-based ground truth and sampled estimates of the theory constants.
//!
//! On a QI subspace `g(q) = J(H(vec⁻¹(P q)))` is an exact quadratic
//! `qᵀ G q + 2 gᵀ q + c`. It is assembled from a handful of cost evaluations and
//! minimised with one Cholesky solve; the minimiser is mapped back through `h`.
//!
//! The gradient-dominance, Lipschitz and smoothness constants are suprema /
//! infima over a sublevel set and are only *estimated* here by sampling that
//! set. They are empirical bounds, not certified ones.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{central_gradient, central_hessian, CostContext};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_min_eigenvalue, symmetric_spectral_norm};
use crate::policy_space::{h_forward, h_inverse, qi_check, PolicyMatrix};

/// `x ↦ xᵀ G x + 2 gᵀ x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub g_mat: DMatrix<f64>,
    pub g_vec: DVector<f64>,
    pub c: f64,
}

impl QuadraticForm {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.g_mat * x)) + 2.0 * self.g_vec.dot(x) + self.c
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.g_mat * x + &self.g_vec) * 2.0
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        &self.g_mat * 2.0
    }

    /// Strong-convexity modulus: smallest eigenvalue of the Hessian `2G`.
    pub fn strong_convexity(&self) -> f64 {
        symmetric_min_eigenvalue(&self.hessian())
    }
}

/// Builds the quadratic from `exact_cost_q` evaluations at `0`, `±e_i` and
/// `e_i + e_j`; the `e_i - e_j` values serve as a consistency check.
pub fn assemble_quadratic(ctx: &CostContext) -> Result<QuadraticForm> {
    let d = ctx.dim();
    let unit = |i: usize, s: f64| {
        let mut e = DVector::zeros(d);
        e[i] = s;
        e
    };
    let c = ctx.g(&DVector::zeros(d));
    let plus: Vec<f64> = (0..d).map(|i| ctx.g(&unit(i, 1.0))).collect();
    let minus: Vec<f64> = (0..d).map(|i| ctx.g(&unit(i, -1.0))).collect();
    let g_vec = DVector::from_fn(d, |i, _| (plus[i] - minus[i]) / 4.0);
    let mut g_mat = DMatrix::zeros(d, d);
    for i in 0..d {
        g_mat[(i, i)] = plus[i] - c - 2.0 * g_vec[i];
    }
    let scale = plus.iter().chain(&minus).fold(c.abs(), |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..d {
        for j in 0..i {
            let sum = ctx.g(&(unit(i, 1.0) + unit(j, 1.0)));
            let diff = ctx.g(&(unit(i, 1.0) - unit(j, 1.0)));
            let from_sum = (sum - plus[i] - plus[j] + c) / 2.0;
            let from_diff = (g_mat[(i, i)] + g_mat[(j, j)] + 2.0 * g_vec[i] - 2.0 * g_vec[j] + c - diff) / 2.0;
            if (from_sum - from_diff).abs() > 1e-8 * scale {
                return Err(Error::Internal(format!(
                    "quadratic assembly inconsistent at ({i}, {j}): {from_sum:.6e} vs {from_diff:.6e}"
                )));
            }
            g_mat[(i, j)] = from_sum;
            g_mat[(j, i)] = from_sum;
        }
    }
    Ok(QuadraticForm { g_mat, g_vec, c })
}

/// Minimiser of a QI problem.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub q_star: DVector<f64>,
    pub z_star: DVector<f64>,
    pub k_star: PolicyMatrix,
    pub j_star: f64,
    pub quadratic: QuadraticForm,
    /// Smallest eigenvalue of the Hessian of `g`.
    pub mu: f64,
}

/// Solves `G q = -g`, then maps `q*` to `z* = h(q*)`.
pub fn solve_qi_oracle(ctx: &CostContext) -> Result<OracleSolution> {
    let report = qi_check(&ctx.basis, &ctx.ops.cp12);
    if let Some(w) = report.witness {
        return Err(Error::NotQuadraticallyInvariant { i: w.i, j: w.j, residual: w.relative_residual });
    }
    let quadratic = assemble_quadratic(ctx)?;
    let mu = quadratic.strong_convexity();
    let top = symmetric_spectral_norm(&quadratic.g_mat).max(f64::MIN_POSITIVE);
    if mu <= 1e-12 * 2.0 * top {
        return Err(Error::Singular(format!(
            "smallest Hessian eigenvalue {mu:.3e} (largest {:.3e}); the problem is not strongly convex",
            2.0 * top
        )));
    }
    let chol = quadratic
        .g_mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Cholesky factorisation of G failed".into()))?;
    let q_star = -chol.solve(&quadratic.g_vec);
    let j_star = quadratic.eval(&q_star);
    let z_star = h_forward(&q_star, &ctx.basis, &ctx.ops.cp12)?.exact()?;
    let k_star = ctx.basis.unvec(&z_star)?;

    let stationarity = quadratic.gradient(&q_star).norm();
    if stationarity > 1e-10 * (1.0 + quadratic.g_vec.norm()) {
        return Err(Error::Internal(format!("oracle gradient {stationarity:.3e} at q*")));
    }
    let f_star = ctx.f(&z_star);
    if (f_star - j_star).abs() > 1e-8 * j_star.abs().max(1.0) {
        return Err(Error::Internal(format!("f(z*) = {f_star} disagrees with g(q*) = {j_star}")));
    }
    Ok(OracleSolution { q_star, z_star, k_star, j_star, quadratic, mu })
}

/// `{z : f(z) - J* <= 10 δ⁻¹ Δ0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sublevel {
    pub j_star: f64,
    /// Initial gap `Δ0 = f(z0) - J*`.
    pub delta0: f64,
    /// Failure probability `δ ∈ (0, 1)`.
    pub delta: f64,
}

impl Sublevel {
    pub fn new(j_star: f64, f_z0: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
        }
        let delta0 = f_z0 - j_star;
        if delta0 < -1e-12 * j_star.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!("initial gap is negative ({delta0:.3e})")));
        }
        Ok(Self { j_star, delta0: delta0.max(0.0), delta })
    }

    pub fn level(&self) -> f64 {
        self.j_star + 10.0 / self.delta * self.delta0
    }

    pub fn contains(&self, f: f64) -> bool {
        f <= self.level() + 1e-12 * self.level().abs().max(1.0)
    }
}

/// Points of a sublevel set found by rejection sampling around a centre.
#[derive(Debug, Clone)]
pub struct SublevelSample {
    pub points: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    pub proposed: usize,
    pub scale: f64,
}

fn proposal(center: &DVector<f64>, scale: f64, seed: u64, index: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    DVector::from_fn(center.len(), |_, _| {
        let x: f64 = StandardNormal.sample(&mut rng);
        x
    }) * scale
        + center
}

const PILOT: u64 = 200;

/// Gaussian proposals `center + s N(0, I)`. The scale `s` is halved or doubled
/// on pilot batches until the acceptance rate lies in `[0.1, 0.9]`, then up to
/// `10 n` proposals are drawn until `n` are accepted. Proposal `i` uses RNG
/// stream `i` of `seed`, so the result does not depend on the thread count.
pub fn sample_sublevel(
    ctx: &CostContext,
    center: &DVector<f64>,
    sublevel: &Sublevel,
    n_samples: usize,
    seed: u64,
) -> Result<SublevelSample> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let accept_rate = |scale: f64, round: u64| {
        let base = (round + 1) << 40;
        let hits = (0..PILOT)
            .into_par_iter()
            .filter(|&i| sublevel.contains(ctx.f(&proposal(center, scale, seed, base + i))))
            .count();
        hits as f64 / PILOT as f64
    };
    let mut scale = 1.0;
    for round in 0..30 {
        let rate = accept_rate(scale, round);
        if rate > 0.9 {
            scale *= 2.0;
        } else if rate < 0.1 {
            scale /= 2.0;
        } else {
            break;
        }
    }

    let mut points = Vec::with_capacity(n_samples);
    let mut values = Vec::with_capacity(n_samples);
    let mut proposed = 0usize;
    let cap = 10 * n_samples;
    while points.len() < n_samples && proposed < cap {
        let batch = n_samples.min(cap - proposed);
        let start = proposed as u64;
        let hits: Vec<(DVector<f64>, f64)> = (0..batch as u64)
            .into_par_iter()
            .filter_map(|i| {
                let z = proposal(center, scale, seed, start + i);
                let f = ctx.f(&z);
                sublevel.contains(f).then_some((z, f))
            })
            .collect();
        proposed += batch;
        for (z, f) in hits {
            if points.len() == n_samples {
                break;
            }
            points.push(z);
            values.push(f);
        }
    }
    if points.len() < n_samples.div_ceil(10) {
        return Err(Error::Sampling {
            accepted: points.len(),
            proposed,
            rate: points.len() as f64 / proposed.max(1) as f64,
        });
    }
    Ok(SublevelSample { points, values, proposed, scale })
}

/// Sampled gradient-dominance constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdEstimate {
    pub mu: f64,
    /// Largest sampled `‖J_h(h⁻¹(z))‖_F²`.
    pub tau: f64,
    /// `2 mu / tau`.
    pub mu_delta: f64,
    pub delta: f64,
    /// Smallest sampled `‖∇f(z)‖² / (f(z) - J*)` over points with a visible gap.
    pub empirical_ratio_min: f64,
    pub accepted: usize,
    pub proposed: usize,
}

/// Gap below which a sample is too close to the optimum for the ratio to be meaningful.
const RATIO_MIN_GAP: f64 = 1e-6;

fn h_jacobian(ctx: &CostContext, q: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
    let d = q.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = q.clone();
    for k in 0..d {
        probe[k] = q[k] + step;
        let plus = h_forward(&probe, &ctx.basis, &ctx.ops.cp12)?.value;
        probe[k] = q[k] - step;
        let minus = h_forward(&probe, &ctx.basis, &ctx.ops.cp12)?.value;
        probe[k] = q[k];
        jac.set_column(k, &((plus - minus) / (2.0 * step)));
    }
    Ok(jac)
}

/// Central-difference Jacobian of `h` at `h⁻¹(z)`.
pub fn jacobian_at(ctx: &CostContext, z: &DVector<f64>) -> Result<DMatrix<f64>> {
    let q = h_inverse(z, &ctx.basis, &ctx.ops.cp12)?.exact()?;
    h_jacobian(ctx, &q, 1e-6)
}

pub fn estimate_gd_constants(
    ctx: &CostContext,
    solution: &OracleSolution,
    sublevel: &Sublevel,
    n_samples: usize,
    seed: u64,
) -> Result<GdEstimate> {
    let sample = sample_sublevel(ctx, &solution.z_star, sublevel, n_samples, seed)?;
    let per_point: Vec<Result<(f64, Option<f64>)>> = sample
        .points
        .par_iter()
        .zip(sample.values.par_iter())
        .map(|(z, &f)| {
            let frob = jacobian_at(ctx, z)?.norm_squared();
            let gap = f - sublevel.j_star;
            let ratio = (gap > RATIO_MIN_GAP).then(|| central_gradient(|x| ctx.f(x), z, 1e-6).norm_squared() / gap);
            Ok((frob, ratio))
        })
        .collect();
    let mut tau = 0.0_f64;
    let mut ratio_min = f64::INFINITY;
    for item in per_point {
        let (frob, ratio) = item?;
        tau = tau.max(frob);
        if let Some(r) = ratio {
            ratio_min = ratio_min.min(r);
        }
    }
    Ok(GdEstimate {
        mu: solution.mu,
        tau,
        mu_delta: 2.0 * solution.mu / tau,
        delta: sublevel.delta,
        empirical_ratio_min: ratio_min,
        accepted: sample.points.len(),
        proposed: sample.proposed,
    })
}

/// Sampled `min ‖∇f(z)‖² / (f(z) - J*)` with no QI structure assumed; used as
/// the gradient-dominance constant when only the direct minimiser is available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdRatio {
    pub ratio_min: f64,
    pub accepted: usize,
    pub proposed: usize,
}

pub fn estimate_gd_ratio(
    ctx: &CostContext,
    center: &DVector<f64>,
    sublevel: &Sublevel,
    n_samples: usize,
    seed: u64,
) -> Result<GdRatio> {
    let sample = sample_sublevel(ctx, center, sublevel, n_samples, seed)?;
    let ratio_min = sample
        .points
        .par_iter()
        .zip(sample.values.par_iter())
        .filter(|(_, &f)| f - sublevel.j_star > RATIO_MIN_GAP)
        .map(|(z, &f)| central_gradient(|x| ctx.f(x), z, 1e-6).norm_squared() / (f - sublevel.j_star))
        .reduce(|| f64::INFINITY, f64::min);
    Ok(GdRatio { ratio_min, accepted: sample.points.len(), proposed: sample.proposed })
}

/// Sampled local Lipschitz and smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub l_delta: f64,
    pub m_delta: f64,
    pub rho0: f64,
    pub inflation: f64,
    pub accepted: usize,
}

pub const DEFAULT_INFLATION: f64 = 1.5;

pub fn estimate_smoothness(
    ctx: &CostContext,
    center: &DVector<f64>,
    sublevel: &Sublevel,
    n_samples: usize,
    rho0: f64,
    inflation: f64,
    seed: u64,
) -> Result<SmoothnessConstants> {
    if !(rho0 > 0.0) {
        return Err(Error::InvalidArgument(format!("rho0 must be positive, got {rho0}")));
    }
    let sample = sample_sublevel(ctx, center, sublevel, n_samples, seed)?;
    let (l_raw, m_raw) = sample
        .points
        .par_iter()
        .map(|z| {
            let grad = central_gradient(|x| ctx.f(x), z, 1e-6).norm();
            let hess = symmetric_spectral_norm(&central_hessian(|x| ctx.f(x), z, 1e-4));
            (grad, hess)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(SmoothnessConstants {
        l_delta: inflation * l_raw,
        m_delta: inflation * m_raw,
        rho0,
        inflation,
        accepted: sample.points.len(),
    })
}

/// Result of the direct minimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonResult {
    pub z: DVector<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Richardson-extrapolated central differences (error `O(h⁴)`).
fn accurate_gradient<F: Fn(&DVector<f64>) -> f64>(f: &F, z: &DVector<f64>) -> DVector<f64> {
    let h = 1e-3;
    let coarse = central_gradient(f, z, h);
    let fine = central_gradient(f, z, h / 2.0);
    (fine * 4.0 - coarse) / 3.0
}

pub const NEWTON_GRAD_TOL: f64 = 1e-8;
pub const NEWTON_MAX_ITERS: usize = 200;

/// Damped Newton with finite-difference derivatives. Falls back to steepest
/// descent when the Hessian is not positive definite; Armijo backtracking.
pub fn newton_minimize<F: Fn(&DVector<f64>) -> f64>(f: F, z_init: &DVector<f64>) -> NewtonResult {
    let mut z = z_init.clone();
    let mut fz = f(&z);
    let mut grad = accurate_gradient(&f, &z);
    let mut iterations = 0;
    while grad.norm() > NEWTON_GRAD_TOL && iterations < NEWTON_MAX_ITERS {
        iterations += 1;
        let hess = central_hessian(&f, &z, 1e-4);
        let dir = match hess.cholesky() {
            Some(chol) => -chol.solve(&grad),
            None => -grad.clone(),
        };
        let slope = grad.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -grad.clone() };
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &z + &dir * step;
            let fc = f(&cand);
            if fc.is_finite() && fc <= fz + 1e-4 * step * slope {
                z = cand;
                fz = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        grad = accurate_gradient(&f, &z);
        if !moved {
            break;
        }
    }
    let grad_norm = grad.norm();
    NewtonResult { z, f: fz, grad_norm, iterations, converged: grad_norm <= NEWTON_GRAD_TOL }
}

pub fn newton_minimize_f(ctx: &CostContext, z_init: &DVector<f64>) -> Result<NewtonResult> {
    if z_init.len() != ctx.dim() {
        return Err(Error::InvalidArgument(format!("z_init has length {}, expected {}", z_init.len(), ctx.dim())));
    }
    Ok(newton_minimize(|z| ctx.f(z), z_init))
}
