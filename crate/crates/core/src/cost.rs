//! Closed-form expected cost.
//!
//! With `u = K y` the closed loop is `y = Φ_yw (w + μw) + Φ_yv v`,
//! `u = Φ_uw (w + μw) + Φ_uv v`, where
//!
//! ```text
//! Φ_yv = (I - CP12 K)⁻¹,  Φ_yw = Φ_yv CP11,  Φ_uv = K Φ_yv,  Φ_uw = K Φ_yw.
//! ```
//!
//! The expected cost is the sum of six weighted traces: covariance and mean
//! parts of the `w` channel for `y` and `u`, and the covariance part of the `v`
//! channel for both. In the `Q` parameterisation `Φ_yv = I + CP12 Q` and
//! `Φ_uv = Q`, so the cost is a convex quadratic in `Q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{nilpotent_resolvent, weighted_norm_sq, weighted_trace};
use crate::policy_space::{PolicyMatrix, SubspaceBasis};
use crate::system::{assemble_block_operators, BlockOperators, SystemSpec};

/// The individual contributions to the expected cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub output_process_covariance: f64,
    pub output_process_mean: f64,
    pub input_process_covariance: f64,
    pub input_process_mean: f64,
    pub output_measurement: f64,
    pub input_measurement: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.output_process_covariance
            + self.output_process_mean
            + self.input_process_covariance
            + self.input_process_mean
            + self.output_measurement
            + self.input_measurement
    }
}

fn terms_from_maps(
    ops: &BlockOperators,
    phi_yw: &DMatrix<f64>,
    phi_uw: &DMatrix<f64>,
    phi_yv: &DMatrix<f64>,
    phi_uv: &DMatrix<f64>,
) -> CostTerms {
    CostTerms {
        output_process_covariance: weighted_trace(phi_yw, &ops.m_big, &ops.sigma_w),
        output_process_mean: weighted_norm_sq(phi_yw, &ops.m_big, &ops.mu_w),
        input_process_covariance: weighted_trace(phi_uw, &ops.r_big, &ops.sigma_w),
        input_process_mean: weighted_norm_sq(phi_uw, &ops.r_big, &ops.mu_w),
        output_measurement: weighted_trace(phi_yv, &ops.m_big, &ops.sigma_v),
        input_measurement: weighted_trace(phi_uv, &ops.r_big, &ops.sigma_v),
    }
}

pub(crate) fn cost_terms_unchecked(ops: &BlockOperators, k: &DMatrix<f64>) -> CostTerms {
    let phi_yv = nilpotent_resolvent(&(&ops.cp12 * k), ops.dims.horizon);
    let phi_yw = &phi_yv * &ops.cp11;
    let phi_uv = k * &phi_yv;
    let phi_uw = k * &phi_yw;
    terms_from_maps(ops, &phi_yw, &phi_uw, &phi_yv, &phi_uv)
}

pub(crate) fn cost_terms_q_unchecked(ops: &BlockOperators, q: &DMatrix<f64>) -> CostTerms {
    let py = ops.dims.output_len();
    let phi_yv = DMatrix::<f64>::identity(py, py) + &ops.cp12 * q;
    let phi_yw = &phi_yv * &ops.cp11;
    let phi_uw = q * &ops.cp11;
    terms_from_maps(ops, &phi_yw, &phi_uw, &phi_yv, q)
}

/// Expected cost of a causal policy, term by term.
pub fn exact_cost_terms(ops: &BlockOperators, k: &PolicyMatrix) -> Result<CostTerms> {
    let shape = ops.dims.policy_shape();
    k.check_shape(shape)?;
    k.check_causal(shape)?;
    Ok(cost_terms_unchecked(ops, k.matrix()))
}

/// `E[yᵀ M y + uᵀ R u]` under `u = K y`.
pub fn exact_cost(ops: &BlockOperators, k: &PolicyMatrix) -> Result<f64> {
    exact_cost_terms(ops, k).map(|t| t.total())
}

/// Expected cost of `H(Q)`, evaluated directly in `Q`.
pub fn exact_cost_q(ops: &BlockOperators, q: &PolicyMatrix) -> Result<f64> {
    let shape = ops.dims.policy_shape();
    q.check_shape(shape)?;
    q.check_causal(shape)?;
    Ok(cost_terms_q_unchecked(ops, q.matrix()).total())
}

/// Plant operators paired with a policy subspace.
#[derive(Debug, Clone)]
pub struct CostContext {
    pub spec: SystemSpec,
    pub ops: BlockOperators,
    pub basis: SubspaceBasis,
}

impl CostContext {
    pub fn new(spec: &SystemSpec, basis: SubspaceBasis) -> Result<Self> {
        let ops = assemble_block_operators(spec);
        if basis.shape() != ops.dims.policy_shape() {
            return Err(Error::InvalidArgument(format!(
                "basis is for policies of shape {:?}, plant needs {:?}",
                basis.shape(),
                ops.dims.policy_shape()
            )));
        }
        Ok(Self { spec: spec.clone(), ops, basis })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// `f(z) = J(vec⁻¹(P z))`.
    ///
    /// # Panics
    /// If `z` does not have length `d`.
    pub fn f(&self, z: &DVector<f64>) -> f64 {
        assert_eq!(z.len(), self.dim(), "parameter length");
        cost_terms_unchecked(&self.ops, &self.basis.unvec_unchecked(z)).total()
    }

    /// `g(q) = J(H(vec⁻¹(P q)))`; equals `f(h(q))` on QI subspaces.
    ///
    /// # Panics
    /// If `q` does not have length `d`.
    pub fn g(&self, q: &DVector<f64>) -> f64 {
        assert_eq!(q.len(), self.dim(), "parameter length");
        cost_terms_q_unchecked(&self.ops, &self.basis.unvec_unchecked(q)).total()
    }
}

pub fn f_of_z(ctx: &CostContext, z: &DVector<f64>) -> Result<f64> {
    let k = ctx.basis.unvec(z)?;
    Ok(cost_terms_unchecked(&ctx.ops, k.matrix()).total())
}

/// Central-difference gradient of `f` with step `h`.
pub fn central_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, z: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut probe = z.clone();
    DVector::from_fn(z.len(), |i, _| {
        probe[i] = z[i] + h;
        let plus = f(&probe);
        probe[i] = z[i] - h;
        let minus = f(&probe);
        probe[i] = z[i];
        (plus - minus) / (2.0 * h)
    })
}

/// Central-difference Hessian; symmetric by construction.
pub fn central_hessian<F: Fn(&DVector<f64>) -> f64>(f: F, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let d = z.len();
    let mut hess = DMatrix::zeros(d, d);
    let mut probe = z.clone();
    let f0 = f(z);
    for i in 0..d {
        probe[i] = z[i] + h;
        let plus = f(&probe);
        probe[i] = z[i] - h;
        let minus = f(&probe);
        probe[i] = z[i];
        hess[(i, i)] = (plus - 2.0 * f0 + minus) / (h * h);
        for j in 0..i {
            let mut eval = |si: f64, sj: f64| {
                probe[i] = z[i] + si * h;
                probe[j] = z[j] + sj * h;
                let v = f(&probe);
                probe[i] = z[i];
                probe[j] = z[j];
                v
            };
            let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Central-difference gradient of `f(z)`.
pub fn fd_gradient(ctx: &CostContext, z: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    if z.len() != ctx.dim() {
        return Err(Error::InvalidArgument(format!("parameter has length {}, expected {}", z.len(), ctx.dim())));
    }
    Ok(central_gradient(|x| ctx.f(x), z, h))
}
