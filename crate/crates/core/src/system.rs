//! Finite-horizon time-varying plant
//!
//! ```text
//! x_{t+1} = A_t x_t + B_t u_t + w_t,   y_t = C_t x_t + v_t,   x_0 = mu0 + delta0
//! ```
//!
//! for `t = 0..=N`, its lifted ("block") form `x = P11 w + P12 u`, `y = C x + v`,
//! and noisy closed-loop rollouts under a causal output-feedback policy `u = K y`.
//!
//! Stacked vectors follow time order: `x = [x_0; ...; x_N]`, `u = [u_0; ...; u_{N-1}]`,
//! `w = [x_0; w_0; ...; w_{N-1}]`. Disturbances are i.i.d. uniform per entry, so
//! every covariance is `halfwidth² / 3 · I`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, is_symmetric, symmetric_min_eigenvalue};
use crate::policy_space::PolicyMatrix;

const DEFINITENESS_TOL: f64 = 1e-10;

/// State, input and output dimensions together with the horizon `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
}

impl Dims {
    /// Rows of a policy matrix: `m N`.
    pub fn policy_rows(&self) -> usize {
        self.m * self.horizon
    }

    /// Columns of a policy matrix: `p (N + 1)`.
    pub fn policy_cols(&self) -> usize {
        self.p * (self.horizon + 1)
    }

    pub fn state_len(&self) -> usize {
        self.n * (self.horizon + 1)
    }

    pub fn output_len(&self) -> usize {
        self.p * (self.horizon + 1)
    }

    pub fn input_len(&self) -> usize {
        self.m * self.horizon
    }
}

/// Per-entry uniform disturbance bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub delta0_halfwidth: f64,
    pub w_halfwidth: f64,
    pub v_halfwidth: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self { delta0_halfwidth: 0.0, w_halfwidth: 0.0, v_halfwidth: 0.0 }
    }

    /// Variance of a single uniform entry on `[-a, a]`.
    pub fn uniform_variance(halfwidth: f64) -> f64 {
        halfwidth * halfwidth / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("delta0_halfwidth", self.delta0_halfwidth),
            ("w_halfwidth", self.w_halfwidth),
            ("v_halfwidth", self.v_halfwidth),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidArgument(format!("noise {name} must be finite and >= 0, got {value}")));
            }
        }
        Ok(())
    }

    /// Worst-case norm of the stacked process disturbance `[delta0; w_0; ...; w_{N-1}]`.
    pub fn process_bound(&self, dims: &Dims) -> f64 {
        let n = dims.n as f64;
        (n * self.delta0_halfwidth.powi(2) + n * dims.horizon as f64 * self.w_halfwidth.powi(2)).sqrt()
    }

    /// Worst-case norm of the stacked measurement noise `[v_0; ...; v_N]`.
    pub fn measurement_bound(&self, dims: &Dims) -> f64 {
        (dims.output_len() as f64 * self.v_halfwidth.powi(2)).sqrt()
    }
}

/// Time-varying plant over horizon `N` with quadratic output/input weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    dims: Dims,
    a_seq: Vec<DMatrix<f64>>,
    b_seq: Vec<DMatrix<f64>>,
    c_seq: Vec<DMatrix<f64>>,
    m_seq: Vec<DMatrix<f64>>,
    r_seq: Vec<DMatrix<f64>>,
    mu0: DVector<f64>,
    noise: NoiseModel,
}

fn check_shape(matrix: &'static str, time: usize, mat: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if mat.nrows() != rows || mat.ncols() != cols {
        return Err(Error::Dimension {
            matrix,
            time,
            expected_rows: rows,
            expected_cols: cols,
            actual_rows: mat.nrows(),
            actual_cols: mat.ncols(),
        });
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{matrix}[{time}] has non-finite entries")));
    }
    Ok(())
}

fn check_psd(matrix: &'static str, time: usize, mat: &DMatrix<f64>) -> Result<()> {
    if !is_symmetric(mat, DEFINITENESS_TOL) {
        return Err(Error::Definiteness { matrix, time, requirement: "symmetric", min_eigenvalue: f64::NAN });
    }
    let min_eig = symmetric_min_eigenvalue(mat);
    if min_eig < -DEFINITENESS_TOL {
        return Err(Error::Definiteness { matrix, time, requirement: "positive semidefinite", min_eigenvalue: min_eig });
    }
    Ok(())
}

impl SystemSpec {
    /// Validates shapes and weight definiteness.
    ///
    /// Expects `N + 1` matrices for `A`, `C`, `M` and `N` for `B`, `R`.
    /// Output weights must be symmetric PSD. Input weights are also only required
    /// to be PSD so that degenerate (zero-cost) test problems can be built; use
    /// [`SystemSpec::input_weights_positive_definite`] where strict convexity matters.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: usize,
        a_seq: Vec<DMatrix<f64>>,
        b_seq: Vec<DMatrix<f64>>,
        c_seq: Vec<DMatrix<f64>>,
        m_seq: Vec<DMatrix<f64>>,
        r_seq: Vec<DMatrix<f64>>,
        mu0: DVector<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon N must be positive".into()));
        }
        let check_len = |matrix: &'static str, len: usize, expected: usize| {
            if len != expected {
                Err(Error::Length { matrix, expected, actual: len })
            } else {
                Ok(())
            }
        };
        check_len("A", a_seq.len(), horizon + 1)?;
        check_len("B", b_seq.len(), horizon)?;
        check_len("C", c_seq.len(), horizon + 1)?;
        check_len("M", m_seq.len(), horizon + 1)?;
        check_len("R", r_seq.len(), horizon)?;

        let n = a_seq[0].nrows();
        let m = b_seq[0].ncols();
        let p = c_seq[0].nrows();
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!("dimensions must be positive (n={n}, m={m}, p={p})")));
        }
        for (t, a) in a_seq.iter().enumerate() {
            check_shape("A", t, a, n, n)?;
        }
        for (t, b) in b_seq.iter().enumerate() {
            check_shape("B", t, b, n, m)?;
        }
        for (t, c) in c_seq.iter().enumerate() {
            check_shape("C", t, c, p, n)?;
        }
        for (t, w) in m_seq.iter().enumerate() {
            check_shape("M", t, w, p, p)?;
            check_psd("M", t, w)?;
        }
        for (t, w) in r_seq.iter().enumerate() {
            check_shape("R", t, w, m, m)?;
            check_psd("R", t, w)?;
        }
        if mu0.len() != n {
            return Err(Error::Length { matrix: "mu0", expected: n, actual: mu0.len() });
        }
        noise.validate()?;

        Ok(Self {
            dims: Dims { n, m, p, horizon },
            a_seq,
            b_seq,
            c_seq,
            m_seq,
            r_seq,
            mu0,
            noise,
        })
    }

    /// Same matrices at every time step.
    #[allow(clippy::too_many_arguments)]
    pub fn time_invariant(
        horizon: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        m: DMatrix<f64>,
        r: DMatrix<f64>,
        mu0: DVector<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        Self::new(
            horizon,
            vec![a; horizon + 1],
            vec![b; horizon],
            vec![c; horizon + 1],
            vec![m; horizon + 1],
            vec![r; horizon],
            mu0,
            noise,
        )
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn a_seq(&self) -> &[DMatrix<f64>] {
        &self.a_seq
    }

    pub fn b_seq(&self) -> &[DMatrix<f64>] {
        &self.b_seq
    }

    pub fn c_seq(&self) -> &[DMatrix<f64>] {
        &self.c_seq
    }

    pub fn m_seq(&self) -> &[DMatrix<f64>] {
        &self.m_seq
    }

    pub fn r_seq(&self) -> &[DMatrix<f64>] {
        &self.r_seq
    }

    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Copy of this plant with a different disturbance model.
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        Ok(Self { noise, ..self.clone() })
    }

    pub fn input_weights_positive_definite(&self) -> bool {
        self.r_seq.iter().all(|r| symmetric_min_eigenvalue(r) > DEFINITENESS_TOL)
    }
}

/// Lifted operators of the stacked system.
#[derive(Debug, Clone)]
pub struct BlockOperators {
    pub dims: Dims,
    /// Block down-shift, `n(N+1) x n(N+1)`.
    pub z: DMatrix<f64>,
    pub a_big: DMatrix<f64>,
    pub b_big: DMatrix<f64>,
    pub c_big: DMatrix<f64>,
    /// `(I - Z A)^{-1}`.
    pub p11: DMatrix<f64>,
    /// `(I - Z A)^{-1} Z B`.
    pub p12: DMatrix<f64>,
    pub cp11: DMatrix<f64>,
    pub cp12: DMatrix<f64>,
    pub m_big: DMatrix<f64>,
    pub r_big: DMatrix<f64>,
    /// `blkdiag(Sigma_delta0, I_N ⊗ Sigma_w)`.
    pub sigma_w: DMatrix<f64>,
    /// `I_{N+1} ⊗ Sigma_v`.
    pub sigma_v: DMatrix<f64>,
    /// `[mu0; 0; ...; 0]`.
    pub mu_w: DVector<f64>,
}

/// Builds the lifted operators. `P11` comes from block forward substitution
/// (`P11[t, s] = A_{t-1} P11[t-1, s]`, identity on the diagonal), never from a
/// dense inverse.
pub fn assemble_block_operators(spec: &SystemSpec) -> BlockOperators {
    let Dims { n, m, p, horizon } = spec.dims;
    let nx = n * (horizon + 1);

    let mut z = DMatrix::zeros(nx, nx);
    for t in 1..=horizon {
        z.view_mut((t * n, (t - 1) * n), (n, n)).fill_with_identity();
    }
    let a_big = block_diag(&spec.a_seq);
    let c_big = block_diag(&spec.c_seq);
    let mut b_big = DMatrix::zeros(nx, m * horizon);
    for (t, b) in spec.b_seq.iter().enumerate() {
        b_big.view_mut((t * n, t * m), (n, m)).copy_from(b);
    }

    let mut p11 = DMatrix::zeros(nx, nx);
    for s in 0..=horizon {
        p11.view_mut((s * n, s * n), (n, n)).fill_with_identity();
        for t in (s + 1)..=horizon {
            let prev = p11.view(((t - 1) * n, s * n), (n, n)).into_owned();
            let block = &spec.a_seq[t - 1] * prev;
            p11.view_mut((t * n, s * n), (n, n)).copy_from(&block);
        }
    }
    // x_t depends on u_s (s < t) through P11[t, s+1] B_s.
    let mut p12 = DMatrix::zeros(nx, m * horizon);
    for s in 0..horizon {
        for t in (s + 1)..=horizon {
            let block = p11.view((t * n, (s + 1) * n), (n, n)) * &spec.b_seq[s];
            p12.view_mut((t * n, s * m), (n, m)).copy_from(&block);
        }
    }
    let cp11 = &c_big * &p11;
    let cp12 = &c_big * &p12;

    let m_big = block_diag(&spec.m_seq);
    let r_big = block_diag(&spec.r_seq);

    let noise = spec.noise;
    let var_d0 = NoiseModel::uniform_variance(noise.delta0_halfwidth);
    let var_w = NoiseModel::uniform_variance(noise.w_halfwidth);
    let var_v = NoiseModel::uniform_variance(noise.v_halfwidth);
    let sigma_w = DMatrix::from_diagonal(&DVector::from_fn(nx, |i, _| if i < n { var_d0 } else { var_w }));
    let sigma_v = DMatrix::from_diagonal_element(p * (horizon + 1), p * (horizon + 1), var_v);
    let mut mu_w = DVector::zeros(nx);
    mu_w.rows_mut(0, n).copy_from(&spec.mu0);

    BlockOperators {
        dims: spec.dims,
        z,
        a_big,
        b_big,
        c_big,
        p11,
        p12,
        cp11,
        cp12,
        m_big,
        r_big,
        sigma_w,
        sigma_v,
        mu_w,
    }
}

/// One draw of every disturbance in a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    /// `[delta0; w_0; ...; w_{N-1}]`, length `n(N+1)`.
    pub w: DVector<f64>,
    /// `[v_0; ...; v_N]`, length `p(N+1)`.
    pub v: DVector<f64>,
}

impl NoiseRealization {
    pub fn zeros(dims: &Dims) -> Self {
        Self { w: DVector::zeros(dims.state_len()), v: DVector::zeros(dims.output_len()) }
    }
}

fn uniform_entries<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], halfwidth: f64) {
    for x in out.iter_mut() {
        *x = halfwidth * (2.0 * rng.random::<f64>() - 1.0);
    }
}

/// Draws `delta0`, every `w_t` and every `v_t` uniformly from their boxes.
pub fn sample_noise<R: Rng + ?Sized>(spec: &SystemSpec, rng: &mut R) -> NoiseRealization {
    let dims = spec.dims;
    let noise = spec.noise;
    let mut out = NoiseRealization::zeros(&dims);
    let (head, tail) = out.w.as_mut_slice().split_at_mut(dims.n);
    uniform_entries(rng, head, noise.delta0_halfwidth);
    uniform_entries(rng, tail, noise.w_halfwidth);
    uniform_entries(rng, out.v.as_mut_slice(), noise.v_halfwidth);
    out
}

/// A source of disturbance realisations for rollouts.
pub trait DisturbanceSource {
    fn draw(&mut self) -> NoiseRealization;
}

/// Uniform disturbances for a fixed plant, owning its RNG.
pub struct UniformDisturbances<'a, R> {
    spec: &'a SystemSpec,
    rng: R,
}

impl<'a, R: Rng> UniformDisturbances<'a, R> {
    pub fn new(spec: &'a SystemSpec, rng: R) -> Self {
        Self { spec, rng }
    }
}

impl<R: Rng> DisturbanceSource for UniformDisturbances<'_, R> {
    fn draw(&mut self) -> NoiseRealization {
        sample_noise(self.spec, &mut self.rng)
    }
}

/// Closed-loop signals of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub v: DVector<f64>,
}

/// Simulates the plant forward under `u_t = sum_{s <= t} K_{t,s} y_s`.
pub fn rollout(spec: &SystemSpec, policy: &PolicyMatrix, noise: &NoiseRealization) -> Result<Trajectory> {
    let dims = spec.dims;
    policy.check_shape(dims.policy_shape())?;
    policy.check_causal(dims.policy_shape())?;
    if noise.w.len() != dims.state_len() || noise.v.len() != dims.output_len() {
        return Err(Error::InvalidArgument("noise realisation does not match the plant dimensions".into()));
    }
    Ok(rollout_unchecked(spec, policy.matrix(), noise))
}

pub(crate) fn rollout_unchecked(spec: &SystemSpec, k: &DMatrix<f64>, noise: &NoiseRealization) -> Trajectory {
    let Dims { n, m, p, horizon } = spec.dims;
    let mut x = DVector::zeros(n * (horizon + 1));
    let mut y = DVector::zeros(p * (horizon + 1));
    let mut u = DVector::zeros(m * horizon);

    let mut xt = &spec.mu0 + noise.w.rows(0, n);
    for t in 0..=horizon {
        x.rows_mut(t * n, n).copy_from(&xt);
        let yt = &spec.c_seq[t] * &xt + noise.v.rows(t * p, p);
        y.rows_mut(t * p, p).copy_from(&yt);
        if t == horizon {
            break;
        }
        let mut ut = DVector::zeros(m);
        for s in 0..=t {
            ut += k.view((t * m, s * p), (m, p)) * y.rows(s * p, p);
        }
        u.rows_mut(t * m, m).copy_from(&ut);
        xt = &spec.a_seq[t] * &xt + &spec.b_seq[t] * &ut + noise.w.rows((t + 1) * n, n);
    }
    Trajectory { x, y, u, w: noise.w.clone(), v: noise.v.clone() }
}

/// Observed cost `yᵀ M y + uᵀ R u` of a single trajectory.
pub fn empirical_cost(traj: &Trajectory, ops: &BlockOperators) -> f64 {
    traj.y.dot(&(&ops.m_big * &traj.y)) + traj.u.dot(&(&ops.r_big * &traj.u))
}
