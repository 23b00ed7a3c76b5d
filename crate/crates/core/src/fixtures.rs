//! Named problem instances and random plant generators.
//!
//! * `appendix-d`: three-state plant, scalar input, full-state measurement,
//!   `N = 2`, sparse pattern letting `u_0` see `y_0[0]` and `u_1` see
//!   `y_0[0]`, `y_1[0]`.
//! * `b2`: scalar integrator chain with `N = 2`, input-only cost and unit noise.
//! * `b3`: two-state plant with a tied block-diagonal gain; not QI.
//! * `quadratic`: `appendix-d` with `B = 0`, so the cost is quadratic in `z`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::policy_space::{basis_from_pattern, causal_mask, PolicyShape, SparsityPattern, SubspaceBasis};
use crate::system::{NoiseModel, SystemSpec};

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = ["appendix-d", "b2", "b3", "quadratic"];

pub fn by_name(name: &str) -> Option<(SystemSpec, SubspaceBasis)> {
    match name {
        "appendix-d" => Some(appendix_d()),
        "b2" => Some(b2()),
        "b3" => Some(b3()),
        "quadratic" => Some(quadratic()),
        _ => None,
    }
}

fn appendix_d_plant(b: DMatrix<f64>) -> SystemSpec {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -10.0, -1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    SystemSpec::time_invariant(
        2,
        a,
        b,
        DMatrix::identity(3, 3),
        DMatrix::from_diagonal_element(3, 3, 0.25),
        DMatrix::from_element(1, 1, 0.25),
        DVector::from_vec(vec![0.1, -0.1, 0.1]),
        NoiseModel { delta0_halfwidth: 1e-2, w_halfwidth: 1e-3, v_halfwidth: 1e-3 },
    )
    .expect("appendix-d plant is valid")
}

/// `[[1,0,0],[1,1,0]] ⊗ [1,0,0]`.
pub fn appendix_d_pattern() -> SparsityPattern {
    let shape = PolicyShape { m: 1, p: 3, horizon: 2 };
    SparsityPattern::from_rows(
        shape,
        &[vec![1, 0, 0, 0, 0, 0, 0, 0, 0], vec![1, 0, 0, 1, 0, 0, 0, 0, 0]],
    )
    .expect("appendix-d pattern is causal")
}

pub fn appendix_d() -> (SystemSpec, SubspaceBasis) {
    let b = DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 0.0]);
    let basis = basis_from_pattern(&appendix_d_pattern()).expect("nonempty");
    (appendix_d_plant(b), basis)
}

/// Same pattern and noise as `appendix-d` but with no input channel.
pub fn quadratic() -> (SystemSpec, SubspaceBasis) {
    let basis = basis_from_pattern(&appendix_d_pattern()).expect("nonempty");
    (appendix_d_plant(DMatrix::zeros(3, 1)), basis)
}

/// Halfwidth giving unit variance per entry.
fn unit_variance_halfwidth() -> f64 {
    3f64.sqrt()
}

/// Scalar chain `A = B = C = 1`, `N = 2`, `M = 0`, `R = 1`, unit noise, full causal pattern.
pub fn b2() -> (SystemSpec, SubspaceBasis) {
    let one = DMatrix::from_element(1, 1, 1.0);
    let a = unit_variance_halfwidth();
    let spec = SystemSpec::time_invariant(
        2,
        one.clone(),
        one.clone(),
        one.clone(),
        DMatrix::zeros(1, 1),
        one,
        DVector::zeros(1),
        NoiseModel { delta0_halfwidth: a, w_halfwidth: a, v_halfwidth: a },
    )
    .expect("b2 plant is valid");
    let basis = basis_from_pattern(&causal_mask(2, 1, 1)).expect("nonempty");
    (spec, basis)
}

/// `A = [[1,2],[-1,-3]]`, `B = C = M = R = I`, `mu0 = [0,1]`, unit noise, `N = 2`.
/// The gain is `blkdiag(z1, z2)` on the diagonal blocks `(0,0)` and `(1,1)`,
/// so each coordinate drives two entries.
pub fn b3() -> (SystemSpec, SubspaceBasis) {
    let eye = DMatrix::<f64>::identity(2, 2);
    let a = unit_variance_halfwidth();
    let spec = SystemSpec::time_invariant(
        2,
        DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, -3.0]),
        eye.clone(),
        eye.clone(),
        eye.clone(),
        eye,
        DVector::from_vec(vec![0.0, 1.0]),
        NoiseModel { delta0_halfwidth: a, w_halfwidth: a, v_halfwidth: a },
    )
    .expect("b3 plant is valid");
    let shape = PolicyShape { m: 2, p: 2, horizon: 2 };
    let len = shape.rows() * shape.cols();
    let mut cols = DMatrix::zeros(len, 2);
    for (coord, entries) in [[(0, 0), (2, 2)], [(1, 1), (3, 3)]].iter().enumerate() {
        for &(row, col) in entries {
            cols[(col * shape.rows() + row, coord)] = 1.0;
        }
    }
    let basis = SubspaceBasis::from_spanning_columns(shape, &cols).expect("b3 basis is valid");
    (spec, basis)
}

/// `f(z) = ‖z‖²`: no dynamics reach the cost, only `u = K v` with unit `Σv`.
pub fn unit_quadratic() -> (SystemSpec, SubspaceBasis) {
    let one = DMatrix::from_element(1, 1, 1.0);
    let spec = SystemSpec::time_invariant(
        2,
        one.clone(),
        DMatrix::zeros(1, 1),
        one.clone(),
        DMatrix::zeros(1, 1),
        one,
        DVector::zeros(1),
        NoiseModel { delta0_halfwidth: 0.0, w_halfwidth: 0.0, v_halfwidth: unit_variance_halfwidth() },
    )
    .expect("unit quadratic plant is valid");
    let basis = basis_from_pattern(&causal_mask(2, 1, 1)).expect("nonempty");
    (spec, basis)
}

/// Basis of every causal policy for the plant.
pub fn full_causal(spec: &SystemSpec) -> SubspaceBasis {
    let d = spec.dims();
    basis_from_pattern(&causal_mask(d.horizon, d.m, d.p)).expect("causal mask is nonempty")
}

fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn random_psd<R: Rng + ?Sized>(rng: &mut R, size: usize, shift: f64) -> DMatrix<f64> {
    let g = uniform_matrix(rng, size, size, 1.0);
    &g * g.transpose() + DMatrix::from_diagonal_element(size, size, shift)
}

/// Random time-varying plant with `n, m, p <= max_dim`, `N <= max_horizon`,
/// PD weights and positive noise halfwidths.
pub fn random_system<R: Rng + ?Sized>(rng: &mut R, max_dim: usize, max_horizon: usize) -> SystemSpec {
    let n = rng.random_range(1..=max_dim);
    let m = rng.random_range(1..=max_dim);
    let p = rng.random_range(1..=max_dim);
    let horizon = rng.random_range(1..=max_horizon);
    let a_seq = (0..=horizon).map(|_| uniform_matrix(rng, n, n, 0.8)).collect();
    let b_seq = (0..horizon).map(|_| uniform_matrix(rng, n, m, 1.0)).collect();
    let c_seq = (0..=horizon).map(|_| uniform_matrix(rng, p, n, 1.0)).collect();
    let m_seq = (0..=horizon).map(|_| random_psd(rng, p, 0.1)).collect();
    let r_seq = (0..horizon).map(|_| random_psd(rng, m, 0.1)).collect();
    let mu0 = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let noise = NoiseModel {
        delta0_halfwidth: rng.random_range(0.1..1.0),
        w_halfwidth: rng.random_range(0.1..1.0),
        v_halfwidth: rng.random_range(0.1..1.0),
    };
    SystemSpec::new(horizon, a_seq, b_seq, c_seq, m_seq, r_seq, mu0, noise).expect("random plant is valid")
}
