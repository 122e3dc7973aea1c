mod common;

use common::{random_dims, random_system, rng};
use iocl_core::lqr::{self, SystemParams};
use iocl_core::matops::{self, Matrix, SpdMatrix};
use nalgebra::dmatrix;
use proptest::prelude::*;

fn control_weight(sys: &SystemParams) -> Matrix {
    let r_inv = sys.r.as_matrix().clone().try_inverse().unwrap();
    &sys.b * r_inv * sys.b.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn steady_state_identities(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, m) = random_dims(&mut r, 5);
        let sys = random_system(&mut r, n, m);
        let cl = lqr::infinite_horizon_solution(&sys).unwrap();
        let (f, k, p) = cl.steady_state().unwrap();
        let p = p.as_matrix();
        prop_assert!(matops::spectral_radius(f) < 1.0);

        // Gain consistency.
        let lhs = (sys.b.transpose() * p * &sys.b + sys.r.as_matrix()) * k;
        let rhs = sys.b.transpose() * p * &sys.a;
        prop_assert!((lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));

        // Value and gain identities.
        let s = control_weight(&sys);
        let value = matops::norm2(&(p - sys.a.transpose() * p * f - sys.q.as_matrix()));
        let gain = matops::norm2(&(&s * p * f - (&sys.a - f)));
        prop_assert!(value <= 1e-8, "value residual {value}");
        prop_assert!(gain <= 1e-8, "gain residual {gain}");

        // (I + B R^-1 B^T P) F = A
        let woodbury = matops::norm2(&((Matrix::identity(n, n) + &s * p) * f - &sys.a));
        prop_assert!(woodbury <= 1e-8, "woodbury residual {woodbury}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn long_finite_horizon_reaches_steady_state(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, m) = random_dims(&mut r, 3);
        let sys = random_system(&mut r, n, m);
        let inf = lqr::infinite_horizon_solution(&sys).unwrap();
        let fin = lqr::finite_horizon_solution(&sys, 10_000).unwrap();
        let lqr::ClosedLoop::Finite { p, .. } = &fin else { unreachable!() };
        let (_, _, p_ss) = inf.steady_state().unwrap();
        prop_assert!((&p[0] - p_ss.as_matrix()).norm() <= 1e-8 * (1.0 + p_ss.norm()));
    }
}

fn scalar(a: f64, q: f64, r: f64) -> SystemParams {
    SystemParams::new(dmatrix![a], dmatrix![1.0], SpdMatrix::scaled_identity(1, q), SpdMatrix::scaled_identity(1, r)).unwrap()
}

#[test]
fn expensive_control_leaves_plant_untouched() {
    let cl = lqr::infinite_horizon_solution(&scalar(0.9, 1.0, 1e8)).unwrap();
    let (f, k, _) = cl.steady_state().unwrap();
    assert!(k[(0, 0)].abs() < 1e-6);
    assert!((f[(0, 0)] - 0.9).abs() < 1e-6);
}

#[test]
fn finite_horizon_first_gain_converges() {
    let sys = scalar(0.9, 1.0, 1.0);
    let inf = lqr::infinite_horizon_solution(&sys).unwrap();
    let fin = lqr::finite_horizon_solution(&sys, 500).unwrap();
    assert!((fin.gain_at(0) - inf.gain_at(0)).abs().max() < 1e-8);
}

#[test]
fn single_step_gain() {
    let sys = SystemParams::new(
        dmatrix![1.1, 0.2; 0.0, 0.8],
        dmatrix![0.5; 1.0],
        SpdMatrix::identity(2),
        SpdMatrix::scaled_identity(1, 2.0),
    )
    .unwrap()
    .with_terminal_cost(SpdMatrix::scaled_identity(2, 3.0))
    .unwrap();
    let fin = lqr::finite_horizon_solution(&sys, 1).unwrap();
    let qt = Matrix::identity(2, 2) * 3.0;
    let expected = (sys.b.transpose() * &qt * &sys.b + sys.r.as_matrix()).try_inverse().unwrap() * sys.b.transpose() * &qt * &sys.a;
    assert!((fin.gain_at(0) - &expected).abs().max() < 1e-12);
    assert!((fin.dynamics_at(0) - (&sys.a - &sys.b * expected)).abs().max() < 1e-12);
}

#[test]
fn system_json_is_validated() {
    let text = r#"{"a": [[2.0, 0.0], [0.0, 0.5]], "b": [[0.0], [1.0]], "q": [[1.0, 0.0], [0.0, 1.0]], "r": [[1.0]]}"#;
    assert!(serde_json::from_str::<SystemParams>(text).is_err());
    let ok = r#"{"a": [[0.9]], "b": [[1.0]], "q": [[1.0]], "r": [[1.0]]}"#;
    let sys: SystemParams = serde_json::from_str(ok).unwrap();
    assert_eq!(sys.n(), 1);
}
