//! Dense matrix-equation solvers and structural checks.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; on the wire they are row-major arrays of rows.

use std::ops::Deref;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Eigenvalue tolerance for the positive semi-definite constructor.
pub const PSD_TOLERANCE: f64 = 1e-10;
/// Condition number beyond which a linear operator is treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

const DARE_MAX_ITER: usize = 100_000;
const DARE_STEP_TOL: f64 = 1e-12;
const NEWTON_MAX_HALVINGS: usize = 30;
const NEWTON_FD_STEP: f64 = 1e-7;

/// A symmetric matrix checked to be positive (semi-)definite.
///
/// Input is symmetrized as `(M + M^T) / 2` before the eigenvalue check.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Matrix);

impl SpdMatrix {
    pub fn positive_definite(m: Matrix) -> Result<Self> {
        Self::checked(m, "definite", 0.0, false)
    }

    pub fn positive_semidefinite(m: Matrix) -> Result<Self> {
        Self::checked(m, "semi-definite", -PSD_TOLERANCE, true)
    }

    fn checked(m: Matrix, kind: &'static str, floor: f64, inclusive: bool) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite(&m, "covariance/cost matrix")?;
        let s = symmetrize(&m);
        let min_eig = min_symmetric_eigenvalue(&s);
        let ok = if inclusive { min_eig >= floor } else { min_eig > floor };
        if !ok {
            return Err(Error::NotPositive {
                what: format!("{}x{} matrix", s.nrows(), s.ncols()),
                kind,
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self(s))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        Self(Matrix::identity(n, n) * scale)
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    /// Symmetrize and clip eigenvalues below `floor`.
    pub fn projected(m: &Matrix, floor: f64) -> Self {
        Self(project_psd(m, floor))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

impl Deref for SpdMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl Serialize for SpdMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SpdMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = serde_matrix::deserialize(d)?;
        SpdMatrix::positive_semidefinite(m).map_err(serde::de::Error::custom)
    }
}

/// Row-major nested-array (de)serialization for `Matrix` fields.
pub mod serde_matrix {
    use super::{from_rows, to_rows, Matrix};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
            let rows = Option::<Vec<Vec<f64>>>::deserialize(d)?;
            rows.map(|r| from_rows(&r).map_err(serde::de::Error::custom))
                .transpose()
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix>, D::Error> {
            let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
            all.iter()
                .map(|r| from_rows(r).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

/// Row-major nested rows.
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from row-major nested rows, rejecting ragged or non-finite input.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

pub fn ensure_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() == rows && m.ncols() == cols {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what}: expected {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn condition_number(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Symmetrize and floor the spectrum at `floor`.
pub fn project_psd(m: &Matrix, floor: f64) -> Matrix {
    let eig = symmetrize(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * Matrix::from_diagonal(&clipped) * v.transpose()))
}

/// Inverse with a conditioning guard.
pub fn checked_inverse(m: &Matrix, what: &'static str) -> Result<Matrix> {
    let cond = condition_number(m);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::SingularStats {
            what,
            condition: cond,
        });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::SingularStats {
            what,
            condition: cond,
        })
}

/// Solves `S X = rhs` for symmetric positive-definite `S`.
pub fn solve_spd(s: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    let sym = symmetrize(s);
    match sym.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => sym
            .lu()
            .solve(rhs)
            .ok_or_else(|| Error::InvalidArgument("singular system in SPD solve".into())),
    }
}

/// Column-stacked `vec(M)`.
pub fn vectorize(m: &Matrix) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &nalgebra::DVector<f64>, rows: usize, cols: usize) -> Matrix {
    Matrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn complex_eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    complex_eigenvalues(m)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves `P - Atrans^T P F = Q` by Kronecker vectorization:
/// `(I - F^T (x) Atrans^T) vec(P) = vec(Q)`.
///
/// A unique solution exists iff `conj(lambda_i) * mu_j != 1` for every
/// eigenvalue `lambda_i` of `Atrans` and `mu_j` of `F`. Near violations show
/// up as a badly conditioned operator and are rejected. The cost is
/// O(n^6); a Bartels-Stewart (Schur based) solver is the way to go for large n.
pub fn solve_discrete_sylvester(atrans: &Matrix, f: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = atrans.nrows();
    ensure_shape(atrans, n, n, "Sylvester A")?;
    ensure_shape(f, n, n, "Sylvester F")?;
    ensure_shape(q, n, n, "Sylvester Q")?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let op = Matrix::identity(n * n, n * n) - f.transpose().kronecker(&atrans.transpose());
    let cond = condition_number(&op);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(Error::SingularOperator { condition: cond });
    }
    let sol = op
        .lu()
        .solve(&vectorize(q))
        .ok_or(Error::SingularOperator { condition: cond })?;
    Ok(unvectorize(&sol, n, n))
}

/// `||P - Atrans^T P F - Q||_2`.
pub fn sylvester_residual(atrans: &Matrix, f: &Matrix, q: &Matrix, p: &Matrix) -> f64 {
    norm2(&(p - atrans.transpose() * p * f - q))
}

/// One backward Riccati step. Returns `(P_prev, K)` where
/// `K = (B^T P B + R)^-1 B^T P A` and `P_prev = Q + A^T P (A - B K)`.
pub fn riccati_step(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<(Matrix, Matrix)> {
    let btp = b.transpose() * p;
    let gram = &btp * b + r;
    let k = solve_spd(&gram, &(&btp * a))?;
    let p_prev = q + a.transpose() * p * (a - b * &k);
    Ok((symmetrize(&p_prev), k))
}

/// `||Q + A^T P A - A^T P B (B^T P B + R)^-1 B^T P A - P||_2`.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> f64 {
    match riccati_step(a, b, q, r, p) {
        Ok((next, _)) => norm2(&(next - p)),
        Err(_) => f64::INFINITY,
    }
}

/// Stabilizing solution of the discrete algebraic Riccati equation by
/// fixed-point iteration of the backward Riccati recursion started at `P = Q`.
///
/// Converges linearly at a rate governed by the closed loop; a doubling or
/// Schur-vector solver would be the faster replacement.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &SpdMatrix, r: &SpdMatrix) -> Result<SpdMatrix> {
    let n = a.nrows();
    ensure_shape(a, n, n, "A")?;
    if b.nrows() != n {
        return Err(Error::Dimension(format!("B must have {n} rows, got {}", b.nrows())));
    }
    ensure_shape(q, n, n, "Q")?;
    ensure_shape(r, b.ncols(), b.ncols(), "R")?;
    if !stabilizability_check(a, b) {
        return Err(Error::NotStabilizable);
    }
    let mut p = q.as_matrix().clone();
    let mut last_step = f64::INFINITY;
    for _ in 0..DARE_MAX_ITER {
        let (next, _) = riccati_step(a, b, q, r, &p)?;
        last_step = norm2(&(&next - &p));
        let scale = norm2(&next).max(1.0);
        p = next;
        if last_step <= DARE_STEP_TOL * scale {
            break;
        }
    }
    let residual = dare_residual(a, b, q, r, &p);
    if residual > 1e-9 * (1.0 + norm2(&p)) {
        return Err(Error::NoConvergence {
            what: "DARE fixed-point iteration",
            iterations: DARE_MAX_ITER,
            residual: residual.max(last_step),
        });
    }
    SpdMatrix::positive_semidefinite(p)
}

/// PBH test: every eigenvalue `lambda` of `A` with `|lambda| >= 1` must have
/// `rank [A - lambda I, B] = n`. Rank uses a relative singular-value
/// threshold of 1e-10.
pub fn stabilizability_check(a: &Matrix, b: &Matrix) -> bool {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return false;
    }
    let m = b.ncols();
    complex_eigenvalues(a)
        .into_iter()
        .filter(|lambda| lambda.norm() >= 1.0)
        .all(|lambda| {
            let pbh = DMatrix::<Complex<f64>>::from_fn(n, n + m, |i, j| {
                if j < n {
                    let diag = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                    Complex::new(a[(i, j)], 0.0) - diag
                } else {
                    Complex::new(b[(i, j - n)], 0.0)
                }
            });
            let sv = pbh.singular_values();
            let tol = 1e-10 * sv.max();
            sv.iter().filter(|&&s| s > tol).count() == n
        })
}

/// Outcome of a Newton solve. `converged` reports whether the residual
/// tolerance was met; `x` is the best iterate either way.
#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub x: Matrix,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Damped Newton iteration on a matrix-valued residual.
///
/// The Jacobian of the vectorized residual comes from forward differences
/// with step `1e-7 * (1 + |x_k|)`. A step is accepted only if it lowers the
/// Frobenius norm of the residual, halving the step up to 30 times.
/// `residual_fn` must return as many entries as `x0` has.
pub fn newton_matrix_root<F>(residual_fn: F, x0: &Matrix, tol: f64, max_iter: usize) -> Result<NewtonSolution>
where
    F: Fn(&Matrix) -> Matrix,
{
    let sol = newton_solve(residual_fn, x0, tol, max_iter)?;
    if sol.converged {
        Ok(sol)
    } else {
        Err(Error::NoConvergence {
            what: "Newton root finding",
            iterations: sol.iterations,
            residual: sol.residual,
        })
    }
}

/// Like [`newton_matrix_root`] but returns the best iterate instead of an
/// error when the tolerance is not met. A singular Jacobian is still an error.
pub fn newton_solve<F>(residual_fn: F, x0: &Matrix, tol: f64, max_iter: usize) -> Result<NewtonSolution>
where
    F: Fn(&Matrix) -> Matrix,
{
    ensure_finite(x0, "Newton initial point")?;
    let (rows, cols) = x0.shape();
    let k = rows * cols;
    let mut x = x0.clone();
    let mut r = residual_fn(&x);
    if r.len() != k {
        return Err(Error::Dimension(format!(
            "Newton residual has {} entries, unknown has {k}",
            r.len()
        )));
    }
    let mut norm = r.norm();
    let mut trace = vec![norm];
    let mut iterations = 0;

    while iterations < max_iter && norm > tol {
        if !norm.is_finite() {
            break;
        }
        let mut jac = Matrix::zeros(k, k);
        for j in 0..k {
            let h = NEWTON_FD_STEP * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let rp = residual_fn(&xp);
            for i in 0..k {
                jac[(i, j)] = (rp[i] - r[i]) / h;
            }
        }
        let cond = condition_number(&jac);
        if !cond.is_finite() || cond > SINGULAR_CONDITION {
            return Err(Error::SingularJacobian { condition: cond });
        }
        let rhs = -vectorize(&r);
        let Some(delta) = jac.lu().solve(&rhs) else {
            return Err(Error::SingularJacobian { condition: cond });
        };
        let delta = unvectorize(&delta, rows, cols);

        iterations += 1;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let candidate = &x + &delta * alpha;
            let rc = residual_fn(&candidate);
            let nc = rc.norm();
            if nc.is_finite() && nc < norm {
                accepted = Some((candidate, rc, nc));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((xn, rn, nn)) => {
                x = xn;
                r = rn;
                norm = nn;
                trace.push(norm);
            }
            // No descent along the Newton direction: stalled.
            None => break,
        }
    }

    Ok(NewtonSolution {
        converged: norm <= tol,
        x,
        residual: norm,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    #[test]
    fn sylvester_zero_atrans_gives_q() {
        let f = dmatrix![0.3, 0.1; -0.2, 0.5];
        let p = solve_discrete_sylvester(&Matrix::zeros(2, 2), &f, &Matrix::identity(2, 2)).unwrap();
        assert!(close(&p, &Matrix::identity(2, 2), 1e-14));
    }

    #[test]
    fn sylvester_zero_f_gives_q() {
        let a = dmatrix![1.3, 0.1; -0.2, 2.5];
        let q = dmatrix![2.0, 0.5; 0.5, 1.0];
        let p = solve_discrete_sylvester(&a, &Matrix::zeros(2, 2), &q).unwrap();
        assert!(close(&p, &q, 1e-14));
    }

    #[test]
    fn sylvester_scalar_closed_form() {
        let p = solve_discrete_sylvester(&dmatrix![0.5], &dmatrix![0.4], &dmatrix![1.0]).unwrap();
        assert!((p[(0, 0)] - 1.25).abs() < 1e-14);
    }

    #[test]
    fn sylvester_eigenvalue_collision_is_singular() {
        // lambda * mu = 2 * 0.5 = 1
        let err = solve_discrete_sylvester(&dmatrix![2.0], &dmatrix![0.5], &dmatrix![1.0]).unwrap_err();
        assert!(matches!(err, Error::SingularOperator { .. }));
    }

    #[test]
    fn dare_scalar() {
        let p = solve_dare(
            &dmatrix![0.9],
            &dmatrix![1.0],
            &SpdMatrix::identity(1),
            &SpdMatrix::identity(1),
        )
        .unwrap();
        let expected = (0.81 + 4.6561f64.sqrt()) / 2.0;
        assert!((p[(0, 0)] - expected).abs() < 1e-10, "{}", p[(0, 0)]);
    }

    #[test]
    fn dare_zero_cost_stable_a() {
        let a = dmatrix![0.5, 0.2; 0.0, -0.7];
        let p = solve_dare(&a, &dmatrix![1.0; 0.0], &SpdMatrix::zeros(2), &SpdMatrix::identity(1)).unwrap();
        assert!(p.abs().max() == 0.0);
    }

    #[test]
    fn dare_rejects_unstabilizable() {
        let a = dmatrix![2.0, 0.0; 0.0, 0.5];
        let b = dmatrix![0.0; 1.0];
        let err = solve_dare(&a, &b, &SpdMatrix::identity(2), &SpdMatrix::identity(1)).unwrap_err();
        assert!(matches!(err, Error::NotStabilizable));
    }

    #[test]
    fn stabilizability_examples() {
        let stable = dmatrix![0.5, 0.0; 0.0, 0.5];
        assert!(stabilizability_check(&stable, &Matrix::zeros(2, 1)));
        let a = dmatrix![2.0, 0.0; 0.0, 0.5];
        assert!(stabilizability_check(&a, &dmatrix![1.0; 0.0]));
        assert!(!stabilizability_check(&a, &dmatrix![0.0; 1.0]));
        // Unit-modulus mode counts as needing control.
        assert!(!stabilizability_check(&dmatrix![1.0], &dmatrix![0.0]));
        assert!(!stabilizability_check(&a, &dmatrix![1.0, 0.0]));
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&dmatrix![0.3, 0.0; 0.0, -0.8]) - 0.8).abs() < 1e-14);
        assert!((spectral_radius(&Matrix::identity(3, 3)) - 1.0).abs() < 1e-14);
        let t: f64 = 0.7;
        let rot = dmatrix![t.cos(), -t.sin(); t.sin(), t.cos()] * 0.9;
        assert!((spectral_radius(&rot) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn newton_affine_converges_immediately() {
        let id = Matrix::identity(2, 2);
        let sol = newton_matrix_root(|x| x - &id, &Matrix::zeros(2, 2), 1e-10, 10).unwrap();
        assert!(close(&sol.x, &id, 1e-8));
        // Forward differences leave an O(1e-9) error after the first step.
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn newton_decoupled_square_roots() {
        let target = dmatrix![4.0, 0.0; 0.0, 9.0];
        let x0 = dmatrix![3.0, 0.0; 0.0, 2.0];
        let sol = newton_matrix_root(|x| x * x - &target, &x0, 1e-12, 50).unwrap();
        assert!(close(&sol.x, &dmatrix![2.0, 0.0; 0.0, 3.0], 1e-10));
    }

    #[test]
    fn newton_reports_no_convergence() {
        // x^2 + 1 has no real root.
        let err = newton_matrix_root(|x| x * x + dmatrix![1.0], &dmatrix![0.5], 1e-10, 50).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. } | Error::SingularJacobian { .. }));
    }

    #[test]
    fn spd_constructors() {
        let m = dmatrix![2.0, 1.0; 0.0, 2.0];
        let s = SpdMatrix::positive_definite(m).unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
        assert!(SpdMatrix::positive_definite(Matrix::zeros(2, 2)).is_err());
        assert!(SpdMatrix::positive_semidefinite(Matrix::zeros(2, 2)).is_ok());
        assert!(SpdMatrix::positive_semidefinite(dmatrix![-1.0]).is_err());
        assert!(SpdMatrix::positive_definite(dmatrix![f64::NAN]).is_err());
    }

    #[test]
    fn rows_roundtrip_is_row_major() {
        let m = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
        let json = serde_json::to_string(&to_rows(&m)).unwrap();
        assert_eq!(json, "[[1.0,2.0,3.0],[4.0,5.0,6.0]]");
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
