//! Disentangling `{A, B, Q, R}` from identified closed-loop dynamics.
//!
//! In the infinite horizon `F_ss` only constrains the parameters through the
//! pair of equations
//!
//! ```text
//! P - A^T P F_ss          = Q
//! B R^-1 B^T P F_ss       = A - F_ss
//! ```
//!
//! so one unknown can be recovered given the others. `B` and `R` only ever
//! appear as `B R^-1 B^T` and are not separately identifiable. In the finite
//! horizon the terminal condition `P_T = Q` adds enough structure to recover
//! `A` and `Q` jointly when `B = R = I`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::em::LgssmParams;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matops::{self, Matrix, SpdMatrix};

/// Eigenvalue-gap tolerance for the `A0` / `-F_ss^-1` disjointness check.
pub const EIGEN_GAP_TOL: f64 = 1e-8;
/// Closed-loop matrices must be invertible below this condition number.
pub const DYNAMICS_CONDITION_LIMIT: f64 = 1e10;
/// Allowed negative eigenvalue in `P_j - P_{j+1}`.
pub const MONOTONE_SLACK: f64 = 1e-8;

const ROOT_RESIDUAL_TOL: f64 = 1e-8;
const REPLAY_TOL: f64 = 1e-6;
const RANK_TOL: f64 = 1e-10;
/// Newton starts `(1 + c) F_{T-1}` tried in order.
const FINITE_HORIZON_STARTS: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    #[serde(with = "named_matrices")]
    pub estimates: BTreeMap<String, Matrix>,
    pub residuals: BTreeMap<String, f64>,
    pub iterations: usize,
    /// Per-iteration step norm (iterative method) or residual norm (Newton).
    pub trace: Vec<f64>,
    /// Successive `A_j` for iterative recoveries.
    #[serde(skip)]
    pub iterates: Vec<Matrix>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RecoveryResult {
    pub fn estimate(&self, name: &str) -> Option<&Matrix> {
        self.estimates.get(name)
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.residuals.get(name).copied()
    }

    fn with_estimate(mut self, name: &str, m: Matrix) -> Self {
        self.estimates.insert(name.to_string(), m);
        self
    }

    fn with_residual(mut self, name: &str, v: f64) -> Self {
        self.residuals.insert(name.to_string(), v);
        self
    }
}

mod named_matrices {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::matops::{from_rows, to_rows, Matrix};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Matrix>, s: S) -> Result<S::Ok, S::Error> {
        m.iter()
            .map(|(k, v)| (k.clone(), to_rows(v)))
            .collect::<BTreeMap<_, _>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Matrix>, D::Error> {
        BTreeMap::<String, Vec<Vec<f64>>>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| from_rows(&v).map(|m| (k, m)).map_err(serde::de::Error::custom))
            .collect()
    }
}

fn check_square(m: &Matrix, n: usize, what: &str) -> Result<()> {
    matops::ensure_shape(m, n, n, what)?;
    matops::ensure_finite(m, what)
}

fn invert_dynamics(f: &Matrix) -> Result<Matrix> {
    let cond = matops::condition_number(f);
    if !cond.is_finite() || cond > DYNAMICS_CONDITION_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "closed-loop matrix is not invertible (condition number {cond:.3e})"
        )));
    }
    f.clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("closed-loop matrix is singular".into()))
}

/// `B R^-1 B^T`.
pub fn control_weight(b: &Matrix, r: &SpdMatrix) -> Result<Matrix> {
    matops::ensure_shape(r, b.ncols(), b.ncols(), "R")?;
    Ok(b * matops::solve_spd(r, &b.transpose())?)
}

/// Residuals of the two infinite-horizon identities at `(A, S = B R^-1 B^T, Q, F)`.
fn identity_residuals(a: &Matrix, s: &Matrix, q: &Matrix, f: &Matrix) -> Result<(f64, f64)> {
    let p = matops::solve_discrete_sylvester(a, f, q)?;
    let sylvester = matops::sylvester_residual(a, f, q, &p);
    let gain = matops::norm2(&(s * &p * f - (a - f)));
    Ok((sylvester, gain))
}

/// Smallest distance between an eigenvalue of `a0` and one of `-F^-1`.
fn eigen_gap(a0: &Matrix, f: &Matrix) -> f64 {
    let lambdas = matops::complex_eigenvalues(a0);
    let mus = matops::complex_eigenvalues(f);
    let mut gap = f64::INFINITY;
    for l in &lambdas {
        for mu in &mus {
            if mu.norm() == 0.0 {
                continue;
            }
            gap = gap.min((l + mu.inv()).norm());
        }
    }
    gap
}

/// Recovers `A` from `F_ss` with `{B, R, Q}` known by the fixed-`F_ss`
/// Kleinman-type iteration
///
/// ```text
/// P_j     solves  P_j - A_j^T P_j F_ss = Q
/// A_{j+1} = (I + B R^-1 B^T P_j) F_ss
/// ```
///
/// starting from `A0` (default `F_ss`). Stops when `||A_j - A_{j-1}||_2 <= tol`.
/// The residual `p_monotone_violation` reports how far `P_j - P_{j+1}`
/// falls below zero in the PSD order (zero for exact inputs).
pub fn recover_a_iterative(
    f_ss: &Matrix,
    b: &Matrix,
    r: &SpdMatrix,
    q: &SpdMatrix,
    a0: Option<&Matrix>,
    tol: f64,
    max_iter: usize,
) -> Result<RecoveryResult> {
    let (result, converged) = run_iterative(f_ss, b, r, q, a0, tol, max_iter)?;
    if !converged {
        return Err(Error::NoConvergence {
            what: "iterative A recovery",
            iterations: result.iterations,
            residual: result.trace.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(result)
}

/// [`recover_a_iterative`] that returns an estimate even without
/// convergence: the iterate with the smallest step `||A_{j+1} - A_j||_2`,
/// reported as residual `fixed_point`. For inputs with no exact solution
/// (perturbed `Q` or `F_ss`) this is the closest fixed point the iteration
/// reaches.
pub fn estimate_a_iterative(
    f_ss: &Matrix,
    b: &Matrix,
    r: &SpdMatrix,
    q: &SpdMatrix,
    a0: Option<&Matrix>,
    tol: f64,
    max_iter: usize,
) -> Result<RecoveryResult> {
    let (mut result, converged) = run_iterative(f_ss, b, r, q, a0, tol, max_iter)?;
    if !converged {
        result.notes.push("no exact solution reached; best iterate returned".into());
    }
    Ok(result)
}

fn run_iterative(
    f_ss: &Matrix,
    b: &Matrix,
    r: &SpdMatrix,
    q: &SpdMatrix,
    a0: Option<&Matrix>,
    tol: f64,
    max_iter: usize,
) -> Result<(RecoveryResult, bool)> {
    let n = f_ss.nrows();
    check_square(f_ss, n, "F_ss")?;
    check_square(q, n, "Q")?;
    if b.nrows() != n {
        return Err(Error::Dimension(format!("B must have {n} rows")));
    }
    let rho = matops::spectral_radius(f_ss);
    if rho >= 1.0 {
        return Err(Error::UnstableDynamics { spectral_radius: rho });
    }
    invert_dynamics(f_ss)?;
    let s = control_weight(b, r)?;
    let mut a = a0.cloned().unwrap_or_else(|| f_ss.clone());
    check_square(&a, n, "A0")?;
    let gap = eigen_gap(&a, f_ss);
    if gap <= EIGEN_GAP_TOL {
        return Err(Error::BadInitialization { gap });
    }

    let eye = Matrix::identity(n, n);
    let mut result = RecoveryResult::default();
    let mut previous_p: Option<Matrix> = None;
    let mut violation: f64 = 0.0;
    let mut converged = false;
    let mut best: Option<(f64, Matrix)> = None;
    for j in 1..=max_iter {
        let p = match matops::solve_discrete_sylvester(&a, f_ss, q) {
            Ok(p) => p,
            Err(e) if best.is_none() => return Err(e),
            Err(_) => break,
        };
        // Monotone decrease is claimed from P_1 on.
        if j >= 3 {
            if let Some(prev) = &previous_p {
                violation = violation.max(-matops::min_symmetric_eigenvalue(&(prev - &p)));
            }
        }
        let next = (&eye + &s * &p) * f_ss;
        let step = matops::norm2(&(&next - &a));
        a = next;
        previous_p = Some(p);
        result.trace.push(step);
        result.iterates.push(a.clone());
        result.iterations = j;
        if !step.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| step < *b) {
            best = Some((step, a.clone()));
        }
        if step <= tol {
            converged = true;
            break;
        }
    }
    let Some((fixed_point, a)) = best else {
        return Err(Error::NoConvergence {
            what: "iterative A recovery",
            iterations: result.iterations,
            residual: f64::NAN,
        });
    };
    let (sylvester, gain) = identity_residuals(&a, &s, q, f_ss).unwrap_or((f64::NAN, f64::NAN));
    let result = result
        .with_estimate("A", a)
        .with_residual("fixed_point", fixed_point)
        .with_residual("sylvester", sylvester)
        .with_residual("gain", gain)
        .with_residual("p_monotone_violation", violation.max(0.0));
    Ok((result, converged))
}

/// `Q - (A - F) F^-1 + A^T (A - F)`: zero iff `A` is consistent with
/// `(F_ss, Q)` under `B = R = I`.
pub fn infinite_horizon_residual(a: &Matrix, f_ss: &Matrix, f_inv: &Matrix, q: &Matrix) -> Matrix {
    let gap = a - f_ss;
    q - &gap * f_inv + a.transpose() * gap
}

/// Recovers `A` (with `B = R = I`) by Newton's method on the second-order
/// matrix equation `Q = (A - F) F^-1 - A^T (A - F)`, started at `F_ss`.
pub fn recover_a_rootfind(f_ss: &Matrix, q: &SpdMatrix) -> Result<RecoveryResult> {
    let result = estimate_a_rootfind(f_ss, q)?;
    let residual = result.residual("equation").unwrap_or(f64::NAN);
    if !(residual <= ROOT_RESIDUAL_TOL) {
        return Err(Error::NoConvergence {
            what: "Newton A recovery",
            iterations: result.iterations,
            residual,
        });
    }
    Ok(result)
}

/// [`recover_a_rootfind`] that returns Newton's best iterate (smallest
/// residual `equation`) even when no exact root is reached.
pub fn estimate_a_rootfind(f_ss: &Matrix, q: &SpdMatrix) -> Result<RecoveryResult> {
    let n = f_ss.nrows();
    check_square(f_ss, n, "F_ss")?;
    check_square(q, n, "Q")?;
    let f_inv = invert_dynamics(f_ss)?;
    let q = q.as_matrix();
    let tol = 1e-13 * (1.0 + q.norm());
    let sol = matops::newton_solve(|a| infinite_horizon_residual(a, f_ss, &f_inv, q), f_ss, tol, 100)?;
    let eye = Matrix::identity(n, n);
    let (sylvester, gain) = identity_residuals(&sol.x, &eye, q, f_ss).unwrap_or((f64::NAN, f64::NAN));
    let mut result = RecoveryResult {
        iterations: sol.iterations,
        trace: sol.trace,
        ..Default::default()
    };
    if sol.residual > ROOT_RESIDUAL_TOL {
        result.notes.push("no exact root reached; best iterate returned".into());
    }
    Ok(result
        .with_estimate("A", sol.x)
        .with_residual("equation", sol.residual)
        .with_residual("sylvester", sylvester)
        .with_residual("gain", gain))
}

/// Recovers `Q = P - A^T P F_ss` with `P = (B R^-1 B^T)^-1 (A - F_ss) F_ss^-1`.
///
/// When `B R^-1 B^T` is singular (fewer controls than states) the
/// pseudo-inverse is used and the result comes back as
/// [`Error::RankDeficient`] carrying the estimate and a basis of the
/// unidentifiable directions.
pub fn recover_q(f_ss: &Matrix, a: &Matrix, b: &Matrix, r: &SpdMatrix) -> Result<RecoveryResult> {
    let n = f_ss.nrows();
    check_square(f_ss, n, "F_ss")?;
    check_square(a, n, "A")?;
    let f_inv = invert_dynamics(f_ss)?;
    let s = control_weight(b, r)?;
    let svd = s.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let cutoff = RANK_TOL * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&x| x > cutoff).count();
    let rhs = (a - f_ss) * &f_inv;
    let s_pinv = svd
        .clone()
        .pseudo_inverse(cutoff)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = &s_pinv * &rhs;
    let q_hat = matops::symmetrize(&(&p - a.transpose() * &p * f_ss));

    if rank < n {
        let v_t = svd.v_t.expect("requested V^T");
        let null: Vec<_> = (0..n)
            .filter(|&i| svd.singular_values[i] <= cutoff)
            .map(|i| v_t.row(i).transpose())
            .collect();
        let null_space = Matrix::from_columns(&null);
        return Err(Error::RankDeficient {
            rank,
            estimate: Box::new(q_hat),
            null_space: Box::new(null_space),
        });
    }
    let gain = matops::norm2(&(&s * &p * f_ss - (a - f_ss)));
    let min_eig = matops::min_symmetric_eigenvalue(&q_hat);
    Ok(RecoveryResult::default()
        .with_estimate("Q", q_hat)
        .with_estimate("P", matops::symmetrize(&p))
        .with_residual("gain", gain)
        .with_residual("q_min_eigenvalue", min_eig))
}

/// Recovers `S = B R^-1 B^T = (A - F_ss) F_ss^-1 P^-1` where `P` solves
/// `P - A^T P F_ss = Q`. `B` and `R` individually are not identifiable:
/// any `B' = B R^-1/2 U R^1/2` with orthogonal `U` gives the same `S`.
pub fn recover_brbt(f_ss: &Matrix, a: &Matrix, q: &SpdMatrix) -> Result<RecoveryResult> {
    let n = f_ss.nrows();
    check_square(f_ss, n, "F_ss")?;
    check_square(a, n, "A")?;
    check_square(q, n, "Q")?;
    let f_inv = invert_dynamics(f_ss)?;
    let p = matops::solve_discrete_sylvester(a, f_ss, q)?;
    let cond = matops::condition_number(&p);
    if !cond.is_finite() || cond > matops::SINGULAR_CONDITION {
        return Err(Error::SingularP { condition: cond });
    }
    let p_inv = p.clone().try_inverse().ok_or(Error::SingularP { condition: cond })?;
    let s = matops::symmetrize(&((a - f_ss) * &f_inv * p_inv));
    let gain = matops::norm2(&(&s * &p * f_ss - (a - f_ss)));
    let mut result = RecoveryResult::default()
        .with_estimate("BRinvBt", s)
        .with_estimate("P", p)
        .with_residual("gain", gain);
    result
        .notes
        .push("B and R are identifiable only through B R^-1 B^T".into());
    Ok(result)
}

/// Replays the backward recursion with `B = R = I`, `P_T = Q` and returns
/// `(max_t ||F_t' - F_t||_2, value-matrix residual, gain residual)`.
fn replay_finite(a: &Matrix, q: &Matrix, fs: &[Matrix]) -> Result<(f64, f64, f64)> {
    let n = a.nrows();
    let eye = Matrix::identity(n, n);
    let mut p_next = q.clone();
    let (mut replay, mut value_res, mut gain_res) = (0.0f64, 0.0f64, 0.0f64);
    for t in (0..fs.len()).rev() {
        let (p_t, k_t) = matops::riccati_step(a, &eye, q, &eye, &p_next)?;
        let f_t = a - k_t;
        replay = replay.max(matops::norm2(&(&f_t - &fs[t])));
        value_res = value_res.max(matops::norm2(&(&p_t - a.transpose() * &p_next * &f_t - q)));
        gain_res = gain_res.max(matops::norm2(&(&p_next * &f_t - (a - &f_t))));
        p_next = p_t;
    }
    Ok((replay, value_res, gain_res))
}

/// `(A - F_{T-1}) F_{T-1}^-1 - (A - F_{T-2}) F_{T-2}^-1 + A^T (A - F_{T-1})`.
pub fn finite_horizon_residual(a: &Matrix, last: &Matrix, last_inv: &Matrix, prev: &Matrix, prev_inv: &Matrix) -> Matrix {
    (a - last) * last_inv - (a - prev) * prev_inv + a.transpose() * (a - last)
}

/// Joint recovery of `A` and `Q` from a finite-horizon closed-loop sequence
/// `F_0..F_{T-1}` under `B = R = I` and `Q_T = Q`.
///
/// The terminal step gives `A = (Q + I) F_{T-1}`; the step before it gives
///
/// ```text
/// (A - F_{T-1}) F_{T-1}^-1 = (A - F_{T-2}) F_{T-2}^-1 - A^T (A - F_{T-1})
/// ```
///
/// which is solved for `A` by Newton from `F_{T-1}`. The recovered pair must
/// regenerate every given `F_t` to 1e-6; if it does not, Newton is restarted
/// from `(1 + c) F_{T-1}` for increasing `c`.
pub fn recover_finite_horizon_aq(fs: &[Matrix]) -> Result<RecoveryResult> {
    run_finite_horizon(fs, true)
}

/// [`recover_finite_horizon_aq`] for estimated sequences: when no start
/// replays the sequence to 1e-6, the root with the smallest `replay`
/// residual is returned with a note.
pub fn estimate_finite_horizon_aq(fs: &[Matrix]) -> Result<RecoveryResult> {
    run_finite_horizon(fs, false)
}

fn run_finite_horizon(fs: &[Matrix], strict: bool) -> Result<RecoveryResult> {
    let steps = fs.len();
    if steps < 3 {
        return Err(Error::InvalidArgument(format!(
            "finite-horizon recovery needs T >= 3, got {steps}"
        )));
    }
    let n = fs[0].nrows();
    for f in fs {
        check_square(f, n, "F_t")?;
        invert_dynamics(f)?;
    }
    let last = &fs[steps - 1];
    let prev = &fs[steps - 2];
    let last_inv = invert_dynamics(last)?;
    let prev_inv = invert_dynamics(prev)?;
    let inverse_gap = &last_inv - &prev_inv;
    // A = 0 solves the two-step relation trivially. The plant is invertible
    // whenever the F_t are, so solve A^-T G(A) = 0 instead, which has the
    // same invertible roots.
    let deflated = |a: &Matrix| -> Matrix {
        match a.transpose().try_inverse() {
            Some(a_inv_t) => a_inv_t * a * &inverse_gap + a - last,
            None => Matrix::from_element(n, n, f64::INFINITY),
        }
    };
    let scale = 1.0 + last_inv.norm();
    let eye = Matrix::identity(n, n);

    // A = (Q + I) F_{T-1} with Q >= 0; start at F_{T-1} and fall back to
    // larger isotropic costs when Newton stalls or the root fails replay.
    let mut first_error = None;
    let mut best: Option<RecoveryResult> = None;
    for boost in FINITE_HORIZON_STARTS {
        let start = last * (1.0 + boost);
        let attempt = (|| -> Result<RecoveryResult> {
            let sol = matops::newton_solve(&deflated, &start, 1e-13 * scale, 100)?;
            let a = sol.x;
            let equation = finite_horizon_residual(&a, last, &last_inv, prev, &prev_inv).norm();
            let q = matops::symmetrize(&(&a * &last_inv - &eye));
            let (replay, value_res, gain_res) = replay_finite(&a, &q, fs)?;
            Ok(RecoveryResult {
                iterations: sol.iterations,
                trace: sol.trace,
                ..Default::default()
            }
            .with_estimate("A", a)
            .with_estimate("Q", q)
            .with_residual("newton", sol.residual)
            .with_residual("equation", equation)
            .with_residual("replay", replay)
            .with_residual("value_recursion", value_res)
            .with_residual("gain_recursion", gain_res)
            .with_residual("start_boost", boost))
        })();
        match attempt {
            Ok(res) => {
                let replay = res.residual("replay").unwrap_or(f64::NAN);
                let root = res.residual("newton").unwrap_or(f64::NAN).max(res.residual("equation").unwrap_or(f64::NAN));
                if !(root <= ROOT_RESIDUAL_TOL * scale) {
                    log::debug!("finite-horizon start {boost}: Newton residual {root:.3e}");
                    first_error.get_or_insert(Error::NoConvergence {
                        what: "finite-horizon Newton A recovery",
                        iterations: res.iterations,
                        residual: root,
                    });
                } else if replay <= REPLAY_TOL {
                    return Ok(res);
                } else {
                    log::debug!("finite-horizon start {boost}: replay residual {replay:.3e}");
                    first_error.get_or_insert(Error::InconsistentSequence { residual: replay });
                }
                let better = |b: &RecoveryResult| {
                    let incumbent = b.residual("replay").unwrap_or(f64::NAN);
                    replay < incumbent || (incumbent.is_nan() && !replay.is_nan())
                };
                if best.as_ref().is_none_or(better) {
                    best = Some(res);
                }
            }
            Err(e) => {
                log::debug!("finite-horizon start {boost}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some(mut res) if !strict => {
            res.notes.push("no start replays the sequence exactly; smallest replay residual returned".into());
            Ok(res)
        }
        _ => Err(first_error.expect("at least one start")),
    }
}

/// With control observations, `A = F_ss + B K_ss` follows from a model (b)
/// fit and a known `B`. When `R` is supplied, `Q` is then read off as in
/// [`recover_q`]. The `{Q, R}` pair rendering a gain optimal is not unique in
/// general; the result only holds for the supplied `R`.
pub fn recover_from_control_obs(fit: &LgssmParams, b_known: &Matrix, r: Option<&SpdMatrix>) -> Result<RecoveryResult> {
    let f_ss = fit
        .f
        .as_static()
        .ok_or_else(|| Error::InvalidArgument("control-observation recovery needs static dynamics".into()))?;
    let k_ss = fit
        .k_ss()
        .ok_or_else(|| Error::InvalidArgument("fit has no control observation rows".into()))?;
    let n = f_ss.nrows();
    matops::ensure_shape(b_known, n, k_ss.nrows(), "B")?;
    let a_hat = f_ss + b_known * &k_ss;

    let mut result = RecoveryResult::default()
        .with_estimate("A", a_hat.clone())
        .with_estimate("K_ss", k_ss);
    result
        .notes
        .push("{Q, R} is not unique in general; Q is reported for the supplied R".into());
    if let Some(r) = r {
        match recover_q(f_ss, &a_hat, b_known, r) {
            Ok(q) => {
                for (k, v) in q.estimates {
                    result.estimates.insert(k, v);
                }
                for (k, v) in q.residuals {
                    result.residuals.insert(k, v);
                }
            }
            Err(Error::RankDeficient {
                rank,
                estimate,
                null_space,
            }) => {
                result.estimates.insert("Q".into(), *estimate);
                result.estimates.insert("Q_null_space".into(), *null_space);
                result.notes.push(format!(
                    "B R^-1 B^T has rank {rank} < {n}: Q is a pseudo-inverse estimate, unique only off the null space"
                ));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(result)
}

/// Which known input receives the `eps * I` perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationTarget {
    Q,
    F,
}

/// A `B = R = I` instance with exact closed loop.
#[derive(Debug, Clone)]
pub struct Instance {
    pub a: Matrix,
    pub q: SpdMatrix,
    pub f_ss: Matrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    /// `||A_hat - A||_2` per instance; NaN where a method failed.
    pub iterative_errors: Vec<f64>,
    pub rootfind_errors: Vec<f64>,
}

/// Recovery error of both A-recovery methods when `Q` or `F_ss` is
/// perturbed by `eps * I`, for each `eps` and instance. Uses the
/// best-effort estimators, since a perturbed input may admit no exact `A`.
pub fn perturbation_sweep(instances: &[Instance], eps_grid: &[f64], target: PerturbationTarget, exec: Exec) -> Vec<SweepPoint> {
    let points: Vec<(usize, usize)> = (0..eps_grid.len())
        .flat_map(|e| (0..instances.len()).map(move |i| (e, i)))
        .collect();
    let errors = exec.map_slice(&points, |&(e, i)| {
        let inst = &instances[i];
        let eps = eps_grid[e];
        let n = inst.a.nrows();
        let eye = Matrix::identity(n, n);
        let (f, q) = match target {
            PerturbationTarget::Q => (inst.f_ss.clone(), &inst.q.as_matrix().clone() + &eye * eps),
            PerturbationTarget::F => (&inst.f_ss + &eye * eps, inst.q.as_matrix().clone()),
        };
        let q = SpdMatrix::projected(&q, 0.0);
        let identity = SpdMatrix::identity(n);
        let err = |res: Result<RecoveryResult>| {
            res.ok()
                .and_then(|r| r.estimate("A").map(|a| matops::norm2(&(a - &inst.a))))
                .filter(|e| e.is_finite())
                .unwrap_or(f64::NAN)
        };
        let iterative = err(estimate_a_iterative(&f, &eye, &identity, &q, None, 1e-12, 10_000));
        let rootfind = err(estimate_a_rootfind(&f, &q));
        (iterative, rootfind)
    });
    eps_grid
        .iter()
        .enumerate()
        .map(|(e, &eps)| {
            let slice = &errors[e * instances.len()..(e + 1) * instances.len()];
            SweepPoint {
                eps,
                iterative_errors: slice.iter().map(|x| x.0).collect(),
                rootfind_errors: slice.iter().map(|x| x.1).collect(),
            }
        })
        .collect()
}

/// Median of the finite entries (NaN if none).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}
