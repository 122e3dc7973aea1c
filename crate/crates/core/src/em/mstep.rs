use serde::{Deserialize, Serialize};

use super::stats::SufficientStats;
use super::{Dynamics, LgssmParams};
use crate::error::{Error, Result};
use crate::matops::{self, Matrix, SpdMatrix};

/// Eigenvalue floor applied to every covariance update.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

const CONTROL_MAX_ITER: usize = 10_000;
const CONTROL_STEP_TOL: f64 = 1e-10;
const CONTROL_RESIDUAL_TOL: f64 = 1e-8;

/// How the coupled `(V_u, K_ss)` update of model (b) was solved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlStepReport {
    pub iterations: usize,
    pub used_newton: bool,
    /// `||V_u - V_u(K)||_F` at the returned pair, before PSD projection.
    pub residual_v_u: f64,
    /// `||K - K(V_u)||_F` at the returned pair.
    pub residual_k: f64,
}

/// `F`, `W` and `W0` updates shared by both observation models.
fn update_latent(stats: &SufficientStats, current: &Dynamics) -> Result<(Dynamics, SpdMatrix, SpdMatrix)> {
    let big_n = stats.trajectories as f64;
    let steps = stats.steps;
    let w0 = SpdMatrix::projected(&(&stats.per_step[0] / big_n), COVARIANCE_FLOOR);

    let (f, w_raw) = match current {
        Dynamics::Static(_) => {
            let head = stats.m_head();
            let delta = stats.m_delta();
            let f = delta.transpose() * matops::checked_inverse(&head, "M_(0,T-1)")?;
            let w = stats.m_tail() - delta.transpose() * f.transpose() - &f * &delta
                + &f * head * f.transpose();
            (Dynamics::Static(f), w)
        }
        Dynamics::TimeVarying(_) => {
            let n = stats.per_step[0].nrows();
            let mut fs = Vec::with_capacity(steps);
            let mut w = Matrix::zeros(n, n);
            for t in 0..steps {
                let delta = &stats.cross[t];
                let f = delta.transpose() * matops::checked_inverse(&stats.per_step[t], "M_(t,t)")?;
                w += &stats.per_step[t + 1] - delta.transpose() * f.transpose() - &f * delta
                    + &f * &stats.per_step[t] * f.transpose();
                fs.push(f);
            }
            (Dynamics::TimeVarying(fs), w)
        }
    };
    let w = SpdMatrix::projected(&(w_raw / (big_n * steps as f64)), COVARIANCE_FLOOR);
    Ok((f, w, w0))
}

/// `(Y - C Y~ - Y~^T C^T + C M C^T) / (N (T+1))`.
fn observation_noise(y_outer: &Matrix, y_tilde: &Matrix, c: &Matrix, m_full: &Matrix, scale: f64) -> Matrix {
    (y_outer - c * y_tilde - y_tilde.transpose() * c.transpose() + c * m_full * c.transpose()) / scale
}

/// Closed-form M-step for observation model (a). With
/// `learn_observation = false` the current `C` is held fixed.
pub fn m_step_model_a(stats: &SufficientStats, current: &LgssmParams, learn_observation: bool) -> Result<LgssmParams> {
    let (f, w, w0) = update_latent(stats, &current.f)?;
    let m_full = stats.m_full();
    let c = if learn_observation {
        stats.y_tilde.transpose() * matops::checked_inverse(&m_full, "M_(0,T)")?
    } else {
        current.c.clone()
    };
    let scale = stats.trajectories as f64 * (stats.steps + 1) as f64;
    let v = observation_noise(&stats.y_outer, &stats.y_tilde, &c, &m_full, scale);
    Ok(LgssmParams {
        f,
        c,
        w0,
        w,
        v: SpdMatrix::projected(&v, COVARIANCE_FLOOR),
        control_dim: None,
        b_known: current.b_known.clone(),
    })
}

/// M-step for observation model (b).
///
/// `F`, `W0`, `W`, `C_x`, `V_x` follow the model (a) updates on the state
/// partitions. `(V_u, K_ss)` solve the coupled stationarity conditions
///
/// ```text
/// V_u = (K Y~xu + Y~xu^T K^T + K M_(0,T) K^T + Y_uu) / (N (T+1))
/// K   = V_u B^T W^-1 (F - M_delta^T M_(0,T-1)^-1) - Y~xu^T M_(0,T)^-1
/// ```
///
/// by fixed-point alternation starting from `K = -Y~xu^T M_(0,T-1)^-1`,
/// with a Newton solve on the stacked residual if alternation stalls.
pub fn m_step_model_b(
    stats: &SufficientStats,
    current: &LgssmParams,
    b_known: &Matrix,
    learn_observation: bool,
) -> Result<(LgssmParams, ControlStepReport)> {
    let m = current
        .control_dim
        .ok_or_else(|| Error::InvalidArgument("model (b) M-step needs control rows".into()))?;
    let n = current.n();
    matops::ensure_shape(b_known, n, m, "B")?;
    let d = current.d();
    let dx = d - m;

    let (f, w, w0) = update_latent(stats, &current.f)?;
    let f_ss = f.as_static().expect("model (b) uses static dynamics").clone();

    let m_full = stats.m_full();
    let m_full_inv = matops::checked_inverse(&m_full, "M_(0,T)")?;
    let m_head_inv = matops::checked_inverse(&stats.m_head(), "M_(0,T-1)")?;
    let scale = stats.trajectories as f64 * (stats.steps + 1) as f64;

    let y_tilde_xx = stats.y_tilde_xx(dx);
    let c_x = if learn_observation {
        y_tilde_xx.transpose() * &m_full_inv
    } else {
        current.c_x()
    };
    let v_x = observation_noise(&stats.y_xx(dx), &y_tilde_xx, &c_x, &m_full, scale);

    let y_tilde_xu = stats.y_tilde_xu(dx);
    let y_uu = stats.y_uu(dx);
    let w_inv = matops::checked_inverse(w.as_matrix(), "W")?;
    // Vanishes when F is the unconstrained regression estimate.
    let dynamics_gap = &f_ss - stats.m_delta().transpose() * &m_head_inv;
    let coupling = b_known.transpose() * &w_inv * &dynamics_gap;
    let readout = y_tilde_xu.transpose() * &m_full_inv;

    let v_u_of = |k: &Matrix| -> Matrix {
        matops::symmetrize(&((k * &y_tilde_xu + y_tilde_xu.transpose() * k.transpose() + k * &m_full * k.transpose() + &y_uu) / scale))
    };
    let k_of = |v_u: &Matrix| -> Matrix { v_u * &coupling - &readout };

    let mut k = -(y_tilde_xu.transpose() * &m_head_inv);
    let mut v_u = v_u_of(&k);
    let mut report = ControlStepReport::default();
    let mut settled = false;
    for it in 1..=CONTROL_MAX_ITER {
        let k_next = k_of(&v_u);
        let v_next = v_u_of(&k_next);
        let step = (&k_next - &k).norm() + (&v_next - &v_u).norm();
        let size = 1.0 + k_next.norm() + v_next.norm();
        k = k_next;
        v_u = v_next;
        report.iterations = it;
        if step < CONTROL_STEP_TOL * size {
            settled = true;
            break;
        }
    }
    let residuals = |k: &Matrix, v_u: &Matrix| ((v_u - v_u_of(k)).norm(), (k - k_of(v_u)).norm());
    let (mut r_v, mut r_k) = residuals(&k, &v_u);
    if !settled || r_v > CONTROL_RESIDUAL_TOL || r_k > CONTROL_RESIDUAL_TOL {
        // Unknown is the m x (n + m) block [K | V_u].
        let mut x0 = Matrix::zeros(m, n + m);
        x0.columns_mut(0, n).copy_from(&k);
        x0.columns_mut(n, m).copy_from(&v_u);
        let stacked = |x: &Matrix| -> Matrix {
            let kk = x.columns(0, n).into_owned();
            let vv = x.columns(n, m).into_owned();
            let mut r = Matrix::zeros(m, n + m);
            r.columns_mut(0, n).copy_from(&(&kk - k_of(&vv)));
            r.columns_mut(n, m).copy_from(&(&vv - v_u_of(&kk)));
            r
        };
        let sol = matops::newton_matrix_root(stacked, &x0, CONTROL_RESIDUAL_TOL, 200)?;
        k = sol.x.columns(0, n).into_owned();
        v_u = matops::symmetrize(&sol.x.columns(n, m).into_owned());
        report.used_newton = true;
        report.iterations += sol.iterations;
        (r_v, r_k) = residuals(&k, &v_u);
    }
    report.residual_v_u = r_v;
    report.residual_k = r_k;

    let params = LgssmParams::control_model(
        f_ss,
        c_x,
        k,
        w0,
        w,
        SpdMatrix::projected(&v_x, COVARIANCE_FLOOR),
        SpdMatrix::projected(&v_u, COVARIANCE_FLOOR),
        b_known.clone(),
    )?;
    Ok((params, report))
}
