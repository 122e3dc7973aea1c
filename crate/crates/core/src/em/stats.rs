use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::kalman::SmootherPlan;
use super::LgssmParams;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matops::{serde_matrix, Matrix};
use crate::sim::TrajectoryDataset;

/// Pooled posterior second moments over all trajectories.
///
/// `per_step[t] = sum_i (m_t m_t^T + Sigma_t)` and
/// `cross[t-1] = sum_i (m_{t-1} m_t^T + Sigma_{t-1,t})`; the range sums
/// `M_(t1,t2)` and `M_delta` are derived from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SufficientStats {
    pub trajectories: usize,
    pub steps: usize,
    #[serde(with = "serde_matrix::vec")]
    pub per_step: Vec<Matrix>,
    #[serde(with = "serde_matrix::vec")]
    pub cross: Vec<Matrix>,
    /// `sum_i sum_t y_t y_t^T` (d x d).
    #[serde(with = "serde_matrix")]
    pub y_outer: Matrix,
    /// `sum_i sum_t m_t y_t^T` (n x d).
    #[serde(with = "serde_matrix")]
    pub y_tilde: Matrix,
    /// Marginal log-likelihood under the parameters used for the E-step.
    pub log_likelihood: f64,
}

impl SufficientStats {
    /// `M_(t1,t2) = sum_{t=t1}^{t2} (m_t m_t^T + Sigma_t)`, pooled.
    pub fn m_range(&self, t1: usize, t2: usize) -> Matrix {
        let n = self.per_step[0].nrows();
        self.per_step[t1..=t2]
            .iter()
            .fold(Matrix::zeros(n, n), |acc, m| acc + m)
    }

    /// `M_delta = sum_{t=1}^{T} (m_{t-1} m_t^T + Sigma_{t-1,t})`, pooled.
    pub fn m_delta(&self) -> Matrix {
        let n = self.per_step[0].nrows();
        self.cross.iter().fold(Matrix::zeros(n, n), |acc, m| acc + m)
    }

    pub fn m_full(&self) -> Matrix {
        self.m_range(0, self.steps)
    }

    pub fn m_head(&self) -> Matrix {
        self.m_range(0, self.steps - 1)
    }

    pub fn m_tail(&self) -> Matrix {
        self.m_range(1, self.steps)
    }

    /// Partitions of `Y` / `Y~` for observation model (b), with `dx` state rows.
    pub fn y_xx(&self, dx: usize) -> Matrix {
        self.y_outer.view((0, 0), (dx, dx)).into_owned()
    }

    pub fn y_xu(&self, dx: usize) -> Matrix {
        let m = self.y_outer.nrows() - dx;
        self.y_outer.view((0, dx), (dx, m)).into_owned()
    }

    pub fn y_uu(&self, dx: usize) -> Matrix {
        let m = self.y_outer.nrows() - dx;
        self.y_outer.view((dx, dx), (m, m)).into_owned()
    }

    pub fn y_tilde_xx(&self, dx: usize) -> Matrix {
        self.y_tilde.columns(0, dx).into_owned()
    }

    pub fn y_tilde_xu(&self, dx: usize) -> Matrix {
        let m = self.y_tilde.ncols() - dx;
        self.y_tilde.columns(dx, m).into_owned()
    }
}

struct Partial {
    per_step: Vec<Matrix>,
    cross: Vec<Matrix>,
    y_outer: Matrix,
    y_tilde: Matrix,
    ll: f64,
}

/// Runs the smoother on every trajectory and pools the sufficient statistics.
pub fn e_step(params: &LgssmParams, data: &TrajectoryDataset) -> Result<SufficientStats> {
    e_step_with(params, data, Exec::default())
}

/// [`e_step`] on an explicit execution strategy.
pub fn e_step_with(params: &LgssmParams, data: &TrajectoryDataset, exec: Exec) -> Result<SufficientStats> {
    let steps = data.steps();
    if data.trajectories.is_empty() {
        return Err(Error::Dataset("no trajectories".into()));
    }
    if data.meta.dims.d != params.d() {
        return Err(Error::Dimension(format!(
            "dataset has d={}, parameters have d={}",
            data.meta.dims.d,
            params.d()
        )));
    }
    let plan = SmootherPlan::new(params, steps)?;
    let n = params.n();
    let d = params.d();

    let partials = exec.map_slice(&data.trajectories, |tr| {
        let (means, ll) = plan.smooth_means(&tr.y);
        let per_step: Vec<Matrix> = means.iter().map(|m| m * m.transpose()).collect();
        let cross: Vec<Matrix> = (1..=steps)
            .map(|t| &means[t - 1] * means[t].transpose())
            .collect();
        let mut y_outer = Matrix::zeros(d, d);
        let mut y_tilde = Matrix::zeros(n, d);
        for (t, m) in means.iter().enumerate() {
            let y = tr.y.row(t);
            y_outer += y.transpose() * y;
            y_tilde += m * y;
        }
        Partial {
            per_step,
            cross,
            y_outer,
            y_tilde,
            ll,
        }
    });

    // Order-fixed reduction: results do not depend on the schedule.
    let count = partials.len() as f64;
    let mut per_step: Vec<Matrix> = plan.smoothed_cov().iter().map(|s| s * count).collect();
    let mut cross: Vec<Matrix> = plan.cross_cov().iter().map(|s| s * count).collect();
    let mut y_outer = Matrix::zeros(d, d);
    let mut y_tilde = Matrix::zeros(n, d);
    let mut ll = 0.0;
    for p in partials {
        for (acc, m) in per_step.iter_mut().zip(&p.per_step) {
            *acc += m;
        }
        for (acc, m) in cross.iter_mut().zip(&p.cross) {
            *acc += m;
        }
        y_outer += p.y_outer;
        y_tilde += p.y_tilde;
        ll += p.ll;
    }

    Ok(SufficientStats {
        trajectories: data.trajectories.len(),
        steps,
        per_step,
        cross,
        y_outer,
        y_tilde,
        log_likelihood: ll,
    })
}

fn log_det_and_inverse(m: &Matrix) -> Option<(f64, Matrix)> {
    let chol = m.clone().cholesky()?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    Some((logdet, chol.inverse()))
}

/// Expected complete-data log-likelihood `E[ln p(x, y | theta)]` under the
/// posterior summarized by `stats`, evaluated at `params`.
pub fn expected_complete_loglik(stats: &SufficientStats, params: &LgssmParams) -> f64 {
    let big_n = stats.trajectories as f64;
    let steps = stats.steps;
    let n = params.n() as f64;
    let d = params.d() as f64;
    let c = &params.c;
    let Some((ld_w0, w0_inv)) = log_det_and_inverse(params.w0.as_matrix()) else {
        return f64::NEG_INFINITY;
    };
    let Some((ld_w, w_inv)) = log_det_and_inverse(params.w.as_matrix()) else {
        return f64::NEG_INFINITY;
    };
    let Some((ld_v, v_inv)) = log_det_and_inverse(params.v.as_matrix()) else {
        return f64::NEG_INFINITY;
    };

    let init = big_n * ld_w0 + (&w0_inv * &stats.per_step[0]).trace();
    let mut dyn_term = Matrix::zeros(params.n(), params.n());
    for t in 1..=steps {
        let f = params.f.at(t - 1);
        let delta = &stats.cross[t - 1];
        dyn_term += &stats.per_step[t] - f * delta - delta.transpose() * f.transpose()
            + f * &stats.per_step[t - 1] * f.transpose();
    }
    let dynamics = big_n * steps as f64 * ld_w + (&w_inv * dyn_term).trace();
    let m_full = stats.m_full();
    let obs_term = &stats.y_outer - c * &stats.y_tilde - stats.y_tilde.transpose() * c.transpose()
        + c * m_full * c.transpose();
    let observations = big_n * (steps + 1) as f64 * ld_v + (&v_inv * obs_term).trace();
    let consts = big_n * ((steps + 1) as f64 * (n + d)) * (2.0 * PI).ln();
    -0.5 * (init + dynamics + observations + consts)
}
