use serde::{Deserialize, Serialize};

use super::mstep::{m_step_model_a, m_step_model_b, ControlStepReport};
use super::stats::e_step_with;
use super::{Dynamics, LgssmParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matops::{self, Matrix, SpdMatrix};
use crate::sim::{ObservationModel, TrajectoryDataset};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the relative log-likelihood increase falls below this.
    pub tol: f64,
    /// Update `C` (or `C_x`); when false it stays at its initial value.
    pub learn_observation: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-9,
            learn_observation: true,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: LgssmParams,
    /// Log-likelihood of the initial parameters followed by one entry per
    /// M-step; the last entry belongs to `params`.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_step: Option<ControlStepReport>,
}

/// Deterministic starting point: `F = 0.5 I`, `W0 = W = V = I`, and `C`
/// (or `C_x`) from the top principal directions of the pooled observations.
/// Model (b) starts from `K_ss = 0`.
pub fn default_init(data: &TrajectoryDataset, n: usize, b_known: Option<&Matrix>) -> Result<LgssmParams> {
    let d = data.meta.dims.d;
    let model = data.meta.model;
    let m = match model {
        ObservationModel::State => 0,
        ObservationModel::StateAndControl => data.meta.dims.m,
    };
    let dx = d - m;
    let mut scatter = Matrix::zeros(dx, dx);
    for tr in &data.trajectories {
        let yx = tr.y.columns(0, dx);
        scatter += yx.transpose() * yx;
    }
    let eig = scatter.symmetric_eigen();
    let mut order: Vec<usize> = (0..dx).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut c_x = Matrix::zeros(dx, n);
    for (col, &idx) in order.iter().take(n).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v = -v;
        }
        c_x.set_column(col, &v);
    }
    let f = Matrix::identity(n, n) * 0.5;
    match model {
        ObservationModel::State => LgssmParams::state_model(
            f,
            c_x,
            SpdMatrix::identity(n),
            SpdMatrix::identity(n),
            SpdMatrix::identity(d),
        ),
        ObservationModel::StateAndControl => {
            let b = b_known.ok_or_else(|| Error::InvalidArgument("model (b) needs a known B".into()))?;
            LgssmParams::control_model(
                f,
                c_x,
                Matrix::zeros(m, n),
                SpdMatrix::identity(n),
                SpdMatrix::identity(n),
                SpdMatrix::identity(dx),
                SpdMatrix::identity(m),
                b.clone(),
            )
        }
    }
}

/// Moment-based starting point for observation model (a) with `C` known
/// (full column rank).
///
/// With `z_t = C^+ y_t` and pooled lag autocovariances `G_k`, the stationary
/// relations `G_2 = F G_1`, `G_1 = F S`, `G_0 = S + V_z` give `F`, the state
/// covariance `S`, `W = S - F S F^T` and `V`. Covariances are floored at
/// `1e-3` times the scale of `G_0`. Needs at least two transitions.
pub fn moment_init(data: &TrajectoryDataset, c: &Matrix) -> Result<LgssmParams> {
    if data.meta.model != ObservationModel::State {
        return Err(Error::InvalidArgument("moment initialization needs observation model (a)".into()));
    }
    let steps = data.steps();
    if steps < 2 {
        return Err(Error::InvalidArgument("moment initialization needs T >= 2".into()));
    }
    let (d, n) = c.shape();
    if d != data.meta.dims.d {
        return Err(Error::Dimension(format!("C has {d} rows, data has d={}", data.meta.dims.d)));
    }
    let c_pinv = c
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut lag = [Matrix::zeros(n, n), Matrix::zeros(n, n), Matrix::zeros(n, n)];
    let mut start = Matrix::zeros(n, n);
    for tr in &data.trajectories {
        let z = &c_pinv * tr.y.transpose();
        start += z.column(0) * z.column(0).transpose();
        for (k, acc) in lag.iter_mut().enumerate() {
            for t in 0..=steps - k {
                *acc += z.column(t + k) * z.column(t).transpose();
            }
        }
    }
    let count = data.trajectories.len() as f64;
    for (k, acc) in lag.iter_mut().enumerate() {
        *acc /= count * (steps + 1 - k) as f64;
    }
    let [g0, g1, g2] = lag;
    let floor = 1e-3 * g0.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let f = &g2 * matops::checked_inverse(&g1, "lag-one autocovariance")?;
    let s = matops::symmetrize(&(matops::checked_inverse(&f, "moment estimate of F")? * &g1));
    let s = matops::project_psd(&s, floor);
    let w = SpdMatrix::projected(&(&s - &f * &s * f.transpose()), floor);
    let v_z = matops::project_psd(&(&g0 - &s), floor);
    let v = SpdMatrix::projected(&(c * &v_z * c.transpose()), floor);
    let w0 = SpdMatrix::projected(&(start / count - v_z), floor);
    LgssmParams::state_model(f, c.clone(), w0, w, v)
}

/// EM from `init` until the relative log-likelihood gain drops below
/// `options.tol` or `options.max_iter` M-steps have run.
pub fn fit_em(data: &TrajectoryDataset, init: &LgssmParams, options: &EmOptions) -> Result<FitResult> {
    fit_em_with(data, init, options, |_, _| {})
}

/// [`fit_em`] with an observer called as `(iteration, params)` for the
/// initial parameters and after every M-step.
pub fn fit_em_with<O>(data: &TrajectoryDataset, init: &LgssmParams, options: &EmOptions, mut observer: O) -> Result<FitResult>
where
    O: FnMut(usize, &LgssmParams),
{
    data.validate()?;
    init.validate()?;
    if init.model() != data.meta.model {
        return Err(Error::InvalidArgument(format!(
            "initial parameters are for model {:?}, dataset is {:?}",
            init.model(),
            data.meta.model
        )));
    }
    if let Dynamics::TimeVarying(fs) = &init.f {
        if fs.len() != data.steps() {
            return Err(Error::Dimension("time-varying init length differs from T".into()));
        }
    }

    let mut params = init.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut control_step = None;
    let mut converged = false;
    observer(0, &params);

    loop {
        let stats = e_step_with(&params, data, options.exec)?;
        let ll = stats.log_likelihood;
        if let Some(&prev) = trace.last() {
            if ll < prev - 1e-9 * prev.abs().max(1.0) {
                return Err(Error::MonotonicityViolation {
                    iteration: trace.len(),
                    previous: prev,
                    current: ll,
                });
            }
            trace.push(ll);
            if (ll - prev) / prev.abs().max(f64::MIN_POSITIVE) < options.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if trace.len() > options.max_iter {
            break;
        }
        params = match params.model() {
            ObservationModel::State => m_step_model_a(&stats, &params, options.learn_observation)?,
            ObservationModel::StateAndControl => {
                let b = params
                    .b_known
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("model (b) needs a known B".into()))?;
                let (p, report) = m_step_model_b(&stats, &params, &b, options.learn_observation)?;
                control_step = Some(report);
                p
            }
        };
        observer(trace.len(), &params);
        log::debug!("EM iteration {}: loglik {ll:.6}", trace.len());
    }

    Ok(FitResult {
        params,
        iterations: trace.len() - 1,
        loglik_trace: trace,
        converged,
        control_step,
    })
}
