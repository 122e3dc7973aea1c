use std::f64::consts::PI;

use nalgebra::DVector;

use super::LgssmParams;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matops::{self, Matrix};
use crate::sim::TrajectoryDataset;

const INNOVATION_FLOOR: f64 = 1e-12;

/// Posterior moments of `x_t | y_{0:T}` for one trajectory.
#[derive(Debug, Clone)]
pub struct SmoothedMoments {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<Matrix>,
    /// `cross[t-1] = Cov(x_{t-1}, x_t | y)` for t = 1..T.
    pub cross: Vec<Matrix>,
    pub log_likelihood: f64,
}

/// Covariances, gains and innovation terms of the filter/smoother.
///
/// None of these depend on the observed values, so one plan serves every
/// trajectory of a dataset; only the mean recursions run per trajectory.
#[derive(Debug, Clone)]
pub struct SmootherPlan {
    c: Matrix,
    f: Vec<Matrix>,
    /// Kalman gain at t = 0..T.
    gain: Vec<Matrix>,
    innovation_inv: Vec<Matrix>,
    /// `d log(2 pi) + log det S_t`.
    innovation_norm: Vec<f64>,
    /// RTS gain at t = 0..T-1.
    smoother_gain: Vec<Matrix>,
    smoothed_cov: Vec<Matrix>,
    cross_cov: Vec<Matrix>,
}

impl SmootherPlan {
    /// Covariance-form forward pass with Joseph-stabilized updates and an RTS
    /// backward pass over `steps` transitions.
    pub fn new(params: &LgssmParams, steps: usize) -> Result<Self> {
        params.validate()?;
        if let super::Dynamics::TimeVarying(fs) = &params.f {
            if fs.len() != steps {
                return Err(Error::Dimension(format!(
                    "{} time-varying dynamics for {steps} transitions",
                    fs.len()
                )));
            }
        }
        let n = params.n();
        let d = params.d();
        let c = params.c.clone();
        let ct = c.transpose();
        let v = params.v.as_matrix();
        let w = params.w.as_matrix();
        let eye = Matrix::identity(n, n);

        let f: Vec<Matrix> = (0..steps).map(|t| params.f.at(t).clone()).collect();
        let mut pred = Vec::with_capacity(steps + 1);
        let mut filt = Vec::with_capacity(steps + 1);
        let mut gain = Vec::with_capacity(steps + 1);
        let mut innovation_inv = Vec::with_capacity(steps + 1);
        let mut innovation_norm = Vec::with_capacity(steps + 1);

        let mut p = params.w0.as_matrix().clone();
        for t in 0..=steps {
            let s = matops::symmetrize(&(&c * &p * &ct + v));
            let min_eig = matops::min_symmetric_eigenvalue(&s);
            if !(min_eig >= INNOVATION_FLOOR) {
                return Err(Error::NumericalBreakdown { t, min_eigenvalue: min_eig });
            }
            let chol = s.clone().cholesky().ok_or(Error::NumericalBreakdown { t, min_eigenvalue: min_eig })?;
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            let s_inv = chol.inverse();
            let g = &p * &ct * &s_inv;
            let i_gc = &eye - &g * &c;
            let pf = matops::symmetrize(&(&i_gc * &p * i_gc.transpose() + &g * v * g.transpose()));
            innovation_norm.push(d as f64 * (2.0 * PI).ln() + logdet);
            innovation_inv.push(s_inv);
            gain.push(g);
            let next = if t < steps {
                matops::symmetrize(&(&f[t] * &pf * f[t].transpose() + w))
            } else {
                p.clone()
            };
            pred.push(std::mem::replace(&mut p, next));
            filt.push(pf);
        }

        let mut smoothed_cov = vec![Matrix::zeros(n, n); steps + 1];
        let mut smoother_gain = vec![Matrix::zeros(n, n); steps];
        let mut cross_cov = vec![Matrix::zeros(n, n); steps];
        smoothed_cov[steps] = filt[steps].clone();
        for t in (0..steps).rev() {
            let pred_next = &pred[t + 1];
            // J = Sigma_t|t F^T P_{t+1|t}^-1, via the SPD solve of P J^T = F Sigma.
            let jt = matops::solve_spd(pred_next, &(&f[t] * &filt[t]))?;
            let j = jt.transpose();
            let sc = &filt[t] + &j * (&smoothed_cov[t + 1] - pred_next) * j.transpose();
            cross_cov[t] = &j * &smoothed_cov[t + 1];
            smoothed_cov[t] = matops::symmetrize(&sc);
            smoother_gain[t] = j;
        }

        Ok(Self {
            c,
            f,
            gain,
            innovation_inv,
            innovation_norm,
            smoother_gain,
            smoothed_cov,
            cross_cov,
        })
    }

    pub fn steps(&self) -> usize {
        self.f.len()
    }

    fn check_len(&self, y: &Matrix) -> Result<()> {
        if y.nrows() != self.steps() + 1 || y.ncols() != self.c.nrows() {
            return Err(Error::Dimension(format!(
                "observations are {}x{}, plan expects {}x{}",
                y.nrows(),
                y.ncols(),
                self.steps() + 1,
                self.c.nrows()
            )));
        }
        Ok(())
    }

    /// Filtered means, one-step predictions and the log-likelihood.
    fn forward(&self, y: &Matrix) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, f64) {
        let n = self.c.ncols();
        let steps = self.steps();
        let mut filt = Vec::with_capacity(steps + 1);
        let mut pred = Vec::with_capacity(steps + 1);
        let mut m = DVector::zeros(n);
        let mut ll = 0.0;
        for t in 0..=steps {
            let e = y.row(t).transpose() - &self.c * &m;
            let quad = (e.transpose() * &self.innovation_inv[t] * &e)[(0, 0)];
            ll -= 0.5 * (self.innovation_norm[t] + quad);
            let mf = &m + &self.gain[t] * &e;
            pred.push(m);
            m = if t < steps { &self.f[t] * &mf } else { mf.clone() };
            filt.push(mf);
        }
        (filt, pred, ll)
    }

    pub fn log_likelihood(&self, y: &Matrix) -> Result<f64> {
        self.check_len(y)?;
        Ok(self.forward(y).2)
    }

    pub fn smooth(&self, y: &Matrix) -> Result<SmoothedMoments> {
        self.check_len(y)?;
        let steps = self.steps();
        let (filt, pred, ll) = self.forward(y);
        let mut means = filt;
        for t in (0..steps).rev() {
            let correction = &self.smoother_gain[t] * (&means[t + 1] - &pred[t + 1]);
            means[t] += correction;
        }
        Ok(SmoothedMoments {
            means,
            covs: self.smoothed_cov.clone(),
            cross: self.cross_cov.clone(),
            log_likelihood: ll,
        })
    }

    pub(crate) fn smoothed_cov(&self) -> &[Matrix] {
        &self.smoothed_cov
    }

    pub(crate) fn cross_cov(&self) -> &[Matrix] {
        &self.cross_cov
    }

    /// Smoothed means only, plus the log-likelihood.
    pub(crate) fn smooth_means(&self, y: &Matrix) -> (Vec<DVector<f64>>, f64) {
        let (mut means, pred, ll) = self.forward(y);
        for t in (0..self.steps()).rev() {
            let correction = &self.smoother_gain[t] * (&means[t + 1] - &pred[t + 1]);
            means[t] += correction;
        }
        (means, ll)
    }
}

/// Posterior moments `p(x_t | y_{0:T})` for one observation sequence
/// (rows of `y` are time steps).
pub fn kalman_smoother(params: &LgssmParams, y: &Matrix) -> Result<SmoothedMoments> {
    if y.nrows() == 0 {
        return Err(Error::Dimension("empty observation sequence".into()));
    }
    SmootherPlan::new(params, y.nrows() - 1)?.smooth(y)
}

/// `sum_i log p(y^(i)_{0:T})` by the prediction-error decomposition.
pub fn marginal_log_likelihood(params: &LgssmParams, data: &TrajectoryDataset) -> Result<f64> {
    marginal_log_likelihood_with(params, data, Exec::default())
}

pub(crate) fn marginal_log_likelihood_with(params: &LgssmParams, data: &TrajectoryDataset, exec: Exec) -> Result<f64> {
    let plan = SmootherPlan::new(params, data.steps())?;
    let parts = exec.map_slice(&data.trajectories, |tr| plan.log_likelihood(&tr.y));
    // Summed in index order so the value is schedule independent.
    parts.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::SpdMatrix;
    use nalgebra::dmatrix;

    #[test]
    fn independent_steps_halve_observations() {
        let params = LgssmParams::state_model(
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            SpdMatrix::identity(2),
            SpdMatrix::identity(2),
            SpdMatrix::identity(2),
        )
        .unwrap();
        let y = dmatrix![1.0, -2.0; 0.5, 3.0; 4.0, 0.0];
        let sm = kalman_smoother(&params, &y).unwrap();
        for t in 0..3 {
            assert!((&sm.covs[t] - Matrix::identity(2, 2) * 0.5).abs().max() < 1e-14);
            assert!((&sm.means[t] - y.row(t).transpose() * 0.5).abs().max() < 1e-14);
        }
        for c in &sm.cross {
            assert!(c.abs().max() < 1e-14);
        }
    }

    #[test]
    fn precise_observations_pin_the_state() {
        let params = LgssmParams::state_model(
            dmatrix![0.9, 0.1; 0.0, 0.7],
            Matrix::identity(2, 2),
            SpdMatrix::identity(2),
            SpdMatrix::identity(2),
            SpdMatrix::scaled_identity(2, 1e-10),
        )
        .unwrap();
        let y = dmatrix![1.0, -2.0; 0.5, 3.0; 4.0, 0.0; -1.0, 1.0];
        let sm = kalman_smoother(&params, &y).unwrap();
        for t in 0..4 {
            assert!((&sm.means[t] - y.row(t).transpose()).abs().max() < 1e-4);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        let params = LgssmParams::state_model(
            dmatrix![0.5],
            dmatrix![1.0],
            SpdMatrix::identity(1),
            SpdMatrix::identity(1),
            SpdMatrix::identity(1),
        )
        .unwrap();
        let plan = SmootherPlan::new(&params, 3).unwrap();
        assert!(plan.smooth(&dmatrix![1.0; 2.0]).is_err());
    }
}
