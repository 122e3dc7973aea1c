//! Closed-loop identification of a linear-Gaussian state-space model by EM.
//!
//! The E-step runs a Kalman filter / RTS smoother per trajectory and pools the
//! posterior second moments; the M-step applies closed-form updates for
//! observation model (a) or (b).

mod fit;
mod kalman;
mod mstep;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{self, serde_matrix, Matrix, SpdMatrix};
use crate::sim::ObservationModel;

pub use fit::{default_init, fit_em, fit_em_with, moment_init, EmOptions, FitResult};
pub use kalman::{kalman_smoother, marginal_log_likelihood, SmoothedMoments, SmootherPlan};
pub use mstep::{m_step_model_a, m_step_model_b, ControlStepReport};
pub use stats::{e_step, e_step_with, expected_complete_loglik, SufficientStats};

/// Closed-loop dynamics, either one static matrix or one per transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dynamics {
    Static(#[serde(with = "serde_matrix")] Matrix),
    TimeVarying(#[serde(with = "serde_matrix::vec")] Vec<Matrix>),
}

impl Dynamics {
    pub fn at(&self, t: usize) -> &Matrix {
        match self {
            Dynamics::Static(f) => f,
            Dynamics::TimeVarying(fs) => &fs[t],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Static(f) => f.nrows(),
            Dynamics::TimeVarying(fs) => fs.first().map_or(0, Matrix::nrows),
        }
    }

    pub fn as_static(&self) -> Option<&Matrix> {
        match self {
            Dynamics::Static(f) => Some(f),
            Dynamics::TimeVarying(_) => None,
        }
    }
}

/// Parameters `{F, C, W0, W, V}` of the latent closed-loop model.
///
/// For observation model (b) the last `control_dim` rows of `c` are `-K_ss`
/// and `v` is block diagonal `diag(V_x, V_u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgssmParams {
    pub f: Dynamics,
    #[serde(with = "serde_matrix")]
    pub c: Matrix,
    pub w0: SpdMatrix,
    pub w: SpdMatrix,
    pub v: SpdMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_dim: Option<usize>,
    #[serde(default, with = "serde_matrix::option", skip_serializing_if = "Option::is_none")]
    pub b_known: Option<Matrix>,
}

impl LgssmParams {
    /// Model (a) parameters with static dynamics.
    pub fn state_model(f: Matrix, c: Matrix, w0: SpdMatrix, w: SpdMatrix, v: SpdMatrix) -> Result<Self> {
        let p = Self {
            f: Dynamics::Static(f),
            c,
            w0,
            w,
            v,
            control_dim: None,
            b_known: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Model (b) parameters: observation rows `[C_x; -K_ss]`, noise `diag(V_x, V_u)`.
    #[allow(clippy::too_many_arguments)]
    pub fn control_model(
        f: Matrix,
        c_x: Matrix,
        k_ss: Matrix,
        w0: SpdMatrix,
        w: SpdMatrix,
        v_x: SpdMatrix,
        v_u: SpdMatrix,
        b_known: Matrix,
    ) -> Result<Self> {
        let (dx, m, n) = (c_x.nrows(), k_ss.nrows(), f.nrows());
        matops::ensure_shape(&k_ss, m, n, "K_ss")?;
        matops::ensure_shape(&c_x, dx, n, "C_x")?;
        matops::ensure_shape(&b_known, n, m, "B")?;
        let mut c = Matrix::zeros(dx + m, n);
        c.view_mut((0, 0), (dx, n)).copy_from(&c_x);
        c.view_mut((dx, 0), (m, n)).copy_from(&(-k_ss));
        let mut v = Matrix::zeros(dx + m, dx + m);
        v.view_mut((0, 0), (dx, dx)).copy_from(v_x.as_matrix());
        v.view_mut((dx, dx), (m, m)).copy_from(v_u.as_matrix());
        let p = Self {
            f: Dynamics::Static(f),
            c,
            w0,
            w,
            v: SpdMatrix::positive_definite(v)?,
            control_dim: Some(m),
            b_known: Some(b_known),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        match &self.f {
            Dynamics::Static(f) => matops::ensure_shape(f, n, n, "F")?,
            Dynamics::TimeVarying(fs) => {
                if fs.is_empty() {
                    return Err(Error::Dimension("empty time-varying dynamics".into()));
                }
                for f in fs {
                    matops::ensure_shape(f, n, n, "F_t")?;
                }
            }
        }
        let d = self.c.nrows();
        matops::ensure_shape(&self.c, d, n, "C")?;
        matops::ensure_shape(&self.w0, n, n, "W0")?;
        matops::ensure_shape(&self.w, n, n, "W")?;
        matops::ensure_shape(&self.v, d, d, "V")?;
        if let Some(m) = self.control_dim {
            if m > d {
                return Err(Error::Dimension("control rows exceed observation dim".into()));
            }
            if self.f.as_static().is_none() {
                return Err(Error::InvalidArgument("control observations need static dynamics".into()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.f.dim()
    }

    pub fn d(&self) -> usize {
        self.c.nrows()
    }

    pub fn model(&self) -> ObservationModel {
        if self.control_dim.is_some() {
            ObservationModel::StateAndControl
        } else {
            ObservationModel::State
        }
    }

    fn state_rows(&self) -> usize {
        self.d() - self.control_dim.unwrap_or(0)
    }

    /// State-observation rows (`C` for model (a), `C_x` for model (b)).
    pub fn c_x(&self) -> Matrix {
        self.c.rows(0, self.state_rows()).into_owned()
    }

    pub fn k_ss(&self) -> Option<Matrix> {
        self.control_dim
            .map(|m| -self.c.rows(self.state_rows(), m).into_owned())
    }

    pub fn v_x(&self) -> Matrix {
        let dx = self.state_rows();
        self.v.view((0, 0), (dx, dx)).into_owned()
    }

    pub fn v_u(&self) -> Option<Matrix> {
        let dx = self.state_rows();
        self.control_dim
            .map(|m| self.v.view((dx, dx), (m, m)).into_owned())
    }
}
