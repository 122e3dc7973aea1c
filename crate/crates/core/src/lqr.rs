//! Forward stochastic LQR: gains, Riccati recursions and closed-loop dynamics
//! for finite and infinite horizons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{self, serde_matrix, Matrix, SpdMatrix};

/// The generative regulator `{A, B, Q, R, Q_T}`.
///
/// `Q_T` defaults to `Q` when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSystem")]
pub struct SystemParams {
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(with = "serde_matrix")]
    pub b: Matrix,
    pub q: SpdMatrix,
    pub r: SpdMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_t: Option<SpdMatrix>,
}

#[derive(Deserialize)]
struct RawSystem {
    #[serde(with = "serde_matrix")]
    a: Matrix,
    #[serde(with = "serde_matrix")]
    b: Matrix,
    q: SpdMatrix,
    #[serde(with = "serde_matrix")]
    r: Matrix,
    #[serde(default)]
    q_t: Option<SpdMatrix>,
}

impl TryFrom<RawSystem> for SystemParams {
    type Error = Error;
    fn try_from(raw: RawSystem) -> Result<Self> {
        let r = SpdMatrix::positive_definite(raw.r)?;
        let mut sys = SystemParams::new(raw.a, raw.b, raw.q, r)?;
        if let Some(qt) = raw.q_t {
            sys = sys.with_terminal_cost(qt)?;
        }
        Ok(sys)
    }
}

impl SystemParams {
    /// Validates conformability and stabilizability of `(A, B)`.
    pub fn new(a: Matrix, b: Matrix, q: SpdMatrix, r: SpdMatrix) -> Result<Self> {
        let n = a.nrows();
        matops::ensure_shape(&a, n, n, "A")?;
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B must have {n} rows, got {}", b.nrows())));
        }
        matops::ensure_shape(&q, n, n, "Q")?;
        matops::ensure_shape(&r, b.ncols(), b.ncols(), "R")?;
        matops::ensure_finite(&a, "A")?;
        matops::ensure_finite(&b, "B")?;
        if !matops::stabilizability_check(&a, &b) {
            return Err(Error::NotStabilizable);
        }
        Ok(Self { a, b, q, r, q_t: None })
    }

    pub fn with_terminal_cost(mut self, q_t: SpdMatrix) -> Result<Self> {
        matops::ensure_shape(&q_t, self.n(), self.n(), "Q_T")?;
        self.q_t = Some(q_t);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn terminal_cost(&self) -> &SpdMatrix {
        self.q_t.as_ref().unwrap_or(&self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "steps")]
pub enum Horizon {
    Infinite,
    Finite(usize),
}

/// Optimal closed loop for one horizon.
#[derive(Debug, Clone)]
pub enum ClosedLoop {
    Infinite {
        f_ss: Matrix,
        k_ss: Matrix,
        p_ss: SpdMatrix,
    },
    /// `f`, `k` have T entries (t = 0..T-1); `p` has T+1 with `p[T] = Q_T`.
    Finite {
        f: Vec<Matrix>,
        k: Vec<Matrix>,
        p: Vec<Matrix>,
    },
}

impl ClosedLoop {
    pub fn dynamics_at(&self, t: usize) -> &Matrix {
        match self {
            ClosedLoop::Infinite { f_ss, .. } => f_ss,
            ClosedLoop::Finite { f, .. } => &f[t.min(f.len() - 1)],
        }
    }

    pub fn gain_at(&self, t: usize) -> &Matrix {
        match self {
            ClosedLoop::Infinite { k_ss, .. } => k_ss,
            ClosedLoop::Finite { k, .. } => &k[t.min(k.len() - 1)],
        }
    }

    pub fn horizon(&self) -> Horizon {
        match self {
            ClosedLoop::Infinite { .. } => Horizon::Infinite,
            ClosedLoop::Finite { f, .. } => Horizon::Finite(f.len()),
        }
    }

    pub fn steady_state(&self) -> Option<(&Matrix, &Matrix, &SpdMatrix)> {
        match self {
            ClosedLoop::Infinite { f_ss, k_ss, p_ss } => Some((f_ss, k_ss, p_ss)),
            ClosedLoop::Finite { .. } => None,
        }
    }
}

/// Static gain from the DARE: `K_ss = (B^T P_ss B + R)^-1 B^T P_ss A`,
/// `F_ss = A - B K_ss`.
pub fn infinite_horizon_solution(sys: &SystemParams) -> Result<ClosedLoop> {
    let p_ss = matops::solve_dare(&sys.a, &sys.b, &sys.q, &sys.r)?;
    let btp = sys.b.transpose() * p_ss.as_matrix();
    let k_ss = matops::solve_spd(&(&btp * &sys.b + sys.r.as_matrix()), &(&btp * &sys.a))?;
    let f_ss = &sys.a - &sys.b * &k_ss;
    let rho = matops::spectral_radius(&f_ss);
    if rho >= 1.0 {
        // (A, Q^1/2) not detectable: the recursion settled on a non-stabilizing solution.
        return Err(Error::UnstableDynamics { spectral_radius: rho });
    }
    Ok(ClosedLoop::Infinite { f_ss, k_ss, p_ss })
}

/// Backward Riccati recursion from `P_T = Q_T` over `T` steps.
pub fn finite_horizon_solution(sys: &SystemParams, steps: usize) -> Result<ClosedLoop> {
    if steps == 0 {
        return Err(Error::InvalidArgument("finite horizon needs T >= 1".into()));
    }
    let mut p = vec![Matrix::zeros(0, 0); steps + 1];
    let mut k = vec![Matrix::zeros(0, 0); steps];
    let mut f = vec![Matrix::zeros(0, 0); steps];
    p[steps] = sys.terminal_cost().as_matrix().clone();
    for t in (0..steps).rev() {
        let (p_t, k_t) = matops::riccati_step(&sys.a, &sys.b, &sys.q, &sys.r, &p[t + 1])?;
        f[t] = &sys.a - &sys.b * &k_t;
        k[t] = k_t;
        p[t] = p_t;
    }
    Ok(ClosedLoop::Finite { f, k, p })
}

/// The closed-loop map `theta_s -> F` for either horizon.
pub fn closed_loop_map(sys: &SystemParams, horizon: Horizon) -> Result<ClosedLoop> {
    match horizon {
        Horizon::Infinite => infinite_horizon_solution(sys),
        Horizon::Finite(steps) => finite_horizon_solution(sys, steps),
    }
}
