//! Closed-loop trajectory sampling under the two observation models, and the
//! JSON-lines dataset format.
//!
//! Observation model (a): `y_t = C x_t + nu_t`.
//! Observation model (b): `y_t = [C_x x_t; u_t] + [nu_x; nu_u]` with
//! `u_t = -K_ss x_t` and block-diagonal noise `diag(V_x, V_u)`.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lqr::{self, ClosedLoop, Horizon, SystemParams};
use crate::matops::{self, serde_matrix, Matrix, SpdMatrix};

pub const SCHEMA_VERSION: &str = "iocl-v1";

/// Jitter added to singular covariances before factorization.
const SINGULAR_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationModel {
    #[serde(rename = "a")]
    State,
    #[serde(rename = "b")]
    StateAndControl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationNoise {
    State { v: SpdMatrix },
    StateAndControl { v_x: SpdMatrix, v_u: SpdMatrix },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseParams {
    pub w0: SpdMatrix,
    pub w: SpdMatrix,
    pub obs: ObservationNoise,
    /// Permit PSD-but-singular `W0`/`W`; sampling then adds a 1e-10 jitter.
    #[serde(default)]
    pub allow_singular: bool,
}

impl NoiseParams {
    pub fn state(w0: SpdMatrix, w: SpdMatrix, v: SpdMatrix) -> Self {
        Self {
            w0,
            w,
            obs: ObservationNoise::State { v },
            allow_singular: false,
        }
    }

    pub fn state_and_control(w0: SpdMatrix, w: SpdMatrix, v_x: SpdMatrix, v_u: SpdMatrix) -> Self {
        Self {
            w0,
            w,
            obs: ObservationNoise::StateAndControl { v_x, v_u },
            allow_singular: false,
        }
    }

    /// Full observation noise covariance (block diagonal for model (b)).
    pub fn v_full(&self) -> Matrix {
        match &self.obs {
            ObservationNoise::State { v } => v.as_matrix().clone(),
            ObservationNoise::StateAndControl { v_x, v_u } => block_diag(v_x, v_u),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationParams {
    State {
        #[serde(with = "serde_matrix")]
        c: Matrix,
    },
    /// The control rows are `-K_ss`, taken from the closed loop.
    StateAndControl {
        #[serde(with = "serde_matrix")]
        c_x: Matrix,
    },
}

impl ObservationParams {
    pub fn model(&self) -> ObservationModel {
        match self {
            ObservationParams::State { .. } => ObservationModel::State,
            ObservationParams::StateAndControl { .. } => ObservationModel::StateAndControl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: String,
    /// Number of transitions; each trajectory has T+1 observations.
    pub steps: usize,
    pub trajectories: usize,
    pub dims: Dims,
    pub model: ObservationModel,
    pub horizon: Horizon,
    pub seed: u64,
    pub has_latent: bool,
}

/// One sampled sequence. Matrices hold one time step per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// (T+1) x d observations.
    #[serde(with = "serde_matrix")]
    pub y: Matrix,
    /// (T+1) x n latent states.
    #[serde(default, with = "serde_matrix::option", skip_serializing_if = "Option::is_none")]
    pub x: Option<Matrix>,
    /// T x m controls.
    #[serde(default, with = "serde_matrix::option", skip_serializing_if = "Option::is_none")]
    pub u: Option<Matrix>,
}

impl Trajectory {
    pub fn y_at(&self, t: usize) -> DVector<f64> {
        self.y.row(t).transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    /// Checks every sequence against `meta`.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Dataset(format!("unsupported schema {}", m.schema_version)));
        }
        if self.trajectories.len() != m.trajectories {
            return Err(Error::Dataset(format!(
                "meta says {} trajectories, found {}",
                m.trajectories,
                self.trajectories.len()
            )));
        }
        for (i, tr) in self.trajectories.iter().enumerate() {
            if tr.y.shape() != (m.steps + 1, m.dims.d) {
                return Err(Error::Dataset(format!("trajectory {i}: y has shape {:?}", tr.y.shape())));
            }
            if let Some(x) = &tr.x {
                if x.shape() != (m.steps + 1, m.dims.n) {
                    return Err(Error::Dataset(format!("trajectory {i}: x has shape {:?}", x.shape())));
                }
            }
            if let Some(u) = &tr.u {
                if u.shape() != (m.steps, m.dims.m) {
                    return Err(Error::Dataset(format!("trajectory {i}: u has shape {:?}", u.shape())));
                }
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.meta.steps
    }

    /// Copy without latent states or controls.
    pub fn observations_only(&self) -> Self {
        let mut out = self.clone();
        out.meta.has_latent = false;
        for tr in &mut out.trajectories {
            tr.x = None;
            tr.u = None;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub record_latent: bool,
    pub exec: Exec,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record_latent: true,
            exec: Exec::default(),
        }
    }
}

/// Draws `N(0, S)` via the lower Cholesky factor of `S`.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: Matrix,
}

impl GaussianSampler {
    pub fn new(cov: &Matrix) -> Result<Self> {
        let factor = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositive {
                what: "sampling covariance".into(),
                kind: "definite",
                min_eigenvalue: matops::min_symmetric_eigenvalue(cov),
            })?
            .l();
        Ok(Self { factor })
    }

    fn with_jitter(cov: &Matrix, allow_singular: bool) -> Result<Self> {
        if allow_singular {
            let n = cov.nrows();
            Self::new(&(cov + Matrix::identity(n, n) * SINGULAR_JITTER))
        } else {
            Self::new(cov)
        }
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z
    }
}

/// Independent RNG stream for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn block_diag(top: &Matrix, bottom: &Matrix) -> Matrix {
    let (a, b) = (top.nrows(), bottom.nrows());
    let mut out = Matrix::zeros(a + b, a + b);
    out.view_mut((0, 0), (a, a)).copy_from(top);
    out.view_mut((a, a), (b, b)).copy_from(bottom);
    out
}

/// Samples `trajectories` closed-loop sequences of `steps` transitions.
///
/// Reproducible from `seed`; each trajectory owns the RNG stream `(seed, i)`
/// so the result does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    sys: &SystemParams,
    noise: &NoiseParams,
    obs: &ObservationParams,
    horizon: Horizon,
    steps: usize,
    trajectories: usize,
    seed: u64,
    options: SimOptions,
) -> Result<TrajectoryDataset> {
    if steps == 0 {
        return Err(Error::InvalidArgument("need at least one transition".into()));
    }
    if let Horizon::Finite(h) = horizon {
        if h != steps {
            return Err(Error::InvalidArgument(format!(
                "finite horizon {h} does not match simulated steps {steps}"
            )));
        }
    }
    let closed = lqr::closed_loop_map(sys, horizon)?;
    simulate_closed_loop(sys, &closed, noise, obs, steps, trajectories, seed, options)
}

/// Like [`simulate`] with a precomputed closed loop.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    sys: &SystemParams,
    closed: &ClosedLoop,
    noise: &NoiseParams,
    obs: &ObservationParams,
    steps: usize,
    trajectories: usize,
    seed: u64,
    options: SimOptions,
) -> Result<TrajectoryDataset> {
    let (n, m) = (sys.n(), sys.m());
    matops::ensure_shape(&noise.w0, n, n, "W0")?;
    matops::ensure_shape(&noise.w, n, n, "W")?;

    let (c_state, d) = match (obs, &noise.obs) {
        (ObservationParams::State { c }, ObservationNoise::State { v }) => {
            matops::ensure_shape(c, c.nrows(), n, "C")?;
            matops::ensure_shape(v, c.nrows(), c.nrows(), "V")?;
            (c, c.nrows())
        }
        (ObservationParams::StateAndControl { c_x }, ObservationNoise::StateAndControl { v_x, v_u }) => {
            if !matches!(closed, ClosedLoop::Infinite { .. }) {
                return Err(Error::InvalidArgument(
                    "control observations need the infinite-horizon static gain".into(),
                ));
            }
            matops::ensure_shape(c_x, c_x.nrows(), n, "C_x")?;
            matops::ensure_shape(v_x, c_x.nrows(), c_x.nrows(), "V_x")?;
            matops::ensure_shape(v_u, m, m, "V_u")?;
            (c_x, c_x.nrows() + m)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "observation parameters and noise disagree on the model".into(),
            ))
        }
    };
    if let ClosedLoop::Finite { f, .. } = closed {
        if f.len() != steps {
            return Err(Error::InvalidArgument("closed-loop length differs from steps".into()));
        }
    }

    let init = GaussianSampler::with_jitter(&noise.w0, noise.allow_singular)?;
    let process = GaussianSampler::with_jitter(&noise.w, noise.allow_singular)?;
    let measurement = GaussianSampler::new(&noise.v_full())?;
    let with_control = obs.model() == ObservationModel::StateAndControl;
    let dx = c_state.nrows();

    let trajs = options.exec.map_indexed(trajectories, |i| {
        let mut rng = trajectory_rng(seed, i);
        let mut x = init.sample(&mut rng);
        let mut xs = Matrix::zeros(steps + 1, n);
        let mut us = Matrix::zeros(steps, m);
        let mut ys = Matrix::zeros(steps + 1, d);
        for t in 0..=steps {
            xs.set_row(t, &x.transpose());
            let u = -(closed.gain_at(t) * &x);
            let nu = measurement.sample(&mut rng);
            let mut y = DVector::zeros(d);
            y.rows_mut(0, dx).copy_from(&(c_state * &x));
            if with_control {
                y.rows_mut(dx, m).copy_from(&u);
            }
            y += nu;
            ys.set_row(t, &y.transpose());
            if t < steps {
                us.set_row(t, &u.transpose());
                let w = process.sample(&mut rng);
                x = &sys.a * &x + &sys.b * &u + w;
            }
        }
        Trajectory {
            y: ys,
            x: options.record_latent.then_some(xs),
            u: options.record_latent.then_some(us),
        }
    });

    Ok(TrajectoryDataset {
        meta: DatasetMeta {
            schema_version: SCHEMA_VERSION.to_string(),
            steps,
            trajectories,
            dims: Dims { n, m, d },
            model: obs.model(),
            horizon: closed.horizon(),
            seed,
            has_latent: options.record_latent,
        },
        trajectories: trajs,
    })
}

/// Solves `S = F S F^T + W` for stable `F`.
pub fn stationary_state_covariance(f: &Matrix, w: &SpdMatrix) -> Result<SpdMatrix> {
    let rho = matops::spectral_radius(f);
    if rho >= 1.0 {
        return Err(Error::UnstableDynamics { spectral_radius: rho });
    }
    let ft = f.transpose();
    let s = matops::solve_discrete_sylvester(&ft, &ft, w)?;
    SpdMatrix::positive_semidefinite(s)
}

#[derive(Serialize, Deserialize)]
struct Record {
    index: usize,
    #[serde(flatten)]
    trajectory: Trajectory,
}

/// Sidecar meta path: `data.jsonl` -> `data.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Writes `contents` to a temporary sibling of `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `path` (one trajectory per line) and its sidecar meta header.
pub fn write_dataset(path: &Path, data: &TrajectoryDataset) -> Result<()> {
    data.validate()?;
    let mut out = Vec::new();
    for (index, trajectory) in data.trajectories.iter().enumerate() {
        let rec = Record {
            index,
            trajectory: trajectory.clone(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)?;
    write_atomic(&meta_path(path), (serde_json::to_string_pretty(&data.meta)? + "\n").as_bytes())
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
    let reader = BufReader::new(fs::File::open(path)?);
    let mut trajectories = Vec::with_capacity(meta.trajectories);
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)?;
        if rec.index != trajectories.len() {
            return Err(Error::Dataset(format!(
                "line {}: expected index {}, found {}",
                line_no + 1,
                trajectories.len(),
                rec.index
            )));
        }
        trajectories.push(rec.trajectory);
    }
    let data = TrajectoryDataset { meta, trajectories };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn small_system() -> SystemParams {
        SystemParams::new(
            dmatrix![1.0, 0.2; -0.1, 0.9],
            dmatrix![0.0; 1.0],
            SpdMatrix::identity(2),
            SpdMatrix::identity(1),
        )
        .unwrap()
    }

    #[test]
    fn stationary_covariance_examples() {
        let w = SpdMatrix::identity(2);
        let s = stationary_state_covariance(&Matrix::zeros(2, 2), &w).unwrap();
        assert!((s.as_matrix() - w.as_matrix()).abs().max() < 1e-14);

        let s = stationary_state_covariance(&dmatrix![0.5], &SpdMatrix::identity(1)).unwrap();
        assert!((s[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);

        let s = stationary_state_covariance(&(Matrix::identity(2, 2) * 0.9), &w).unwrap();
        assert!((s.as_matrix() - Matrix::identity(2, 2) / 0.19).abs().max() < 1e-10);

        assert!(matches!(
            stationary_state_covariance(&dmatrix![1.1], &SpdMatrix::identity(1)),
            Err(Error::UnstableDynamics { .. })
        ));
    }

    #[test]
    fn controls_are_exact_feedback() {
        let sys = small_system();
        let noise = NoiseParams::state(SpdMatrix::identity(2), SpdMatrix::identity(2), SpdMatrix::identity(2));
        let obs = ObservationParams::State { c: Matrix::identity(2, 2) };
        let data = simulate(&sys, &noise, &obs, Horizon::Infinite, 20, 3, 7, SimOptions::default()).unwrap();
        let cl = lqr::infinite_horizon_solution(&sys).unwrap();
        for tr in &data.trajectories {
            let (x, u) = (tr.x.as_ref().unwrap(), tr.u.as_ref().unwrap());
            for t in 0..20 {
                let expected = -(cl.gain_at(t) * x.row(t).transpose());
                assert_eq!(u.row(t).transpose(), expected);
            }
        }
    }

    #[test]
    fn model_b_stacks_state_then_control() {
        let sys = small_system();
        let eps = SpdMatrix::scaled_identity(2, 1e-14);
        let noise = NoiseParams::state_and_control(
            SpdMatrix::identity(2),
            SpdMatrix::identity(2),
            eps,
            SpdMatrix::scaled_identity(1, 1e-14),
        );
        let c_x = dmatrix![1.0, 0.5; 0.0, 2.0];
        let obs = ObservationParams::StateAndControl { c_x: c_x.clone() };
        let data = simulate(&sys, &noise, &obs, Horizon::Infinite, 5, 2, 1, SimOptions::default()).unwrap();
        assert_eq!(data.meta.dims.d, 3);
        let cl = lqr::infinite_horizon_solution(&sys).unwrap();
        let tr = &data.trajectories[0];
        let x = tr.x.as_ref().unwrap();
        for t in 0..=5 {
            let xt = x.row(t).transpose();
            let y = tr.y_at(t);
            assert!((y.rows(0, 2) - &c_x * &xt).abs().max() < 1e-5);
            assert!((y.rows(2, 1) + cl.gain_at(t) * &xt).abs().max() < 1e-5);
        }
    }

    #[test]
    fn finite_horizon_control_obs_rejected() {
        let noise = NoiseParams::state_and_control(
            SpdMatrix::identity(2),
            SpdMatrix::identity(2),
            SpdMatrix::identity(2),
            SpdMatrix::identity(1),
        );
        let obs = ObservationParams::StateAndControl { c_x: Matrix::identity(2, 2) };
        let err = simulate(&small_system(), &noise, &obs, Horizon::Finite(4), 4, 1, 0, SimOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn singular_noise_needs_flag() {
        let sys = small_system();
        let mut noise = NoiseParams::state(SpdMatrix::identity(2), SpdMatrix::zeros(2), SpdMatrix::identity(2));
        let obs = ObservationParams::State { c: Matrix::identity(2, 2) };
        assert!(simulate(&sys, &noise, &obs, Horizon::Infinite, 3, 1, 0, SimOptions::default()).is_err());
        noise.allow_singular = true;
        assert!(simulate(&sys, &noise, &obs, Horizon::Infinite, 3, 1, 0, SimOptions::default()).is_ok());
    }

    #[test]
    fn dataset_file_roundtrip() {
        let sys = small_system();
        let noise = NoiseParams::state(SpdMatrix::identity(2), SpdMatrix::identity(2), SpdMatrix::identity(1));
        let obs = ObservationParams::State { c: dmatrix![1.0, 0.0] };
        let data = simulate(&sys, &noise, &obs, Horizon::Infinite, 4, 3, 11, SimOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_dataset(&path, &data).unwrap();
        assert!(dir.path().join("data.meta.json").exists());
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, data);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(fs::read_to_string(meta_path(&path)).unwrap().contains("iocl-v1"));
    }
}
