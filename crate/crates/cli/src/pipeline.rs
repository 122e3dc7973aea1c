//! The simulate -> fit -> recover stages. Each stage reads only its
//! predecessor's artifact and the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use iocl_core::em::{self, Dynamics, EmOptions, FitResult, LgssmParams};
use iocl_core::ioc::{self, RecoveryResult};
use iocl_core::lqr::{self, ClosedLoop};
use iocl_core::matops::{self, Matrix, SpdMatrix};
use iocl_core::sim::{self, ObservationModel, ObservationNoise, SimOptions, TrajectoryDataset};
use iocl_core::Exec;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, InitKind, Method, RecoveryPlan, Scenario, SweepTarget};
use crate::error::{CliError, CliResult};
use crate::output::{self, num, Table};

pub const REPORT_SCHEMA_VERSION: &str = "iocl-report-v1";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const FIT_FILE: &str = "fit.json";
pub const LOGLIK_FILE: &str = "loglik.csv";
pub const RECOVERY_FILE: &str = "recovery.json";
pub const TRACE_FILE: &str = "recovery_trace.csv";
pub const SWEEP_FILE: &str = "recovery_sweep.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: String,
    pub scenario: Scenario,
    pub init: InitKind,
    /// Relative Frobenius error of the fitted closed loop against the
    /// generating one (stacked over time for the finite scenario). Absent
    /// when `C` is learned, since the state basis is then arbitrary.
    pub f_relative_error: Option<f64>,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub schema_version: String,
    pub scenario: Scenario,
    pub plan: String,
    pub method: Method,
    /// Relative 2-norm error of each estimate with a known ground truth.
    pub relative_errors: BTreeMap<String, f64>,
    pub result: RecoveryResult,
}

pub fn truth_closed_loop(exp: &Experiment) -> CliResult<ClosedLoop> {
    Ok(lqr::closed_loop_map(&exp.system, exp.horizon())?)
}

pub fn relative_error(estimate: &Matrix, truth: &Matrix) -> f64 {
    matops::norm2(&(estimate - truth)) / matops::norm2(truth)
}

/// Relative Frobenius error of fitted dynamics against the closed loop.
pub fn dynamics_error(fitted: &Dynamics, truth: &ClosedLoop) -> f64 {
    match (fitted, truth) {
        (Dynamics::Static(f), ClosedLoop::Infinite { f_ss, .. }) => (f - f_ss).norm() / f_ss.norm(),
        (Dynamics::TimeVarying(fs), ClosedLoop::Finite { f, .. }) if fs.len() == f.len() => {
            let num: f64 = fs.iter().zip(f).map(|(a, b)| (a - b).norm_squared()).sum();
            let den: f64 = f.iter().map(|b| b.norm_squared()).sum();
            (num / den).sqrt()
        }
        _ => f64::NAN,
    }
}

/// Writes `<out>/dataset.jsonl` and its meta sidecar.
pub fn run_simulate(exp: &Experiment, out: &Path) -> CliResult<PathBuf> {
    output::ensure_dir(out)?;
    let data = sim::simulate(
        &exp.system,
        &exp.noise,
        &exp.observation,
        exp.horizon(),
        exp.steps,
        exp.trajectories,
        exp.seed,
        SimOptions {
            record_latent: false,
            exec: Exec::default(),
        },
    )?;
    let path = out.join(DATASET_FILE);
    sim::write_dataset(&path, &data)?;
    log::info!("wrote {} ({} trajectories, T={})", path.display(), exp.trajectories, exp.steps);
    Ok(path)
}

fn check_dataset(exp: &Experiment, data: &TrajectoryDataset) -> CliResult<()> {
    let expected = exp.observation.model();
    if data.meta.model != expected {
        return Err(CliError::Usage(format!(
            "dataset observation model {:?} does not match scenario {:?}",
            data.meta.model, exp.scenario
        )));
    }
    if data.meta.dims.n != exp.system.n() {
        return Err(CliError::Usage(format!(
            "dataset has n={}, config has n={}",
            data.meta.dims.n,
            exp.system.n()
        )));
    }
    if exp.scenario == Scenario::Finite && data.meta.horizon != exp.horizon() {
        return Err(CliError::Usage("dataset horizon does not match the finite scenario".into()));
    }
    Ok(())
}

/// Starting parameters for EM as selected by `em.init`.
pub fn initial_params(exp: &Experiment, data: &TrajectoryDataset) -> CliResult<LgssmParams> {
    let n = exp.system.n();
    let eye = SpdMatrix::identity(n);
    let half = Matrix::identity(n, n) * 0.5;
    let mut params = match exp.em.init {
        InitKind::Moment => em::moment_init(data, exp.c_x())?,
        InitKind::Truth => {
            let closed = truth_closed_loop(exp)?;
            let mut p = match &exp.noise.obs {
                ObservationNoise::State { v } => LgssmParams::state_model(
                    closed.dynamics_at(0).clone(),
                    exp.c_x().clone(),
                    exp.noise.w0.clone(),
                    exp.noise.w.clone(),
                    v.clone(),
                )?,
                ObservationNoise::StateAndControl { v_x, v_u } => LgssmParams::control_model(
                    closed.dynamics_at(0).clone(),
                    exp.c_x().clone(),
                    closed.gain_at(0).clone(),
                    exp.noise.w0.clone(),
                    exp.noise.w.clone(),
                    v_x.clone(),
                    v_u.clone(),
                    exp.system.b.clone(),
                )?,
            };
            if let ClosedLoop::Finite { f, .. } = &closed {
                p.f = Dynamics::TimeVarying(f.clone());
            }
            p
        }
        InitKind::Default if exp.em.learn_observation => em::default_init(data, n, Some(&exp.system.b))?,
        InitKind::Default => match data.meta.model {
            ObservationModel::State => {
                let d = exp.c_x().nrows();
                LgssmParams::state_model(half.clone(), exp.c_x().clone(), eye.clone(), eye.clone(), SpdMatrix::identity(d))?
            }
            ObservationModel::StateAndControl => {
                let (dx, m) = (exp.c_x().nrows(), exp.system.m());
                LgssmParams::control_model(
                    half.clone(),
                    exp.c_x().clone(),
                    Matrix::zeros(m, n),
                    eye.clone(),
                    eye.clone(),
                    SpdMatrix::identity(dx),
                    SpdMatrix::identity(m),
                    exp.system.b.clone(),
                )?
            }
        },
    };
    if exp.scenario == Scenario::Finite && exp.em.init != InitKind::Truth {
        let start = params.f.as_static().cloned().unwrap_or(half);
        params.f = Dynamics::TimeVarying(vec![start; data.steps()]);
    }
    if let Some(f) = &exp.em.init_f {
        params.f = Dynamics::Static(f.clone());
    }
    Ok(params)
}

pub fn em_options(exp: &Experiment) -> EmOptions {
    EmOptions {
        max_iter: exp.em.max_iter,
        tol: exp.em.tol,
        learn_observation: exp.em.learn_observation,
        exec: Exec::default(),
    }
}

pub fn loglik_table(trace: &[f64]) -> Table {
    let mut table = Table::new(&["iteration", "loglik"]);
    for (i, ll) in trace.iter().enumerate() {
        table.push(vec![i.to_string(), num(*ll)]);
    }
    table
}

/// Fits the dataset and writes `<out>/fit.json` plus `<out>/loglik.csv`
/// (one row per log-likelihood evaluation, iterations + 1 rows).
pub fn run_fit(exp: &Experiment, dataset: &Path, out: &Path) -> CliResult<PathBuf> {
    output::ensure_dir(out)?;
    let data = sim::read_dataset(dataset)?;
    check_dataset(exp, &data)?;
    let init = initial_params(exp, &data)?;
    let fit = em::fit_em(&data, &init, &em_options(exp))?;
    let f_relative_error = if exp.em.learn_observation {
        None
    } else {
        Some(dynamics_error(&fit.params.f, &truth_closed_loop(exp)?))
    };
    log::info!(
        "EM: {} iterations, converged {}, final loglik {:.6}",
        fit.iterations,
        fit.converged,
        fit.loglik_trace.last().copied().unwrap_or(f64::NAN)
    );
    loglik_table(&fit.loglik_trace).write(&out.join(LOGLIK_FILE))?;
    let report = FitReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        scenario: exp.scenario,
        init: exp.em.init,
        f_relative_error,
        fit,
    };
    let path = out.join(FIT_FILE);
    output::write_json(&path, &report)?;
    Ok(path)
}

pub fn read_fit_report(path: &Path) -> CliResult<FitReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let report: FitReport =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(CliError::Usage(format!(
            "{}: unsupported report schema {:?}",
            path.display(),
            report.schema_version
        )));
    }
    Ok(report)
}

fn recover_a(exp: &Experiment, f_ss: &Matrix, q: &SpdMatrix, method: Method, tol: f64, max_iter: usize) -> CliResult<RecoveryResult> {
    let sys = &exp.system;
    Ok(match method {
        Method::Iterative => ioc::estimate_a_iterative(f_ss, &sys.b, &sys.r, q, None, tol, max_iter)?,
        Method::Rootfind => ioc::estimate_a_rootfind(f_ss, q)?,
    })
}

/// Per-iteration trace: step and error for the iterative method, Newton
/// residual (and no error column) for root finding.
fn trace_table(result: &RecoveryResult, method: Method, f_start: &Matrix, a_true: &Matrix) -> Table {
    match method {
        Method::Iterative => {
            let mut table = Table::new(&["iteration", "step_norm", "error_2norm"]);
            table.push(vec!["0".into(), String::new(), num(matops::norm2(&(f_start - a_true)))]);
            for (j, (step, a)) in result.trace.iter().zip(&result.iterates).enumerate() {
                table.push(vec![(j + 1).to_string(), num(*step), num(matops::norm2(&(a - a_true)))]);
            }
            table
        }
        Method::Rootfind => {
            let mut table = Table::new(&["iteration", "residual_norm"]);
            for (j, r) in result.trace.iter().enumerate() {
                table.push(vec![j.to_string(), num(*r)]);
            }
            table
        }
    }
}

/// Runs the configured recovery on a fit report and writes
/// `<out>/recovery.json`, the per-iteration trace CSV for A recovery and,
/// when configured, the error-vs-eps sweep CSV.
pub fn run_recover(exp: &Experiment, fit_path: &Path, out: &Path) -> CliResult<PathBuf> {
    let recovery = exp.recovery()?;
    output::ensure_dir(out)?;
    let report = read_fit_report(fit_path)?;
    if report.scenario != exp.scenario {
        return Err(CliError::Usage(format!(
            "fit report is for {:?}, config is {:?}",
            report.scenario, exp.scenario
        )));
    }
    let params = &report.fit.params;
    let sys = &exp.system;
    let static_f = || {
        params
            .f
            .as_static()
            .ok_or_else(|| CliError::Usage("fit report has time-varying dynamics".into()))
    };

    let result = match recovery.plan {
        RecoveryPlan::AGivenBrq => {
            let f_ss = static_f()?;
            let result = recover_a(exp, f_ss, &sys.q, recovery.method, recovery.tol, recovery.max_iter)?;
            trace_table(&result, recovery.method, f_ss, &sys.a).write(&out.join(TRACE_FILE))?;
            if let Some(sweep) = &recovery.sweep {
                sweep_table(exp, f_ss, sweep.target, &sweep.eps)?.write(&out.join(SWEEP_FILE))?;
            }
            result
        }
        RecoveryPlan::QGivenAbr => match ioc::recover_q(static_f()?, &sys.a, &sys.b, &sys.r) {
            Err(iocl_core::Error::RankDeficient {
                rank,
                estimate,
                null_space,
            }) => {
                let mut r = RecoveryResult::default();
                r.estimates.insert("Q".into(), *estimate);
                r.estimates.insert("Q_null_space".into(), *null_space);
                r.notes.push(format!("B R^-1 B^T has rank {rank}; Q is unique only off the null space"));
                r
            }
            other => other?,
        },
        RecoveryPlan::ControlWeightGivenAq => ioc::recover_brbt(static_f()?, &sys.a, &sys.q)?,
        RecoveryPlan::AFromControls => ioc::recover_from_control_obs(params, &sys.b, None)?,
        RecoveryPlan::AqFromControls => ioc::recover_from_control_obs(params, &sys.b, Some(&sys.r))?,
        RecoveryPlan::FiniteAq => match &params.f {
            Dynamics::TimeVarying(fs) => ioc::estimate_finite_horizon_aq(fs)?,
            Dynamics::Static(_) => return Err(CliError::Usage("finite recovery needs time-varying dynamics".into())),
        },
    };

    let mut truths = BTreeMap::new();
    truths.insert("A", sys.a.clone());
    truths.insert("Q", sys.q.as_matrix().clone());
    truths.insert("BRinvBt", ioc::control_weight(&sys.b, &sys.r)?);
    let relative_errors = result
        .estimates
        .iter()
        .filter_map(|(name, est)| {
            let truth = truths.get(name.as_str())?;
            Some((name.clone(), relative_error(est, truth)))
        })
        .collect();

    let report = RecoveryReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        scenario: exp.scenario,
        plan: serde_json::to_value(recovery.plan)?.as_str().unwrap_or_default().to_string(),
        method: recovery.method,
        relative_errors,
        result,
    };
    let path = out.join(RECOVERY_FILE);
    output::write_json(&path, &report)?;
    Ok(path)
}

/// A-recovery error when the fitted `F_ss` or the known `Q` is perturbed
/// by `eps * I`.
fn sweep_table(exp: &Experiment, f_ss: &Matrix, target: SweepTarget, eps_grid: &[f64]) -> CliResult<Table> {
    let recovery = exp.recovery()?;
    let n = f_ss.nrows();
    let eye = Matrix::identity(n, n);
    let mut table = Table::new(&["eps", "error_2norm", "relative_error"]);
    for &eps in eps_grid {
        let (f, q) = match target {
            SweepTarget::Q => (f_ss.clone(), exp.system.q.as_matrix() + &eye * eps),
            SweepTarget::F => (f_ss + &eye * eps, exp.system.q.as_matrix().clone()),
        };
        let q = SpdMatrix::projected(&q, 0.0);
        let err = recover_a(exp, &f, &q, recovery.method, recovery.tol, recovery.max_iter)
            .ok()
            .and_then(|r| r.estimate("A").map(|a| matops::norm2(&(a - &exp.system.a))))
            .unwrap_or(f64::NAN);
        table.push(vec![num(eps), num(err), num(err / matops::norm2(&exp.system.a))]);
    }
    Ok(table)
}

/// All three stages into one directory.
pub fn run_all(exp: &Experiment, out: &Path) -> CliResult<PathBuf> {
    exp.recovery()?;
    let dataset = run_simulate(exp, out)?;
    let fit = run_fit(exp, &dataset, out)?;
    run_recover(exp, &fit, out)
}
