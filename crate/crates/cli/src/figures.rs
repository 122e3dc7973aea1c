//! Desk-scale regeneration of the data behind each figure. Every tag writes
//! its CSVs and a README describing their columns into `<out>/<tag>/`.

use std::fmt;
use std::path::{Path, PathBuf};

use iocl_core::em::{self, Dynamics};
use iocl_core::ioc::{self, PerturbationTarget};
use iocl_core::lqr::{self, SystemParams};
use iocl_core::matops::{self, Matrix, SpdMatrix};
use iocl_core::scenarios;
use iocl_core::sim::{self, NoiseParams, ObservationParams};
use iocl_core::Exec;
use nalgebra::dmatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Em, Experiment, InitKind, Method, Recovery, RecoveryPlan, Scenario};
use crate::error::{CliError, CliResult};
use crate::output::{self, num, push_matrix_pair, Table};
use crate::pipeline::{self, relative_error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig2a,
    Fig3a,
    Fig3b,
    Fig3cd,
    Fig4,
}

impl Figure {
    pub fn tag(self) -> &'static str {
        match self {
            Figure::Fig2a => "fig2a",
            Figure::Fig3a => "fig3a",
            Figure::Fig3b => "fig3b",
            Figure::Fig3cd => "fig3cd",
            Figure::Fig4 => "fig4",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Rotation plant with unit process noise and `V = 0.01 I`, observed through `C = I`.
fn rotation_experiment(seed: u64, trajectories: usize, steps: usize, init: InitKind, max_iter: usize, tol: f64) -> CliResult<Experiment> {
    let system = scenarios::rotation_system()?;
    let n = system.n();
    Ok(Experiment {
        scenario: Scenario::InfiniteA,
        noise: NoiseParams::state(SpdMatrix::identity(n), SpdMatrix::identity(n), SpdMatrix::scaled_identity(n, 0.01)),
        observation: ObservationParams::State {
            c: Matrix::identity(n, n),
        },
        system,
        steps,
        trajectories,
        seed,
        em: Em {
            max_iter,
            tol,
            learn_observation: false,
            init,
            init_f: None,
        },
        recovery: None,
        output: PathBuf::new(),
    })
}

fn write_readme(dir: &Path, title: &str, body: &str) -> CliResult<()> {
    let text = format!("# {title}\n\n{}\n", body.trim());
    iocl_core::sim::write_atomic(&dir.join("README.md"), text.as_bytes())?;
    Ok(())
}

pub fn run_figure(figure: Figure, seed: Option<u64>, out: &Path) -> CliResult<PathBuf> {
    let dir = out.join(figure.tag());
    output::ensure_dir(&dir)?;
    match figure {
        Figure::Fig2a => fig2a(seed.unwrap_or(41), &dir)?,
        Figure::Fig3a => fig3a(&dir)?,
        Figure::Fig3b => fig3b(seed.unwrap_or(41), &dir)?,
        Figure::Fig3cd => fig3cd(seed.unwrap_or(300), &dir)?,
        Figure::Fig4 => fig4(seed.unwrap_or(23), &dir)?,
    }
    log::info!("{figure}: wrote {}", dir.display());
    Ok(dir)
}

/// EM estimate of the closed loop against the generating one.
fn fig2a(seed: u64, dir: &Path) -> CliResult<()> {
    let exp = rotation_experiment(seed, 200, 200, InitKind::Moment, 1000, 1e-12)?;
    let dataset = pipeline::run_simulate(&exp, dir)?;
    let fit_path = pipeline::run_fit(&exp, &dataset, dir)?;
    let report = pipeline::read_fit_report(&fit_path)?;
    let truth = pipeline::truth_closed_loop(&exp)?;
    let f_hat = report
        .fit
        .params
        .f
        .as_static()
        .ok_or_else(|| CliError::Usage("expected static dynamics".into()))?;
    let mut table = Table::new(&["row", "col", "true", "estimated"]);
    push_matrix_pair(&mut table, &[], truth.dynamics_at(0), f_hat);
    table.write(&dir.join("f_ss.csv"))?;
    write_readme(
        dir,
        "fig2a: fitted closed-loop dynamics",
        &format!(
            r#"
4-state rotation plant, B = R = Q = I, W0 = W = I, V = 0.01 I, C = I (known).
N = {n} trajectories of T = {t} transitions, seed {seed}. EM from the
lag-autocovariance start, tolerance 1e-12.

- `f_ss.csv`: `row, col, true, estimated`. One line per entry of the 4x4
  closed-loop matrix; `true` from the Riccati solution, `estimated` from EM.
- `loglik.csv`: `iteration, loglik`. Marginal log-likelihood per EM
  iteration; row 0 is the starting point.
- `fit.json`: full fit report (parameters, trace, relative error).
- `dataset.jsonl`, `dataset.meta.json`: the simulated observations.
"#,
            n = exp.trajectories,
            t = exp.steps
        ),
    )
}

/// Iterative A recovery from the exact closed loop.
fn fig3a(dir: &Path) -> CliResult<()> {
    let sys = scenarios::rotation_system()?;
    let closed = lqr::infinite_horizon_solution(&sys)?;
    let f_ss = closed.dynamics_at(0);
    let result = ioc::recover_a_iterative(f_ss, &sys.b, &sys.r, &sys.q, None, 1e-10, 50)?;
    let mut table = Table::new(&["iteration", "error_2norm", "step_norm"]);
    table.push(vec!["0".into(), num(matops::norm2(&(f_ss - &sys.a))), String::new()]);
    for (j, (a, step)) in result.iterates.iter().zip(&result.trace).enumerate() {
        table.push(vec![(j + 1).to_string(), num(matops::norm2(&(a - &sys.a))), num(*step)]);
    }
    table.write(&dir.join("error_vs_iteration.csv"))?;

    let newton = ioc::recover_a_rootfind(f_ss, &sys.q)?;
    let mut residuals = Table::new(&["iteration", "residual_norm"]);
    for (j, r) in newton.trace.iter().enumerate() {
        residuals.push(vec![j.to_string(), num(*r)]);
    }
    residuals.write(&dir.join("rootfind_residual.csv"))?;
    write_readme(
        dir,
        "fig3a: A recovery by iteration",
        r#"
4-state rotation plant, B = R = Q = I, exact steady-state closed loop.
Deterministic; no seed.

- `error_vs_iteration.csv`: `iteration, error_2norm, step_norm`.
  `error_2norm` is the spectral-norm distance of iterate `A_j` to the true
  plant (iteration 0 is the start `A_0 = F_ss`); `step_norm` is
  `||A_j - A_(j-1)||_2` (empty for iteration 0). Stops at step 1e-10.
- `rootfind_residual.csv`: `iteration, residual_norm`. Frobenius norm of
  the matrix-equation residual per Newton iteration, for comparison.
"#,
    )
}

/// Recovery quality along the EM path.
fn fig3b(seed: u64, dir: &Path) -> CliResult<()> {
    let exp = rotation_experiment(seed, 100, 200, InitKind::Default, 200, 1e-10)?;
    let dataset = pipeline::run_simulate(&exp, dir)?;
    let data = sim::read_dataset(&dataset)?;
    let init = pipeline::initial_params(&exp, &data)?;
    let sys = &exp.system;
    let f_true = pipeline::truth_closed_loop(&exp)?.dynamics_at(0).clone();
    let mut rows: Vec<[f64; 3]> = Vec::new();
    let fit = em::fit_em_with(&data, &init, &pipeline::em_options(&exp), |_, params| {
        let f = match &params.f {
            Dynamics::Static(f) => f,
            Dynamics::TimeVarying(_) => unreachable!("static init"),
        };
        let a_err = ioc::estimate_a_rootfind(f, &sys.q)
            .ok()
            .and_then(|r| r.estimate("A").map(|a| relative_error(a, &sys.a)))
            .unwrap_or(f64::NAN);
        let q_err = match ioc::recover_q(f, &sys.a, &sys.b, &sys.r) {
            Ok(r) => r.estimate("Q").map_or(f64::NAN, |q| relative_error(q, &sys.q)),
            Err(_) => f64::NAN,
        };
        rows.push([(f - &f_true).norm() / f_true.norm(), a_err, q_err]);
    })?;
    let mut table = Table::new(&["iteration", "loglik", "f_relative_error", "a_relative_error", "q_relative_error"]);
    for (i, (ll, r)) in fit.loglik_trace.iter().zip(&rows).enumerate() {
        table.push(vec![i.to_string(), num(*ll), num(r[0]), num(r[1]), num(r[2])]);
    }
    table.write(&dir.join("em_recovery.csv"))?;
    write_readme(
        dir,
        "fig3b: recovery along the EM iterations",
        &format!(
            r#"
Same plant and noise as fig2a; N = {n}, T = {t}, seed {seed}. EM starts
from F = 0.5 I with unit covariances and C = I known, up to 200 iterations.

- `em_recovery.csv`: `iteration, loglik, f_relative_error, a_relative_error,
  q_relative_error`. Per EM iteration (0 is the start): marginal
  log-likelihood, relative Frobenius error of the fitted closed loop, and
  relative spectral-norm errors of A recovered by Newton given Q and of Q
  recovered given A, B, R from that iteration's closed loop. NaN marks
  iterations where recovery failed (e.g. an unstable or singular
  intermediate estimate).
- `dataset.jsonl`, `dataset.meta.json`: the simulated observations.
"#,
            n = exp.trajectories,
            t = exp.steps
        ),
    )
}

/// Robustness of both A-recovery methods to perturbed inputs.
fn fig3cd(seed: u64, dir: &Path) -> CliResult<()> {
    let eps_grid = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
    let instances = (0..20)
        .map(|i| scenarios::random_instance(&mut ChaCha8Rng::seed_from_u64(seed + i), 4))
        .collect::<Result<Vec<_>, _>>()?;
    let mut raw = Table::new(&["target", "eps", "instance", "method", "error_2norm"]);
    let mut summary = Table::new(&["target", "eps", "method", "median", "min", "max", "failures"]);
    for (target, label) in [(PerturbationTarget::Q, "q"), (PerturbationTarget::F, "f")] {
        for point in ioc::perturbation_sweep(&instances, &eps_grid, target, Exec::default()) {
            for (method, errors) in [("iterative", &point.iterative_errors), ("rootfind", &point.rootfind_errors)] {
                for (i, e) in errors.iter().enumerate() {
                    raw.push(vec![label.into(), num(point.eps), i.to_string(), method.into(), num(*e)]);
                }
                let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
                let min = finite.iter().copied().fold(f64::NAN, f64::min);
                let max = finite.iter().copied().fold(f64::NAN, f64::max);
                summary.push(vec![
                    label.into(),
                    num(point.eps),
                    method.into(),
                    num(ioc::median(errors)),
                    num(min),
                    num(max),
                    (errors.len() - finite.len()).to_string(),
                ]);
            }
        }
    }
    raw.write(&dir.join("sweep_errors.csv"))?;
    summary.write(&dir.join("sweep_summary.csv"))?;
    write_readme(
        dir,
        "fig3cd: A recovery under perturbed inputs",
        &format!(
            r#"
20 random 4-state instances with B = R = I (plant spectral radius in
[0.5, 1), random Q >= 0.1 I), instance i drawn from seed {seed} + i. Either
Q (`target = q`) or the closed loop (`target = f`) is replaced by itself
plus eps I before recovery. Both methods return their best iterate when no
exact solution exists.

- `sweep_errors.csv`: `target, eps, instance, method, error_2norm`. One row
  per recovery; `error_2norm` is `||A_hat - A||_2`, NaN on failure.
- `sweep_summary.csv`: `target, eps, method, median, min, max, failures`.
  Statistics over the finite errors of the 20 instances; `failures` counts
  NaN entries.
"#
        ),
    )
}

/// Finite-horizon recovery from exact sequences, and the control-observation
/// pipeline.
fn fig4(seed: u64, dir: &Path) -> CliResult<()> {
    let mut finite = Table::new(&["case", "param", "row", "col", "true", "estimated"]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = [
        ("scalar", dmatrix![1.1], SpdMatrix::positive_definite(dmatrix![0.5])?),
        ("n3", scenarios::random_dynamics(&mut rng, 3), scenarios::random_spd(&mut rng, 3, 0.1)),
    ];
    for (name, a, q) in cases {
        let n = a.nrows();
        let sys = SystemParams::new(a.clone(), Matrix::identity(n, n), q.clone(), SpdMatrix::identity(n))?;
        let fs = match lqr::finite_horizon_solution(&sys, 10)? {
            lqr::ClosedLoop::Finite { f, .. } => f,
            lqr::ClosedLoop::Infinite { .. } => unreachable!("finite solution"),
        };
        let res = ioc::recover_finite_horizon_aq(&fs)?;
        for (param, truth) in [("A", &a), ("Q", q.as_matrix())] {
            let est = res.estimate(param).ok_or_else(|| CliError::Usage(format!("no {param} estimate")))?;
            push_matrix_pair(&mut finite, &[name.into(), param.into()], truth, est);
        }
    }
    finite.write(&dir.join("finite_horizon.csv"))?;

    let n = 2;
    let system = SystemParams::new(
        dmatrix![1.0, 0.3; -0.2, 0.95],
        Matrix::identity(n, n),
        SpdMatrix::identity(n),
        SpdMatrix::identity(n),
    )?;
    let noise = SpdMatrix::scaled_identity(n, 0.1);
    let exp = Experiment {
        scenario: Scenario::InfiniteB,
        noise: NoiseParams::state_and_control(noise.clone(), noise.clone(), noise.clone(), noise),
        observation: ObservationParams::StateAndControl {
            c_x: Matrix::identity(n, n),
        },
        system,
        steps: 200,
        trajectories: 200,
        seed,
        em: Em {
            max_iter: 500,
            tol: 1e-10,
            learn_observation: false,
            init: InitKind::Default,
            init_f: None,
        },
        recovery: Some(Recovery {
            plan: RecoveryPlan::AqFromControls,
            method: Method::Iterative,
            tol: 1e-10,
            max_iter: 1000,
            sweep: None,
        }),
        output: PathBuf::new(),
    };
    let recovery_path = pipeline::run_all(&exp, dir)?;
    let report: pipeline::RecoveryReport = serde_json::from_str(&std::fs::read_to_string(recovery_path)?)?;
    let mut control = Table::new(&["param", "row", "col", "true", "estimated"]);
    for (param, truth) in [("A", &exp.system.a), ("Q", exp.system.q.as_matrix())] {
        let est = report
            .result
            .estimate(param)
            .ok_or_else(|| CliError::Usage(format!("no {param} estimate")))?;
        push_matrix_pair(&mut control, &[param.into()], truth, est);
    }
    control.write(&dir.join("control_obs.csv"))?;
    write_readme(
        dir,
        "fig4: finite horizon and control observations",
        &format!(
            r#"
- `finite_horizon.csv`: `case, param, row, col, true, estimated`. A and Q
  recovered jointly from the exact closed-loop sequence of a T = 10
  regulator with B = R = I and terminal cost Q. `case` is `scalar`
  (A = 1.1, Q = 0.5) or `n3` (random 3-state plant, seed {seed}).
- `control_obs.csv`: `param, row, col, true, estimated`. Plant
  [[1, 0.3], [-0.2, 0.95]], B = R = Q = I, all noise covariances 0.1 I,
  states and controls observed (C_x = I). N = {n}, T = {t}, seed {seed}.
  EM fit, then A = F_ss + B K_ss and Q given R.
- `loglik.csv`, `fit.json`, `recovery.json`, `dataset.jsonl`,
  `dataset.meta.json`: artifacts of the control-observation pipeline, in the
  same formats as the `simulate`, `fit` and `recover` commands.
"#,
            n = exp.trajectories,
            t = exp.steps
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_match_cli_names() {
        use clap::ValueEnum;
        for &f in Figure::value_variants() {
            assert_eq!(Figure::from_str(f.tag(), false).unwrap(), f);
        }
        assert!(Figure::from_str("fig9", false).is_err());
    }

    #[test]
    fn rotation_experiment_is_consistent() {
        let exp = rotation_experiment(1, 2, 3, InitKind::Default, 5, 1e-9).unwrap();
        assert_eq!(exp.c_x().shape(), (4, 4));
        assert_eq!(exp.observation.model(), sim::ObservationModel::State);
    }
}
