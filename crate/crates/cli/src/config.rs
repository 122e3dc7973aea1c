//! Experiment configuration: parsing, file references and validation.
//!
//! Everything is checked here, before any compute runs. Errors carry the
//! JSON path of the offending field.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use iocl_core::lqr::{Horizon, SystemParams};
use iocl_core::matops::{self, Matrix, SpdMatrix};
use iocl_core::scenarios;
use iocl_core::sim::{NoiseParams, ObservationParams};
use serde::{Deserialize, Serialize};

pub const CONFIG_SCHEMA_VERSION: &str = "iocl-experiment-v1";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error(transparent)]
    Core(#[from] iocl_core::Error),
}

fn field(path: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.to_string(),
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Infinite horizon, state observations.
    InfiniteA,
    /// Infinite horizon, state and control observations.
    InfiniteB,
    /// Finite horizon, state observations.
    Finite,
}

/// Inline rows, a JSON file holding rows, or a scaled identity whose size
/// follows from the field it fills.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    File { file: PathBuf },
    Identity { identity: f64 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSystem {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
    pub a: Option<MatrixSpec>,
    pub b: Option<MatrixSpec>,
    pub q: Option<MatrixSpec>,
    pub r: Option<MatrixSpec>,
    pub q_t: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNoise {
    pub w0: MatrixSpec,
    pub w: MatrixSpec,
    pub v: Option<MatrixSpec>,
    pub v_x: Option<MatrixSpec>,
    pub v_u: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawObservation {
    pub c: Option<MatrixSpec>,
    pub c_x: Option<MatrixSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sizes {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub d: Option<usize>,
    #[serde(rename = "T")]
    pub steps: usize,
    #[serde(rename = "N")]
    pub trajectories: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// `F = 0.5 I`, unit covariances, `C` from the config when it is not
    /// learned and from principal directions otherwise.
    Default,
    /// Lag-autocovariance estimate; infinite_a with known `C` only.
    Moment,
    /// The generating parameters.
    Truth,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawEm {
    /// Zero evaluates the starting point only.
    pub max_iter: usize,
    pub tol: f64,
    pub learn_observation: bool,
    pub init: InitKind,
    /// Overrides the starting dynamics of static-dynamics inits.
    pub init_f: Option<MatrixSpec>,
}

impl Default for RawEm {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-9,
            learn_observation: false,
            init: InitKind::Default,
            init_f: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Iterative,
    Rootfind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Known {
    A,
    B,
    Q,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    Q,
    F,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub target: SweepTarget,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecovery {
    #[serde(default = "default_method")]
    pub method: Method,
    pub knowns: Option<Vec<Known>>,
    #[serde(default = "default_recovery_tol")]
    pub tol: f64,
    #[serde(default = "default_recovery_max_iter")]
    pub max_iter: usize,
    pub sweep: Option<Sweep>,
}

fn default_method() -> Method {
    Method::Iterative
}

fn default_recovery_tol() -> f64 {
    1e-10
}

fn default_recovery_max_iter() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub schema_version: String,
    pub scenario: Scenario,
    pub system: RawSystem,
    pub noise: RawNoise,
    #[serde(default)]
    pub observation: RawObservation,
    pub sizes: Sizes,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub em: RawEm,
    pub recovery: Option<RawRecovery>,
    pub output: Option<PathBuf>,
}

/// What a recovery run estimates from which knowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryPlan {
    /// infinite_a, knowns {B, R, Q}.
    AGivenBrq,
    /// infinite_a, knowns {A, B, R}.
    QGivenAbr,
    /// infinite_a, knowns {A, Q}.
    ControlWeightGivenAq,
    /// infinite_b, knowns {B}.
    AFromControls,
    /// infinite_b, knowns {B, R}.
    AqFromControls,
    /// finite, knowns {B, R} (both identity).
    FiniteAq,
}

const SUPPORTED: &[(Scenario, &[Known], RecoveryPlan)] = &[
    (Scenario::InfiniteA, &[Known::B, Known::Q, Known::R], RecoveryPlan::AGivenBrq),
    (Scenario::InfiniteA, &[Known::A, Known::B, Known::R], RecoveryPlan::QGivenAbr),
    (Scenario::InfiniteA, &[Known::A, Known::Q], RecoveryPlan::ControlWeightGivenAq),
    (Scenario::InfiniteB, &[Known::B], RecoveryPlan::AFromControls),
    (Scenario::InfiniteB, &[Known::B, Known::R], RecoveryPlan::AqFromControls),
    (Scenario::Finite, &[Known::B, Known::R], RecoveryPlan::FiniteAq),
];

fn supported_list(scenario: Scenario) -> String {
    SUPPORTED
        .iter()
        .filter(|(s, _, _)| *s == scenario)
        .map(|(_, k, _)| format!("{k:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub plan: RecoveryPlan,
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub sweep: Option<Sweep>,
}

#[derive(Debug, Clone)]
pub struct Em {
    pub max_iter: usize,
    pub tol: f64,
    pub learn_observation: bool,
    pub init: InitKind,
    pub init_f: Option<Matrix>,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scenario: Scenario,
    pub system: SystemParams,
    pub noise: NoiseParams,
    pub observation: ObservationParams,
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub em: Em,
    pub recovery: Option<Recovery>,
    pub output: PathBuf,
}

impl Experiment {
    pub fn horizon(&self) -> Horizon {
        match self.scenario {
            Scenario::Finite => Horizon::Finite(self.steps),
            _ => Horizon::Infinite,
        }
    }

    /// Known `C` (model a) or `C_x` (model b).
    pub fn c_x(&self) -> &Matrix {
        match &self.observation {
            ObservationParams::State { c } => c,
            ObservationParams::StateAndControl { c_x } => c_x,
        }
    }

    pub fn recovery(&self) -> Result<&Recovery> {
        self.recovery
            .as_ref()
            .ok_or_else(|| field("recovery", "section is required for recovery runs"))
    }
}

/// Reads and validates a config file. Relative file references resolve
/// against the config's directory.
pub fn load(path: &Path) -> Result<Experiment> {
    let text = fs::read_to_string(path).map_err(|e| field("<config>", format!("{}: {e}", path.display())))?;
    let raw = parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(raw, base)
}

pub fn parse(text: &str) -> Result<RawConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        field(if path == "." { "<config>".into() } else { path }, e.into_inner())
    })
}

struct Resolver<'a> {
    base: &'a Path,
}

impl Resolver<'_> {
    fn matrix(&self, spec: &MatrixSpec, path: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let m = match spec {
            MatrixSpec::Identity { identity } => {
                if rows != cols {
                    return Err(field(path, format!("identity shorthand needs a square field, this one is {rows}x{cols}")));
                }
                Matrix::identity(rows, cols) * *identity
            }
            _ => self.matrix_any(spec, path)?,
        };
        if m.shape() != (rows, cols) {
            return Err(field(path, format!("expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }

    fn spd(&self, spec: &MatrixSpec, path: &str, n: usize, definite: bool) -> Result<SpdMatrix> {
        let m = self.matrix(spec, path, n, n)?;
        let checked = if definite {
            SpdMatrix::positive_definite(m)
        } else {
            SpdMatrix::positive_semidefinite(m)
        };
        checked.map_err(|e| field(path, e))
    }

    /// Shape of a spec without a size hint, for the leading matrix of a system.
    fn shape_hint(&self, spec: &MatrixSpec, path: &str) -> Result<Option<(usize, usize)>> {
        Ok(match spec {
            MatrixSpec::Identity { .. } => None,
            MatrixSpec::Rows(r) => Some((r.len(), r.first().map_or(0, Vec::len))),
            MatrixSpec::File { .. } => {
                let m = self.matrix_any(spec, path)?;
                Some(m.shape())
            }
        })
    }

    fn matrix_any(&self, spec: &MatrixSpec, path: &str) -> Result<Matrix> {
        match spec {
            MatrixSpec::File { file } => {
                let full = self.base.join(file);
                let text = fs::read_to_string(&full).map_err(|e| field(path, format!("{}: {e}", full.display())))?;
                let r: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| field(path, format!("{}: {e}", full.display())))?;
                matops::from_rows(&r).map_err(|e| field(path, e))
            }
            MatrixSpec::Rows(r) => matops::from_rows(r).map_err(|e| field(path, e)),
            MatrixSpec::Identity { .. } => Err(field(path, "size cannot be inferred from identity shorthand")),
        }
    }
}

fn resolve_system(raw: &RawSystem, sizes: &Sizes, res: &Resolver) -> Result<SystemParams> {
    let inline = raw.a.is_some() || raw.b.is_some() || raw.q.is_some() || raw.r.is_some() || raw.q_t.is_some();
    match (&raw.preset, &raw.file, inline) {
        (Some(name), None, false) => match name.as_str() {
            "rotation" => Ok(scenarios::rotation_system()?),
            other => Err(field("system.preset", format!("unknown preset {other:?}; known: \"rotation\""))),
        },
        (None, Some(file), false) => {
            let full = res.base.join(file);
            let text = fs::read_to_string(&full).map_err(|e| field("system.file", format!("{}: {e}", full.display())))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let inner: RawSystem = serde_path_to_error::deserialize(de)
                .map_err(|e| field(format!("system.file:{}", e.path()), e.into_inner()))?;
            if inner.preset.is_some() || inner.file.is_some() {
                return Err(field("system.file", "referenced file must hold inline matrices"));
            }
            let nested = Resolver {
                base: full.parent().unwrap_or(Path::new(".")),
            };
            resolve_system(&inner, sizes, &nested)
        }
        (None, None, true) => {
            let a_spec = raw.a.as_ref().ok_or_else(|| field("system.a", "missing"))?;
            let b_spec = raw.b.as_ref().ok_or_else(|| field("system.b", "missing"))?;
            let n = match res.shape_hint(a_spec, "system.a")? {
                Some((rows, _)) => rows,
                None => sizes.n.ok_or_else(|| field("sizes.n", "required when system.a uses identity shorthand"))?,
            };
            let m = match res.shape_hint(b_spec, "system.b")? {
                Some((_, cols)) => cols,
                None => sizes.m.unwrap_or(n),
            };
            let a = res.matrix(a_spec, "system.a", n, n)?;
            let b = res.matrix(b_spec, "system.b", n, m)?;
            let q = res.spd(raw.q.as_ref().ok_or_else(|| field("system.q", "missing"))?, "system.q", n, false)?;
            let r = res.spd(raw.r.as_ref().ok_or_else(|| field("system.r", "missing"))?, "system.r", m, true)?;
            let mut sys = SystemParams::new(a, b, q, r)?;
            if let Some(qt) = &raw.q_t {
                sys = sys.with_terminal_cost(res.spd(qt, "system.q_t", n, false)?)?;
            }
            Ok(sys)
        }
        _ => Err(field("system", "give exactly one of \"preset\", \"file\" or inline matrices a, b, q, r")),
    }
}

fn is_identity(m: &Matrix) -> bool {
    m.is_square() && (m - Matrix::identity(m.nrows(), m.ncols())).abs().max() == 0.0
}

pub fn resolve(raw: RawConfig, base: &Path) -> Result<Experiment> {
    if raw.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(field(
            "schema_version",
            format!("expected {CONFIG_SCHEMA_VERSION:?}, got {:?}", raw.schema_version),
        ));
    }
    let res = Resolver { base };
    let system = resolve_system(&raw.system, &raw.sizes, &res)?;
    let (n, m) = (system.n(), system.m());
    if let Some(sn) = raw.sizes.n {
        if sn != n {
            return Err(field("sizes.n", format!("system has n={n}, sizes say {sn}")));
        }
    }
    if let Some(sm) = raw.sizes.m {
        if sm != m {
            return Err(field("sizes.m", format!("system has m={m}, sizes say {sm}")));
        }
    }
    if raw.sizes.steps == 0 {
        return Err(field("sizes.T", "must be at least 1"));
    }
    if raw.sizes.trajectories == 0 {
        return Err(field("sizes.N", "must be at least 1"));
    }

    let scenario = raw.scenario;
    let obs_dim = |spec: &Option<MatrixSpec>, path: &str| -> Result<Matrix> {
        match spec {
            None => Ok(Matrix::identity(raw.sizes.d.unwrap_or(n), n)),
            Some(s) => {
                let d = match res.shape_hint(s, path)? {
                    Some((rows, _)) => rows,
                    None => raw.sizes.d.unwrap_or(n),
                };
                res.matrix(s, path, d, n)
            }
        }
    };
    let w0 = res.spd(&raw.noise.w0, "noise.w0", n, false)?;
    let w = res.spd(&raw.noise.w, "noise.w", n, false)?;
    let (observation, noise, d) = match scenario {
        Scenario::InfiniteA | Scenario::Finite => {
            if raw.observation.c_x.is_some() {
                return Err(field("observation.c_x", format!("{scenario:?} observes states only; use observation.c")));
            }
            if raw.noise.v_x.is_some() || raw.noise.v_u.is_some() {
                return Err(field("noise", "v_x/v_u belong to infinite_b; use noise.v"));
            }
            let c = obs_dim(&raw.observation.c, "observation.c")?;
            let d = c.nrows();
            let v = res.spd(raw.noise.v.as_ref().ok_or_else(|| field("noise.v", "missing"))?, "noise.v", d, true)?;
            (ObservationParams::State { c }, NoiseParams::state(w0, w, v), d)
        }
        Scenario::InfiniteB => {
            if raw.observation.c.is_some() {
                return Err(field("observation.c", "infinite_b observes states and controls; use observation.c_x"));
            }
            if raw.noise.v.is_some() {
                return Err(field("noise.v", "infinite_b takes noise.v_x and noise.v_u"));
            }
            let c_x = obs_dim(&raw.observation.c_x, "observation.c_x")?;
            let dx = c_x.nrows();
            let v_x = res.spd(raw.noise.v_x.as_ref().ok_or_else(|| field("noise.v_x", "missing"))?, "noise.v_x", dx, true)?;
            let v_u = res.spd(raw.noise.v_u.as_ref().ok_or_else(|| field("noise.v_u", "missing"))?, "noise.v_u", m, true)?;
            (
                ObservationParams::StateAndControl { c_x },
                NoiseParams::state_and_control(w0, w, v_x, v_u),
                dx + m,
            )
        }
    };
    if let Some(sd) = raw.sizes.d {
        if sd != d {
            return Err(field("sizes.d", format!("observations have d={d}, sizes say {sd}")));
        }
    }

    if scenario == Scenario::Finite {
        if !is_identity(&system.b) || !is_identity(system.r.as_matrix()) {
            return Err(field("system", "finite scenario requires B = R = I"));
        }
        if system.q_t.as_ref().is_some_and(|qt| qt.as_matrix() != system.q.as_matrix()) {
            return Err(field("system.q_t", "finite scenario requires Q_T = Q"));
        }
        if raw.sizes.steps < 3 {
            return Err(field("sizes.T", "finite scenario needs T >= 3"));
        }
    }

    let em = resolve_em(&raw.em, scenario, n, &res)?;
    let recovery = raw.recovery.as_ref().map(|r| resolve_recovery(r, scenario, &system)).transpose()?;

    Ok(Experiment {
        scenario,
        system,
        noise,
        observation,
        steps: raw.sizes.steps,
        trajectories: raw.sizes.trajectories,
        seed: raw.seed,
        em,
        recovery,
        output: raw.output.unwrap_or_else(|| PathBuf::from("out")),
    })
}

fn resolve_em(raw: &RawEm, scenario: Scenario, n: usize, res: &Resolver) -> Result<Em> {
    if !(raw.tol >= 0.0 && raw.tol.is_finite()) {
        return Err(field("em.tol", "must be finite and non-negative"));
    }
    if raw.init == InitKind::Moment {
        if scenario != Scenario::InfiniteA {
            return Err(field("em.init", "\"moment\" is available for infinite_a only"));
        }
        if raw.learn_observation {
            return Err(field("em.init", "\"moment\" needs a known C (em.learn_observation = false)"));
        }
    }
    let init_f = match &raw.init_f {
        None => None,
        Some(_) if scenario == Scenario::Finite => {
            return Err(field("em.init_f", "finite scenario starts from time-varying dynamics; init_f is not supported"))
        }
        Some(spec) => Some(res.matrix(spec, "em.init_f", n, n)?),
    };
    Ok(Em {
        max_iter: raw.max_iter,
        tol: raw.tol,
        learn_observation: raw.learn_observation,
        init: raw.init,
        init_f,
    })
}

fn resolve_recovery(raw: &RawRecovery, scenario: Scenario, system: &SystemParams) -> Result<Recovery> {
    let knowns = raw.knowns.as_ref().ok_or_else(|| {
        field(
            "recovery.knowns",
            format!("missing; supported for {scenario:?}: {}", supported_list(scenario)),
        )
    })?;
    let set: BTreeSet<Known> = knowns.iter().copied().collect();
    let plan = SUPPORTED
        .iter()
        .find(|(s, k, _)| *s == scenario && k.iter().copied().collect::<BTreeSet<_>>() == set)
        .map(|(_, _, p)| *p)
        .ok_or_else(|| {
            field(
                "recovery.knowns",
                format!("{:?} is not supported for {scenario:?}; supported: {}", set, supported_list(scenario)),
            )
        })?;
    if raw.method == Method::Rootfind
        && plan == RecoveryPlan::AGivenBrq
        && (!is_identity(&system.b) || !is_identity(system.r.as_matrix()))
    {
        return Err(field("recovery.method", "\"rootfind\" requires B = R = I"));
    }
    if !(raw.tol > 0.0 && raw.tol.is_finite()) {
        return Err(field("recovery.tol", "must be finite and positive"));
    }
    if raw.max_iter == 0 {
        return Err(field("recovery.max_iter", "must be at least 1"));
    }
    if let Some(sweep) = &raw.sweep {
        if plan != RecoveryPlan::AGivenBrq {
            return Err(field("recovery.sweep", "perturbation sweeps apply to A recovery from {B, R, Q}"));
        }
        if sweep.eps.is_empty() {
            return Err(field("recovery.sweep.eps", "must not be empty"));
        }
        if let Some(i) = sweep.eps.iter().position(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(field(format!("recovery.sweep.eps[{i}]"), "must be finite and non-negative"));
        }
    }
    Ok(Recovery {
        plan,
        method: raw.method,
        tol: raw.tol,
        max_iter: raw.max_iter,
        sweep: raw.sweep.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "schema_version": CONFIG_SCHEMA_VERSION,
            "scenario": "infinite_a",
            "system": {"preset": "rotation"},
            "noise": {"w0": {"identity": 1.0}, "w": {"identity": 1.0}, "v": {"identity": 0.01}},
            "sizes": {"T": 10, "N": 5}
        })
    }

    fn load_value(v: &serde_json::Value) -> Result<Experiment> {
        resolve(parse(&v.to_string())?, Path::new("."))
    }

    fn path_of(err: ConfigError) -> String {
        match err {
            ConfigError::Field { path, .. } => path,
            other => panic!("expected a field error, got {other}"),
        }
    }

    #[test]
    fn minimal_config_resolves() {
        let exp = load_value(&minimal()).unwrap();
        assert_eq!(exp.system.n(), 4);
        assert_eq!(exp.c_x().shape(), (4, 4));
        assert_eq!(exp.horizon(), Horizon::Infinite);
        assert!(exp.recovery.is_none());
    }

    #[test]
    fn parse_errors_carry_field_paths() {
        let mut v = minimal();
        v["sizes"]["T"] = serde_json::json!("ten");
        assert_eq!(path_of(load_value(&v).unwrap_err()), "sizes.T");
        let mut v = minimal();
        v["em"] = serde_json::json!({"tol": 1e-9, "bogus": 1});
        assert!(path_of(load_value(&v).unwrap_err()).starts_with("em"));
    }

    #[test]
    fn shape_mismatch_is_reported_on_the_field() {
        let mut v = minimal();
        v["noise"]["w"] = serde_json::json!([[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(path_of(load_value(&v).unwrap_err()), "noise.w");
    }

    #[test]
    fn unsupported_knowns_list_alternatives() {
        let mut v = minimal();
        v["recovery"] = serde_json::json!({"knowns": ["Q"]});
        let msg = load_value(&v).unwrap_err().to_string();
        assert!(msg.starts_with("recovery.knowns"), "{msg}");
        assert!(msg.contains("[B, Q, R]") && msg.contains("[A, Q]"), "{msg}");
        v["recovery"] = serde_json::json!({"method": "iterative"});
        let msg = load_value(&v).unwrap_err().to_string();
        assert!(msg.contains("missing") && msg.contains("[A, B, R]"), "{msg}");
    }

    #[test]
    fn knowns_order_is_irrelevant() {
        let mut v = minimal();
        v["recovery"] = serde_json::json!({"knowns": ["R", "Q", "B"]});
        assert_eq!(load_value(&v).unwrap().recovery.unwrap().plan, RecoveryPlan::AGivenBrq);
    }

    #[test]
    fn non_stabilizable_system_is_a_core_error() {
        let mut v = minimal();
        v["system"] = serde_json::json!({
            "a": [[2.0, 0.0], [0.0, 0.5]], "b": [[0.0], [1.0]],
            "q": {"identity": 1.0}, "r": [[1.0]]
        });
        v["noise"] = serde_json::json!({"w0": {"identity": 1.0}, "w": {"identity": 1.0}, "v": {"identity": 1.0}});
        assert!(matches!(load_value(&v).unwrap_err(), ConfigError::Core(iocl_core::Error::NotStabilizable)));
    }

    #[test]
    fn scenario_specific_fields_are_enforced() {
        let mut v = minimal();
        v["scenario"] = serde_json::json!("infinite_b");
        assert_eq!(path_of(load_value(&v).unwrap_err()), "noise.v");
        v["noise"] = serde_json::json!({"w0": {"identity": 1.0}, "w": {"identity": 1.0}, "v_x": {"identity": 0.1}, "v_u": {"identity": 0.1}});
        let exp = load_value(&v).unwrap();
        assert_eq!(exp.c_x().shape(), (4, 4));
        v["em"] = serde_json::json!({"init": "moment"});
        assert_eq!(path_of(load_value(&v).unwrap_err()), "em.init");
    }
}
