//! TOML run specifications.
//!
//! ```toml
//! [model]
//! kind = "spontaneous_decay"
//! params = { omega_0 = 1.0 }
//!
//! [bath]
//! kind = "lorentz"
//! params = { gamma = 5.0, lambda = 0.2, omega_0 = 1.0 }
//! beta = "inf"
//!
//! [hierarchy]
//! depth = 8
//!
//! [integrator]
//! t_final = 10.0
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use heom_core::bath::{decompose, BathDecomposition, DecomposeSettings, SpectralDensity};
use heom_core::operators::{build_model, pauli, ComplexMatrix, ModelKind, SystemModel};
use heom_core::Error as CoreError;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_RECORD_STRIDE: usize = 10;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MATSUBARA_TERMS: usize = 2;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    model: Option<RawModel>,
    bath: Option<RawBath>,
    decomposition: Option<RawDecomposition>,
    hierarchy: Option<RawHierarchy>,
    integrator: Option<RawIntegrator>,
    stochastic: Option<RawStochastic>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    initial_state: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBath {
    kind: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    beta: Option<toml::Value>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecomposition {
    matsubara_terms: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHierarchy {
    depth: Option<i64>,
    depth_schedule: Option<Vec<i64>>,
    tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIntegrator {
    dt: Option<f64>,
    t_final: Option<f64>,
    record_stride: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStochastic {
    n_traj: Option<i64>,
    seed: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<PathBuf>,
    observables: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Excited,
    Ground,
    Plus,
    Mixed,
}

impl InitialState {
    pub fn matrix(self) -> ComplexMatrix {
        match self {
            InitialState::Excited => pauli::excited_state(),
            InitialState::Ground => pauli::ground_state(),
            InitialState::Plus => pauli::plus_state(),
            InitialState::Mixed => pauli::maximally_mixed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    SigmaX,
    SigmaY,
    SigmaZ,
    RhoEe,
    RhoEg,
    TraceDefect,
    HermDefect,
}

impl Observable {
    pub const ALL: [Observable; 7] = [
        Observable::SigmaX,
        Observable::SigmaY,
        Observable::SigmaZ,
        Observable::RhoEe,
        Observable::RhoEg,
        Observable::TraceDefect,
        Observable::HermDefect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::SigmaX => "sigma_x",
            Observable::SigmaY => "sigma_y",
            Observable::SigmaZ => "sigma_z",
            Observable::RhoEe => "rho_ee",
            Observable::RhoEg => "rho_eg",
            Observable::TraceDefect => "trace_defect",
            Observable::HermDefect => "herm_defect",
        }
    }

    /// Operator `A` with `tr(ρA)` equal to the observable; `None` for diagnostics.
    pub fn operator(self) -> Option<ComplexMatrix> {
        match self {
            Observable::SigmaX => Some(pauli::sigma_x()),
            Observable::SigmaY => Some(pauli::sigma_y()),
            Observable::SigmaZ => Some(pauli::sigma_z()),
            Observable::RhoEe => Some(pauli::excited_projector()),
            // tr(ρ σ_-) = ρ_eg
            Observable::RhoEg => Some(pauli::sigma_minus()),
            Observable::TraceDefect | Observable::HermDefect => None,
        }
    }

    /// Only `rho_eg` is not Hermitian.
    pub fn is_complex(self) -> bool {
        self == Observable::RhoEg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BathSpec {
    None,
    Spectrum { density: SpectralDensity, beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DepthChoice {
    Fixed(u32),
    Schedule(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticSpec {
    pub n_traj: usize,
    pub seed: u64,
}

/// Validated run specification with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model_kind: ModelKind,
    pub model_params: BTreeMap<String, f64>,
    pub initial_state: InitialState,
    pub bath: BathSpec,
    pub matsubara_terms: usize,
    pub depth: DepthChoice,
    pub tol: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    pub stochastic: Option<StochasticSpec>,
    pub output_path: Option<PathBuf>,
    pub observables: Vec<Observable>,
}

impl RunSpec {
    pub fn model(&self) -> CliResult<SystemModel> {
        build_model(self.model_kind, &self.model_params).map_err(|e| match e {
            CoreError::MissingParameter(p) => CliError::validation(&format!("model.params.{p}"), "missing"),
            other => CliError::validation("model.params", other.to_string()),
        })
    }

    /// Bath decomposition in the form the coupling operator requires.
    pub fn decomposition(&self) -> CliResult<BathDecomposition> {
        match &self.bath {
            BathSpec::None => Ok(BathDecomposition::empty()),
            BathSpec::Spectrum { density, beta } => {
                let settings = DecomposeSettings {
                    matsubara_terms: self.matsubara_terms,
                    self_adjoint: self.model()?.coupling_is_self_adjoint(),
                };
                Ok(decompose(density, *beta, settings)?)
            }
        }
    }

    pub fn fixed_depth(&self) -> CliResult<u32> {
        match self.depth {
            DepthChoice::Fixed(d) => Ok(d),
            DepthChoice::Schedule(_) => Err(CliError::validation(
                "hierarchy.depth",
                "this command needs a fixed depth, not depth_schedule",
            )),
        }
    }
}

fn parse_kind<T: Copy>(field: &str, value: &str, options: &[(&str, T)]) -> CliResult<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            CliError::validation(
                field,
                format!("unknown value \"{value}\", expected one of {}", names.join(", ")),
            )
        })
}

fn require_param(params: &BTreeMap<String, f64>, section: &str, name: &str) -> CliResult<f64> {
    params
        .get(name)
        .copied()
        .ok_or_else(|| CliError::validation(&format!("{section}.params.{name}"), "missing"))
}

fn reject_extra_params(params: &BTreeMap<String, f64>, section: &str, allowed: &[&str]) -> CliResult<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(CliError::validation(
            &format!("{section}.params.{k}"),
            "unknown parameter",
        )),
        None => Ok(()),
    }
}

fn parse_beta(value: Option<toml::Value>) -> CliResult<f64> {
    let beta = match value {
        None => return Err(CliError::validation("bath.beta", "missing")),
        Some(toml::Value::String(s)) if s.eq_ignore_ascii_case("inf") => f64::INFINITY,
        Some(toml::Value::Float(f)) => f,
        Some(toml::Value::Integer(i)) => i as f64,
        Some(other) => {
            return Err(CliError::validation(
                "bath.beta",
                format!("expected a number or \"inf\", got {other}"),
            ))
        }
    };
    if beta > 0.0 {
        Ok(beta)
    } else {
        Err(CliError::validation("bath.beta", "must be strictly positive"))
    }
}

fn positive_f64(field: &str, value: f64) -> CliResult<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::validation(
            field,
            format!("must be finite and strictly positive, got {value}"),
        ))
    }
}

fn non_negative_int<T: TryFrom<i64>>(field: &str, value: i64) -> CliResult<T> {
    T::try_from(value).map_err(|_| CliError::validation(field, format!("must be a non-negative integer, got {value}")))
}

fn parse_bath(raw: Option<RawBath>) -> CliResult<BathSpec> {
    let raw = raw.ok_or_else(|| CliError::validation("bath", "missing section"))?;
    let kind = raw.kind.ok_or_else(|| CliError::validation("bath.kind", "missing"))?;
    let kind = parse_kind("bath.kind", &kind, &[("none", 0u8), ("ohmic_drude", 1), ("lorentz", 2)])?;
    let map_core = |e: CoreError| match e {
        CoreError::InvalidParameter { name, reason } => CliError::validation(&format!("bath.params.{name}"), reason),
        other => CliError::Core(other),
    };
    let density = match kind {
        0 => {
            reject_extra_params(&raw.params, "bath", &[])?;
            return Ok(BathSpec::None);
        }
        1 => {
            reject_extra_params(&raw.params, "bath", &["chi", "omega_c"])?;
            SpectralDensity::ohmic_drude(
                require_param(&raw.params, "bath", "chi")?,
                require_param(&raw.params, "bath", "omega_c")?,
            )
            .map_err(map_core)?
        }
        _ => {
            reject_extra_params(&raw.params, "bath", &["gamma", "lambda", "omega_0"])?;
            SpectralDensity::lorentz(
                require_param(&raw.params, "bath", "gamma")?,
                require_param(&raw.params, "bath", "lambda")?,
                require_param(&raw.params, "bath", "omega_0")?,
            )
            .map_err(map_core)?
        }
    };
    Ok(BathSpec::Spectrum {
        density,
        beta: parse_beta(raw.beta)?,
    })
}

fn default_observables(kind: ModelKind) -> Vec<Observable> {
    let main = match kind {
        ModelKind::PureDephasing => Observable::SigmaX,
        ModelKind::SpontaneousDecay => Observable::RhoEe,
        ModelKind::SpinBoson => Observable::SigmaZ,
    };
    vec![main, Observable::TraceDefect, Observable::HermDefect]
}

fn toml_line(text: &str, err: &toml::de::Error) -> Option<usize> {
    err.span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
}

/// Parses and validates a TOML run specification.
pub fn parse_config(text: &str) -> CliResult<RunSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| CliError::Parse {
        line: toml_line(text, &e),
        message: e.message().to_string(),
    })?;

    let model = raw
        .model
        .ok_or_else(|| CliError::validation("model", "missing section"))?;
    let kind = model
        .kind
        .ok_or_else(|| CliError::validation("model.kind", "missing"))?;
    let model_kind = parse_kind(
        "model.kind",
        &kind,
        &[
            ("pure_dephasing", ModelKind::PureDephasing),
            ("spontaneous_decay", ModelKind::SpontaneousDecay),
            ("spin_boson", ModelKind::SpinBoson),
        ],
    )?;
    let allowed: &[&str] = match model_kind {
        ModelKind::SpinBoson => &["delta"],
        _ => &["omega_0"],
    };
    reject_extra_params(&model.params, "model", allowed)?;
    for name in allowed {
        require_param(&model.params, "model", name)?;
    }
    let initial_state = match model.initial_state {
        Some(s) => parse_kind(
            "model.initial_state",
            &s,
            &[
                ("excited", InitialState::Excited),
                ("ground", InitialState::Ground),
                ("plus", InitialState::Plus),
                ("mixed", InitialState::Mixed),
            ],
        )?,
        None if model_kind == ModelKind::PureDephasing => InitialState::Plus,
        None => InitialState::Excited,
    };

    let bath = parse_bath(raw.bath)?;
    let matsubara_terms = match raw.decomposition.and_then(|d| d.matsubara_terms) {
        Some(n) => non_negative_int("decomposition.matsubara_terms", n)?,
        None => DEFAULT_MATSUBARA_TERMS,
    };

    let hierarchy = raw.hierarchy.unwrap_or_default();
    let depth = match (hierarchy.depth, hierarchy.depth_schedule) {
        (Some(_), Some(_)) => {
            return Err(CliError::validation(
                "hierarchy.depth_schedule",
                "give either depth or depth_schedule, not both",
            ))
        }
        (None, None) => {
            return Err(CliError::validation(
                "hierarchy.depth",
                "one of depth or depth_schedule is required",
            ))
        }
        (Some(d), None) => DepthChoice::Fixed(non_negative_int("hierarchy.depth", d)?),
        (None, Some(s)) => {
            let s = s
                .into_iter()
                .map(|d| non_negative_int("hierarchy.depth_schedule", d))
                .collect::<CliResult<Vec<u32>>>()?;
            if s.len() < 2 || s.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::validation(
                    "hierarchy.depth_schedule",
                    "needs at least two strictly increasing depths",
                ));
            }
            DepthChoice::Schedule(s)
        }
    };
    let tol = positive_f64("hierarchy.tol", hierarchy.tol.unwrap_or(DEFAULT_TOL))?;

    let integ = raw.integrator.unwrap_or_default();
    let dt = positive_f64("integrator.dt", integ.dt.unwrap_or(DEFAULT_DT))?;
    let t_final = positive_f64(
        "integrator.t_final",
        integ
            .t_final
            .ok_or_else(|| CliError::validation("integrator.t_final", "missing"))?,
    )?;
    let record_stride: usize = match integ.record_stride {
        Some(s) => non_negative_int("integrator.record_stride", s)?,
        None => DEFAULT_RECORD_STRIDE,
    };
    if record_stride == 0 {
        return Err(CliError::validation("integrator.record_stride", "must be at least 1"));
    }
    if t_final < dt {
        return Err(CliError::validation(
            "integrator.t_final",
            "must be at least one time step",
        ));
    }

    let stochastic = match raw.stochastic {
        None => None,
        Some(s) => {
            let n_traj: usize = non_negative_int(
                "stochastic.n_traj",
                s.n_traj
                    .ok_or_else(|| CliError::validation("stochastic.n_traj", "missing"))?,
            )?;
            if n_traj < 2 {
                return Err(CliError::validation(
                    "stochastic.n_traj",
                    "at least two trajectories are needed for a standard error",
                ));
            }
            let seed = non_negative_int("stochastic.seed", s.seed.unwrap_or(0))?;
            Some(StochasticSpec { n_traj, seed })
        }
    };

    let output = raw.output.unwrap_or_default();
    let observables = match output.observables {
        None => default_observables(model_kind),
        Some(names) => {
            let mut obs = Vec::with_capacity(names.len());
            for name in names {
                let o = parse_kind("output.observables", &name, &Observable::ALL.map(|o| (o.name(), o)))?;
                if obs.contains(&o) {
                    return Err(CliError::validation(
                        "output.observables",
                        format!("\"{name}\" listed twice"),
                    ));
                }
                obs.push(o);
            }
            obs
        }
    };

    Ok(RunSpec {
        model_kind,
        model_params: model.params,
        initial_state,
        bath,
        matsubara_terms,
        depth,
        tol,
        dt,
        t_final,
        record_stride,
        stochastic,
        output_path: output.path,
        observables,
    })
}
