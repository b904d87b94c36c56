use std::io::Write;
use std::path::{Path, PathBuf};

use heom_core::bath::{BcfKind, FitPoint};
use heom_core::integrator::{converge_depth, evolve, IntegrationConfig, Trajectory};
use heom_core::stochastic::{ensemble_mean, SdKernels};
use heom_core::validation::{run_all, CriterionResult};
use heom_core::Error as CoreError;
use serde::Serialize;

use crate::config::{BathSpec, DepthChoice, Observable, RunSpec};
use crate::error::{CliError, CliResult};

/// Command-line overrides applied on top of a [`RunSpec`].
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub memory_budget: Option<u128>,
}

impl Overrides {
    fn output_path(&self, spec: &RunSpec) -> Option<PathBuf> {
        self.output.clone().or_else(|| spec.output_path.clone())
    }

    fn require_output(&self, spec: &RunSpec) -> CliResult<PathBuf> {
        self.output_path(spec)
            .ok_or_else(|| CliError::validation("output.path", "missing; set it in the config or pass --output"))
    }
}

/// Writes `contents` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> CliResult<()> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Comma-separated table with a header row, `{:.16e}` numbers and LF endings.
#[derive(Debug, Default)]
pub struct CsvTable {
    header: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.header.push(name.into());
        self.columns.push(values);
    }

    pub fn render(&self) -> String {
        let rows = self.columns.iter().map(Vec::len).min().unwrap_or(0);
        let mut out = self.header.join(",");
        out.push('\n');
        for r in 0..rows {
            let line: Vec<String> = self.columns.iter().map(|c| format!("{:.16e}", c[r])).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn integration_config(spec: &RunSpec, overrides: &Overrides) -> IntegrationConfig {
    let mut cfg = IntegrationConfig::new(spec.dt, spec.t_final, spec.record_stride);
    for obs in &spec.observables {
        if let Some(op) = obs.operator() {
            cfg = cfg.with_observable(obs.name(), op);
        }
    }
    if let Some(b) = overrides.memory_budget {
        cfg.memory_budget = b;
    }
    cfg
}

fn trajectory_table(spec: &RunSpec, traj: &Trajectory) -> CsvTable {
    let mut table = CsvTable::default();
    table.push("t", traj.times.clone());
    for &obs in &spec.observables {
        match obs {
            Observable::TraceDefect => table.push("trace_defect", traj.trace_defect.clone()),
            Observable::HermDefect => table.push("herm_defect", traj.herm_defect.clone()),
            _ => {
                let series = traj.observable(obs.name()).expect("observable recorded");
                table.push(format!("{}_re", obs.name()), series.iter().map(|z| z.re).collect());
                if obs.is_complex() {
                    table.push(format!("{}_im", obs.name()), series.iter().map(|z| z.im).collect());
                }
                if let Some(se) = traj.std_errors.as_ref().and_then(|m| m.get(obs.name())) {
                    table.push(format!("{}_se", obs.name()), se.clone());
                }
            }
        }
    }
    if traj.std_errors.is_some() {
        table.push("excluded", vec![traj.excluded as f64; traj.times.len()]);
    }
    table
}

/// `heom run`: evolves at a fixed depth and writes the time series.
pub fn cmd_run(spec: &RunSpec, overrides: &Overrides) -> CliResult<PathBuf> {
    let path = overrides.require_output(spec)?;
    let depth = spec.fixed_depth()?;
    let traj = evolve(
        &spec.model()?,
        &spec.decomposition()?,
        depth,
        &spec.initial_state.matrix(),
        &integration_config(spec, overrides),
    )?;
    write_atomic(&path, &trajectory_table(spec, &traj).render())?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergeSummary {
    pub converged: bool,
    pub schedule: Vec<u32>,
    pub chosen_depth: Option<u32>,
    pub tol: f64,
    pub pairwise_max_diffs: Vec<f64>,
    pub max_trace_defect: f64,
    pub max_herm_defect: f64,
}

/// `heom converge`: runs the depth schedule. The chosen trajectory is written
/// to the output path when one is configured.
pub fn cmd_converge(spec: &RunSpec, overrides: &Overrides) -> CliResult<ConvergeSummary> {
    let DepthChoice::Schedule(schedule) = &spec.depth else {
        return Err(CliError::validation(
            "hierarchy.depth_schedule",
            "converge needs a depth schedule",
        ));
    };
    let result = converge_depth(
        &spec.model()?,
        &spec.decomposition()?,
        &spec.initial_state.matrix(),
        &integration_config(spec, overrides),
        schedule,
        spec.tol,
    );
    let (report, converged) = match result {
        Ok(r) => (r, true),
        Err(CoreError::NotConverged { report, .. }) => (*report, false),
        Err(e) => return Err(e.into()),
    };
    let summary = ConvergeSummary {
        converged,
        schedule: report.schedule.clone(),
        chosen_depth: report.chosen_depth,
        tol: report.tol,
        pairwise_max_diffs: report.pairwise_max_diffs.clone(),
        max_trace_defect: report
            .trajectories
            .iter()
            .map(|t| t.max_trace_defect())
            .fold(0.0, f64::max),
        max_herm_defect: report
            .trajectories
            .iter()
            .map(|t| t.max_herm_defect())
            .fold(0.0, f64::max),
    };
    if let (Some(path), Some(traj)) = (overrides.output_path(spec), report.chosen_trajectory()) {
        write_atomic(&path, &trajectory_table(spec, traj).render())?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcfSummary {
    pub channels: Vec<String>,
    pub matsubara_terms: usize,
    pub self_adjoint: bool,
    pub points: usize,
    pub max_abs_error: f64,
}

/// `heom bcf`: compares the exponential series against quadrature on the
/// recording grid and writes the sampled kernels.
pub fn cmd_bcf(spec: &RunSpec, overrides: &Overrides) -> CliResult<BcfSummary> {
    let path = overrides.require_output(spec)?;
    let BathSpec::Spectrum { density, beta } = &spec.bath else {
        return Err(CliError::validation("bath.kind", "bcf needs a spectral density"));
    };
    let decomp = spec.decomposition()?;
    let cfg = integration_config(spec, overrides);
    let mut grid: Vec<f64> = cfg.record_steps().iter().map(|&k| k as f64 * spec.dt).collect();
    if matches!(density, heom_core::bath::SpectralDensity::OhmicDrude { .. }) {
        grid.retain(|&t| t > 0.0);
    }
    let report = heom_core::bath::fit_report(&decomp, density, *beta, &grid)?;
    let channels: Vec<BcfKind> = if decomp.self_adjoint {
        vec![BcfKind::Xi]
    } else {
        vec![BcfKind::Alpha, BcfKind::AlphaTilde]
    };
    let mut table = CsvTable::default();
    table.push("t", grid.clone());
    for &kind in &channels {
        let pts: Vec<&FitPoint> = report.per_point.iter().filter(|p| p.channel == kind).collect();
        let name = kind.name();
        table.push(format!("{name}_series_re"), pts.iter().map(|p| p.series.re).collect());
        table.push(format!("{name}_series_im"), pts.iter().map(|p| p.series.im).collect());
        table.push(
            format!("{name}_quadrature_re"),
            pts.iter().map(|p| p.quadrature.re).collect(),
        );
        table.push(
            format!("{name}_quadrature_im"),
            pts.iter().map(|p| p.quadrature.im).collect(),
        );
        table.push(format!("{name}_abs_error"), pts.iter().map(|p| p.abs_error).collect());
    }
    write_atomic(&path, &table.render())?;
    Ok(BcfSummary {
        channels: channels.iter().map(|k| k.name().to_string()).collect(),
        matsubara_terms: spec.matsubara_terms,
        self_adjoint: decomp.self_adjoint,
        points: grid.len(),
        max_abs_error: report.max_abs_error,
    })
}

/// `heom stochastic`: ensemble mean with standard errors.
pub fn cmd_stochastic(spec: &RunSpec, overrides: &Overrides) -> CliResult<PathBuf> {
    let path = overrides.require_output(spec)?;
    let sto = spec
        .stochastic
        .as_ref()
        .ok_or_else(|| CliError::validation("stochastic", "missing section"))?;
    let seed = overrides.seed.unwrap_or(sto.seed);
    let kernels = SdKernels::from_decomposition(&spec.decomposition()?);
    let traj = ensemble_mean(
        &spec.model()?,
        &kernels,
        &spec.initial_state.matrix(),
        &integration_config(spec, overrides),
        sto.n_traj,
        seed,
    )?;
    write_atomic(&path, &trajectory_table(spec, &traj).render())?;
    Ok(path)
}

/// `heom validate`: runs the acceptance suite.
pub fn cmd_validate() -> Vec<CriterionResult> {
    run_all()
}

/// Fixed-layout text table of criterion results.
pub fn render_validation(results: &[CriterionResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&r.line());
        out.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} passed, {failed} failed\n", results.len() - failed));
    out
}
