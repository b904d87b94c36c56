//! Fixed-step RK4 propagation and truncation-depth convergence.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::BathDecomposition;
use crate::error::{Error, Result};
use crate::hierarchy::{
    conjugate_symmetry_defect, enumerate_layout, initial_hierarchy, HeomOperator, HierarchyState, DEFAULT_MEMORY_BUDGET,
};
use crate::operators::{expectation, ComplexMatrix, SystemModel};

/// Entry magnitude treated as a numerical blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_final: f64,
    pub record_stride: usize,
    pub observables: Vec<(String, ComplexMatrix)>,
    /// Byte cap for one hierarchy state.
    pub memory_budget: u128,
}

impl IntegrationConfig {
    pub fn new(dt: f64, t_final: f64, record_stride: usize) -> Self {
        Self {
            dt,
            t_final,
            record_stride,
            observables: Vec::new(),
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    pub fn with_observable(mut self, name: &str, obs: ComplexMatrix) -> Self {
        self.observables.push((name.to_string(), obs));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt".into(),
                reason: format!("must be positive, got {}", self.dt),
            });
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "t_final".into(),
                reason: format!("must be non-negative, got {}", self.t_final),
            });
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter {
                name: "record_stride".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Number of steps, `round(t_final / dt)`.
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Steps at which a sample is recorded: every stride plus the last step.
    pub fn record_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps: Vec<usize> = (0..=n).step_by(self.record_stride).collect();
        if steps.last() != Some(&n) {
            steps.push(n);
        }
        steps
    }
}

/// Recorded reduced dynamics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub reduced: Vec<ComplexMatrix>,
    pub observable_series: BTreeMap<String, Vec<Complex64>>,
    /// `|tr ρ - 1|` per sample.
    pub trace_defect: Vec<f64>,
    /// `max|ρ - ρ†|` per sample.
    pub herm_defect: Vec<f64>,
    /// Conjugate-symmetry defect of the whole hierarchy per sample (zero for stochastic runs).
    pub symmetry_defect: Vec<f64>,
    /// Standard errors of the observables (stochastic runs only).
    pub std_errors: Option<BTreeMap<String, Vec<f64>>>,
    /// Standard errors of the reduced-matrix entries (stochastic runs only).
    pub reduced_std_errors: Option<Vec<ComplexMatrix>>,
    /// Trajectories excluded after a blow-up (stochastic runs only).
    pub excluded: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn observable(&self, name: &str) -> Option<&[Complex64]> {
        self.observable_series.get(name).map(Vec::as_slice)
    }

    pub fn max_trace_defect(&self) -> f64 {
        self.trace_defect.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_herm_defect(&self) -> f64 {
        self.herm_defect.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_symmetry_defect(&self) -> f64 {
        self.symmetry_defect.iter().copied().fold(0.0, f64::max)
    }

    /// Max over samples of the entrywise max-abs difference of the reduced matrices.
    pub fn max_reduced_diff(&self, other: &Trajectory) -> f64 {
        self.reduced
            .iter()
            .zip(&other.reduced)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub(crate) fn record(
        &mut self,
        t: f64,
        rho: ComplexMatrix,
        observables: &[(String, ComplexMatrix)],
        symmetry_defect: f64,
    ) -> Result<()> {
        for (name, obs) in observables {
            let v = expectation(&rho, obs)?;
            self.observable_series.entry(name.clone()).or_default().push(v);
        }
        self.times.push(t);
        self.trace_defect.push((rho.trace() - Complex64::new(1.0, 0.0)).norm());
        self.herm_defect.push(rho.hermiticity_defect());
        self.symmetry_defect.push(symmetry_defect);
        self.reduced.push(rho);
        Ok(())
    }
}

fn check_blowup(values: &[Complex64], time: f64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for z in values {
        let m = z.norm();
        if !(m <= BLOWUP_THRESHOLD) {
            return Err(Error::NumericalBlowup {
                time,
                magnitude: if m.is_nan() { f64::INFINITY } else { m },
            });
        }
        worst = worst.max(m);
    }
    debug_assert!(worst <= BLOWUP_THRESHOLD);
    Ok(())
}

/// One classical RK4 step of `dρ/dt = rhs(ρ)`.
pub fn rk4_step<F>(mut rhs: F, state: &HierarchyState, dt: f64) -> Result<HierarchyState>
where
    F: FnMut(&HierarchyState) -> Result<HierarchyState>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt".into(),
            reason: format!("must be positive, got {dt}"),
        });
    }
    let h = Complex64::new(dt, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let k1 = rhs(state)?;
    let k2 = rhs(&state.linear_combination(one, &k1, h * 0.5))?;
    let k3 = rhs(&state.linear_combination(one, &k2, h * 0.5))?;
    let k4 = rhs(&state.linear_combination(one, &k3, h))?;
    let mut next = state.clone();
    let w = dt / 6.0;
    for (((x, a), (b, c)), d) in next
        .as_mut_slice()
        .iter_mut()
        .zip(k1.as_slice())
        .zip(k2.as_slice().iter().zip(k3.as_slice()))
        .zip(k4.as_slice())
    {
        *x += w * (a + 2.0 * (b + c) + d);
    }
    check_blowup(next.as_slice(), f64::NAN)?;
    Ok(next)
}

/// In-place RK4 driver over flat buffers.
pub struct Rk4Buffers {
    k: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
}

impl Rk4Buffers {
    pub fn new(len: usize) -> Self {
        let zero = vec![Complex64::new(0.0, 0.0); len];
        Self {
            k: [zero.clone(), zero.clone(), zero.clone(), zero.clone()],
            tmp: zero,
        }
    }

    pub fn step<F>(&mut self, rhs: &F, y: &mut [Complex64], dt: f64)
    where
        F: Fn(&[Complex64], &mut [Complex64]),
    {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        let half = 0.5 * dt;
        rhs(y, k1);
        for ((t, x), a) in tmp.iter_mut().zip(y.iter()).zip(k1.iter()) {
            *t = x + half * a;
        }
        rhs(tmp, k2);
        for ((t, x), a) in tmp.iter_mut().zip(y.iter()).zip(k2.iter()) {
            *t = x + half * a;
        }
        rhs(tmp, k3);
        for ((t, x), a) in tmp.iter_mut().zip(y.iter()).zip(k3.iter()) {
            *t = x + dt * a;
        }
        rhs(tmp, k4);
        let w = dt / 6.0;
        for (i, x) in y.iter_mut().enumerate() {
            *x += w * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        }
    }
}

/// Propagates an initial hierarchy with an arbitrary linear right-hand side.
pub fn evolve_with_rhs<F>(mut state: HierarchyState, config: &IntegrationConfig, rhs: F) -> Result<Trajectory>
where
    F: Fn(&[Complex64], &mut [Complex64]),
{
    config.validate()?;
    let mut traj = Trajectory::default();
    let record = config.record_steps();
    let mut next_record = record.iter().peekable();
    let n_steps = config.n_steps();
    let mut buffers = Rk4Buffers::new(state.as_slice().len());
    for step in 0..=n_steps {
        if next_record.peek() == Some(&&step) {
            next_record.next();
            traj.record(
                step as f64 * config.dt,
                state.matrix(0),
                &config.observables,
                conjugate_symmetry_defect(&state),
            )?;
        }
        if step == n_steps {
            break;
        }
        buffers.step(&rhs, state.as_mut_slice(), config.dt);
        check_blowup(state.as_slice(), (step + 1) as f64 * config.dt)?;
    }
    Ok(traj)
}

/// Runs the hierarchy truncated at `depth` from `rho0`.
pub fn evolve(
    model: &SystemModel,
    decomp: &BathDecomposition,
    depth: u32,
    rho0: &ComplexMatrix,
    config: &IntegrationConfig,
) -> Result<Trajectory> {
    config.validate()?;
    let layout = Arc::new(enumerate_layout(
        decomp.n_alpha(),
        decomp.n_alpha_tilde(),
        depth,
        model.dim(),
        config.memory_budget,
    )?);
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    let op = HeomOperator::new(Arc::clone(&layout), model, decomp)?;
    let state = initial_hierarchy(layout, rho0)?;
    evolve_with_rhs(state, config, |x, out| op.apply(x, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schedule: Vec<u32>,
    /// First depth whose difference to the next depth is below `tol`.
    pub chosen_depth: Option<u32>,
    pub tol: f64,
    /// `pairwise_max_diffs[k]` compares `schedule[k]` with `schedule[k + 1]`.
    pub pairwise_max_diffs: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

impl ConvergenceReport {
    /// Trajectory computed at the chosen depth.
    pub fn chosen_trajectory(&self) -> Option<&Trajectory> {
        let depth = self.chosen_depth?;
        let k = self.schedule.iter().position(|&d| d == depth)?;
        self.trajectories.get(k)
    }
}

/// Evolves at every depth in `schedule` and picks the first converged one.
pub fn converge_depth(
    model: &SystemModel,
    decomp: &BathDecomposition,
    rho0: &ComplexMatrix,
    config: &IntegrationConfig,
    schedule: &[u32],
    tol: f64,
) -> Result<ConvergenceReport> {
    if schedule.len() < 2 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter {
            name: "depth_schedule".into(),
            reason: "must be strictly increasing with at least two entries".into(),
        });
    }
    let trajectories = schedule
        .iter()
        .map(|&depth| evolve(model, decomp, depth, rho0, config))
        .collect::<Result<Vec<_>>>()?;
    let pairwise_max_diffs: Vec<f64> = trajectories.windows(2).map(|w| w[0].max_reduced_diff(&w[1])).collect();
    let chosen_depth = pairwise_max_diffs.iter().position(|&d| d < tol).map(|k| schedule[k]);
    let report = ConvergenceReport {
        schedule: schedule.to_vec(),
        chosen_depth,
        tol,
        pairwise_max_diffs,
        trajectories,
    };
    if report.chosen_depth.is_none() {
        return Err(Error::NotConverged {
            tol,
            report: Box::new(report),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchyLayout;
    use crate::operators::pauli;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar_layout() -> Arc<HierarchyLayout> {
        Arc::new(enumerate_layout(0, 0, 0, 1, DEFAULT_MEMORY_BUDGET).unwrap())
    }

    fn scalar(v: f64) -> HierarchyState {
        let m = ComplexMatrix::from_vec(1, vec![c(v, 0.0)]).unwrap();
        HierarchyState::from_matrices(scalar_layout(), &[m]).unwrap()
    }

    fn decay_rhs(s: &HierarchyState) -> Result<HierarchyState> {
        Ok(s.linear_combination(c(-1.0, 0.0), s, c(0.0, 0.0)))
    }

    #[test]
    fn zero_rhs_leaves_state_unchanged() {
        let s = scalar(0.7);
        let zero = |x: &HierarchyState| Ok(x.linear_combination(c(0.0, 0.0), x, c(0.0, 0.0)));
        let next = rk4_step(zero, &s, 0.1).unwrap();
        assert_eq!(next.as_slice(), s.as_slice());
    }

    #[test]
    fn scalar_decay_is_fourth_order() {
        let solve = |dt: f64| {
            let mut s = scalar(1.0);
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                s = rk4_step(decay_rhs, &s, dt).unwrap();
            }
            (s.as_slice()[0].re - (-1.0f64).exp()).abs()
        };
        let ratio = solve(0.1) / solve(0.05);
        assert!((14.0..18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn blowup_detected() {
        let s = scalar(1e11);
        let grow = |x: &HierarchyState| Ok(x.linear_combination(c(100.0, 0.0), x, c(0.0, 0.0)));
        assert!(matches!(
            rk4_step(grow, &s, 0.1).unwrap_err(),
            Error::NumericalBlowup { .. }
        ));
    }

    #[test]
    fn free_qubit_coherence() {
        let model = SystemModel::new(pauli::sigma_z().scale(c(0.5, 0.0)), pauli::sigma_z()).unwrap();
        let cfg = IntegrationConfig::new(0.01, 1.0, 100).with_observable("rho_eg", pauli::sigma_minus());
        let traj = evolve(&model, &BathDecomposition::empty(), 0, &pauli::plus_state(), &cfg).unwrap();
        let rho = traj.reduced.last().unwrap();
        let exact = 0.5 * c(0.0, -1.0).exp();
        assert!((rho.get(0, 1) - exact).norm() < 1e-8);
        assert_eq!(traj.observable("rho_eg").unwrap().last().unwrap(), &rho.get(0, 1));
        assert_eq!(traj.times, vec![0.0, 1.0]);
    }

    #[test]
    fn record_schedule_includes_final_step() {
        let cfg = IntegrationConfig::new(0.1, 1.05, 4);
        assert_eq!(cfg.n_steps(), 11);
        assert_eq!(cfg.record_steps(), vec![0, 4, 8, 11]);
    }

    #[test]
    fn convergence_with_empty_bath() {
        let model = SystemModel::new(pauli::sigma_z().scale(c(0.5, 0.0)), pauli::sigma_z()).unwrap();
        let cfg = IntegrationConfig::new(0.01, 1.0, 10);
        let report = converge_depth(
            &model,
            &BathDecomposition::empty(),
            &pauli::plus_state(),
            &cfg,
            &[2, 4],
            1e-12,
        )
        .unwrap();
        assert_eq!(report.chosen_depth, Some(2));
        assert_eq!(report.pairwise_max_diffs, vec![0.0]);
    }

    #[test]
    fn bad_schedule_rejected() {
        let model = SystemModel::new(pauli::sigma_z(), pauli::sigma_z()).unwrap();
        let cfg = IntegrationConfig::new(0.01, 0.1, 1);
        let e = converge_depth(
            &model,
            &BathDecomposition::empty(),
            &pauli::plus_state(),
            &cfg,
            &[4, 2],
            1.0,
        );
        assert!(matches!(e.unwrap_err(), Error::InvalidParameter { .. }));
    }
}
