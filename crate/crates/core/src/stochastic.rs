//! Stochastic-decoupling (SD) trajectories: colored mean fields driven by
//! white noise, Euler–Maruyama propagation of the stochastic Liouville
//! equation and ensemble statistics.
//!
//! Every real channel `ν` has unit intensity (sample variance `1/dt`), and
//! complex increments are `Δw = (ν_a + iν_b)·dt`, so `M{ΔwΔw*} = 2dt`.
//!
//! Self-adjoint coupling (channels `ν₁..ν₄`):
//! `dρ̃ = -i[H + ḡS, ρ̃]dt - (i/2)[S, ρ̃]dw₁ + (1/2){S, ρ̃}dw₂*` with
//! `ḡ = ξ_R ⊛ (ν₁ - iν₄) + ξ_I ⊛ (ν₂ + iν₃)`, `dw₁ = (ν₁ + iν₄)dt`,
//! `dw₂ = (ν₂ + iν₃)dt`.
//!
//! General coupling (channels `ν_ij`, `i = 1..4`, `j = 1, 2`):
//! `dρ̃ = -i[H + ḡ₁S + ḡ₂S†, ρ̃]dt - (i/2)[S, ρ̃]dw₁₁ - (i/2)[S†, ρ̃]dw₁₂
//!       + (1/2){S, ρ̃}dw₂₁* + (1/2){S†, ρ̃}dw₂₂*` with
//! `ḡ₁ = (i/2)[ά ⊛ (ν₂₂ + iν₃₂) - ὰ ⊛ (iν₁₂ + ν₄₂)]`,
//! `ḡ₂ = -(i/2)[ά* ⊛ (ν₂₁ + iν₃₁) + ὰ* ⊛ (iν₁₁ + ν₄₁)]`,
//! `dw₁ⱼ = (ν₁ⱼ + iν₄ⱼ)dt`, `dw₂ⱼ = (ν₂ⱼ + iν₃ⱼ)dt`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathDecomposition, ExponentialSeries};
use crate::error::{Error, Result};
use crate::integrator::{IntegrationConfig, Trajectory, BLOWUP_THRESHOLD};
use crate::operators::{expectation, matmul_acc, ComplexMatrix, SystemModel};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Trajectories simulated per parallel batch; results are reduced in index order.
const BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt".into(),
                reason: format!("must be positive, got {dt}"),
            });
        }
        if steps == 0 {
            return Err(Error::InvalidParameter {
                name: "steps".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self { dt, steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCase {
    General,
    SelfAdjoint,
}

impl NoiseCase {
    pub fn channels(self) -> usize {
        match self {
            NoiseCase::General => 8,
            NoiseCase::SelfAdjoint => 4,
        }
    }
}

/// Real white-noise samples for one trajectory.
///
/// Channel `c` of the general case is `ν_{ij}` with `c = 2(i-1) + (j-1)`;
/// the self-adjoint case stores `ν₁..ν₄` as channels `0..4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePaths {
    pub grid: TimeGrid,
    pub case: NoiseCase,
    pub seed: u64,
    pub stream: u64,
    /// `nu[c][k]`: channel `c` at step `k`.
    pub nu: Vec<Vec<f64>>,
}

impl NoisePaths {
    pub fn zeros(grid: TimeGrid, case: NoiseCase) -> Self {
        Self {
            grid,
            case,
            seed: 0,
            stream: 0,
            nu: vec![vec![0.0; grid.steps]; case.channels()],
        }
    }

    /// `ν_{ij}` (general case, 1-based labels).
    pub fn general(&self, i: usize, j: usize) -> &[f64] {
        debug_assert_eq!(self.case, NoiseCase::General);
        &self.nu[2 * (i - 1) + (j - 1)]
    }

    /// `ν_i` (self-adjoint case, 1-based label).
    pub fn merged(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.case, NoiseCase::SelfAdjoint);
        &self.nu[i - 1]
    }

    /// Complex increments `Δw = (ν_a + iν_b)·dt` in this case's channel assignment.
    pub fn increments(&self) -> Vec<(String, Vec<Complex64>)> {
        let dt = self.grid.dt;
        let combine = |a: &[f64], b: &[f64]| -> Vec<Complex64> {
            a.iter().zip(b).map(|(x, y)| Complex64::new(*x, *y) * dt).collect()
        };
        match self.case {
            NoiseCase::SelfAdjoint => vec![
                ("w1".into(), combine(self.merged(1), self.merged(4))),
                ("w2".into(), combine(self.merged(2), self.merged(3))),
            ],
            NoiseCase::General => vec![
                ("w11".into(), combine(self.general(1, 1), self.general(4, 1))),
                ("w12".into(), combine(self.general(1, 2), self.general(4, 2))),
                ("w21".into(), combine(self.general(2, 1), self.general(3, 1))),
                ("w22".into(), combine(self.general(2, 2), self.general(3, 2))),
            ],
        }
    }
}

/// Draws unit-intensity Gaussian noise for trajectory `stream` of `seed`.
///
/// Each `(seed, stream)` pair owns an independent ChaCha stream, so a path
/// does not depend on which other paths were generated or in what order.
pub fn sample_noise_paths_stream(seed: u64, stream: u64, grid: TimeGrid, case: NoiseCase) -> NoisePaths {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let scale = 1.0 / grid.dt.sqrt();
    let channels = case.channels();
    let mut nu = vec![vec![0.0; grid.steps]; channels];
    for k in 0..grid.steps {
        for ch in nu.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            ch[k] = z * scale;
        }
    }
    NoisePaths {
        grid,
        case,
        seed,
        stream,
        nu,
    }
}

pub fn sample_noise_paths(seed: u64, grid: TimeGrid, case: NoiseCase) -> NoisePaths {
    sample_noise_paths_stream(seed, 0, grid, case)
}

/// Bath kernels driving the mean fields, as exponential series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SdKernels {
    SelfAdjoint {
        xi_r: ExponentialSeries,
        xi_i: ExponentialSeries,
    },
    General {
        acute: ExponentialSeries,
        grave: ExponentialSeries,
    },
}

impl SdKernels {
    pub fn from_decomposition(decomp: &BathDecomposition) -> Self {
        if decomp.self_adjoint {
            let xi = decomp.xi_series();
            SdKernels::SelfAdjoint {
                xi_r: xi.real_part(),
                xi_i: xi.imag_part(),
            }
        } else {
            SdKernels::General {
                acute: decomp.acute_series(),
                grave: decomp.grave_series(),
            }
        }
    }

    pub fn case(&self) -> NoiseCase {
        match self {
            SdKernels::SelfAdjoint { .. } => NoiseCase::SelfAdjoint,
            SdKernels::General { .. } => NoiseCase::General,
        }
    }
}

/// Mean fields on the grid; `g2` is empty in the self-adjoint case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSeries {
    pub grid: TimeGrid,
    pub g1: Vec<Complex64>,
    pub g2: Vec<Complex64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionMethod {
    /// `O(steps²)` direct left-endpoint sum.
    Direct,
    /// `O(steps·terms)` recursion exploiting the exponential kernels.
    Recursive,
}

/// `out_k = Σ_{m<k} dt·K(t_k - t_m)·x_m` for `k = 0..=steps`.
fn convolve(series: &ExponentialSeries, x: &[Complex64], dt: f64, method: ConvolutionMethod) -> Vec<Complex64> {
    let steps = x.len();
    let mut out = vec![ZERO; steps + 1];
    match method {
        ConvolutionMethod::Direct => {
            let kernel: Vec<Complex64> = (0..=steps).map(|k| series.eval(k as f64 * dt)).collect();
            for k in 1..=steps {
                let mut acc = ZERO;
                for m in 0..k {
                    acc += kernel[k - m] * x[m];
                }
                out[k] = acc * dt;
            }
        }
        ConvolutionMethod::Recursive => {
            for term in series.terms() {
                let decay = (-term.kappa * dt).exp();
                let mut h = ZERO;
                for k in 0..steps {
                    h = decay * (h + x[k] * dt);
                    out[k + 1] += term.zeta * h;
                }
            }
        }
    }
    out
}

fn combo(a: &[f64], wa: Complex64, b: &[f64], wb: Complex64) -> Vec<Complex64> {
    a.iter().zip(b).map(|(x, y)| wa * *x + wb * *y).collect()
}

/// Bath-induced mean fields for one noise realisation.
pub fn mean_field_with(kernels: &SdKernels, noises: &NoisePaths, method: ConvolutionMethod) -> Result<MeanFieldSeries> {
    if kernels.case() != noises.case {
        return Err(Error::UnsupportedCombination(format!(
            "{:?} kernels with {:?} noise",
            kernels.case(),
            noises.case
        )));
    }
    let dt = noises.grid.dt;
    let one = Complex64::new(1.0, 0.0);
    let half_i = Complex64::new(0.0, 0.5);
    match kernels {
        SdKernels::SelfAdjoint { xi_r, xi_i } => {
            let a = convolve(xi_r, &combo(noises.merged(1), one, noises.merged(4), -I), dt, method);
            let b = convolve(xi_i, &combo(noises.merged(2), one, noises.merged(3), I), dt, method);
            Ok(MeanFieldSeries {
                grid: noises.grid,
                g1: a.iter().zip(&b).map(|(x, y)| x + y).collect(),
                g2: Vec::new(),
            })
        }
        SdKernels::General { acute, grave } => {
            let acute_c = acute.conj();
            let grave_c = grave.conj();
            let a1 = convolve(
                acute,
                &combo(noises.general(2, 2), one, noises.general(3, 2), I),
                dt,
                method,
            );
            let b1 = convolve(
                grave,
                &combo(noises.general(1, 2), I, noises.general(4, 2), one),
                dt,
                method,
            );
            let a2 = convolve(
                &acute_c,
                &combo(noises.general(2, 1), one, noises.general(3, 1), I),
                dt,
                method,
            );
            let b2 = convolve(
                &grave_c,
                &combo(noises.general(1, 1), I, noises.general(4, 1), one),
                dt,
                method,
            );
            Ok(MeanFieldSeries {
                grid: noises.grid,
                g1: a1.iter().zip(&b1).map(|(x, y)| half_i * (x - y)).collect(),
                g2: a2.iter().zip(&b2).map(|(x, y)| -half_i * (x + y)).collect(),
            })
        }
    }
}

pub fn mean_field(kernels: &SdKernels, noises: &NoisePaths) -> Result<MeanFieldSeries> {
    mean_field_with(kernels, noises, ConvolutionMethod::Recursive)
}

struct SdStepper {
    n: usize,
    k_op: Vec<Complex64>,
    s: Vec<Complex64>,
    s_adj: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl SdStepper {
    fn new(model: &SystemModel) -> Self {
        let n = model.dim();
        Self {
            n,
            k_op: model.hamiltonian().scale(-I).into_vec(),
            s: model.coupling().as_slice().to_vec(),
            s_adj: model.coupling().adjoint().into_vec(),
            scratch: vec![ZERO; n * n],
        }
    }

    /// `out += a·Xρ + b·ρX`
    fn sandwich(&self, x: &[Complex64], a: Complex64, b: Complex64, rho: &[Complex64], out: &mut [Complex64]) {
        if a != ZERO {
            matmul_acc(self.n, a, x, rho, out);
        }
        if b != ZERO {
            matmul_acc(self.n, b, rho, x, out);
        }
    }

    /// One Euler–Maruyama step. `dw` holds `(dw_commutator, dw_anticommutator)`
    /// for `S` and, in the general case, for `S†`.
    fn step(
        &mut self,
        rho: &mut [Complex64],
        dt: f64,
        g1: Complex64,
        g2: Option<Complex64>,
        dw_s: (Complex64, Complex64),
        dw_sdag: Option<(Complex64, Complex64)>,
    ) {
        let mut delta = std::mem::take(&mut self.scratch);
        delta.fill(ZERO);
        let dt_c = Complex64::new(dt, 0.0);
        // -i[H, ρ]dt = Kρdt - ρKdt with K = -iH.
        self.sandwich(&self.k_op, dt_c, -dt_c, rho, &mut delta);
        // -i[ḡS, ρ]dt - (i/2)[S, ρ]dw + (1/2){S, ρ}dw₂*
        let (dw_c, dw_a) = dw_s;
        let comm = -I * g1 * dt - 0.5 * I * dw_c;
        let anti = 0.5 * dw_a.conj();
        self.sandwich(&self.s, comm + anti, -comm + anti, rho, &mut delta);
        if let (Some(g2), Some((dw_c, dw_a))) = (g2, dw_sdag) {
            let comm = -I * g2 * dt - 0.5 * I * dw_c;
            let anti = 0.5 * dw_a.conj();
            self.sandwich(&self.s_adj, comm + anti, -comm + anti, rho, &mut delta);
        }
        for (r, d) in rho.iter_mut().zip(&delta) {
            *r += d;
        }
        self.scratch = delta;
    }
}

fn check_case(model: &SystemModel, kernels: &SdKernels) -> Result<()> {
    if matches!(kernels, SdKernels::SelfAdjoint { .. }) && !model.coupling_is_self_adjoint() {
        return Err(Error::UnsupportedCombination(
            "self-adjoint noise scheme with a non-self-adjoint coupling operator".into(),
        ));
    }
    Ok(())
}

/// Propagates one trajectory, calling `visit(k, ρ̃_k)` for `k = 0..=steps`.
fn propagate<V: FnMut(usize, &[Complex64]) -> Result<()>>(
    model: &SystemModel,
    kernels: &SdKernels,
    noises: &NoisePaths,
    rho0: &ComplexMatrix,
    mut visit: V,
) -> Result<()> {
    check_case(model, kernels)?;
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    let fields = mean_field(kernels, noises)?;
    let dt = noises.grid.dt;
    let mut stepper = SdStepper::new(model);
    let mut rho = rho0.as_slice().to_vec();
    visit(0, &rho)?;
    for k in 0..noises.grid.steps {
        match noises.case {
            NoiseCase::SelfAdjoint => {
                let dw1 = Complex64::new(noises.nu[0][k], noises.nu[3][k]) * dt;
                let dw2 = Complex64::new(noises.nu[1][k], noises.nu[2][k]) * dt;
                stepper.step(&mut rho, dt, fields.g1[k], None, (dw1, dw2), None);
            }
            NoiseCase::General => {
                let w = |a: usize, b: usize| Complex64::new(noises.nu[a][k], noises.nu[b][k]) * dt;
                // ν₁ⱼ, ν₂ⱼ, ν₃ⱼ, ν₄ⱼ live in channels 2(i-1) + (j-1).
                let (dw11, dw12) = (w(0, 6), w(1, 7));
                let (dw21, dw22) = (w(2, 4), w(3, 5));
                stepper.step(
                    &mut rho,
                    dt,
                    fields.g1[k],
                    Some(fields.g2[k]),
                    (dw11, dw21),
                    Some((dw12, dw22)),
                );
            }
        }
        let worst = rho.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if !(worst <= BLOWUP_THRESHOLD) {
            return Err(Error::NumericalBlowup {
                time: noises.grid.time(k + 1),
                magnitude: worst,
            });
        }
        visit(k + 1, &rho)?;
    }
    Ok(())
}

/// `ρ̃_k` for `k = 0..=steps` along one noise realisation.
pub fn sde_evolve_trajectory(
    model: &SystemModel,
    kernels: &SdKernels,
    noises: &NoisePaths,
    rho0: &ComplexMatrix,
) -> Result<Vec<ComplexMatrix>> {
    let n = model.dim();
    let mut out = Vec::with_capacity(noises.grid.steps + 1);
    propagate(model, kernels, noises, rho0, |_, rho| {
        out.push(ComplexMatrix::from_vec(n, rho.to_vec())?);
        Ok(())
    })?;
    Ok(out)
}

/// Running sums of a complex sample in a fixed order.
#[derive(Clone)]
struct Moments {
    sum: Vec<Complex64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![ZERO; len],
            sum_sq: vec![0.0; len],
        }
    }

    fn add(&mut self, x: &[Complex64]) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sum_sq.iter_mut()).zip(x) {
            *s += v;
            *q += v.norm_sqr();
        }
    }

    /// Mean and complex-magnitude standard error `√(Var re + Var im)/√N`.
    fn finish(&self, n: usize) -> (Vec<Complex64>, Vec<f64>) {
        let nf = n as f64;
        let mean: Vec<Complex64> = self.sum.iter().map(|s| s / nf).collect();
        let se = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = ((q - nf * m.norm_sqr()) / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            })
            .collect();
        (mean, se)
    }
}

/// Ensemble mean and standard errors of `ρ̃` over `n_traj` trajectories.
///
/// Trajectory `k` uses noise stream `k` of `base_seed`. Trajectories that
/// blow up are excluded and counted in `Trajectory::excluded`.
pub fn ensemble_mean(
    model: &SystemModel,
    kernels: &SdKernels,
    rho0: &ComplexMatrix,
    config: &IntegrationConfig,
    n_traj: usize,
    base_seed: u64,
) -> Result<Trajectory> {
    config.validate()?;
    check_case(model, kernels)?;
    if n_traj < 2 {
        return Err(Error::InvalidParameter {
            name: "n_traj".into(),
            reason: format!("at least 2 trajectories are required, got {n_traj}"),
        });
    }
    let steps = config.n_steps().max(1);
    let grid = TimeGrid::new(config.dt, steps)?;
    let record = config.record_steps();
    let n = model.dim();
    let d2 = n * n;
    let n_obs = config.observables.len();
    let per_traj = record.len() * (d2 + n_obs);

    let run_one = |index: usize| -> Result<Option<Vec<Complex64>>> {
        let noises = sample_noise_paths_stream(base_seed, index as u64, grid, kernels.case());
        let mut samples = Vec::with_capacity(per_traj);
        let mut next = 0;
        let outcome = propagate(model, kernels, &noises, rho0, |k, rho| {
            if next < record.len() && record[next] == k {
                next += 1;
                samples.extend_from_slice(rho);
                let m = ComplexMatrix::from_vec(n, rho.to_vec())?;
                for (_, obs) in &config.observables {
                    samples.push(expectation(&m, obs)?);
                }
            }
            Ok(())
        });
        match outcome {
            Ok(()) => Ok(Some(samples)),
            Err(Error::NumericalBlowup { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut moments = Moments::new(per_traj);
    let mut survivors = 0usize;
    for start in (0..n_traj).step_by(BATCH) {
        let end = (start + BATCH).min(n_traj);
        let batch: Vec<Result<Option<Vec<Complex64>>>> = (start..end).into_par_iter().map(run_one).collect();
        for result in batch {
            if let Some(samples) = result? {
                moments.add(&samples);
                survivors += 1;
            }
        }
    }
    if 2 * survivors < n_traj || survivors < 2 {
        return Err(Error::TooFewSurvivors {
            survivors,
            requested: n_traj,
        });
    }
    let (mean, se) = moments.finish(survivors);

    let mut traj = Trajectory::default();
    let stride = d2 + n_obs;
    let mut reduced_se = Vec::with_capacity(record.len());
    let mut obs_se: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (r, &step) in record.iter().enumerate() {
        let base = r * stride;
        let rho = ComplexMatrix::from_vec(n, mean[base..base + d2].to_vec())?;
        let rho_se = ComplexMatrix::from_vec(n, se[base..base + d2].iter().map(|&s| Complex64::new(s, 0.0)).collect())?;
        for (o, (name, _)) in config.observables.iter().enumerate() {
            traj.observable_series
                .entry(name.clone())
                .or_default()
                .push(mean[base + d2 + o]);
            obs_se.entry(name.clone()).or_default().push(se[base + d2 + o]);
        }
        traj.times.push(grid.time(step));
        traj.trace_defect.push((rho.trace() - Complex64::new(1.0, 0.0)).norm());
        traj.herm_defect.push(rho.hermiticity_defect());
        traj.symmetry_defect.push(0.0);
        traj.reduced.push(rho);
        reduced_se.push(rho_se);
    }
    traj.std_errors = Some(obs_se);
    traj.reduced_std_errors = Some(reduced_se);
    traj.excluded = n_traj - survivors;
    Ok(traj)
}

/// One sample moment compared with its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatEntry {
    pub label: String,
    pub estimate: Complex64,
    pub target: Complex64,
    pub std_error: f64,
    /// `|estimate - target| / std_error`
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    /// `M{Δw}` per increment.
    pub mean_z: Vec<StatEntry>,
    /// `M{Δw_a Δw_b}/dt` per pair (target 0).
    pub cov_ww: Vec<StatEntry>,
    /// `M{Δw_a Δw_b*}/dt` per pair (target `2δ_ab`).
    pub cov_wwstar: Vec<StatEntry>,
    pub samples: usize,
    pub pass: bool,
}

fn sample_stat(label: String, values: impl Iterator<Item = Complex64> + Clone, target: Complex64) -> StatEntry {
    let mut m = Moments::new(1);
    let mut count = 0;
    for v in values {
        m.add(&[v]);
        count += 1;
    }
    let (mean, se) = m.finish(count);
    let z = if se[0] > 0.0 {
        (mean[0] - target).norm() / se[0]
    } else if mean[0] == target {
        0.0
    } else {
        f64::INFINITY
    };
    StatEntry {
        label,
        estimate: mean[0],
        target,
        std_error: se[0],
        z,
    }
}

/// Checks the Itô increment statistics of `noises` at 5 standard errors.
pub fn noise_statistics_check(noises: &NoisePaths) -> StatReport {
    let dt = noises.grid.dt;
    let incs = noises.increments();
    let zero = Complex64::new(0.0, 0.0);
    let mut mean_z = Vec::new();
    let mut cov_ww = Vec::new();
    let mut cov_wwstar = Vec::new();
    for (name, w) in &incs {
        mean_z.push(sample_stat(format!("M{{d{name}}}"), w.iter().copied(), zero));
    }
    for (a, (na, wa)) in incs.iter().enumerate() {
        for (b, (nb, wb)) in incs.iter().enumerate() {
            let target = if a == b { Complex64::new(2.0, 0.0) } else { zero };
            cov_wwstar.push(sample_stat(
                format!("M{{d{na} d{nb}*}}/dt"),
                wa.iter().zip(wb).map(move |(x, y)| x * y.conj() / dt),
                target,
            ));
            if b >= a {
                cov_ww.push(sample_stat(
                    format!("M{{d{na} d{nb}}}/dt"),
                    wa.iter().zip(wb).map(move |(x, y)| x * y / dt),
                    zero,
                ));
            }
        }
    }
    let pass = mean_z.iter().chain(&cov_ww).chain(&cov_wwstar).all(|e| e.z <= 5.0);
    StatReport {
        mean_z,
        cov_ww,
        cov_wwstar,
        samples: noises.grid.steps,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::ExpTerm;
    use crate::operators::pauli;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn test_series() -> ExponentialSeries {
        ExponentialSeries::new(vec![
            ExpTerm::new(c(0.3, -0.1), c(1.5, 0.0)),
            ExpTerm::new(c(0.5, 0.0), c(0.2, 1.0)),
        ])
        .unwrap()
    }

    fn sa_kernels() -> SdKernels {
        SdKernels::SelfAdjoint {
            xi_r: test_series().real_part(),
            xi_i: test_series().imag_part(),
        }
    }

    #[test]
    fn noise_is_reproducible_and_stream_independent() {
        let grid = TimeGrid::new(0.01, 50).unwrap();
        let a = sample_noise_paths_stream(7, 3, grid, NoiseCase::General);
        let b = sample_noise_paths_stream(7, 3, grid, NoiseCase::General);
        assert_eq!(a, b);
        let other = sample_noise_paths_stream(7, 4, grid, NoiseCase::General);
        assert_ne!(a.nu, other.nu);
        assert_eq!(a.nu.len(), 8);
        assert!(a.nu.iter().all(|ch| ch.len() == 50));
    }

    #[test]
    fn noise_moments() {
        let grid = TimeGrid::new(0.01, 100_000).unwrap();
        let p = sample_noise_paths(11, grid, NoiseCase::SelfAdjoint);
        let n = grid.steps as f64;
        for ch in &p.nu {
            let mean: f64 = ch.iter().sum::<f64>() / n;
            assert!(mean.abs() < 4.0 / (n * grid.dt).sqrt());
            let var = ch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            // Var of the sample variance of N(0,1) is 2/(N-1).
            assert!((var * grid.dt - 1.0).abs() < 5.0 * (2.0 / (n - 1.0)).sqrt());
        }
    }

    #[test]
    fn zero_noise_or_zero_kernel_gives_zero_field() {
        let grid = TimeGrid::new(0.01, 40).unwrap();
        let zeros = NoisePaths::zeros(grid, NoiseCase::SelfAdjoint);
        let f = mean_field(&sa_kernels(), &zeros).unwrap();
        assert!(f.g1.iter().all(|z| *z == ZERO));
        let noise = sample_noise_paths(1, grid, NoiseCase::SelfAdjoint);
        let empty = SdKernels::SelfAdjoint {
            xi_r: ExponentialSeries::empty(),
            xi_i: ExponentialSeries::empty(),
        };
        let f = mean_field(&empty, &noise).unwrap();
        assert!(f.g1.iter().all(|z| *z == ZERO));
        assert_eq!(f.g1.len(), 41);
    }

    #[test]
    fn single_impulse_response() {
        let grid = TimeGrid::new(0.01, 30).unwrap();
        let mut p = NoisePaths::zeros(grid, NoiseCase::SelfAdjoint);
        let m = 5;
        p.nu[0][m] = 1.0 / grid.dt.sqrt();
        let k = sa_kernels();
        let f = mean_field(&k, &p).unwrap();
        let xi_r = test_series().real_part();
        for step in 0..=grid.steps {
            let expected = if step > m {
                grid.dt * (1.0 / grid.dt.sqrt()) * xi_r.eval(grid.time(step - m))
            } else {
                ZERO
            };
            assert!((f.g1[step] - expected).norm() < 1e-14, "step {step}");
        }
    }

    #[test]
    fn recursive_convolution_matches_direct_sum() {
        let grid = TimeGrid::new(0.005, 400).unwrap();
        let p = sample_noise_paths(5, grid, NoiseCase::General);
        let k = SdKernels::General {
            acute: test_series(),
            grave: test_series().conj(),
        };
        let d = mean_field_with(&k, &p, ConvolutionMethod::Direct).unwrap();
        let r = mean_field_with(&k, &p, ConvolutionMethod::Recursive).unwrap();
        let scale = d.g1.iter().chain(&d.g2).map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in d.g1.iter().zip(&r.g1).chain(d.g2.iter().zip(&r.g2)) {
            assert!((a - b).norm() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn uncoupled_model_is_unitary() {
        let model = SystemModel::new(pauli::sigma_z().scale(c(0.5, 0.0)), ComplexMatrix::zeros(2)).unwrap();
        let grid = TimeGrid::new(1e-4, 10_000).unwrap();
        let noise = sample_noise_paths(3, grid, NoiseCase::SelfAdjoint);
        let path = sde_evolve_trajectory(&model, &sa_kernels(), &noise, &pauli::plus_state()).unwrap();
        let last = path.last().unwrap();
        let exact = 0.5 * c(0.0, -1.0).exp();
        // Explicit Euler on a rotation: error ≈ t·dt/2 in magnitude.
        assert!((last.get(0, 1) - exact).norm() < 1e-4);
    }

    #[test]
    fn zero_noise_matches_uncoupled_commutator() {
        let model = SystemModel::new(pauli::sigma_z().scale(c(0.5, 0.0)), pauli::sigma_z()).unwrap();
        let uncoupled = model.uncoupled();
        let grid = TimeGrid::new(1e-3, 500).unwrap();
        let zeros = NoisePaths::zeros(grid, NoiseCase::SelfAdjoint);
        let empty = SdKernels::SelfAdjoint {
            xi_r: ExponentialSeries::empty(),
            xi_i: ExponentialSeries::empty(),
        };
        let a = sde_evolve_trajectory(&model, &empty, &zeros, &pauli::plus_state()).unwrap();
        let b = sde_evolve_trajectory(
            &uncoupled,
            &sa_kernels(),
            &NoisePaths::zeros(grid, NoiseCase::SelfAdjoint),
            &pauli::plus_state(),
        )
        .unwrap();
        assert_eq!(a.last(), b.last());
    }

    #[test]
    fn self_adjoint_scheme_needs_self_adjoint_coupling() {
        let model = SystemModel::new(pauli::sigma_z(), pauli::sigma_minus()).unwrap();
        let grid = TimeGrid::new(1e-3, 5).unwrap();
        let e = sde_evolve_trajectory(
            &model,
            &sa_kernels(),
            &NoisePaths::zeros(grid, NoiseCase::SelfAdjoint),
            &pauli::plus_state(),
        );
        assert!(matches!(e.unwrap_err(), Error::UnsupportedCombination(_)));
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let model = SystemModel::new(pauli::sigma_z().scale(c(0.5, 0.0)), pauli::sigma_z()).unwrap();
        let empty = SdKernels::SelfAdjoint {
            xi_r: ExponentialSeries::empty(),
            xi_i: ExponentialSeries::empty(),
        };
        let cfg = IntegrationConfig::new(1e-3, 0.1, 10);
        let t = ensemble_mean(&model.uncoupled(), &empty, &pauli::plus_state(), &cfg, 2, 9).unwrap();
        let se = t.reduced_std_errors.as_ref().unwrap();
        assert!(se.iter().all(|m| m.max_abs() == 0.0));
        let single = sde_evolve_trajectory(
            &model.uncoupled(),
            &empty,
            &NoisePaths::zeros(TimeGrid::new(1e-3, 100).unwrap(), NoiseCase::SelfAdjoint),
            &pauli::plus_state(),
        )
        .unwrap();
        assert_eq!(t.reduced.last(), single.last());
    }

    #[test]
    fn ensemble_is_deterministic() {
        let model = SystemModel::new(
            pauli::sigma_x().scale(c(-0.25, 0.0)),
            pauli::sigma_z().scale(c(0.5, 0.0)),
        )
        .unwrap();
        let cfg = IntegrationConfig::new(1e-3, 0.2, 20).with_observable("sigma_z", pauli::sigma_z());
        let a = ensemble_mean(&model, &sa_kernels(), &pauli::excited_state(), &cfg, 300, 4).unwrap();
        let b = ensemble_mean(&model, &sa_kernels(), &pauli::excited_state(), &cfg, 300, 4).unwrap();
        assert_eq!(a, b);
        let one = ensemble_mean(&model, &sa_kernels(), &pauli::excited_state(), &cfg, 1, 4);
        assert!(matches!(one.unwrap_err(), Error::InvalidParameter { .. }));
    }

    #[test]
    fn increment_statistics() {
        let grid = TimeGrid::new(0.01, 100_000).unwrap();
        for case in [NoiseCase::SelfAdjoint, NoiseCase::General] {
            let report = noise_statistics_check(&sample_noise_paths(21, grid, case));
            assert!(report.pass, "{report:#?}");
        }
    }
}
