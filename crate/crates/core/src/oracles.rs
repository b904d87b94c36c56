//! Exact and semi-analytic reference solutions for the benchmark models.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::ExponentialSeries;
use crate::error::{Error, Result};
use crate::operators::{expectation, ComplexMatrix, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedForm,
    Quadrature,
    IntegroDifferential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCurve {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub method: OracleMethod,
}

impl OracleCurve {
    /// Linear interpolation of the curve at `t` (clamped to the sampled range).
    pub fn interpolate(&self, t: f64) -> Complex64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            return self.values[0];
        }
        if k == self.times.len() {
            return *self.values.last().expect("curve is not empty");
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.values[k - 1] * (1.0 - w) + self.values[k] * w
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if let Some(&t) = times.iter().find(|&&t| !(t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "times".into(),
            reason: format!("times must be finite and non-negative, got {t}"),
        });
    }
    Ok(())
}

/// `∫₀ᵗ (t - s)·e^{-κs} ds = t/κ - (1 - e^{-κt})/κ²`
pub fn double_integral(kappa: Complex64, t: f64) -> Complex64 {
    let x = kappa * t;
    if x.norm() < 1e-3 {
        // t²·(1/2 - x/6 + x²/24 - x³/120 + x⁴/720)
        let poly = 0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0 + x * x * x * x / 720.0;
        return poly * t * t;
    }
    t / kappa - (1.0 - (-x).exp()) / (kappa * kappa)
}

/// Coherence `ρ_eg(t)` of a qubit with `H = ω₀σ_z/2` and `S = σ_z`.
///
/// `ρ_eg(t) = ρ_eg(0)·e^{-iω₀t}·exp(-4·Re ∫₀ᵗ(t-s)ξ(s)ds)`. The imaginary
/// part of `ξ` only enters through `q_e² - q_g²`, which vanishes for the
/// `±1` eigenvalues of `σ_z`, so it produces no phase.
pub fn dephasing_exact(
    omega_0: f64,
    xi_series: &ExponentialSeries,
    rho_eg_0: Complex64,
    times: &[f64],
) -> Result<OracleCurve> {
    check_times(times)?;
    let values = times
        .iter()
        .map(|&t| {
            let phi: Complex64 = xi_series
                .terms()
                .iter()
                .map(|term| term.zeta * double_integral(term.kappa, t))
                .sum();
            rho_eg_0 * Complex64::new(-4.0 * phi.re, -omega_0 * t).exp()
        })
        .collect();
    Ok(OracleCurve {
        times: times.to_vec(),
        values,
        method: OracleMethod::ClosedForm,
    })
}

/// `sinh(x)/x` with a series near zero.
fn sinhc(x: Complex64) -> Complex64 {
    if x.norm() < 1e-4 {
        let x2 = x * x;
        return 1.0 + x2 / 6.0 + x2 * x2 / 120.0;
    }
    x.sinh() / x
}

/// Excited-state amplitude `c(t) = e^{-λt/2}[cosh(Dt/2) + (λ/D)sinh(Dt/2)]`, `D = √(λ² - 2γλ)`.
///
/// `c` is even in `D`, so the branch of the square root is irrelevant.
pub fn decay_amplitude(gamma: f64, lambda: f64, t: f64) -> Complex64 {
    let d = Complex64::new(lambda * lambda - 2.0 * gamma * lambda, 0.0).sqrt();
    let x = d * (0.5 * t);
    (-0.5 * lambda * t).exp() * (x.cosh() + sinhc(x) * (0.5 * lambda * t))
}

/// `ρ_ee(t)` for a qubit decaying into a zero-temperature Lorentz bath centred on `ω₀`.
pub fn decay_exact(omega_0: f64, gamma: f64, lambda: f64, rho_ee_0: f64, times: &[f64]) -> Result<OracleCurve> {
    check_times(times)?;
    if !(gamma > 0.0 && lambda > 0.0 && omega_0.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "gamma/lambda".into(),
            reason: "must be strictly positive".into(),
        });
    }
    let values = times
        .iter()
        .map(|&t| Complex64::new(rho_ee_0 * decay_amplitude(gamma, lambda, t).norm_sqr(), 0.0))
        .collect();
    Ok(OracleCurve {
        times: times.to_vec(),
        values,
        method: OracleMethod::ClosedForm,
    })
}

/// Solves `ċ(t) = -∫₀ᵗ f(t-s)c(s)ds`, `c(0) = 1`, on `[0, n·h]`.
///
/// The memory integral uses the trapezoid rule and the ODE the implicit
/// trapezoid rule, so the error expands in even powers of `h`.
pub fn volterra_amplitude<F: Fn(f64) -> Complex64>(kernel: F, h: f64, n: usize) -> Vec<Complex64> {
    let f: Vec<Complex64> = (0..=n).map(|k| kernel(k as f64 * h)).collect();
    let mut c = Vec::with_capacity(n + 1);
    c.push(Complex64::new(1.0, 0.0));
    let mut y_prev = Complex64::new(0.0, 0.0);
    let denom = 1.0 + 0.25 * h * h * f[0];
    for step in 1..=n {
        // Memory integral at t_step without the c_step endpoint.
        let mut known = 0.5 * f[step] * c[0];
        for m in 1..step {
            known += f[step - m] * c[m];
        }
        known *= h;
        let c_next = (c[step - 1] - 0.5 * h * (y_prev + known)) / denom;
        y_prev = known + 0.5 * h * f[0] * c_next;
        c.push(c_next);
    }
    c
}

/// Richardson-extrapolated [`volterra_amplitude`] at `t_k = k·h`, `k = 0..=n`,
/// built from runs at `h`, `h/2` and `h/4`.
pub fn volterra_extrapolated<F: Fn(f64) -> Complex64>(kernel: F, h: f64, n: usize) -> Vec<Complex64> {
    let c1 = volterra_amplitude(&kernel, h, n);
    let c2 = volterra_amplitude(&kernel, 0.5 * h, 2 * n);
    let c4 = volterra_amplitude(&kernel, 0.25 * h, 4 * n);
    (0..=n)
        .map(|k| {
            let r12 = (4.0 * c2[2 * k] - c1[k]) / 3.0;
            let r24 = (4.0 * c4[4 * k] - c2[2 * k]) / 3.0;
            (16.0 * r24 - r12) / 15.0
        })
        .collect()
}

/// `ρ_ee` on `t_k = k·h` from the integro-differential amplitude equation with
/// kernel `(γλ/2)e^{-λτ}`.
pub fn decay_integro_differential(gamma: f64, lambda: f64, rho_ee_0: f64, h: f64, n: usize) -> OracleCurve {
    let c = volterra_extrapolated(
        |tau| Complex64::new(0.5 * gamma * lambda * (-lambda * tau).exp(), 0.0),
        h,
        n,
    );
    OracleCurve {
        times: (0..=n).map(|k| k as f64 * h).collect(),
        values: c.iter().map(|z| Complex64::new(rho_ee_0 * z.norm_sqr(), 0.0)).collect(),
        method: OracleMethod::IntegroDifferential,
    }
}

/// `e^{-iHt}` for Hermitian `H`.
pub fn unitary(h: &ComplexMatrix, t: f64) -> ComplexMatrix {
    let eig = h.to_nalgebra().symmetric_eigen();
    let u = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| Complex64::new(0.0, -e * t).exp()));
    ComplexMatrix::from_nalgebra(&(u * phases * u.adjoint()))
}

/// `ρ(t) = e^{-iHt}ρ₀e^{iHt}` at each time.
pub fn free_evolution_states(model: &SystemModel, rho0: &ComplexMatrix, times: &[f64]) -> Result<Vec<ComplexMatrix>> {
    check_times(times)?;
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    Ok(times
        .iter()
        .map(|&t| {
            let u = unitary(model.hamiltonian(), t);
            &(&u * rho0) * &u.adjoint()
        })
        .collect())
}

/// Closed-system expectation values of each named observable.
pub fn free_evolution_exact(
    model: &SystemModel,
    rho0: &ComplexMatrix,
    times: &[f64],
    observables: &[(String, ComplexMatrix)],
) -> Result<Vec<(String, OracleCurve)>> {
    let states = free_evolution_states(model, rho0, times)?;
    observables
        .iter()
        .map(|(name, obs)| {
            let values = states
                .iter()
                .map(|rho| expectation(rho, obs))
                .collect::<Result<Vec<_>>>()?;
            Ok((
                name.clone(),
                OracleCurve {
                    times: times.to_vec(),
                    values,
                    method: OracleMethod::ClosedForm,
                },
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{decompose, DecomposeSettings, SpectralDensity};
    use crate::operators::{build_model, pauli, ModelKind};
    use std::collections::BTreeMap;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn drude_xi() -> ExponentialSeries {
        let j = SpectralDensity::ohmic_drude(0.002, 5.0).unwrap();
        decompose(&j, 0.015, DecomposeSettings::default()).unwrap().alpha_series
    }

    #[test]
    fn double_integral_branches_agree() {
        let k = c(0.3, 0.8);
        for t in [0.999e-3 / k.norm(), 1.001e-3 / k.norm()] {
            let direct = t / k - (1.0 - (-k * t).exp()) / (k * k);
            let v = double_integral(k, t);
            assert!((v - direct).norm() / v.norm() < 1e-8);
        }
        let t = 1e-4;
        let exact = t * t * (0.5 - k * t / 6.0 + (k * t) * (k * t) / 24.0);
        assert!((double_integral(k, t) - exact).norm() < 1e-13 * t * t);
    }

    #[test]
    fn dephasing_examples() {
        let rho_eg = c(0.5, 0.0);
        let curve = dephasing_exact(1.0, &drude_xi(), rho_eg, &[0.0, 1.0]).unwrap();
        assert_eq!(curve.values[0], rho_eg);
        let free = dephasing_exact(1.0, &ExponentialSeries::empty(), rho_eg, &[2.0]).unwrap();
        assert!((free.values[0] - 0.5 * c(0.0, -2.0).exp()).norm() < 1e-15);
    }

    #[test]
    fn dephasing_magnitude_non_increasing() {
        let times: Vec<f64> = (0..=100).map(|k| 0.1 * k as f64).collect();
        let curve = dephasing_exact(1.0, &drude_xi(), c(0.5, 0.0), &times).unwrap();
        for w in curve.values.windows(2) {
            assert!(w[1].norm() <= w[0].norm() + 1e-15);
        }
        assert!(curve.values.iter().all(|v| v.norm() <= 0.5));
    }

    #[test]
    fn decay_examples() {
        let curve = decay_exact(1.0, 5.0, 0.2, 1.0, &[0.0]).unwrap();
        assert_eq!(curve.values[0], c(1.0, 0.0));
        let weak = decay_exact(1.0, 1e-14, 0.2, 0.8, &[0.0, 3.0, 9.0]).unwrap();
        for v in &weak.values {
            assert!((v.re - 0.8).abs() < 1e-12);
        }
        let disc: f64 = 0.2 * 0.2 - 2.0 * 5.0 * 0.2;
        assert!((disc + 1.96).abs() < 1e-12);
        // D = 1.4i: c = e^{-0.1t}[cos(0.7t) + (0.2/1.4)sin(0.7t)]
        for t in [0.5f64, 2.0, 7.5] {
            let expected = (-0.1 * t).exp() * ((0.7 * t).cos() + (0.2 / 1.4) * (0.7 * t).sin());
            assert!((decay_amplitude(5.0, 0.2, t) - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn decay_critical_damping_limit() {
        // λ = 2γ makes D = 0, where c(t) = e^{-λt/2}(1 + λt/2).
        let (gamma, lambda) = (0.25, 0.5);
        for t in [0.0f64, 1.0, 4.0] {
            let expected = (-0.5 * lambda * t).exp() * (1.0 + 0.5 * lambda * t);
            assert!((decay_amplitude(gamma, lambda, t) - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn decay_closed_form_matches_integro_differential() {
        let h = 0.01;
        let n = 1000;
        let numeric = decay_integro_differential(5.0, 0.2, 1.0, h, n);
        let closed = decay_exact(1.0, 5.0, 0.2, 1.0, &numeric.times).unwrap();
        let worst = numeric
            .values
            .iter()
            .zip(&closed.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "worst {worst}");
    }

    #[test]
    fn volterra_second_order() {
        let kernel = |tau: f64| c((-0.3 * tau).exp(), 0.2 * tau);
        let reference = volterra_extrapolated(kernel, 0.01, 200);
        let e1 = (volterra_amplitude(kernel, 0.02, 100)[100] - reference[200]).norm();
        let e2 = (volterra_amplitude(kernel, 0.01, 200)[200] - reference[200]).norm();
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn free_evolution_examples() {
        let mut p = BTreeMap::new();
        p.insert("omega_0".to_string(), 1.3);
        let m = build_model(ModelKind::PureDephasing, &p).unwrap();
        let times = [0.0, 0.7, 2.9];
        let obs = vec![("sigma_x".to_string(), pauli::sigma_x())];
        let out = free_evolution_exact(&m, &pauli::plus_state(), &times, &obs).unwrap();
        for (t, v) in times.iter().zip(&out[0].1.values) {
            assert!((v - c((1.3 * t).cos(), 0.0)).norm() < 1e-14);
        }
        let mixed = free_evolution_states(&m, &pauli::maximally_mixed(), &times).unwrap();
        for rho in mixed {
            assert!(rho.max_abs_diff(&pauli::maximally_mixed()) < 1e-15);
        }

        let mut p = BTreeMap::new();
        p.insert("delta".to_string(), 0.5);
        let sb = build_model(ModelKind::SpinBoson, &p).unwrap();
        let obs = vec![("sigma_z".to_string(), pauli::sigma_z())];
        let out = free_evolution_exact(&sb, &pauli::excited_state(), &times, &obs).unwrap();
        for (t, v) in times.iter().zip(&out[0].1.values) {
            assert!((v - c((0.5 * t).cos(), 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn interpolation() {
        let curve = OracleCurve {
            times: vec![0.0, 1.0, 2.0],
            values: vec![c(0.0, 0.0), c(1.0, 0.0), c(3.0, 0.0)],
            method: OracleMethod::ClosedForm,
        };
        assert_eq!(curve.interpolate(1.5), c(2.0, 0.0));
        assert_eq!(curve.interpolate(5.0), c(3.0, 0.0));
    }
}
