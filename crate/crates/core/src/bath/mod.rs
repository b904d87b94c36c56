//! Spectral densities, bath correlation functions and their exponential decompositions.

pub mod quadrature;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for [`bcf_quadrature`].
pub const QUAD_TOL: f64 = 1e-10;

/// Parametric bath spectrum `J(ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralDensity {
    /// `J(ω) = (1/π)·2χω_c·ω/(ω² + ω_c²)`
    OhmicDrude { chi: f64, omega_c: f64 },
    /// `J(ω) = γλ²/(2π((ω - ω₀)² + λ²))`
    Lorentz { gamma: f64, lambda: f64, omega_0: f64 },
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.into(),
            reason: format!("must be finite and strictly positive, got {value}"),
        })
    }
}

impl SpectralDensity {
    pub fn ohmic_drude(chi: f64, omega_c: f64) -> Result<Self> {
        let j = SpectralDensity::OhmicDrude { chi, omega_c };
        j.validate()?;
        Ok(j)
    }

    pub fn lorentz(gamma: f64, lambda: f64, omega_0: f64) -> Result<Self> {
        let j = SpectralDensity::Lorentz { gamma, lambda, omega_0 };
        j.validate()?;
        Ok(j)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SpectralDensity::OhmicDrude { chi, omega_c } => {
                positive("chi", chi)?;
                positive("omega_c", omega_c)
            }
            SpectralDensity::Lorentz { gamma, lambda, omega_0 } => {
                positive("gamma", gamma)?;
                positive("lambda", lambda)?;
                positive("omega_0", omega_0)
            }
        }
    }

    pub fn evaluate(&self, omega: f64) -> f64 {
        self.evaluate_complex(Complex64::new(omega, 0.0)).re
    }

    /// Analytic continuation of `J` off the real axis.
    pub fn evaluate_complex(&self, z: Complex64) -> Complex64 {
        match *self {
            SpectralDensity::OhmicDrude { chi, omega_c } => {
                let amp = 2.0 * chi * omega_c / PI;
                if z.norm() > omega_c {
                    amp / (z + omega_c * omega_c / z)
                } else {
                    z * amp / (z * z + omega_c * omega_c)
                }
            }
            SpectralDensity::Lorentz { gamma, lambda, omega_0 } => {
                let amp = gamma * lambda * lambda / (2.0 * PI);
                let d = z - omega_0;
                if d.norm() > lambda {
                    let inv = d.inv();
                    inv * inv * amp / (1.0 + lambda * lambda * inv * inv)
                } else {
                    Complex64::new(amp, 0.0) / (d * d + lambda * lambda)
                }
            }
        }
    }
}

pub fn spectral_density_eval(j: &SpectralDensity, omega: f64) -> f64 {
    j.evaluate(omega)
}

/// One term `ζ·e^{-κt}` of an exponential series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub zeta: Complex64,
    pub kappa: Complex64,
}

impl ExpTerm {
    pub fn new(zeta: Complex64, kappa: Complex64) -> Self {
        Self { zeta, kappa }
    }
}

/// `Σ_n ζ_n·e^{-κ_n t}` with `Re κ_n > 0`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExponentialSeries {
    terms: Vec<ExpTerm>,
}

impl ExponentialSeries {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<ExpTerm>) -> Result<Self> {
        for (n, term) in terms.iter().enumerate() {
            if !(term.kappa.re > 0.0) || !term.kappa.im.is_finite() {
                return Err(Error::InvalidParameter {
                    name: format!("kappa[{n}]"),
                    reason: format!("decay rate must have positive real part, got {}", term.kappa),
                });
            }
            if !term.zeta.re.is_finite() || !term.zeta.im.is_finite() {
                return Err(Error::InvalidParameter {
                    name: format!("zeta[{n}]"),
                    reason: "amplitude must be finite".into(),
                });
            }
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, t: f64) -> Complex64 {
        self.terms.iter().map(|term| term.zeta * (-term.kappa * t).exp()).sum()
    }

    /// `Σ|ζ_n|·e^{-min Re κ_n·t}`
    pub fn decay_bound(&self, t: f64) -> f64 {
        let slowest = self
            .terms
            .iter()
            .map(|term| term.kappa.re)
            .fold(f64::INFINITY, f64::min);
        let amp: f64 = self.terms.iter().map(|term| term.zeta.norm()).sum();
        if self.terms.is_empty() {
            0.0
        } else {
            amp * (-slowest * t).exp()
        }
    }

    /// Series of the complex conjugate function.
    pub fn conj(&self) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|term| ExpTerm::new(term.zeta.conj(), term.kappa.conj()))
                .collect(),
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            terms: self
                .terms
                .iter()
                .map(|term| ExpTerm::new(term.zeta * factor, term.kappa))
                .collect(),
        }
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Self { terms }
    }

    /// Series of `(f(t) + f(t)*)/2`.
    pub fn real_part(&self) -> Self {
        self.split(|zeta| zeta.re, |zeta| zeta * 0.5, |zeta| zeta.conj() * 0.5)
    }

    /// Series of `(f(t) - f(t)*)/(2i)`.
    pub fn imag_part(&self) -> Self {
        let half_i = Complex64::new(0.0, 2.0);
        self.split(|zeta| zeta.im, |zeta| zeta / half_i, |zeta| -zeta.conj() / half_i)
    }

    fn split(
        &self,
        real_rate: impl Fn(Complex64) -> f64,
        direct: impl Fn(Complex64) -> Complex64,
        mirrored: impl Fn(Complex64) -> Complex64,
    ) -> Self {
        let mut terms = Vec::with_capacity(2 * self.terms.len());
        for term in &self.terms {
            if term.kappa.im == 0.0 {
                terms.push(ExpTerm::new(Complex64::new(real_rate(term.zeta), 0.0), term.kappa));
            } else {
                terms.push(ExpTerm::new(direct(term.zeta), term.kappa));
                terms.push(ExpTerm::new(mirrored(term.zeta), term.kappa.conj()));
            }
        }
        Self { terms }
    }
}

pub fn series_eval(series: &ExponentialSeries, t: f64) -> Complex64 {
    series.eval(t)
}

/// Exponential fits of the two bath kernels consumed by the hierarchy.
///
/// When `self_adjoint` is set, `alpha_series` holds the combined kernel
/// `ξ = α + α̃` and `alpha_tilde_series` is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathDecomposition {
    pub alpha_series: ExponentialSeries,
    pub alpha_tilde_series: ExponentialSeries,
    /// Inverse temperature; `f64::INFINITY` for zero temperature.
    pub beta: f64,
    pub self_adjoint: bool,
}

impl BathDecomposition {
    /// No bath channels at all (closed system).
    pub fn empty() -> Self {
        Self {
            alpha_series: ExponentialSeries::empty(),
            alpha_tilde_series: ExponentialSeries::empty(),
            beta: f64::INFINITY,
            self_adjoint: true,
        }
    }

    pub fn n_alpha(&self) -> usize {
        self.alpha_series.len()
    }

    pub fn n_alpha_tilde(&self) -> usize {
        self.alpha_tilde_series.len()
    }

    pub fn channel_count(&self) -> usize {
        self.n_alpha() + self.n_alpha_tilde()
    }

    /// `ξ = α + α̃`
    pub fn xi_series(&self) -> ExponentialSeries {
        self.alpha_series.concat(&self.alpha_tilde_series)
    }

    /// `ά = α* - α̃`
    pub fn acute_series(&self) -> ExponentialSeries {
        self.alpha_series
            .conj()
            .concat(&self.alpha_tilde_series.scaled(Complex64::new(-1.0, 0.0)))
    }

    /// `ὰ = α* + α̃`
    pub fn grave_series(&self) -> ExponentialSeries {
        self.alpha_series.conj().concat(&self.alpha_tilde_series)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecomposeSettings {
    pub matsubara_terms: usize,
    pub self_adjoint: bool,
}

impl Default for DecomposeSettings {
    fn default() -> Self {
        Self {
            matsubara_terms: 2,
            self_adjoint: true,
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && !beta.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "beta".into(),
            reason: format!("inverse temperature must be positive or infinite, got {beta}"),
        })
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "t".into(),
            reason: format!("time must be finite and non-negative, got {t}"),
        })
    }
}

/// Builds the exponential series for `J` at inverse temperature `beta`.
///
/// Ohmic–Drude uses the Matsubara expansion of the combined kernel and
/// therefore needs `settings.self_adjoint` and finite `beta`. Lorentz is
/// supported at zero temperature only, where a single term is exact.
pub fn decompose(j: &SpectralDensity, beta: f64, settings: DecomposeSettings) -> Result<BathDecomposition> {
    j.validate()?;
    check_beta(beta)?;
    match *j {
        SpectralDensity::OhmicDrude { chi, omega_c } => {
            if beta.is_infinite() {
                return Err(Error::UnsupportedCombination(
                    "ohmic_drude bath at zero temperature".into(),
                ));
            }
            if !settings.self_adjoint {
                return Err(Error::UnsupportedCombination(
                    "ohmic_drude bath requires the combined (self-adjoint) kernel".into(),
                ));
            }
            let ratio = beta * omega_c / (2.0 * PI);
            let nearest = ratio.round();
            if nearest >= 1.0 && (ratio - nearest).abs() <= 1e-9 * ratio {
                return Err(Error::PoleCollision { n: nearest as usize });
            }
            let amp = chi * omega_c;
            let mut terms = Vec::with_capacity(settings.matsubara_terms + 1);
            terms.push(ExpTerm::new(
                Complex64::new(amp / (0.5 * beta * omega_c).tan(), -amp),
                Complex64::new(omega_c, 0.0),
            ));
            for n in 1..=settings.matsubara_terms {
                let theta = 2.0 * PI * n as f64 / beta;
                let zeta = 4.0 * amp / beta * theta / (theta * theta - omega_c * omega_c);
                terms.push(ExpTerm::new(Complex64::new(zeta, 0.0), Complex64::new(theta, 0.0)));
            }
            Ok(BathDecomposition {
                alpha_series: ExponentialSeries::new(terms)?,
                alpha_tilde_series: ExponentialSeries::empty(),
                beta,
                self_adjoint: true,
            })
        }
        SpectralDensity::Lorentz { gamma, lambda, omega_0 } => {
            if beta.is_finite() {
                return Err(Error::UnsupportedCombination(
                    "lorentz bath at finite temperature".into(),
                ));
            }
            let term = ExpTerm::new(
                Complex64::new(0.5 * gamma * lambda, 0.0),
                Complex64::new(lambda, omega_0),
            );
            Ok(BathDecomposition {
                alpha_series: ExponentialSeries::new(vec![term])?,
                alpha_tilde_series: ExponentialSeries::empty(),
                beta,
                self_adjoint: settings.self_adjoint,
            })
        }
    }
}

/// Which bath correlation function [`bcf_quadrature`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcfKind {
    /// `α(t) = ∫ J(n+1) e^{-iωt}`
    Alpha,
    /// `α̃(t) = ∫ J n e^{iωt}`
    AlphaTilde,
    /// `ξ(t) = α(t) + α̃(t)`
    Xi,
    /// `ά(t) = ∫ J e^{iωt}`
    Acute,
    /// `ὰ(t) = ∫ J coth(βω/2) e^{iωt}`
    Grave,
}

impl BcfKind {
    pub const ALL: [BcfKind; 5] = [
        BcfKind::Alpha,
        BcfKind::AlphaTilde,
        BcfKind::Xi,
        BcfKind::Acute,
        BcfKind::Grave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BcfKind::Alpha => "alpha",
            BcfKind::AlphaTilde => "alpha_tilde",
            BcfKind::Xi => "xi",
            BcfKind::Acute => "acute",
            BcfKind::Grave => "grave",
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Weight {
    /// `n + 1`
    NPlusOne,
    /// `n`
    N,
    /// `1`
    One,
    /// `2n + 1`
    Coth,
}

/// Bose factor `1/(e^{x} - 1)` for complex `x`, accurate near 0 and free of overflow.
fn bose(x: Complex64) -> Complex64 {
    if x.re > 1.0 {
        let decay = (-x).exp();
        return decay / (1.0 - decay);
    }
    let (s, c) = x.im.sin_cos();
    let half = (0.5 * x.im).sin();
    Complex64::new(x.re.exp_m1() * c - 2.0 * half * half, x.re.exp() * s).inv()
}

/// `(J·weight)(z)`; at `z = 0` the removable singularity of `J·n` is filled in.
fn weighted_density(j: &SpectralDensity, beta: f64, weight: Weight, z: Complex64) -> Complex64 {
    let jz = j.evaluate_complex(z);
    if beta.is_infinite() {
        return match weight {
            Weight::N => Complex64::new(0.0, 0.0),
            _ => jz,
        };
    }
    let n = if z == Complex64::new(0.0, 0.0) {
        return match (*j, weight) {
            (_, Weight::One) => jz,
            (SpectralDensity::OhmicDrude { chi, omega_c }, w) => {
                let slope = 2.0 * chi / (PI * omega_c);
                let scale = if matches!(w, Weight::Coth) { 2.0 } else { 1.0 };
                Complex64::new(scale * slope / beta, 0.0)
            }
            (SpectralDensity::Lorentz { .. }, _) => Complex64::new(f64::NAN, 0.0),
        };
    } else {
        bose(z * beta)
    };
    match weight {
        Weight::NPlusOne => jz * (n + 1.0),
        Weight::N => jz * n,
        Weight::One => jz,
        Weight::Coth => jz * (n * 2.0 + 1.0),
    }
}

/// Integrates `J(ω)·weight(ω)·e^{-iσωt}` over `[lower, ∞)`.
///
/// The finite window is done on the real axis; the infinite tails are
/// rotated onto rays where the exponential decays.
fn weighted_fourier(j: &SpectralDensity, beta: f64, weight: Weight, sigma: f64, t: f64, tol: f64) -> Result<Complex64> {
    let integrand = |z: Complex64| weighted_density(j, beta, weight, z) * (Complex64::new(0.0, -sigma * t) * z).exp();
    let (lower, left, right) = match *j {
        SpectralDensity::OhmicDrude { omega_c, .. } => (Some(0.0), 0.0, 2.0 * omega_c + 1.0),
        SpectralDensity::Lorentz { lambda, omega_0, .. } => {
            let width = 10.0 * lambda + 1.0;
            (None, omega_0 - width, omega_0 + width)
        }
    };
    let left = lower.unwrap_or(left);

    if t == 0.0 {
        let real = |w: f64| integrand(Complex64::new(w, 0.0));
        let mut total = quadrature::integrate_half_line(|x| real(right + x), tol / 3.0)?;
        total += quadrature::integrate(real, left, right, tol / 3.0)?;
        if lower.is_none() {
            total += quadrature::integrate_half_line(|x| real(left - x), tol / 3.0)?;
        }
        return Ok(total);
    }

    let finite = quadrature::integrate(|w| integrand(Complex64::new(w, 0.0)), left, right, tol / 3.0)?;
    let dir = Complex64::new(0.0, -sigma);
    // y = s/t on the ray z = edge - iσy, so e^{-iσzt} = e^{-iσ·edge·t}·e^{-s}.
    let ray = |edge: f64| {
        quadrature::integrate_half_line(|s| integrand(Complex64::new(edge, 0.0) + dir * (s / t)), tol * t / 3.0)
            .map(|v| v / t)
    };
    let mut total = finite + dir * ray(right)?;
    if lower.is_none() {
        total -= dir * ray(left)?;
    }
    Ok(total)
}

/// Evaluates a bath correlation function by quadrature to absolute tolerance [`QUAD_TOL`].
pub fn bcf_quadrature(kind: BcfKind, j: &SpectralDensity, beta: f64, t: f64) -> Result<Complex64> {
    bcf_quadrature_with_tol(kind, j, beta, t, QUAD_TOL)
}

pub fn bcf_quadrature_with_tol(kind: BcfKind, j: &SpectralDensity, beta: f64, t: f64, tol: f64) -> Result<Complex64> {
    j.validate()?;
    check_beta(beta)?;
    check_time(t)?;
    if matches!(j, SpectralDensity::Lorentz { .. }) && beta.is_finite() {
        return Err(Error::UnsupportedCombination(
            "lorentz bath at finite temperature".into(),
        ));
    }
    if kind == BcfKind::AlphaTilde && beta.is_infinite() {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if t == 0.0 && kind != BcfKind::AlphaTilde && matches!(j, SpectralDensity::OhmicDrude { .. }) {
        return Err(Error::Divergent {
            what: kind.name().to_string(),
        });
    }
    match kind {
        BcfKind::Alpha => weighted_fourier(j, beta, Weight::NPlusOne, 1.0, t, tol),
        BcfKind::AlphaTilde => weighted_fourier(j, beta, Weight::N, -1.0, t, tol),
        BcfKind::Xi => {
            let a = weighted_fourier(j, beta, Weight::NPlusOne, 1.0, t, 0.5 * tol)?;
            if beta.is_infinite() {
                return Ok(a);
            }
            Ok(a + weighted_fourier(j, beta, Weight::N, -1.0, t, 0.5 * tol)?)
        }
        BcfKind::Acute => weighted_fourier(j, beta, Weight::One, -1.0, t, tol),
        BcfKind::Grave => weighted_fourier(j, beta, Weight::Coth, -1.0, t, tol),
    }
}

/// One comparison of a fitted series against quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub t: f64,
    pub channel: BcfKind,
    pub series: Complex64,
    pub quadrature: Complex64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub max_abs_error: f64,
    pub per_point: Vec<FitPoint>,
}

/// Compares `decomp` against quadrature of the kernels it represents on `grid`.
pub fn fit_report(decomp: &BathDecomposition, j: &SpectralDensity, beta: f64, grid: &[f64]) -> Result<FitReport> {
    let channels: Vec<(BcfKind, &ExponentialSeries)> = if decomp.self_adjoint {
        vec![(BcfKind::Xi, &decomp.alpha_series)]
    } else {
        vec![
            (BcfKind::Alpha, &decomp.alpha_series),
            (BcfKind::AlphaTilde, &decomp.alpha_tilde_series),
        ]
    };
    let mut per_point = Vec::with_capacity(grid.len() * channels.len());
    let mut max_abs_error: f64 = 0.0;
    for &t in grid {
        for &(kind, series) in &channels {
            let quad = bcf_quadrature(kind, j, beta, t)?;
            let fit = series.eval(t);
            let abs_error = (fit - quad).norm();
            max_abs_error = max_abs_error.max(abs_error);
            per_point.push(FitPoint {
                t,
                channel: kind,
                series: fit,
                quadrature: quad,
                abs_error,
            });
        }
    }
    Ok(FitReport {
        max_abs_error,
        per_point,
    })
}

/// Checks that adding one more Matsubara term moves the fit error by less
/// than 10% (plus quadrature noise) on `grid`.
pub fn matsubara_terms_sufficient(
    j: &SpectralDensity,
    beta: f64,
    matsubara_terms: usize,
    grid: &[f64],
) -> Result<bool> {
    let err = |eps: usize| -> Result<f64> {
        let settings = DecomposeSettings {
            matsubara_terms: eps,
            self_adjoint: true,
        };
        Ok(fit_report(&decompose(j, beta, settings)?, j, beta, grid)?.max_abs_error)
    };
    let current = err(matsubara_terms)?;
    let next = err(matsubara_terms + 1)?;
    Ok((current - next).abs() <= 0.1 * current + 2.0 * QUAD_TOL)
}
