//! Dense complex matrices and the qubit models used throughout the crate.
//!
//! Basis convention: `|e⟩` is index 0 and `|g⟩` is index 1, so
//! `σ_z = diag(1, -1)` and `σ_- = |g⟩⟨e|`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for k in 0..dim {
            m.data[k * dim + k] = ONE;
        }
        m
    }

    pub fn from_rows(rows: &[&[Complex64]]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "rows".into(),
                reason: "matrix must have at least one row".into(),
            });
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    /// Builds a matrix from row-major data; `data.len()` must be a perfect square.
    pub fn from_vec(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(dim);
        for r in 0..dim {
            for c in 0..dim {
                m.data[r * dim + c] = f(r, c);
            }
        }
        m
    }

    pub fn diagonal(entries: &[f64]) -> Self {
        Self::from_fn(entries.len(), |r, c| {
            if r == c {
                Complex64::new(entries[r], 0.0)
            } else {
                ZERO
            }
        })
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalised) state vector.
    pub fn projector(psi: &[Complex64]) -> Self {
        Self::from_fn(psi.len(), |r, c| psi[r] * psi[c].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: Complex64) {
        self.data[r * self.dim + c] = value;
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self.get(c, r).conj())
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|k| self.get(k, k)).sum()
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * factor).collect(),
        }
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self * other - other * self
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        self * other + other * self
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `max |A - A†|` entrywise.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in r..self.dim {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self.get(r, c))
    }

    pub(crate) fn from_nalgebra(m: &DMatrix<Complex64>) -> Self {
        Self::from_fn(m.nrows(), |r, c| m[(r, c)])
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix({}x{})", self.dim, self.dim)?;
        for r in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|c| {
                    let z = self.get(r, c);
                    format!("{:+.6e}{:+.6e}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix dimensions differ");
        let n = self.dim;
        let mut out = ComplexMatrix::zeros(n);
        matmul_acc(n, ONE, &self.data, &rhs.data, &mut out.data);
        out
    }
}

impl Add for ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(mut self, rhs: ComplexMatrix) -> ComplexMatrix {
        self += &rhs;
        self
    }
}

impl Sub for ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(mut self, rhs: ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "matrix dimensions differ");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
        self
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!(self.dim, rhs.dim, "matrix dimensions differ");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Neg for ComplexMatrix {
    type Output = ComplexMatrix;

    fn neg(mut self) -> ComplexMatrix {
        for a in &mut self.data {
            *a = -*a;
        }
        self
    }
}

/// `out += factor * a * b` for row-major `n x n` slices.
#[inline]
pub(crate) fn matmul_acc(n: usize, factor: Complex64, a: &[Complex64], b: &[Complex64], out: &mut [Complex64]) {
    for r in 0..n {
        for k in 0..n {
            let ark = factor * a[r * n + k];
            if ark == ZERO {
                continue;
            }
            for c in 0..n {
                out[r * n + c] += ark * b[k * n + c];
            }
        }
    }
}

/// Pauli matrices and ladder operators in the `{|e⟩, |g⟩}` basis.
pub mod pauli {
    use super::*;

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_vec(2, vec![ZERO, ONE, ONE, ZERO]).unwrap()
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_vec(2, vec![ZERO, -I, I, ZERO]).unwrap()
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::diagonal(&[1.0, -1.0])
    }

    /// `σ_- = |g⟩⟨e|`
    pub fn sigma_minus() -> ComplexMatrix {
        ComplexMatrix::from_vec(2, vec![ZERO, ZERO, ONE, ZERO]).unwrap()
    }

    /// `σ_+ = |e⟩⟨g|`
    pub fn sigma_plus() -> ComplexMatrix {
        ComplexMatrix::from_vec(2, vec![ZERO, ONE, ZERO, ZERO]).unwrap()
    }

    /// `|e⟩⟨e|`
    pub fn excited_projector() -> ComplexMatrix {
        ComplexMatrix::diagonal(&[1.0, 0.0])
    }

    pub fn excited_state() -> ComplexMatrix {
        excited_projector()
    }

    pub fn ground_state() -> ComplexMatrix {
        ComplexMatrix::diagonal(&[0.0, 1.0])
    }

    /// `|+⟩⟨+|` with `|+⟩ = (|e⟩ + |g⟩)/√2`.
    pub fn plus_state() -> ComplexMatrix {
        let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        ComplexMatrix::projector(&[a, a])
    }

    pub fn maximally_mixed() -> ComplexMatrix {
        ComplexMatrix::diagonal(&[0.5, 0.5])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PureDephasing,
    SpontaneousDecay,
    SpinBoson,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PureDephasing => "pure_dephasing",
            ModelKind::SpontaneousDecay => "spontaneous_decay",
            ModelKind::SpinBoson => "spin_boson",
        }
    }
}

/// System Hamiltonian together with the operator that couples to the bath.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    h_s: ComplexMatrix,
    s: ComplexMatrix,
}

impl SystemModel {
    pub fn new(h_s: ComplexMatrix, s: ComplexMatrix) -> Result<Self> {
        if h_s.dim() != s.dim() {
            return Err(Error::DimensionMismatch {
                expected: h_s.dim(),
                found: s.dim(),
            });
        }
        if !h_s.is_hermitian(1e-12) {
            return Err(Error::InvalidParameter {
                name: "h_s".into(),
                reason: "system Hamiltonian is not Hermitian".into(),
            });
        }
        Ok(Self { h_s, s })
    }

    pub fn hamiltonian(&self) -> &ComplexMatrix {
        &self.h_s
    }

    pub fn coupling(&self) -> &ComplexMatrix {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.h_s.dim()
    }

    /// True when `S = S†` to within `1e-12`.
    pub fn coupling_is_self_adjoint(&self) -> bool {
        self.s.is_hermitian(1e-12)
    }

    /// Same Hamiltonian with the coupling operator set to zero.
    pub fn uncoupled(&self) -> Self {
        Self {
            h_s: self.h_s.clone(),
            s: ComplexMatrix::zeros(self.dim()),
        }
    }
}

fn required(params: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    params
        .get(name)
        .copied()
        .ok_or_else(|| Error::MissingParameter(name.to_string()))
}

/// Builds one of the benchmark qubit models.
///
/// * `pure_dephasing{omega_0}`: `H = ω₀σ_z/2`, `S = σ_z`
/// * `spontaneous_decay{omega_0}`: `H = ω₀σ_z/2`, `S = σ_-`
/// * `spin_boson{delta}`: `H = -Δσ_x/2`, `S = σ_z/2`
pub fn build_model(kind: ModelKind, params: &BTreeMap<String, f64>) -> Result<SystemModel> {
    use pauli::*;
    let half = Complex64::new(0.5, 0.0);
    match kind {
        ModelKind::PureDephasing => {
            let w0 = required(params, "omega_0")?;
            SystemModel::new(sigma_z().scale(half * w0), sigma_z())
        }
        ModelKind::SpontaneousDecay => {
            let w0 = required(params, "omega_0")?;
            SystemModel::new(sigma_z().scale(half * w0), sigma_minus())
        }
        ModelKind::SpinBoson => {
            let delta = required(params, "delta")?;
            SystemModel::new(sigma_x().scale(-half * delta), sigma_z().scale(half))
        }
    }
}

/// `tr(ρ A)`.
pub fn expectation(rho: &ComplexMatrix, obs: &ComplexMatrix) -> Result<Complex64> {
    if rho.dim() != obs.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            found: obs.dim(),
        });
    }
    let n = rho.dim();
    let mut acc = ZERO;
    for r in 0..n {
        for k in 0..n {
            acc += rho.get(r, k) * obs.get(k, r);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::pauli::*;
    use super::*;
    use proptest::prelude::*;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn dephasing_model_operators() {
        let m = build_model(ModelKind::PureDephasing, &params(&[("omega_0", 1.0)])).unwrap();
        assert_eq!(m.hamiltonian(), &ComplexMatrix::diagonal(&[0.5, -0.5]));
        assert_eq!(m.coupling(), &ComplexMatrix::diagonal(&[1.0, -1.0]));
        assert!(m.coupling_is_self_adjoint());
    }

    #[test]
    fn decay_model_uses_lowering_operator() {
        let m = build_model(ModelKind::SpontaneousDecay, &params(&[("omega_0", 1.0)])).unwrap();
        assert_eq!(m.coupling(), &sigma_minus());
        assert_eq!(m.coupling().get(1, 0), ONE);
        assert!(!m.coupling_is_self_adjoint());
    }

    #[test]
    fn spin_boson_operators() {
        let m = build_model(ModelKind::SpinBoson, &params(&[("delta", 0.5)])).unwrap();
        assert_eq!(m.hamiltonian(), &sigma_x().scale(Complex64::new(-0.25, 0.0)));
        assert_eq!(m.coupling(), &sigma_z().scale(Complex64::new(0.5, 0.0)));
    }

    #[test]
    fn missing_parameter_is_reported() {
        let err = build_model(ModelKind::SpinBoson, &params(&[("omega_0", 1.0)])).unwrap_err();
        assert!(matches!(err, Error::MissingParameter(ref p) if p == "delta"));
    }

    #[test]
    fn non_hermitian_hamiltonian_rejected() {
        assert!(SystemModel::new(sigma_minus(), sigma_z()).is_err());
    }

    #[test]
    fn expectation_examples() {
        assert!((expectation(&plus_state(), &sigma_x()).unwrap() - ONE).norm() < 1e-15);
        assert!(expectation(&maximally_mixed(), &sigma_z()).unwrap().norm() < 1e-15);
        let e = excited_projector();
        assert_eq!(expectation(&e, &e).unwrap(), ONE);
    }

    #[test]
    fn expectation_dimension_mismatch() {
        let err = expectation(&ComplexMatrix::identity(3), &sigma_z()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn ladder_algebra() {
        let sp = sigma_plus();
        let sm = sigma_minus();
        assert_eq!(sm.adjoint(), sp);
        assert_eq!(sp.commutator(&sm), sigma_z());
        assert_eq!(sigma_x().commutator(&sigma_y()), sigma_z().scale(2.0 * I));
    }

    fn arb_matrix() -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4).prop_map(|v| {
            ComplexMatrix::from_vec(2, v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect()).unwrap()
        })
    }

    fn hermitian(m: &ComplexMatrix) -> ComplexMatrix {
        (m.clone() + m.adjoint()).scale(Complex64::new(0.5, 0.0))
    }

    proptest! {
        #[test]
        fn expectation_is_bilinear(
            a in arb_matrix(), b in arb_matrix(), o in arb_matrix(),
            x in -2.0f64..2.0, y in -2.0f64..2.0,
        ) {
            let (cx, cy) = (Complex64::new(x, 0.3), Complex64::new(y, -0.7));
            let lhs = expectation(&(a.scale(cx) + b.scale(cy)), &o).unwrap();
            let rhs = cx * expectation(&a, &o).unwrap() + cy * expectation(&b, &o).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12);
            let lhs = expectation(&o, &(a.scale(cx) + b.scale(cy))).unwrap();
            let rhs = cx * expectation(&o, &a).unwrap() + cy * expectation(&o, &b).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn hermitian_expectation_is_real(a in arb_matrix(), o in arb_matrix()) {
            let v = expectation(&hermitian(&a), &hermitian(&o)).unwrap();
            prop_assert!(v.im.abs() < 1e-12);
        }
    }
}
