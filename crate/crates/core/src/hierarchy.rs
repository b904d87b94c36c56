//! Truncated multi-index hierarchy and the HEOM right-hand side.
//!
//! Every index has `M = 2·(n_alpha + n_alpha_tilde)` slots laid out as
//! `[j (n_alpha), j̃ (n_alpha_tilde), i (n_alpha), ĩ (n_alpha_tilde)]`.
//! The ket indices `j, j̃` and bra indices `i, ĩ` of `ρ_{j,j̃}^{i,ĩ}` are
//! related by `adjoint(ρ_{j,j̃}^{i,ĩ}) = ρ_{i,ĩ}^{j,j̃}`.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::BathDecomposition;
use crate::error::{Error, Result};
use crate::operators::{matmul_acc, ComplexMatrix, SystemModel};

/// Default cap on the storage of one hierarchy state (1 GiB).
pub const DEFAULT_MEMORY_BUDGET: u128 = 1 << 30;

/// Marks a neighbor that lies outside the truncation.
pub const NO_NEIGHBOR: u32 = u32::MAX;

/// Elements (indices × dim²) above which the RHS is evaluated in parallel.
const PARALLEL_THRESHOLD: usize = 1 << 14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    pub j: Vec<u32>,
    pub j_tilde: Vec<u32>,
    pub i: Vec<u32>,
    pub i_tilde: Vec<u32>,
}

impl MultiIndex {
    pub fn zero(n_alpha: usize, n_alpha_tilde: usize) -> Self {
        Self {
            j: vec![0; n_alpha],
            j_tilde: vec![0; n_alpha_tilde],
            i: vec![0; n_alpha],
            i_tilde: vec![0; n_alpha_tilde],
        }
    }

    pub fn order(&self) -> u32 {
        self.slots().iter().sum()
    }

    /// Flattened slots in layout order.
    pub fn slots(&self) -> Vec<u32> {
        let mut s = Vec::with_capacity(2 * (self.j.len() + self.j_tilde.len()));
        s.extend_from_slice(&self.j);
        s.extend_from_slice(&self.j_tilde);
        s.extend_from_slice(&self.i);
        s.extend_from_slice(&self.i_tilde);
        s
    }

    fn from_slots(slots: &[u32], n_alpha: usize, n_alpha_tilde: usize) -> Self {
        let (j, rest) = slots.split_at(n_alpha);
        let (j_tilde, rest) = rest.split_at(n_alpha_tilde);
        let (i, i_tilde) = rest.split_at(n_alpha);
        Self {
            j: j.to_vec(),
            j_tilde: j_tilde.to_vec(),
            i: i.to_vec(),
            i_tilde: i_tilde.to_vec(),
        }
    }

    /// The index with ket and bra roles exchanged.
    pub fn conjugate(&self) -> Self {
        Self {
            j: self.i.clone(),
            j_tilde: self.i_tilde.clone(),
            i: self.j.clone(),
            i_tilde: self.j_tilde.clone(),
        }
    }
}

/// Enumerated multi-index set with precomputed neighbor offsets.
#[derive(Debug, Clone)]
pub struct HierarchyLayout {
    n_alpha: usize,
    n_alpha_tilde: usize,
    depth: u32,
    slots: Vec<u32>,
    lookup: HashMap<Vec<u32>, usize>,
    raise: Vec<u32>,
    lower: Vec<u32>,
    conjugate: Vec<u32>,
}

/// `C(n, k)` in `u128`, `None` on overflow.
fn binomial(n: u128, k: u128) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for step in 0..k {
        acc = acc.checked_mul(n - step)? / (step + 1);
    }
    Some(acc)
}

/// Number of indices over `slots` slots with total order `≤ depth`.
pub fn layout_size(slots: usize, depth: u32) -> Option<u128> {
    binomial(slots as u128 + depth as u128, slots as u128)
}

fn push_grade(prefix: &mut Vec<u32>, remaining_slots: usize, grade: u32, out: &mut Vec<u32>) {
    if remaining_slots == 0 {
        if grade == 0 {
            out.extend_from_slice(prefix);
        }
        return;
    }
    if remaining_slots == 1 {
        prefix.push(grade);
        out.extend_from_slice(prefix);
        prefix.pop();
        return;
    }
    for first in (0..=grade).rev() {
        prefix.push(first);
        push_grade(prefix, remaining_slots - 1, grade - first, out);
        prefix.pop();
    }
}

/// Enumerates all indices of total order `≤ depth` in graded order.
///
/// Fails with `CapacityExceeded` when one state of `dim × dim` matrices
/// would exceed `budget_bytes`.
pub fn enumerate_layout(
    n_alpha: usize,
    n_alpha_tilde: usize,
    depth: u32,
    dim: usize,
    budget_bytes: u128,
) -> Result<HierarchyLayout> {
    let m = 2 * (n_alpha + n_alpha_tilde);
    let bytes_per_index = (dim as u128) * (dim as u128) * 16;
    let required = layout_size(m, depth)
        .and_then(|count| count.checked_mul(bytes_per_index))
        .unwrap_or(u128::MAX);
    let count = layout_size(m, depth).unwrap_or(u128::MAX);
    if required > budget_bytes || count >= NO_NEIGHBOR as u128 {
        return Err(Error::CapacityExceeded {
            required,
            budget: budget_bytes,
        });
    }
    let count = count as usize;

    let mut slots = Vec::with_capacity(count * m);
    if m == 0 {
        // Only the empty index exists.
    } else {
        let mut prefix = Vec::with_capacity(m);
        for grade in 0..=depth {
            push_grade(&mut prefix, m, grade, &mut slots);
        }
    }
    let mut lookup = HashMap::with_capacity(count);
    for k in 0..count {
        lookup.insert(slots[k * m..(k + 1) * m].to_vec(), k);
    }

    let mut raise = vec![NO_NEIGHBOR; count * m];
    let mut lower = vec![NO_NEIGHBOR; count * m];
    let mut conjugate = vec![0u32; count];
    let half = n_alpha + n_alpha_tilde;
    let mut probe = vec![0u32; m];
    for k in 0..count {
        let idx = &slots[k * m..(k + 1) * m];
        for s in 0..m {
            probe.copy_from_slice(idx);
            probe[s] += 1;
            if let Some(&o) = lookup.get(&probe) {
                raise[k * m + s] = o as u32;
            }
            if idx[s] > 0 {
                probe[s] -= 2;
                lower[k * m + s] = lookup[&probe] as u32;
            }
        }
        probe[..half].copy_from_slice(&idx[half..]);
        probe[half..].copy_from_slice(&idx[..half]);
        conjugate[k] = lookup[&probe] as u32;
    }

    Ok(HierarchyLayout {
        n_alpha,
        n_alpha_tilde,
        depth,
        slots,
        lookup,
        raise,
        lower,
        conjugate,
    })
}

impl HierarchyLayout {
    pub fn len(&self) -> usize {
        self.conjugate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conjugate.is_empty()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn n_alpha(&self) -> usize {
        self.n_alpha
    }

    pub fn n_alpha_tilde(&self) -> usize {
        self.n_alpha_tilde
    }

    /// Slot count `M`.
    pub fn n_slots(&self) -> usize {
        2 * (self.n_alpha + self.n_alpha_tilde)
    }

    pub fn slots_of(&self, k: usize) -> &[u32] {
        let m = self.n_slots();
        &self.slots[k * m..(k + 1) * m]
    }

    pub fn index(&self, k: usize) -> MultiIndex {
        MultiIndex::from_slots(self.slots_of(k), self.n_alpha, self.n_alpha_tilde)
    }

    pub fn indices(&self) -> Vec<MultiIndex> {
        (0..self.len()).map(|k| self.index(k)).collect()
    }

    pub fn offset_of(&self, idx: &MultiIndex) -> Option<usize> {
        self.lookup.get(&idx.slots()).copied()
    }

    /// Offset of `idx + e_slot`, if retained.
    pub fn raised(&self, k: usize, slot: usize) -> Option<usize> {
        match self.raise[k * self.n_slots() + slot] {
            NO_NEIGHBOR => None,
            o => Some(o as usize),
        }
    }

    /// Offset of `idx - e_slot`, if that slot is positive.
    pub fn lowered(&self, k: usize, slot: usize) -> Option<usize> {
        match self.lower[k * self.n_slots() + slot] {
            NO_NEIGHBOR => None,
            o => Some(o as usize),
        }
    }

    /// Offset of the index with ket and bra roles exchanged.
    pub fn conjugate_of(&self, k: usize) -> usize {
        self.conjugate[k] as usize
    }

    fn check_decomposition(&self, decomp: &BathDecomposition) -> Result<()> {
        if decomp.n_alpha() != self.n_alpha {
            return Err(Error::DimensionMismatch {
                expected: self.n_alpha,
                found: decomp.n_alpha(),
            });
        }
        if decomp.n_alpha_tilde() != self.n_alpha_tilde {
            return Err(Error::DimensionMismatch {
                expected: self.n_alpha_tilde,
                found: decomp.n_alpha_tilde(),
            });
        }
        Ok(())
    }
}

/// `Σ j_n κ_n + Σ i_n κ_n* + Σ j̃_n κ̃_n + Σ ĩ_n κ̃_n*`
pub fn damping_rate(idx: &MultiIndex, decomp: &BathDecomposition) -> Result<Complex64> {
    let na = decomp.n_alpha();
    let nt = decomp.n_alpha_tilde();
    for (found, expected) in [
        (idx.j.len(), na),
        (idx.i.len(), na),
        (idx.j_tilde.len(), nt),
        (idx.i_tilde.len(), nt),
    ] {
        if found != expected {
            return Err(Error::DimensionMismatch { expected, found });
        }
    }
    let mut d = ZERO;
    for (n, term) in decomp.alpha_series.terms().iter().enumerate() {
        d += term.kappa * idx.j[n] as f64 + term.kappa.conj() * idx.i[n] as f64;
    }
    for (n, term) in decomp.alpha_tilde_series.terms().iter().enumerate() {
        d += term.kappa * idx.j_tilde[n] as f64 + term.kappa.conj() * idx.i_tilde[n] as f64;
    }
    Ok(d)
}

/// Flat array of auxiliary matrices, one `dim × dim` block per layout index.
#[derive(Debug, Clone)]
pub struct HierarchyState {
    layout: Arc<HierarchyLayout>,
    dim: usize,
    data: Vec<Complex64>,
}

impl HierarchyState {
    pub fn zeros(layout: Arc<HierarchyLayout>, dim: usize) -> Self {
        let data = vec![ZERO; layout.len() * dim * dim];
        Self { layout, dim, data }
    }

    pub fn from_matrices(layout: Arc<HierarchyLayout>, matrices: &[ComplexMatrix]) -> Result<Self> {
        if matrices.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                found: matrices.len(),
            });
        }
        let dim = matrices.first().map_or(1, |m| m.dim());
        let mut data = Vec::with_capacity(layout.len() * dim * dim);
        for m in matrices {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: m.dim(),
                });
            }
            data.extend_from_slice(m.as_slice());
        }
        Ok(Self { layout, dim, data })
    }

    pub fn layout(&self) -> &Arc<HierarchyLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn block(&self, k: usize) -> &[Complex64] {
        let d2 = self.dim * self.dim;
        &self.data[k * d2..(k + 1) * d2]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [Complex64] {
        let d2 = self.dim * self.dim;
        &mut self.data[k * d2..(k + 1) * d2]
    }

    pub fn matrix(&self, k: usize) -> ComplexMatrix {
        ComplexMatrix::from_vec(self.dim, self.block(k).to_vec()).expect("block is square")
    }

    pub fn matrices(&self) -> Vec<ComplexMatrix> {
        (0..self.len()).map(|k| self.matrix(k)).collect()
    }

    /// Largest entry modulus over all blocks.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `a·self + b·other`
    pub fn linear_combination(&self, a: Complex64, other: &Self, b: Complex64) -> Self {
        assert_eq!(self.data.len(), other.data.len());
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Self {
            layout: Arc::clone(&self.layout),
            dim: self.dim,
            data,
        }
    }
}

/// Places `rho0` on the all-zero index and zeros elsewhere.
pub fn initial_hierarchy(layout: Arc<HierarchyLayout>, rho0: &ComplexMatrix) -> Result<HierarchyState> {
    let trace = rho0.trace();
    if (trace - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
        return Err(Error::BadInitialState(format!("trace must be 1, got {trace}")));
    }
    if rho0.hermiticity_defect() > 1e-10 {
        return Err(Error::BadInitialState("density matrix is not Hermitian".into()));
    }
    let mut state = HierarchyState::zeros(layout, rho0.dim());
    state.block_mut(0).copy_from_slice(rho0.as_slice());
    Ok(state)
}

/// The physical reduced density matrix (all-zero index).
pub fn reduced_density(state: &HierarchyState) -> ComplexMatrix {
    state.matrix(0)
}

/// `max_k max|adjoint(ρ_k) - ρ_conj(k)|`
pub fn conjugate_symmetry_defect(state: &HierarchyState) -> f64 {
    let n = state.dim;
    let mut worst: f64 = 0.0;
    for k in 0..state.len() {
        let partner = state.layout.conjugate_of(k);
        if partner < k {
            continue;
        }
        let a = state.block(k);
        let b = state.block(partner);
        for r in 0..n {
            for c in 0..n {
                worst = worst.max((a[c * n + r].conj() - b[r * n + c]).norm());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Copy)]
enum Target {
    LeftS,
    LeftSdag,
    RightSdag,
    RightS,
}

/// Per-slot coupling data used by [`HeomOperator::apply`].
#[derive(Debug, Clone, Copy)]
struct SlotRule {
    /// Lowering amplitude (`ζ` for ket slots, `ζ*` for bra slots).
    zeta: Complex64,
    /// Accumulator receiving `n_s·zeta·ρ_{-e_s}`.
    lower_into: Target,
    /// Accumulators receiving `±ρ_{+e_s}`: `(+1 target, -1 target)`.
    raise_plus: Target,
    raise_minus: Target,
}

/// Precomputed HEOM generator for one layout, model and decomposition.
///
/// For index `k` the derivative is
/// `-i[H, ρ] - d_k ρ + S·L1 + S†·L2 + R1·S† + R2·S`, where the four
/// accumulators collect the lower- and higher-tier neighbors.
#[derive(Debug, Clone)]
pub struct HeomOperator {
    layout: Arc<HierarchyLayout>,
    dim: usize,
    k_op: Vec<Complex64>,
    k_adj: Vec<Complex64>,
    s: Vec<Complex64>,
    s_adj: Vec<Complex64>,
    rules: Vec<SlotRule>,
    damping: Vec<Complex64>,
}

impl HeomOperator {
    pub fn new(layout: Arc<HierarchyLayout>, model: &SystemModel, decomp: &BathDecomposition) -> Result<Self> {
        layout.check_decomposition(decomp)?;
        let dim = model.dim();
        let minus_i = Complex64::new(0.0, -1.0);
        let k_mat = model.hamiltonian().scale(minus_i);
        let k_adj = k_mat.adjoint();
        let s = model.coupling().clone();
        let s_adj = s.adjoint();

        let mut rules = Vec::with_capacity(layout.n_slots());
        for term in decomp.alpha_series.terms() {
            rules.push(SlotRule {
                zeta: term.zeta,
                lower_into: Target::LeftS,
                raise_plus: Target::RightSdag,
                raise_minus: Target::LeftSdag,
            });
        }
        for term in decomp.alpha_tilde_series.terms() {
            rules.push(SlotRule {
                zeta: term.zeta,
                lower_into: Target::LeftSdag,
                raise_plus: Target::RightS,
                raise_minus: Target::LeftS,
            });
        }
        for term in decomp.alpha_series.terms() {
            rules.push(SlotRule {
                zeta: term.zeta.conj(),
                lower_into: Target::RightSdag,
                raise_plus: Target::LeftS,
                raise_minus: Target::RightS,
            });
        }
        for term in decomp.alpha_tilde_series.terms() {
            rules.push(SlotRule {
                zeta: term.zeta.conj(),
                lower_into: Target::RightS,
                raise_plus: Target::LeftSdag,
                raise_minus: Target::RightSdag,
            });
        }

        let damping = (0..layout.len())
            .map(|k| damping_rate(&layout.index(k), decomp))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            layout,
            dim,
            k_op: k_mat.into_vec(),
            k_adj: k_adj.into_vec(),
            s: s.into_vec(),
            s_adj: s_adj.into_vec(),
            rules,
            damping,
        })
    }

    pub fn layout(&self) -> &Arc<HierarchyLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total number of complex entries in one state.
    pub fn state_len(&self) -> usize {
        self.layout.len() * self.dim * self.dim
    }

    pub fn damping(&self, k: usize) -> Complex64 {
        self.damping[k]
    }

    /// Writes the time derivative of `input` into `output`.
    pub fn apply(&self, input: &[Complex64], output: &mut [Complex64]) {
        let d2 = self.dim * self.dim;
        assert_eq!(input.len(), self.state_len());
        assert_eq!(output.len(), self.state_len());
        if output.len() >= PARALLEL_THRESHOLD {
            output.par_chunks_mut(d2).enumerate().for_each_init(
                || vec![ZERO; 4 * d2],
                |scratch, (k, out)| self.apply_block(k, input, out, scratch),
            );
        } else {
            let mut scratch = vec![ZERO; 4 * d2];
            for (k, out) in output.chunks_mut(d2).enumerate() {
                self.apply_block(k, input, out, &mut scratch);
            }
        }
    }

    fn apply_block(&self, k: usize, input: &[Complex64], out: &mut [Complex64], scratch: &mut [Complex64]) {
        let n = self.dim;
        let d2 = n * n;
        let layout = &*self.layout;
        let m = layout.n_slots();
        let rho = &input[k * d2..(k + 1) * d2];
        let slots = &layout.slots[k * m..(k + 1) * m];
        scratch.fill(ZERO);

        let one = Complex64::new(1.0, 0.0);
        let mut touched = [false; 4];
        for s in 0..m {
            let rule = &self.rules[s];
            let count = slots[s];
            if count > 0 {
                let low = layout.lower[k * m + s] as usize;
                let src = &input[low * d2..(low + 1) * d2];
                let coef = rule.zeta * count as f64;
                let t = rule.lower_into as usize;
                touched[t] = true;
                for (acc, x) in scratch[t * d2..(t + 1) * d2].iter_mut().zip(src) {
                    *acc += coef * x;
                }
            }
            let up = layout.raise[k * m + s];
            if up != NO_NEIGHBOR {
                let up = up as usize;
                let src = &input[up * d2..(up + 1) * d2];
                let (p, q) = (rule.raise_plus as usize, rule.raise_minus as usize);
                touched[p] = true;
                touched[q] = true;
                for (acc, x) in scratch[p * d2..(p + 1) * d2].iter_mut().zip(src) {
                    *acc += x;
                }
                for (acc, x) in scratch[q * d2..(q + 1) * d2].iter_mut().zip(src) {
                    *acc -= x;
                }
            }
        }

        let damp = self.damping[k];
        for (o, x) in out.iter_mut().zip(rho) {
            *o = -damp * x;
        }
        matmul_acc(n, one, &self.k_op, rho, out);
        matmul_acc(n, one, rho, &self.k_adj, out);
        let (acc, _) = scratch.split_at(4 * d2);
        if touched[Target::LeftS as usize] {
            matmul_acc(n, one, &self.s, &acc[0..d2], out);
        }
        if touched[Target::LeftSdag as usize] {
            matmul_acc(n, one, &self.s_adj, &acc[d2..2 * d2], out);
        }
        if touched[Target::RightSdag as usize] {
            matmul_acc(n, one, &acc[2 * d2..3 * d2], &self.s_adj, out);
        }
        if touched[Target::RightS as usize] {
            matmul_acc(n, one, &acc[3 * d2..4 * d2], &self.s, out);
        }
    }
}

/// Evaluates the HEOM derivative of `state`.
pub fn heom_rhs(
    layout: &Arc<HierarchyLayout>,
    model: &SystemModel,
    decomp: &BathDecomposition,
    state: &HierarchyState,
) -> Result<HierarchyState> {
    if state.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.len(),
            found: state.len(),
        });
    }
    if state.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: state.dim(),
        });
    }
    let op = HeomOperator::new(Arc::clone(layout), model, decomp)?;
    let mut out = HierarchyState::zeros(Arc::clone(layout), model.dim());
    op.apply(state.as_slice(), out.as_mut_slice());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{ExpTerm, ExponentialSeries};
    use crate::operators::pauli;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn layout(na: usize, nt: usize, depth: u32) -> Arc<HierarchyLayout> {
        Arc::new(enumerate_layout(na, nt, depth, 2, DEFAULT_MEMORY_BUDGET).unwrap())
    }

    fn decay_decomp() -> BathDecomposition {
        BathDecomposition {
            alpha_series: ExponentialSeries::new(vec![ExpTerm::new(c(0.5, 0.0), c(0.2, 1.0))]).unwrap(),
            alpha_tilde_series: ExponentialSeries::empty(),
            beta: f64::INFINITY,
            self_adjoint: false,
        }
    }

    #[test]
    fn two_slot_order() {
        let l = layout(1, 0, 2);
        let got: Vec<Vec<u32>> = (0..l.len()).map(|k| l.slots_of(k).to_vec()).collect();
        let expected = vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
        assert_eq!(got, expected);
    }

    #[test]
    fn depth_zero_is_single_index() {
        let l = layout(2, 1, 0);
        assert_eq!(l.len(), 1);
        assert!(l.slots_of(0).iter().all(|&s| s == 0));
    }

    #[test]
    fn four_slots_depth_three_matches_brute_force() {
        let l = layout(1, 1, 3);
        let mut brute = 0;
        for a in 0..4u32 {
            for b in 0..4 {
                for cc in 0..4 {
                    for d in 0..4 {
                        if a + b + cc + d <= 3 {
                            brute += 1;
                            let idx = MultiIndex {
                                j: vec![a],
                                j_tilde: vec![b],
                                i: vec![cc],
                                i_tilde: vec![d],
                            };
                            assert!(l.offset_of(&idx).is_some());
                        }
                    }
                }
            }
        }
        assert_eq!(brute, 35);
        assert_eq!(l.len(), 35);
    }

    #[test]
    fn neighbor_tables_are_consistent() {
        let l = layout(2, 1, 4);
        for k in 0..l.len() {
            for s in 0..l.n_slots() {
                if let Some(up) = l.raised(k, s) {
                    assert_eq!(l.lowered(up, s), Some(k));
                }
                if let Some(down) = l.lowered(k, s) {
                    assert_eq!(l.raised(down, s), Some(k));
                }
            }
            assert_eq!(l.conjugate_of(l.conjugate_of(k)), k);
            assert_eq!(l.index(l.conjugate_of(k)), l.index(k).conjugate());
        }
    }

    #[test]
    fn grade_is_non_decreasing() {
        let l = layout(1, 1, 5);
        let orders: Vec<u32> = l.indices().iter().map(|m| m.order()).collect();
        assert!(orders.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(l.len() as u128, layout_size(4, 5).unwrap());
    }

    #[test]
    fn capacity_exceeded() {
        let err = enumerate_layout(4, 4, 12, 2, 1 << 20).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { .. }));
    }

    #[test]
    fn damping_examples() {
        let d = decay_decomp();
        let zero = MultiIndex::zero(1, 0);
        assert_eq!(damping_rate(&zero, &d).unwrap(), c(0.0, 0.0));
        let j1 = MultiIndex {
            j: vec![1],
            j_tilde: vec![],
            i: vec![0],
            i_tilde: vec![],
        };
        assert_eq!(damping_rate(&j1, &d).unwrap(), c(0.2, 1.0));
        let j1i1 = MultiIndex { i: vec![1], ..j1 };
        assert_eq!(damping_rate(&j1i1, &d).unwrap(), c(0.4, 0.0));
    }

    #[test]
    fn initial_hierarchy_examples() {
        let l = layout(1, 0, 2);
        let s = initial_hierarchy(Arc::clone(&l), &pauli::plus_state()).unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(reduced_density(&s), pauli::plus_state());
        for k in 1..6 {
            assert_eq!(s.matrix(k).max_abs(), 0.0);
        }
        assert_eq!(conjugate_symmetry_defect(&s), 0.0);
        let s = initial_hierarchy(Arc::clone(&l), &pauli::maximally_mixed()).unwrap();
        assert_eq!(reduced_density(&s), pauli::maximally_mixed());
        let bad = ComplexMatrix::diagonal(&[0.5, 0.4]);
        assert!(matches!(
            initial_hierarchy(l, &bad).unwrap_err(),
            Error::BadInitialState(_)
        ));
    }

    #[test]
    fn perturbed_symmetry_defect() {
        let l = layout(1, 0, 2);
        let mut s = initial_hierarchy(l, &pauli::plus_state()).unwrap();
        s.block_mut(1)[1] += c(0.0, 1e-3);
        assert!((conjugate_symmetry_defect(&s) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn closed_system_limit() {
        let l = layout(0, 0, 4);
        let model = crate::operators::SystemModel::new(pauli::sigma_z().scale(c(0.5, 0.0)), pauli::sigma_z()).unwrap();
        let rho = pauli::plus_state();
        let s = initial_hierarchy(Arc::clone(&l), &rho).unwrap();
        let d = heom_rhs(&l, &model, &BathDecomposition::empty(), &s).unwrap();
        let expected = model.hamiltonian().commutator(&rho).scale(c(0.0, -1.0));
        assert_eq!(d.matrix(0), expected);
    }

    #[test]
    fn decay_first_tier_source_term() {
        let l = layout(1, 0, 2);
        let model =
            crate::operators::SystemModel::new(pauli::sigma_z().scale(c(0.5, 0.0)), pauli::sigma_minus()).unwrap();
        let s = initial_hierarchy(Arc::clone(&l), &pauli::excited_state()).unwrap();
        let d = heom_rhs(&l, &model, &decay_decomp(), &s).unwrap();
        let expected = pauli::sigma_minus().scale(c(0.5, 0.0));
        assert!(d.matrix(1).max_abs_diff(&expected) < 1e-15);
        assert!(d.matrix(0).trace().norm() < 1e-15);
    }

    #[test]
    fn mismatched_decomposition_rejected() {
        let l = layout(2, 0, 2);
        let model = crate::operators::SystemModel::new(pauli::sigma_z(), pauli::sigma_z()).unwrap();
        let s = HierarchyState::zeros(Arc::clone(&l), 2);
        let err = heom_rhs(&l, &model, &decay_decomp(), &s).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
