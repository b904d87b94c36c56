//! Adaptive Gauss–Kronrod (7/15) integration of complex-valued functions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// Gauss weights for the 7-point rule; they sit on the odd Kronrod nodes.
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_INTERVALS: usize = 4000;

struct Segment {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> Complex64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = half * XGK[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += pair * WGK[k];
        if k % 2 == 1 {
            gauss += pair * WG[k / 2];
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).norm();
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Interval with the largest error estimate is bisected until the summed
/// estimate drops below `tol`.
pub fn integrate<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, tol: f64) -> Result<Complex64> {
    if a == b {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let first = gk15(&f, a, b);
    if !first.value.re.is_finite() || !first.value.im.is_finite() {
        return Err(Error::NonConvergent {
            tolerance: tol,
            estimate: f64::INFINITY,
        });
    }
    let mut total = first.value;
    let mut err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    while err > tol {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::NonConvergent {
                tolerance: tol,
                estimate: err,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            return Err(Error::NonConvergent {
                tolerance: tol,
                estimate: err,
            });
        }
        let left = gk15(&f, worst.a, mid);
        let right = gk15(&f, mid, worst.b);
        total += left.value + right.value - worst.value;
        err += left.error + right.error - worst.error;
        if !total.re.is_finite() || !total.im.is_finite() {
            return Err(Error::NonConvergent {
                tolerance: tol,
                estimate: f64::INFINITY,
            });
        }
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed the drift of the running updates.
    let mut sum = Complex64::new(0.0, 0.0);
    let mut segments = heap.into_vec();
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    for s in &segments {
        sum += s.value;
    }
    Ok(sum)
}

/// Integrates `f` over `[0, ∞)` with the map `x = s/(1-s)`.
pub fn integrate_half_line<F: Fn(f64) -> Complex64>(f: F, tol: f64) -> Result<Complex64> {
    integrate(
        |s: f64| {
            let one_minus = 1.0 - s;
            let x = s / one_minus;
            let v = f(x);
            if v == Complex64::new(0.0, 0.0) {
                v
            } else {
                v / (one_minus * one_minus)
            }
        },
        0.0,
        1.0,
        tol,
    )
}
