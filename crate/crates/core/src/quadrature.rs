//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Integrands are vector valued (`[f64; N]`) so that several moments of the
//! same weight function can be accumulated from a single set of function
//! evaluations. The subinterval with the largest error estimate is bisected
//! until the summed error drops below the requested tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Absolute tolerance used for moments and normalisation checks.
pub const DEFAULT_ABS_TOL: f64 = 1e-8;

const MAX_INTERVALS: usize = 4000;

// Kronrod abscissae on [-1, 1] (non-negative half), from QUADPACK qk15.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];

// Gauss weights for the 7-point rule (odd Kronrod nodes 1, 3, 5 and the centre).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature<const N: usize> {
    pub value: [f64; N],
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug)]
struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl<const N: usize> Eq for Segment<N> {}

impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<const N: usize, F>(f: &F, a: f64, b: f64) -> Segment<N>
where
    F: Fn(f64) -> [f64; N],
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];

    let fc = f(centre);
    for i in 0..N {
        kron[i] = WGK[7] * fc[i];
        gauss[i] = WG[3] * fc[i];
    }
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        for i in 0..N {
            let s = f1[i] + f2[i];
            kron[i] += w * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }

    let mut error: f64 = 0.0;
    for i in 0..N {
        kron[i] *= half;
        gauss[i] *= half;
        error = error.max((kron[i] - gauss[i]).abs());
    }
    if kron.iter().any(|v| !v.is_finite()) {
        error = f64::INFINITY;
    }
    Segment {
        a,
        b,
        value: kron,
        error,
    }
}

/// Integrate a vector-valued function over `[a, b]` to absolute tolerance
/// `abs_tol` (measured on the worst component).
pub fn integrate<const N: usize, F>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Quadrature<N>>
where
    F: Fn(f64) -> [f64; N],
{
    integrate_breaks(f, &[a, b], abs_tol, "integral")
}

/// Like [`integrate`] but starts from the given partition. `breaks` must be
/// sorted; duplicate points are skipped. Useful when the integrand has kinks
/// or steep fronts at known locations.
pub fn integrate_breaks<const N: usize, F>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    what: &'static str,
) -> Result<Quadrature<N>>
where
    F: Fn(f64) -> [f64; N],
{
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod(&f, w[0], w[1]));
        }
    }
    if heap.is_empty() {
        return Ok(Quadrature {
            value: [0.0; N],
            error: 0.0,
            intervals: 0,
        });
    }

    loop {
        let error: f64 = heap.iter().map(|s| s.error).sum();
        if error <= abs_tol || heap.len() >= MAX_INTERVALS {
            let mut value = [0.0; N];
            for s in heap.iter() {
                for (acc, x) in value.iter_mut().zip(&s.value) {
                    *acc += x;
                }
            }
            if error <= abs_tol {
                return Ok(Quadrature {
                    value,
                    error,
                    intervals: heap.len(),
                });
            }
            return Err(Error::Quadrature {
                what,
                estimate: value[0],
                error,
                intervals: heap.len(),
            });
        }

        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            let value = heap.iter().fold(worst.value[0], |acc, s| acc + s.value[0]);
            return Err(Error::Quadrature {
                what,
                estimate: value,
                error,
                intervals: heap.len() + 1,
            });
        }
        heap.push(kronrod(&f, worst.a, mid));
        heap.push(kronrod(&f, mid, worst.b));
    }
}

/// Kronrod nodes and weights `(x, w)` for `[a, b]`.
pub fn kronrod_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..15).map(move |i| {
        let j = if i < 8 { i } else { 14 - i };
        let x = if i < 8 { -XGK[j] } else { XGK[j] };
        (centre + half * x, half * WGK[j])
    })
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    integrate(|x| [f(x)], a, b, abs_tol).map(|q| q.value[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let q = integrate(|x| [x * x, x.powi(5), 1.0], 0.0, 2.0, 1e-12).unwrap();
        assert!((q.value[0] - 8.0 / 3.0).abs() < 1e-13);
        assert!((q.value[1] - 64.0 / 6.0).abs() < 1e-12);
        assert!((q.value[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kronrod_nodes_integrate_polynomials() {
        let v: f64 = kronrod_nodes(1.0, 3.0).map(|(x, w)| w * x.powi(6)).sum();
        assert!((v - (3f64.powi(7) - 1.0) / 7.0).abs() < 1e-11);
        assert_eq!(kronrod_nodes(0.0, 1.0).count(), 15);
    }

    #[test]
    fn endpoint_singularity() {
        // ∫_0^1 1/sqrt(x) dx = 2
        let v = integrate_scalar(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-8).unwrap();
        assert!((v - 2.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn gaussian_bump() {
        let s = 1e-3;
        let f = |x: f64| (-(x - 0.3).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let v = integrate_breaks(|x| [f(x)], &[0.0, 0.3, 1.0], 1e-10, "bump").unwrap();
        assert!((v.value[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_integrable_reports_diagnostics() {
        let err = integrate_scalar(|x| 1.0 / x, 0.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, Error::Quadrature { intervals, .. } if intervals > 0));
    }
}
