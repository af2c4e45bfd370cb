//! Small dense symmetric solves for the closed-form coefficient fits.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};

/// In-place Cholesky factorisation of a row-major `n x n` SPD matrix (lower
/// triangle). Returns the smallest squared pivot, or `None` on a non-positive
/// pivot.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Option<f64> {
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        min_pivot = min_pivot.min(d);
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    Some(min_pivot)
}

/// Solves `L Lᵀ x = b` given the factor from [`cholesky_in_place`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Outcome of [`solve_normal_equations`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    /// Diagonal shift added on top of the ridge term.
    pub jitter: f64,
    /// The Gram matrix was numerically singular; the solution relies on the
    /// jitter (any minimiser of the least-squares objective is then valid,
    /// this one is the slightly shrunk one).
    pub rank_deficient: bool,
}

/// Relative diagonal jitter added to every normal-equation solve.
pub const JITTER: f64 = 1e-10;

/// Solves `(G + ridge·I + jitter·I) x = b` for symmetric positive
/// semi-definite `G`, with `jitter = JITTER · max(mean diagonal, 1)`.
///
/// A pivot below `10 · jitter` marks the system as rank deficient. If the
/// factorisation still fails the jitter grows tenfold until it succeeds.
pub fn solve_normal_equations(gram: &[f64], n: usize, b: &[f64], ridge: f64) -> Result<SpdSolution> {
    let mean_diag = (0..n).map(|i| gram[i * n + i]).sum::<f64>() / n as f64;
    let mut jitter = JITTER * mean_diag.max(1.0);
    let mut grown = false;
    for _ in 0..12 {
        let mut a = gram.to_vec();
        for i in 0..n {
            a[i * n + i] += ridge + jitter;
        }
        if let Some(min_pivot) = cholesky_in_place(&mut a, n) {
            return Ok(SpdSolution {
                x: refine(gram, n, b, ridge, &a),
                jitter,
                rank_deficient: grown || min_pivot < ridge + 10.0 * jitter,
            });
        }
        jitter *= 10.0;
        grown = true;
    }
    Err(Error::Degenerate("normal equations could not be factorised".into()))
}

/// Iterative refinement against the unjittered system: repeated
/// `x += (G + ridge + jitter)⁻¹ (b - (G + ridge) x)`. For singular `G` this
/// converges to the minimum-norm minimiser.
fn refine(gram: &[f64], n: usize, b: &[f64], ridge: f64, factor: &[f64]) -> Vec<f64> {
    let mut x = cholesky_solve(factor, n, b);
    let mut r = alloc::vec![0.0; n];
    for _ in 0..REFINE_STEPS {
        for i in 0..n {
            let gx: f64 = gram[i * n..(i + 1) * n].iter().zip(&x).map(|(g, v)| g * v).sum();
            r[i] = b[i] - gx - ridge * x[i];
        }
        let dx = cholesky_solve(factor, n, &r);
        let (dn, xn) = dx
            .iter()
            .zip(&x)
            .fold((0.0f64, 0.0f64), |(a, c), (d, v)| (a.max(d.abs()), c.max(v.abs())));
        for (v, d) in x.iter_mut().zip(&dx) {
            *v += d;
        }
        if dn <= 1e-13 * xn.max(1e-300) {
            break;
        }
    }
    x
}

const REFINE_STEPS: usize = 30;
