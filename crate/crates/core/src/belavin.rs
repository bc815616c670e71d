//! Belavin's elliptic R-matrix and the Yang–Baxter equation.
//!
//! Leg ordering is `space1 ⊗ space2`, flattened row-major: the entry
//! `R^{ij}_{i'j'}` sits at row `i*n + j`, column `i'*n + j'`.

use crate::elliptic::{near_band_zero, ModelParams, C64};
use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_diff, CMatrix};

/// `R(z)` as an `n² × n²` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RTensor {
    pub entries: CMatrix,
    pub z: C64,
    pub params: ModelParams,
}

impl RTensor {
    pub fn n(&self) -> usize {
        self.params.n()
    }

    /// `R^{ij}_{i'j'}` with indices taken mod `n`.
    pub fn get(&self, i: usize, j: usize, ip: usize, jp: usize) -> C64 {
        let n = self.n();
        self.entries[((i % n) * n + j % n, (ip % n) * n + jp % n)]
    }
}

/// `R(z)^{ij}_{i'j'} = δ_{i+j, i'+j'} θ^{(i'-j')}(z+η) / (θ^{(i'-i)}(η) θ^{(i-j')}(z)) · Π_{k=0}^{n-1} θ^{(k)}(z) / Π_{k=1}^{n-1} θ^{(k)}(0)`.
///
/// The factor `θ^{(i-j')}(z)` is cancelled against the product, so `R` is
/// evaluated as an entire function of `z` (it stays finite at `z = 0`).
pub fn r_matrix(z: C64, params: &ModelParams) -> Result<RTensor> {
    let n = params.n();
    let ni = n as i64;
    let eta = params.eta();
    for d in 0..ni {
        if near_band_zero(d, eta, params) {
            return Err(Error::pole("R-matrix coupling", eta));
        }
    }
    let band_z: Vec<C64> = (0..ni)
        .map(|k| params.theta_band(k, z))
        .collect::<Result<_>>()?;
    let band_eta: Vec<C64> = (0..ni)
        .map(|k| params.theta_band(k, eta))
        .collect::<Result<_>>()?;
    let band_shift: Vec<C64> = (0..ni)
        .map(|k| params.theta_band(k, z + eta))
        .collect::<Result<_>>()?;
    let mut norm = C64::new(1.0, 0.0);
    for k in 1..ni {
        norm *= params.theta_band(k, C64::new(0.0, 0.0))?;
    }
    // prod_{k != d} theta^{(k)}(z) for each d
    let partial: Vec<C64> = (0..n)
        .map(|d| {
            (0..n)
                .filter(|&k| k != d)
                .map(|k| band_z[k])
                .product::<C64>()
        })
        .collect();
    let m = |x: i64| x.rem_euclid(ni) as usize;
    let mut entries = CMatrix::zeros(n * n, n * n);
    for i in 0..ni {
        for j in 0..ni {
            for ip in 0..ni {
                let jp = (i + j - ip).rem_euclid(ni);
                entries[(m(i) * n + m(j), m(ip) * n + m(jp))] =
                    band_shift[m(ip - jp)] / band_eta[m(ip - i)] * partial[m(i - jp)] / norm;
            }
        }
    }
    Ok(RTensor {
        entries,
        z,
        params: *params,
    })
}

/// Which two of the three tensor factors an operator acts on.
#[derive(Debug, Clone, Copy)]
enum Legs {
    L12,
    L13,
    L23,
}

/// Embed a two-leg operator into `V ⊗ V ⊗ V`, flattened as `a*n² + b*n + c`.
fn embed(r: &CMatrix, n: usize, legs: Legs) -> CMatrix {
    let n3 = n * n * n;
    let mut out = CMatrix::zeros(n3, n3);
    let flat = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for x in 0..n {
                    for y in 0..n {
                        let (row, col, val) = match legs {
                            Legs::L12 => (flat(a, b, c), flat(x, y, c), r[(a * n + b, x * n + y)]),
                            Legs::L13 => (flat(a, b, c), flat(x, b, y), r[(a * n + c, x * n + y)]),
                            Legs::L23 => (flat(a, b, c), flat(a, x, y), r[(b * n + c, x * n + y)]),
                        };
                        out[(row, col)] = val;
                    }
                }
            }
        }
    }
    out
}

/// `max |R12(a) R13(b) R23(c) - R23(c) R13(b) R12(a)|` relative to the largest entry of either side.
///
/// Operators act on column vectors, so the left-hand side applies `R23` first.
pub fn ybe_residual_of(r12: &CMatrix, r13: &CMatrix, r23: &CMatrix, n: usize) -> f64 {
    let a = embed(r12, n, Legs::L12);
    let b = embed(r13, n, Legs::L13);
    let c = embed(r23, n, Legs::L23);
    let lhs = &a * &b * &c;
    let rhs = &c * &b * &a;
    let scale = max_abs(&lhs).max(max_abs(&rhs));
    if scale == 0.0 {
        return 0.0;
    }
    max_diff(&lhs, &rhs) / scale
}

/// Relative residual of `R12(z-w) R13(z) R23(w) = R23(w) R13(z) R12(z-w)`.
pub fn ybe_residual(z: C64, w: C64, params: &ModelParams) -> Result<f64> {
    let r12 = r_matrix(z - w, params)?;
    let r13 = r_matrix(z, params)?;
    let r23 = r_matrix(w, params)?;
    Ok(ybe_residual_of(
        &r12.entries,
        &r13.entries,
        &r23.entries,
        params.n(),
    ))
}
