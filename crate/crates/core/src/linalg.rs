//! Small dense complex matrices.

use nalgebra::DMatrix;

use crate::elliptic::C64;
use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;

/// Condition estimate above which a matrix is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;

pub fn norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Inverse via LU with partial pivoting; fails when `||A||_1 ||A^-1||_1` exceeds [`SINGULAR_COND`].
pub fn inverse_checked(m: &CMatrix) -> Result<CMatrix> {
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::NearSingular { cond: f64::INFINITY })?;
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || cond > SINGULAR_COND {
        return Err(Error::NearSingular { cond });
    }
    Ok(inv)
}

/// `max |A - B|`.
/// Adjugate (transposed cofactor matrix); well defined for singular input.
pub fn adjugate(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    if n == 1 {
        return CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    }
    CMatrix::from_fn(n, n, |i, j| {
        let minor = m.clone().remove_row(j).remove_column(i);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        minor.determinant() * sign
    })
}

pub fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
