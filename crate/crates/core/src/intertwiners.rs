//! Intertwining vectors `phi(z)`, their inverse and the identities they satisfy.
//!
//! Index convention: `phi.entries[(i, k)]` has the component index `i` (rows,
//! `theta_{i+1}`) and the weight direction `k` (columns). The inverse
//! `phi_bar[(k, i)]` is the ordinary matrix inverse, so
//! `sum_i phi[(i, k')] phi_bar[(k, i)] = delta_{k k'}`.

use crate::elliptic::{ModelParams, C64};
use crate::error::{Error, Result};
use crate::linalg::{adjugate, inverse_checked, CMatrix};

/// Sample points of the two-scale extrapolation for `phi_tilde(0)`.

/// A point `lambda` of `C^n` together with the model it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    lambda: Vec<C64>,
    params: ModelParams,
}

impl WeightVector {
    /// Rejects vectors of the wrong length and pairs `lambda_i - lambda_j` on the lattice.
    pub fn new(lambda: Vec<C64>, params: ModelParams) -> Result<Self> {
        if lambda.len() != params.n() {
            return Err(Error::DegenerateWeights(format!(
                "expected {} components, got {}",
                params.n(),
                lambda.len()
            )));
        }
        let torus = params.torus();
        for i in 0..lambda.len() {
            for j in (i + 1)..lambda.len() {
                if torus.near_lattice(lambda[i] - lambda[j]) {
                    return Err(Error::DegenerateWeights(format!(
                        "lambda_{} - lambda_{} is a lattice point",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { lambda, params })
    }

    pub fn lambda(&self) -> &[C64] {
        &self.lambda
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// `Lambda = sum_j lambda_j`.
    pub fn total(&self) -> C64 {
        self.lambda.iter().sum()
    }

    /// `<lambda, eps_bar_k> = lambda_k - Lambda / n`.
    pub fn pairing(&self, k: usize) -> C64 {
        self.lambda[k] - self.total() / self.n() as f64
    }

    /// `lambda_{ij} = lambda_i - lambda_j`.
    pub fn diff(&self, i: usize, j: usize) -> C64 {
        self.lambda[i] - self.lambda[j]
    }

    pub fn negated(&self) -> Self {
        Self {
            lambda: self.lambda.iter().map(|x| -x).collect(),
            params: self.params,
        }
    }

    /// All components shifted by the same constant.
    pub fn shifted(&self, delta: C64) -> Self {
        Self {
            lambda: self.lambda.iter().map(|x| x + delta).collect(),
            params: self.params,
        }
    }
}

/// The matrix of intertwining vectors at spectral point `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntertwinerMatrix {
    pub entries: CMatrix,
    pub z: C64,
    pub lambda: WeightVector,
}

/// `phi(z)[(i, k)] = theta_{i+1}(z/n - <lambda, eps_bar_k>) / (sqrt(-1) eta_D)`.
pub fn phi_matrix(z: C64, lam: &WeightVector) -> Result<IntertwinerMatrix> {
    let p = lam.params();
    let n = lam.n();
    let norm = p.torus().i_eta();
    let mut entries = CMatrix::zeros(n, n);
    for k in 0..n {
        let arg = z / n as f64 - lam.pairing(k);
        for i in 0..n {
            entries[(i, k)] = p.theta_level(i as i64 + 1, arg)? / norm;
        }
    }
    Ok(IntertwinerMatrix {
        entries,
        z,
        lambda: lam.clone(),
    })
}

/// `phi_bar(z)`, indexed `[(k, i)]`.
pub fn phi_inverse(z: C64, lam: &WeightVector) -> Result<CMatrix> {
    inverse_checked(&phi_matrix(z, lam)?.entries)
}

/// `phi_tilde(0) = lim_{z -> 0} theta(z) phi_bar(z)`.
///
/// Since `det phi(z) = theta(z) C` with `C` the `z`-independent part of the product form,
/// `theta(z) phi_bar(z) = adj phi(z) / C`, which is evaluated directly at `z = 0`.
pub fn phi_tilde0(lam: &WeightVector) -> Result<CMatrix> {
    let p = lam.params();
    let norm = p.torus().i_eta();
    let n = lam.n();
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    let mut c = C64::new(sign, 0.0) / norm;
    for i in 0..n {
        for j in (i + 1)..n {
            c *= p.theta(lam.diff(j, i))? / norm;
        }
    }
    let phi0 = phi_matrix(C64::new(0.0, 0.0), lam)?.entries;
    Ok(adjugate(&phi0) / c)
}

/// Closed form of `det phi(z)`:
/// `(-1)^{n-1} theta(z)/(i eta_D) prod_{i<j} theta(lambda_j - lambda_i)/(i eta_D)`.
pub fn det_phi_closed_form(z: C64, lam: &WeightVector) -> Result<C64> {
    let p = lam.params();
    let norm = p.torus().i_eta();
    let n = lam.n();
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    let mut acc = p.theta(z)? / norm * sign;
    for i in 0..n {
        for j in (i + 1)..n {
            acc *= p.theta(lam.diff(j, i))? / norm;
        }
    }
    Ok(acc)
}

/// `|det phi(z) - closed form|`.
pub fn det_residual(z: C64, lam: &WeightVector) -> Result<f64> {
    let det = phi_matrix(z, lam)?.entries.determinant();
    Ok((det - det_phi_closed_form(z, lam)?).norm())
}

/// Right-hand side of the cross-sum formula for `sum_i phi_bar_mu(z)[(k, i)] phi_lambda(z + u)[(i, k2)]`.
pub fn cross_sum_closed_form(
    z: C64,
    u: C64,
    lam: &WeightVector,
    mu: &WeightVector,
    k: usize,
    k2: usize,
) -> Result<C64> {
    let p = lam.params();
    let torus = p.torus();
    torus.ensure_generic("cross-sum spectral point", z)?;
    let un = u / lam.n() as f64;
    let mut acc = p.theta(z + un + mu.pairing(k) - lam.pairing(k2))? / p.theta(z)?;
    for l in (0..mu.n()).filter(|&l| l != k) {
        acc *= p.theta(un + mu.pairing(l) - lam.pairing(k2))?
            / p.theta(mu.pairing(l) - mu.pairing(k))?;
    }
    Ok(acc)
}

/// `|sum_i phi_bar_mu(z)[(k, i)] phi_lambda(z + u)[(i, k2)] - closed form|`.
pub fn cross_sum_residual(
    z: C64,
    u: C64,
    lam: &WeightVector,
    mu: &WeightVector,
    k: usize,
    k2: usize,
) -> Result<f64> {
    let bar = phi_inverse(z, mu)?;
    let phi = phi_matrix(z + u, lam)?.entries;
    let lhs: C64 = (0..lam.n()).map(|i| bar[(k, i)] * phi[(i, k2)]).sum();
    Ok((lhs - cross_sum_closed_form(z, u, lam, mu, k, k2)?).norm())
}

/// Residual of
/// `sum_m phi_bar(eta)[(k, m)] theta_m((Lambda + eta)/n - x) = i eta_D theta(eta + lambda_k - x)/theta(eta) prod_{l != k} theta(lambda_l - x)/theta(lambda_lk)`,
/// relative to the size of both sides.
pub fn phi_bar_eta_residual(lam: &WeightVector, x: C64, k: usize) -> Result<f64> {
    let p = lam.params();
    let n = lam.n();
    let eta = p.eta();
    let bar = phi_inverse(eta, lam)?;
    let arg = (lam.total() + eta) / n as f64 - x;
    let mut lhs = C64::new(0.0, 0.0);
    for m in 0..n {
        lhs += bar[(k, m)] * p.theta_level(m as i64 + 1, arg)?;
    }
    let mut rhs = p.torus().i_eta() * p.theta(eta + lam.lambda()[k] - x)? / p.theta(eta)?;
    for l in (0..n).filter(|&l| l != k) {
        rhs *= p.theta(lam.lambda()[l] - x)? / p.theta(lam.diff(l, k))?;
    }
    Ok((lhs - rhs).norm() / (lhs.norm() + rhs.norm() + 1e-300))
}

/// Residual of
/// `sum_j phi_tilde(0)[(k, j)] theta_j(Lambda/n - x) = i eta_D theta(lambda_k - x) prod_{l != k} theta(lambda_l - x)/theta(lambda_lk)`.
pub fn phi_tilde0_residual(lam: &WeightVector, x: C64, k: usize) -> Result<f64> {
    let p = lam.params();
    let n = lam.n();
    let tilde = phi_tilde0(lam)?;
    let arg = lam.total() / n as f64 - x;
    let mut lhs = C64::new(0.0, 0.0);
    for j in 0..n {
        lhs += tilde[(k, j)] * p.theta_level(j as i64 + 1, arg)?;
    }
    let mut rhs = p.torus().i_eta() * p.theta(lam.lambda()[k] - x)?;
    for l in (0..n).filter(|&l| l != k) {
        rhs *= p.theta(lam.lambda()[l] - x)? / p.theta(lam.diff(l, k))?;
    }
    Ok((lhs - rhs).norm() / (lhs.norm() + rhs.norm() + 1e-300))
}
