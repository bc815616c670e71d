//! Classical Lax operator, its gauge form, the Baecklund map `(lambda, t) -> (mu, t_tilde)`,
//! the M-matrix and the residual checks tying them together.
//!
//! Gauge-frame matrices are indexed `[(k', k)]`. The Lax equation reads
//! `M(z) L(z) = L_tilde(z) M(z)`. The eigenvector and kernel properties hold at
//! the modification point `z = u`, for the column `s_k = s_mu(lambda_k + eta/n)`
//! with `s_mu(x) = prod_l theta(x - mu_l)`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::elliptic::{phi_kernel, ModelParams, C64};
use crate::error::{Error, Result};
use crate::intertwiners::{phi_inverse, phi_matrix, WeightVector};
use crate::linalg::{max_abs, max_diff, CMatrix};

/// Tolerance of the relation `v = u + sum(lambda - mu)`.
pub const SHIFT_TOL: f64 = 1e-10;
/// Tolerance when checking `t`, `t_tilde`, `C` against `(lambda, mu, c)`.
pub const STEP_CONSISTENCY_TOL: f64 = 1e-10;

/// Positions `lambda` with their conjugate weights `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    lambda: WeightVector,
    t: Vec<C64>,
}

impl PhaseConfig {
    pub fn new(lambda: WeightVector, t: Vec<C64>) -> Result<Self> {
        if t.len() != lambda.n() {
            return Err(Error::InvalidParameter {
                field: "t",
                reason: format!("expected {} weights, got {}", lambda.n(), t.len()),
            });
        }
        if let Some(k) = t.iter().position(|x| x.norm() == 0.0 || !x.norm().is_finite()) {
            return Err(Error::InvalidParameter {
                field: "t",
                reason: format!("t_{} must be finite and nonzero", k + 1),
            });
        }
        Ok(Self { lambda, t })
    }

    pub fn lambda(&self) -> &WeightVector {
        &self.lambda
    }

    pub fn t(&self) -> &[C64] {
        &self.t
    }

    pub fn params(&self) -> &ModelParams {
        self.lambda.params()
    }
}

/// One Baecklund transformation with all of its data.
#[derive(Debug, Clone, PartialEq)]
pub struct BacklundStep {
    source: PhaseConfig,
    mu: WeightVector,
    t_tilde: Vec<C64>,
    c_weights: Vec<C64>,
    c: C64,
    u: C64,
    v: C64,
}

impl BacklundStep {
    /// Builds the step from the old and new positions, the log-eigenvalue `c` and the modification point `u`.
    pub fn new(lam: &WeightVector, mu: &WeightVector, c: C64, u: C64) -> Result<Self> {
        let t = backlund_t(lam, mu, c)?;
        let source = PhaseConfig::new(lam.clone(), t)?;
        Ok(Self {
            source,
            mu: mu.clone(),
            t_tilde: backlund_ttilde(lam, mu, c)?,
            c_weights: backlund_c(lam, mu)?,
            c,
            u,
            v: modification_zero(lam, mu, u),
        })
    }

    /// Assembles a step from externally supplied data and validates every invariant.
    pub fn from_parts(
        source: PhaseConfig,
        mu: WeightVector,
        t_tilde: Vec<C64>,
        c_weights: Vec<C64>,
        c: C64,
        u: C64,
        v: C64,
    ) -> Result<Self> {
        let lam = source.lambda();
        if mu.n() != lam.n() || mu.params() != lam.params() {
            return Err(Error::InconsistentStep("mu lives in a different model".into()));
        }
        let gap = (v - modification_zero(lam, &mu, u)).norm();
        if gap > SHIFT_TOL {
            return Err(Error::ShiftMismatch { gap });
        }
        let check = |name: &str, given: &[C64], expect: Vec<C64>| -> Result<()> {
            if given.len() != expect.len() {
                return Err(Error::InconsistentStep(format!("{name} has the wrong length")));
            }
            for (k, (g, e)) in given.iter().zip(&expect).enumerate() {
                let rel = (g - e).norm() / e.norm().max(1e-300);
                if rel > STEP_CONSISTENCY_TOL {
                    return Err(Error::InconsistentStep(format!(
                        "{name}_{} deviates by {rel:.3e}",
                        k + 1
                    )));
                }
            }
            Ok(())
        };
        check("t", source.t(), backlund_t(lam, &mu, c)?)?;
        check("t_tilde", &t_tilde, backlund_ttilde(lam, &mu, c)?)?;
        check("C", &c_weights, backlund_c(lam, &mu)?)?;
        Ok(Self {
            source,
            mu,
            t_tilde,
            c_weights,
            c,
            u,
            v,
        })
    }

    pub fn source(&self) -> &PhaseConfig {
        &self.source
    }

    pub fn lambda(&self) -> &WeightVector {
        self.source.lambda()
    }

    pub fn t(&self) -> &[C64] {
        self.source.t()
    }

    pub fn mu(&self) -> &WeightVector {
        &self.mu
    }

    pub fn t_tilde(&self) -> &[C64] {
        &self.t_tilde
    }

    /// The normalisation constants `C_k` of the M-matrix.
    pub fn c_weights(&self) -> &[C64] {
        &self.c_weights
    }

    pub fn c(&self) -> C64 {
        self.c
    }

    pub fn u(&self) -> C64 {
        self.u
    }

    pub fn v(&self) -> C64 {
        self.v
    }

    /// The transformed phase-space point `(mu, t_tilde)`.
    pub fn target(&self) -> Result<PhaseConfig> {
        PhaseConfig::new(self.mu.clone(), self.t_tilde.clone())
    }
}

/// `v = u + sum_k (lambda_k - mu_k)`.
pub fn modification_zero(lam: &WeightVector, mu: &WeightVector, u: C64) -> C64 {
    u + lam.total() - mu.total()
}

/// Factorised classical Lax operator `L(z)[(i, j)] = sum_k phi(z - v)[(i, k)] t_k phi_bar(z - v - eta)[(k, j)]`.
pub fn lax_classical(z: C64, cfg: &PhaseConfig, v: C64) -> Result<CMatrix> {
    let lam = cfg.lambda();
    let eta = cfg.params().eta();
    let left = phi_matrix(z - v, lam)?.entries;
    let right = phi_inverse(z - v - eta, lam)?;
    let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(cfg.t()));
    Ok(left * diag * right)
}

/// Gauge-frame Lax operator
/// `L[(k', k)] = Phi_{z-v-eta}(lambda_kk' + eta/n) prod_l theta(lambda_lk' + eta/n) / prod_{l != k} theta(lambda_lk) t_k'`.
pub fn lax_gauge(z: C64, cfg: &PhaseConfig, v: C64) -> Result<CMatrix> {
    let lam = cfg.lambda();
    gauge_matrix(z - v - cfg.params().eta(), lam, lam.lambda(), cfg.t())
}

/// Shared shape of the gauge-frame `L` and `M`:
/// `X[(k', k)] = Phi_w(lambda_k - nu_k' + eta/n) prod_l theta(lambda_l - nu_k' + eta/n) / prod_{l != k} theta(lambda_lk) w_k'`.
fn gauge_matrix(w: C64, lam: &WeightVector, nu: &[C64], weights: &[C64]) -> Result<CMatrix> {
    let p = lam.params();
    let torus = p.torus();
    let n = lam.n();
    let en = p.eta_n();
    let x = lam.lambda();
    let mut row_factor = Vec::with_capacity(n);
    for kp in 0..n {
        let mut acc = weights[kp];
        for l in 0..n {
            acc *= p.theta(x[l] - nu[kp] + en)?;
        }
        row_factor.push(acc);
    }
    let mut col_factor = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = C64::new(1.0, 0.0);
        for l in (0..n).filter(|&l| l != k) {
            acc *= p.theta(lam.diff(l, k))?;
        }
        col_factor.push(acc);
    }
    let mut out = CMatrix::zeros(n, n);
    for kp in 0..n {
        for k in 0..n {
            out[(kp, k)] = phi_kernel(w, x[k] - nu[kp] + en, torus)? * row_factor[kp] / col_factor[k];
        }
    }
    Ok(out)
}

/// `t_k = e^c prod_s theta(lambda_k - mu_s + eta/n) / theta(lambda_k - mu_s)`.
pub fn backlund_t(lam: &WeightVector, mu: &WeightVector, c: C64) -> Result<Vec<C64>> {
    let p = lam.params();
    let torus = p.torus();
    let en = p.eta_n();
    let (x, y) = (lam.lambda(), mu.lambda());
    (0..lam.n())
        .map(|k| {
            let mut acc = c.exp();
            for s in 0..mu.n() {
                torus.ensure_generic("lambda_k - mu_s", x[k] - y[s])?;
                acc *= p.theta(x[k] - y[s] + en)? / p.theta(x[k] - y[s])?;
            }
            Ok(acc)
        })
        .collect()
}

/// `t_tilde_k = e^c prod_{m != k} theta(mu_mk - eta/n)/theta(mu_mk + eta/n) prod_s theta(lambda_s - mu_k + eta/n)/theta(lambda_s - mu_k)`.
pub fn backlund_ttilde(lam: &WeightVector, mu: &WeightVector, c: C64) -> Result<Vec<C64>> {
    let p = lam.params();
    let torus = p.torus();
    let en = p.eta_n();
    let (x, y) = (lam.lambda(), mu.lambda());
    let n = lam.n();
    (0..n)
        .map(|k| {
            let mut acc = c.exp();
            for m in (0..n).filter(|&m| m != k) {
                torus.ensure_generic("mu_mk + eta/n", mu.diff(m, k) + en)?;
                acc *= p.theta(mu.diff(m, k) - en)? / p.theta(mu.diff(m, k) + en)?;
            }
            for s in 0..n {
                torus.ensure_generic("lambda_s - mu_k", x[s] - y[k])?;
                acc *= p.theta(x[s] - y[k] + en)? / p.theta(x[s] - y[k])?;
            }
            Ok(acc)
        })
        .collect()
}

/// `C_k = prod_s theta(mu_sk - eta/n) / theta(lambda_s - mu_k)`.
pub fn backlund_c(lam: &WeightVector, mu: &WeightVector) -> Result<Vec<C64>> {
    let p = lam.params();
    let torus = p.torus();
    let en = p.eta_n();
    let (x, y) = (lam.lambda(), mu.lambda());
    (0..lam.n())
        .map(|k| {
            let mut acc = C64::new(1.0, 0.0);
            for s in 0..lam.n() {
                torus.ensure_generic("lambda_s - mu_k", x[s] - y[k])?;
                acc *= p.theta(mu.diff(s, k) - en)? / p.theta(x[s] - y[k])?;
            }
            Ok(acc)
        })
        .collect()
}

/// Gauge-frame M-matrix
/// `M[(k', k)] = Phi_{z-v-eta}(lambda_k - mu_k' + eta/n) prod_l theta(lambda_l - mu_k' + eta/n) / prod_{l != k} theta(lambda_lk) C_k'`.
pub fn m_matrix(z: C64, lam: &WeightVector, mu: &WeightVector, u: C64, v: C64) -> Result<CMatrix> {
    let gap = (v - modification_zero(lam, mu, u)).norm();
    if gap > SHIFT_TOL {
        return Err(Error::ShiftMismatch { gap });
    }
    let weights = backlund_c(lam, mu)?;
    gauge_matrix(z - v - lam.params().eta(), lam, mu.lambda(), &weights)
}

fn step_m_matrix(z: C64, step: &BacklundStep) -> Result<CMatrix> {
    let lam = step.lambda();
    gauge_matrix(
        z - step.v - lam.params().eta(),
        lam,
        step.mu.lambda(),
        &step.c_weights,
    )
}

/// `max |M L - L_tilde M|` relative to the largest entry of either product.
pub fn lax_equation_residual(z: C64, step: &BacklundStep) -> Result<f64> {
    let l = lax_gauge(z, step.source(), step.v)?;
    let lt = lax_gauge(z, &step.target()?, step.v)?;
    let m = step_m_matrix(z, step)?;
    let lhs = &m * &l;
    let rhs = &lt * &m;
    Ok(max_diff(&lhs, &rhs) / max_abs(&lhs).max(max_abs(&rhs)).max(1e-300))
}

/// `s_k = prod_l theta(lambda_k + eta/n - mu_l)`.
fn s_column(lam: &WeightVector, mu: &WeightVector) -> Result<Vec<C64>> {
    let p = lam.params();
    let en = p.eta_n();
    lam.lambda()
        .iter()
        .map(|&x| {
            mu.lambda()
                .iter()
                .map(|&m| p.theta(x + en - m))
                .product::<Result<C64>>()
        })
        .collect()
}

/// `max_k' |sum_k L(u)[(k', k)] s_k - e^c s_k'| / max_k' |e^c s_k'|`.
pub fn eigenvector_residual(step: &BacklundStep) -> Result<f64> {
    let l = lax_gauge(step.u, step.source(), step.v)?;
    let s = s_column(step.lambda(), &step.mu)?;
    let ec = step.c.exp();
    let n = s.len();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for kp in 0..n {
        let lhs: C64 = (0..n).map(|k| l[(kp, k)] * s[k]).sum();
        worst = worst.max((lhs - ec * s[kp]).norm());
        scale = scale.max((ec * s[kp]).norm());
    }
    Ok(worst / scale.max(1e-300))
}

/// `max_k' |sum_k M(u)[(k', k)] s_k|`, relative to `max_k' sum_k |M(u)[(k', k)] s_k|` when that
/// exceeds one and absolute otherwise (for `n = 1`, `M(u)` vanishes identically).
pub fn kernel_residual(step: &BacklundStep) -> Result<f64> {
    let m = step_m_matrix(step.u, step)?;
    let s = s_column(step.lambda(), &step.mu)?;
    let n = s.len();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for kp in 0..n {
        let sum: C64 = (0..n).map(|k| m[(kp, k)] * s[k]).sum();
        let mag: f64 = (0..n).map(|k| (m[(kp, k)] * s[k]).norm()).sum();
        worst = worst.max(sum.norm());
        scale = scale.max(mag);
    }
    Ok(worst / scale.max(1.0))
}

/// Both sides of
/// `sum_k theta(z + x_k' - x_k - xi) prod_s theta(x_k - y_s + xi) prod_{l != k} theta(x_k' - x_l - xi)/theta(x_k - x_l) = theta(z) prod_s theta(x_k' - y_s)`
/// with `z = n xi + sum_k (x_k - y_k)`, plus the largest magnitude among the summed terms
/// and the right-hand side.
pub fn ks_identity_sides(
    xvec: &[C64],
    yvec: &[C64],
    xi: C64,
    kprime: usize,
    params: &ModelParams,
) -> Result<(C64, C64, f64)> {
    let n = xvec.len();
    if yvec.len() != n || kprime >= n {
        return Err(Error::InvalidParameter {
            field: "xvec/yvec",
            reason: "length mismatch or index out of range".into(),
        });
    }
    let th = |x: C64| params.theta(x);
    let z = xi * n as f64 + xvec.iter().sum::<C64>() - yvec.iter().sum::<C64>();
    let mut lhs = C64::new(0.0, 0.0);
    let mut scale: f64 = 0.0;
    for k in 0..n {
        let mut term = th(z + xvec[kprime] - xvec[k] - xi)?;
        for &y in yvec {
            term *= th(xvec[k] - y + xi)?;
        }
        for l in (0..n).filter(|&l| l != k) {
            params.torus().ensure_generic("x_k - x_l", xvec[k] - xvec[l])?;
            term *= th(xvec[kprime] - xvec[l] - xi)? / th(xvec[k] - xvec[l])?;
        }
        scale = scale.max(term.norm());
        lhs += term;
    }
    let mut rhs = th(z)?;
    for &y in yvec {
        rhs *= th(xvec[kprime] - y)?;
    }
    Ok((lhs, rhs, scale.max(rhs.norm())))
}

/// Absolute residual `|LHS - RHS|` of the identity in [`ks_identity_sides`].
pub fn ks_identity_residual(
    xvec: &[C64],
    yvec: &[C64],
    xi: C64,
    kprime: usize,
    params: &ModelParams,
) -> Result<f64> {
    let (lhs, rhs, _) = ks_identity_sides(xvec, yvec, xi, kprime, params)?;
    Ok((lhs - rhs).norm())
}

/// Distance between the gauge-frame `L` and the conjugated factorised form
/// `(phi_bar(w) L_classical phi(w))^T`, `w = z - v - eta`, relative to the gauge entries.
pub fn gauge_consistency_residual(z: C64, cfg: &PhaseConfig, v: C64) -> Result<f64> {
    let lam = cfg.lambda();
    let w = z - v - cfg.params().eta();
    let conj = (phi_inverse(w, lam)? * lax_classical(z, cfg, v)? * phi_matrix(w, lam)?.entries)
        .transpose();
    let gauge = lax_gauge(z, cfg, v)?;
    Ok(max_diff(&conj, &gauge) / max_abs(&gauge).max(1e-300))
}

/// Residual of the conjugation formula at `v = -eta`:
/// `(phi_bar(w) phi(w + eta))[(k, k')] = theta(w + eta/n + lambda_kk')/theta(w) prod_{j != k} theta(lambda_jk' + eta/n)/theta(lambda_jk)`.
pub fn conjl_residual(w: C64, lam: &WeightVector) -> Result<f64> {
    let p = lam.params();
    let n = lam.n();
    let en = p.eta_n();
    let lhs = phi_inverse(w, lam)? * phi_matrix(w + p.eta(), lam)?.entries;
    let mut rhs = CMatrix::zeros(n, n);
    for k in 0..n {
        for kp in 0..n {
            let mut acc = p.theta(w + en + lam.diff(k, kp))? / p.theta(w)?;
            for j in (0..n).filter(|&j| j != k) {
                acc *= p.theta(lam.diff(j, kp) + en)? / p.theta(lam.diff(j, k))?;
            }
            rhs[(k, kp)] = acc;
        }
    }
    Ok(max_diff(&lhs, &rhs) / max_abs(&rhs).max(1e-300))
}

// ---------------------------------------------------------------------------
// Generating function

/// Minimum distance between an integration path and the lattice zeros of `theta`.
pub const PATH_CLEARANCE: f64 = 1e-3;
const PATH_BUMPS: [f64; 4] = [0.01, -0.01, 0.1, -0.1];
const QUAD_TOL: f64 = 1e-14;
const QUAD_MAX_DEPTH: u32 = 40;

fn rule(degree: usize) -> Vec<(f64, f64)> {
    let mut pairs = GaussLegendre::new(NonZeroUsize::new(degree).expect("positive degree"))
        .as_node_weight_pairs()
        .to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

fn rules() -> &'static (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    static RULES: OnceLock<(Vec<(f64, f64)>, Vec<(f64, f64)>)> = OnceLock::new();
    RULES.get_or_init(|| (rule(10), rule(20)))
}

/// `log theta(x)` on the branch closest to `reference`.
fn log_theta_near(x: C64, reference: C64, p: &ModelParams) -> Result<C64> {
    let principal = p.theta(x)?.ln();
    let turns = ((reference.im - principal.im) / (2.0 * PI)).round();
    Ok(principal + C64::new(0.0, 2.0 * PI * turns))
}

/// One Gauss rule on `[a, b]`, with the branch carried from `log_a` node by node.
/// Returns `None` when consecutive nodes jump by more than a quarter turn.
fn gauss_segment(
    rule: &[(f64, f64)],
    a: C64,
    b: C64,
    log_a: C64,
    p: &ModelParams,
) -> Result<Option<(C64, C64)>> {
    let half = (b - a) * 0.5;
    let mid = (a + b) * 0.5;
    let mut prev = log_a;
    let mut sum = C64::new(0.0, 0.0);
    for &(node, weight) in rule {
        let val = log_theta_near(mid + half * node, prev, p)?;
        if (val.im - prev.im).abs() > PI / 2.0 {
            return Ok(None);
        }
        sum += val * weight;
        prev = val;
    }
    let log_b = log_theta_near(b, prev, p)?;
    if (log_b.im - prev.im).abs() > PI / 2.0 {
        return Ok(None);
    }
    Ok(Some((sum * half, log_b)))
}

/// Adaptive G10/G20 integral of `log theta` along the segment `[a, b]`.
fn integrate_segment(a: C64, b: C64, log_a: C64, p: &ModelParams, depth: u32) -> Result<(C64, C64)> {
    let (g10, g20) = rules();
    let coarse = gauss_segment(g10, a, b, log_a, p)?;
    let fine = gauss_segment(g20, a, b, log_a, p)?;
    if let (Some((i10, _)), Some((i20, log_b))) = (coarse, fine) {
        let scale = (b - a).norm().max(1e-300);
        if (i10 - i20).norm() <= QUAD_TOL * scale.max(i20.norm()) || depth >= QUAD_MAX_DEPTH {
            return Ok((i20, log_b));
        }
    } else if depth >= QUAD_MAX_DEPTH {
        return Err(Error::PathThroughZero { re: a.re, im: a.im });
    }
    let m = (a + b) * 0.5;
    let (left, log_m) = integrate_segment(a, m, log_a, p, depth + 1)?;
    let (right, log_b) = integrate_segment(m, b, log_m, p, depth + 1)?;
    Ok((left + right, log_b))
}

/// Distance from the segment `[a, b]` to the nearest lattice point.
fn segment_clearance(a: C64, b: C64, p: &ModelParams) -> f64 {
    let tau = p.tau();
    let span = ((a - b).norm() + 2.0) / tau.im.min(1.0);
    let lo = |x: f64| (x - span).floor() as i64;
    let hi = |x: f64| (x + span).ceil() as i64;
    let centre = (a + b) * 0.5;
    let k_c = centre.im / tau.im;
    let j_c = centre.re - k_c * tau.re;
    let mut best = f64::INFINITY;
    for k in lo(k_c)..=hi(k_c) {
        for j in lo(j_c)..=hi(j_c) {
            let w = C64::new(j as f64, 0.0) + tau * k as f64;
            let d = b - a;
            let s = if d.norm_sqr() == 0.0 {
                0.0
            } else {
                (((w - a) * d.conj()).re / d.norm_sqr()).clamp(0.0, 1.0)
            };
            best = best.min((a + d * s - w).norm());
        }
    }
    best
}

/// Path from the base point `1/2` to `x`: straight when it stays clear of the lattice,
/// otherwise bent through a vertically shifted midpoint.
fn integration_path(x: C64, p: &ModelParams) -> Result<Vec<C64>> {
    let base = C64::new(0.5, 0.0);
    if segment_clearance(base, x, p) >= PATH_CLEARANCE {
        return Ok(vec![base, x]);
    }
    for bump in PATH_BUMPS {
        let mid = (base + x) * 0.5 + C64::new(0.0, bump);
        if segment_clearance(base, mid, p) >= PATH_CLEARANCE
            && segment_clearance(mid, x, p) >= PATH_CLEARANCE
        {
            return Ok(vec![base, mid, x]);
        }
    }
    Err(Error::PathThroughZero { re: x.re, im: x.im })
}

/// `S(x) = int_{1/2}^{x} log theta(y) dy`, with the branch of `log theta` continued from the
/// principal value at `1/2`.
pub fn log_theta_integral(x: C64, p: &ModelParams) -> Result<C64> {
    let path = integration_path(x, p)?;
    let mut log_a = p.theta(path[0])?.ln();
    let mut total = C64::new(0.0, 0.0);
    for leg in path.windows(2) {
        let (val, log_b) = integrate_segment(leg[0], leg[1], log_a, p, 0)?;
        total += val;
        log_a = log_b;
    }
    Ok(total)
}

/// Generating function of the Baecklund map:
/// `F = sum_{k,k'} [S(lambda_k - mu_k' + eta/n) - S(lambda_k - mu_k')]
///    + 1/2 sum_{k != k'} [S(mu_kk' - eta/n) - S(mu_kk' + eta/n)] + c (u + sum_k (lambda_k - mu_k))`,
/// so that `exp(dF/dlambda_k) = t_k` and `exp(-dF/dmu_k) = t_tilde_k`.
pub fn generating_function(lam: &WeightVector, mu: &WeightVector, c: C64, u: C64) -> Result<C64> {
    let p = lam.params();
    let en = p.eta_n();
    let n = lam.n();
    let s = |x: C64| log_theta_integral(x, p);
    let mut f = C64::new(0.0, 0.0);
    for &x in lam.lambda() {
        for &y in mu.lambda() {
            f += s(x - y + en)? - s(x - y)?;
        }
    }
    let mut pair = C64::new(0.0, 0.0);
    for k in 0..n {
        for kp in (0..n).filter(|&kp| kp != k) {
            pair += s(mu.diff(k, kp) - en)? - s(mu.diff(k, kp) + en)?;
        }
    }
    Ok(f + pair * 0.5 + c * modification_zero(lam, mu, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::TorusParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn params(n: usize) -> ModelParams {
        ModelParams::new(n, c(0.23, 0.0), TorusParams::new(c(0.0, 1.0)).unwrap()).unwrap()
    }

    fn weights(v: &[C64], n: usize) -> WeightVector {
        WeightVector::new(v.to_vec(), params(n)).unwrap()
    }

    fn fixture() -> (WeightVector, WeightVector) {
        let lam = weights(&[c(0.11, 0.0), c(0.43, 0.0), c(-0.37, 0.0)], 3);
        let mu = lam.shifted(c(-0.05, 0.0));
        (lam, mu)
    }

    fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (WeightVector, WeightVector) {
        let lam: Vec<C64> = (0..n)
            .map(|_| c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.3..0.3)))
            .collect();
        let mu: Vec<C64> = lam
            .iter()
            .map(|x| x - 0.05 + c(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
            .collect();
        (weights(&lam, n), weights(&mu, n))
    }

    #[test]
    fn phase_config_rejects_zero_weight() {
        let (lam, _) = fixture();
        assert!(PhaseConfig::new(lam.clone(), vec![c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).is_err());
        assert!(PhaseConfig::new(lam, vec![c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn classical_matches_naive_double_sum() {
        let (lam, mu) = fixture();
        let t = backlund_t(&lam, &mu, c(0.1, 0.0)).unwrap();
        let cfg = PhaseConfig::new(lam.clone(), t.clone()).unwrap();
        let (z, v) = (c(0.2, 0.1), c(-0.15, 0.05));
        let l = lax_classical(z, &cfg, v).unwrap();
        let phi = phi_matrix(z - v, &lam).unwrap().entries;
        let bar = phi_inverse(z - v - lam.params().eta(), &lam).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = c(0.0, 0.0);
                for k in 0..3 {
                    acc += bar[(k, j)] * phi[(i, k)] * t[k];
                }
                assert!((l[(i, j)] - acc).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn classical_determinant_vanishes_at_v() {
        let (lam, mu) = fixture();
        let cfg = PhaseConfig::new(lam.clone(), backlund_t(&lam, &mu, c(0.1, 0.0)).unwrap()).unwrap();
        let v = c(0.07, 0.02);
        let near = lax_classical(v + 1e-6, &cfg, v).unwrap().determinant().norm();
        let far = lax_classical(v + 0.1, &cfg, v).unwrap().determinant().norm();
        assert!(near < 1e-4 * far);
    }

    #[test]
    fn classical_rank_one() {
        let lam = weights(&[c(0.2, 0.1)], 1);
        let cfg = PhaseConfig::new(lam.clone(), vec![c(1.3, -0.2)]).unwrap();
        let p = lam.params();
        let (z, v) = (c(0.3, 0.05), c(0.1, -0.1));
        let l = lax_classical(z, &cfg, v).unwrap()[(0, 0)];
        let expect = c(1.3, -0.2) * p.theta_level(1, z - v).unwrap() / p.theta_level(1, z - v - p.eta()).unwrap();
        assert!((l - expect).norm() < 1e-12);
    }

    #[test]
    fn gauge_is_conjugated_classical() {
        let (lam, mu) = fixture();
        let cfg = PhaseConfig::new(lam.clone(), backlund_t(&lam, &mu, c(0.1, 0.0)).unwrap()).unwrap();
        assert!(gauge_consistency_residual(c(0.2, 0.13), &cfg, c(-0.1, 0.02)).unwrap() < 1e-9);
    }

    #[test]
    fn gauge_diagonal_entry() {
        let (lam, _) = fixture();
        let p = *lam.params();
        let t = vec![c(1.1, 0.0), c(0.9, 0.1), c(1.0, -0.2)];
        let cfg = PhaseConfig::new(lam.clone(), t.clone()).unwrap();
        let v = c(0.1, 0.0);
        let z = c(0.3, 0.0) + v + p.eta();
        let g = lax_gauge(z, &cfg, v).unwrap();
        let k = 1;
        let en = p.eta_n();
        let mut expect = phi_kernel(c(0.3, 0.0), en, p.torus()).unwrap() * t[k];
        for l in 0..3 {
            expect *= p.theta(lam.diff(l, k) + en).unwrap();
        }
        for l in [0, 2] {
            expect /= p.theta(lam.diff(l, k)).unwrap();
        }
        assert!((g[(k, k)] - expect).norm() < 1e-12);
    }

    #[test]
    fn conjugation_at_minus_eta() {
        let (lam, _) = fixture();
        assert!(conjl_residual(c(0.2, 0.1), &lam).unwrap() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=3 {
            let (lam, _) = random_pair(&mut rng, n);
            assert!(conjl_residual(c(0.31, -0.12), &lam).unwrap() < 1e-9);
        }
    }

    #[test]
    fn backlund_vectors_rank_one_and_periodicity() {
        let lam = weights(&[c(0.2, 0.1)], 1);
        let mu = weights(&[c(0.13, 0.05)], 1);
        let p = lam.params();
        let cc = c(0.1, 0.03);
        let t = backlund_t(&lam, &mu, cc).unwrap()[0];
        let tt = backlund_ttilde(&lam, &mu, cc).unwrap()[0];
        let d = c(0.07, 0.05);
        let expect = cc.exp() * p.theta(d + p.eta()).unwrap() / p.theta(d).unwrap();
        assert!((t - expect).norm() < 1e-13);
        assert!((tt - t).norm() < 1e-13);
        let cw = backlund_c(&lam, &mu).unwrap()[0];
        assert!((cw - p.theta(-p.eta()).unwrap() / p.theta(d).unwrap()).norm() < 1e-13);
        let shifted = backlund_t(&lam, &mu, cc + c(0.0, 2.0 * PI)).unwrap()[0];
        assert!((shifted - t).norm() < 1e-12 * t.norm());
        let shifted = backlund_ttilde(&lam, &mu, cc + c(0.0, 2.0 * PI)).unwrap()[0];
        assert!((shifted - tt).norm() < 1e-12 * tt.norm());
    }

    #[test]
    fn c_weights_follow_permutations() {
        let (lam, mu) = fixture();
        let perm = weights(&[mu.lambda()[1], mu.lambda()[0], mu.lambda()[2]], 3);
        let a = backlund_c(&lam, &mu).unwrap();
        let b = backlund_c(&lam, &perm).unwrap();
        assert!((a[0] - b[1]).norm() < 1e-13 && (a[1] - b[0]).norm() < 1e-13 && (a[2] - b[2]).norm() < 1e-13);
    }

    #[test]
    fn t_invariant_under_common_shift() {
        let (lam, mu) = fixture();
        let d = c(0.17, 0.09);
        let a = backlund_t(&lam, &mu, c(0.1, 0.0)).unwrap();
        let b = backlund_t(&lam.shifted(d), &mu.shifted(d), c(0.1, 0.0)).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k]).norm() < 1e-10 * a[k].norm());
        }
    }

    #[test]
    fn m_matrix_guards_shift() {
        let (lam, mu) = fixture();
        let u = c(0.05, 0.0);
        let v = modification_zero(&lam, &mu, u);
        assert!(m_matrix(c(0.2, 0.0), &lam, &mu, u, v).is_ok());
        assert!(matches!(
            m_matrix(c(0.2, 0.0), &lam, &mu, u, v + 1e-6),
            Err(Error::ShiftMismatch { .. })
        ));
    }

    #[test]
    fn step_validation() {
        let (lam, mu) = fixture();
        let step = BacklundStep::new(&lam, &mu, c(0.1, 0.0), c(0.05, 0.0)).unwrap();
        let ok = BacklundStep::from_parts(
            step.source().clone(),
            mu.clone(),
            step.t_tilde().to_vec(),
            step.c_weights().to_vec(),
            step.c(),
            step.u(),
            step.v(),
        );
        assert!(ok.is_ok());
        let bad_v = BacklundStep::from_parts(
            step.source().clone(),
            mu.clone(),
            step.t_tilde().to_vec(),
            step.c_weights().to_vec(),
            step.c(),
            step.u(),
            step.v() + 1e-3,
        );
        assert!(matches!(bad_v, Err(Error::ShiftMismatch { .. })));
        let mut tt = step.t_tilde().to_vec();
        tt[0] *= 1.001;
        let bad_t = BacklundStep::from_parts(
            step.source().clone(),
            mu,
            tt,
            step.c_weights().to_vec(),
            step.c(),
            step.u(),
            step.v(),
        );
        assert!(matches!(bad_t, Err(Error::InconsistentStep(_))));
    }

    #[test]
    fn fixture_residuals() {
        let (lam, mu) = fixture();
        let step = BacklundStep::new(&lam, &mu, c(0.1, 0.0), c(0.05, 0.0)).unwrap();
        assert!(eigenvector_residual(&step).unwrap() < 1e-8);
        assert!(kernel_residual(&step).unwrap() < 1e-8);
        for z in [c(0.2, 0.1), c(-0.3, 0.25), c(0.41, -0.2)] {
            assert!(lax_equation_residual(z, &step).unwrap() < 1e-8);
        }
    }

    #[test]
    fn random_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=4 {
            for _ in 0..5 {
                let (lam, mu) = random_pair(&mut rng, n);
                let cc = c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
                let u = c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
                let step = BacklundStep::new(&lam, &mu, cc, u).unwrap();
                let e = eigenvector_residual(&step).unwrap();
                let kr = kernel_residual(&step).unwrap();
                assert!(e < 1e-8 && kr < 1e-8, "n={n} eig {e:e} ker {kr:e} {:?} {:?}", lam.lambda(), mu.lambda());
                let z = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.4..0.4));
                assert!(lax_equation_residual(z, &step).unwrap() < 1e-8);
            }
        }
    }

    #[test]
    fn lax_residual_homogeneous_in_c() {
        // rescaling t by e^s together with c -> c + s leaves the relative residual unchanged
        let (lam, mu) = fixture();
        let z = c(0.2, 0.1);
        let a = lax_equation_residual(z, &BacklundStep::new(&lam, &mu, c(0.1, 0.0), c(0.05, 0.0)).unwrap()).unwrap();
        let b = lax_equation_residual(z, &BacklundStep::new(&lam, &mu, c(0.6, 0.0), c(0.05, 0.0)).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ks_identity() {
        let p = params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut draw = || c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.4..0.4));
        let x = [draw(), draw(), draw()];
        let y = [draw(), draw(), draw()];
        let xi = draw() * 0.4;
        for kp in 0..3 {
            assert!(ks_identity_residual(&x, &y, xi, kp, &p).unwrap() < 1e-9);
            assert!(ks_identity_residual(&x, &x, xi, kp, &p).unwrap() < 1e-9);
        }
        let p1 = params(1);
        assert!(ks_identity_residual(&[c(0.3, 0.1)], &[c(-0.1, 0.05)], c(0.07, 0.02), 0, &p1).unwrap() < 1e-10);
    }

    #[test]
    fn log_theta_integral_derivative() {
        let p = params(3);
        for x in [c(0.2, 0.1), c(-0.75, 0.0), c(0.3, -0.45), c(1.6, 0.2)] {
            let h = 1e-5;
            let d = (log_theta_integral(x + h, &p).unwrap() - log_theta_integral(x - h, &p).unwrap()) / (2.0 * h);
            let th = p.theta(x).unwrap();
            assert!((d.exp() - th).norm() < 1e-6 * th.norm(), "{x}");
        }
    }

    #[test]
    fn log_theta_integral_at_base_is_zero() {
        assert_eq!(log_theta_integral(c(0.5, 0.0), &params(2)).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn generating_function_gradients() {
        let (lam, mu) = fixture();
        let (cc, u) = (c(0.1, 0.0), c(0.05, 0.0));
        let h = 1e-5;
        let t = backlund_t(&lam, &mu, cc).unwrap();
        let tt = backlund_ttilde(&lam, &mu, cc).unwrap();
        let bump = |v: &WeightVector, k: usize, d: f64| {
            let mut x = v.lambda().to_vec();
            x[k] += d;
            weights(&x, 3)
        };
        for k in 0..3 {
            let fp = generating_function(&bump(&lam, k, h), &mu, cc, u).unwrap();
            let fm = generating_function(&bump(&lam, k, -h), &mu, cc, u).unwrap();
            let g = ((fp - fm) / (2.0 * h)).exp();
            assert!((g - t[k]).norm() < 1e-5 * t[k].norm(), "lambda_{k}: {g} vs {}", t[k]);
            let fp = generating_function(&lam, &bump(&mu, k, h), cc, u).unwrap();
            let fm = generating_function(&lam, &bump(&mu, k, -h), cc, u).unwrap();
            let g = (-(fp - fm) / (2.0 * h)).exp();
            assert!((g - tt[k]).norm() < 1e-5 * tt[k].norm(), "mu_{k}: {g} vs {}", tt[k]);
        }
        let f0 = generating_function(&lam, &mu, cc, u).unwrap();
        let f1 = generating_function(&lam, &mu, cc + 1.0, u).unwrap();
        assert!((f1 - f0 - modification_zero(&lam, &mu, u)).norm() < 1e-10);
    }
}
