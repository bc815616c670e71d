//! Theta functions with rational characteristics and the kernels built on them.
//!
//! Every series is evaluated after reducing the argument into the strip
//! `|Im z| <= Im(tau)/2`, `Re z` in `[-1/2, 1/2)`, with the quasi-periodicity
//! prefactor
//!
//! ```text
//! theta[a,b](z0 + j + k tau) = exp(2 pi i a j + pi i k^2 tau - 2 pi i k (z + b)) * theta[a,b](z0)
//! ```
//!
//! applied exactly. The odd theta `theta = theta[1/2, 1/2]` vanishes on the
//! lattice `Z + tau Z`; `zeta = theta'/theta` and
//! `Phi_z(x) = theta(z + x) / (theta(z) theta(x))` are built from it.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_integer::Integer;
use num_rational::Rational64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

const I: C64 = C64::new(0.0, 1.0);

/// Hard cap on the number of series terms on either side of the peak.
pub const SERIES_CAP: i64 = 500;
/// Relative size below which the tail of the series is dropped.
const SERIES_REL_TOL: f64 = 1e-17;
/// Default distance below which a point counts as a lattice point.
pub const DEFAULT_REDUCTION_TOL: f64 = 1e-10;

/// The modulus `tau` of the elliptic curve `C / (Z + tau Z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusParams {
    tau: C64,
    reduction_tol: f64,
    eta_d: C64,
}

impl TorusParams {
    pub fn new(tau: C64) -> Result<Self> {
        Self::with_tolerance(tau, DEFAULT_REDUCTION_TOL)
    }

    pub fn with_tolerance(tau: C64, reduction_tol: f64) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.re.is_finite() || !tau.im.is_finite() {
            return Err(Error::InvalidParameter {
                field: "tau",
                reason: format!("Im(tau) must be > 0, got tau = {}{:+}i", tau.re, tau.im),
            });
        }
        if !(reduction_tol > 0.0) {
            return Err(Error::InvalidParameter {
                field: "reduction_tol",
                reason: format!("must be > 0, got {reduction_tol}"),
            });
        }
        let eta_d = dedekind_eta(tau)?;
        Ok(Self {
            tau,
            reduction_tol,
            eta_d,
        })
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }

    pub fn reduction_tol(&self) -> f64 {
        self.reduction_tol
    }

    /// Dedekind eta `eta_D(tau)`, computed once at construction.
    pub fn dedekind_eta(&self) -> C64 {
        self.eta_d
    }

    /// `sqrt(-1) * eta_D(tau)`, the normalisation of the intertwining vectors.
    pub fn i_eta(&self) -> C64 {
        I * self.eta_d
    }

    /// Distance from `z` to the nearest point of `Z + tau Z`.
    pub fn lattice_distance(&self, z: C64) -> f64 {
        lattice_distance(z, self.tau)
    }

    pub fn near_lattice(&self, z: C64) -> bool {
        self.lattice_distance(z) < self.reduction_tol
    }

    pub(crate) fn ensure_generic(&self, context: &'static str, z: C64) -> Result<()> {
        if self.near_lattice(z) {
            Err(Error::pole(context, z))
        } else {
            Ok(())
        }
    }
}

/// An exact rational characteristic `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Characteristic {
    a: Rational64,
    b: Rational64,
}

impl Characteristic {
    pub fn new(a: Rational64, b: Rational64) -> Self {
        Self { a, b }
    }

    /// `[a_num / a_den, b_num / b_den]`; panics on a zero denominator.
    pub fn from_fractions(a_num: i64, a_den: i64, b_num: i64, b_den: i64) -> Self {
        Self::new(
            Rational64::new(a_num, a_den),
            Rational64::new(b_num, b_den),
        )
    }

    /// `[1/2, 1/2]`, the odd characteristic.
    pub fn odd() -> Self {
        Self::from_fractions(1, 2, 1, 2)
    }

    /// `[1/2 - j/n, 0]` with `j` taken mod `n`.
    pub fn level(j: i64, n: usize) -> Self {
        let n = n as i64;
        let j = j.mod_floor(&n);
        Self::new(Rational64::new(1, 2) - Rational64::new(j, n), Rational64::from_integer(0))
    }

    pub fn a(&self) -> Rational64 {
        self.a
    }

    pub fn b(&self) -> Rational64 {
        self.b
    }

    fn a_f64(&self) -> f64 {
        *self.a.numer() as f64 / *self.a.denom() as f64
    }

    fn b_f64(&self) -> f64 {
        *self.b.numer() as f64 / *self.b.denom() as f64
    }

    /// `exp(2 pi i a j)` with `a j` reduced mod 1 in exact arithmetic.
    fn char_phase(&self, j: i64) -> C64 {
        let p = *self.a.numer() as i128;
        let q = *self.a.denom() as i128;
        let r = (p * j as i128).rem_euclid(q);
        let frac = r as f64 / q as f64;
        (2.0 * PI * I * frac).exp()
    }
}

/// Shift `z = z0 + j + k tau` with `z0` in the reduced strip.
fn reduce(z: C64, tau: C64) -> (C64, i64, i64) {
    let k = (z.im / tau.im).round();
    let w = z - k * tau;
    let j = w.re.round();
    (w - j, j as i64, k as i64)
}

pub(crate) fn lattice_distance(z: C64, tau: C64) -> f64 {
    let (w, _, _) = reduce(z, tau);
    let mut best = f64::INFINITY;
    for a in -1..=1 {
        for b in -1..=1 {
            let d = (w - a as f64 - b as f64 * tau).norm();
            best = best.min(d);
        }
    }
    best
}

/// Value and derivative of the series for a reduced argument.
fn series(ch: &Characteristic, z: C64, tau: C64, want_deriv: bool) -> Result<(C64, C64)> {
    let a = ch.a_f64();
    let b = ch.b_f64();
    let zb = z + b;
    let re_exp = |x: f64| -PI * tau.im * x * x - 2.0 * PI * x * zb.im;
    let peak = -zb.im / tau.im;
    let m0 = (peak - a).round() as i64;
    let max_exp = re_exp(m0 as f64 + a);
    let cutoff = max_exp + SERIES_REL_TOL.ln();

    let term = |m: i64| {
        let x = m as f64 + a;
        let e = (PI * I * x * x * tau + 2.0 * PI * I * x * zb).exp();
        let d = if want_deriv { 2.0 * PI * I * x * e } else { C64::new(0.0, 0.0) };
        (e, d)
    };

    let (mut val, mut der) = term(m0);
    for dir in [1i64, -1] {
        let mut step = 1;
        loop {
            if step > SERIES_CAP {
                return Err(Error::NonconvergentSeries { cap: SERIES_CAP });
            }
            let m = m0 + dir * step;
            let x = m as f64 + a;
            let r = re_exp(x);
            // past the peak the real part of the exponent is monotone
            let moving_away = (x - peak) * dir as f64 > 0.0;
            if r < cutoff && moving_away {
                break;
            }
            let (e, d) = term(m);
            val += e;
            der += d;
            step += 1;
        }
    }
    Ok((val, der))
}

fn check_tau(tau: C64) -> Result<()> {
    if tau.im > 0.0 && tau.re.is_finite() && tau.im.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field: "tau",
            reason: format!("Im(tau) must be > 0, got tau = {}{:+}i", tau.re, tau.im),
        })
    }
}

fn eval(ch: &Characteristic, z: C64, tau: C64, want_deriv: bool) -> Result<(C64, C64)> {
    check_tau(tau)?;
    let (z0, j, k) = reduce(z, tau);
    let (v0, d0) = series(ch, z0, tau, want_deriv)?;
    if j == 0 && k == 0 {
        return Ok((v0, d0));
    }
    let kf = k as f64;
    let b = ch.b_f64();
    let pref = ch.char_phase(j) * (PI * I * kf * kf * tau - 2.0 * PI * I * kf * (z + b)).exp();
    let val = pref * v0;
    let der = pref * (d0 - 2.0 * PI * I * kf * v0);
    Ok((val, der))
}

/// `theta[a,b](z, tau) = sum_m exp(pi i (m+a)^2 tau + 2 pi i (m+a)(z+b))`.
pub fn theta_char(ch: &Characteristic, z: C64, tau: C64) -> Result<C64> {
    eval(ch, z, tau, false).map(|(v, _)| v)
}

/// `d/dz theta[a,b](z, tau)`, differentiated term by term.
pub fn theta_char_deriv(ch: &Characteristic, z: C64, tau: C64) -> Result<C64> {
    eval(ch, z, tau, true).map(|(_, d)| d)
}

/// Value and derivative in one pass.
pub fn theta_char_with_deriv(ch: &Characteristic, z: C64, tau: C64) -> Result<(C64, C64)> {
    eval(ch, z, tau, true)
}

/// The odd theta function `theta(z) = theta[1/2, 1/2](z, tau)`.
pub fn theta_odd(z: C64, torus: &TorusParams) -> Result<C64> {
    theta_char(&Characteristic::odd(), z, torus.tau)
}

/// `theta'(z)` for the odd theta function.
pub fn theta_odd_deriv(z: C64, torus: &TorusParams) -> Result<C64> {
    theta_char_deriv(&Characteristic::odd(), z, torus.tau)
}

/// `eta_D(tau) = exp(pi i tau / 12) prod_{m>=1} (1 - q^m)`, `q = exp(2 pi i tau)`.
pub fn dedekind_eta(tau: C64) -> Result<C64> {
    check_tau(tau)?;
    let q = (2.0 * PI * I * tau).exp();
    let mut prod = (PI * I * tau / 12.0).exp();
    let mut qm = q;
    loop {
        prod *= C64::new(1.0, 0.0) - qm;
        if qm.norm() < 1e-16 {
            break;
        }
        qm *= q;
    }
    Ok(prod)
}

/// `zeta(z) = theta'(z) / theta(z)`.
pub fn zeta_log(z: C64, torus: &TorusParams) -> Result<C64> {
    torus.ensure_generic("zeta argument", z)?;
    let (v, d) = theta_char_with_deriv(&Characteristic::odd(), z, torus.tau)?;
    Ok(d / v)
}

/// `Phi_z(x) = theta(z + x) / (theta(z) theta(x))`.
pub fn phi_kernel(z: C64, x: C64, torus: &TorusParams) -> Result<C64> {
    torus.ensure_generic("Phi spectral argument", z)?;
    torus.ensure_generic("Phi argument", x)?;
    Ok(theta_odd(z + x, torus)? / (theta_odd(z, torus)? * theta_odd(x, torus)?))
}

/// Rank, coupling and torus of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    n: usize,
    eta: C64,
    torus: TorusParams,
}

impl ModelParams {
    pub fn new(n: usize, eta: C64, torus: TorusParams) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                field: "n",
                reason: "rank must be positive".into(),
            });
        }
        if torus.near_lattice(eta) {
            return Err(Error::InvalidParameter {
                field: "eta",
                reason: "eta must not be a lattice point".into(),
            });
        }
        if torus.near_lattice(eta / n as f64) {
            return Err(Error::InvalidParameter {
                field: "eta",
                reason: "eta/n must not be a lattice point".into(),
            });
        }
        Ok(Self { n, eta, torus })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> C64 {
        self.eta
    }

    /// `eta / n`, the elementary shift in the Baecklund formulas.
    pub fn eta_n(&self) -> C64 {
        self.eta / self.n as f64
    }

    pub fn torus(&self) -> &TorusParams {
        &self.torus
    }

    pub fn tau(&self) -> C64 {
        self.torus.tau
    }

    /// Odd theta on this model's torus.
    pub fn theta(&self, z: C64) -> Result<C64> {
        theta_odd(z, &self.torus)
    }

    /// `theta^{(j)}(z) = theta[1/2 - j/n, 0](z + 1/2, n tau)`.
    pub fn theta_band(&self, j: i64, z: C64) -> Result<C64> {
        theta_band(j, z, self)
    }

    /// `theta_j(z) = theta[1/2 - j/n, 0](n (z + 1/2), n tau)`.
    pub fn theta_level(&self, j: i64, z: C64) -> Result<C64> {
        theta_level(j, z, self)
    }
}

pub fn theta_band(j: i64, z: C64, params: &ModelParams) -> Result<C64> {
    let n = params.n;
    theta_char(
        &Characteristic::level(j, n),
        z + 0.5,
        n as f64 * params.torus.tau,
    )
}

pub fn theta_level(j: i64, z: C64, params: &ModelParams) -> Result<C64> {
    let n = params.n;
    let nf = n as f64;
    theta_char(
        &Characteristic::level(j, n),
        nf * (z + 0.5),
        nf * params.torus.tau,
    )
}

/// Is `z` within `tol` of a zero of `theta^{(j)}`? Those zeros sit at `j tau` mod `Z + n tau Z`.
pub(crate) fn near_band_zero(j: i64, z: C64, params: &ModelParams) -> bool {
    let n = params.n as i64;
    let j = j.mod_floor(&n) as f64;
    lattice_distance(z - j * params.torus.tau, n as f64 * params.torus.tau)
        < params.torus.reduction_tol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Straight summation with no argument reduction.
    fn direct(a: f64, b: f64, z: C64, tau: C64) -> C64 {
        (-60..=60)
            .map(|m| {
                let x = m as f64 + a;
                (PI * I * x * x * tau + 2.0 * PI * I * x * (z + b)).exp()
            })
            .sum()
    }

    fn direct_deriv(a: f64, b: f64, z: C64, tau: C64) -> C64 {
        (-60..=60)
            .map(|m| {
                let x = m as f64 + a;
                2.0 * PI * I * x * (PI * I * x * x * tau + 2.0 * PI * I * x * (z + b)).exp()
            })
            .sum()
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn odd_theta_vanishes_at_origin() {
        let v = theta_char(&Characteristic::odd(), c(0.0, 0.0), c(0.0, 1.0)).unwrap();
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn even_theta_is_even() {
        let ch = Characteristic::from_fractions(0, 1, 0, 1);
        let p = theta_char(&ch, c(0.3, 0.0), c(0.0, 1.0)).unwrap();
        let m = theta_char(&ch, c(-0.3, 0.0), c(0.0, 1.0)).unwrap();
        assert!(rel(p, m) < 1e-15);
    }

    #[test]
    fn matches_direct_summation() {
        let tau = c(0.0, 1.0);
        let v = theta_char(&Characteristic::odd(), c(0.3, 0.0), tau).unwrap();
        assert!(rel(v, direct(0.5, 0.5, c(0.3, 0.0), tau)) < 1e-12);
        // far outside the reduced strip
        let z = c(3.7, -1.9);
        let v = theta_char(&Characteristic::odd(), z, tau).unwrap();
        assert!(rel(v, direct(0.5, 0.5, z, tau)) < 1e-12);
    }

    #[test]
    fn derivative_matches_oracles() {
        let tau = c(0.0, 1.0);
        let odd = Characteristic::odd();
        let z = c(0.41, 0.1);
        let d = theta_char_deriv(&odd, z, tau).unwrap();
        assert!(rel(d, direct_deriv(0.5, 0.5, z, tau)) < 1e-12);

        let h = 1e-6;
        let d0 = theta_char_deriv(&odd, c(0.0, 0.0), tau).unwrap();
        let fd = (theta_char(&odd, c(h, 0.0), tau).unwrap()
            - theta_char(&odd, c(-h, 0.0), tau).unwrap())
            / (2.0 * h);
        assert!(rel(d0, fd) < 1e-7);
        assert!(d0.norm() > 1.0);
        assert!(d0.im.abs() < 1e-12);

        let even = Characteristic::from_fractions(0, 1, 0, 1);
        assert!(theta_char_deriv(&even, c(0.0, 0.0), tau).unwrap().norm() < 1e-14);
    }

    #[test]
    fn odd_theta_quasi_periodicity() {
        let torus = TorusParams::new(c(0.0, 1.0)).unwrap();
        let z = c(0.25, 0.0);
        let base = theta_odd(z, &torus).unwrap();
        assert!(rel(theta_odd(-z, &torus).unwrap(), -base) < 1e-14);
        let shifted = theta_odd(z + 1.0, &torus).unwrap();
        assert!(rel(shifted, -base) < 1e-14);
        assert!(rel(shifted, direct(0.5, 0.5, z + 1.0, torus.tau())) < 1e-12);
    }

    #[test]
    fn band_and_level_definitions() {
        let torus = TorusParams::new(c(0.0, 1.0)).unwrap();
        let p1 = ModelParams::new(1, c(0.23, 0.0), torus).unwrap();
        let z = c(0.17, 0.05);
        let expect = theta_char(&Characteristic::from_fractions(1, 2, 0, 1), z + 0.5, torus.tau()).unwrap();
        assert!(rel(theta_band(0, z, &p1).unwrap(), expect) < 1e-14);

        let p3 = ModelParams::new(3, c(0.23, 0.0), torus).unwrap();
        let tau3 = 3.0 * torus.tau();
        let b = theta_band(0, c(0.2, 0.0), &p3).unwrap();
        assert!(rel(b, direct(0.5, 0.0, c(0.7, 0.0), tau3)) < 1e-12);
        assert_eq!(theta_band(3, z, &p3).unwrap(), theta_band(0, z, &p3).unwrap());

        let l = theta_level(1, c(0.1, 0.0), &p3).unwrap();
        assert!(rel(l, direct(0.5 - 1.0 / 3.0, 0.0, c(1.8, 0.0), tau3)) < 1e-12);

        let p2 = ModelParams::new(2, c(0.23, 0.0), torus).unwrap();
        assert_eq!(theta_level(2, z, &p2).unwrap(), theta_level(0, z, &p2).unwrap());
    }

    #[test]
    fn dedekind_eta_values() {
        // Gamma(1/4) / (2 pi^{3/4})
        let closed = 3.625_609_908_221_908_3 / (2.0 * PI.powf(0.75));
        let e = dedekind_eta(c(0.0, 1.0)).unwrap();
        assert!((e - closed).norm() < 1e-14);

        let tau = c(0.0, 2.0);
        let q = (2.0 * PI * I * tau).exp();
        let mut long = (PI * I * tau / 12.0).exp();
        for m in 1..=200 {
            long *= C64::new(1.0, 0.0) - q.powi(m);
        }
        assert!(rel(dedekind_eta(tau).unwrap(), long) < 1e-15);

        // eta(-1/tau) = sqrt(-i tau) eta(tau)
        let lhs = dedekind_eta(-1.0 / tau).unwrap();
        let rhs = (-I * tau).sqrt() * dedekind_eta(tau).unwrap();
        assert!(rel(lhs, rhs) < 1e-13);
    }

    #[test]
    fn zeta_and_phi_kernel() {
        let torus = TorusParams::new(c(0.0, 1.0)).unwrap();
        assert!(zeta_log(c(0.5, 0.0), &torus).unwrap().im.abs() < 1e-12);
        let z = c(0.23, 0.11);
        let s = zeta_log(z, &torus).unwrap() + zeta_log(-z, &torus).unwrap();
        assert!(s.norm() < 1e-12);
        assert!(matches!(
            zeta_log(c(1e-12, 0.0), &torus),
            Err(Error::PoleAtLatticePoint { .. })
        ));

        let a = phi_kernel(c(0.2, 0.0), c(0.31, 0.0), &torus).unwrap();
        let b = phi_kernel(c(0.31, 0.0), c(0.2, 0.0), &torus).unwrap();
        assert!(rel(a, b) < 1e-14);
        assert!(phi_kernel(c(0.2, 0.0), c(-0.2, 0.0), &torus).unwrap().norm() < 1e-14);
    }

    #[test]
    fn rejects_bad_tau() {
        assert!(TorusParams::new(c(0.3, 0.0)).is_err());
        assert!(TorusParams::new(c(0.3, -1.0)).is_err());
        assert!(theta_char(&Characteristic::odd(), c(0.1, 0.0), c(0.0, -1.0)).is_err());
        assert!(TorusParams::with_tolerance(c(0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn model_params_reject_lattice_eta() {
        let torus = TorusParams::new(c(0.0, 1.0)).unwrap();
        assert!(ModelParams::new(2, c(0.5, 0.0), torus).is_ok());
        assert!(ModelParams::new(2, c(1.0, 0.0), torus).is_err());
        assert!(ModelParams::new(2, c(2.0, 0.0), torus).is_err());
        assert!(ModelParams::new(2, c(0.0, 0.0), torus).is_err());
        assert!(ModelParams::new(0, c(0.2, 0.0), torus).is_err());
    }

    #[test]
    fn characteristic_is_reduced() {
        let ch = Characteristic::level(4, 6);
        assert_eq!(ch.a(), Rational64::new(-1, 6));
        assert_eq!(Characteristic::level(-1, 3), Characteristic::level(2, 3));
    }

    #[test]
    fn band_zero_locations() {
        let torus = TorusParams::new(c(0.1, 1.1)).unwrap();
        let p = ModelParams::new(3, c(0.23, 0.0), torus).unwrap();
        for j in 0..3 {
            let z = j as f64 * torus.tau() + 2.0;
            assert!(near_band_zero(j, z, &p));
            assert!(theta_band(j, z, &p).unwrap().norm() < 1e-12);
        }
    }
}
