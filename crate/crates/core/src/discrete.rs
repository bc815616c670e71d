//! The Baecklund map as discrete time evolution.
//!
//! Given `(lambda(a), t(a), c(a))` the next positions `lambda(a+1) = mu` solve
//! `t_k = e^c prod_s theta(lambda_k - mu_s + eta/n) / theta(lambda_k - mu_s)`, and the next
//! weights are `t(a+1) = t_tilde(lambda(a), lambda(a+1), c(a))`.

use itertools::Itertools;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{zeta_log, ModelParams, TorusParams, C64};
use crate::error::{Error, Result};
use crate::intertwiners::WeightVector;
use crate::lax::{backlund_t, backlund_ttilde, PhaseConfig};
use crate::linalg::CMatrix;

/// Largest Newton step (max-norm) before the step is scaled down.
const MAX_STEP: f64 = 0.25;
/// Smallest damping factor tried in the backtracking line search.
const MIN_DAMPING: f64 = 1e-10;
/// Amplitude of multistart perturbations.
const RESTART_SPREAD: f64 = 0.05;
/// Exact assignment by enumeration up to this size, greedy above.
const EXACT_ASSIGNMENT_MAX: usize = 8;
/// Step of the optional finite-difference Jacobian.
const FD_STEP: f64 = 1e-7;
/// Largest change of `c` per continuation step.
const CONTINUATION_STEP: f64 = 0.02;

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Target for `max_k |t_k - e^c prod(...)| / |t_k|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial damping of each Newton step, halved on overshoot.
    pub damping: f64,
    /// Number of starting points tried (the guess plus perturbed copies).
    pub multistart: usize,
    /// Seed of the multistart perturbations.
    pub seed: u64,
    /// Use a central-difference Jacobian instead of the analytic one.
    pub finite_difference_jacobian: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_iter: 50,
            damping: 1.0,
            multistart: 5,
            seed: 0,
            finite_difference_jacobian: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter {
                field: "tol",
                reason: "must be positive".into(),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                field: "max_iter",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidParameter {
                field: "damping",
                reason: "must lie in (0, 1]".into(),
            });
        }
        if self.multistart == 0 {
            return Err(Error::InvalidParameter {
                field: "multistart",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// `r_k = 1 - e^c prod_s theta(lambda_k - mu_s + eta/n) / theta(lambda_k - mu_s) / t_k`.
fn forward_residual(lam: &WeightVector, mu: &[C64], t: &[C64], c: C64) -> Result<DVector<C64>> {
    let p = lam.params();
    let torus = p.torus();
    let en = p.eta_n();
    let x = lam.lambda();
    let mut r = DVector::zeros(x.len());
    for k in 0..x.len() {
        let mut prod = c.exp();
        for &m in mu {
            torus.ensure_generic("lambda_k - mu_s", x[k] - m)?;
            prod *= p.theta(x[k] - m + en)? / p.theta(x[k] - m)?;
        }
        r[k] = C64::new(1.0, 0.0) - prod / t[k];
    }
    Ok(r)
}

fn max_norm(v: &DVector<C64>) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// `dr_k/dmu_s = -(1 - r_k) (zeta(lambda_k - mu_s) - zeta(lambda_k - mu_s + eta/n))`.
fn analytic_jacobian(lam: &WeightVector, mu: &[C64], r: &DVector<C64>) -> Result<CMatrix> {
    let p = lam.params();
    let torus = p.torus();
    let en = p.eta_n();
    let x = lam.lambda();
    let n = x.len();
    let mut jac = CMatrix::zeros(n, n);
    for k in 0..n {
        let ratio = C64::new(1.0, 0.0) - r[k];
        for s in 0..n {
            let d = x[k] - mu[s];
            jac[(k, s)] = -ratio * (zeta_log(d, torus)? - zeta_log(d + en, torus)?);
        }
    }
    Ok(jac)
}

fn fd_jacobian(lam: &WeightVector, mu: &[C64], t: &[C64], c: C64) -> Result<CMatrix> {
    let n = mu.len();
    let mut jac = CMatrix::zeros(n, n);
    for s in 0..n {
        let mut plus = mu.to_vec();
        let mut minus = mu.to_vec();
        plus[s] += FD_STEP;
        minus[s] -= FD_STEP;
        let col = (forward_residual(lam, &plus, t, c)? - forward_residual(lam, &minus, t, c)?)
            / C64::new(2.0 * FD_STEP, 0.0);
        jac.set_column(s, &col);
    }
    Ok(jac)
}

/// Damped Newton from one starting point. Returns the final point and residual norm.
fn newton(
    lam: &WeightVector,
    start: Vec<C64>,
    t: &[C64],
    c: C64,
    cfg: &SolverConfig,
) -> (Vec<C64>, f64) {
    let mut mu = start;
    let mut r = match forward_residual(lam, &mu, t, c) {
        Ok(r) => r,
        Err(_) => return (mu, f64::INFINITY),
    };
    let mut norm = max_norm(&r);
    for _ in 0..cfg.max_iter {
        if norm < cfg.tol {
            break;
        }
        let jac = if cfg.finite_difference_jacobian {
            fd_jacobian(lam, &mu, t, c)
        } else {
            analytic_jacobian(lam, &mu, &r)
        };
        let Ok(jac) = jac else { break };
        let Some(mut delta) = jac.lu().solve(&(-&r)) else {
            break;
        };
        let size = max_norm(&delta);
        if !size.is_finite() {
            break;
        }
        if size > MAX_STEP {
            delta *= C64::new(MAX_STEP / size, 0.0);
        }
        let mut alpha = cfg.damping;
        let mut accepted = false;
        while alpha >= MIN_DAMPING {
            let cand: Vec<C64> = mu.iter().zip(delta.iter()).map(|(m, d)| m + d * alpha).collect();
            if let Ok(rc) = forward_residual(lam, &cand, t, c) {
                let nc = max_norm(&rc);
                if nc < norm {
                    mu = cand;
                    r = rc;
                    norm = nc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (mu, norm)
}

/// Solves for the next positions `mu` given `(lambda, t, c)`.
///
/// The default guess is `lambda - eta/n`. Components of the result are matched to
/// the guess by nearest assignment (modulo the lattice) and moved by whole periods
/// towards it, which are exact symmetries of the equations.
pub fn solve_next(
    lam: &WeightVector,
    t: &[C64],
    c: C64,
    cfg: &SolverConfig,
    guess: Option<&WeightVector>,
) -> Result<WeightVector> {
    cfg.validate()?;
    let p = *lam.params();
    if t.len() != lam.n() {
        return Err(Error::InvalidParameter {
            field: "t",
            reason: format!("expected {} weights, got {}", lam.n(), t.len()),
        });
    }
    if let Some(k) = t.iter().position(|x| x.norm() == 0.0 || !x.norm().is_finite()) {
        return Err(Error::InvalidParameter {
            field: "t",
            reason: format!("t_{} must be finite and nonzero", k + 1),
        });
    }
    let reference: Vec<C64> = match guess {
        Some(g) => g.lambda().to_vec(),
        None => lam.lambda().iter().map(|x| x - p.eta_n()).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = f64::INFINITY;
    for attempt in 0..cfg.multistart {
        let start: Vec<C64> = if attempt == 0 {
            reference.clone()
        } else {
            reference
                .iter()
                .map(|x| {
                    x + C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * RESTART_SPREAD
                })
                .collect()
        };
        let (mu, norm) = newton(lam, start, t, c, cfg);
        if norm < cfg.tol {
            let mu = align_to_reference(&mu, &reference, p.torus());
            return finish(lam, mu);
        }
        if norm < best {
            best = norm;
        }
    }
    Err(Error::NoConvergence {
        attempts: cfg.multistart,
        best_residual: best,
    })
}

fn finish(lam: &WeightVector, mu: Vec<C64>) -> Result<WeightVector> {
    let torus = lam.params().torus();
    let mu = WeightVector::new(mu, *lam.params()).map_err(|e| {
        Error::DegenerateSolution(format!("{e}"))
    })?;
    for &x in lam.lambda() {
        for &m in mu.lambda() {
            if torus.near_lattice(x - m) {
                return Err(Error::DegenerateSolution(
                    "a new position coincides with an old one".into(),
                ));
            }
        }
    }
    Ok(mu)
}

/// Reorders `values` to follow `reference` and shifts each component by the whole
/// number of real periods that brings it closest to its partner.
fn align_to_reference(values: &[C64], reference: &[C64], torus: &TorusParams) -> Vec<C64> {
    let perm = nearest_assignment(values, reference, torus);
    perm.iter()
        .zip(reference)
        .map(|(&i, r)| {
            let v = values[i];
            v + (r - v).re.round()
        })
        .collect()
}

/// Permutation `perm` minimising `sum_k dist(values[perm[k]], reference[k])`, distances taken modulo the lattice.
pub fn nearest_assignment(values: &[C64], reference: &[C64], torus: &TorusParams) -> Vec<usize> {
    let n = values.len();
    let cost = |i: usize, k: usize| torus.lattice_distance(values[i] - reference[k]);
    if n <= EXACT_ASSIGNMENT_MAX {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in (0..n).permutations(n) {
            let total: f64 = perm.iter().enumerate().map(|(k, &i)| cost(i, k)).sum();
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                best = Some((total, perm));
            }
        }
        return best.map(|(_, p)| p).unwrap_or_default();
    }
    let mut pairs: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |k| (i, k)))
        .map(|(i, k)| (cost(i, k), i, k))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut perm = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, i, k) in pairs {
        if perm[k] == usize::MAX && !used[i] {
            perm[k] = i;
            used[i] = true;
        }
    }
    perm
}

/// Largest component distance (modulo the lattice) after nearest assignment.
pub fn matched_distance(a: &[C64], b: &[C64], torus: &TorusParams) -> f64 {
    let perm = nearest_assignment(a, b, torus);
    perm.iter()
        .enumerate()
        .map(|(k, &i)| torus.lattice_distance(a[i] - b[k]))
        .fold(0.0, f64::max)
}

/// Per-component residuals of the discrete RS equation
/// `e^{c(a) - c(a-1)} prod_{m != k} theta(lambda_mk(a) + eta/n) / theta(lambda_mk(a) - eta/n)
///  = prod_s theta(lambda_k(a) - lambda_s(a+1)) / theta(lambda_k(a) - lambda_s(a+1) + eta/n)
///         * theta(lambda_k(a) - lambda_s(a-1) - eta/n) / theta(lambda_k(a) - lambda_s(a-1))`,
/// each as `|LHS - RHS| / (|LHS| + |RHS|)`.
pub fn discrete_rs_residuals(
    lam_prev: &WeightVector,
    lam_cur: &WeightVector,
    lam_next: &WeightVector,
    c_prev: C64,
    c_cur: C64,
) -> Result<Vec<f64>> {
    let p = lam_cur.params();
    let torus = p.torus();
    let en = p.eta_n();
    let n = lam_cur.n();
    let x = lam_cur.lambda();
    (0..n)
        .map(|k| {
            let mut lhs = (c_cur - c_prev).exp();
            for m in (0..n).filter(|&m| m != k) {
                let d = lam_cur.diff(m, k);
                torus.ensure_generic("lambda_mk - eta/n", d - en)?;
                lhs *= p.theta(d + en)? / p.theta(d - en)?;
            }
            let mut rhs = C64::new(1.0, 0.0);
            for &y in lam_next.lambda() {
                torus.ensure_generic("lambda_k(a) - lambda_s(a+1) + eta/n", x[k] - y + en)?;
                rhs *= p.theta(x[k] - y)? / p.theta(x[k] - y + en)?;
            }
            for &y in lam_prev.lambda() {
                torus.ensure_generic("lambda_k(a) - lambda_s(a-1)", x[k] - y)?;
                rhs *= p.theta(x[k] - y - en)? / p.theta(x[k] - y)?;
            }
            Ok((lhs - rhs).norm() / (lhs.norm() + rhs.norm() + 1e-300))
        })
        .collect()
}

/// Largest of [`discrete_rs_residuals`].
pub fn discrete_rs_residual(
    lam_prev: &WeightVector,
    lam_cur: &WeightVector,
    lam_next: &WeightVector,
    c_prev: C64,
    c_cur: C64,
) -> Result<f64> {
    Ok(discrete_rs_residuals(lam_prev, lam_cur, lam_next, c_prev, c_cur)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Relative deviations `|a_k - b_k| / |b_k|`.
fn relative_deviation(a: &[C64], b: &[C64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm() / y.norm().max(1e-300))
        .collect()
}

/// One state of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub a: i64,
    pub lambda: WeightVector,
    pub t: Vec<C64>,
    pub c: C64,
}

/// States `(lambda(a), t(a), c(a))` for `a = 0, 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
    params: ModelParams,
    u_sequence: Vec<C64>,
}

impl Trajectory {
    pub fn new(initial: PhaseConfig, c0: C64, u0: C64) -> Self {
        let params = *initial.params();
        Self {
            points: vec![TrajectoryPoint {
                a: 0,
                t: initial.t().to_vec(),
                lambda: initial.lambda().clone(),
                c: c0,
            }],
            params,
            u_sequence: vec![u0],
        }
    }

    /// Rebuilds a trajectory from stored states (for example, read back from a file) so
    /// that its residuals can be recomputed. States must be consecutive, starting anywhere.
    /// The modification points are not stored and are set to zero.
    pub fn from_points(params: ModelParams, points: Vec<TrajectoryPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter {
                field: "points",
                reason: "a trajectory needs at least one state".into(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if p.lambda.n() != params.n() || p.t.len() != params.n() || *p.lambda.params() != params {
                return Err(Error::InvalidParameter {
                    field: "points",
                    reason: format!("state {i} does not match the model"),
                });
            }
            if p.a != points[0].a + i as i64 {
                return Err(Error::InvalidParameter {
                    field: "points",
                    reason: format!("state {i} has time {} but {} was expected", p.a, points[0].a + i as i64),
                });
            }
        }
        let u_sequence = vec![C64::new(0.0, 0.0); points.len()];
        Ok(Self {
            points,
            params,
            u_sequence,
        })
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Modification point attached to each state.
    pub fn u_sequence(&self) -> &[C64] {
        &self.u_sequence
    }

    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("a trajectory is never empty")
    }

    /// Advances one time step, keeping the last modification point.
    pub fn step(&mut self, c_next: C64, cfg: &SolverConfig) -> Result<()> {
        let u = *self.u_sequence.last().expect("a trajectory is never empty");
        self.step_with_u(c_next, u, cfg)
    }

    /// Advances one time step. On error the trajectory is left unchanged.
    pub fn step_with_u(&mut self, c_next: C64, u_next: C64, cfg: &SolverConfig) -> Result<()> {
        let cur = self.last();
        let guess = match self.points.len() {
            1 => cur.lambda.shifted(-self.params.eta_n()),
            len => {
                let prev = &self.points[len - 2];
                let extrapolated: Vec<C64> = cur
                    .lambda
                    .lambda()
                    .iter()
                    .zip(prev.lambda.lambda())
                    .map(|(x, y)| 2.0 * x - y)
                    .collect();
                WeightVector::new(extrapolated, self.params)
                    .unwrap_or_else(|_| cur.lambda.shifted(-self.params.eta_n()))
            }
        };
        let next = solve_next(&cur.lambda, &cur.t, cur.c, cfg, Some(&guess))?;
        let t_next = backlund_ttilde(&cur.lambda, &next, cur.c)?;
        let a = cur.a + 1;
        self.points.push(TrajectoryPoint {
            a,
            lambda: next,
            t: t_next,
            c: c_next,
        });
        self.u_sequence.push(u_next);
        Ok(())
    }

    /// Residual of each state, per component.
    ///
    /// Interior states carry the discrete RS residual. The first state carries the
    /// deviation of `t(0)` from the forward map to `lambda(1)`, the last one the
    /// deviation of `t(N)` from the update formula applied to `lambda(N-1)`. A
    /// single-state trajectory has zero residual.
    pub fn residuals(&self) -> Result<Vec<Vec<f64>>> {
        let pts = &self.points;
        let n = self.params.n();
        if pts.len() == 1 {
            return Ok(vec![vec![0.0; n]]);
        }
        let last = pts.len() - 1;
        let mut out = Vec::with_capacity(pts.len());
        for a in 0..pts.len() {
            let row = if a == 0 {
                let expect = backlund_t(&pts[0].lambda, &pts[1].lambda, pts[0].c)?;
                relative_deviation(&pts[0].t, &expect)
            } else if a == last {
                let expect = backlund_ttilde(&pts[a - 1].lambda, &pts[a].lambda, pts[a - 1].c)?;
                relative_deviation(&pts[a].t, &expect)
            } else {
                discrete_rs_residuals(
                    &pts[a - 1].lambda,
                    &pts[a].lambda,
                    &pts[a + 1].lambda,
                    pts[a - 1].c,
                    pts[a].c,
                )?
            };
            out.push(row);
        }
        Ok(out)
    }
}

/// One Baecklund transformation `B_c`: `(lambda, t) -> (mu, t_tilde)`.
pub fn apply_backlund(
    lam: &WeightVector,
    t: &[C64],
    c: C64,
    cfg: &SolverConfig,
) -> Result<(WeightVector, Vec<C64>)> {
    let mu = solve_next(lam, t, c, cfg, None)?;
    let tt = backlund_ttilde(lam, &mu, c)?;
    Ok((mu, tt))
}

/// Follows a solution of `B_c` for fixed `(lambda, t)` from `c_from` (where it is
/// `mu_from`) to `c_to`, in steps of at most [`CONTINUATION_STEP`], so that the result
/// lies on the same branch.
pub fn continue_in_c(
    lam: &WeightVector,
    t: &[C64],
    mu_from: &WeightVector,
    c_from: C64,
    c_to: C64,
    cfg: &SolverConfig,
) -> Result<WeightVector> {
    let steps = ((c_to - c_from).norm() / CONTINUATION_STEP).ceil().max(1.0) as usize;
    let mut mu = mu_from.clone();
    for i in 1..=steps {
        let c = c_from + (c_to - c_from) * (i as f64 / steps as f64);
        mu = solve_next(lam, t, c, cfg, Some(&mu))?;
    }
    Ok(mu)
}

/// Distance between `B_c2 B_c1 (lambda, t)` and `B_c1 B_c2 (lambda, t)`: the largest of the
/// position distances (modulo the lattice, after nearest assignment) and the relative
/// deviations of the matched weights.
///
/// The maps are multivalued, and the two paths only commute on corresponding branches.
/// `B_c1` uses the default guess; `B_c2` is continued from it in `c`; both second-level
/// solves start from the parallelogram guess `B_c1 + B_c2 - lambda`.
pub fn backlund_commutativity_residual(
    lam: &WeightVector,
    t: &[C64],
    c1: C64,
    c2: C64,
    cfg: &SolverConfig,
) -> Result<f64> {
    let p = *lam.params();
    let torus = p.torus();
    let m1 = solve_next(lam, t, c1, cfg, None)?;
    let t1 = backlund_ttilde(lam, &m1, c1)?;
    let m2 = continue_in_c(lam, t, &m1, c1, c2, cfg)?;
    let t2 = backlund_ttilde(lam, &m2, c2)?;
    let corner: Vec<C64> = (0..lam.n())
        .map(|k| m1.lambda()[k] + m2.lambda()[k] - lam.lambda()[k])
        .collect();
    let guess = WeightVector::new(corner, p).ok();
    let m12 = solve_next(&m1, &t1, c2, cfg, guess.as_ref())?;
    let t12 = backlund_ttilde(&m1, &m12, c2)?;
    let m21 = solve_next(&m2, &t2, c1, cfg, guess.as_ref())?;
    let t21 = backlund_ttilde(&m2, &m21, c1)?;
    let perm = nearest_assignment(m21.lambda(), m12.lambda(), torus);
    let mut worst: f64 = 0.0;
    for (k, &i) in perm.iter().enumerate() {
        worst = worst.max(torus.lattice_distance(m21.lambda()[i] - m12.lambda()[k]));
        worst = worst.max((t21[i] - t12[k]).norm() / t12[k].norm().max(1e-300));
    }
    Ok(worst)
}
