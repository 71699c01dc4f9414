//! Box-constrained Levenberg–Marquardt.
//!
//! The damping matrix is Marquardt's `λ·diag(JᵀJ)`, so steps are invariant
//! to a rescaling of any single parameter. Trial points are projected back
//! into the bounds. A step is accepted only when it lowers the sum of
//! squares; otherwise `λ` grows tenfold and the step is retried.

use nalgebra::{DMatrix, DVector};

/// Least-squares problem `min Σ r_i(p)²`.
pub trait Residuals {
    fn len(&self) -> usize;

    fn eval(&self, p: &[f64], r: &mut [f64]);

    /// Jacobian `∂r_i/∂p_j`. Defaults to central differences.
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        central_difference(self, p, j, 1e-6);
    }
}

/// Central-difference Jacobian with relative step `rel`.
pub fn central_difference<R: Residuals + ?Sized>(
    problem: &R,
    p: &[f64],
    j: &mut DMatrix<f64>,
    rel: f64,
) {
    let n = problem.len();
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut q = p.to_vec();
    for c in 0..p.len() {
        let h = rel * p[c].abs().max(1e-3);
        q[c] = p[c] + h;
        problem.eval(&q, &mut plus);
        q[c] = p[c] - h;
        problem.eval(&q, &mut minus);
        q[c] = p[c];
        for r in 0..n {
            j[(r, c)] = (plus[r] - minus[r]) / (2.0 * h);
        }
    }
}

/// Forward-difference Jacobian, for expensive residuals.
pub fn forward_difference<R: Residuals + ?Sized>(
    problem: &R,
    p: &[f64],
    r0: &[f64],
    j: &mut DMatrix<f64>,
    rel: f64,
) {
    let n = problem.len();
    let mut plus = vec![0.0; n];
    let mut q = p.to_vec();
    for c in 0..p.len() {
        let h = rel * p[c].abs().max(1e-3);
        q[c] = p[c] + h;
        problem.eval(&q, &mut plus);
        q[c] = p[c];
        for r in 0..n {
            j[(r, c)] = (plus[r] - r0[r]) / h;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub const FREE: Bound = Bound {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Bound { lower, upper }
    }

    pub fn positive() -> Self {
        Bound::new(f64::MIN_POSITIVE, f64::INFINITY)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the scaled gradient falls below this.
    pub gtol: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub ftol: f64,
    /// Stop when every parameter moves by less than this fraction.
    pub xtol: f64,
    /// A stop is reported as converged if the scaled gradient is below this.
    pub accept_gtol: f64,
    pub initial_lambda: f64,
    /// Costs at or below this count as an exact fit.
    pub cost_floor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            gtol: 1e-10,
            ftol: 1e-15,
            xtol: 1e-13,
            accept_gtol: 1e-5,
            initial_lambda: 1e-3,
            cost_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ZeroResidual,
    Gradient,
    Cost,
    Step,
    /// Damping grew without finding a lower cost.
    Stalled,
    MaxIterations,
    /// A parameter has no influence on the residuals.
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub scaled_gradient: f64,
    pub converged: bool,
    pub jacobian: DMatrix<f64>,
    pub at_bound: Vec<bool>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// MINPACK-style stationarity measure: the largest cosine between a
/// Jacobian column and the residual vector. Components held by an active
/// bound are ignored.
fn scaled_gradient(j: &DMatrix<f64>, r: &[f64], p: &[f64], bounds: &[Bound]) -> f64 {
    let rn = sum_sq(r).sqrt();
    if rn == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for c in 0..j.ncols() {
        let col = j.column(c);
        let g: f64 = col.iter().zip(r).map(|(a, b)| a * b).sum();
        let blocked = (p[c] <= bounds[c].lower && g > 0.0) || (p[c] >= bounds[c].upper && g < 0.0);
        let norm = col.norm();
        if blocked || norm == 0.0 {
            continue;
        }
        worst = worst.max(g.abs() / (norm * rn));
    }
    worst
}

pub fn minimize<R: Residuals + ?Sized>(
    problem: &R,
    p0: &[f64],
    bounds: &[Bound],
    opts: &LmOptions,
) -> LmReport {
    assert_eq!(p0.len(), bounds.len());
    let m = problem.len();
    let n = p0.len();
    let mut p: Vec<f64> = p0.iter().zip(bounds).map(|(v, b)| b.clamp(*v)).collect();
    let mut r = vec![0.0; m];
    problem.eval(&p, &mut r);
    let mut cost = sum_sq(&r);
    let initial_cost = cost;
    let mut j = DMatrix::zeros(m, n);
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    let mut trial_r = vec![0.0; m];

    let termination = 'outer: loop {
        if cost <= opts.cost_floor {
            break Termination::ZeroResidual;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIterations;
        }
        problem.jacobian(&p, &mut j);
        if scaled_gradient(&j, &r, &p, bounds) <= opts.gtol {
            break Termination::Gradient;
        }
        let jtj = j.transpose() * &j;
        if (0..n).any(|c| jtj[(c, c)] == 0.0) {
            break Termination::Degenerate;
        }
        let mut g = j.transpose() * DVector::from_column_slice(&r);
        // parameters pinned by a bound they are pushed against stay put
        let pinned: Vec<bool> = (0..n)
            .map(|c| {
                (p[c] <= bounds[c].lower && g[c] > 0.0) || (p[c] >= bounds[c].upper && g[c] < 0.0)
            })
            .collect();
        let mut jtj = jtj;
        for c in (0..n).filter(|&c| pinned[c]) {
            for k in 0..n {
                jtj[(c, k)] = 0.0;
                jtj[(k, c)] = 0.0;
            }
            jtj[(c, c)] = 1.0;
            g[c] = 0.0;
        }
        loop {
            let mut a = jtj.clone();
            for c in 0..n {
                a[(c, c)] += lambda * jtj[(c, c)];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    break 'outer Termination::Stalled;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            let trial: Vec<f64> = (0..n).map(|c| bounds[c].clamp(p[c] + delta[c])).collect();
            problem.eval(&trial, &mut trial_r);
            let trial_cost = sum_sq(&trial_r);
            if trial_cost.is_finite() && trial_cost < cost {
                let reduction = (cost - trial_cost) / cost;
                let small_step =
                    (0..n).all(|c| (trial[c] - p[c]).abs() <= opts.xtol * (p[c].abs() + opts.xtol));
                p = trial;
                std::mem::swap(&mut r, &mut trial_r);
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                iterations += 1;
                if reduction < opts.ftol {
                    break 'outer Termination::Cost;
                }
                if small_step {
                    break 'outer Termination::Step;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                break 'outer Termination::Stalled;
            }
        }
    };

    problem.jacobian(&p, &mut j);
    let sg = scaled_gradient(&j, &r, &p, bounds);
    let converged = cost <= opts.cost_floor
        || match termination {
            Termination::ZeroResidual | Termination::Gradient => true,
            Termination::Cost | Termination::Step | Termination::Stalled => sg <= opts.accept_gtol,
            Termination::MaxIterations | Termination::Degenerate => false,
        };
    let at_bound = p
        .iter()
        .zip(bounds)
        .map(|(v, b)| *v <= b.lower || *v >= b.upper)
        .collect();
    LmReport {
        params: p,
        residuals: r,
        cost,
        initial_cost,
        iterations,
        termination,
        scaled_gradient: sg,
        converged,
        jacobian: j,
        at_bound,
    }
}
