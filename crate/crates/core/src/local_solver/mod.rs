//! Small dense QP engine behind every decomposition method's inner step.
//!
//! Strictly convex problems without equalities go through a warm-startable
//! primal active-set method; everything else through a primal-dual
//! interior-point method. Multipliers follow `L = f + lambda^T (A x - b)`.

mod active_set;
mod barrier;
mod ipm;

pub use barrier::barrier_derivatives;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::{FeasibleSet, QuadCost};
use active_set::ActiveSetQp;
use ipm::IpmProblem;

pub const DEFAULT_TOL: f64 = 1e-10;

const ACTIVE_SET_MAX_ITER: usize = 5000;
const IPM_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vector,
    /// Multipliers of the caller-supplied equality rows.
    pub eq_multipliers: Vector,
    /// Multipliers of the set's own equality rows, if any.
    pub set_eq_multipliers: Vector,
    /// Multipliers of the set's inequality rows (`FeasibleSet::inequalities`).
    pub ineq_multipliers: Vector,
    pub status: QpStatus,
    pub stationarity: f64,
    pub primal_residual: f64,
    pub complementarity: f64,
    /// Largest of the three scaled residuals above.
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct KktParts<'a> {
    h: &'a Mat,
    q: &'a Vector,
    c: &'a Mat,
    d: &'a Vector,
    set_eq: Option<(&'a Mat, &'a Vector)>,
    eq: Option<(&'a Mat, &'a Vector)>,
}

impl KktParts<'_> {
    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        x: Vector,
        z: Vector,
        y_set: Vector,
        y_eq: Vector,
        converged: bool,
        iterations: usize,
        tol: f64,
    ) -> QpSolution {
        let hx2 = self.h * &x * 2.0;
        let mut g = &hx2 + self.q;
        if self.c.nrows() > 0 {
            g.gemv_tr(1.0, self.c, &z, 1.0);
        }
        let mut rhs_scale = 1.0 + self.d.amax();
        let mut primal = 0.0_f64;
        let slack = self.d - self.c * &x;
        for v in slack.iter() {
            primal = primal.max(-v);
        }
        for (pair, y) in [(self.set_eq, &y_set), (self.eq, &y_eq)] {
            if let Some((a, b)) = pair {
                if a.nrows() > 0 {
                    g.gemv_tr(1.0, a, y, 1.0);
                    primal = primal.max((a * &x - b).amax());
                    rhs_scale = rhs_scale.max(1.0 + b.amax());
                }
            }
        }
        let dual_scale = 1.0 + self.q.amax() + hx2.amax();
        let stationarity = g.amax() / dual_scale;
        let primal_residual = primal / rhs_scale;
        let complementarity = (0..z.len())
            .fold(0.0_f64, |a, j| a.max(z[j] * slack[j].abs()))
            / dual_scale;
        let kkt = stationarity.max(primal_residual).max(complementarity);
        QpSolution {
            x,
            eq_multipliers: y_eq,
            set_eq_multipliers: y_set,
            ineq_multipliers: z,
            status: if converged && kkt <= tol {
                QpStatus::Optimal
            } else {
                QpStatus::MaxIter
            },
            stationarity,
            primal_residual,
            complementarity,
            kkt_residual: kkt,
            iterations,
        }
    }
}

fn check_dims(cost: &QuadCost, set: &FeasibleSet, eq: Option<(&Mat, &Vector)>) -> Result<()> {
    if cost.dim() != set.dim() {
        return Err(dim_err("cost vs set dimension", set.dim(), cost.dim()));
    }
    if let Some((a, b)) = eq {
        if a.ncols() != cost.dim() {
            return Err(dim_err("equality matrix columns", cost.dim(), a.ncols()));
        }
        if a.nrows() != b.len() {
            return Err(dim_err("equality rhs", a.nrows(), b.len()));
        }
    }
    Ok(())
}

/// Minimize `x^T H x + q^T x` over `set ∩ {A_e x = b_e}`.
pub fn solve_local_qp(
    cost: &QuadCost,
    set: &FeasibleSet,
    eq: Option<(&Mat, &Vector)>,
    tol: f64,
) -> Result<QpSolution> {
    solve_local_qp_from(cost, set, eq, tol, None)
}

/// As [`solve_local_qp`], starting from `start` when it is usable.
pub fn solve_local_qp_from(
    cost: &QuadCost,
    set: &FeasibleSet,
    eq: Option<(&Mat, &Vector)>,
    tol: f64,
    start: Option<&Vector>,
) -> Result<QpSolution> {
    check_dims(cost, set, eq)?;
    let (c, d) = set.inequalities();
    let parts = KktParts {
        h: &cost.h,
        q: &cost.q,
        c: &c,
        d: &d,
        set_eq: set.equalities(),
        eq,
    };
    let eq_rows = eq.map(|(a, _)| a.nrows()).unwrap_or(0);
    if eq_rows == 0 && set.equalities().is_none() && cost.is_positive_definite() {
        let x0 = match start {
            Some(s) if s.len() == set.dim() && set.contains(s, 0.0) => s.clone(),
            _ => set.interior_point().clone(),
        };
        if let Some(mut qp) = ActiveSetQp::new(&cost.h * 2.0, c.clone(), d.clone(), x0) {
            let out = qp.solve(&cost.q, tol, ACTIVE_SET_MAX_ITER);
            let sol = parts.report(
                out.x,
                out.z,
                Vector::zeros(0),
                Vector::zeros(eq_rows),
                out.converged,
                out.iterations,
                tol,
            );
            if sol.status == QpStatus::Optimal {
                return Ok(sol);
            }
        }
    }
    Ok(solve_ipm(&parts, set, eq, tol, start))
}

fn solve_ipm(
    parts: &KktParts,
    set: &FeasibleSet,
    eq: Option<(&Mat, &Vector)>,
    tol: f64,
    start: Option<&Vector>,
) -> QpSolution {
    let n = set.dim();
    let n_set_eq = set.equalities().map(|(a, _)| a.nrows()).unwrap_or(0);
    let n_eq = eq.map(|(a, _)| a.nrows()).unwrap_or(0);
    let mut a = Mat::zeros(n_set_eq + n_eq, n);
    let mut b = Vector::zeros(n_set_eq + n_eq);
    if let Some((ea, eb)) = set.equalities() {
        a.rows_mut(0, n_set_eq).copy_from(ea);
        b.rows_mut(0, n_set_eq).copy_from(eb);
    }
    if let Some((ea, eb)) = eq {
        a.rows_mut(n_set_eq, n_eq).copy_from(ea);
        b.rows_mut(n_set_eq, n_eq).copy_from(eb);
    }
    let p = parts.h * 2.0;
    let x0 = match start {
        Some(s) if s.len() == n => s.clone(),
        _ => set.interior_point().clone(),
    };
    let problem = IpmProblem {
        p: &p,
        c_lin: parts.q,
        c: parts.c,
        d: parts.d,
        a: &a,
        b: &b,
    };
    let out = problem.solve(&x0, tol, IPM_MAX_ITER);
    let y_set = out.y.rows(0, n_set_eq).into_owned();
    let y_eq = out.y.rows(n_set_eq, n_eq).into_owned();
    let mut sol = parts.report(out.x, out.z, y_set, y_eq, out.converged, out.iterations, tol);
    if sol.status != QpStatus::Optimal && a.nrows() > 0 {
        // phase 1: distance of the equality manifold from the set
        let p1 = a.transpose() * &a * 2.0;
        let q1 = -(a.transpose() * &b) * 2.0;
        let empty = Mat::zeros(0, n);
        let phase1 = IpmProblem {
            p: &p1,
            c_lin: &q1,
            c: parts.c,
            d: parts.d,
            a: &empty,
            b: &Vector::zeros(0),
        };
        let f = phase1.solve(set.interior_point(), tol, IPM_MAX_ITER);
        let gap = (&a * &f.x - &b).amax();
        if gap > 1e-6 * (1.0 + b.amax()) {
            sol.status = QpStatus::Infeasible;
        }
    }
    sol
}

/// Cached solver for repeated QPs sharing `H` and the set but not the linear term.
#[derive(Debug, Clone)]
pub struct LocalQp {
    cost: QuadCost,
    set: FeasibleSet,
    engine: Option<ActiveSetQp>,
    last: Option<Vector>,
    tol: f64,
}

impl LocalQp {
    pub fn new(h: Mat, set: &FeasibleSet, tol: f64) -> Result<Self> {
        let n = set.dim();
        let cost = QuadCost::new(h, Vector::zeros(n))?;
        let engine = if cost.is_positive_definite() && set.equalities().is_none() {
            let (c, d) = set.inequalities();
            ActiveSetQp::new(&cost.h * 2.0, c, d, set.interior_point().clone())
        } else {
            None
        };
        Ok(Self {
            cost,
            set: set.clone(),
            engine,
            last: None,
            tol,
        })
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn solve(&mut self, q: &Vector) -> Result<QpSolution> {
        if q.len() != self.set.dim() {
            return Err(dim_err("linear term", self.set.dim(), q.len()));
        }
        if let Some(engine) = &mut self.engine {
            let out = engine.solve(q, self.tol, ACTIVE_SET_MAX_ITER);
            let (c, d) = self.set.inequalities();
            let parts = KktParts {
                h: &self.cost.h,
                q,
                c: &c,
                d: &d,
                set_eq: None,
                eq: None,
            };
            let sol = parts.report(
                out.x,
                out.z,
                Vector::zeros(0),
                Vector::zeros(0),
                out.converged,
                out.iterations,
                self.tol,
            );
            if sol.status == QpStatus::Optimal {
                return Ok(sol);
            }
            engine.reset(self.set.interior_point().clone());
        }
        let mut cost = self.cost.clone();
        cost.q = q.clone();
        let sol = solve_local_qp_from(&cost, &self.set, None, self.tol, self.last.as_ref())?;
        self.last = Some(sol.x.clone());
        Ok(sol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxKind {
    /// `1/2 ||x - x_c||^2` centered at the set's stored interior point.
    Quadratic,
    /// Logarithmic barrier of the set's inequalities.
    LogBarrier,
}

/// Minimizer of `f(x) + mu P(x) + shift^T x` over the set.
///
/// With `mu = 0` both prox kinds reduce to the plain QP.
pub fn solve_smoothed(
    cost: &QuadCost,
    set: &FeasibleSet,
    shift: &Vector,
    mu: f64,
    prox: ProxKind,
    tol: f64,
) -> Result<Vector> {
    solve_smoothed_from(cost, set, shift, mu, prox, tol, None)
}

pub fn solve_smoothed_from(
    cost: &QuadCost,
    set: &FeasibleSet,
    shift: &Vector,
    mu: f64,
    prox: ProxKind,
    tol: f64,
    start: Option<&Vector>,
) -> Result<Vector> {
    check_dims(cost, set, None)?;
    if shift.len() != cost.dim() {
        return Err(dim_err("linear shift", cost.dim(), shift.len()));
    }
    if !(mu >= 0.0) {
        return Err(Error::Invalid(format!("smoothing parameter must be >= 0, got {mu}")));
    }
    let q = &cost.q + shift;
    if mu == 0.0 {
        if !cost.is_positive_definite() && !set.is_box() && set.bounding_box()?.is_none() {
            return Err(Error::NotStronglyConvex);
        }
        let plain = QuadCost {
            h: cost.h.clone(),
            q,
            offset: 0.0,
        };
        let sol = solve_local_qp_from(&plain, set, None, tol, start)?;
        return Ok(sol.x);
    }
    match prox {
        ProxKind::Quadratic => {
            let n = cost.dim();
            let mut h = cost.h.clone();
            for i in 0..n {
                h[(i, i)] += 0.5 * mu;
            }
            let q = q - set.interior_point() * mu;
            let sol = solve_local_qp_from(&QuadCost { h, q, offset: 0.0 }, set, None, tol, start)?;
            Ok(sol.x)
        }
        ProxKind::LogBarrier => {
            let x0 = match start {
                Some(s) if s.len() == set.dim() && set.barrier_value(s).is_some() && {
                    set.equalities()
                        .map(|(a, b)| (a * s - b).amax() <= 1e-12 * (1.0 + b.amax()))
                        .unwrap_or(true)
                } =>
                {
                    s.clone()
                }
                _ => set.interior_point().clone(),
            };
            let out = barrier::barrier_newton(&cost.h, &q, set, mu, &x0, tol);
            if !out.converged {
                log::debug!("barrier Newton stopped before reaching tolerance");
            }
            Ok(out.x)
        }
    }
}

/// Central-difference gradient of `f` at `v` with step `h`.
pub fn finite_diff_gradient<F: Fn(&Vector) -> f64>(f: F, v: &Vector, h: f64) -> Vector {
    let mut g = Vector::zeros(v.len());
    let mut w = v.clone();
    for i in 0..v.len() {
        let orig = w[i];
        w[i] = orig + h;
        let fp = f(&w);
        w[i] = orig - h;
        let fm = f(&w);
        w[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}
