//! Damped Newton minimization of `x^T H x + c^T x + mu * B(x)` where `B` is the
//! logarithmic barrier of the set's inequalities, subject to its equalities.

use crate::linalg::{regularized_cholesky, Mat, Vector};
use crate::problem::FeasibleSet;

/// Gradient and Hessian of `-sum log(d - C x)`; `None` outside the interior.
pub fn barrier_derivatives(set: &FeasibleSet, x: &Vector) -> Option<(Vector, Mat)> {
    let (c, d) = set.inequalities();
    let r = &d - &c * x;
    if r.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let inv = r.map(|v| 1.0 / v);
    let grad = c.transpose() * &inv;
    let mut wc = c.clone();
    for j in 0..c.nrows() {
        wc.row_mut(j).scale_mut(inv[j]);
    }
    Some((grad, wc.transpose() * wc))
}

pub(crate) struct BarrierOutcome {
    pub x: Vector,
    pub converged: bool,
}

/// `start` must be strictly interior and satisfy the set's equalities.
pub(crate) fn barrier_newton(
    h: &Mat,
    lin: &Vector,
    set: &FeasibleSet,
    mu: f64,
    start: &Vector,
    tol: f64,
) -> BarrierOutcome {
    let (c, d) = set.inequalities();
    let eq = set.equalities();
    let value = |x: &Vector| -> Option<f64> {
        let r = &d - &c * x;
        if r.iter().any(|v| *v <= 0.0) {
            return None;
        }
        Some(x.dot(&(h * x)) + lin.dot(x) - mu * r.iter().map(|v| v.ln()).sum::<f64>())
    };
    let mut x = start.clone();
    let mut fx = match value(&x) {
        Some(v) => v,
        None => {
            return BarrierOutcome {
                x,
                converged: false,
            }
        }
    };
    let scale = 1.0 + h.amax();
    for _ in 0..200 {
        let r = &d - &c * &x;
        let inv = r.map(|v| 1.0 / v);
        let grad = h * &x * 2.0 + lin + c.transpose() * &inv * mu;
        let mut wc = c.clone();
        for j in 0..c.nrows() {
            wc.row_mut(j).scale_mut(inv[j]);
        }
        let mut k = h * 2.0;
        k.gemm_tr(mu, &wc, &wc, 1.0);
        let chol = match regularized_cholesky(&k, 1e-15 * scale) {
            Some((ch, _)) => ch,
            None => break,
        };
        let mut dx = -chol.solve(&grad);
        if let Some((a, _)) = eq {
            // project the step onto the equality null space: K dx + A^T nu = -g, A dx = 0
            let kinv_at = chol.solve(&a.transpose());
            let s = a * &kinv_at;
            if let Some((sc, _)) = regularized_cholesky(&s, 1e-15 * (1.0 + s.amax())) {
                let nu = sc.solve(&(a * &dx));
                dx -= kinv_at * nu;
            }
        }
        let decrement2 = -grad.dot(&dx);
        if !decrement2.is_finite() {
            return BarrierOutcome { x, converged: true };
        }
        if decrement2 <= tol * tol * (1.0 + fx.abs()) {
            // the last full step squares the remaining error
            let cand = &x + &dx;
            if value(&cand).is_some() {
                x = cand;
            }
            return BarrierOutcome { x, converged: true };
        }
        // largest interior step, then Armijo backtracking
        let cdx = &c * &dx;
        let mut t: f64 = 1.0;
        for j in 0..r.len() {
            if cdx[j] > 0.0 {
                t = t.min(0.99 * r[j] / cdx[j]);
            }
        }
        // f / mu is self-concordant: inside the quadratic region full steps stay
        // interior and value comparisons would only see rounding
        if t >= 1.0 && decrement2 < 0.0625 * mu {
            let cand = &x + &dx;
            if let Some(fc) = value(&cand) {
                x = cand;
                fx = fc;
                continue;
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + &dx * t;
            if let Some(fc) = value(&cand) {
                if fc <= fx - 0.25 * t * decrement2 {
                    x = cand;
                    fx = fc;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // no further progress possible in floating point
            return BarrierOutcome {
                x,
                converged: decrement2 <= 1e-16 * (1.0 + fx.abs()),
            };
        }
    }
    BarrierOutcome {
        x,
        converged: false,
    }
}
