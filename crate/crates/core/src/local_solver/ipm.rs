//! Mehrotra predictor-corrector interior-point method for
//! `min 1/2 x^T P x + c^T x  s.t.  C x <= d,  A x = b` with `P` positive semidefinite.

use crate::linalg::{regularized_cholesky, Mat, Vector};

#[derive(Debug, Clone)]
pub(crate) struct IpmOutcome {
    pub x: Vector,
    /// Equality multipliers (`A` rows).
    pub y: Vector,
    /// Inequality multipliers (`C` rows).
    pub z: Vector,
    pub converged: bool,
    pub iterations: usize,
}

pub(crate) struct IpmProblem<'a> {
    pub p: &'a Mat,
    pub c_lin: &'a Vector,
    pub c: &'a Mat,
    pub d: &'a Vector,
    pub a: &'a Mat,
    pub b: &'a Vector,
}

struct Residuals {
    dual: Vector,
    eq: Vector,
    ineq: Vector,
    mu: f64,
    comp_max: f64,
}

impl IpmProblem<'_> {
    fn residuals(&self, x: &Vector, y: &Vector, z: &Vector, s: &Vector) -> Residuals {
        let mut dual = self.p * x + self.c_lin;
        if self.c.nrows() > 0 {
            dual.gemv_tr(1.0, self.c, z, 1.0);
        }
        if self.a.nrows() > 0 {
            dual.gemv_tr(1.0, self.a, y, 1.0);
        }
        let eq = self.a * x - self.b;
        let ineq = self.c * x + s - self.d;
        let m = s.len();
        let mu = if m > 0 { s.dot(z) / m as f64 } else { 0.0 };
        let comp_max = (0..m).fold(0.0_f64, |a, j| a.max(s[j] * z[j]));
        Residuals {
            dual,
            eq,
            ineq,
            mu,
            comp_max,
        }
    }

    fn converged(&self, r: &Residuals, tol: f64) -> bool {
        let sd = 1.0 + self.c_lin.amax();
        r.dual.amax() <= tol * sd
            && (r.eq.len() == 0 || r.eq.amax() <= tol * (1.0 + self.b.amax()))
            && (r.ineq.len() == 0 || r.ineq.amax() <= tol * (1.0 + self.d.amax()))
            && r.comp_max <= tol * sd
    }

    /// Newton direction for the given complementarity right-hand side.
    fn direction(
        &self,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        schur: Option<&nalgebra::Cholesky<f64, nalgebra::Dyn>>,
        kinv_at: &Mat,
        r: &Residuals,
        rc: &Vector,
        z: &Vector,
        s: &Vector,
    ) -> (Vector, Vector, Vector, Vector) {
        let m = s.len();
        // r1 = -r_d - C^T ((-r_c + z o r_i) / s)
        let mut r1 = -&r.dual;
        if m > 0 {
            let t = Vector::from_fn(m, |j, _| (-rc[j] + z[j] * r.ineq[j]) / s[j]);
            r1.gemv_tr(-1.0, self.c, &t, 1.0);
        }
        let k_r1 = chol.solve(&r1);
        let (dx, dy) = match schur {
            Some(sc) => {
                let rhs = self.a * &k_r1 + &r.eq;
                let dy = sc.solve(&rhs);
                let dx = &k_r1 - kinv_at * &dy;
                (dx, dy)
            }
            None => (k_r1, Vector::zeros(0)),
        };
        let ds = -&r.ineq - self.c * &dx;
        let dz = Vector::from_fn(m, |j, _| (-rc[j] - z[j] * ds[j]) / s[j]);
        (dx, dy, ds, dz)
    }

    pub fn solve(&self, x0: &Vector, tol: f64, max_iter: usize) -> IpmOutcome {
        let n = x0.len();
        let m = self.c.nrows();
        let me = self.a.nrows();
        let mut x = x0.clone();
        let mut y = Vector::zeros(me);
        let slack0 = self.d - self.c * &x;
        let mut s = Vector::from_fn(m, |j, _| slack0[j].max(1.0));
        let mut z = Vector::from_element(m, 1.0);
        let scale = 1.0 + self.p.amax();
        let mut best: Option<(f64, Vector, Vector, Vector)> = None;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            let r = self.residuals(&x, &y, &z, &s);
            let merit = (r.dual.amax() / (1.0 + self.c_lin.amax()))
                .max(if me > 0 { r.eq.amax() / (1.0 + self.b.amax()) } else { 0.0 })
                .max(if m > 0 { r.ineq.amax() / (1.0 + self.d.amax()) } else { 0.0 })
                .max(r.comp_max / (1.0 + self.c_lin.amax()));
            if !merit.is_finite() {
                break;
            }
            if best.as_ref().map(|b| merit < b.0).unwrap_or(true) {
                best = Some((merit, x.clone(), y.clone(), z.clone()));
            }
            if self.converged(&r, tol) {
                converged = true;
                break;
            }
            iterations += 1;
            let mut k = self.p.clone();
            if m > 0 {
                let mut wc = self.c.clone();
                for j in 0..m {
                    let w = (z[j] / s[j]).sqrt();
                    wc.row_mut(j).scale_mut(w);
                }
                k.gemm_tr(1.0, &wc, &wc, 1.0);
            }
            let chol = match regularized_cholesky(&k, 1e-14 * scale) {
                Some((ch, _)) => ch,
                None => break,
            };
            let (kinv_at, schur) = if me > 0 {
                let kinv_at = chol.solve(&self.a.transpose());
                let sm = self.a * &kinv_at;
                let sc = match regularized_cholesky(&sm, 1e-14 * (1.0 + sm.amax())) {
                    Some((ch, _)) => ch,
                    None => break,
                };
                (kinv_at, Some(sc))
            } else {
                (Mat::zeros(n, 0), None)
            };
            if m == 0 {
                let rc = Vector::zeros(0);
                let (dx, dy, _, _) =
                    self.direction(&chol, schur.as_ref(), &kinv_at, &r, &rc, &z, &s);
                x += dx;
                y += dy;
                continue;
            }
            // predictor
            let rc_aff = s.component_mul(&z);
            let (_, _, ds_a, dz_a) =
                self.direction(&chol, schur.as_ref(), &kinv_at, &r, &rc_aff, &z, &s);
            let alpha_a = max_step(&s, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
            let mu_aff = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a)) / m as f64;
            let sigma = (mu_aff / r.mu).powi(3).clamp(0.0, 1.0);
            // corrector
            let rc = Vector::from_fn(m, |j, _| {
                s[j] * z[j] + ds_a[j] * dz_a[j] - sigma * r.mu
            });
            let (dx, dy, ds, dz) =
                self.direction(&chol, schur.as_ref(), &kinv_at, &r, &rc, &z, &s);
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
            x.axpy(alpha, &dx, 1.0);
            y.axpy(alpha, &dy, 1.0);
            s.axpy(alpha, &ds, 1.0);
            z.axpy(alpha, &dz, 1.0);
            if alpha < 1e-12 {
                break;
            }
        }
        if !converged {
            if let Some((_, bx, by, bz)) = best {
                x = bx;
                y = by;
                z = bz;
            }
        }
        IpmOutcome {
            x,
            y,
            z,
            converged,
            iterations,
        }
    }
}

/// Largest step keeping `v + alpha dv >= 0`, capped so that `0.99 * alpha <= 1`.
fn max_step(v: &Vector, dv: &Vector) -> f64 {
    let mut a = f64::INFINITY;
    for j in 0..v.len() {
        if dv[j] < 0.0 {
            a = a.min(-v[j] / dv[j]);
        }
    }
    a.min(1.0 / 0.99)
}
