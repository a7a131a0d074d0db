//! Primal active-set method for strictly convex QPs over `C x <= d`.
//!
//! Minimizes `1/2 x^T P x + c^T x` with `P` positive definite. The Cholesky
//! factor of `P` and the last working set are cached so repeated solves with
//! a changing linear term (dual methods, block sweeps) warm-start cheaply.

use nalgebra::Cholesky;
use nalgebra::Dyn;

use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone)]
pub(crate) struct ActiveSetOutcome {
    pub x: Vector,
    /// Multipliers of every inequality row (zero when inactive).
    pub z: Vector,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ActiveSetQp {
    p: Mat,
    l: Mat,
    c: Mat,
    d: Vector,
    x: Vector,
    working: Vec<usize>,
    /// `L^{-1} C_W^T` and the Cholesky of its Gram matrix for the cached working set.
    cache: Option<(Vec<usize>, Mat, Cholesky<f64, Dyn>)>,
}

impl ActiveSetQp {
    /// `p` must be positive definite and `start` feasible.
    pub fn new(p: Mat, c: Mat, d: Vector, start: Vector) -> Option<Self> {
        let chol = Cholesky::new(p.clone())?;
        Some(Self {
            l: chol.l(),
            p,
            c,
            d,
            x: start,
            working: Vec::new(),
            cache: None,
        })
    }

    /// Restart from a feasible point with an empty working set.
    pub fn reset(&mut self, start: Vector) {
        self.x = start;
        self.working.clear();
    }

    fn factor_working(&mut self) -> bool {
        if let Some((w, _, _)) = &self.cache {
            if *w == self.working {
                return true;
            }
        }
        if self.working.is_empty() {
            self.cache = None;
            return true;
        }
        let n = self.p.nrows();
        let mut cw = Mat::zeros(n, self.working.len());
        for (k, &j) in self.working.iter().enumerate() {
            cw.column_mut(k).copy_from(&self.c.row(j).transpose());
        }
        let z = match self.l.solve_lower_triangular(&cw) {
            Some(z) => z,
            None => return false,
        };
        let s = z.transpose() * &z;
        match Cholesky::new(s) {
            Some(ch) => {
                self.cache = Some((self.working.clone(), z, ch));
                true
            }
            None => false,
        }
    }

    /// Equality-constrained step from the current point and working-set multipliers.
    fn eqp_step(&mut self, lin: &Vector) -> Option<(Vector, Vector)> {
        let g = &self.p * &self.x + lin;
        let h = self.l.solve_lower_triangular(&g)?;
        if !self.factor_working() {
            return None;
        }
        let (y, zy) = match &self.cache {
            Some((_, z, ch)) if !self.working.is_empty() => {
                let y = -ch.solve(&(z.transpose() * &h));
                let zy = z * &y;
                (y, zy)
            }
            _ => (Vector::zeros(0), Vector::zeros(h.len())),
        };
        let step = -self.l.tr_solve_lower_triangular(&(h + zy))?;
        Some((step, y))
    }

    pub fn solve(&mut self, lin: &Vector, tol: f64, max_iter: usize) -> ActiveSetOutcome {
        let n = self.p.nrows();
        let m = self.c.nrows();
        let scale = 1.0 + lin.amax() + self.p.amax();
        let mut iterations = 0;
        let mut converged = false;
        let mut z_work = Vector::zeros(0);
        while iterations < max_iter {
            iterations += 1;
            let (step, y) = match self.eqp_step(lin) {
                Some(v) => v,
                None => {
                    // numerically dependent working set: drop the newest row and retry
                    if self.working.pop().is_none() {
                        break;
                    }
                    continue;
                }
            };
            let step_norm = step.amax();
            if step_norm <= 1e-14 * (1.0 + self.x.amax()) {
                // stationary on the working set; check multiplier signs
                let mut worst = (-tol * scale, None);
                for (k, yk) in y.iter().enumerate() {
                    if *yk < worst.0 {
                        worst = (*yk, Some(k));
                    }
                }
                match worst.1 {
                    None => {
                        z_work = y;
                        converged = true;
                        break;
                    }
                    Some(k) => {
                        self.working.remove(k);
                        continue;
                    }
                }
            }
            let mut alpha = 1.0;
            let mut blocking = None;
            let c_step = &self.c * &step;
            let c_x = &self.c * &self.x;
            for j in 0..m {
                let cj_step = c_step[j];
                if cj_step > 1e-14 * step_norm && !self.working.contains(&j) {
                    let slack = (self.d[j] - c_x[j]).max(0.0);
                    let a = slack / cj_step;
                    if a < alpha {
                        alpha = a;
                        blocking = Some(j);
                    }
                }
            }
            self.x.axpy(alpha, &step, 1.0);
            if let Some(j) = blocking {
                self.working.push(j);
            }
        }
        let mut z = Vector::zeros(m);
        if converged {
            for (k, &j) in self.working.iter().enumerate() {
                z[j] = z_work[k].max(0.0);
            }
        }
        debug_assert_eq!(self.x.len(), n);
        ActiveSetOutcome {
            x: self.x.clone(),
            z,
            converged,
            iterations,
        }
    }
}
