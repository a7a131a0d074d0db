//! Centralized reference solver.
//!
//! One interior-point solve over the stacked variables of the whole problem.
//! It shares no code with the decomposition methods or with the local QP
//! engine, so a bug in either shows up as a disagreement with this module.

use nalgebra::{Cholesky, Dyn, LU};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{split, Mat, Vector};
use crate::problem::{FeasibleSet, Point, Problem};

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub point: Point,
    pub objective: f64,
    /// Coupling multipliers `lambda*` (DCCC only) under `L = f + lambda^T (sum G_i x^i - g)`.
    pub multipliers: Option<Vector>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub class: String,
    pub objective: f64,
    pub solution: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Vec<f64>>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl OracleSolution {
    pub fn report(&self, problem: &Problem) -> OracleReport {
        OracleReport {
            class: problem.class_name().to_string(),
            objective: self.objective,
            solution: self
                .point
                .blocks
                .iter()
                .map(|b| b.iter().cloned().collect())
                .collect(),
            multipliers: self.multipliers.as_ref().map(|m| m.iter().cloned().collect()),
            kkt_residual: self.kkt_residual,
            iterations: self.iterations,
        }
    }
}

/// Stacked problem `min 1/2 x^T P x + q^T x` s.t. per-block inequalities and global equalities.
struct Stacked {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    p: Mat,
    block_diagonal: bool,
    q: Vector,
    ineq: Vec<(Mat, Vector)>,
    a: Mat,
    b: Vector,
    /// Equality rows that are coupling constraints (reported as multipliers).
    coupling_rows: usize,
    x0: Vector,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for d in dims {
        off.push(acc);
        acc += d;
    }
    off
}

fn stack_equalities(
    n: usize,
    offs: &[usize],
    sets: &[&FeasibleSet],
    coupling: Option<(Mat, Vector)>,
) -> (Mat, Vector, usize) {
    let coupling_rows = coupling.as_ref().map(|(a, _)| a.nrows()).unwrap_or(0);
    let set_rows: usize = sets
        .iter()
        .map(|s| s.equalities().map(|(a, _)| a.nrows()).unwrap_or(0))
        .sum();
    let mut a = Mat::zeros(coupling_rows + set_rows, n);
    let mut b = Vector::zeros(coupling_rows + set_rows);
    if let Some((ca, cb)) = coupling {
        a.rows_mut(0, coupling_rows).copy_from(&ca);
        b.rows_mut(0, coupling_rows).copy_from(&cb);
    }
    let mut r = coupling_rows;
    for (k, s) in sets.iter().enumerate() {
        if let Some((ea, eb)) = s.equalities() {
            a.view_mut((r, offs[k]), (ea.nrows(), ea.ncols())).copy_from(ea);
            b.rows_mut(r, eb.len()).copy_from(eb);
            r += ea.nrows();
        }
    }
    (a, b, coupling_rows)
}

impl Stacked {
    fn from_problem(problem: &Problem) -> Self {
        match problem {
            Problem::Dcx(p) => {
                let n = p.dim();
                let mut h = Mat::zeros(n, n);
                let mut q = Vector::zeros(n);
                for c in &p.costs {
                    h += &c.h;
                    q += &c.q;
                }
                let (a, b, _) = stack_equalities(n, &[0], &[&p.set], None);
                Stacked {
                    dims: vec![n],
                    offsets: vec![0],
                    p: h * 2.0,
                    block_diagonal: true,
                    q,
                    ineq: vec![p.set.inequalities()],
                    a,
                    b,
                    coupling_rows: 0,
                    x0: p.set.interior_point().clone(),
                }
            }
            Problem::Dccc(p) => {
                let dims = p.dims();
                let offs = offsets(&dims);
                let n: usize = dims.iter().sum();
                let mut h = Mat::zeros(n, n);
                for (i, c) in p.costs.iter().enumerate() {
                    h.view_mut((offs[i], offs[i]), (dims[i], dims[i])).copy_from(&c.h);
                }
                let q = crate::linalg::stack(&p.costs.iter().map(|c| c.q.clone()).collect::<Vec<_>>());
                let sets: Vec<&FeasibleSet> = p.sets.iter().collect();
                let (a, b, coupling_rows) = stack_equalities(
                    n,
                    &offs,
                    &sets,
                    Some((p.stacked_coupling(), p.rhs.clone())),
                );
                Stacked {
                    dims,
                    offsets: offs,
                    p: h * 2.0,
                    block_diagonal: true,
                    q,
                    ineq: p.sets.iter().map(|s| s.inequalities()).collect(),
                    a,
                    b,
                    coupling_rows,
                    x0: p.interior_point().stacked(),
                }
            }
            Problem::Ccdc(p) => {
                let dims = p.dims();
                let offs = offsets(&dims);
                let n: usize = dims.iter().sum();
                let sets: Vec<&FeasibleSet> = p.sets.iter().collect();
                let (a, b, _) = stack_equalities(n, &offs, &sets, None);
                Stacked {
                    dims,
                    offsets: offs,
                    p: p.assembled_hessian() * 2.0,
                    block_diagonal: false,
                    q: p.stacked_linear(),
                    ineq: p.sets.iter().map(|s| s.inequalities()).collect(),
                    a,
                    b,
                    coupling_rows: 0,
                    x0: crate::linalg::stack(
                        &p.sets.iter().map(|s| s.interior_point().clone()).collect::<Vec<_>>(),
                    ),
                }
            }
        }
    }

    fn n(&self) -> usize {
        self.q.len()
    }

    fn cx(&self, x: &Vector) -> Vec<Vector> {
        self.ineq
            .iter()
            .enumerate()
            .map(|(k, (c, _))| c * x.rows(self.offsets[k], self.dims[k]))
            .collect()
    }

    fn ct_times(&self, v: &[Vector]) -> Vector {
        let mut out = Vector::zeros(self.n());
        for (k, (c, _)) in self.ineq.iter().enumerate() {
            let mut seg = out.rows_mut(self.offsets[k], self.dims[k]);
            seg += c.transpose() * &v[k];
        }
        out
    }
}

enum Factor {
    Dense(Cholesky<f64, Dyn>),
    Blocks(Vec<Cholesky<f64, Dyn>>),
}

impl Factor {
    fn solve(&self, st: &Stacked, r: &Mat) -> Mat {
        match self {
            Factor::Dense(ch) => ch.solve(r),
            Factor::Blocks(chs) => {
                let mut out = Mat::zeros(r.nrows(), r.ncols());
                for (k, ch) in chs.iter().enumerate() {
                    let rows = r.rows(st.offsets[k], st.dims[k]).into_owned();
                    out.rows_mut(st.offsets[k], st.dims[k]).copy_from(&ch.solve(&rows));
                }
                out
            }
        }
    }
}

/// Cholesky with a diagonal shift sized by `scale`, grown until it succeeds.
fn factor(m: Mat, scale: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut shift = 1e-13 * scale;
    for _ in 0..10 {
        let mut t = m.clone();
        for i in 0..t.nrows() {
            t[(i, i)] += shift;
        }
        if let Some(ch) = Cholesky::new(t) {
            return Some(ch);
        }
        shift *= 100.0;
    }
    None
}

struct State {
    x: Vector,
    y: Vector,
    s: Vec<Vector>,
    z: Vec<Vector>,
}

fn blocks_dot(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u.dot(v)).sum()
}

fn max_step(v: &[Vector], dv: &[Vector]) -> f64 {
    let mut a = f64::INFINITY;
    for (u, du) in v.iter().zip(dv) {
        for j in 0..u.len() {
            if du[j] < 0.0 {
                a = a.min(-u[j] / du[j]);
            }
        }
    }
    a
}

fn run_ipm(st: &Stacked, tol: f64) -> Result<(Vector, Vector, f64, usize)> {
    let n = st.n();
    let me = st.a.nrows();
    let m_total: usize = st.ineq.iter().map(|(c, _)| c.nrows()).sum();
    let mut w = State {
        x: st.x0.clone(),
        y: Vector::zeros(me),
        s: Vec::new(),
        z: Vec::new(),
    };
    let cx0 = st.cx(&w.x);
    for (k, (_, d)) in st.ineq.iter().enumerate() {
        let sl = d - &cx0[k];
        w.s.push(sl.map(|v| v.max(1.0)));
        w.z.push(Vector::from_element(d.len(), 1.0));
    }
    let qs = 1.0 + st.q.amax();
    // Barrier terms grow without bound; regularization follows the objective.
    let pscale = 1.0 + st.p.amax();
    let bs = 1.0 + st.b.amax();
    let ds = 1.0 + st.ineq.iter().fold(0.0_f64, |a, (_, d)| a.max(d.amax()));
    let mut last_kkt = f64::INFINITY;
    for iter in 0..300 {
        let cx = st.cx(&w.x);
        let mut rd = &st.p * &w.x + &st.q + st.ct_times(&w.z);
        if me > 0 {
            rd += st.a.transpose() * &w.y;
        }
        let re = &st.a * &w.x - &st.b;
        let ri: Vec<Vector> = (0..st.ineq.len())
            .map(|k| &cx[k] + &w.s[k] - &st.ineq[k].1)
            .collect();
        let mu = if m_total > 0 {
            blocks_dot(&w.s, &w.z) / m_total as f64
        } else {
            0.0
        };
        let comp = w
            .s
            .iter()
            .zip(&w.z)
            .fold(0.0_f64, |a, (s, z)| a.max(s.component_mul(z).amax()));
        let ri_max = ri.iter().fold(0.0_f64, |a, r| a.max(r.amax()));
        let kkt = (rd.amax() / qs)
            .max(if me > 0 { re.amax() / bs } else { 0.0 })
            .max(ri_max / ds)
            .max(comp / qs);
        last_kkt = kkt;
        if !kkt.is_finite() {
            return Err(Error::Numerical("oracle iterates became non-finite".into()));
        }
        if kkt <= tol {
            return Ok((w.x, w.y, kkt, iter));
        }
        if w.x.amax() > 1e12 {
            return Err(Error::Unbounded);
        }
        // K = P + sum_k C_k^T (Z/S) C_k
        let mut kmat = st.p.clone();
        for (k, (c, _)) in st.ineq.iter().enumerate() {
            let mut wc = c.clone();
            for j in 0..c.nrows() {
                wc.row_mut(j).scale_mut((w.z[k][j] / w.s[k][j]).sqrt());
            }
            let blk = wc.transpose() * &wc;
            let mut view = kmat.view_mut((st.offsets[k], st.offsets[k]), (st.dims[k], st.dims[k]));
            view += blk;
        }
        let fac = if st.block_diagonal {
            let mut chs = Vec::with_capacity(st.dims.len());
            for k in 0..st.dims.len() {
                let blk = kmat
                    .view((st.offsets[k], st.offsets[k]), (st.dims[k], st.dims[k]))
                    .into_owned();
                chs.push(factor(blk, pscale).ok_or_else(|| Error::Numerical("oracle KKT factorization failed".into()))?);
            }
            Factor::Blocks(chs)
        } else {
            Factor::Dense(factor(kmat, pscale).ok_or_else(|| Error::Numerical("oracle KKT factorization failed".into()))?)
        };
        let (kinv_at, schur) = if me > 0 {
            let kinv_at = fac.solve(st, &st.a.transpose());
            let mut sm = &st.a * &kinv_at;
            let reg = 1e-14 * (1.0 + sm.amax());
            for i in 0..me {
                sm[(i, i)] += reg;
            }
            (kinv_at, Some(LU::new(sm)))
        } else {
            (Mat::zeros(n, 0), None)
        };
        // Residuals at roundoff level are not corrected: dividing them by
        // vanishing slacks would swamp the direction.
        let ri_step: Vec<Vector> = (0..st.ineq.len())
            .map(|k| {
                let d = &st.ineq[k].1;
                Vector::from_fn(d.len(), |j, _| {
                    let r = ri[k][j];
                    if r.abs() <= 64.0 * f64::EPSILON * (1.0 + d[j].abs() + cx[k][j].abs()) {
                        0.0
                    } else {
                        r
                    }
                })
            })
            .collect();
        let ri = &ri_step;
        let direction = |rc: &[Vector]| -> Option<(Vector, Vector, Vec<Vector>, Vec<Vector>)> {
            let t: Vec<Vector> = (0..st.ineq.len())
                .map(|k| {
                    Vector::from_fn(w.s[k].len(), |j, _| {
                        (-rc[k][j] + w.z[k][j] * ri[k][j]) / w.s[k][j]
                    })
                })
                .collect();
            let r1 = -&rd - st.ct_times(&t);
            let k_r1 = fac.solve(st, &Mat::from_column_slice(n, 1, r1.as_slice())).column(0).into_owned();
            let (dx, dy) = match &schur {
                Some(lu) => {
                    let dy = lu.solve(&(&st.a * &k_r1 + &re))?;
                    (&k_r1 - &kinv_at * &dy, dy)
                }
                None => (k_r1, Vector::zeros(0)),
            };
            let cdx = st.cx(&dx);
            let dsv: Vec<Vector> = (0..st.ineq.len()).map(|k| -&ri[k] - &cdx[k]).collect();
            let dzv: Vec<Vector> = (0..st.ineq.len())
                .map(|k| {
                    Vector::from_fn(w.s[k].len(), |j, _| {
                        (-rc[k][j] - w.z[k][j] * dsv[k][j]) / w.s[k][j]
                    })
                })
                .collect();
            Some((dx, dy, dsv, dzv))
        };
        let rc_aff: Vec<Vector> = w.s.iter().zip(&w.z).map(|(s, z)| s.component_mul(z)).collect();
        let (dx, dy, dsv, dzv) = if m_total == 0 {
            direction(&rc_aff).ok_or_else(|| Error::Numerical("singular oracle Schur complement".into()))?
        } else {
            let (_, _, ds_a, dz_a) = direction(&rc_aff)
                .ok_or_else(|| Error::Numerical("singular oracle Schur complement".into()))?;
            let a_aff = max_step(&w.s, &ds_a).min(max_step(&w.z, &dz_a)).min(1.0);
            let s_aff: Vec<Vector> = w.s.iter().zip(&ds_a).map(|(s, d)| s + d * a_aff).collect();
            let z_aff: Vec<Vector> = w.z.iter().zip(&dz_a).map(|(z, d)| z + d * a_aff).collect();
            let mu_aff = blocks_dot(&s_aff, &z_aff) / m_total as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);
            let rc: Vec<Vector> = (0..st.ineq.len())
                .map(|k| {
                    Vector::from_fn(w.s[k].len(), |j, _| {
                        w.s[k][j] * w.z[k][j] + ds_a[k][j] * dz_a[k][j] - sigma * mu
                    })
                })
                .collect();
            direction(&rc).ok_or_else(|| Error::Numerical("singular oracle Schur complement".into()))?
        };
        let alpha = if m_total == 0 {
            1.0
        } else {
            (0.995 * max_step(&w.s, &dsv).min(max_step(&w.z, &dzv))).min(1.0)
        };
        w.x.axpy(alpha, &dx, 1.0);
        w.y.axpy(alpha, &dy, 1.0);
        for k in 0..st.ineq.len() {
            w.s[k].axpy(alpha, &dsv[k], 1.0);
            w.z[k].axpy(alpha, &dzv[k], 1.0);
        }
    }
    if w.x.amax() > 1e8 {
        return Err(Error::Unbounded);
    }
    if last_kkt <= 1e3 * tol {
        log::warn!("oracle stopped at KKT residual {last_kkt:e}");
        return Ok((w.x, w.y, last_kkt, 300));
    }
    Err(classify_failure(st))
}

/// Distinguish an empty feasible region from numerical trouble via a phase-1 solve.
fn classify_failure(st: &Stacked) -> Error {
    if st.a.nrows() == 0 {
        return Error::Numerical("oracle did not converge".into());
    }
    let mut phase1 = Stacked {
        dims: st.dims.clone(),
        offsets: st.offsets.clone(),
        p: st.a.transpose() * &st.a * 2.0,
        block_diagonal: false,
        q: -(st.a.transpose() * &st.b) * 2.0,
        ineq: st.ineq.clone(),
        a: Mat::zeros(0, st.n()),
        b: Vector::zeros(0),
        coupling_rows: 0,
        x0: st.x0.clone(),
    };
    phase1.p += Mat::identity(st.n(), st.n()) * 1e-12;
    match run_ipm(&phase1, 1e-9) {
        Ok((x, _, _, _)) if (&st.a * &x - &st.b).amax() > 1e-6 * (1.0 + st.b.amax()) => {
            Error::Infeasible("coupling constraints cannot be met inside the local sets".into())
        }
        _ => Error::Numerical("oracle did not converge".into()),
    }
}

/// Solve the whole problem centrally to tolerance `tol`.
pub fn solve_centralized(problem: &Problem, tol: f64) -> Result<OracleSolution> {
    let st = Stacked::from_problem(problem);
    let (x, y, kkt, iterations) = run_ipm(&st, tol)?;
    let point = Point::new(split(&x, &st.dims));
    let eval = crate::problem::evaluate(problem, &point)?;
    let multipliers = match problem {
        Problem::Dccc(_) => Some(y.rows(0, st.coupling_rows).into_owned()),
        _ => None,
    };
    Ok(OracleSolution {
        point,
        objective: eval.objective,
        multipliers,
        kkt_residual: kkt,
        iterations,
    })
}
